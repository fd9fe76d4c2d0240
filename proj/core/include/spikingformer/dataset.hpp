#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <stdexcept>
#include <vector>

#include "spikingformer/tensor.hpp"

SPKF_NAMESPACE_BEGIN

class DatasetError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class DatasetKind { kStaticImage, kEventFrames, kSynthetic };

struct Sample {
  Tensor input;  // [C,H,W] for static images, [T,C,H,W] for event frames
  std::size_t label = 0;
};

struct Batch {
  Tensor input;  // [B,C,H,W] or [T,B,C,H,W]
  std::vector<std::size_t> labels;
};

struct Dataset {
  DatasetKind kind = DatasetKind::kSynthetic;
  std::size_t classes = 0;
  /// Per-sample shape.
  Shape geometry;
  std::vector<Sample> samples;

  std::size_t size() const { return samples.size(); }
  bool event_frames() const { return geometry.size() == 4; }
  Batch batch(std::span<const std::size_t> indices) const;
  Batch batch(std::size_t begin, std::size_t end) const;
};

inline constexpr std::size_t kCifarRecordBytes = 3073;

/// CIFAR-10 binary batches: 1 label byte + 3072 pixels (R, G, B planes,
/// row-major) per record. Pixels are scaled to [0, 1].
Dataset load_cifar10_binary(const std::filesystem::path& path,
                            std::optional<std::size_t> limit = std::nullopt);
/// Inverse of load_cifar10_binary (pixels rounded to the nearest byte).
void write_cifar10_binary(const std::filesystem::path& path, const Dataset& dataset);

struct SynthOptions {
  std::size_t channels = 3;
  std::size_t height = 16;
  std::size_t width = 16;
  double noise = 0.1;  // std-dev of additive Gaussian noise; 0 = noiseless
};

/// Class templates (blocky random patterns in [0.1, 0.9]) plus clipped noise.
/// Labels cycle 0..classes-1 so every class is represented.
Dataset synth_static(std::size_t classes, std::size_t n, std::uint64_t seed,
                     const SynthOptions& options = {});

/// Binary two-polarity frames; each pixel fires with a class-specific rate.
Dataset synth_events(std::size_t classes, std::size_t n, std::size_t timesteps,
                     std::uint64_t seed, const SynthOptions& options = {2, 16, 16, 0.0});

/// The noiseless class templates used by synth_static for the same arguments.
std::vector<Tensor> synth_static_templates(std::size_t classes, std::uint64_t seed,
                                           const SynthOptions& options = {});

SPKF_NAMESPACE_END
