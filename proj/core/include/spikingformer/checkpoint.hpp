#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "spikingformer/model.hpp"

SPKF_NAMESPACE_BEGIN

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr char kCheckpointMagic[4] = {'S', 'P', 'K', 'F'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Layout (little-endian): "SPKF", u32 version, u32 tensor count, then per
/// tensor: u32 name length, UTF-8 name, u8 rank, rank x u32 dims, f32 payload.
struct CheckpointEntry {
  std::string name;
  Shape shape;
  std::vector<float> values;
};

void write_checkpoint_entries(const std::filesystem::path& path,
                              const std::vector<CheckpointEntry>& entries);
std::vector<CheckpointEntry> read_checkpoint_entries(const std::filesystem::path& path);

/// Parameters, BN running statistics and "meta.*" config scalars.
void save_checkpoint(const Model& model, const std::filesystem::path& path);
Model load_checkpoint(const std::filesystem::path& path);

bool is_meta_entry(const std::string& name);
bool is_buffer_entry(const std::string& name);

SPKF_NAMESPACE_END
