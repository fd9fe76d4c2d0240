#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "spikingformer/tensor.hpp"

SPKF_NAMESPACE_BEGIN

enum class LayerKind {
  kEncoderConv,  // first tokenizer conv; sees the raw input
  kSnnConv,      // any other ConvBN
  kSsaMatmul,    // one binary operand of an attention product
};

const char* to_string(LayerKind kind);

/// Everything observed at one layer input across a run.
struct LayerActivity {
  std::string name;
  LayerKind kind = LayerKind::kSnnConv;
  /// Exact integer bins of observed input values.
  std::map<std::int64_t, std::uint64_t> histogram;
  /// Values farther than the tolerance from every integer.
  std::uint64_t anomalies = 0;
  std::uint64_t elements = 0;
  std::uint64_t nonzero = 0;
  double value_sum = 0.0;
  double max_value = 0.0;
  /// Multiply-accumulates per sample per time step at full activity.
  double flops_per_step = 0.0;
  /// Number of (sample, time step) pairs observed.
  std::uint64_t sample_steps = 0;

  double firing_rate() const;  // nonzero / elements
  double mean_value() const;
  bool binary() const;
};

/// Collects layer-input statistics during forward passes. Not thread-safe:
/// give each evaluation thread its own recorder and merge() at the end.
class ActivityRecorder {
 public:
  explicit ActivityRecorder(double integer_tolerance = 1e-5);

  void observe(const std::string& name, LayerKind kind, const Tensor& input,
               double flops_per_step, std::size_t sample_steps);

  void merge(const ActivityRecorder& other);

  /// Layers in first-observation order.
  const std::vector<LayerActivity>& layers() const { return layers_; }
  const LayerActivity* find(const std::string& name) const;
  double integer_tolerance() const { return tolerance_; }

 private:
  LayerActivity& slot(const std::string& name, LayerKind kind);

  double tolerance_;
  std::vector<LayerActivity> layers_;
  std::map<std::string, std::size_t> index_;
};

SPKF_NAMESPACE_END
