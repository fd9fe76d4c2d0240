#include "spikingformer/activity.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <stdexcept>

SPKF_NAMESPACE_BEGIN

const char* to_string(LayerKind kind) {
  switch (kind) {
    case LayerKind::kEncoderConv: return "encoder-conv";
    case LayerKind::kSnnConv: return "snn-conv";
    case LayerKind::kSsaMatmul: return "ssa-matmul";
  }
  return "unknown";
}

double LayerActivity::firing_rate() const {
  return elements == 0 ? 0.0 : double(nonzero) / double(elements);
}

double LayerActivity::mean_value() const { return elements == 0 ? 0.0 : value_sum / double(elements); }

bool LayerActivity::binary() const {
  if (anomalies != 0) return false;
  for (const auto& [value, count] : histogram)
    if (count != 0 && value != 0 && value != 1) return false;
  return true;
}

ActivityRecorder::ActivityRecorder(double integer_tolerance) : tolerance_(integer_tolerance) {}

LayerActivity& ActivityRecorder::slot(const std::string& name, LayerKind kind) {
  auto it = index_.find(name);
  if (it != index_.end()) {
    LayerActivity& layer = layers_[it->second];
    if (layer.kind != kind) {
      throw std::logic_error("activity: '" + name + "' recorded as both " + to_string(layer.kind) + " and " +
                             to_string(kind));
    }
    return layer;
  }
  index_.emplace(name, layers_.size());
  LayerActivity& layer = layers_.emplace_back();
  layer.name = name;
  layer.kind = kind;
  return layer;
}

void ActivityRecorder::observe(const std::string& name, LayerKind kind, const Tensor& input,
                               double flops_per_step, std::size_t sample_steps) {
  LayerActivity& layer = slot(name, kind);
  layer.flops_per_step = flops_per_step;
  layer.sample_steps += sample_steps;

  // Small non-negative integers are binned in a flat array first.
  std::array<std::uint64_t, 64> small{};
  std::uint64_t nonzero = 0, anomalies = 0;
  double total = 0.0;
  double peak = layer.elements == 0 ? -INFINITY : layer.max_value;
  for (Real raw : input.data()) {
    const double v = raw;
    total += v;
    nonzero += v != 0.0;
    peak = std::max(peak, v);
    const double r = std::nearbyint(v);
    if (std::fabs(v - r) > tolerance_) {
      ++anomalies;
      continue;
    }
    if (r >= 0.0 && r < double(small.size())) {
      ++small[static_cast<std::size_t>(r)];
    } else {
      ++layer.histogram[static_cast<std::int64_t>(r)];
    }
  }
  for (std::size_t v = 0; v < small.size(); ++v)
    if (small[v] != 0) layer.histogram[static_cast<std::int64_t>(v)] += small[v];
  layer.elements += input.numel();
  layer.nonzero += nonzero;
  layer.anomalies += anomalies;
  layer.value_sum += total;
  if (input.numel() != 0) layer.max_value = peak;
}

void ActivityRecorder::merge(const ActivityRecorder& other) {
  for (const LayerActivity& src : other.layers_) {
    const bool fresh = index_.find(src.name) == index_.end();
    LayerActivity& dst = slot(src.name, src.kind);
    for (const auto& [value, count] : src.histogram) dst.histogram[value] += count;
    dst.max_value = (fresh || dst.elements == 0) ? src.max_value : std::max(dst.max_value, src.max_value);
    dst.anomalies += src.anomalies;
    dst.elements += src.elements;
    dst.nonzero += src.nonzero;
    dst.value_sum += src.value_sum;
    dst.flops_per_step = src.flops_per_step;
    dst.sample_steps += src.sample_steps;
  }
}

const LayerActivity* ActivityRecorder::find(const std::string& name) const {
  auto it = index_.find(name);
  return it == index_.end() ? nullptr : &layers_[it->second];
}

SPKF_NAMESPACE_END
