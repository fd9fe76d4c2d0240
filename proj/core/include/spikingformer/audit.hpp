#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "spikingformer/activity.hpp"
#include "spikingformer/dataset.hpp"
#include "spikingformer/model.hpp"

SPKF_NAMESPACE_BEGIN

struct LayerPurity {
  std::string name;
  LayerKind kind = LayerKind::kSnnConv;
  std::map<std::int64_t, std::uint64_t> histogram;
  std::uint64_t anomalies = 0;
  std::uint64_t elements = 0;
  double firing_rate = 0.0;  // nonzero ratio
  double max_value = 0.0;
  bool binary = true;
};

struct PurityReport {
  std::vector<LayerPurity> layers;  // ConvBN inputs, encoder included but never judged
  std::vector<std::string> offending;
  bool pure = true;
  double nonzero_ratio = 0.0;  // over all judged layers

  std::string verdict() const { return pure ? "pure" : "impure"; }
};

PurityReport purity_from(const ActivityRecorder& recorder);

/// Runs the model over the dataset in eval mode and audits every ConvBN input.
PurityReport record(Model& model, const Dataset& dataset, std::size_t batch_size = 16,
                    ActivityRecorder* recorder_out = nullptr);

/// Mean of a binary tensor. Throws std::invalid_argument on non-binary input.
double firing_rate(const Tensor& spikes);

std::string purity_csv(const PurityReport& report);
std::string purity_json(const PurityReport& report);
/// Text histogram per layer with log10 bar lengths.
std::string purity_text(const PurityReport& report);

void write_purity_report(const PurityReport& report, const std::filesystem::path& dir);

SPKF_NAMESPACE_END
