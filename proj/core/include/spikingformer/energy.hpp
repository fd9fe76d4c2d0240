#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "spikingformer/activity.hpp"

SPKF_NAMESPACE_BEGIN

class EnergyError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// 45 nm costs in picojoules.
struct HardwareCostModel {
  double e_mac_pj = 4.6;
  double e_ac_pj = 0.9;

  void validate() const;
};

enum class TraceKind { kFirstEncodingConv, kSnnConv, kSsaMatmul };

struct LayerTrace {
  std::string layer;
  double flops = 0.0;  // MACs per sample per time step at fr = 1
  double fr = 0.0;
  std::size_t timesteps = 1;
  TraceKind kind = TraceKind::kSnnConv;
  /// Input value -> count, for layers whose inputs may exceed 1.
  std::optional<std::map<std::int64_t, double>> histogram;
};

struct LayerEnergy {
  std::string layer;
  TraceKind kind = TraceKind::kSnnConv;
  double sops = 0.0;  // accumulates
  double macs = 0.0;
  double energy_pj = 0.0;
};

struct EnergyReport {
  std::string mode;
  std::vector<LayerEnergy> layers;
  double total_pj = 0.0;
  double total_sops = 0.0;
  double total_macs = 0.0;

  double total_mj() const { return total_pj * 1e-9; }
};

/// fr x T x FLOPs, rounded to the nearest integer.
std::int64_t sops(double flops, double fr, std::size_t timesteps);

/// Static-image estimate: first conv at MAC cost on its FLOPs, everything else
/// at AC cost on its SOPs. Exactly one kFirstEncodingConv trace is required.
EnergyReport energy_static(const std::vector<LayerTrace>& traces, const HardwareCostModel& cost = {});

/// Event-input estimate: every layer at AC cost on its SOPs.
EnergyReport energy_neuromorphic(const std::vector<LayerTrace>& traces,
                                 const HardwareCostModel& cost = {});

enum class RecalcMode {
  kIntegerAsAccumulates = 1,  // value N counts as N accumulates
  kIntegerAsMac = 2,          // value N > 1 costs one MAC
};

/// Static-image estimate for ADD-style models whose ConvBN inputs are integers.
/// kSnnConv traces must carry histograms.
EnergyReport spikformer_recalc(const std::vector<LayerTrace>& traces, RecalcMode mode,
                               const HardwareCostModel& cost = {});

/// How attention products derive their firing rate from the binary operands.
enum class SsaOperandRule {
  kLeadingOperand,  // QK^T uses fr(Q), (QK^T)V uses fr(V)
  kJointOperands,   // QK^T uses fr(Q) fr(K), (QK^T)V uses fr(V)
};

/// Converts recorded activity into traces. Conv layers carry their input
/// histograms; attention operands are paired into two product traces.
std::vector<LayerTrace> traces_from_activity(const ActivityRecorder& recorder,
                                             std::size_t timesteps,
                                             SsaOperandRule rule = SsaOperandRule::kLeadingOperand);

std::string energy_csv(const EnergyReport& report);
std::string energy_json(const EnergyReport& report);
void write_energy_report(const EnergyReport& report, const std::filesystem::path& dir,
                         const std::string& stem);

SPKF_NAMESPACE_END
