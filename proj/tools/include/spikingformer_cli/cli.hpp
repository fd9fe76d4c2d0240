#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <spikingformer/energy.hpp>
#include <spikingformer/model.hpp>
#include <spikingformer/train.hpp>

namespace spkf::cli {

/// Bad flags or config; reported with exit code 2.
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum ExitCode : int {
  kOk = 0,
  kFailure = 1,
  kUsage = 2,
  kCheckFailed = 3,  // impure model under --require-pure, fusion mismatch
};

struct DataSpec {
  std::string source = "synth-static";  // synth-static | synth-events | cifar10
  std::optional<std::filesystem::path> path;
  std::size_t samples = 512;
  std::uint64_t seed = 7;
  double noise = 0.1;
  std::optional<std::size_t> limit;
};

struct RunSpec {
  std::string command;
  ModelConfig model = ModelConfig::desk(2, 64);
  TrainConfig train;
  DataSpec data;
  RecalcMode recalc = RecalcMode::kIntegerAsAccumulates;
  SsaOperandRule ssa_rule = SsaOperandRule::kLeadingOperand;
  HardwareCostModel cost;
  std::size_t batch_size = 32;
  std::uint64_t seed = 0;
  std::filesystem::path out = "out";
  std::optional<std::filesystem::path> checkpoint;
  bool require_pure = false;
};

/// Applies a flat JSON config document on top of `spec`. A "preset" key
/// (desk | cifar | imagenet, with "blocks", "dim", "classes") is applied
/// before the other model keys. Unknown keys raise UsageError.
void apply_config(RunSpec& spec, const std::string& json_text);

/// Keys accepted by apply_config.
const std::vector<std::string>& config_keys();

/// Runs one command line (without the program name). Reports go to spec.out;
/// human-readable summaries to `out`, diagnostics to `err`.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

struct ReferenceModel {
  std::string label;
  ModelConfig config;
  double published_millions = 0.0;
};

/// Published parameter counts of the three reference configurations.
std::vector<ReferenceModel> reference_models();

}  // namespace spkf::cli
