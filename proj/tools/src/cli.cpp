#include "spikingformer_cli/cli.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include <spikingformer/audit.hpp>
#include <spikingformer/autodiff.hpp>
#include <spikingformer/checkpoint.hpp>
#include <spikingformer/dataset.hpp>

namespace spkf::cli {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

constexpr double kFusionTolerance = 1e-4;
constexpr double kParamTolerance = 0.02;

const std::vector<std::string> kKeys = {
    "preset", "blocks", "dim", "heads", "timesteps", "scale", "mlp_ratio", "tokenizer", "head", "residual",
    "in_channels", "height", "width", "classes", "tau", "v_threshold", "v_reset", "alpha", "detach_reset",
    "epochs", "batch_size", "lr", "weight_decay", "beta1", "beta2", "adam_eps", "stop_at_accuracy", "neuron_mode",
    "dataset", "data", "samples", "data_seed", "noise", "limit",
    "energy_mode", "ssa_rule", "e_mac_pj", "e_ac_pj",
    "seed", "out", "checkpoint", "require_pure"};

template <typename T>
T get(const json& doc, const std::string& key) {
  try {
    return doc.at(key).get<T>();
  } catch (const json::exception&) {
    throw UsageError("config: key '" + key + "' has the wrong type");
  }
}

std::size_t get_count(const json& doc, const std::string& key) {
  const json& v = doc.at(key);
  if (!v.is_number_integer() || v.get<std::int64_t>() < 0) {
    throw UsageError("config: key '" + key + "' must be a non-negative integer");
  }
  return v.get<std::size_t>();
}

ResidualStyle residual_from_string(const std::string& text) {
  if (text == "spike-driven") return ResidualStyle::kSpikeDriven;
  if (text == "add") return ResidualStyle::kPostActivationAdd;
  throw UsageError("config: residual must be 'spike-driven' or 'add', got '" + text + "'");
}

const char* residual_name(ResidualStyle style) {
  return style == ResidualStyle::kSpikeDriven ? "spike-driven" : "add";
}

RecalcMode recalc_from_int(long mode) {
  if (mode == 1) return RecalcMode::kIntegerAsAccumulates;
  if (mode == 2) return RecalcMode::kIntegerAsMac;
  throw UsageError("energy mode must be 1 or 2, got " + std::to_string(mode));
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

void write_json(const fs::path& path, const json& doc) { write_text(path, doc.dump(2) + "\n"); }

Model make_model(const RunSpec& spec, std::optional<std::size_t> timesteps) {
  if (spec.checkpoint) {
    Model model = load_checkpoint(*spec.checkpoint);
    if (timesteps) {
      model.mutable_config().timesteps = *timesteps;
      model.mutable_config().validate();
    }
    return model;
  }
  return Model(spec.model, spec.seed);
}

Dataset make_dataset(const RunSpec& spec, const ModelConfig& m) {
  const DataSpec& d = spec.data;
  if (d.source == "cifar10") {
    if (!d.path) throw UsageError("dataset cifar10 needs --data PATH");
    Dataset ds = load_cifar10_binary(*d.path, d.limit);
    if (ds.geometry != Shape{m.in_channels, m.height, m.width} || ds.classes != m.classes) {
      throw UsageError("CIFAR-10 data (10 classes, 3x32x32) does not match the model's input geometry");
    }
    return ds;
  }
  const std::size_t n = d.limit ? std::min(d.samples, *d.limit) : d.samples;
  SynthOptions options{m.in_channels, m.height, m.width, d.noise};
  if (d.source == "synth-static") return synth_static(m.classes, n, d.seed, options);
  if (d.source == "synth-events") return synth_events(m.classes, n, m.timesteps, d.seed, options);
  throw UsageError("unknown dataset '" + d.source + "' (synth-static, synth-events, cifar10)");
}

// Fresh models get their BN statistics from the first batch so eval-mode
// activity is representative.
void calibrate_fresh(Model& model, const RunSpec& spec, const Dataset& ds) {
  if (spec.checkpoint || ds.size() == 0) return;
  calibrate_batch_norm(model, ds.batch(0, std::min(ds.size(), spec.batch_size)).input);
}

json config_json(const ModelConfig& c) {
  json plan = json::array();
  for (TokenizerUnit u : c.tokenizer) plan.push_back(u == TokenizerUnit::kSpe ? "spe" : "sped");
  return {{"label", c.label()},
          {"blocks", c.blocks},
          {"dim", c.dim},
          {"heads", c.heads},
          {"timesteps", c.timesteps},
          {"scale", c.scale},
          {"mlp_ratio", c.mlp_ratio},
          {"tokenizer", plan},
          {"head", to_string(c.head)},
          {"residual", residual_name(c.residual)},
          {"in_channels", c.in_channels},
          {"height", c.height},
          {"width", c.width},
          {"classes", c.classes}};
}

std::string millions(double count) {
  std::ostringstream s;
  s << std::fixed << std::setprecision(2) << count / 1e6 << "M";
  return s.str();
}

int cmd_train(const RunSpec& spec, std::optional<std::size_t> timesteps, std::ostream& out) {
  Model model = make_model(spec, timesteps);
  const Dataset ds = make_dataset(spec, model.config());
  TrainConfig tc = spec.train;
  tc.seed = spec.seed;
  tc.batch_size = spec.batch_size;
  fs::create_directories(spec.out);
  out << "training " << model.config().label() << " (" << model.param_count() << " parameters) on "
      << ds.size() << " samples\n";
  const TrainResult result = train(model, ds, tc, [&](const EpochMetrics& m) {
    out << "epoch " << m.epoch << " step " << m.step << " loss " << m.loss << " acc " << m.accuracy << " lr "
        << m.lr << "\n";
  });
  save_checkpoint(model, spec.out / "model.spkf");
  write_text(spec.out / "metrics.csv", metrics_csv(result.log));
  json log = json::array();
  for (const auto& m : result.log)
    log.push_back({{"epoch", m.epoch}, {"step", m.step}, {"loss", m.loss}, {"accuracy", m.accuracy}, {"lr", m.lr}});
  write_json(spec.out / "metrics.json",
             {{"model", config_json(model.config())}, {"final_accuracy", result.final_accuracy()}, {"log", log}});
  out << "final train accuracy " << result.final_accuracy() << "\n";
  return kOk;
}

int cmd_eval(const RunSpec& spec, std::optional<std::size_t> timesteps, std::ostream& out) {
  if (!spec.checkpoint) throw UsageError("eval needs --checkpoint PATH");
  Model model = make_model(spec, timesteps);
  const Dataset ds = make_dataset(spec, model.config());
  const EvalResult r = evaluate(model, ds, spec.batch_size);
  fs::create_directories(spec.out);
  std::ostringstream csv;
  csv << std::setprecision(17) << "samples,accuracy,loss\n" << r.samples << ',' << r.accuracy << ',' << r.loss << '\n';
  write_text(spec.out / "eval.csv", csv.str());
  write_json(spec.out / "eval.json", {{"model", config_json(model.config())},
                                      {"samples", r.samples},
                                      {"accuracy", r.accuracy},
                                      {"loss", r.loss}});
  out << "accuracy " << r.accuracy << " loss " << r.loss << " over " << r.samples << " samples\n";
  return kOk;
}

int cmd_audit(const RunSpec& spec, std::optional<std::size_t> timesteps, std::ostream& out) {
  Model model = make_model(spec, timesteps);
  const Dataset ds = make_dataset(spec, model.config());
  calibrate_fresh(model, spec, ds);
  const PurityReport report = record(model, ds, spec.batch_size);
  write_purity_report(report, spec.out);
  out << purity_text(report);
  out << "verdict " << report.verdict() << " (nonzero ratio " << report.nonzero_ratio << ")\n";
  if (spec.require_pure && !report.pure) {
    out << "impure layers:";
    for (const auto& name : report.offending) out << ' ' << name;
    out << "\n";
    return kCheckFailed;
  }
  return kOk;
}

int cmd_energy(const RunSpec& spec, std::optional<std::size_t> timesteps, std::ostream& out) {
  Model model = make_model(spec, timesteps);
  const Dataset ds = make_dataset(spec, model.config());
  calibrate_fresh(model, spec, ds);
  ActivityRecorder recorder;
  record(model, ds, spec.batch_size, &recorder);
  const auto traces = traces_from_activity(recorder, model.config().timesteps, spec.ssa_rule);
  EnergyReport report;
  if (model.config().residual == ResidualStyle::kPostActivationAdd) {
    report = spikformer_recalc(traces, spec.recalc, spec.cost);
  } else if (ds.event_frames()) {
    report = energy_neuromorphic(traces, spec.cost);
  } else {
    report = energy_static(traces, spec.cost);
  }
  write_energy_report(report, spec.out, "energy");
  std::ostringstream csv;
  csv << std::setprecision(12) << "layer,kind,flops,fr,timesteps\n";
  for (const auto& t : traces) {
    csv << t.layer << ','
        << (t.kind == TraceKind::kFirstEncodingConv ? "first-encoding-conv"
            : t.kind == TraceKind::kSnnConv         ? "snn-conv"
                                                    : "ssa-matmul")
        << ',' << t.flops << ',' << t.fr << ',' << t.timesteps << '\n';
  }
  write_text(spec.out / "traces.csv", csv.str());
  out << "energy (" << report.mode << ") " << std::setprecision(6) << report.total_mj() << " mJ per sample, "
      << report.total_sops << " SOPs, " << report.total_macs << " MACs\n";
  return kOk;
}

int cmd_fuse(const RunSpec& spec, std::ostream& out) {
  if (!spec.checkpoint) throw UsageError("fuse needs --checkpoint PATH");
  Model model = load_checkpoint(*spec.checkpoint);
  Model fused = load_checkpoint(*spec.checkpoint);
  if (fused.fused()) throw UsageError("checkpoint is already fused");
  fused.fuse();
  const Dataset ds = make_dataset(spec, model.config());
  const EvalResult a = evaluate(model, ds, spec.batch_size, true);
  const EvalResult b = evaluate(fused, ds, spec.batch_size, true);
  double max_diff = 0.0;
  for (std::size_t i = 0; i < a.logits.size(); ++i)
    for (std::size_t j = 0; j < a.logits[i].size(); ++j)
      max_diff = std::max(max_diff, std::abs(double(a.logits[i][j]) - double(b.logits[i][j])));
  const bool equivalent = max_diff <= kFusionTolerance;
  fs::create_directories(spec.out);
  save_checkpoint(fused, spec.out / "fused.spkf");
  std::ostringstream csv;
  csv << std::setprecision(12) << "samples,max_abs_logit_diff,tolerance,accuracy_unfused,accuracy_fused,equivalent\n"
      << a.samples << ',' << max_diff << ',' << kFusionTolerance << ',' << a.accuracy << ',' << b.accuracy << ','
      << (equivalent ? "true" : "false") << '\n';
  write_text(spec.out / "fuse.csv", csv.str());
  write_json(spec.out / "fuse.json", {{"samples", a.samples},
                                      {"max_abs_logit_diff", max_diff},
                                      {"tolerance", kFusionTolerance},
                                      {"accuracy_unfused", a.accuracy},
                                      {"accuracy_fused", b.accuracy},
                                      {"equivalent", equivalent}});
  out << "fused checkpoint written; max |logit diff| " << max_diff << " -> "
      << (equivalent ? "equivalent" : "NOT equivalent") << "\n";
  return equivalent ? kOk : kCheckFailed;
}

int cmd_params(const RunSpec& spec, std::ostream& out) {
  const Model model(spec.model, spec.seed);
  const std::size_t count = model.param_count();
  out << model.config().label() << ": " << count << " parameters (" << millions(double(count)) << ")\n\n";
  out << std::left << std::setw(22) << "reference" << std::setw(12) << "published" << std::setw(12) << "built"
      << std::setw(10) << "dev" << "within 2%\n";
  json rows = json::array();
  std::ostringstream csv;
  csv << "model,published_millions,built,deviation,within_tolerance\n";
  for (const auto& ref : reference_models()) {
    const std::size_t built = expected_param_count(ref.config);
    const double dev = double(built) / (ref.published_millions * 1e6) - 1.0;
    const bool ok = std::abs(dev) <= kParamTolerance;
    std::ostringstream pct;
    pct << std::showpos << std::fixed << std::setprecision(2) << dev * 100.0 << "%";
    out << std::setw(22) << ref.label << std::setw(12) << millions(ref.published_millions * 1e6)
        << std::setw(12) << millions(double(built)) << std::setw(10) << pct.str() << (ok ? "yes" : "no") << "\n";
    csv << ref.label << ',' << ref.published_millions << ',' << built << ',' << dev << ',' << (ok ? "true" : "false")
        << '\n';
    rows.push_back({{"model", ref.label},
                    {"published_millions", ref.published_millions},
                    {"built", built},
                    {"deviation", dev},
                    {"within_tolerance", ok}});
  }
  fs::create_directories(spec.out);
  write_text(spec.out / "params.csv", csv.str());
  write_json(spec.out / "params.json",
             {{"model", config_json(model.config())}, {"param_count", count}, {"references", rows}});
  return kOk;
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot read config " + path.string());
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

}  // namespace

const std::vector<std::string>& config_keys() { return kKeys; }

std::vector<ReferenceModel> reference_models() {
  return {{"Spikingformer-4-384", ModelConfig::cifar(4, 384, 10), 9.32},
          {"Spikingformer-8-512", ModelConfig::imagenet(8, 512), 29.68},
          {"Spikingformer-8-768", ModelConfig::imagenet(8, 768), 66.34}};
}

void apply_config(RunSpec& spec, const std::string& json_text) {
  json doc;
  try {
    doc = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw UsageError(std::string("config: invalid JSON: ") + e.what());
  }
  if (!doc.is_object()) throw UsageError("config: top level must be a JSON object");
  for (const auto& item : doc.items()) {
    if (std::find(kKeys.begin(), kKeys.end(), item.key()) == kKeys.end()) {
      throw UsageError("config: unknown key '" + item.key() + "'");
    }
  }

  ModelConfig& m = spec.model;
  if (doc.contains("preset")) {
    const auto preset = get<std::string>(doc, "preset");
    const std::size_t blocks = doc.contains("blocks") ? get_count(doc, "blocks") : 0;
    const std::size_t dim = doc.contains("dim") ? get_count(doc, "dim") : 0;
    if (preset == "desk") {
      m = ModelConfig::desk(blocks ? blocks : 2, dim ? dim : 64, doc.contains("classes") ? get_count(doc, "classes") : 4);
    } else if (preset == "cifar") {
      m = ModelConfig::cifar(blocks ? blocks : 4, dim ? dim : 384,
                             doc.contains("classes") ? get_count(doc, "classes") : 10);
    } else if (preset == "imagenet") {
      m = ModelConfig::imagenet(blocks ? blocks : 8, dim ? dim : 512);
    } else {
      throw UsageError("config: preset must be desk, cifar or imagenet, got '" + preset + "'");
    }
  }
  if (doc.contains("blocks")) m.blocks = get_count(doc, "blocks");
  if (doc.contains("dim")) m.dim = get_count(doc, "dim");
  if (doc.contains("heads")) m.heads = get_count(doc, "heads");
  if (doc.contains("timesteps")) m.timesteps = get_count(doc, "timesteps");
  if (doc.contains("scale")) m.scale = Real(get<double>(doc, "scale"));
  if (doc.contains("mlp_ratio")) m.mlp_ratio = get_count(doc, "mlp_ratio");
  if (doc.contains("tokenizer")) {
    m.tokenizer.clear();
    for (const auto& u : get<std::vector<std::string>>(doc, "tokenizer")) {
      if (u == "spe") m.tokenizer.push_back(TokenizerUnit::kSpe);
      else if (u == "sped") m.tokenizer.push_back(TokenizerUnit::kSped);
      else throw UsageError("config: tokenizer units are 'spe' or 'sped', got '" + u + "'");
    }
  }
  if (doc.contains("head")) {
    try {
      m.head = head_variant_from_string(get<std::string>(doc, "head"));
    } catch (const std::invalid_argument& e) {
      throw UsageError(std::string("config: ") + e.what());
    }
  }
  if (doc.contains("residual")) m.residual = residual_from_string(get<std::string>(doc, "residual"));
  if (doc.contains("in_channels")) m.in_channels = get_count(doc, "in_channels");
  if (doc.contains("height")) m.height = get_count(doc, "height");
  if (doc.contains("width")) m.width = get_count(doc, "width");
  if (doc.contains("classes")) m.classes = get_count(doc, "classes");
  if (doc.contains("tau")) m.lif.tau = Real(get<double>(doc, "tau"));
  if (doc.contains("v_threshold")) m.lif.v_threshold = Real(get<double>(doc, "v_threshold"));
  if (doc.contains("v_reset")) m.lif.v_reset = Real(get<double>(doc, "v_reset"));
  if (doc.contains("alpha")) m.lif.alpha = Real(get<double>(doc, "alpha"));
  if (doc.contains("detach_reset")) m.lif.detach_reset = get<bool>(doc, "detach_reset");

  TrainConfig& t = spec.train;
  if (doc.contains("epochs")) t.epochs = get_count(doc, "epochs");
  if (doc.contains("batch_size")) spec.batch_size = get_count(doc, "batch_size");
  if (doc.contains("lr")) t.lr = get<double>(doc, "lr");
  if (doc.contains("weight_decay")) t.weight_decay = get<double>(doc, "weight_decay");
  if (doc.contains("beta1")) t.beta1 = get<double>(doc, "beta1");
  if (doc.contains("beta2")) t.beta2 = get<double>(doc, "beta2");
  if (doc.contains("adam_eps")) t.adam_eps = get<double>(doc, "adam_eps");
  if (doc.contains("stop_at_accuracy")) {
    if (doc.at("stop_at_accuracy").is_null()) t.stop_at_accuracy.reset();
    else t.stop_at_accuracy = get<double>(doc, "stop_at_accuracy");
  }
  if (doc.contains("neuron_mode")) {
    const auto mode = get<std::string>(doc, "neuron_mode");
    if (mode == "spiking") t.mode = NeuronMode::kSpiking;
    else if (mode == "relaxed") t.mode = NeuronMode::kRelaxed;
    else throw UsageError("config: neuron_mode must be 'spiking' or 'relaxed'");
  }

  DataSpec& d = spec.data;
  if (doc.contains("dataset")) d.source = get<std::string>(doc, "dataset");
  if (doc.contains("data")) d.path = get<std::string>(doc, "data");
  if (doc.contains("samples")) d.samples = get_count(doc, "samples");
  if (doc.contains("data_seed")) d.seed = get<std::uint64_t>(doc, "data_seed");
  if (doc.contains("noise")) d.noise = get<double>(doc, "noise");
  if (doc.contains("limit")) d.limit = get_count(doc, "limit");

  if (doc.contains("energy_mode")) spec.recalc = recalc_from_int(get<long>(doc, "energy_mode"));
  if (doc.contains("ssa_rule")) {
    const auto rule = get<std::string>(doc, "ssa_rule");
    if (rule == "leading") spec.ssa_rule = SsaOperandRule::kLeadingOperand;
    else if (rule == "joint") spec.ssa_rule = SsaOperandRule::kJointOperands;
    else throw UsageError("config: ssa_rule must be 'leading' or 'joint'");
  }
  if (doc.contains("e_mac_pj")) spec.cost.e_mac_pj = get<double>(doc, "e_mac_pj");
  if (doc.contains("e_ac_pj")) spec.cost.e_ac_pj = get<double>(doc, "e_ac_pj");

  if (doc.contains("seed")) spec.seed = get<std::uint64_t>(doc, "seed");
  if (doc.contains("out")) spec.out = get<std::string>(doc, "out");
  if (doc.contains("checkpoint")) spec.checkpoint = get<std::string>(doc, "checkpoint");
  if (doc.contains("require_pure")) spec.require_pure = get<bool>(doc, "require_pure");
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Spikingformer: spike-driven transformer training, auditing and energy estimation", "spikingformer"};
  app.require_subcommand(1);

  std::string config_path, data_path, out_dir, checkpoint;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> timesteps, limit;
  std::optional<int> mode;
  bool require_pure = false;

  const std::map<std::string, std::string> commands = {
      {"train", "train a model and write model.spkf and metrics"},
      {"eval", "evaluate a checkpoint"},
      {"audit", "record ConvBN input histograms and judge spike purity"},
      {"energy", "estimate SOPs and energy from recorded activity"},
      {"fuse", "fold batch norms into convolutions and verify equivalence"},
      {"params", "count parameters and compare with the reference table"}};
  for (const auto& [name, help] : commands) {
    CLI::App* sub = app.add_subcommand(name, help);
    sub->add_option("--config", config_path, "flat JSON config file");
    sub->add_option("--data", data_path, "CIFAR-10 binary batch file");
    sub->add_option("--out", out_dir, "output directory");
    sub->add_option("--seed", seed, "model and shuffling seed");
    sub->add_option("--timesteps", timesteps, "time steps T")->check(CLI::PositiveNumber);
    sub->add_option("--mode", mode, "energy recalculation mode")->check(CLI::IsMember({1, 2}));
    sub->add_flag("--require-pure", require_pure, "fail when any ConvBN input is non-binary");
    sub->add_option("--limit", limit, "use at most N samples");
    sub->add_option("--checkpoint", checkpoint, "checkpoint file");
  }

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err) == 0 ? kOk : kUsage;
  }

  try {
    RunSpec spec;
    spec.command = app.get_subcommands().front()->get_name();
    if (!config_path.empty()) apply_config(spec, read_file(config_path));
    if (!data_path.empty()) {
      spec.data.path = data_path;
      spec.data.source = "cifar10";
    }
    if (!out_dir.empty()) spec.out = out_dir;
    if (seed) spec.seed = *seed;
    if (timesteps) spec.model.timesteps = *timesteps;
    if (mode) spec.recalc = recalc_from_int(*mode);
    if (require_pure) spec.require_pure = true;
    if (limit) spec.data.limit = *limit;
    if (!checkpoint.empty()) spec.checkpoint = checkpoint;
    spec.model.validate();
    spec.train.validate();
    spec.cost.validate();
    if (spec.batch_size == 0) throw UsageError("batch_size must be >= 1");

    if (spec.command == "train") return cmd_train(spec, timesteps, out);
    if (spec.command == "eval") return cmd_eval(spec, timesteps, out);
    if (spec.command == "audit") return cmd_audit(spec, timesteps, out);
    if (spec.command == "energy") return cmd_energy(spec, timesteps, out);
    if (spec.command == "fuse") return cmd_fuse(spec, out);
    return cmd_params(spec, out);
  } catch (const UsageError& e) {
    err << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kFailure;
  }
}

}  // namespace spkf::cli
