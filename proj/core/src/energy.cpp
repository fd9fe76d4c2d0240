#include "spikingformer/energy.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

#include <json.hpp>

SPKF_NAMESPACE_BEGIN

void HardwareCostModel::validate() const {
  if (!(e_mac_pj > 0.0) || !(e_ac_pj > 0.0)) throw EnergyError("energy: E_MAC and E_AC must be positive");
}

namespace {

const char* kind_name(TraceKind kind) {
  switch (kind) {
    case TraceKind::kFirstEncodingConv: return "first-encoding-conv";
    case TraceKind::kSnnConv: return "snn-conv";
    case TraceKind::kSsaMatmul: return "ssa-matmul";
  }
  return "unknown";
}

void check_trace(const LayerTrace& t) {
  if (!(t.fr >= 0.0 && t.fr <= 1.0)) throw EnergyError("energy: firing rate of " + t.layer + " outside [0,1]");
  if (t.timesteps == 0) throw EnergyError("energy: T of " + t.layer + " must be >= 1");
  if (!(t.flops >= 0.0)) throw EnergyError("energy: negative FLOPs for " + t.layer);
}

double exact_sops(const LayerTrace& t) { return t.fr * double(t.timesteps) * t.flops; }

void add_layer(EnergyReport& report, LayerEnergy layer) {
  report.total_pj += layer.energy_pj;
  report.total_sops += layer.sops;
  report.total_macs += layer.macs;
  report.layers.push_back(std::move(layer));
}

void require_single_first_layer(const std::vector<LayerTrace>& traces) {
  std::size_t first = 0;
  for (const auto& t : traces) first += t.kind == TraceKind::kFirstEncodingConv;
  if (first != 1) {
    throw EnergyError("energy: expected exactly one first-encoding-conv trace, found " + std::to_string(first));
  }
}

LayerEnergy first_layer(const LayerTrace& t, const HardwareCostModel& cost) {
  return {t.layer, t.kind, 0.0, t.flops, cost.e_mac_pj * t.flops};
}

LayerEnergy accumulate_layer(const LayerTrace& t, const HardwareCostModel& cost) {
  const double s = exact_sops(t);
  return {t.layer, t.kind, s, 0.0, cost.e_ac_pj * s};
}

}  // namespace

std::int64_t sops(double flops, double fr, std::size_t timesteps) {
  check_trace({"sops", flops, fr, timesteps, TraceKind::kSnnConv, std::nullopt});
  return std::llround(fr * double(timesteps) * flops);
}

EnergyReport energy_static(const std::vector<LayerTrace>& traces, const HardwareCostModel& cost) {
  cost.validate();
  require_single_first_layer(traces);
  EnergyReport report;
  report.mode = "static";
  for (const auto& t : traces) {
    check_trace(t);
    add_layer(report, t.kind == TraceKind::kFirstEncodingConv ? first_layer(t, cost) : accumulate_layer(t, cost));
  }
  return report;
}

EnergyReport energy_neuromorphic(const std::vector<LayerTrace>& traces, const HardwareCostModel& cost) {
  cost.validate();
  EnergyReport report;
  report.mode = "neuromorphic";
  for (const auto& t : traces) {
    check_trace(t);
    add_layer(report, accumulate_layer(t, cost));
  }
  return report;
}

EnergyReport spikformer_recalc(const std::vector<LayerTrace>& traces, RecalcMode mode, const HardwareCostModel& cost) {
  cost.validate();
  require_single_first_layer(traces);
  EnergyReport report;
  report.mode = mode == RecalcMode::kIntegerAsAccumulates ? "recalc-integer-as-accumulates" : "recalc-integer-as-mac";
  for (const auto& t : traces) {
    check_trace(t);
    if (t.kind == TraceKind::kFirstEncodingConv) {
      add_layer(report, first_layer(t, cost));
      continue;
    }
    if (t.kind == TraceKind::kSsaMatmul) {
      add_layer(report, accumulate_layer(t, cost));
      continue;
    }
    if (!t.histogram) throw EnergyError("energy: recalculation needs an input histogram for " + t.layer);
    double total = 0.0, weighted = 0.0, ones = 0.0, larger = 0.0;
    for (const auto& [value, count] : *t.histogram) {
      total += count;
      if (value <= 0) continue;
      weighted += double(value) * count;
      (value == 1 ? ones : larger) += count;
    }
    const double scale = total > 0.0 ? double(t.timesteps) * t.flops / total : 0.0;
    LayerEnergy layer{t.layer, t.kind, 0.0, 0.0, 0.0};
    if (mode == RecalcMode::kIntegerAsAccumulates) {
      layer.sops = weighted * scale;
    } else {
      layer.sops = ones * scale;
      layer.macs = larger * scale;
    }
    layer.energy_pj = cost.e_ac_pj * layer.sops + cost.e_mac_pj * layer.macs;
    add_layer(report, std::move(layer));
  }
  return report;
}

std::vector<LayerTrace> traces_from_activity(const ActivityRecorder& recorder, std::size_t timesteps,
                                             SsaOperandRule rule) {
  std::vector<LayerTrace> traces;
  const auto ends_with = [](const std::string& s, const std::string& suffix) {
    return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
  };
  for (const LayerActivity& a : recorder.layers()) {
    switch (a.kind) {
      case LayerKind::kEncoderConv:
        traces.push_back({a.name, a.flops_per_step, a.firing_rate(), timesteps, TraceKind::kFirstEncodingConv,
                          std::nullopt});
        break;
      case LayerKind::kSnnConv: {
        std::map<std::int64_t, double> hist;
        for (const auto& [value, count] : a.histogram) hist[value] = double(count);
        traces.push_back({a.name, a.flops_per_step, a.firing_rate(), timesteps, TraceKind::kSnnConv, hist});
        break;
      }
      case LayerKind::kSsaMatmul: {
        if (!ends_with(a.name, ".q")) break;
        const std::string prefix = a.name.substr(0, a.name.size() - 2);
        const LayerActivity* k = recorder.find(prefix + ".k");
        const LayerActivity* v = recorder.find(prefix + ".v");
        if (k == nullptr || v == nullptr) throw EnergyError("energy: incomplete attention record for " + prefix);
        const double fr_qk = rule == SsaOperandRule::kJointOperands ? a.firing_rate() * k->firing_rate()
                                                                      : a.firing_rate();
        traces.push_back({prefix + ".qk", a.flops_per_step, fr_qk, timesteps, TraceKind::kSsaMatmul, std::nullopt});
        traces.push_back({prefix + ".av", v->flops_per_step, v->firing_rate(), timesteps, TraceKind::kSsaMatmul,
                          std::nullopt});
        break;
      }
    }
  }
  return traces;
}

std::string energy_csv(const EnergyReport& report) {
  std::ostringstream out;
  out << std::setprecision(12);
  out << "layer,kind,sops,macs,energy_pj\n";
  for (const auto& l : report.layers)
    out << l.layer << ',' << kind_name(l.kind) << ',' << l.sops << ',' << l.macs << ',' << l.energy_pj << '\n';
  out << "total,," << report.total_sops << ',' << report.total_macs << ',' << report.total_pj << '\n';
  return out.str();
}

std::string energy_json(const EnergyReport& report) {
  nlohmann::json doc;
  doc["mode"] = report.mode;
  doc["total_pj"] = report.total_pj;
  doc["total_mj"] = report.total_mj();
  doc["total_sops"] = report.total_sops;
  doc["total_macs"] = report.total_macs;
  doc["layers"] = nlohmann::json::array();
  for (const auto& l : report.layers)
    doc["layers"].push_back({{"layer", l.layer},
                             {"kind", kind_name(l.kind)},
                             {"sops", l.sops},
                             {"macs", l.macs},
                             {"energy_pj", l.energy_pj}});
  return doc.dump(2);
}

void write_energy_report(const EnergyReport& report, const std::filesystem::path& dir, const std::string& stem) {
  std::filesystem::create_directories(dir);
  std::ofstream(dir / (stem + ".csv")) << energy_csv(report);
  std::ofstream(dir / (stem + ".json")) << energy_json(report) << '\n';
}

SPKF_NAMESPACE_END
