#include "spikingformer/audit.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

#include <json.hpp>

#include "spikingformer/autodiff.hpp"
#include "spikingformer/neuron.hpp"

SPKF_NAMESPACE_BEGIN

PurityReport purity_from(const ActivityRecorder& recorder) {
  PurityReport report;
  std::uint64_t judged_elements = 0, judged_nonzero = 0;
  for (const LayerActivity& a : recorder.layers()) {
    if (a.kind == LayerKind::kSsaMatmul) continue;
    LayerPurity p;
    p.name = a.name;
    p.kind = a.kind;
    p.histogram = a.histogram;
    p.anomalies = a.anomalies;
    p.elements = a.elements;
    p.firing_rate = a.firing_rate();
    p.max_value = a.max_value;
    p.binary = a.binary();
    if (a.kind == LayerKind::kSnnConv) {
      judged_elements += a.elements;
      judged_nonzero += a.nonzero;
      if (!p.binary) {
        report.pure = false;
        report.offending.push_back(a.name);
      }
    }
    report.layers.push_back(std::move(p));
  }
  report.nonzero_ratio = judged_elements == 0 ? 0.0 : double(judged_nonzero) / double(judged_elements);
  return report;
}

PurityReport record(Model& model, const Dataset& dataset, std::size_t batch_size, ActivityRecorder* recorder_out) {
  if (batch_size == 0) batch_size = 1;
  ActivityRecorder recorder;
  NoGradScope no_grad;
  ForwardOptions options;
  options.recorder = &recorder;
  for (std::size_t begin = 0; begin < dataset.size(); begin += batch_size) {
    const Batch batch = dataset.batch(begin, begin + batch_size);
    model.forward(batch.input, options);
  }
  PurityReport report = purity_from(recorder);
  if (recorder_out != nullptr) recorder_out->merge(recorder);
  return report;
}

double firing_rate(const Tensor& spikes) {
  const SpikeTensor checked = SpikeTensor::checked(spikes);
  if (checked.numel() == 0) return 0.0;
  return double(checked.count_ones()) / double(checked.numel());
}

std::string purity_csv(const PurityReport& report) {
  std::ostringstream out;
  out << "layer,kind,value,count,fr\n";
  out << std::setprecision(9);
  for (const auto& layer : report.layers) {
    for (const auto& [value, count] : layer.histogram)
      out << layer.name << ',' << to_string(layer.kind) << ',' << value << ',' << count << ',' << layer.firing_rate
          << '\n';
    if (layer.anomalies != 0)
      out << layer.name << ',' << to_string(layer.kind) << ",non-integer," << layer.anomalies << ','
          << layer.firing_rate << '\n';
  }
  return out.str();
}

std::string purity_json(const PurityReport& report) {
  nlohmann::json doc;
  doc["verdict"] = report.verdict();
  doc["nonzero_ratio"] = report.nonzero_ratio;
  doc["offending"] = report.offending;
  doc["layers"] = nlohmann::json::array();
  for (const auto& layer : report.layers) {
    nlohmann::json hist = nlohmann::json::object();
    for (const auto& [value, count] : layer.histogram) hist[std::to_string(value)] = count;
    doc["layers"].push_back({{"layer", layer.name},
                             {"kind", to_string(layer.kind)},
                             {"histogram", hist},
                             {"non_integer", layer.anomalies},
                             {"elements", layer.elements},
                             {"fr", layer.firing_rate},
                             {"max", layer.max_value},
                             {"binary", layer.binary}});
  }
  return doc.dump(2);
}

std::string purity_text(const PurityReport& report) {
  std::ostringstream out;
  out << "verdict: " << report.verdict() << "  nonzero ratio: " << std::fixed << std::setprecision(4)
      << report.nonzero_ratio << '\n';
  for (const auto& layer : report.layers) {
    out << layer.name << " [" << to_string(layer.kind) << "] fr=" << std::setprecision(4) << layer.firing_rate
        << " max=" << std::setprecision(2) << layer.max_value << '\n';
    for (const auto& [value, count] : layer.histogram) {
      const double lg = std::log10(double(count) + 1.0);
      out << "  " << std::setw(4) << value << " | " << std::string(static_cast<std::size_t>(std::lround(lg * 4)), '#')
          << ' ' << std::setprecision(2) << lg << '\n';
    }
    if (layer.anomalies != 0) out << "  non-integer values: " << layer.anomalies << '\n';
  }
  return out.str();
}

void write_purity_report(const PurityReport& report, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::ofstream(dir / "purity.csv") << purity_csv(report);
  std::ofstream(dir / "purity.json") << purity_json(report) << '\n';
  std::ofstream(dir / "purity.txt") << purity_text(report);
}

SPKF_NAMESPACE_END
