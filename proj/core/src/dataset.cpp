#include "spikingformer/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <string>

#include "spikingformer/layers.hpp"

SPKF_NAMESPACE_BEGIN

Batch Dataset::batch(std::span<const std::size_t> indices) const {
  Batch out;
  const std::size_t b = indices.size();
  const std::size_t per_sample = shape_numel(geometry);
  std::vector<Real> values(b * per_sample);
  if (event_frames()) {
    const std::size_t T = geometry[0];
    const std::size_t frame = per_sample / T;
    for (std::size_t j = 0; j < b; ++j) {
      const auto src = samples.at(indices[j]).input.data();
      for (std::size_t t = 0; t < T; ++t)
        std::copy_n(src.begin() + t * frame, frame, values.begin() + (t * b + j) * frame);
    }
    out.input = Tensor({T, b, geometry[1], geometry[2], geometry[3]}, std::move(values));
  } else {
    for (std::size_t j = 0; j < b; ++j) {
      const auto src = samples.at(indices[j]).input.data();
      std::copy(src.begin(), src.end(), values.begin() + j * per_sample);
    }
    Shape shape{b};
    shape.insert(shape.end(), geometry.begin(), geometry.end());
    out.input = Tensor(shape, std::move(values));
  }
  for (std::size_t i : indices) out.labels.push_back(samples.at(i).label);
  return out;
}

Batch Dataset::batch(std::size_t begin, std::size_t end) const {
  std::vector<std::size_t> idx;
  for (std::size_t i = begin; i < std::min(end, size()); ++i) idx.push_back(i);
  return batch(idx);
}

Dataset load_cifar10_binary(const std::filesystem::path& path, std::optional<std::size_t> limit) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DatasetError("cifar10: cannot open " + path.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (bytes.size() % kCifarRecordBytes != 0) {
    throw DatasetError("cifar10: " + path.string() + " is truncated (" + std::to_string(bytes.size()) +
                       " bytes is not a multiple of " + std::to_string(kCifarRecordBytes) + ")");
  }
  std::size_t records = bytes.size() / kCifarRecordBytes;
  if (limit) records = std::min(records, *limit);
  Dataset ds;
  ds.kind = DatasetKind::kStaticImage;
  ds.classes = 10;
  ds.geometry = {3, 32, 32};
  ds.samples.reserve(records);
  for (std::size_t r = 0; r < records; ++r) {
    const unsigned char* rec = bytes.data() + r * kCifarRecordBytes;
    if (rec[0] >= 10) {
      throw DatasetError("cifar10: record " + std::to_string(r) + " has label " + std::to_string(rec[0]));
    }
    std::vector<Real> pixels(3072);
    for (std::size_t i = 0; i < 3072; ++i) pixels[i] = Real(rec[1 + i]) / Real(255);
    ds.samples.push_back({Tensor({3, 32, 32}, std::move(pixels)), rec[0]});
  }
  return ds;
}

void write_cifar10_binary(const std::filesystem::path& path, const Dataset& dataset) {
  if (dataset.geometry != Shape{3, 32, 32}) throw DatasetError("cifar10: dataset geometry must be [3,32,32]");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DatasetError("cifar10: cannot write " + path.string());
  for (const Sample& s : dataset.samples) {
    if (s.label >= 10) throw DatasetError("cifar10: label out of range");
    std::vector<char> rec(kCifarRecordBytes);
    rec[0] = static_cast<char>(s.label);
    const auto px = s.input.data();
    for (std::size_t i = 0; i < 3072; ++i) {
      const double v = std::clamp(double(px[i]), 0.0, 1.0);
      rec[1 + i] = static_cast<char>(static_cast<unsigned char>(std::lround(v * 255.0)));
    }
    out.write(rec.data(), static_cast<std::streamsize>(rec.size()));
  }
}

namespace {

constexpr std::size_t kBlock = 4;

// Piecewise-constant random map with kBlock x kBlock cells.
std::vector<Real> blocky_map(Rng& rng, std::size_t channels, std::size_t h, std::size_t w, double lo, double hi) {
  const std::size_t bh = (h + kBlock - 1) / kBlock, bw = (w + kBlock - 1) / kBlock;
  std::vector<double> cells(channels * bh * bw);
  for (auto& c : cells) c = rng.uniform(lo, hi);
  std::vector<Real> out(channels * h * w);
  for (std::size_t c = 0; c < channels; ++c)
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x)
        out[(c * h + y) * w + x] = static_cast<Real>(cells[(c * bh + y / kBlock) * bw + x / kBlock]);
  return out;
}

}  // namespace

std::vector<Tensor> synth_static_templates(std::size_t classes, std::uint64_t seed, const SynthOptions& o) {
  Rng rng(seed * 0x9E3779B97F4A7C15ULL + 1);
  std::vector<Tensor> templates;
  for (std::size_t c = 0; c < classes; ++c)
    templates.emplace_back(Shape{o.channels, o.height, o.width}, blocky_map(rng, o.channels, o.height, o.width, 0.1, 0.9));
  return templates;
}

Dataset synth_static(std::size_t classes, std::size_t n, std::uint64_t seed, const SynthOptions& o) {
  if (classes == 0) throw DatasetError("synth_static: need at least one class");
  const auto templates = synth_static_templates(classes, seed, o);
  Rng rng(seed * 0x9E3779B97F4A7C15ULL + 2);
  Dataset ds;
  ds.kind = DatasetKind::kSynthetic;
  ds.classes = classes;
  ds.geometry = {o.channels, o.height, o.width};
  ds.samples.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t label = i % classes;
    std::vector<Real> px(templates[label].data().begin(), templates[label].data().end());
    if (o.noise > 0.0) {
      for (auto& v : px) v = static_cast<Real>(std::clamp(double(v) + o.noise * rng.normal(), 0.0, 1.0));
    }
    ds.samples.push_back({Tensor(ds.geometry, std::move(px)), label});
  }
  return ds;
}

Dataset synth_events(std::size_t classes, std::size_t n, std::size_t timesteps, std::uint64_t seed,
                     const SynthOptions& o) {
  if (classes == 0) throw DatasetError("synth_events: need at least one class");
  if (timesteps == 0) throw DatasetError("synth_events: need at least one time step");
  Rng rng(seed * 0x9E3779B97F4A7C15ULL + 3);
  std::vector<std::vector<Real>> rates;
  for (std::size_t c = 0; c < classes; ++c) rates.push_back(blocky_map(rng, o.channels, o.height, o.width, 0.02, 0.6));
  Dataset ds;
  ds.kind = DatasetKind::kEventFrames;
  ds.classes = classes;
  ds.geometry = {timesteps, o.channels, o.height, o.width};
  const std::size_t frame = o.channels * o.height * o.width;
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t label = i % classes;
    std::vector<Real> frames(timesteps * frame);
    for (std::size_t t = 0; t < timesteps; ++t)
      for (std::size_t p = 0; p < frame; ++p) frames[t * frame + p] = rng.uniform() < rates[label][p] ? Real(1) : Real(0);
    ds.samples.push_back({Tensor(ds.geometry, std::move(frames)), label});
  }
  return ds;
}

SPKF_NAMESPACE_END
