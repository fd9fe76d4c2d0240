#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numeric>

#include <spikingformer/checkpoint.hpp>
#include <spikingformer/dataset.hpp>
#include <spikingformer/train.hpp>

#include "support.hpp"

using namespace spkf;
using namespace spkf::testing;
namespace fs = std::filesystem;

namespace {

fs::path temp_file(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "spkf_train_tests";
  fs::create_directories(dir);
  return dir / name;
}

void write_bytes(const fs::path& path, const std::vector<unsigned char>& bytes) {
  std::ofstream(path, std::ios::binary).write(reinterpret_cast<const char*>(bytes.data()), std::streamsize(bytes.size()));
}

std::vector<unsigned char> read_bytes(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

ModelConfig tiny(std::size_t classes = 4) {
  ModelConfig c = ModelConfig::desk(1, 16, classes);
  c.height = c.width = 8;
  c.tokenizer = {TokenizerUnit::kSped};
  return c;
}

std::vector<std::vector<Real>> snapshot(const Model& m) {
  std::vector<std::vector<Real>> out;
  for (const auto& p : m.parameters()) out.emplace_back(p.tensor.data().begin(), p.tensor.data().end());
  return out;
}

bool bit_equal(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) return false;
  for (std::size_t i = 0; i < a.numel(); ++i)
    if (std::memcmp(&a.data()[i], &b.data()[i], sizeof(Real)) != 0) return false;
  return true;
}

}  // namespace

// CIFAR-10 binary format

TEST(Cifar, TwoRecords) {
  std::vector<unsigned char> bytes(2 * kCifarRecordBytes, 0);
  bytes[0] = 3;
  bytes[kCifarRecordBytes] = 7;
  bytes[kCifarRecordBytes + 1] = 255;
  const auto path = temp_file("two.bin");
  write_bytes(path, bytes);
  const Dataset ds = load_cifar10_binary(path);
  ASSERT_EQ(ds.size(), 2u);
  EXPECT_EQ(ds.geometry, (Shape{3, 32, 32}));
  EXPECT_EQ(ds.classes, 10u);
  EXPECT_EQ(ds.kind, DatasetKind::kStaticImage);
  EXPECT_EQ(ds.samples[0].label, 3u);
  EXPECT_EQ(ds.samples[1].label, 7u);
  EXPECT_EQ(ds.samples[1].input[0], Real(1));
  EXPECT_EQ(ds.samples[1].input[1], Real(0));
}

TEST(Cifar, AllWhiteScalesToOne) {
  std::vector<unsigned char> bytes(kCifarRecordBytes, 255);
  bytes[0] = 1;
  const auto path = temp_file("white.bin");
  write_bytes(path, bytes);
  const Dataset ds = load_cifar10_binary(path);
  for (Real v : ds.samples[0].input.data()) ASSERT_EQ(v, Real(1));
}

TEST(Cifar, PlaneOrder) {
  std::vector<unsigned char> bytes(kCifarRecordBytes, 0);
  bytes[1 + 1024 + 33] = 255;  // G plane, row 1, column 1
  const auto path = temp_file("plane.bin");
  write_bytes(path, bytes);
  const Dataset ds = load_cifar10_binary(path);
  const Tensor& x = ds.samples[0].input;
  EXPECT_EQ(x[1024 + 32 + 1], Real(1));
  EXPECT_EQ(std::accumulate(x.data().begin(), x.data().end(), Real(0)), Real(1));
}

TEST(Cifar, RoundTrip) {
  Rng rng(1);
  std::vector<unsigned char> bytes(5 * kCifarRecordBytes);
  for (std::size_t i = 0; i < bytes.size(); ++i)
    bytes[i] = i % kCifarRecordBytes == 0 ? static_cast<unsigned char>(rng.below(10))
                                           : static_cast<unsigned char>(rng.below(256));
  const auto a = temp_file("rt_a.bin"), b = temp_file("rt_b.bin");
  write_bytes(a, bytes);
  write_cifar10_binary(b, load_cifar10_binary(a));
  EXPECT_EQ(read_bytes(b), bytes);
}

TEST(Cifar, Errors) {
  const auto truncated = temp_file("truncated.bin");
  write_bytes(truncated, std::vector<unsigned char>(kCifarRecordBytes + 10, 0));
  EXPECT_THROW(load_cifar10_binary(truncated), DatasetError);
  const auto bad_label = temp_file("label.bin");
  std::vector<unsigned char> bytes(kCifarRecordBytes, 0);
  bytes[0] = 10;
  write_bytes(bad_label, bytes);
  EXPECT_THROW(load_cifar10_binary(bad_label), DatasetError);
  EXPECT_THROW(load_cifar10_binary(temp_file("missing.bin")), DatasetError);
}

TEST(Cifar, Limit) {
  const auto path = temp_file("limit.bin");
  write_bytes(path, std::vector<unsigned char>(4 * kCifarRecordBytes, 0));
  EXPECT_EQ(load_cifar10_binary(path, 3).size(), 3u);
  EXPECT_EQ(load_cifar10_binary(path, 10).size(), 4u);
}

// Synthetic data

TEST(Synth, Reproducible) {
  const Dataset a = synth_static(4, 20, 9), b = synth_static(4, 20, 9), c = synth_static(4, 20, 10);
  bool differs = false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_TRUE(bit_equal(a.samples[i].input, b.samples[i].input));
    EXPECT_EQ(a.samples[i].label, b.samples[i].label);
    differs |= !bit_equal(a.samples[i].input, c.samples[i].input);
  }
  EXPECT_TRUE(differs);
  const Dataset e1 = synth_events(3, 6, 4, 2), e2 = synth_events(3, 6, 4, 2);
  for (std::size_t i = 0; i < e1.size(); ++i) EXPECT_TRUE(bit_equal(e1.samples[i].input, e2.samples[i].input));
}

TEST(Synth, TemplatesHaveDistinctMeans) {
  const auto templates = synth_static_templates(10, 3);
  std::vector<double> means;
  for (const auto& t : templates) {
    double s = 0;
    for (Real v : t.data()) s += v;
    means.push_back(s / double(t.numel()));
  }
  for (std::size_t i = 0; i < means.size(); ++i)
    for (std::size_t j = i + 1; j < means.size(); ++j) EXPECT_NE(means[i], means[j]) << i << " " << j;
}

TEST(Synth, TemplateMatchingSeparatesNoiselessData) {
  const std::size_t classes = 6;
  SynthOptions clean;
  clean.noise = 0.0;
  const auto templates = synth_static_templates(classes, 5, clean);
  const Dataset ds = synth_static(classes, 300, 5, clean);
  std::size_t correct = 0;
  for (const auto& s : ds.samples) {
    // Linear score: <x, t_c> - |t_c|^2 / 2 (nearest template).
    std::size_t best = 0;
    double best_score = -std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < classes; ++c) {
      double dot = 0, norm = 0;
      for (std::size_t i = 0; i < s.input.numel(); ++i) {
        dot += double(s.input[i]) * double(templates[c][i]);
        norm += double(templates[c][i]) * double(templates[c][i]);
      }
      const double score = dot - norm / 2;
      if (score > best_score) best_score = score, best = c;
    }
    correct += best == s.label;
  }
  EXPECT_GE(double(correct) / double(ds.size()), 0.99);
}

TEST(Synth, LabelsCoverEveryClass) {
  const Dataset ds = synth_static(5, 12, 1);
  std::vector<int> seen(5, 0);
  for (const auto& s : ds.samples) {
    ASSERT_LT(s.label, 5u);
    seen[s.label] = 1;
  }
  EXPECT_EQ(std::accumulate(seen.begin(), seen.end(), 0), 5);
}

TEST(Synth, EventFramesAreBinaryTwoChannel) {
  const Dataset ds = synth_events(3, 6, 4, 2);
  EXPECT_EQ(ds.kind, DatasetKind::kEventFrames);
  EXPECT_TRUE(ds.event_frames());
  EXPECT_EQ(ds.geometry, (Shape{4, 2, 16, 16}));
  for (const auto& s : ds.samples)
    for (Real v : s.input.data()) ASSERT_TRUE(v == Real(0) || v == Real(1));
  const Batch b = ds.batch(0, 3);
  EXPECT_EQ(b.input.shape(), (Shape{4, 3, 2, 16, 16}));
}

// Optimizer and loop

TEST(Train, CosineSchedule) {
  EXPECT_DOUBLE_EQ(cosine_lr(1e-3, 0, 100), 1e-3);
  EXPECT_NEAR(cosine_lr(1e-3, 50, 100), 5e-4, 1e-15);
  EXPECT_NEAR(cosine_lr(1e-3, 100, 100), 0.0, 1e-15);
  for (std::size_t s = 1; s <= 100; ++s) EXPECT_LE(cosine_lr(1e-3, s, 100), cosine_lr(1e-3, s - 1, 100));
}

TEST(Train, ConfigValidation) {
  TrainConfig c;
  EXPECT_NO_THROW(c.validate());
  auto bad = [](auto mutate) {
    TrainConfig t;
    mutate(t);
    EXPECT_THROW(t.validate(), ConfigError);
  };
  bad([](TrainConfig& t) { t.lr = 0; });
  bad([](TrainConfig& t) { t.epochs = 0; });
  bad([](TrainConfig& t) { t.batch_size = 0; });
  bad([](TrainConfig& t) { t.beta1 = 1.0; });
  bad([](TrainConfig& t) { t.stop_at_accuracy = 1.5; });
}

TEST(Train, GeometryAndClassMismatchRejected) {
  Model m(tiny(4));
  TrainConfig cfg;
  cfg.epochs = 1;
  EXPECT_THROW(train(m, synth_static(3, 8, 1, {3, 8, 8, 0.1}), cfg), ConfigError);
  EXPECT_ANY_THROW(train(m, synth_static(4, 8, 1, {3, 16, 16, 0.1}), cfg));
  EXPECT_THROW(train(m, Dataset{}, cfg), ConfigError);
}

TEST(Train, ZeroLearningRateLeavesParametersUnchanged) {
  Model m(tiny(), 3);
  const Dataset ds = synth_static(4, 16, 1, {3, 8, 8, 0.1});
  const auto before = snapshot(m);
  AdamW opt(m.parameters(), 0.9, 0.999, 1e-8, 0.05);
  for (std::size_t b = 0; b < ds.size(); b += 4) {
    opt.zero_grad();
    loss_and_gradients(m, ds.batch(b, b + 4), NeuronMode::kSpiking, true);
    opt.step(0.0);
  }
  EXPECT_EQ(opt.steps(), 4u);
  EXPECT_EQ(snapshot(m), before);
}

TEST(Train, RelaxedSingleSampleLossDecreases) {
  Model m(tiny(), 4);
  const Dataset ds = synth_static(4, 1, 2, {3, 8, 8, 0.1});
  const Batch batch = ds.batch(0, 1);
  AdamW opt(m.parameters(), 0.9, 0.999, 1e-8, 0.0);
  double previous = std::numeric_limits<double>::infinity();
  for (int step = 0; step < 5; ++step) {
    opt.zero_grad();
    const double loss = loss_and_gradients(m, batch, NeuronMode::kRelaxed, false);
    EXPECT_LT(loss, previous) << "step " << step;
    previous = loss;
    opt.step(1e-3);
  }
}

TEST(Train, ZeroAlphaBlocksGradientThroughNeurons) {
  Model m(tiny(), 5);
  m.mutable_config().lif.alpha = 0;
  const Dataset ds = synth_static(4, 4, 2, {3, 8, 8, 0.1});
  for (auto& p : m.parameters()) p.tensor.zero_grad();
  loss_and_gradients(m, ds.batch(0, 4), NeuronMode::kSpiking, true);
  // Only tensors reaching the loss through the residual stream without a neuron keep gradients.
  const std::vector<std::string> open = {"tokenizer.units.0.", "blocks.0.attn.proj.", "blocks.0.mlp.fc2.", "head."};
  for (const auto& p : m.parameters()) {
    double norm = 0;
    if (p.tensor.has_grad()) {
      const Tensor g = p.tensor.grad();
      for (Real v : g.data()) norm += std::abs(double(v));
    }
    const bool residual = std::any_of(open.begin(), open.end(), [&](const std::string& s) { return p.name.rfind(s, 0) == 0; });
    const bool bias = p.name.size() > 5 && p.name.compare(p.name.size() - 5, 5, ".bias") == 0;
    if (!residual)
      EXPECT_EQ(norm, 0.0) << p.name;
    else if (bias)  // weights may see an all-zero input at init
      EXPECT_GT(norm, 0.0) << p.name;
  }
}

TEST(Train, NonFiniteLossAborts) {
  Model m(tiny(), 6);
  const Dataset ds = synth_static(4, 4, 2, {3, 8, 8, 0.1});
  // A NaN input pixel never fires a neuron, so poison a weight the logits read directly.
  for (auto& p : m.parameters())
    if (p.name == "head.fc.weight") p.tensor.mutable_data()[0] = std::numeric_limits<Real>::quiet_NaN();
  TrainConfig cfg;
  cfg.epochs = 1;
  cfg.batch_size = 4;
  EXPECT_THROW(train(m, ds, cfg), TrainingDiverged);
}

TEST(Train, DeterministicLogs) {
  const Dataset ds = synth_static(4, 32, 3, {3, 8, 8, 0.1});
  TrainConfig cfg;
  cfg.epochs = 3;
  cfg.batch_size = 8;
  cfg.lr = 2e-3;
  cfg.seed = 11;
  Model a(tiny(), 7), b(tiny(), 7);
  const TrainResult ra = train(a, ds, cfg), rb = train(b, ds, cfg);
  ASSERT_EQ(ra.log.size(), 3u);
  EXPECT_EQ(metrics_csv(ra.log), metrics_csv(rb.log));
  EXPECT_EQ(snapshot(a), snapshot(b));
  EXPECT_EQ(ra.log.back().step, 12u);
  const std::string csv = metrics_csv(ra.log);
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "epoch,step,loss,accuracy,lr");
}

TEST(Train, EarlyStopAndCallback) {
  const Dataset ds = synth_static(4, 4, 3, {3, 8, 8, 0.1});
  TrainConfig cfg;
  cfg.epochs = 5;
  cfg.batch_size = 4;
  cfg.stop_at_accuracy = 1e-9;
  Model m(tiny(), 8);
  std::size_t calls = 0;
  const TrainResult r = train(m, ds, cfg, [&](const EpochMetrics&) { ++calls; });
  EXPECT_EQ(calls, r.log.size());
  EXPECT_LT(r.log.size(), 5u);
}

TEST(Train, EvaluateKeepsLogits) {
  Model m(tiny(), 9);
  const Dataset ds = synth_static(4, 10, 3, {3, 8, 8, 0.1});
  const EvalResult r = evaluate(m, ds, 4, true);
  EXPECT_EQ(r.samples, 10u);
  ASSERT_EQ(r.logits.size(), 10u);
  EXPECT_EQ(r.logits[0].size(), 4u);
  EXPECT_GE(r.accuracy, 0.0);
  EXPECT_LE(r.accuracy, 1.0);
}

// Checkpoints

TEST(Checkpoint, RoundTripIsBitExact) {
  Model m(tiny(), 10);
  Rng rng(10);
  randomize_batch_norm(m, rng);
  const auto path = temp_file("model.spkf");
  save_checkpoint(m, path);
  Model back = load_checkpoint(path);
  const Tensor x = synth_static(4, 3, 1, {3, 8, 8, 0.1}).batch(0, 3).input;
  EXPECT_TRUE(bit_equal(m.forward(x), back.forward(x)));
  EXPECT_EQ(back.config().label(), m.config().label());
  EXPECT_EQ(back.config().timesteps, m.config().timesteps);
}

TEST(Checkpoint, FusedRoundTrip) {
  Model m(tiny(), 11);
  Rng rng(11);
  randomize_batch_norm(m, rng);
  m.fuse();
  const auto path = temp_file("fused.spkf");
  save_checkpoint(m, path);
  Model back = load_checkpoint(path);
  EXPECT_TRUE(back.fused());
  const Tensor x = synth_static(4, 2, 1, {3, 8, 8, 0.1}).batch(0, 2).input;
  EXPECT_TRUE(bit_equal(m.forward(x), back.forward(x)));
}

TEST(Checkpoint, StoresParamCountScalars) {
  Model m(ModelConfig::cifar(4, 384));
  const auto path = temp_file("cifar.spkf");
  save_checkpoint(m, path);
  std::size_t trainable = 0;
  for (const auto& e : read_checkpoint_entries(path))
    if (!is_meta_entry(e.name) && !is_buffer_entry(e.name)) trainable += e.values.size();
  EXPECT_EQ(trainable, m.param_count());
  EXPECT_EQ(trainable, expected_param_count(m.config()));
}

TEST(Checkpoint, RejectsCorruption) {
  Model m(tiny(), 12);
  const auto path = temp_file("corrupt.spkf");
  save_checkpoint(m, path);
  const auto good = read_bytes(path);

  auto bytes = good;
  bytes[0] = 'X';
  write_bytes(path, bytes);
  EXPECT_THROW(load_checkpoint(path), CheckpointError);

  bytes = good;
  bytes[4] = 2;  // version
  write_bytes(path, bytes);
  EXPECT_THROW(load_checkpoint(path), CheckpointError);

  bytes = good;
  bytes.resize(bytes.size() - 3);
  write_bytes(path, bytes);
  EXPECT_THROW(load_checkpoint(path), CheckpointError);

  bytes = good;
  bytes.push_back(0);
  write_bytes(path, bytes);
  EXPECT_THROW(load_checkpoint(path), CheckpointError);
}

TEST(Checkpoint, RejectsShapeMismatch) {
  Model m(tiny(), 13);
  const auto path = temp_file("shape.spkf");
  save_checkpoint(m, path);
  auto entries = read_checkpoint_entries(path);
  for (auto& e : entries)
    if (e.name == "head.fc.bias") {
      e.shape = {5};
      e.values.push_back(0.0f);
    }
  write_checkpoint_entries(path, entries);
  EXPECT_THROW(load_checkpoint(path), CheckpointError);
}

TEST(Checkpoint, RejectsMissingTensor) {
  Model m(tiny(), 14);
  const auto path = temp_file("missing.spkf");
  save_checkpoint(m, path);
  auto entries = read_checkpoint_entries(path);
  std::erase_if(entries, [](const CheckpointEntry& e) { return e.name == "head.fc.weight"; });
  write_checkpoint_entries(path, entries);
  EXPECT_THROW(load_checkpoint(path), CheckpointError);
}
