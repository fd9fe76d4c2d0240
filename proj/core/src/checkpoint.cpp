#include "spikingformer/checkpoint.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>

SPKF_NAMESPACE_BEGIN

namespace {

void put_u32(std::ostream& out, std::uint32_t v) {
  const char b[4] = {char(v & 0xFF), char((v >> 8) & 0xFF), char((v >> 16) & 0xFF), char((v >> 24) & 0xFF)};
  out.write(b, 4);
}

class Reader {
 public:
  explicit Reader(const std::filesystem::path& path) : path_(path.string()), in_(path, std::ios::binary) {
    if (!in_) throw CheckpointError("checkpoint: cannot open " + path_);
  }

  void bytes(char* dst, std::size_t n) {
    in_.read(dst, std::streamsize(n));
    if (std::size_t(in_.gcount()) != n) throw CheckpointError("checkpoint: truncated file " + path_);
  }

  std::uint32_t u32() {
    unsigned char b[4];
    bytes(reinterpret_cast<char*>(b), 4);
    return std::uint32_t(b[0]) | std::uint32_t(b[1]) << 8 | std::uint32_t(b[2]) << 16 | std::uint32_t(b[3]) << 24;
  }

  std::uint8_t u8() {
    char c;
    bytes(&c, 1);
    return std::uint8_t(c);
  }

  bool at_end() { return in_.peek() == std::char_traits<char>::eof(); }

 private:
  std::string path_;
  std::ifstream in_;
};

constexpr std::uint32_t kMaxNameLength = 4096;
constexpr std::uint8_t kMaxRank = 8;

CheckpointEntry meta(const std::string& key, std::vector<float> values) {
  const std::size_t n = values.size();
  return {"meta." + key, {n}, std::move(values)};
}

CheckpointEntry meta(const std::string& key, double value) { return meta(key, std::vector<float>{float(value)}); }

CheckpointEntry from_tensor(const NamedTensor& t) {
  CheckpointEntry e{t.name, t.tensor.shape(), {}};
  e.values.reserve(t.tensor.numel());
  for (Real v : t.tensor.data()) e.values.push_back(float(v));
  return e;
}

class MetaTable {
 public:
  explicit MetaTable(const std::vector<CheckpointEntry>& entries) {
    for (const auto& e : entries)
      if (is_meta_entry(e.name)) table_[e.name.substr(5)] = &e;
  }

  const std::vector<float>& values(const std::string& key) const {
    auto it = table_.find(key);
    if (it == table_.end()) throw CheckpointError("checkpoint: missing meta." + key);
    return it->second->values;
  }

  double scalar(const std::string& key) const {
    const auto& v = values(key);
    if (v.size() != 1) throw CheckpointError("checkpoint: meta." + key + " must hold one value");
    return v[0];
  }

  std::size_t count(const std::string& key) const {
    const double v = scalar(key);
    if (!(v >= 0.0) || v != std::floor(v)) throw CheckpointError("checkpoint: meta." + key + " must be a count");
    return std::size_t(v);
  }

 private:
  std::map<std::string, const CheckpointEntry*> table_;
};

ModelConfig config_from_meta(const MetaTable& meta) {
  ModelConfig c;
  c.blocks = meta.count("blocks");
  c.dim = meta.count("dim");
  c.heads = meta.count("heads");
  c.timesteps = meta.count("timesteps");
  c.scale = Real(meta.scalar("scale"));
  c.mlp_ratio = meta.count("mlp_ratio");
  c.tokenizer.clear();
  for (float u : meta.values("tokenizer")) {
    if (u != 0.0f && u != 1.0f) throw CheckpointError("checkpoint: bad tokenizer unit in meta.tokenizer");
    c.tokenizer.push_back(u == 0.0f ? TokenizerUnit::kSpe : TokenizerUnit::kSped);
  }
  const std::size_t head = meta.count("head");
  if (head > 3) throw CheckpointError("checkpoint: bad meta.head");
  c.head = HeadVariant(head);
  const std::size_t residual = meta.count("residual");
  if (residual > 1) throw CheckpointError("checkpoint: bad meta.residual");
  c.residual = ResidualStyle(residual);
  c.in_channels = meta.count("in_channels");
  c.height = meta.count("height");
  c.width = meta.count("width");
  c.classes = meta.count("classes");
  c.lif.tau = Real(meta.scalar("lif.tau"));
  c.lif.v_threshold = Real(meta.scalar("lif.v_threshold"));
  c.lif.v_reset = Real(meta.scalar("lif.v_reset"));
  c.lif.alpha = Real(meta.scalar("lif.alpha"));
  c.lif.detach_reset = meta.scalar("lif.detach_reset") != 0.0;
  return c;
}

}  // namespace

bool is_meta_entry(const std::string& name) { return name.rfind("meta.", 0) == 0; }

bool is_buffer_entry(const std::string& name) {
  const auto ends_with = [&](const char* s) {
    const std::size_t n = std::strlen(s);
    return name.size() >= n && name.compare(name.size() - n, n, s) == 0;
  };
  return ends_with(".running_mean") || ends_with(".running_var");
}

void write_checkpoint_entries(const std::filesystem::path& path, const std::vector<CheckpointEntry>& entries) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw CheckpointError("checkpoint: cannot write " + path.string());
  out.write(kCheckpointMagic, 4);
  put_u32(out, kCheckpointVersion);
  put_u32(out, std::uint32_t(entries.size()));
  for (const auto& e : entries) {
    if (e.name.empty() || e.name.size() > kMaxNameLength) throw CheckpointError("checkpoint: bad tensor name");
    if (e.shape.size() > kMaxRank) throw CheckpointError("checkpoint: rank too large for " + e.name);
    if (shape_numel(e.shape) != e.values.size()) {
      throw CheckpointError("checkpoint: " + e.name + " holds " + std::to_string(e.values.size()) +
                            " values for shape " + shape_to_string(e.shape));
    }
    put_u32(out, std::uint32_t(e.name.size()));
    out.write(e.name.data(), std::streamsize(e.name.size()));
    out.put(char(e.shape.size()));
    for (std::size_t d : e.shape) put_u32(out, std::uint32_t(d));
    for (float v : e.values) put_u32(out, std::bit_cast<std::uint32_t>(v));
  }
  if (!out) throw CheckpointError("checkpoint: write failed for " + path.string());
}

std::vector<CheckpointEntry> read_checkpoint_entries(const std::filesystem::path& path) {
  Reader in(path);
  char magic[4];
  in.bytes(magic, 4);
  if (std::memcmp(magic, kCheckpointMagic, 4) != 0) throw CheckpointError("checkpoint: bad magic in " + path.string());
  const std::uint32_t version = in.u32();
  if (version != kCheckpointVersion) {
    throw CheckpointError("checkpoint: unsupported version " + std::to_string(version));
  }
  const std::uint32_t count = in.u32();
  std::vector<CheckpointEntry> entries;
  for (std::uint32_t i = 0; i < count; ++i) {
    CheckpointEntry e;
    const std::uint32_t len = in.u32();
    if (len == 0 || len > kMaxNameLength) throw CheckpointError("checkpoint: bad name length");
    e.name.resize(len);
    in.bytes(e.name.data(), len);
    const std::uint8_t rank = in.u8();
    if (rank > kMaxRank) throw CheckpointError("checkpoint: rank too large for " + e.name);
    std::uint64_t numel = 1;
    for (std::uint8_t r = 0; r < rank; ++r) {
      e.shape.push_back(in.u32());
      numel *= e.shape.back();
      if (numel > (std::uint64_t{1} << 32)) throw CheckpointError("checkpoint: tensor too large: " + e.name);
    }
    e.values.resize(numel);
    for (auto& v : e.values) v = std::bit_cast<float>(in.u32());
    entries.push_back(std::move(e));
  }
  if (!in.at_end()) throw CheckpointError("checkpoint: trailing bytes in " + path.string());
  return entries;
}

void save_checkpoint(const Model& model, const std::filesystem::path& path) {
  const ModelConfig& c = model.config();
  std::vector<CheckpointEntry> entries;
  for (const auto& p : model.parameters()) entries.push_back(from_tensor(p));
  for (const auto& b : model.buffers()) entries.push_back(from_tensor(b));
  entries.push_back(meta("blocks", double(c.blocks)));
  entries.push_back(meta("dim", double(c.dim)));
  entries.push_back(meta("heads", double(c.heads)));
  entries.push_back(meta("timesteps", double(c.timesteps)));
  entries.push_back(meta("scale", double(c.scale)));
  entries.push_back(meta("mlp_ratio", double(c.mlp_ratio)));
  std::vector<float> plan;
  for (TokenizerUnit u : c.tokenizer) plan.push_back(u == TokenizerUnit::kSpe ? 0.0f : 1.0f);
  entries.push_back(meta("tokenizer", plan));
  entries.push_back(meta("head", double(static_cast<int>(c.head))));
  entries.push_back(meta("residual", double(static_cast<int>(c.residual))));
  entries.push_back(meta("in_channels", double(c.in_channels)));
  entries.push_back(meta("height", double(c.height)));
  entries.push_back(meta("width", double(c.width)));
  entries.push_back(meta("classes", double(c.classes)));
  entries.push_back(meta("lif.tau", double(c.lif.tau)));
  entries.push_back(meta("lif.v_threshold", double(c.lif.v_threshold)));
  entries.push_back(meta("lif.v_reset", double(c.lif.v_reset)));
  entries.push_back(meta("lif.alpha", double(c.lif.alpha)));
  entries.push_back(meta("lif.detach_reset", c.lif.detach_reset ? 1.0 : 0.0));
  entries.push_back(meta("fused", model.fused() ? 1.0 : 0.0));
  write_checkpoint_entries(path, entries);
}

Model load_checkpoint(const std::filesystem::path& path) {
  const auto entries = read_checkpoint_entries(path);
  const MetaTable meta(entries);
  ModelConfig config;
  try {
    config = config_from_meta(meta);
    config.validate();
  } catch (const ConfigError& e) {
    throw CheckpointError(std::string("checkpoint: invalid model config: ") + e.what());
  }
  Model model(config, 0);
  if (meta.scalar("fused") != 0.0) model.fuse();

  std::map<std::string, Tensor> targets;
  for (auto& p : model.parameters()) targets.emplace(p.name, p.tensor);
  for (auto& b : model.buffers()) targets.emplace(b.name, b.tensor);

  std::size_t loaded = 0;
  for (const auto& e : entries) {
    if (is_meta_entry(e.name)) continue;
    auto it = targets.find(e.name);
    if (it == targets.end()) throw CheckpointError("checkpoint: unexpected tensor " + e.name);
    Tensor& t = it->second;
    if (t.shape() != e.shape) {
      throw CheckpointError("checkpoint: " + e.name + " has shape " + shape_to_string(e.shape) + ", model expects " +
                            shape_to_string(t.shape()));
    }
    auto dst = t.mutable_data();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = Real(e.values[i]);
    ++loaded;
  }
  if (loaded != targets.size()) {
    throw CheckpointError("checkpoint: " + std::to_string(targets.size() - loaded) + " model tensors missing");
  }
  return model;
}

SPKF_NAMESPACE_END
