#include "stemvq/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <map>

#include "stemvq/kv.hpp"

namespace stemvq {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {

constexpr char kMagic[4] = {'S', 'V', 'Q', '1'};

class Writer {
 public:
  void u32(std::uint32_t v) { raw(&v, 4); }
  void u64(std::uint64_t v) { raw(&v, 8); }
  void str(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    raw(s.data(), s.size());
  }
  void raw(const void* p, std::size_t n) {
    const auto* b = static_cast<const unsigned char*>(p);
    out.insert(out.end(), b, b + n);
  }
  std::vector<unsigned char> out;
};

class Reader {
 public:
  Reader(const std::vector<unsigned char>& bytes, const std::string& origin) : bytes_(bytes), origin_(origin) {}

  void take(void* dst, std::size_t n, const char* what) {
    if (n > bytes_.size() - pos_) {
      throw CheckpointTruncatedError(origin_ + ": truncated while reading " + what + " at byte " +
                                     std::to_string(pos_));
    }
    std::memcpy(dst, bytes_.data() + pos_, n);
    pos_ += n;
  }
  std::uint32_t u32(const char* what) {
    std::uint32_t v;
    take(&v, 4, what);
    return v;
  }
  std::uint64_t u64(const char* what) {
    std::uint64_t v;
    take(&v, 8, what);
    return v;
  }
  std::string str(const char* what) {
    const std::uint32_t n = u32(what);
    std::string s(n, '\0');
    take(s.data(), n, what);
    return s;
  }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  const std::vector<unsigned char>& bytes_;
  std::string origin_;
  std::size_t pos_ = 0;
};

}  // namespace

const CheckpointTensor* Checkpoint::find(const std::string& name) const {
  for (const auto& t : tensors) {
    if (t.name == name) return &t;
  }
  return nullptr;
}

std::vector<unsigned char> serialize_checkpoint(const Checkpoint& ckpt) {
  Writer w;
  w.raw(kMagic, 4);
  w.u32(ckpt.version);
  w.str(ckpt.stem);
  w.str(ckpt.role);
  w.u64(ckpt.step);
  const auto kv = ckpt.config.to_map();
  w.u32(static_cast<std::uint32_t>(kv.size()));
  for (const auto& [key, value] : kv) w.str(key + "=" + value);
  w.u32(static_cast<std::uint32_t>(ckpt.tensors.size()));
  for (const auto& t : ckpt.tensors) {
    if (shape_numel(t.shape) != t.data.size()) {
      throw PreconditionError("checkpoint tensor " + t.name + ": data does not match shape");
    }
    w.str(t.name);
    w.u32(static_cast<std::uint32_t>(t.shape.size()));
    for (auto d : t.shape) w.u32(static_cast<std::uint32_t>(d));
    w.raw(t.data.data(), t.data.size() * sizeof(float));
  }
  return std::move(w.out);
}

namespace {

// Expected tensor shapes for the architecture described by `config`.
std::map<std::string, Shape> architecture_shapes(const ModelConfig& config) {
  const auto model = build_vqvae<float>(config, 0);
  std::map<std::string, Shape> shapes;
  for (const auto& p : model.parameters()) shapes[p.name] = p.tensor.shape();
  return shapes;
}

}  // namespace

Checkpoint parse_checkpoint(const std::vector<unsigned char>& bytes, const std::string& origin) {
  if (bytes.size() < 4) throw CheckpointTruncatedError(origin + ": truncated before magic bytes");
  if (std::memcmp(bytes.data(), kMagic, 4) != 0) throw CheckpointMagicError(origin + ": bad magic, not an SVQ1 file");
  Reader r(bytes, origin);
  char magic[4];
  r.take(magic, 4, "magic");
  Checkpoint ckpt;
  ckpt.version = r.u32("version");
  if (ckpt.version != kCheckpointVersion) {
    throw CheckpointVersionError(origin + ": unsupported checkpoint version " + std::to_string(ckpt.version));
  }
  ckpt.stem = r.str("stem label");
  ckpt.role = r.str("role tag");
  if (ckpt.role != "SE" && ckpt.role != "ME" && ckpt.role != "FULL") {
    throw CheckpointError(origin + ": unknown role tag '" + ckpt.role + "'");
  }
  ckpt.step = r.u64("step counter");
  const std::uint32_t n_config = r.u32("config line count");
  std::map<std::string, std::string> kv;
  for (std::uint32_t i = 0; i < n_config; ++i) {
    const std::string line = r.str("config line");
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw CheckpointError(origin + ": malformed config line '" + line + "'");
    kv[line.substr(0, eq)] = line.substr(eq + 1);
  }
  try {
    ckpt.config = ModelConfig::from_map(kv);
    ckpt.config.validate();
  } catch (const PreconditionError& e) {
    throw CheckpointError(origin + ": " + e.what());
  }

  const std::uint32_t n_tensors = r.u32("tensor count");
  for (std::uint32_t i = 0; i < n_tensors; ++i) {
    CheckpointTensor t;
    t.name = r.str("tensor name");
    const std::uint32_t ndim = r.u32("tensor rank");
    if (ndim == 0 || ndim > 8) throw CheckpointError(origin + ": tensor " + t.name + " has rank " + std::to_string(ndim));
    std::size_t numel = 1;
    for (std::uint32_t d = 0; d < ndim; ++d) {
      t.shape.push_back(r.u32("tensor dims"));
      numel *= t.shape.back();
    }
    if (numel > bytes.size() / sizeof(float)) {
      throw CheckpointTruncatedError(origin + ": truncated in data of tensor " + t.name);
    }
    t.data.resize(numel);
    r.take(t.data.data(), numel * sizeof(float), "tensor data");
    ckpt.tensors.push_back(std::move(t));
  }
  if (!r.done()) throw CheckpointError(origin + ": trailing bytes after last tensor");

  const auto expected = architecture_shapes(ckpt.config);
  for (const auto& t : ckpt.tensors) {
    auto it = expected.find(t.name);
    if (it == expected.end()) throw CheckpointError(origin + ": unexpected tensor " + t.name);
    if (it->second != t.shape) {
      throw CheckpointError(origin + ": tensor " + t.name + " has shape " + shape_string(t.shape) +
                            " but the embedded config implies " + shape_string(it->second));
    }
  }
  return ckpt;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  const auto bytes = serialize_checkpoint(ckpt);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw DataError("cannot write checkpoint " + path.string());
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw DataError("write failed for checkpoint " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open checkpoint " + path.string());
  const std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return parse_checkpoint(bytes, path.string());
}

namespace {

Checkpoint from_parameters(const ParameterList<float>& params, const ModelConfig& config, const std::string& stem,
                           const std::string& role, std::uint64_t step) {
  Checkpoint c;
  c.stem = stem;
  c.role = role;
  c.step = step;
  c.config = config;
  for (const auto& p : params) {
    c.tensors.push_back({p.name, p.tensor.shape(), std::vector<float>(p.tensor.data().begin(), p.tensor.data().end())});
  }
  return c;
}

}  // namespace

Checkpoint make_checkpoint(const VqVae<float>& model, const std::string& stem, const std::string& role,
                           std::uint64_t step) {
  return from_parameters(model.parameters(), model.config, stem, role, step);
}

Checkpoint make_checkpoint(const Encoder<float>& encoder, const std::string& stem, std::uint64_t step) {
  return from_parameters(encoder.parameters(), encoder.config(), stem, "ME", step);
}

void load_parameters(const ParameterList<float>& params, const Checkpoint& ckpt) {
  for (const auto& p : params) {
    const auto* t = ckpt.find(p.name);
    if (!t) throw CheckpointError("checkpoint has no tensor " + p.name);
    if (t->shape != p.tensor.shape()) {
      throw CheckpointError("checkpoint tensor " + p.name + " has shape " + shape_string(t->shape) + ", model expects " +
                            shape_string(p.tensor.shape()));
    }
    auto dst = BasicTensor<float>(p.tensor).mutable_data();
    std::copy(t->data.begin(), t->data.end(), dst.begin());
  }
}

VqVae<float> restore_vqvae(const Checkpoint& ckpt, bool requires_grad) {
  auto model = build_vqvae<float>(ckpt.config, 0);
  load_parameters(model.parameters(), ckpt);
  for (auto& p : model.parameters()) BasicTensor<float>(p.tensor).set_requires_grad(requires_grad);
  model.role = ckpt.role == "ME" ? EncoderRole::mixture : EncoderRole::stem;
  return model;
}

Encoder<float> restore_encoder(const Checkpoint& ckpt, bool requires_grad) {
  auto encoder = build_encoder<float>(ckpt.config, 0);
  load_parameters(encoder.parameters(), ckpt);
  for (auto& p : encoder.parameters()) BasicTensor<float>(p.tensor).set_requires_grad(requires_grad);
  return encoder;
}

}  // namespace stemvq
