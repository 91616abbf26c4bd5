#pragma once

// Binary checkpoints: named tensors, quantizer parameters and per-layer
// controller state. Little-endian, versioned.
//
//   "QATCKPT\0" u32 version
//   u32 n_tensors     { str name, u8 dtype(4=f32, 8=f64), u32 ndim, u64 dims[], data }
//   u32 n_quantizers  { str name, u8 role, u8 discretization, u8 trainable, i32 bits,
//                       f64 alpha, beta, gamma, scale }
//   u32 n_controllers { str name, u8 rule, f64 talr, gain, momentum_m, tr_momentum,
//                       running_tr, i64 skipped }
// str = u32 length + bytes.

#include <array>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "qat/model.hpp"
#include "qat/scheduler.hpp"

namespace qat {

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct StoredTensor {
  Shape shape;
  std::vector<double> values;  // widened on load
  std::uint8_t dtype = 4;
};

struct StoredController {
  TrControllerState state;
  double tr_momentum = 0.99;
  double running_tr = 0.0;
};

struct Checkpoint {
  static constexpr std::array<char, 8> kMagic{'Q', 'A', 'T', 'C', 'K', 'P', 'T', '\0'};
  static constexpr std::uint32_t kVersion = 1;

  std::map<std::string, StoredTensor> tensors;
  std::map<std::string, QuantizerSpec> quantizers;
  std::map<std::string, StoredController> controllers;
};

namespace detail {

class Writer {
 public:
  explicit Writer(const std::filesystem::path& p) : out_(p, std::ios::binary) {
    if (!out_) throw CheckpointError("cannot open '" + p.string() + "' for writing");
  }
  template <typename V>
  void pod(V v) {
    out_.write(reinterpret_cast<const char*>(&v), sizeof(V));
  }
  void str(const std::string& s) {
    pod<std::uint32_t>(static_cast<std::uint32_t>(s.size()));
    out_.write(s.data(), static_cast<std::streamsize>(s.size()));
  }
  void bytes(const void* p, std::size_t n) { out_.write(static_cast<const char*>(p), static_cast<std::streamsize>(n)); }
  void finish(const std::filesystem::path& p) {
    out_.flush();
    if (!out_) throw CheckpointError("write to '" + p.string() + "' failed");
  }

 private:
  std::ofstream out_;
};

class Reader {
 public:
  explicit Reader(const std::filesystem::path& p) : path_(p.string()) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw CheckpointError("cannot open checkpoint '" + path_ + "'");
    buf_.assign(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
  }
  void need(std::size_t n, const char* what) {
    if (pos_ + n > buf_.size()) {
      throw CheckpointError("checkpoint '" + path_ + "' truncated at byte " + std::to_string(pos_) + " while reading " +
                            what);
    }
  }
  template <typename V>
  V pod(const char* what) {
    need(sizeof(V), what);
    V v;
    std::memcpy(&v, buf_.data() + pos_, sizeof(V));
    pos_ += sizeof(V);
    return v;
  }
  std::string str(const char* what) {
    const auto n = pod<std::uint32_t>(what);
    need(n, what);
    std::string s(buf_.data() + pos_, n);
    pos_ += n;
    return s;
  }
  void bytes(void* dst, std::size_t n, const char* what) {
    need(n, what);
    std::memcpy(dst, buf_.data() + pos_, n);
    pos_ += n;
  }
  std::size_t pos() const { return pos_; }
  std::size_t size() const { return buf_.size(); }
  const std::string& path() const { return path_; }

 private:
  std::string path_;
  std::vector<char> buf_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline void save_checkpoint(const Checkpoint& ck, const std::filesystem::path& path) {
  detail::Writer w(path);
  w.bytes(Checkpoint::kMagic.data(), Checkpoint::kMagic.size());
  w.pod<std::uint32_t>(Checkpoint::kVersion);
  w.pod<std::uint32_t>(static_cast<std::uint32_t>(ck.tensors.size()));
  for (const auto& [name, t] : ck.tensors) {
    w.str(name);
    w.pod<std::uint8_t>(t.dtype);
    w.pod<std::uint32_t>(static_cast<std::uint32_t>(t.shape.size()));
    for (auto d : t.shape) w.pod<std::uint64_t>(d);
    if (t.dtype == 4) {
      for (double v : t.values) w.pod<float>(static_cast<float>(v));
    } else {
      for (double v : t.values) w.pod<double>(v);
    }
  }
  w.pod<std::uint32_t>(static_cast<std::uint32_t>(ck.quantizers.size()));
  for (const auto& [name, q] : ck.quantizers) {
    w.str(name);
    w.pod<std::uint8_t>(static_cast<std::uint8_t>(q.role));
    w.pod<std::uint8_t>(static_cast<std::uint8_t>(q.discretization));
    w.pod<std::uint8_t>(q.scale_trainable ? 1 : 0);
    w.pod<std::int32_t>(q.bits);
    w.pod<double>(q.alpha);
    w.pod<double>(q.beta);
    w.pod<double>(q.gamma);
    w.pod<double>(q.scale);
  }
  w.pod<std::uint32_t>(static_cast<std::uint32_t>(ck.controllers.size()));
  for (const auto& [name, c] : ck.controllers) {
    w.str(name);
    w.pod<std::uint8_t>(static_cast<std::uint8_t>(c.state.rule));
    w.pod<double>(c.state.talr);
    w.pod<double>(c.state.gain);
    w.pod<double>(c.state.momentum_m);
    w.pod<double>(c.tr_momentum);
    w.pod<double>(c.running_tr);
    w.pod<std::int64_t>(c.state.skipped_updates);
  }
  w.finish(path);
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  detail::Reader r(path);
  std::array<char, 8> magic{};
  r.bytes(magic.data(), magic.size(), "magic");
  if (magic != Checkpoint::kMagic) throw CheckpointError("'" + path.string() + "' is not a checkpoint (bad magic)");
  const auto version = r.pod<std::uint32_t>("version");
  if (version != Checkpoint::kVersion) {
    throw CheckpointError("'" + path.string() + "': unsupported checkpoint version " + std::to_string(version));
  }
  Checkpoint ck;
  const auto nt = r.pod<std::uint32_t>("tensor count");
  for (std::uint32_t i = 0; i < nt; ++i) {
    auto name = r.str("tensor name");
    StoredTensor t;
    t.dtype = r.pod<std::uint8_t>("dtype");
    if (t.dtype != 4 && t.dtype != 8) {
      throw CheckpointError("tensor '" + name + "': unknown dtype " + std::to_string(t.dtype));
    }
    const auto nd = r.pod<std::uint32_t>("ndim");
    for (std::uint32_t d = 0; d < nd; ++d) t.shape.push_back(static_cast<std::size_t>(r.pod<std::uint64_t>("dims")));
    const auto n = shape_numel(t.shape);
    r.need(n * t.dtype, "tensor data");
    t.values.resize(n);
    for (auto& v : t.values) v = t.dtype == 4 ? static_cast<double>(r.pod<float>("data")) : r.pod<double>("data");
    ck.tensors.emplace(std::move(name), std::move(t));
  }
  const auto nq = r.pod<std::uint32_t>("quantizer count");
  for (std::uint32_t i = 0; i < nq; ++i) {
    auto name = r.str("quantizer name");
    QuantizerSpec q;
    q.role = static_cast<QuantRole>(r.pod<std::uint8_t>("role"));
    q.discretization = static_cast<Discretization>(r.pod<std::uint8_t>("discretization"));
    q.scale_trainable = r.pod<std::uint8_t>("trainable") != 0;
    q.bits = r.pod<std::int32_t>("bits");
    q.alpha = r.pod<double>("alpha");
    q.beta = r.pod<double>("beta");
    q.gamma = r.pod<double>("gamma");
    q.scale = r.pod<double>("scale");
    ck.quantizers.emplace(std::move(name), q);
  }
  const auto nc = r.pod<std::uint32_t>("controller count");
  for (std::uint32_t i = 0; i < nc; ++i) {
    auto name = r.str("controller name");
    StoredController c;
    c.state.layer_id = name;
    c.state.rule = static_cast<TalrRule>(r.pod<std::uint8_t>("rule"));
    c.state.talr = r.pod<double>("talr");
    c.state.gain = r.pod<double>("gain");
    c.state.momentum_m = r.pod<double>("momentum_m");
    c.tr_momentum = r.pod<double>("tr_momentum");
    c.running_tr = r.pod<double>("running_tr");
    c.state.skipped_updates = r.pod<std::int64_t>("skipped");
    ck.controllers.emplace(std::move(name), c);
  }
  if (r.pos() != r.size()) {
    throw CheckpointError("'" + path.string() + "': " + std::to_string(r.size() - r.pos()) + " trailing bytes");
  }
  return ck;
}

// Model parameters, BN buffers and quantizer specs into a checkpoint.
template <typename T>
Checkpoint snapshot_model(Model<T>& model) {
  Checkpoint ck;
  auto put = [&](const NamedParam<T>& p) {
    StoredTensor t;
    t.shape = p.tensor.shape();
    t.dtype = sizeof(T) == 8 ? 8 : 4;
    auto d = p.tensor.data();
    t.values.assign(d.begin(), d.end());
    ck.tensors[p.name] = std::move(t);
  };
  for (const auto& p : model.parameters()) put(p);
  for (const auto& b : model.buffers()) put(b);
  for (const auto& q : model.quantized_layers()) ck.quantizers[q.name + ".wq"] = q.weight_quantizer->current();
  return ck;
}

// Copies tensors by name. Every mismatch is collected and reported together;
// on error nothing is modified. Returns the names that were loaded.
template <typename T>
std::vector<std::string> load_model_tensors(Model<T>& model, const Checkpoint& ck, bool skip_scales = true) {
  std::vector<std::string> problems;
  std::vector<std::pair<NamedParam<T>, const StoredTensor*>> plan;
  auto consider = [&](const NamedParam<T>& p) {
    if (skip_scales && (p.kind == ParamKind::act_scale || p.kind == ParamKind::weight_scale)) return;
    auto it = ck.tensors.find(p.name);
    if (it == ck.tensors.end()) {
      problems.push_back(p.name + ": missing from checkpoint");
    } else if (it->second.shape != p.tensor.shape()) {
      problems.push_back(p.name + ": shape " + shape_str(it->second.shape) + " in checkpoint, model expects " +
                         shape_str(p.tensor.shape()));
    } else {
      plan.emplace_back(p, &it->second);
    }
  };
  for (const auto& p : model.parameters()) consider(p);
  for (const auto& b : model.buffers()) consider(b);
  if (!problems.empty()) {
    std::string msg = "checkpoint does not match model (" + std::to_string(problems.size()) + " layer(s)):";
    for (const auto& s : problems) msg += "\n  " + s;
    throw CheckpointError(msg);
  }
  std::vector<std::string> loaded;
  for (auto& [p, t] : plan) {
    auto d = p.tensor.data();
    for (std::size_t i = 0; i < d.size(); ++i) d[i] = static_cast<T>(t->values[i]);
    loaded.push_back(p.name);
  }
  return loaded;
}

}  // namespace qat
