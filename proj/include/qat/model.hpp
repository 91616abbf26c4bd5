#pragma once

// Model zoo used by the training harness: a small MLP, a small CNN with
// batch normalization, and a ResNet-20-shaped network. First and last layers
// stay full precision; every other conv/linear layer quantizes its weights and
// its input activations.

#include <cmath>
#include <cstdint>
#include <memory>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "qat/ops.hpp"
#include "qat/quantizer.hpp"
#include "qat/tape.hpp"
#include "qat/tensor.hpp"

namespace qat {

enum class ModelKind { mlp, cnn_small, resnet20 };

inline ModelKind parse_model_kind(std::string_view s) {
  if (s == "mlp") return ModelKind::mlp;
  if (s == "cnn_small") return ModelKind::cnn_small;
  if (s == "resnet20") return ModelKind::resnet20;
  throw std::invalid_argument("unknown model '" + std::string(s) + "'");
}

inline const char* to_string(ModelKind k) {
  switch (k) {
    case ModelKind::mlp: return "mlp";
    case ModelKind::cnn_small: return "cnn_small";
    case ModelKind::resnet20: return "resnet20";
  }
  return "?";
}

// Bit-widths of 32 and above mean "not quantized".
inline constexpr int kFullPrecisionBits = 32;
inline bool is_quantized_bits(int bits) { return bits >= 1 && bits < kFullPrecisionBits; }

enum class ParamKind { quantized_weight, weight, bias, batchnorm, act_scale, weight_scale };

inline const char* to_string(ParamKind k) {
  switch (k) {
    case ParamKind::quantized_weight: return "quantized_weight";
    case ParamKind::weight: return "weight";
    case ParamKind::bias: return "bias";
    case ParamKind::batchnorm: return "batchnorm";
    case ParamKind::act_scale: return "act_scale";
    case ParamKind::weight_scale: return "weight_scale";
  }
  return "?";
}

template <typename T>
struct NamedParam {
  std::string name;
  Tensor<T> tensor;
  ParamKind kind;
};

template <typename T>
struct Quantizer {
  QuantizerSpec spec;
  Tensor<T> scale = Tensor<T>(Shape{1}, T{1});
  bool initialized = false;

  QuantizerSpec current() const {
    QuantizerSpec s = spec;
    s.scale = static_cast<double>(scale.item());
    s.scale_trainable = scale.requires_grad();
    return s;
  }

  void init_from(std::span<const T> values) {
    scale[0] = static_cast<T>(init_scale<T>(values, spec));
    initialized = true;
  }

  Tensor<T> apply(Tape<T>& tape, const Tensor<T>& x, std::vector<std::int32_t>* codes = nullptr) {
    if (!initialized) init_from(x.data());
    return quantize(tape, x, current(), scale, codes);
  }
};

template <typename T>
struct QuantizedLayer {
  std::string name;
  Tensor<T> latent;
  Quantizer<T>* weight_quantizer;
};

struct ModelConfig {
  ModelKind kind = ModelKind::cnn_small;
  std::size_t in_channels = 1;
  std::size_t height = 28;
  std::size_t width = 28;
  int num_classes = 10;
  int bits_w = 2;
  int bits_a = 2;
  double width_mult = 1.0;
  std::uint64_t seed = 1;
};

template <typename T>
class Model {
 public:
  virtual ~Model() = default;
  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;

  virtual Tensor<T> forward(Tape<T>& tape, const Tensor<T>& x, bool training) = 0;

  const ModelConfig& config() const { return cfg_; }
  const std::vector<NamedParam<T>>& parameters() const { return params_; }
  const std::vector<NamedParam<T>>& buffers() const { return buffers_; }
  std::vector<QuantizedLayer<T>>& quantized_layers() { return qlayers_; }
  const std::vector<QuantizedLayer<T>>& quantized_layers() const { return qlayers_; }
  std::vector<Quantizer<T>*>& activation_quantizers() { return act_quantizers_; }
  const std::vector<Quantizer<T>*>& activation_quantizers() const { return act_quantizers_; }

  // Number of conv/linear/batchnorm parameters (quantizer scales excluded).
  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& p : params_)
      if (p.kind != ParamKind::act_scale && p.kind != ParamKind::weight_scale) n += p.tensor.numel();
    return n;
  }

  void set_weight_scale_trainable(bool trainable) {
    for (auto& q : qlayers_) q.weight_quantizer->scale.set_requires_grad(trainable);
  }

  // Re-derives weight-quantizer scales from the current latent weights and
  // marks activation quantizers for lazy re-initialization.
  void reinit_quantizer_scales() {
    for (auto& q : qlayers_) q.weight_quantizer->init_from(q.latent.data());
    for (auto* a : act_quantizers_) a->initialized = false;
  }

  NamedParam<T>* find(std::string_view name) {
    for (auto& p : params_)
      if (p.name == name) return &p;
    for (auto& b : buffers_)
      if (b.name == name) return &b;
    return nullptr;
  }

 protected:
  explicit Model(ModelConfig cfg) : cfg_(cfg), rng_(cfg.seed) {}

  struct Conv {
    std::string name;
    Tensor<T> weight;
    std::size_t stride = 1, pad = 1;
    std::optional<Quantizer<T>> wq, aq;

    Tensor<T> forward(Tape<T>& tape, const Tensor<T>& x) {
      const Tensor<T> xin = aq ? aq->apply(tape, x) : x;
      const Tensor<T> w = wq ? wq->apply(tape, weight) : weight;
      return conv2d(tape, xin, w, stride, pad);
    }
  };

  struct Dense {
    std::string name;
    Tensor<T> weight;
    Tensor<T> bias;
    std::optional<Quantizer<T>> wq, aq;

    Tensor<T> forward(Tape<T>& tape, const Tensor<T>& x) {
      const Tensor<T> xin = aq ? aq->apply(tape, x) : x;
      const Tensor<T> w = wq ? wq->apply(tape, weight) : weight;
      return linear(tape, xin, w, bias);
    }
  };

  struct BatchNorm {
    std::string name;
    Tensor<T> gamma, beta, running_mean, running_var;

    Tensor<T> forward(Tape<T>& tape, const Tensor<T>& x, bool training) {
      return batch_norm(tape, x, gamma, beta, running_mean, running_var, training);
    }
  };

  Tensor<T> he_normal(Shape shape, std::size_t fan_in) {
    Tensor<T> w(std::move(shape), T{0}, true);
    std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / static_cast<double>(fan_in)));
    for (auto& v : w.data()) v = static_cast<T>(dist(rng_));
    return w;
  }

  void attach_quantizers(std::string_view name, Tensor<T>& weight, std::optional<Quantizer<T>>& wq,
                         std::optional<Quantizer<T>>& aq) {
    if (is_quantized_bits(cfg_.bits_w)) {
      wq.emplace();
      wq->spec = QuantizerSpec::make(cfg_.bits_w, QuantRole::weight);
      wq->scale = Tensor<T>(Shape{1}, T{1}, false);
      wq->init_from(weight.data());
    }
    if (is_quantized_bits(cfg_.bits_a)) {
      aq.emplace();
      aq->spec = QuantizerSpec::make(cfg_.bits_a, QuantRole::activation);
      aq->scale = Tensor<T>(Shape{1}, T{1}, true);
    }
    (void)name;
  }

  // Layers must not move after registration; concrete models hold them in
  // stable storage (members or unique_ptr).
  void add_conv(Conv& c, std::string name, std::size_t in, std::size_t out, std::size_t stride, bool quantized) {
    c.name = std::move(name);
    c.stride = stride;
    c.pad = 1;
    c.weight = he_normal(Shape{out, in, 3, 3}, in * 9);
    if (quantized) attach_quantizers(c.name, c.weight, c.wq, c.aq);
    register_weight(c.name, c.weight, c.wq, c.aq);
  }

  void add_dense(Dense& d, std::string name, std::size_t in, std::size_t out, bool bias, bool quantized) {
    d.name = std::move(name);
    d.weight = he_normal(Shape{out, in}, in);
    if (bias) {
      d.bias = Tensor<T>(Shape{out}, T{0}, true);
    }
    if (quantized) attach_quantizers(d.name, d.weight, d.wq, d.aq);
    register_weight(d.name, d.weight, d.wq, d.aq);
    if (bias) params_.push_back({d.name + ".bias", d.bias, ParamKind::bias});
  }

  void add_bn(BatchNorm& b, std::string name, std::size_t channels) {
    b.name = std::move(name);
    b.gamma = Tensor<T>(Shape{channels}, T{1}, true);
    b.beta = Tensor<T>(Shape{channels}, T{0}, true);
    b.running_mean = Tensor<T>(Shape{channels}, T{0});
    b.running_var = Tensor<T>(Shape{channels}, T{1});
    params_.push_back({b.name + ".gamma", b.gamma, ParamKind::batchnorm});
    params_.push_back({b.name + ".beta", b.beta, ParamKind::batchnorm});
    buffers_.push_back({b.name + ".running_mean", b.running_mean, ParamKind::batchnorm});
    buffers_.push_back({b.name + ".running_var", b.running_var, ParamKind::batchnorm});
  }

  ModelConfig cfg_;

 private:
  void register_weight(const std::string& name, Tensor<T>& weight, std::optional<Quantizer<T>>& wq,
                       std::optional<Quantizer<T>>& aq) {
    params_.push_back({name + ".weight", weight, wq ? ParamKind::quantized_weight : ParamKind::weight});
    if (wq) {
      params_.push_back({name + ".wq.scale", wq->scale, ParamKind::weight_scale});
      qlayers_.push_back({name, weight, &*wq});
    }
    if (aq) {
      params_.push_back({name + ".aq.scale", aq->scale, ParamKind::act_scale});
      act_quantizers_.push_back(&*aq);
    }
  }

  std::mt19937_64 rng_;
  std::vector<NamedParam<T>> params_;
  std::vector<NamedParam<T>> buffers_;
  std::vector<QuantizedLayer<T>> qlayers_;
  std::vector<Quantizer<T>*> act_quantizers_;
};

inline std::size_t scaled_width(std::size_t base, double mult) {
  return std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(static_cast<double>(base) * mult)));
}

template <typename T>
class Mlp final : public Model<T> {
  using Base = Model<T>;

 public:
  explicit Mlp(const ModelConfig& cfg) : Base(cfg) {
    const std::size_t in = cfg.in_channels * cfg.height * cfg.width;
    const std::size_t h = scaled_width(256, cfg.width_mult);
    this->add_dense(fc1_, "fc1", in, h, false, false);
    this->add_bn(bn1_, "bn1", h);
    this->add_dense(fc2_, "fc2", h, h, false, true);
    this->add_bn(bn2_, "bn2", h);
    this->add_dense(fc3_, "fc3", h, h, false, true);
    this->add_bn(bn3_, "bn3", h);
    this->add_dense(fc4_, "fc4", h, static_cast<std::size_t>(cfg.num_classes), true, false);
  }

  Tensor<T> forward(Tape<T>& tape, const Tensor<T>& x, bool training) override {
    auto h = reshape(tape, x, Shape{x.dim(0), x.numel() / x.dim(0)});
    h = relu(tape, bn1_.forward(tape, fc1_.forward(tape, h), training));
    h = relu(tape, bn2_.forward(tape, fc2_.forward(tape, h), training));
    h = relu(tape, bn3_.forward(tape, fc3_.forward(tape, h), training));
    return fc4_.forward(tape, h);
  }

 private:
  typename Base::Dense fc1_, fc2_, fc3_, fc4_;
  typename Base::BatchNorm bn1_, bn2_, bn3_;
};

template <typename T>
class CnnSmall final : public Model<T> {
  using Base = Model<T>;

 public:
  explicit CnnSmall(const ModelConfig& cfg) : Base(cfg) {
    const std::size_t c1 = scaled_width(16, cfg.width_mult);
    const std::size_t c2 = scaled_width(32, cfg.width_mult);
    const std::size_t c3 = scaled_width(64, cfg.width_mult);
    this->add_conv(conv1_, "conv1", cfg.in_channels, c1, 1, false);
    this->add_bn(bn1_, "bn1", c1);
    this->add_conv(conv2_, "conv2", c1, c2, 2, true);
    this->add_bn(bn2_, "bn2", c2);
    this->add_conv(conv3_, "conv3", c2, c2, 1, true);
    this->add_bn(bn3_, "bn3", c2);
    this->add_conv(conv4_, "conv4", c2, c3, 2, true);
    this->add_bn(bn4_, "bn4", c3);
    this->add_dense(fc_, "fc", c3, static_cast<std::size_t>(cfg.num_classes), true, false);
  }

  Tensor<T> forward(Tape<T>& tape, const Tensor<T>& x, bool training) override {
    auto h = relu(tape, bn1_.forward(tape, conv1_.forward(tape, x), training));
    h = relu(tape, bn2_.forward(tape, conv2_.forward(tape, h), training));
    h = relu(tape, bn3_.forward(tape, conv3_.forward(tape, h), training));
    h = relu(tape, bn4_.forward(tape, conv4_.forward(tape, h), training));
    return fc_.forward(tape, global_avg_pool(tape, h));
  }

 private:
  typename Base::Conv conv1_, conv2_, conv3_, conv4_;
  typename Base::BatchNorm bn1_, bn2_, bn3_, bn4_;
  typename Base::Dense fc_;
};

// Three stages of three basic blocks (16/32/64 channels); downsampling
// blocks use the strided, zero-padded identity shortcut.
template <typename T>
class ResNet20 final : public Model<T> {
  using Base = Model<T>;

  struct Block {
    typename Base::Conv conv_a, conv_b;
    typename Base::BatchNorm bn_a, bn_b;
    std::size_t stride = 1, out_channels = 0;
  };

 public:
  explicit ResNet20(const ModelConfig& cfg) : Base(cfg) {
    const std::size_t widths[3] = {scaled_width(16, cfg.width_mult), scaled_width(32, cfg.width_mult),
                                   scaled_width(64, cfg.width_mult)};
    this->add_conv(stem_, "conv1", cfg.in_channels, widths[0], 1, false);
    this->add_bn(stem_bn_, "bn1", widths[0]);
    std::size_t in = widths[0];
    for (int s = 0; s < 3; ++s) {
      for (int b = 0; b < 3; ++b) {
        auto blk = std::make_unique<Block>();
        const std::size_t out = widths[s];
        blk->stride = (s > 0 && b == 0) ? 2 : 1;
        blk->out_channels = out;
        const std::string prefix = "layer" + std::to_string(s + 1) + "." + std::to_string(b);
        this->add_conv(blk->conv_a, prefix + ".conv1", in, out, blk->stride, true);
        this->add_bn(blk->bn_a, prefix + ".bn1", out);
        this->add_conv(blk->conv_b, prefix + ".conv2", out, out, 1, true);
        this->add_bn(blk->bn_b, prefix + ".bn2", out);
        blocks_.push_back(std::move(blk));
        in = out;
      }
    }
    this->add_dense(fc_, "fc", in, static_cast<std::size_t>(cfg.num_classes), true, false);
  }

  Tensor<T> forward(Tape<T>& tape, const Tensor<T>& x, bool training) override {
    auto h = relu(tape, stem_bn_.forward(tape, stem_.forward(tape, x), training));
    for (auto& blk : blocks_) {
      auto r = relu(tape, blk->bn_a.forward(tape, blk->conv_a.forward(tape, h), training));
      r = blk->bn_b.forward(tape, blk->conv_b.forward(tape, r), training);
      const bool reshape_needed = blk->stride != 1 || h.dim(1) != blk->out_channels;
      const auto shortcut = reshape_needed ? shortcut_pad(tape, h, blk->stride, blk->out_channels) : h;
      h = relu(tape, add(tape, r, shortcut));
    }
    return fc_.forward(tape, global_avg_pool(tape, h));
  }

 private:
  typename Base::Conv stem_;
  typename Base::BatchNorm stem_bn_;
  std::vector<std::unique_ptr<Block>> blocks_;
  typename Base::Dense fc_;
};

template <typename T>
std::unique_ptr<Model<T>> make_model(const ModelConfig& cfg) {
  switch (cfg.kind) {
    case ModelKind::mlp: return std::make_unique<Mlp<T>>(cfg);
    case ModelKind::cnn_small: return std::make_unique<CnnSmall<T>>(cfg);
    case ModelKind::resnet20: return std::make_unique<ResNet20<T>>(cfg);
  }
  throw std::invalid_argument("make_model: unknown kind");
}

}  // namespace qat
