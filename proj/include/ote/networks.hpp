#pragma once

#include <cmath>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include "ote/errors.hpp"
#include "ote/layers.hpp"
#include "ote/rng.hpp"
#include "ote/tensor.hpp"

namespace ote {

// ---------------------------------------------------------------------------
// Generator

struct GeneratorSpec {
  int in_channels = 3;
  int base_channels = 16;
  int depth = 2;
  int residual_blocks = 3;
  bool eca_enabled = true;
  double eca_gamma = 2.0;
  double eca_beta = 1.0;
  double leaky_slope = 0.2;

  void validate() const {
    if (in_channels != 1 && in_channels != 3) throw InvalidArgument("GeneratorSpec: in_channels must be 1 or 3");
    if (depth < 1) throw InvalidArgument("GeneratorSpec: depth must be >= 1");
    if (base_channels < 4) throw InvalidArgument("GeneratorSpec: base_channels must be >= 4");
    if (residual_blocks < 0) throw InvalidArgument("GeneratorSpec: residual_blocks must be >= 0");
    if (!(eca_gamma > 0.0)) throw InvalidArgument("GeneratorSpec: eca_gamma must be positive");
  }

  /// Throws ShapeMismatch unless a c x h x w input fits this generator.
  void check_input(int c, int h, int w) const {
    const int m = 1 << depth;
    if (c != in_channels) throw ShapeMismatch("generator: input has " + std::to_string(c) + " channels, expected " +
                                              std::to_string(in_channels));
    if (h % m != 0 || w % m != 0)
      throw ShapeMismatch("generator: input side must be divisible by 2^depth = " + std::to_string(m));
  }

  std::string fingerprint() const {
    std::ostringstream os;
    os << "generator/v1 in=" << in_channels << " base=" << base_channels << " depth=" << depth
       << " res=" << residual_blocks << " eca=" << eca_enabled << " gamma=" << eca_gamma << " beta=" << eca_beta
       << " slope=" << leaky_slope;
    return os.str();
  }
};

/// Inputs are clamped to [eps, 1-eps] before the logit skip path.
inline constexpr double kLogitEps = 1e-6;

/// U-shaped generator. Encoder: a stem plus `depth` stride-2 stages. Bottleneck:
/// residual blocks whose branch is conv-act-conv followed by the ECA gate.
/// Decoder: nearest upsampling, conv, concatenation with the encoder features of
/// the same resolution, fusing conv. The head predicts a residual in logit space:
/// out = logistic(logit(x) + head(features)). The head is zero-initialized, so a
/// fresh generator is the identity map up to the input clamp.
template <class T>
class Generator {
 public:
  struct ResBlock {
    nn::Conv2d c1, c2;
    nn::EcaGate eca;
  };
  struct DecStage {
    nn::Conv2d up, fuse;
  };
  struct Trace {
    Tensor<T> input, logit;
    std::vector<Tensor<T>> pre, act;  // encoder: stem + stages
    struct Res {
      Tensor<T> in, pre1, act1, out2;
    };
    std::vector<Res> res;
    struct Dec {
      Tensor<T> in, up, pre_up, cat, pre_fuse;
    };
    std::vector<Dec> dec;
    Tensor<T> head_in, output;
  };

  Generator(const GeneratorSpec& spec, Rng& rng) : spec_(spec) { build(rng); }

  /// Rebuild around existing parameters (e.g. a loaded checkpoint).
  Generator(const GeneratorSpec& spec, ParameterSet<T> params) : spec_(spec) {
    Rng scratch(0);
    build(scratch);
    if (!params_.same_layout(params)) throw FingerprintMismatch("generator: parameter layout does not match spec");
    params_ = std::move(params);
  }

  const GeneratorSpec& spec() const noexcept { return spec_; }
  ParameterSet<T>& params() noexcept { return params_; }
  const ParameterSet<T>& params() const noexcept { return params_; }

  template <class U>
  Generator<U> cast() const {
    return Generator<U>(spec_, params_.template cast<U>());
  }

  /// Force every ECA gate to 1 without touching parameters.
  void set_gates_forced_open(bool forced) {
    for (auto& r : res_) r.eca.enabled = spec_.eca_enabled && !forced;
  }

  Tensor<T> forward(const Tensor<T>& x, Trace& t) const {
    spec_.check_input(x.c(), x.h(), x.w());
    const nn::LeakyRelu act{spec_.leaky_slope, false};
    t = Trace{};
    t.input = x;
    t.logit = x;
    const auto lo = static_cast<typename scalar_of<T>::type>(kLogitEps);
    for (auto& v : t.logit.vec()) {
      T c = v;
      if (c < T(lo)) c = T(lo);
      if (c > T(1 - lo)) c = T(1 - lo);
      v = log_(c / (T(1) - c));
    }

    Tensor<T> h = x;
    for (const auto& conv : enc_) {
      t.pre.push_back(conv.forward(params_, h));
      t.act.push_back(act.forward(t.pre.back()));
      h = t.act.back();
    }
    for (const auto& rb : res_) {
      typename Trace::Res r;
      r.in = h;
      r.pre1 = rb.c1.forward(params_, h);
      r.act1 = act.forward(r.pre1);
      r.out2 = rb.c2.forward(params_, r.act1);
      Tensor<T> gated = rb.eca.forward(params_, r.out2);
      nn::add_inplace(h, gated);
      t.res.push_back(std::move(r));
    }
    for (std::size_t i = 0; i < dec_.size(); ++i) {
      const auto& ds = dec_[i];
      typename Trace::Dec d;
      d.in = h;
      d.up = nn::Upsample2x{}.forward(h);
      d.pre_up = ds.up.forward(params_, d.up);
      const std::size_t skip = enc_.size() - 2 - i;
      d.cat = nn::concat_channels(act.forward(d.pre_up), t.act[skip]);
      d.pre_fuse = ds.fuse.forward(params_, d.cat);
      h = act.forward(d.pre_fuse);
      t.dec.push_back(std::move(d));
    }
    t.head_in = h;
    Tensor<T> r = head_.forward(params_, h);
    t.output = r;
    for (std::size_t i = 0; i < r.size(); ++i) t.output[i] = logistic(t.logit[i] + r[i]);
    return t.output;
  }

  Tensor<T> forward(const Tensor<T>& x) const {
    Trace t;
    return forward(x, t);
  }

  /// Accumulates parameter gradients (when grads is non-null); returns d/dx.
  Tensor<T> backward(const Trace& t, const Tensor<T>& gout, ParameterSet<T>* grads) const {
    const nn::LeakyRelu act{spec_.leaky_slope, false};
    const auto lo = static_cast<typename scalar_of<T>::type>(kLogitEps);
    Tensor<T> gr = gout;
    for (std::size_t i = 0; i < gr.size(); ++i) gr[i] = gout[i] * t.output[i] * (T(1) - t.output[i]);

    // d out / d x through the logit skip path
    Tensor<T> gx_skip = gr;
    for (std::size_t i = 0; i < gr.size(); ++i) {
      const T x = t.input[i];
      if (x < T(lo) || x > T(1 - lo))
        gx_skip[i] = T(0);
      else
        gx_skip[i] = gr[i] / (x * (T(1) - x));
    }

    Tensor<T> g = head_.backward(params_, t.head_in, gr, grads);
    std::vector<Tensor<T>> skip_grads;
    for (const auto& a : t.act) skip_grads.emplace_back(a.n(), a.c(), a.h(), a.w());

    for (std::size_t ii = dec_.size(); ii-- > 0;) {
      const auto& ds = dec_[ii];
      const auto& d = t.dec[ii];
      g = act.backward(d.pre_fuse, g);
      g = ds.fuse.backward(params_, d.cat, g, grads);
      Tensor<T> g_up, g_skip;
      nn::split_channels(g, ds.up.out_c, g_up, g_skip);
      const std::size_t skip = enc_.size() - 2 - ii;
      nn::add_inplace(skip_grads[skip], g_skip);
      g_up = act.backward(d.pre_up, g_up);
      g_up = ds.up.backward(params_, d.up, g_up, grads);
      g = nn::Upsample2x{}.backward(d.in, g_up);
    }
    for (std::size_t ri = res_.size(); ri-- > 0;) {
      const auto& rb = res_[ri];
      const auto& r = t.res[ri];
      Tensor<T> gb = rb.eca.backward(params_, r.out2, g, grads);
      gb = rb.c2.backward(params_, r.act1, gb, grads);
      gb = act.backward(r.pre1, gb);
      gb = rb.c1.backward(params_, r.in, gb, grads);
      nn::add_inplace(g, gb);
    }
    for (std::size_t j = enc_.size(); j-- > 0;) {
      if (j + 1 < enc_.size()) nn::add_inplace(g, skip_grads[j]);  // deepest stage feeds no skip
      g = act.backward(t.pre[j], g);
      const Tensor<T>& in = j == 0 ? t.input : t.act[j - 1];
      g = enc_[j].backward(params_, in, g, grads, true);
    }
    nn::add_inplace(g, gx_skip);
    return g;
  }

 private:
  static T log_(const T& x) {
    if constexpr (is_dual<T>::value)
      return {std::log(x.v), x.d / x.v};
    else
      return std::log(x);
  }

  void build(Rng& rng) {
    spec_.validate();
    params_ = ParameterSet<T>{};
    enc_.clear();
    res_.clear();
    dec_.clear();
    const int c0 = spec_.base_channels;
    enc_.push_back(nn::Conv2d::make(params_, "enc0", spec_.in_channels, c0, 3, 1, rng));
    for (int i = 1; i <= spec_.depth; ++i)
      enc_.push_back(nn::Conv2d::make(params_, "enc" + std::to_string(i), c0 << (i - 1), c0 << i, 3, 2, rng));
    const int cb = c0 << spec_.depth;
    for (int i = 0; i < spec_.residual_blocks; ++i) {
      const std::string n = "res" + std::to_string(i);
      ResBlock rb;
      rb.c1 = nn::Conv2d::make(params_, n + ".conv1", cb, cb, 3, 1, rng);
      rb.c2 = nn::Conv2d::make(params_, n + ".conv2", cb, cb, 3, 1, rng, 0.5);
      rb.eca = nn::EcaGate::make(params_, n + ".eca", cb, spec_.eca_gamma, spec_.eca_beta, rng, spec_.eca_enabled);
      res_.push_back(rb);
    }
    for (int i = spec_.depth; i >= 1; --i) {
      const std::string n = "dec" + std::to_string(i);
      DecStage ds;
      ds.up = nn::Conv2d::make(params_, n + ".up", c0 << i, c0 << (i - 1), 3, 1, rng);
      ds.fuse = nn::Conv2d::make(params_, n + ".fuse", 2 * (c0 << (i - 1)), c0 << (i - 1), 3, 1, rng);
      dec_.push_back(ds);
    }
    head_ = nn::Conv2d::make(params_, "head", c0, spec_.in_channels, 3, 1, rng);
    params_[head_.w].data.assign(params_[head_.w].data.size(), T(0));
    params_[head_.b].data.assign(params_[head_.b].data.size(), T(0));
  }

  GeneratorSpec spec_;
  ParameterSet<T> params_;
  std::vector<nn::Conv2d> enc_;
  std::vector<ResBlock> res_;
  std::vector<DecStage> dec_;
  nn::Conv2d head_;
};

// ---------------------------------------------------------------------------
// Sequential feed-forward networks (critic, toy MLPs, classifiers)

using SeqLayer = std::variant<nn::Conv2d, nn::LeakyRelu, nn::GlobalAvgPool, nn::Dense>;

template <class T>
class Sequential {
 public:
  struct Trace {
    std::vector<Tensor<T>> inputs;  // input of each layer
  };

  Sequential() = default;
  Sequential(std::vector<SeqLayer> layers, ParameterSet<T> params, std::string fingerprint)
      : layers_(std::move(layers)), params_(std::move(params)), fingerprint_(std::move(fingerprint)) {}

  const std::string& fingerprint() const noexcept { return fingerprint_; }
  ParameterSet<T>& params() noexcept { return params_; }
  const ParameterSet<T>& params() const noexcept { return params_; }
  const std::vector<SeqLayer>& layers() const noexcept { return layers_; }

  /// Same structure, parameters converted to U. With strict_kinks, a leaky
  /// activation hit exactly at zero with nonzero upstream gradient raises.
  template <class U>
  Sequential<U> cast(bool strict_kinks = false) const {
    auto layers = layers_;
    for (auto& l : layers)
      if (auto* a = std::get_if<nn::LeakyRelu>(&l)) a->strict = strict_kinks;
    return Sequential<U>(std::move(layers), params_.template cast<U>(), fingerprint_);
  }

  /// Replace parameters; layout must match.
  void load_params(ParameterSet<T> p) {
    if (!params_.same_layout(p)) throw FingerprintMismatch("network: parameter layout does not match");
    params_ = std::move(p);
  }

  Tensor<T> forward(const Tensor<T>& x, Trace& t) const {
    t.inputs.clear();
    Tensor<T> h = x;
    for (const auto& l : layers_) {
      t.inputs.push_back(h);
      h = std::visit(
          [&](const auto& layer) -> Tensor<T> {
            using L = std::decay_t<decltype(layer)>;
            if constexpr (std::is_same_v<L, nn::Conv2d> || std::is_same_v<L, nn::Dense>)
              return layer.forward(params_, h);
            else
              return layer.forward(h);
          },
          l);
    }
    return h;
  }

  Tensor<T> forward(const Tensor<T>& x) const {
    Trace t;
    return forward(x, t);
  }

  /// With strict set, leaky activations hit exactly at the kink raise NotDifferentiable.
  Tensor<T> backward(const Trace& t, const Tensor<T>& gout, ParameterSet<T>* grads, bool strict = false) const {
    Tensor<T> g = gout;
    for (std::size_t i = layers_.size(); i-- > 0;) {
      const Tensor<T>& in = t.inputs[i];
      g = std::visit(
          [&](const auto& layer) -> Tensor<T> {
            using L = std::decay_t<decltype(layer)>;
            if constexpr (std::is_same_v<L, nn::Conv2d>)
              return layer.backward(params_, in, g, grads, true);
            else if constexpr (std::is_same_v<L, nn::Dense>)
              return layer.backward(params_, in, g, grads);
            else if constexpr (std::is_same_v<L, nn::LeakyRelu>)
              return nn::LeakyRelu{layer.slope, layer.strict || strict}.backward(in, g);
            else
              return layer.backward(in, g);
          },
          layers_[i]);
    }
    return g;
  }

  /// Scalar per sample (the output must have one feature).
  std::vector<T> values(const Tensor<T>& x) const {
    const Tensor<T> y = forward(x);
    if (y.sample_size() != 1) throw ShapeMismatch("Sequential::values: output is not scalar");
    return y.vec();
  }

 private:
  std::vector<SeqLayer> layers_;
  ParameterSet<T> params_;
  std::string fingerprint_;
};

struct CriticSpec {
  int in_channels = 3;
  int base_channels = 16;
  int conv_layers = 3;
  double leaky_slope = 0.2;

  void validate() const {
    if (in_channels < 1) throw InvalidArgument("CriticSpec: in_channels must be >= 1");
    if (base_channels < 1) throw InvalidArgument("CriticSpec: base_channels must be >= 1");
    if (conv_layers < 2) throw InvalidArgument("CriticSpec: conv_layers must be >= 2");
  }
  std::string fingerprint() const {
    std::ostringstream os;
    os << "critic/v1 in=" << in_channels << " base=" << base_channels << " layers=" << conv_layers
       << " slope=" << leaky_slope;
    return os.str();
  }
};

/// Per-sample convolutional critic: stride-2 convs with leaky activations,
/// global average pooling, linear scalar head. No normalization layers, so
/// samples never interact.
template <class T>
Sequential<T> make_critic(const CriticSpec& spec, Rng& rng) {
  spec.validate();
  ParameterSet<T> p;
  std::vector<SeqLayer> layers;
  int c = spec.in_channels;
  for (int i = 0; i < spec.conv_layers; ++i) {
    const int out = spec.base_channels << i;
    layers.push_back(nn::Conv2d::make(p, "conv" + std::to_string(i), c, out, 3, 2, rng));
    layers.push_back(nn::LeakyRelu{spec.leaky_slope, false});
    c = out;
  }
  layers.push_back(nn::GlobalAvgPool{});
  layers.push_back(nn::Dense::make(p, "head", c, 1, rng));
  return Sequential<T>(std::move(layers), std::move(p), spec.fingerprint());
}

/// Multi-layer perceptron over flattened inputs.
struct MlpSpec {
  int in_features = 1;
  std::vector<int> hidden{32, 32};
  int out_features = 1;
  double leaky_slope = 0.2;
  bool zero_last = false;

  std::string fingerprint() const {
    std::ostringstream os;
    os << "mlp/v1 in=" << in_features << " hidden=";
    for (int h : hidden) os << h << ',';
    os << " out=" << out_features << " slope=" << leaky_slope;
    return os.str();
  }
};

template <class T>
Sequential<T> make_mlp(const MlpSpec& spec, Rng& rng) {
  ParameterSet<T> p;
  std::vector<SeqLayer> layers;
  int in = spec.in_features;
  for (std::size_t i = 0; i < spec.hidden.size(); ++i) {
    layers.push_back(nn::Dense::make(p, "fc" + std::to_string(i), in, spec.hidden[i], rng, std::sqrt(2.0)));
    layers.push_back(nn::LeakyRelu{spec.leaky_slope, false});
    in = spec.hidden[i];
  }
  auto last = nn::Dense::make(p, "out", in, spec.out_features, rng);
  if (spec.zero_last) {
    std::fill(p[last.w].data.begin(), p[last.w].data.end(), T(0));
    std::fill(p[last.b].data.begin(), p[last.b].data.end(), T(0));
  }
  layers.push_back(last);
  return Sequential<T>(std::move(layers), std::move(p), spec.fingerprint());
}

/// Generator for point clouds: x + mlp(x), the MLP's last layer zero-initialized.
template <class T>
class ResidualMlp {
 public:
  using Trace = typename Sequential<T>::Trace;

  ResidualMlp(MlpSpec spec, Rng& rng) {
    spec.zero_last = true;
    spec.out_features = spec.in_features;
    net_ = make_mlp<T>(spec, rng);
  }

  ParameterSet<T>& params() noexcept { return net_.params(); }
  const ParameterSet<T>& params() const noexcept { return net_.params(); }

  Tensor<T> forward(const Tensor<T>& x, Trace& t) const {
    Tensor<T> y = net_.forward(x, t);
    Tensor<T> out = x;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += y[i];
    return out;
  }
  Tensor<T> forward(const Tensor<T>& x) const {
    Trace t;
    return forward(x, t);
  }
  Tensor<T> backward(const Trace& t, const Tensor<T>& gout, ParameterSet<T>* grads) const {
    Tensor<T> g = net_.backward(t, gout, grads);
    nn::add_inplace(g, gout);
    return g;
  }

 private:
  Sequential<T> net_;
};

}  // namespace ote
