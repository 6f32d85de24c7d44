#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "ote/errors.hpp"
#include "ote/rng.hpp"
#include "ote/tensor.hpp"

// Differentiable building blocks. Each layer is a small descriptor holding
// indices into a ParameterSet; forward/backward are templates over the scalar
// type so one layer works in float (training), double (gradient checks) and
// Dual (gradient-penalty second derivatives).
//
// backward() receives the forward input and the output gradient, accumulates
// parameter gradients into `grads` (when non-null) and returns the input
// gradient.

namespace ote::nn {

template <class T>
void init_normal(std::vector<T>& v, double stddev, Rng& rng) {
  for (auto& x : v) x = T(static_cast<typename scalar_of<T>::type>(rng.normal() * stddev));
}
template <class T>
void init_uniform(std::vector<T>& v, double bound, Rng& rng) {
  for (auto& x : v) x = T(static_cast<typename scalar_of<T>::type>(rng.uniform(-bound, bound)));
}

// ---------------------------------------------------------------------------

struct Conv2d {
  int in_c = 0, out_c = 0, k = 3, stride = 1, pad = 1;
  std::size_t w = 0, b = 0;

  template <class T>
  static Conv2d make(ParameterSet<T>& p, const std::string& name, int in_c, int out_c, int k, int stride, Rng& rng,
                     double gain = std::sqrt(2.0)) {
    Conv2d c{in_c, out_c, k, stride, k / 2, 0, 0};
    c.w = p.add(name + ".weight", {out_c, in_c, k, k});
    c.b = p.add(name + ".bias", {out_c});
    const double fan_in = static_cast<double>(in_c) * k * k;
    init_normal(p[c.w].data, gain / std::sqrt(fan_in), rng);
    init_uniform(p[c.b].data, 1.0 / std::sqrt(fan_in), rng);
    return c;
  }

  int out_size(int s) const { return (s + 2 * pad - k) / stride + 1; }
  int patch() const { return in_c * k * k; }

  template <class T>
  void im2col(const T* x, int h, int wd, std::vector<T>& cols) const {
    const int oh = out_size(h), ow = out_size(wd);
    cols.assign(static_cast<std::size_t>(patch()) * oh * ow, T(0));
    for (int ci = 0; ci < in_c; ++ci)
      for (int ky = 0; ky < k; ++ky)
        for (int kx = 0; kx < k; ++kx) {
          T* row = cols.data() + static_cast<std::size_t>((ci * k + ky) * k + kx) * oh * ow;
          for (int oy = 0; oy < oh; ++oy) {
            const int iy = oy * stride + ky - pad;
            if (iy < 0 || iy >= h) continue;
            const T* src = x + (static_cast<std::size_t>(ci) * h + iy) * wd;
            for (int ox = 0; ox < ow; ++ox) {
              const int ix = ox * stride + kx - pad;
              if (ix >= 0 && ix < wd) row[oy * ow + ox] = src[ix];
            }
          }
        }
  }

  template <class T>
  void col2im_add(const std::vector<T>& cols, int h, int wd, T* gx) const {
    const int oh = out_size(h), ow = out_size(wd);
    for (int ci = 0; ci < in_c; ++ci)
      for (int ky = 0; ky < k; ++ky)
        for (int kx = 0; kx < k; ++kx) {
          const T* row = cols.data() + static_cast<std::size_t>((ci * k + ky) * k + kx) * oh * ow;
          for (int oy = 0; oy < oh; ++oy) {
            const int iy = oy * stride + ky - pad;
            if (iy < 0 || iy >= h) continue;
            T* dst = gx + (static_cast<std::size_t>(ci) * h + iy) * wd;
            for (int ox = 0; ox < ow; ++ox) {
              const int ix = ox * stride + kx - pad;
              if (ix >= 0 && ix < wd) dst[ix] += row[oy * ow + ox];
            }
          }
        }
  }

  template <class T>
  Tensor<T> forward(const ParameterSet<T>& p, const Tensor<T>& x) const {
    if (x.c() != in_c) throw ShapeMismatch("Conv2d: input channel count mismatch");
    const int oh = out_size(x.h()), ow = out_size(x.w());
    Tensor<T> y(x.n(), out_c, oh, ow);
    std::vector<T> cols;
    const auto& W = p[w].data;
    const auto& B = p[b].data;
    for (int i = 0; i < x.n(); ++i) {
      im2col(x.sample(i), x.h(), x.w(), cols);
      T* ys = y.sample(i);
      for (int o = 0; o < out_c; ++o) std::fill(ys + o * oh * ow, ys + (o + 1) * oh * ow, B[o]);
      gemm(false, false, out_c, oh * ow, patch(), W.data(), cols.data(), ys, true);
    }
    return y;
  }

  template <class T>
  Tensor<T> backward(const ParameterSet<T>& p, const Tensor<T>& x, const Tensor<T>& gy, ParameterSet<T>* grads,
                     bool need_input_grad = true) const {
    const int oh = out_size(x.h()), ow = out_size(x.w());
    Tensor<T> gx(x.n(), x.c(), x.h(), x.w());
    std::vector<T> cols, gcols(static_cast<std::size_t>(patch()) * oh * ow);
    const auto& W = p[w].data;
    for (int i = 0; i < x.n(); ++i) {
      const T* g = gy.sample(i);
      if (grads) {
        im2col(x.sample(i), x.h(), x.w(), cols);
        gemm(false, true, out_c, patch(), oh * ow, g, cols.data(), (*grads)[w].data.data(), true);
        auto& gb = (*grads)[b].data;
        for (int o = 0; o < out_c; ++o) {
          T acc(0);
          for (int j = 0; j < oh * ow; ++j) acc += g[o * oh * ow + j];
          gb[o] += acc;
        }
      }
      if (need_input_grad) {
        gemm(true, false, patch(), oh * ow, out_c, W.data(), g, gcols.data(), false);
        col2im_add(gcols, x.h(), x.w(), gx.sample(i));
      }
    }
    return gx;
  }
};

// ---------------------------------------------------------------------------

/// max(x, slope * x). With strict set, a pre-activation exactly at the kink
/// that receives a nonzero gradient raises NotDifferentiable.
struct LeakyRelu {
  double slope = 0.2;
  bool strict = false;

  template <class T>
  Tensor<T> forward(const Tensor<T>& x) const {
    Tensor<T> y = x;
    const T s(static_cast<typename scalar_of<T>::type>(slope));
    for (auto& v : y.vec())
      if (!(v > T(0))) v = v * s;
    return y;
  }

  template <class T>
  Tensor<T> backward(const Tensor<T>& x, const Tensor<T>& gy) const {
    Tensor<T> gx = gy;
    const T s(static_cast<typename scalar_of<T>::type>(slope));
    for (std::size_t i = 0; i < gx.size(); ++i) {
      const auto xv = value_of(x[i]);
      if (strict && xv == 0 && value_of(gy[i]) != 0 && slope != 1.0)
        throw NotDifferentiable("leaky activation evaluated exactly at its kink with nonzero upstream gradient (element " +
                                std::to_string(i) + " of a " + std::to_string(x.n()) + "x" + std::to_string(x.c()) +
                                "x" + std::to_string(x.h()) + "x" + std::to_string(x.w()) + " tensor)");
      if (!(xv > 0)) gx[i] = gx[i] * s;
    }
    return gx;
  }
};

// ---------------------------------------------------------------------------

struct Upsample2x {
  template <class T>
  Tensor<T> forward(const Tensor<T>& x) const {
    Tensor<T> y(x.n(), x.c(), x.h() * 2, x.w() * 2);
    for (int i = 0; i < x.n(); ++i)
      for (int c = 0; c < x.c(); ++c)
        for (int yy = 0; yy < y.h(); ++yy)
          for (int xx = 0; xx < y.w(); ++xx) y.at(i, c, yy, xx) = x.at(i, c, yy / 2, xx / 2);
    return y;
  }
  template <class T>
  Tensor<T> backward(const Tensor<T>& x, const Tensor<T>& gy) const {
    Tensor<T> gx(x.n(), x.c(), x.h(), x.w());
    for (int i = 0; i < x.n(); ++i)
      for (int c = 0; c < x.c(); ++c)
        for (int yy = 0; yy < gy.h(); ++yy)
          for (int xx = 0; xx < gy.w(); ++xx) gx.at(i, c, yy / 2, xx / 2) += gy.at(i, c, yy, xx);
    return gx;
  }
};

template <class T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.n() != b.n() || a.h() != b.h() || a.w() != b.w()) throw ShapeMismatch("concat_channels: shape mismatch");
  Tensor<T> y(a.n(), a.c() + b.c(), a.h(), a.w());
  for (int i = 0; i < a.n(); ++i) {
    std::copy(a.sample(i), a.sample(i) + a.sample_size(), y.sample(i));
    std::copy(b.sample(i), b.sample(i) + b.sample_size(), y.sample(i) + a.sample_size());
  }
  return y;
}

template <class T>
void split_channels(const Tensor<T>& g, int ca, Tensor<T>& ga, Tensor<T>& gb) {
  ga = Tensor<T>(g.n(), ca, g.h(), g.w());
  gb = Tensor<T>(g.n(), g.c() - ca, g.h(), g.w());
  for (int i = 0; i < g.n(); ++i) {
    std::copy(g.sample(i), g.sample(i) + ga.sample_size(), ga.sample(i));
    std::copy(g.sample(i) + ga.sample_size(), g.sample(i) + g.sample_size(), gb.sample(i));
  }
}

template <class T>
void add_inplace(Tensor<T>& a, const Tensor<T>& b) {
  if (!a.same_shape(b)) throw ShapeMismatch("add_inplace: shape mismatch");
  for (std::size_t i = 0; i < a.size(); ++i) a[i] += b[i];
}

// ---------------------------------------------------------------------------

struct GlobalAvgPool {
  template <class T>
  Tensor<T> forward(const Tensor<T>& x) const {
    Tensor<T> y(x.n(), x.c(), 1, 1);
    const T inv(static_cast<typename scalar_of<T>::type>(1.0 / static_cast<double>(x.plane_size())));
    for (int i = 0; i < x.n(); ++i)
      for (int c = 0; c < x.c(); ++c) {
        T acc(0);
        const T* p = x.sample(i) + c * x.plane_size();
        for (std::size_t j = 0; j < x.plane_size(); ++j) acc += p[j];
        y.at(i, c, 0, 0) = acc * inv;
      }
    return y;
  }
  template <class T>
  Tensor<T> backward(const Tensor<T>& x, const Tensor<T>& gy) const {
    Tensor<T> gx(x.n(), x.c(), x.h(), x.w());
    const T inv(static_cast<typename scalar_of<T>::type>(1.0 / static_cast<double>(x.plane_size())));
    for (int i = 0; i < x.n(); ++i)
      for (int c = 0; c < x.c(); ++c) {
        const T g = gy.at(i, c, 0, 0) * inv;
        T* p = gx.sample(i) + c * x.plane_size();
        for (std::size_t j = 0; j < x.plane_size(); ++j) p[j] = g;
      }
    return gx;
  }
};

/// Fully connected layer over each sample's flattened features; output is (n, out, 1, 1).
struct Dense {
  int in = 0, out = 0;
  std::size_t w = 0, b = 0;

  template <class T>
  static Dense make(ParameterSet<T>& p, const std::string& name, int in, int out, Rng& rng, double gain = 1.0) {
    Dense d{in, out, 0, 0};
    d.w = p.add(name + ".weight", {out, in});
    d.b = p.add(name + ".bias", {out});
    init_normal(p[d.w].data, gain / std::sqrt(static_cast<double>(in)), rng);
    init_uniform(p[d.b].data, 1.0 / std::sqrt(static_cast<double>(in)), rng);
    return d;
  }

  template <class T>
  Tensor<T> forward(const ParameterSet<T>& p, const Tensor<T>& x) const {
    if (static_cast<int>(x.sample_size()) != in) throw ShapeMismatch("Dense: input feature count mismatch");
    Tensor<T> y(x.n(), out, 1, 1);
    for (int i = 0; i < x.n(); ++i) std::copy(p[b].data.begin(), p[b].data.end(), y.sample(i));
    gemm(false, true, x.n(), out, in, x.data(), p[w].data.data(), y.data(), true);
    return y;
  }

  template <class T>
  Tensor<T> backward(const ParameterSet<T>& p, const Tensor<T>& x, const Tensor<T>& gy, ParameterSet<T>* grads) const {
    if (grads) {
      gemm(true, false, out, in, x.n(), gy.data(), x.data(), (*grads)[w].data.data(), true);
      auto& gb = (*grads)[b].data;
      for (int i = 0; i < x.n(); ++i)
        for (int o = 0; o < out; ++o) gb[o] += gy.sample(i)[o];
    }
    Tensor<T> gx(x.n(), x.c(), x.h(), x.w());
    gemm(false, false, x.n(), in, out, gy.data(), p[w].data.data(), gx.data(), false);
    return gx;
  }
};

// ---------------------------------------------------------------------------

/// Kernel size of the channel-attention 1D convolution: t = |(log2 C + beta) / gamma|,
/// truncated, bumped to the next odd value when even.
inline int eca_kernel_size(int channels, double gamma = 2.0, double beta = 1.0) {
  const double t = std::fabs((std::log2(static_cast<double>(channels)) + beta) / gamma);
  int k = static_cast<int>(t);
  if (k % 2 == 0) ++k;
  return std::max(k, 1);
}

/// Efficient channel attention: global average pool, 1D convolution across
/// channels, logistic gate, channelwise rescale. The channel axis is padded by
/// replicating the end channels, so a channel-constant descriptor gives equal gates.
struct EcaGate {
  int channels = 0, k = 1;
  std::size_t w = 0, b = 0;
  bool enabled = true;

  template <class T>
  static EcaGate make(ParameterSet<T>& p, const std::string& name, int channels, double gamma, double beta, Rng& rng,
                      bool enabled = true) {
    EcaGate e{channels, eca_kernel_size(channels, gamma, beta), 0, 0, enabled};
    e.w = p.add(name + ".weight", {e.k});
    e.b = p.add(name + ".bias", {1});
    init_uniform(p[e.w].data, 1.0 / std::sqrt(static_cast<double>(e.k)), rng);
    return e;
  }

  int tap(int c, int j) const { return std::clamp(c + j - k / 2, 0, channels - 1); }

  template <class T>
  std::vector<T> pooled(const Tensor<T>& x) const {
    std::vector<T> d(static_cast<std::size_t>(x.n()) * channels, T(0));
    const T inv(static_cast<typename scalar_of<T>::type>(1.0 / static_cast<double>(x.plane_size())));
    for (int i = 0; i < x.n(); ++i)
      for (int c = 0; c < channels; ++c) {
        T acc(0);
        const T* p = x.sample(i) + c * x.plane_size();
        for (std::size_t j = 0; j < x.plane_size(); ++j) acc += p[j];
        d[static_cast<std::size_t>(i) * channels + c] = acc * inv;
      }
    return d;
  }

  /// Gate values (n x channels) for input x.
  template <class T>
  std::vector<T> gates(const ParameterSet<T>& p, const Tensor<T>& x) const {
    std::vector<T> g(static_cast<std::size_t>(x.n()) * channels, T(1));
    if (!enabled) return g;
    const auto d = pooled(x);
    const auto& W = p[w].data;
    for (int i = 0; i < x.n(); ++i)
      for (int c = 0; c < channels; ++c) {
        T z = p[b].data[0];
        for (int j = 0; j < k; ++j) z += W[j] * d[static_cast<std::size_t>(i) * channels + tap(c, j)];
        g[static_cast<std::size_t>(i) * channels + c] = logistic(z);
      }
    return g;
  }

  template <class T>
  Tensor<T> forward(const ParameterSet<T>& p, const Tensor<T>& x) const {
    if (x.c() != channels) throw ShapeMismatch("EcaGate: channel count mismatch");
    Tensor<T> y = x;
    if (!enabled) return y;
    const auto g = gates(p, x);
    for (int i = 0; i < x.n(); ++i)
      for (int c = 0; c < channels; ++c) {
        T* q = y.sample(i) + c * x.plane_size();
        const T gc = g[static_cast<std::size_t>(i) * channels + c];
        for (std::size_t j = 0; j < x.plane_size(); ++j) q[j] *= gc;
      }
    return y;
  }

  template <class T>
  Tensor<T> backward(const ParameterSet<T>& p, const Tensor<T>& x, const Tensor<T>& gy, ParameterSet<T>* grads) const {
    if (!enabled) return gy;
    const auto g = gates(p, x);
    const auto d = pooled(x);
    const auto& W = p[w].data;
    const std::size_t hw = x.plane_size();
    const T inv(static_cast<typename scalar_of<T>::type>(1.0 / static_cast<double>(hw)));
    Tensor<T> gx(x.n(), x.c(), x.h(), x.w());
    for (int i = 0; i < x.n(); ++i) {
      const std::size_t base = static_cast<std::size_t>(i) * channels;
      std::vector<T> dz(channels), dd(channels, T(0));
      for (int c = 0; c < channels; ++c) {
        const T* xs = x.sample(i) + c * hw;
        const T* gs = gy.sample(i) + c * hw;
        T dg(0);
        for (std::size_t j = 0; j < hw; ++j) dg += gs[j] * xs[j];
        const T gc = g[base + c];
        dz[c] = dg * gc * (T(1) - gc);
      }
      for (int c = 0; c < channels; ++c)
        for (int j = 0; j < k; ++j) {
          const int src = tap(c, j);
          dd[src] += W[j] * dz[c];
          if (grads) (*grads)[w].data[j] += dz[c] * d[base + src];
        }
      if (grads)
        for (int c = 0; c < channels; ++c) (*grads)[b].data[0] += dz[c];
      for (int c = 0; c < channels; ++c) {
        const T* gs = gy.sample(i) + c * hw;
        T* gxs = gx.sample(i) + c * hw;
        const T gc = g[base + c];
        const T pool_term = dd[c] * inv;
        for (std::size_t j = 0; j < hw; ++j) gxs[j] = gs[j] * gc + pool_term;
      }
    }
    return gx;
  }
};

}  // namespace ote::nn
