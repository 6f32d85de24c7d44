#pragma once

#include <Eigen/Core>

#include <cmath>
#include <cstddef>
#include <numeric>
#include <string>
#include <type_traits>
#include <vector>

#include "ote/errors.hpp"
#include "ote/image.hpp"

namespace ote {

// ---------------------------------------------------------------------------
// Forward-mode dual numbers: value + tangent * eps, eps^2 = 0.
//
// Running a network's backward pass in Dual arithmetic, with the input seeded
// along a direction v, yields d/dt grad_w D(x + t v) exactly. The gradient
// penalty needs that mixed second derivative.

template <class T>
struct Dual {
  T v{};
  T d{};

  constexpr Dual() = default;
  constexpr Dual(T value) : v(value), d(0) {}  // NOLINT: implicit lift from scalars is intended
  constexpr Dual(T value, T tangent) : v(value), d(tangent) {}

  Dual& operator+=(const Dual& o) { v += o.v; d += o.d; return *this; }
  Dual& operator-=(const Dual& o) { v -= o.v; d -= o.d; return *this; }
  Dual& operator*=(const Dual& o) { d = d * o.v + v * o.d; v *= o.v; return *this; }
  Dual& operator/=(const Dual& o) { d = (d * o.v - v * o.d) / (o.v * o.v); v /= o.v; return *this; }

  friend Dual operator+(Dual a, const Dual& b) { return a += b; }
  friend Dual operator-(Dual a, const Dual& b) { return a -= b; }
  friend Dual operator*(Dual a, const Dual& b) { return a *= b; }
  friend Dual operator/(Dual a, const Dual& b) { return a /= b; }
  friend Dual operator-(const Dual& a) { return {-a.v, -a.d}; }

  friend bool operator<(const Dual& a, const Dual& b) { return a.v < b.v; }
  friend bool operator>(const Dual& a, const Dual& b) { return a.v > b.v; }
  friend bool operator==(const Dual& a, const Dual& b) { return a.v == b.v && a.d == b.d; }
};

template <class T>
struct is_dual : std::false_type {};
template <class T>
struct is_dual<Dual<T>> : std::true_type {};

template <class T>
struct scalar_of {
  using type = T;
};
template <class T>
struct scalar_of<Dual<T>> {
  using type = T;
};

template <class T>
inline auto value_of(const T& x) {
  if constexpr (is_dual<T>::value)
    return x.v;
  else
    return x;
}

template <class T>
T exp_(const T& x) {
  if constexpr (is_dual<T>::value) {
    const auto e = std::exp(x.v);
    return {e, e * x.d};
  } else {
    return std::exp(x);
  }
}

template <class T>
T logistic(const T& x) {
  return T(1) / (T(1) + exp_(-x));
}

// ---------------------------------------------------------------------------
// Tensor: batch x channels x height x width, row-major.

template <class T>
class Tensor {
 public:
  Tensor() = default;
  Tensor(int n, int c, int h, int w, T fill = T(0))
      : n_(n), c_(c), h_(h), w_(w), data_(static_cast<std::size_t>(n) * c * h * w, fill) {
    if (n < 0 || c < 1 || h < 1 || w < 1) throw InvalidArgument("Tensor: invalid shape");
  }

  int n() const noexcept { return n_; }
  int c() const noexcept { return c_; }
  int h() const noexcept { return h_; }
  int w() const noexcept { return w_; }
  std::size_t size() const noexcept { return data_.size(); }
  std::size_t sample_size() const noexcept { return static_cast<std::size_t>(c_) * h_ * w_; }
  std::size_t plane_size() const noexcept { return static_cast<std::size_t>(h_) * w_; }

  T* data() noexcept { return data_.data(); }
  const T* data() const noexcept { return data_.data(); }
  T* sample(int i) noexcept { return data_.data() + i * sample_size(); }
  const T* sample(int i) const noexcept { return data_.data() + i * sample_size(); }
  std::vector<T>& vec() noexcept { return data_; }
  const std::vector<T>& vec() const noexcept { return data_; }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }
  T& at(int i, int c, int y, int x) { return data_[((static_cast<std::size_t>(i) * c_ + c) * h_ + y) * w_ + x]; }
  const T& at(int i, int c, int y, int x) const {
    return data_[((static_cast<std::size_t>(i) * c_ + c) * h_ + y) * w_ + x];
  }

  bool same_shape(const Tensor& o) const noexcept { return n_ == o.n_ && c_ == o.c_ && h_ == o.h_ && w_ == o.w_; }
  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  template <class U>
  Tensor<U> cast() const {
    Tensor<U> out(n_, c_, h_, w_);
    for (std::size_t i = 0; i < data_.size(); ++i) out[i] = U(static_cast<typename scalar_of<U>::type>(value_of(data_[i])));
    return out;
  }

  friend bool operator==(const Tensor& a, const Tensor& b) { return a.same_shape(b) && a.data_ == b.data_; }

 private:
  int n_ = 0, c_ = 1, h_ = 1, w_ = 1;
  std::vector<T> data_;
};

template <class T>
Tensor<T> to_tensor(const std::vector<ImageTensor>& images) {
  if (images.empty()) throw InvalidArgument("to_tensor: empty batch");
  const auto& f = images.front();
  Tensor<T> out(static_cast<int>(images.size()), f.channels(), f.height(), f.width());
  for (std::size_t i = 0; i < images.size(); ++i) {
    if (!images[i].same_shape(f)) throw ShapeMismatch("to_tensor: images differ in shape");
    for (std::size_t j = 0; j < f.size(); ++j) out.sample(static_cast<int>(i))[j] = static_cast<T>(images[i].data()[j]);
  }
  return out;
}

/// Converts each sample to an ImageTensor, clamping into [0,1].
template <class T>
std::vector<ImageTensor> to_images(const Tensor<T>& t) {
  std::vector<ImageTensor> out;
  out.reserve(t.n());
  for (int i = 0; i < t.n(); ++i) {
    std::vector<double> d(t.sample_size());
    for (std::size_t j = 0; j < d.size(); ++j) d[j] = static_cast<double>(value_of(t.sample(i)[j]));
    ImageTensor img(t.c(), t.h(), t.w());
    img.data() = std::move(d);
    img.clamp01();
    out.push_back(std::move(img));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Named parameter arrays

template <class T>
struct ParamArray {
  std::string name;
  std::vector<int> shape;
  std::vector<T> data;
};

template <class T>
class ParameterSet {
 public:
  std::size_t add(std::string name, std::vector<int> shape) {
    std::size_t n = 1;
    for (int s : shape) n *= static_cast<std::size_t>(s);
    arrays_.push_back({std::move(name), std::move(shape), std::vector<T>(n, T(0))});
    return arrays_.size() - 1;
  }

  std::size_t size() const noexcept { return arrays_.size(); }
  ParamArray<T>& operator[](std::size_t i) { return arrays_[i]; }
  const ParamArray<T>& operator[](std::size_t i) const { return arrays_[i]; }
  auto begin() { return arrays_.begin(); }
  auto end() { return arrays_.end(); }
  auto begin() const { return arrays_.begin(); }
  auto end() const { return arrays_.end(); }

  std::size_t total_count() const {
    std::size_t n = 0;
    for (const auto& a : arrays_) n += a.data.size();
    return n;
  }

  ParameterSet zeros_like() const {
    ParameterSet z = *this;
    for (auto& a : z.arrays_) std::fill(a.data.begin(), a.data.end(), T(0));
    return z;
  }
  void set_zero() {
    for (auto& a : arrays_) std::fill(a.data.begin(), a.data.end(), T(0));
  }

  template <class U>
  ParameterSet<U> cast() const {
    ParameterSet<U> out;
    for (const auto& a : arrays_) {
      const auto i = out.add(a.name, a.shape);
      for (std::size_t j = 0; j < a.data.size(); ++j)
        out[i].data[j] = U(static_cast<typename scalar_of<U>::type>(value_of(a.data[j])));
    }
    return out;
  }

  bool same_layout(const ParameterSet& o) const {
    if (o.size() != size()) return false;
    for (std::size_t i = 0; i < size(); ++i)
      if (arrays_[i].name != o.arrays_[i].name || arrays_[i].shape != o.arrays_[i].shape) return false;
    return true;
  }

  bool all_finite() const {
    for (const auto& a : arrays_)
      for (const auto& v : a.data)
        if (!std::isfinite(static_cast<double>(value_of(v)))) return false;
    return true;
  }

  friend bool operator==(const ParameterSet& a, const ParameterSet& b) {
    if (!a.same_layout(b)) return false;
    for (std::size_t i = 0; i < a.size(); ++i)
      if (a.arrays_[i].data != b.arrays_[i].data) return false;
    return true;
  }

 private:
  std::vector<ParamArray<T>> arrays_;
};

// ---------------------------------------------------------------------------
// GEMM: C (m x n) = beta * C + op(A) * op(B), all row-major.

namespace detail {

template <class T>
void gemm_eigen(bool ta, bool tb, int m, int n, int k, const T* a, const T* b, T* c, bool accumulate) {
  using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using CMap = Eigen::Map<const Mat>;
  Eigen::Map<Mat> C(c, m, n);
  auto run = [&](const auto& A, const auto& B) {
    if (accumulate)
      C.noalias() += A * B;
    else
      C.noalias() = A * B;
  };
  if (!ta && !tb) run(CMap(a, m, k), CMap(b, k, n));
  if (!ta && tb) run(CMap(a, m, k), CMap(b, n, k).transpose());
  if (ta && !tb) run(CMap(a, k, m).transpose(), CMap(b, k, n));
  if (ta && tb) run(CMap(a, k, m).transpose(), CMap(b, n, k).transpose());
}

}  // namespace detail

template <class T>
void gemm(bool ta, bool tb, int m, int n, int k, const T* a, const T* b, T* c, bool accumulate) {
  if constexpr (is_dual<T>::value) {
    // (A + eps A')(B + eps B') = AB + eps (A'B + AB')
    using S = typename scalar_of<T>::type;
    const std::size_t na = static_cast<std::size_t>(m) * k, nb = static_cast<std::size_t>(k) * n,
                      nc = static_cast<std::size_t>(m) * n;
    std::vector<S> av(na), ad(na), bv(nb), bd(nb), cv(nc, S(0)), cd(nc, S(0));
    for (std::size_t i = 0; i < na; ++i) { av[i] = a[i].v; ad[i] = a[i].d; }
    for (std::size_t i = 0; i < nb; ++i) { bv[i] = b[i].v; bd[i] = b[i].d; }
    detail::gemm_eigen(ta, tb, m, n, k, av.data(), bv.data(), cv.data(), false);
    detail::gemm_eigen(ta, tb, m, n, k, ad.data(), bv.data(), cd.data(), false);
    detail::gemm_eigen(ta, tb, m, n, k, av.data(), bd.data(), cd.data(), true);
    for (std::size_t i = 0; i < nc; ++i) {
      if (accumulate)
        c[i] += T(cv[i], cd[i]);
      else
        c[i] = T(cv[i], cd[i]);
    }
  } else {
    detail::gemm_eigen(ta, tb, m, n, k, a, b, c, accumulate);
  }
}

}  // namespace ote
