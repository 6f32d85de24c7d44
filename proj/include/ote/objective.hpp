#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "ote/errors.hpp"
#include "ote/image.hpp"
#include "ote/metrics.hpp"
#include "ote/networks.hpp"
#include "ote/rng.hpp"
#include "ote/tensor.hpp"

namespace ote {

enum class CostKind { MsSsim, SquaredDistance };

inline std::string to_string(CostKind k) { return k == CostKind::MsSsim ? "ms_ssim_cost" : "squared_distance"; }
inline CostKind parse_cost_kind(const std::string& s) {
  if (s == "ms_ssim_cost" || s == "ms_ssim") return CostKind::MsSsim;
  if (s == "squared_distance") return CostKind::SquaredDistance;
  throw InvalidArgument("unknown cost kind '" + s + "'");
}

struct ObjectiveConfig {
  double lambda = 40.0;
  double gp_coefficient = 10.0;
  int critic_steps = 5;
  CostKind cost_kind = CostKind::MsSsim;
  // Penalty gradients at a pre-activation exactly on a leaky kink: raise
  // NotDifferentiable, or take the one-sided derivative and count the hit.
  bool strict_kinks = false;

  void validate() const {
    if (!(lambda >= 0.0)) throw InvalidArgument("ObjectiveConfig: lambda must be >= 0");
    if (!(gp_coefficient >= 0.0)) throw InvalidArgument("ObjectiveConfig: gp_coefficient must be >= 0");
    if (critic_steps < 1) throw InvalidArgument("ObjectiveConfig: critic_steps must be >= 1");
  }
};

/// One training step's losses. generator_total = transport_cost + lambda * w1_estimate.
struct LossBreakdown {
  double transport_cost = 0.0;
  double w1_estimate = 0.0;
  double gp_term = 0.0;
  double generator_total = 0.0;
  double critic_total = 0.0;
  std::int64_t kink_hits = 0;  // penalty pre-activations exactly on a kink, summed over the critic steps
};

namespace detail {

template <class T>
ImageTensor sample_image(const Tensor<T>& t, int i) {
  std::vector<double> d(t.sample_size());
  for (std::size_t j = 0; j < d.size(); ++j) d[j] = static_cast<double>(value_of(t.sample(i)[j]));
  return ImageTensor(t.c(), t.h(), t.w(), std::move(d));
}

inline void check_batches(const auto& a, const auto& b, const char* what) {
  if (a.n() < 1 || b.n() < 1) throw InvalidArgument(std::string(what) + ": empty batch");
  if (a.c() != b.c() || a.h() != b.h() || a.w() != b.w()) throw ShapeMismatch(std::string(what) + ": sample shapes differ");
}

}  // namespace detail

/// Batch-mean transport cost between sources y and their images gy:
/// 1 - MS-SSIM per pair, or the squared Euclidean distance per sample.
/// When grad_gy is non-null it receives d(cost)/d(gy).
template <class T>
double transport_cost(const Tensor<T>& y, const Tensor<T>& gy, const ObjectiveConfig& cfg, const MsSsimParams& msp,
                      Tensor<T>* grad_gy = nullptr) {
  detail::check_batches(y, gy, "transport_cost");
  if (y.n() != gy.n()) throw ShapeMismatch("transport_cost: batch sizes differ");
  const double inv_b = 1.0 / y.n();
  if (grad_gy) *grad_gy = Tensor<T>(gy.n(), gy.c(), gy.h(), gy.w());
  double total = 0.0;
  if (cfg.cost_kind == CostKind::SquaredDistance) {
    for (int i = 0; i < y.n(); ++i)
      for (std::size_t j = 0; j < y.sample_size(); ++j) {
        const double d = static_cast<double>(value_of(gy.sample(i)[j])) - static_cast<double>(value_of(y.sample(i)[j]));
        total += d * d;
        if (grad_gy) grad_gy->sample(i)[j] = T(static_cast<typename scalar_of<T>::type>(2.0 * d * inv_b));
      }
    return total * inv_b;
  }
  std::vector<double> g;
  for (int i = 0; i < y.n(); ++i) {
    const ImageTensor a = detail::sample_image(y, i);
    const ImageTensor b = detail::sample_image(gy, i);
    if (grad_gy) {
      total += 1.0 - ms_ssim_grad(a, b, msp, g);
      for (std::size_t j = 0; j < g.size(); ++j)
        grad_gy->sample(i)[j] = T(static_cast<typename scalar_of<T>::type>(-g[j] * inv_b));
    } else {
      total += 1.0 - ms_ssim(a, b, msp);
    }
  }
  return total * inv_b;
}

/// mean D(x) - mean D(gy): the Kantorovich-Rubinstein dual estimate for a fixed critic.
template <class T>
double w1_dual_estimate(const Sequential<T>& critic, const Tensor<T>& x, const Tensor<T>& gy) {
  detail::check_batches(x, gy, "w1_dual_estimate");
  const auto dx = critic.values(x);
  const auto dg = critic.values(gy);
  double sx = 0.0, sg = 0.0;
  for (const auto& v : dx) sx += static_cast<double>(value_of(v));
  for (const auto& v : dg) sg += static_cast<double>(value_of(v));
  return sx / x.n() - sg / gy.n();
}

/// Per-sample input gradients of the critic and their Euclidean norms.
template <class T>
struct InputGradients {
  Tensor<T> grad;
  std::vector<double> norms;
};

/// Number of leaky-activation inputs in a forward trace that sit exactly on the kink.
template <class T>
std::int64_t count_kinks(const Sequential<T>& net, const typename Sequential<T>::Trace& tr) {
  std::int64_t n = 0;
  for (std::size_t l = 0; l < net.layers().size(); ++l)
    if (const auto* a = std::get_if<nn::LeakyRelu>(&net.layers()[l]); a && a->slope != 1.0)
      for (const auto& v : tr.inputs[l].vec()) n += value_of(v) == 0;
  return n;
}

/// With kinks null, an input exactly on a kink raises NotDifferentiable;
/// otherwise the one-sided derivative is used and such inputs are counted.
template <class T>
InputGradients<T> critic_input_gradients(const Sequential<T>& critic, const Tensor<T>& x,
                                         std::int64_t* kinks = nullptr) {
  typename Sequential<T>::Trace tr;
  const Tensor<T> out = critic.forward(x, tr);
  const bool strict = kinks == nullptr;
  if (kinks) *kinks += count_kinks(critic, tr);
  Tensor<T> ones(out.n(), out.c(), out.h(), out.w(), T(1));
  InputGradients<T> r;
  r.grad = critic.backward(tr, ones, nullptr, strict);
  r.norms.resize(x.n());
  for (int i = 0; i < x.n(); ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < x.sample_size(); ++j) {
      const double v = static_cast<double>(value_of(r.grad.sample(i)[j]));
      s += v * v;
    }
    r.norms[i] = std::sqrt(s);
  }
  return r;
}

/// Random interpolates eps * x + (1 - eps) * gy, eps ~ U[0,1) per sample.
template <class T>
Tensor<T> random_interpolates(const Tensor<T>& x, const Tensor<T>& gy, Rng& rng) {
  detail::check_batches(x, gy, "gradient_penalty");
  if (x.n() != gy.n()) throw ShapeMismatch("gradient_penalty: batch sizes differ");
  Tensor<T> xh(x.n(), x.c(), x.h(), x.w());
  for (int i = 0; i < x.n(); ++i) {
    const auto e = static_cast<typename scalar_of<T>::type>(rng.uniform());
    for (std::size_t j = 0; j < x.sample_size(); ++j)
      xh.sample(i)[j] = T(e) * x.sample(i)[j] + (T(1) - T(e)) * gy.sample(i)[j];
  }
  return xh;
}

/// gp_coefficient * mean_i (||grad D(xh_i)|| - 1)^2 at given interpolates.
///
/// With grads non-null, the penalty's parameter gradient is accumulated. It
/// needs d/dw ||grad_x D||, which equals d/dt grad_w D(xh + t v) for v the
/// per-sample scaled input gradient; one backward pass in dual arithmetic
/// yields it exactly.
/// Kinks are handled as in critic_input_gradients.
template <class T>
double gradient_penalty_at(const Sequential<T>& critic, const Tensor<T>& xh, double gp_coefficient,
                           ParameterSet<T>* grads = nullptr, std::int64_t* kinks = nullptr) {
  using S = typename scalar_of<T>::type;
  const auto ig = critic_input_gradients(critic, xh, kinks);
  const int b = xh.n();
  double value = 0.0;
  for (double n : ig.norms) value += (n - 1.0) * (n - 1.0);
  value *= gp_coefficient / b;
  if (!grads || gp_coefficient == 0.0) return value;

  Tensor<Dual<S>> xd(xh.n(), xh.c(), xh.h(), xh.w());
  for (int i = 0; i < b; ++i) {
    const double n = ig.norms[i];
    const double coeff = n > 0.0 ? gp_coefficient / b * 2.0 * (n - 1.0) / n : 0.0;
    for (std::size_t j = 0; j < xh.sample_size(); ++j)
      xd.sample(i)[j] = Dual<S>(static_cast<S>(value_of(xh.sample(i)[j])),
                                static_cast<S>(coeff * static_cast<double>(value_of(ig.grad.sample(i)[j]))));
  }
  const Sequential<Dual<S>> cd = critic.template cast<Dual<S>>();
  typename Sequential<Dual<S>>::Trace tr;
  const auto out = cd.forward(xd, tr);
  Tensor<Dual<S>> ones(out.n(), out.c(), out.h(), out.w(), Dual<S>(S(1)));
  ParameterSet<Dual<S>> gd = cd.params().zeros_like();
  cd.backward(tr, ones, &gd, kinks == nullptr);
  for (std::size_t a = 0; a < grads->size(); ++a)
    for (std::size_t j = 0; j < (*grads)[a].data.size(); ++j) (*grads)[a].data[j] += T(gd[a].data[j].d);
  return value;
}

template <class T>
double gradient_penalty(const Sequential<T>& critic, const Tensor<T>& x, const Tensor<T>& gy, double gp_coefficient,
                        Rng& rng, ParameterSet<T>* grads = nullptr, std::int64_t* kinks = nullptr) {
  const Tensor<T> xh = random_interpolates(x, gy, rng);
  return gradient_penalty_at(critic, xh, gp_coefficient, grads, kinks);
}

struct CriticLoss {
  double total = 0.0;
  double w1_estimate = 0.0;
  double gp_term = 0.0;
  std::int64_t kink_hits = 0;
};

/// -(mean D(x) - mean D(gy)) + gradient penalty; the critic descends this.
template <class T>
CriticLoss critic_objective(const Sequential<T>& critic, const Tensor<T>& x, const Tensor<T>& gy,
                            const ObjectiveConfig& cfg, Rng& rng, ParameterSet<T>* grads = nullptr) {
  cfg.validate();
  CriticLoss loss;
  const auto seed = [](int n, double v) {
    return Tensor<T>(n, 1, 1, 1, T(static_cast<typename scalar_of<T>::type>(v)));
  };
  if (grads) {
    typename Sequential<T>::Trace tx, tg;
    const auto dx = critic.forward(x, tx);
    const auto dg = critic.forward(gy, tg);
    double sx = 0.0, sg = 0.0;
    for (const auto& v : dx.vec()) sx += static_cast<double>(value_of(v));
    for (const auto& v : dg.vec()) sg += static_cast<double>(value_of(v));
    loss.w1_estimate = sx / x.n() - sg / gy.n();
    critic.backward(tx, seed(x.n(), -1.0 / x.n()), grads);
    critic.backward(tg, seed(gy.n(), 1.0 / gy.n()), grads);
  } else {
    loss.w1_estimate = w1_dual_estimate(critic, x, gy);
  }
  loss.gp_term = gradient_penalty(critic, x, gy, cfg.gp_coefficient, rng, grads,
                                  cfg.strict_kinks ? nullptr : &loss.kink_hits);
  loss.total = -loss.w1_estimate + loss.gp_term;
  return loss;
}

/// Generator-side losses. The reported w1_estimate includes mean D(x), which
/// has no generator gradient; grad_gy receives d/d(gy) of
/// transport_cost - lambda * mean D(gy).
template <class T>
LossBreakdown generator_objective(const Tensor<T>& y, const Tensor<T>& gy, const Tensor<T>& x,
                                  const Sequential<T>& critic, const ObjectiveConfig& cfg, const MsSsimParams& msp,
                                  Tensor<T>* grad_gy = nullptr) {
  cfg.validate();
  LossBreakdown lb;
  lb.transport_cost = transport_cost(y, gy, cfg, msp, grad_gy);
  typename Sequential<T>::Trace tg;
  const auto dg = critic.forward(gy, tg);
  double sg = 0.0;
  for (const auto& v : dg.vec()) sg += static_cast<double>(value_of(v));
  const auto dx = critic.values(x);
  double sx = 0.0;
  for (const auto& v : dx) sx += static_cast<double>(value_of(v));
  lb.w1_estimate = sx / x.n() - sg / gy.n();
  lb.generator_total = lb.transport_cost + cfg.lambda * lb.w1_estimate;
  if (grad_gy && cfg.lambda != 0.0) {
    Tensor<T> seed(gy.n(), 1, 1, 1, T(static_cast<typename scalar_of<T>::type>(-cfg.lambda / gy.n())));
    const Tensor<T> gc = critic.backward(tg, seed, nullptr);
    nn::add_inplace(*grad_gy, gc);
  }
  return lb;
}

// ---------------------------------------------------------------------------
// Discrete Monge problem in one dimension

/// Uniformly weighted point cloud.
struct DiscreteCloud {
  std::vector<std::vector<double>> points;

  std::size_t size() const noexcept { return points.size(); }
  int dimension() const { return points.empty() ? 0 : static_cast<int>(points.front().size()); }

  static DiscreteCloud from_1d(const std::vector<double>& xs) {
    DiscreteCloud c;
    for (double x : xs) c.points.push_back({x});
    return c;
  }

  void validate() const {
    if (points.empty()) throw InvalidArgument("DiscreteCloud: empty cloud");
    const auto d = points.front().size();
    for (const auto& p : points) {
      if (p.size() != d) throw InvalidArgument("DiscreteCloud: inconsistent dimensions");
      for (double v : p)
        if (!std::isfinite(v)) throw InvalidArgument("DiscreteCloud: non-finite coordinate");
    }
  }
};

enum class MongeCost { Absolute, Squared };

inline double monge_cost(double a, double b, MongeCost c) {
  const double d = a - b;
  return c == MongeCost::Absolute ? std::fabs(d) : d * d;
}

struct MongeResult {
  std::vector<std::size_t> assignment;  // source i -> target assignment[i]
  double mean_cost = 0.0;
};

/// Optimal assignment between equal-size 1D clouds for a convex cost: match by rank.
inline MongeResult exact_monge_1d(const DiscreteCloud& source, const DiscreteCloud& target, MongeCost cost) {
  source.validate();
  target.validate();
  if (source.size() != target.size()) throw InvalidArgument("exact_monge_1d: clouds differ in size");
  if (source.dimension() != 1 || target.dimension() != 1) throw InvalidArgument("exact_monge_1d: dimension must be 1");
  const std::size_t n = source.size();
  auto rank_order = [](const DiscreteCloud& c) {
    std::vector<std::size_t> o(c.size());
    std::iota(o.begin(), o.end(), 0);
    std::stable_sort(o.begin(), o.end(), [&](std::size_t a, std::size_t b) { return c.points[a][0] < c.points[b][0]; });
    return o;
  };
  const auto so = rank_order(source), to = rank_order(target);
  MongeResult r;
  r.assignment.resize(n);
  double total = 0.0;
  for (std::size_t k = 0; k < n; ++k) {
    r.assignment[so[k]] = to[k];
    total += monge_cost(source.points[so[k]][0], target.points[to[k]][0], cost);
  }
  r.mean_cost = total / n;
  return r;
}

/// Mean cost of an arbitrary assignment; used to compare against exact_monge_1d.
inline double assignment_cost(const DiscreteCloud& source, const DiscreteCloud& target,
                              const std::vector<std::size_t>& assignment, MongeCost cost) {
  if (assignment.size() != source.size()) throw InvalidArgument("assignment_cost: size mismatch");
  double total = 0.0;
  for (std::size_t i = 0; i < assignment.size(); ++i)
    total += monge_cost(source.points[i][0], target.points.at(assignment[i])[0], cost);
  return total / assignment.size();
}

}  // namespace ote
