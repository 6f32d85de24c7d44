#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>

#include "gradcheck.hpp"
#include "oracles.hpp"
#include "ote/objective.hpp"
#include "ote/optim.hpp"
#include "test_util.hpp"

using namespace ote;
using testutil::random_tensor;

namespace {

Tensor<double> points(const std::vector<double>& xs) {
  Tensor<double> t(static_cast<int>(xs.size()), 1, 1, 1);
  t.vec() = xs;
  return t;
}

/// f(x) = sum_j w_j x_j + b as a one-layer network over d features.
Sequential<double> linear_critic(const std::vector<double>& w, double b = 0.0) {
  MlpSpec s;
  s.in_features = static_cast<int>(w.size());
  s.hidden = {};
  Rng rng(0);
  auto net = make_mlp<double>(s, rng);
  net.params()[0].data = w;
  net.params()[1].data = {b};
  return net;
}

ObjectiveConfig squared(double lambda = 1.0, double gp = 10.0) {
  ObjectiveConfig c;
  c.lambda = lambda;
  c.gp_coefficient = gp;
  c.cost_kind = CostKind::SquaredDistance;
  return c;
}

std::vector<double> gaussian(Rng& rng, int n, double mean, double sd) {
  std::vector<double> v(n);
  for (auto& x : v) x = rng.normal(mean, sd);
  return v;
}

}  // namespace

TEST(TransportCost, IdentityGeneratorCostsNothing) {
  Rng rng(1);
  const auto y = random_tensor<double>(rng, 3, 3, 32, 32);
  EXPECT_NEAR(transport_cost(y, y, ObjectiveConfig{}, MsSsimParams::for_side(32)), 0.0, 1e-12);
  EXPECT_EQ(transport_cost(y, y, squared(), MsSsimParams{}), 0.0);
}

TEST(TransportCost, ConstantPairSingleScale) {
  Tensor<double> a(1, 1, 16, 16, 0.2), b(1, 1, 16, 16, 0.7);
  EXPECT_NEAR(transport_cost(a, b, ObjectiveConfig{}, MsSsimParams::single_scale()), 1.0 - 0.5284, 5e-5);
}

TEST(TransportCost, SquaredDistanceOnPoints) {
  EXPECT_DOUBLE_EQ(transport_cost(points({0}), points({3}), squared(), MsSsimParams{}), 9.0);
  EXPECT_THROW(transport_cost(points({0}), points({1, 2}), squared(), MsSsimParams{}), ShapeMismatch);
  EXPECT_THROW(transport_cost(Tensor<double>(), Tensor<double>(), squared(), MsSsimParams{}), InvalidArgument);
}

TEST(TransportCost, GradientMatchesFiniteDifferences) {
  Rng rng(2);
  const auto msp = MsSsimParams::for_side(24);
  for (const auto& cfg : {squared(), ObjectiveConfig{}}) {
    const auto y = random_tensor<double>(rng, 2, 1, 24, 24);
    auto gy = random_tensor<double>(rng, 2, 1, 24, 24);
    Tensor<double> g;
    transport_cost(y, gy, cfg, msp, &g);
    const auto fd = oracle::fd_gradient(
        [&](const std::vector<double>& v) {
          Tensor<double> t = gy;
          t.vec() = v;
          return transport_cost(y, t, cfg, msp);
        },
        gy.vec(), 1e-6);
    EXPECT_LT(oracle::relative_error(g.vec(), fd), 1e-3) << to_string(cfg.cost_kind);
  }
}

TEST(W1Dual, IdenticalBatchesGiveZero) {
  Rng rng(3);
  const auto d = make_mlp<double>(MlpSpec{}, rng);
  const auto x = points(gaussian(rng, 20, 0, 1));
  EXPECT_EQ(w1_dual_estimate(d, x, x), 0.0);
}

TEST(W1Dual, DeltasWithIdentityCritic) {
  EXPECT_DOUBLE_EQ(w1_dual_estimate(linear_critic({1.0}), points({1}), points({0})), 1.0);
}

TEST(W1Dual, AntisymmetricUnderSwap) {
  Rng rng(4);
  const auto d = make_mlp<double>(MlpSpec{}, rng);
  const auto x = points(gaussian(rng, 17, -1, 1)), y = points(gaussian(rng, 17, 2, 1));
  EXPECT_NEAR(w1_dual_estimate(d, x, y), -w1_dual_estimate(d, y, x), 1e-15);
  EXPECT_THROW(w1_dual_estimate(d, Tensor<double>(), y), InvalidArgument);
}

TEST(GradientPenalty, UnitNormLinearCriticHasNoPenalty) {
  Rng rng(5);
  const auto x = random_tensor<double>(rng, 6, 4, 1, 1), y = random_tensor<double>(rng, 6, 4, 1, 1);
  EXPECT_NEAR(gradient_penalty(linear_critic({0.6, 0.0, -0.8, 0.0}), x, y, 10.0, rng), 0.0, 1e-24);
}

TEST(GradientPenalty, SlopeTwoGivesCoefficient) {
  Rng rng(6);
  const auto x = random_tensor<double>(rng, 5, 3, 1, 1), y = random_tensor<double>(rng, 5, 3, 1, 1);
  EXPECT_DOUBLE_EQ(gradient_penalty(linear_critic({2.0, 0.0, 0.0}), x, y, 7.5, rng), 7.5);
}

TEST(GradientPenalty, NonNegativeOnRandomCritics) {
  Rng rng(7);
  for (int t = 0; t < 20; ++t) {
    const auto d = make_mlp<double>(MlpSpec{3, {8}, 1}, rng);
    const auto x = random_tensor<double>(rng, 4, 3, 1, 1, -2, 2), y = random_tensor<double>(rng, 4, 3, 1, 1, -2, 2);
    EXPECT_GE(gradient_penalty(d, x, y, 10.0, rng), 0.0);
  }
}

TEST(GradientPenalty, InputGradientsMatchFiniteDifferencesAtInterpolates) {
  Rng rng(8);
  const auto d = make_mlp<double>(MlpSpec{5, {16}, 1}, rng);
  const auto x = random_tensor<double>(rng, 10, 5, 1, 1, -1, 1), y = random_tensor<double>(rng, 10, 5, 1, 1, -1, 1);
  const auto xh = random_interpolates(x, y, rng);
  const auto ig = critic_input_gradients(d, xh);
  for (int i = 0; i < 10; ++i) {
    std::vector<double> p(xh.sample(i), xh.sample(i) + 5);
    const auto fd = oracle::fd_gradient(
        [&](const std::vector<double>& v) {
          Tensor<double> one(1, 5, 1, 1);
          one.vec() = v;
          return d.values(one)[0];
        },
        p, 1e-6);
    EXPECT_LT(oracle::relative_error(std::vector<double>(ig.grad.sample(i), ig.grad.sample(i) + 5), fd), 1e-3);
  }
}

TEST(GradientPenalty, ConvCriticInputGradientsMatchFiniteDifferences) {
  Rng rng(9);
  const auto d = make_critic<double>(CriticSpec{1, 4, 2, 0.2}, rng);
  const auto x = random_tensor<double>(rng, 3, 1, 8, 8), y = random_tensor<double>(rng, 3, 1, 8, 8);
  const auto xh = random_interpolates(x, y, rng);
  const auto ig = critic_input_gradients(d, xh);
  const auto fd = oracle::fd_gradient(
      [&](const std::vector<double>& v) {
        Tensor<double> t = xh;
        t.vec() = v;
        const auto vals = d.values(t);
        return std::accumulate(vals.begin(), vals.end(), 0.0);
      },
      xh.vec(), 1e-6);
  EXPECT_LT(oracle::relative_error(ig.grad.vec(), fd), 1e-3);
}

TEST(GradientPenalty, ParameterGradientMatchesFiniteDifferences) {
  Rng rng(10);
  auto mlp = make_mlp<double>(MlpSpec{3, {8, 8}, 1}, rng);
  const auto xh = random_tensor<double>(rng, 4, 3, 1, 1, -1, 1);
  auto g = mlp.params().zeros_like();
  gradient_penalty_at(mlp, xh, 10.0, &g);
  EXPECT_LT(testutil::param_grad_error(mlp.params(), g, [&] { return gradient_penalty_at(mlp, xh, 10.0); }), 1e-3);

  auto conv = make_critic<double>(CriticSpec{1, 4, 2, 0.2}, rng);
  const auto ximg = random_tensor<double>(rng, 2, 1, 8, 8);
  auto gc = conv.params().zeros_like();
  gradient_penalty_at(conv, ximg, 10.0, &gc);
  EXPECT_LT(testutil::param_grad_error(conv.params(), gc, [&] { return gradient_penalty_at(conv, ximg, 10.0); }), 1e-3);
}

TEST(GradientPenalty, KinkAtInterpolateIsReported) {
  MlpSpec s{1, {1}, 1};
  Rng rng(11);
  auto d = make_mlp<double>(s, rng);
  d.params()[0].data = {1.0};
  d.params()[1].data = {0.0};
  d.params()[2].data = {1.0};
  EXPECT_THROW(gradient_penalty_at(d, points({0.0}), 10.0), NotDifferentiable);

  // counting mode: one-sided derivative slope 0.2, so the penalty is 10 * (0.2 - 1)^2
  std::int64_t kinks = 0;
  auto g = d.params().zeros_like();
  EXPECT_NEAR(gradient_penalty_at(d, points({0.0, 1.0}), 10.0, &g, &kinks), 10.0 * 0.64 / 2, 1e-12);
  EXPECT_EQ(kinks, 1);
  kinks = 0;
  gradient_penalty_at(d, points({0.5}), 10.0, static_cast<ParameterSet<double>*>(nullptr), &kinks);
  EXPECT_EQ(kinks, 0);

  ObjectiveConfig cfg;
  cfg.cost_kind = CostKind::SquaredDistance;
  cfg.strict_kinks = true;
  Rng r(1);
  EXPECT_THROW(critic_objective(d, points({0.0}), points({0.0}), cfg, r), NotDifferentiable);
  cfg.strict_kinks = false;
  EXPECT_EQ(critic_objective(d, points({0.0}), points({0.0}), cfg, r).kink_hits, 1);
}

TEST(CriticObjective, ZeroCriticOnIdenticalBatches) {
  Rng rng(12);
  auto d = make_mlp<double>(MlpSpec{1, {4}, 1}, rng);
  d.params().set_zero();
  const auto x = points({0.3, -1.0, 2.0});
  const auto loss = critic_objective(d, x, x, squared(1.0, 10.0), rng);
  EXPECT_DOUBLE_EQ(loss.total, 10.0);
  EXPECT_EQ(loss.w1_estimate, 0.0);
}

TEST(CriticObjective, OptimalLinearCriticOnDeltas) {
  Rng rng(13);
  const auto loss = critic_objective(linear_critic({1.0}), points({1}), points({0}), squared(1.0, 10.0), rng);
  EXPECT_DOUBLE_EQ(loss.total, -1.0);
}

TEST(CriticObjective, GradientMatchesFiniteDifferences) {
  Rng rng(14);
  auto d = make_mlp<double>(MlpSpec{2, {6}, 1}, rng);
  const auto x = random_tensor<double>(rng, 5, 2, 1, 1, -1, 1), y = random_tensor<double>(rng, 5, 2, 1, 1, 1, 3);
  const auto cfg = squared(1.0, 10.0);
  auto g = d.params().zeros_like();
  Rng r1(99);
  critic_objective(d, x, y, cfg, r1, &g);
  const double err = testutil::param_grad_error(d.params(), g, [&] {
    Rng r2(99);
    return critic_objective(d, x, y, cfg, r2).total;
  });
  EXPECT_LT(err, 1e-3);
}

TEST(CriticObjective, TrainingRaisesDualEstimate) {
  Rng rng(15);
  MlpSpec spec{1, {32, 32}, 1};
  spec.zero_last = true;  // start from the zero function, below the dual optimum
  auto d = make_mlp<double>(spec, rng);
  RmsProp<double> opt(d.params());
  const auto x = points(gaussian(rng, 256, 2, 1)), y = points(gaussian(rng, 256, -2, 1));
  const auto cfg = squared(1.0, 10.0);
  std::vector<double> w1;
  for (int step = 0; step < 60; ++step) {
    auto g = d.params().zeros_like();
    w1.push_back(critic_objective(d, x, y, cfg, rng, &g).w1_estimate);
    opt.step(d.params(), g, 1e-4);
  }
  EXPECT_GT(w1.back(), w1.front() + 1.0);
  for (std::size_t t = 0; t + 5 < w1.size(); ++t) EXPECT_GE(w1[t + 5], w1[t]) << t;
}

TEST(CriticObjective, TrainedCriticEstimatesW1BetweenGaussians) {
  Rng rng(16);
  MlpSpec spec{1, {32, 32}, 1};
  spec.zero_last = true;  // a slope of the wrong sign is a local minimum under a stiff penalty
  auto d = make_mlp<double>(spec, rng);
  RmsProp<double> opt(d.params());
  // The penalty pulls the slope toward 1 with strength gp; the dual term pushes
  // it up by about W1 / (2 gp). A stiff penalty keeps that bias small.
  const auto cfg = squared(1.0, 100.0);
  for (int step = 0; step < 1500; ++step) {
    const auto x = points(gaussian(rng, 128, 2, 1)), y = points(gaussian(rng, 128, -2, 1));
    auto g = d.params().zeros_like();
    critic_objective(d, x, y, cfg, rng, &g);
    opt.step(d.params(), g, step < 1000 ? 1e-3 : 1e-4);
  }
  const auto xs = gaussian(rng, 4000, 2, 1), ys = gaussian(rng, 4000, -2, 1);
  const double oracle_w1 = static_cast<double>(oracle::w1_quantile(xs, ys));
  EXPECT_NEAR(oracle_w1, 4.0, 0.1);
  EXPECT_NEAR(w1_dual_estimate(d, points(xs), points(ys)), oracle_w1, 0.15 * oracle_w1);
}

TEST(GeneratorObjective, LambdaZeroIsTransportCost) {
  Rng rng(17);
  const auto d1 = make_mlp<double>(MlpSpec{}, rng), d2 = make_mlp<double>(MlpSpec{}, rng);
  const auto y = points({0, 1, 2}), gy = points({0.5, 1, 3}), x = points({4, 5, 6});
  const auto cfg = squared(0.0);
  Tensor<double> g1, g2;
  const auto a = generator_objective(y, gy, x, d1, cfg, MsSsimParams{}, &g1);
  const auto b = generator_objective(y, gy, x, d2, cfg, MsSsimParams{}, &g2);
  EXPECT_EQ(a.generator_total, a.transport_cost);
  EXPECT_EQ(a.generator_total, b.generator_total);
  EXPECT_TRUE(g1 == g2);
}

TEST(GeneratorObjective, TotalRecomputableFromParts) {
  Rng rng(18);
  const auto d = make_mlp<double>(MlpSpec{}, rng);
  const auto cfg = squared(40.0);
  const auto lb = generator_objective(points({0, 1}), points({0.2, 1.5}), points({3, 4}), d, cfg, MsSsimParams{});
  EXPECT_DOUBLE_EQ(lb.generator_total, lb.transport_cost + 40.0 * lb.w1_estimate);
  LossBreakdown worked{0.3, 0.1, 0.0, 0.3 + 40 * 0.1, 0.0};
  EXPECT_DOUBLE_EQ(worked.generator_total, 4.3);
}

TEST(GeneratorObjective, GradientMatchesFiniteDifferences) {
  Rng rng(19);
  const auto d = make_critic<double>(CriticSpec{1, 4, 2, 0.2}, rng);
  const auto y = random_tensor<double>(rng, 2, 1, 24, 24), x = random_tensor<double>(rng, 2, 1, 24, 24);
  auto gy = random_tensor<double>(rng, 2, 1, 24, 24);
  ObjectiveConfig cfg;
  cfg.lambda = 3.0;
  const auto msp = MsSsimParams::for_side(24);
  Tensor<double> g;
  generator_objective(y, gy, x, d, cfg, msp, &g);
  const auto fd = oracle::fd_gradient(
      [&](const std::vector<double>& v) {
        Tensor<double> t = gy;
        t.vec() = v;
        return generator_objective(y, t, x, d, cfg, msp).generator_total;
      },
      gy.vec(), 1e-6);
  EXPECT_LT(oracle::relative_error(g.vec(), fd), 1e-3);
}

TEST(Monge1d, IdenticalCloudsCostNothing) {
  const auto c = DiscreteCloud::from_1d({3, 1, 2});
  const auto r = exact_monge_1d(c, c, MongeCost::Squared);
  EXPECT_EQ(r.mean_cost, 0.0);
  EXPECT_EQ(r.assignment, (std::vector<std::size_t>{0, 1, 2}));
}

TEST(Monge1d, Shift) {
  EXPECT_DOUBLE_EQ(
      exact_monge_1d(DiscreteCloud::from_1d({0, 1}), DiscreteCloud::from_1d({10, 11}), MongeCost::Absolute).mean_cost,
      10.0);
}

TEST(Monge1d, MatchesExhaustivePermutationSearch) {
  Rng rng(20);
  for (int t = 0; t < 5; ++t)
    for (auto cost : {MongeCost::Absolute, MongeCost::Squared}) {
      std::vector<double> a(8), b(8);
      for (auto& v : a) v = rng.normal();
      for (auto& v : b) v = rng.normal(1, 2);
      const auto s = DiscreteCloud::from_1d(a), g = DiscreteCloud::from_1d(b);
      std::vector<std::size_t> perm(8);
      std::iota(perm.begin(), perm.end(), 0);
      double best = 1e300;
      do best = std::min(best, assignment_cost(s, g, perm, cost));
      while (std::next_permutation(perm.begin(), perm.end()));
      EXPECT_NEAR(exact_monge_1d(s, g, cost).mean_cost, best, 1e-12);
    }
}

TEST(Monge1d, LowerBoundsRandomAssignments) {
  Rng rng(21);
  std::vector<double> a(50), b(50);
  for (auto& v : a) v = rng.normal();
  for (auto& v : b) v = rng.normal(3, 1);
  const auto s = DiscreteCloud::from_1d(a), g = DiscreteCloud::from_1d(b);
  const double opt = exact_monge_1d(s, g, MongeCost::Squared).mean_cost;
  std::vector<std::size_t> perm(50);
  std::iota(perm.begin(), perm.end(), 0);
  for (int t = 0; t < 100; ++t) {
    for (std::size_t i = perm.size() - 1; i > 0; --i) std::swap(perm[i], perm[rng.index(i + 1)]);
    EXPECT_LE(opt, assignment_cost(s, g, perm, MongeCost::Squared) + 1e-12);
  }
}

TEST(Monge1d, Errors) {
  EXPECT_THROW(exact_monge_1d(DiscreteCloud::from_1d({0}), DiscreteCloud::from_1d({0, 1}), MongeCost::Absolute),
               InvalidArgument);
  DiscreteCloud two_d{{{0, 1}, {1, 2}}};
  EXPECT_THROW(exact_monge_1d(two_d, two_d, MongeCost::Absolute), InvalidArgument);
  EXPECT_THROW(exact_monge_1d(DiscreteCloud{}, DiscreteCloud{}, MongeCost::Absolute), InvalidArgument);
}
