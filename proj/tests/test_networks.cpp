#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <iterator>

#include "gradcheck.hpp"
#include "oracles.hpp"
#include "ote/networks.hpp"
#include "ote/serialize.hpp"
#include "test_util.hpp"

using namespace ote;
using testutil::random_tensor;

namespace {

GeneratorSpec micro_generator() {
  GeneratorSpec s;
  s.in_channels = 1;
  s.base_channels = 4;
  s.depth = 1;
  s.residual_blocks = 1;
  return s;
}

double weighted_sum(const Tensor<double>& y, const Tensor<double>& r) {
  double s = 0;
  for (std::size_t i = 0; i < y.size(); ++i) s += y[i] * r[i];
  return s;
}

}  // namespace

TEST(Generator, ShapeAndRangeContract) {
  GeneratorSpec s;
  s.in_channels = 1;
  Rng rng(1);
  Generator<float> g(s, rng);
  Rng drng(2);
  const auto x = random_tensor<float>(drng, 2, 1, 64, 64, 0.0, 1.0);
  const auto y = g.forward(x);
  ASSERT_TRUE(y.same_shape(x));
  for (float v : y.vec()) {
    EXPECT_GE(v, 0.0f);
    EXPECT_LE(v, 1.0f);
  }
}

TEST(Generator, FreshGeneratorIsIdentityUpToClamp) {
  Rng rng(3);
  Generator<double> g(micro_generator(), rng);
  Rng drng(4);
  const auto x = random_tensor<double>(drng, 2, 1, 8, 8);
  const auto y = g.forward(x);
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_NEAR(y[i], x[i], 1e-12);
}

TEST(Generator, OutputStaysInUnitIntervalWithLargeWeights) {
  Rng rng(5);
  Generator<double> g(micro_generator(), rng);
  testutil::jitter(g.params(), rng, 3.0);
  Rng drng(6);
  const auto y = g.forward(random_tensor<double>(drng, 3, 1, 8, 8, 0.0, 1.0));
  for (double v : y.vec()) {
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 1.0);
  }
}

TEST(Generator, RejectsIncompatibleInputs) {
  Rng rng(7);
  GeneratorSpec s = micro_generator();
  s.depth = 2;
  Generator<float> g(s, rng);
  EXPECT_THROW(g.forward(Tensor<float>(1, 1, 10, 8)), ShapeMismatch);
  EXPECT_THROW(g.forward(Tensor<float>(1, 3, 8, 8)), ShapeMismatch);
  s.base_channels = 2;
  EXPECT_THROW(Generator<float>(s, rng), InvalidArgument);
  s.base_channels = 4;
  s.depth = 0;
  EXPECT_THROW(Generator<float>(s, rng), InvalidArgument);
}

TEST(Generator, DeterministicInitialization) {
  GeneratorSpec s;
  Rng a(42), b(42), c(43);
  EXPECT_EQ(Generator<float>(s, a).params(), Generator<float>(s, b).params());
  Rng a2(42);
  EXPECT_FALSE(Generator<float>(s, a2).params() == Generator<float>(s, c).params());
}

TEST(Generator, DisabledEcaEqualsGatesForcedOpen) {
  GeneratorSpec on = micro_generator(), off = micro_generator();
  off.eca_enabled = false;
  Rng a(9), b(9);
  Generator<double> g_on(on, a), g_off(off, b);
  ASSERT_TRUE(g_on.params() == g_off.params());
  Rng j1(10), j2(10);
  testutil::jitter(g_on.params(), j1, 0.2);
  testutil::jitter(g_off.params(), j2, 0.2);
  Rng drng(11);
  const auto x = random_tensor<double>(drng, 2, 1, 8, 8);
  const auto y_off = g_off.forward(x);
  EXPECT_FALSE(g_on.forward(x) == y_off);  // the gates do something when active
  g_on.set_gates_forced_open(true);
  EXPECT_TRUE(g_on.forward(x) == y_off);
}

TEST(Generator, ParameterGradientMatchesFiniteDifferences) {
  for (bool eca : {true, false}) {
    GeneratorSpec s = micro_generator();
    s.eca_enabled = eca;
    Rng rng(12);
    Generator<double> g(s, rng);
    testutil::jitter(g.params(), rng, 0.1);
    ASSERT_LE(g.params().total_count(), 5000u);
    const auto x = random_tensor<double>(rng, 2, 1, 8, 8);
    const auto r = random_tensor<double>(rng, 2, 1, 8, 8, -1.0, 1.0);
    typename Generator<double>::Trace t;
    g.forward(x, t);
    auto grads = g.params().zeros_like();
    g.backward(t, r, &grads);
    const double err = testutil::param_grad_error(g.params(), grads, [&] { return weighted_sum(g.forward(x), r); });
    EXPECT_LT(err, 1e-3) << "eca=" << eca;
  }
}

TEST(Generator, MeanOutputGradientOnFourChannelSpec) {
  GeneratorSpec s = micro_generator();
  s.in_channels = 3;
  Rng rng(13);
  Generator<double> g(s, rng);
  testutil::jitter(g.params(), rng, 0.1);
  ASSERT_LE(g.params().total_count(), 5000u);
  const auto x = random_tensor<double>(rng, 1, 3, 8, 8);
  Tensor<double> r(1, 3, 8, 8, 1.0 / x.size());
  typename Generator<double>::Trace t;
  g.forward(x, t);
  auto grads = g.params().zeros_like();
  g.backward(t, r, &grads);
  EXPECT_LT(testutil::param_grad_error(g.params(), grads, [&] { return weighted_sum(g.forward(x), r); }), 1e-3);
}

TEST(Generator, InputGradientMatchesFiniteDifferences) {
  Rng rng(14);
  Generator<double> g(micro_generator(), rng);
  testutil::jitter(g.params(), rng, 0.1);
  auto x = random_tensor<double>(rng, 2, 1, 8, 8);
  const auto r = random_tensor<double>(rng, 2, 1, 8, 8, -1.0, 1.0);
  typename Generator<double>::Trace t;
  g.forward(x, t);
  const auto gx = g.backward(t, r, nullptr);
  const auto fd = oracle::fd_gradient(
      [&](const std::vector<double>& v) {
        Tensor<double> xx = x;
        xx.vec() = v;
        return weighted_sum(g.forward(xx), r);
      },
      x.vec(), 1e-6);
  EXPECT_LT(oracle::relative_error(gx.vec(), fd), 1e-3);
}

TEST(Generator, FloatAndDoubleAgree) {
  Rng rng(15);
  Generator<double> gd(micro_generator(), rng);
  testutil::jitter(gd.params(), rng, 0.1);
  const Generator<float> gf = gd.cast<float>();
  const auto x = random_tensor<double>(rng, 1, 1, 8, 8);
  const auto yd = gd.forward(x);
  const auto yf = gf.forward(x.cast<float>());
  for (std::size_t i = 0; i < yd.size(); ++i) EXPECT_NEAR(yd[i], yf[i], 1e-4);
}

TEST(EcaKernel, SizesFromChannelCount) {
  EXPECT_EQ(nn::eca_kernel_size(4), 1);
  EXPECT_EQ(nn::eca_kernel_size(16), 3);
  EXPECT_EQ(nn::eca_kernel_size(64), 3);
  EXPECT_EQ(nn::eca_kernel_size(256), 5);
  EXPECT_EQ(nn::eca_kernel_size(1), 1);
  for (int c = 1; c <= 1024; c *= 2) EXPECT_EQ(nn::eca_kernel_size(c) % 2, 1) << c;
}

TEST(EcaGate, IdenticalChannelsGetEqualGates) {
  Rng rng(16);
  ParameterSet<double> p;
  const auto e = nn::EcaGate::make(p, "eca", 16, 2.0, 1.0, rng);
  Tensor<double> x(2, 16, 5, 5);
  Rng drng(17);
  for (int i = 0; i < 2; ++i)
    for (std::size_t j = 0; j < x.plane_size(); ++j) {
      const double v = drng.uniform();
      for (int c = 0; c < 16; ++c) x.sample(i)[c * x.plane_size() + j] = v;
    }
  const auto g = e.gates(p, x);
  for (int i = 0; i < 2; ++i)
    for (int c = 1; c < 16; ++c) EXPECT_DOUBLE_EQ(g[i * 16 + c], g[i * 16]);
  const auto y = e.forward(p, x);
  for (int i = 0; i < 2; ++i)
    for (int c = 1; c < 16; ++c)
      for (std::size_t j = 0; j < x.plane_size(); ++j)
        EXPECT_EQ(y.sample(i)[c * x.plane_size() + j], y.sample(i)[j]);
}

TEST(EcaGate, ZeroInputGivesZeroOutput) {
  Rng rng(18);
  ParameterSet<double> p;
  const auto e = nn::EcaGate::make(p, "eca", 8, 2.0, 1.0, rng);
  p[e.b].data[0] = 0.7;
  const Tensor<double> x(1, 8, 4, 4);
  const auto g = e.gates(p, x);
  for (double v : g) EXPECT_DOUBLE_EQ(v, 1.0 / (1.0 + std::exp(-0.7)));
  EXPECT_TRUE(e.forward(p, x) == x);
}

TEST(EcaGate, ShapePreserved) {
  for (int c : {4, 16, 64}) {
    Rng rng(19);
    ParameterSet<float> p;
    const auto e = nn::EcaGate::make(p, "eca", c, 2.0, 1.0, rng);
    const auto x = random_tensor<float>(rng, 2, c, 3, 5);
    EXPECT_TRUE(e.forward(p, x).same_shape(x));
  }
}

TEST(EcaGate, GradientsMatchFiniteDifferences) {
  Rng rng(20);
  ParameterSet<double> p;
  const auto e = nn::EcaGate::make(p, "eca", 16, 2.0, 1.0, rng);
  p[e.b].data[0] = 0.3;
  auto x = random_tensor<double>(rng, 2, 16, 4, 4, -1.0, 1.0);
  const auto r = random_tensor<double>(rng, 2, 16, 4, 4, -1.0, 1.0);
  auto grads = p.zeros_like();
  const auto gx = e.backward(p, x, r, &grads);
  EXPECT_LT(testutil::param_grad_error(p, grads, [&] { return weighted_sum(e.forward(p, x), r); }), 1e-3);
  const auto fd = oracle::fd_gradient(
      [&](const std::vector<double>& v) {
        Tensor<double> xx = x;
        xx.vec() = v;
        return weighted_sum(e.forward(p, xx), r);
      },
      x.vec(), 1e-6);
  EXPECT_LT(oracle::relative_error(gx.vec(), fd), 1e-3);
}

namespace {

CriticSpec micro_critic() {
  CriticSpec s;
  s.in_channels = 1;
  s.base_channels = 4;
  s.conv_layers = 2;
  return s;
}

}  // namespace

TEST(Critic, OneScalarPerImage) {
  Rng rng(21);
  const auto d = make_critic<float>(CriticSpec{}, rng);
  const auto v = d.values(random_tensor<float>(rng, 7, 3, 32, 32));
  EXPECT_EQ(v.size(), 7u);
}

TEST(Critic, SamplesDoNotInteract) {
  Rng rng(22);
  const auto d = make_critic<double>(micro_critic(), rng);
  const auto a = random_tensor<double>(rng, 1, 1, 16, 16), b = random_tensor<double>(rng, 1, 1, 16, 16);
  Tensor<double> batch(3, 1, 16, 16), perm(3, 1, 16, 16);
  std::copy(a.vec().begin(), a.vec().end(), batch.sample(0));
  std::copy(b.vec().begin(), b.vec().end(), batch.sample(1));
  std::copy(a.vec().begin(), a.vec().end(), batch.sample(2));
  std::copy(b.vec().begin(), b.vec().end(), perm.sample(0));
  std::copy(a.vec().begin(), a.vec().end(), perm.sample(1));
  std::copy(a.vec().begin(), a.vec().end(), perm.sample(2));
  const auto v = d.values(batch), w = d.values(perm);
  EXPECT_EQ(v[0], v[2]);
  EXPECT_EQ(v[0], w[1]);
  EXPECT_EQ(v[1], w[0]);
  EXPECT_EQ(v[0], d.values(a)[0]);
}

TEST(Critic, InputAndParameterGradientsMatchFiniteDifferences) {
  Rng rng(23);
  auto d = make_critic<double>(micro_critic(), rng);
  ASSERT_LE(d.params().total_count(), 5000u);
  auto x = random_tensor<double>(rng, 3, 1, 16, 16);
  const Tensor<double> r(3, 1, 1, 1, 1.0);
  typename Sequential<double>::Trace t;
  d.forward(x, t);
  auto grads = d.params().zeros_like();
  const auto gx = d.backward(t, r, &grads);
  const auto fd = oracle::fd_gradient(
      [&](const std::vector<double>& v) {
        Tensor<double> xx = x;
        xx.vec() = v;
        return weighted_sum(d.forward(xx), r);
      },
      x.vec(), 1e-6);
  EXPECT_LT(oracle::relative_error(gx.vec(), fd), 1e-3);
  EXPECT_LT(testutil::param_grad_error(d.params(), grads, [&] { return weighted_sum(d.forward(x), r); }), 1e-3);
}

TEST(Critic, StrictModeReportsKinks) {
  MlpSpec s;
  s.hidden = {2};
  Rng rng(24);
  auto m = make_mlp<double>(s, rng);
  // place the first hidden unit's pre-activation exactly at zero for x = 0
  m.params()[1].data[0] = 0.0;
  m.params()[2].data[0] = 1.0;  // nonzero upstream weight
  const Tensor<double> x(1, 1, 1, 1, 0.0);
  typename Sequential<double>::Trace t;
  m.forward(x, t);
  const Tensor<double> one(1, 1, 1, 1, 1.0);
  EXPECT_NO_THROW(m.backward(t, one, nullptr, false));
  EXPECT_THROW(m.backward(t, one, nullptr, true), NotDifferentiable);
}

TEST(ParameterIo, RoundTripIsBitwise) {
  const auto dir = testutil::temp_dir("param_io");
  Rng rng(25);
  Generator<float> g(GeneratorSpec{}, rng);
  const auto path = dir / "g.otw";
  save_parameters(g.params(), g.spec().fingerprint(), path);
  const auto back = load_parameters(path, g.spec().fingerprint(), g.params());
  EXPECT_TRUE(back == g.params());
  Generator<float> rebuilt(GeneratorSpec{}, back);
  const auto x = random_tensor<float>(rng, 1, 3, 16, 16);
  EXPECT_TRUE(rebuilt.forward(x) == g.forward(x));
}

TEST(ParameterIo, WrongSpecIsFingerprintError) {
  const auto dir = testutil::temp_dir("param_io_fp");
  Rng rng(26);
  Generator<float> g(GeneratorSpec{}, rng);
  save_parameters(g.params(), g.spec().fingerprint(), dir / "g.otw");
  GeneratorSpec other;
  other.base_channels = 8;
  Generator<float> g2(other, rng);
  EXPECT_THROW(load_parameters(dir / "g.otw", other.fingerprint(), g2.params()), FingerprintMismatch);
  EXPECT_THROW(Generator<float>(other, g.params()), FingerprintMismatch);
}

TEST(ParameterIo, ChecksumMatchesIndependentCrc) {
  const auto dir = testutil::temp_dir("param_io_crc");
  Rng rng(27);
  const auto d = make_critic<float>(CriticSpec{}, rng);
  const auto path = dir / "d.otw";
  save_parameters(d.params(), d.fingerprint(), path);
  std::ifstream in(path, std::ios::binary);
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const std::string payload = bytes.substr(16, bytes.size() - 20);
  EXPECT_EQ(stored_checksum(path), oracle::crc32(payload));
}

TEST(ParameterIo, CorruptionAndTruncationDetected) {
  const auto dir = testutil::temp_dir("param_io_bad");
  Rng rng(28);
  const auto d = make_critic<float>(CriticSpec{}, rng);
  const auto path = dir / "d.otw";
  save_parameters(d.params(), d.fingerprint(), path);
  std::string bytes;
  {
    std::ifstream in(path, std::ios::binary);
    bytes.assign(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
  }
  {
    std::string flipped = bytes;
    flipped[bytes.size() / 2] ^= 0x10;
    std::ofstream(dir / "flip.otw", std::ios::binary) << flipped;
    EXPECT_THROW(load_parameters(dir / "flip.otw", d.fingerprint(), d.params()), CorruptData);
  }
  std::ofstream(dir / "trunc.otw", std::ios::binary) << bytes.substr(0, bytes.size() - 7);
  EXPECT_THROW(load_parameters(dir / "trunc.otw", d.fingerprint(), d.params()), CorruptData);
  EXPECT_THROW(load_parameters(dir / "missing.otw", d.fingerprint(), d.params()), FileNotFound);
}
