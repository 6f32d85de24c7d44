#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "ote/metrics.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace ote;

TEST(Psnr, IdenticalImagesGiveInfinitySentinel) {
  Rng rng(1);
  const auto x = testutil::random_image(rng, 3, 8, 8);
  EXPECT_EQ(psnr(x, x), kPsnrInfinity);
}

TEST(Psnr, UniformOffsetOfOneTenthIsTwentyDecibels) {
  ImageTensor a(1, 16, 16, 0.3), b(1, 16, 16, 0.4);
  EXPECT_NEAR(psnr(a, b), 20.0, 1e-9);
}

TEST(Psnr, MatchesOracleAndIsSymmetric) {
  Rng rng(2);
  for (int i = 0; i < 20; ++i) {
    const auto a = testutil::random_image(rng, 3, 9, 13), b = testutil::random_image(rng, 3, 9, 13);
    EXPECT_NEAR(psnr(a, b), static_cast<double>(oracle::psnr(a, b)), 1e-9);
    EXPECT_EQ(psnr(a, b), psnr(b, a));
  }
  EXPECT_THROW(psnr(ImageTensor(1, 4, 4), ImageTensor(1, 4, 5)), ShapeMismatch);
}

TEST(Ssim, SelfSimilarityIsOne) {
  Rng rng(3);
  const auto x = testutil::random_image(rng, 3, 20, 20);
  EXPECT_NEAR(ssim(x, x), 1.0, 1e-12);
}

TEST(Ssim, ConstantImagesReduceToLuminanceTerm) {
  const ImageTensor a(1, 16, 16, 0.2), b(1, 16, 16, 0.7);
  const double expected = (2 * 0.2 * 0.7 + 1e-4) / (0.2 * 0.2 + 0.7 * 0.7 + 1e-4);
  EXPECT_NEAR(ssim(a, b), expected, 1e-12);
  EXPECT_NEAR(ssim(a, b), 0.5284, 5e-5);
}

TEST(Ssim, SymmetricOnRandomPairs) {
  Rng rng(4);
  for (int i = 0; i < 50; ++i) {
    const auto a = testutil::random_image(rng, 1, 14, 12), b = testutil::random_image(rng, 1, 14, 12);
    EXPECT_NEAR(ssim(a, b), ssim(b, a), 1e-12);
    EXPECT_NEAR(ssim(a, b), static_cast<double>(oracle::ssim(b, a)), 1e-9);
  }
}

TEST(Ssim, RejectsImagesSmallerThanWindow) {
  EXPECT_THROW(ssim(ImageTensor(1, 10, 20), ImageTensor(1, 10, 20)), InvalidArgument);
  SsimParams p;
  p.window_side = 4;
  EXPECT_THROW(ssim(ImageTensor(1, 20, 20), ImageTensor(1, 20, 20), p), InvalidArgument);
}

TEST(MsSsim, SelfSimilarityIsOne) {
  Rng rng(5);
  const auto x = testutil::random_image(rng, 3, 64, 64);
  EXPECT_NEAR(ms_ssim(x, x, MsSsimParams::for_side(64)), 1.0, 1e-12);
}

TEST(MsSsim, SingleScaleEqualsSsim) {
  Rng rng(6);
  for (int i = 0; i < 10; ++i) {
    const auto a = testutil::random_image(rng, 3, 24, 24), b = testutil::smooth_image(rng, 3, 24, 24);
    EXPECT_NEAR(ms_ssim(a, b, MsSsimParams::single_scale()), ssim(a, b), 1e-14);
  }
}

TEST(MsSsim, MatchesOracle) {
  Rng rng(7);
  const auto p = MsSsimParams::for_side(48);
  ASSERT_EQ(p.scales(), 3);
  for (int i = 0; i < 5; ++i) {
    const auto a = testutil::smooth_image(rng, 1, 48, 48);
    auto b = a;
    for (auto& v : b.data()) v = std::clamp(v + rng.normal(0, 0.05), 0.0, 1.0);
    const double expected = static_cast<double>(oracle::ms_ssim(a, b, {0.0448L, 0.2856L, 0.3001L}));
    EXPECT_NEAR(ms_ssim(a, b, p), expected, 1e-9);
  }
}

TEST(MsSsim, DecreasesWithNoiseLevel) {
  Rng rng(8);
  const auto clean = testutil::smooth_image(rng, 3, 64, 64);
  const auto p = MsSsimParams::for_side(64);
  double prev = 1.0;
  for (double sigma : {0.02, 0.05, 0.1}) {
    Rng noise(99);
    auto noisy = clean;
    for (auto& v : noisy.data()) v = std::clamp(v + noise.normal(0, sigma), 0.0, 1.0);
    const double v = ms_ssim(clean, noisy, p);
    EXPECT_LT(v, prev) << sigma;
    EXPECT_NEAR(v, static_cast<double>(oracle::ms_ssim(clean, noisy, {0.0448L, 0.2856L, 0.3001L})), 1e-9);
    prev = v;
  }
}

TEST(MsSsim, ScaleCountReducedForSmallImages) {
  EXPECT_EQ(MsSsimParams::for_side(256).scales(), 5);
  EXPECT_EQ(MsSsimParams::for_side(64).scales(), 3);
  EXPECT_EQ(MsSsimParams::for_side(21).scales(), 1);
  const auto p = MsSsimParams::for_side(64);
  double s = 0;
  for (double w : p.scale_weights) s += w;
  EXPECT_NEAR(s, 1.0, 1e-15);
  EXPECT_THROW(ms_ssim(ImageTensor(1, 32, 32), ImageTensor(1, 32, 32), MsSsimParams{}), InvalidArgument);
  MsSsimParams bad;
  bad.scale_weights = {0.5, -0.5};
  EXPECT_THROW(bad.normalize(), InvalidArgument);
}

TEST(MsSsim, GradientMatchesFiniteDifferences) {
  Rng rng(9);
  const auto p = MsSsimParams::for_side(44);
  ASSERT_EQ(p.scales(), 3);
  const auto a = testutil::smooth_image(rng, 1, 44, 44);
  auto b = a;
  for (auto& v : b.data()) v = std::clamp(v + rng.normal(0, 0.08), 0.05, 0.95);
  std::vector<double> grad;
  ms_ssim_grad(a, b, p, grad);
  auto f = [&](const std::vector<double>& x) {
    ImageTensor bb(1, 44, 44);
    bb.data() = x;
    return ms_ssim(a, bb, p);
  };
  // spot-check a spread of pixels
  for (std::size_t idx : {0ul, 45ul, 300ul, 968ul, 1500ul, 1935ul}) {
    std::vector<double> x = b.data();
    const double h = 1e-5;
    x[idx] += h;
    const double fp = f(x);
    x[idx] -= 2 * h;
    const double fm = f(x);
    const double fd = (fp - fm) / (2 * h);
    EXPECT_NEAR(grad[idx], fd, 1e-3 * std::max(1e-4, std::fabs(fd))) << idx;
  }
}

TEST(MsSsim, GradientWithRespectToFirstArgumentBySymmetry) {
  Rng rng(10);
  const auto p = MsSsimParams::for_side(32);
  const auto a = testutil::random_image(rng, 3, 32, 32), b = testutil::smooth_image(rng, 3, 32, 32);
  std::vector<double> ga, gb;
  const double v1 = ms_ssim_grad(b, a, p, ga);
  const double v2 = ms_ssim_grad(a, b, p, gb);
  EXPECT_NEAR(v1, v2, 1e-13);
}

TEST(CohensKappa, PerfectAgreementIsOne) {
  EXPECT_DOUBLE_EQ(cohens_kappa(ConfusionMatrix::from_rows({{5, 0, 0}, {0, 7, 0}, {0, 0, 2}})), 1.0);
}

TEST(CohensKappa, ChanceLevelIsZero) {
  EXPECT_NEAR(cohens_kappa(ConfusionMatrix::from_rows({{25, 25}, {25, 25}})), 0.0, 1e-15);
}

TEST(CohensKappa, WorkedExample) {
  EXPECT_NEAR(cohens_kappa(ConfusionMatrix::from_rows({{20, 5}, {10, 15}})), 0.4, 1e-12);
}

TEST(CohensKappa, ScaleInvarianceAndOracle) {
  Rng rng(11);
  for (int t = 0; t < 30; ++t) {
    const int k = 2 + static_cast<int>(rng.index(4));
    std::vector<std::vector<std::int64_t>> rows(k, std::vector<std::int64_t>(k));
    for (auto& r : rows)
      for (auto& v : r) v = static_cast<std::int64_t>(rng.index(20)) + 1;
    auto scaled = rows;
    for (auto& r : scaled)
      for (auto& v : r) v *= 7;
    const double kap = cohens_kappa(ConfusionMatrix::from_rows(rows));
    EXPECT_NEAR(kap, cohens_kappa(ConfusionMatrix::from_rows(scaled)), 1e-12);
    EXPECT_NEAR(kap, static_cast<double>(oracle::kappa(rows)), 1e-12);
  }
}

TEST(CohensKappa, Errors) {
  EXPECT_THROW(cohens_kappa(ConfusionMatrix(2)), InvalidArgument);
  EXPECT_THROW(cohens_kappa(ConfusionMatrix::from_rows({{4, 0}, {0, 0}})), InvalidArgument);
  EXPECT_THROW(ConfusionMatrix::from_rows({{1, -1}, {0, 0}}), InvalidArgument);
}

TEST(Auroc, PerfectRanking) {
  EXPECT_DOUBLE_EQ(auroc({{0.9, true}, {0.8, true}, {0.1, false}, {0.2, false}}), 1.0);
}

TEST(Auroc, AllTiesIsHalf) {
  EXPECT_DOUBLE_EQ(auroc({{0.3, true}, {0.3, false}, {0.3, true}, {0.3, false}, {0.3, false}}), 0.5);
}

TEST(Auroc, WorkedExample) {
  EXPECT_DOUBLE_EQ(auroc({{0.9, true}, {0.8, false}, {0.7, true}, {0.6, false}}), 0.75);
}

TEST(Auroc, NegatedScoresComplement) {
  Rng rng(12);
  for (int t = 0; t < 30; ++t) {
    ScoredLabels s, neg;
    std::vector<std::pair<double, bool>> items;
    const int n = 2 + static_cast<int>(rng.index(60));
    for (int i = 0; i < n; ++i) {
      const double sc = static_cast<double>(rng.index(10)) / 10.0;  // plenty of ties
      const bool pos = i == 0 ? true : (i == 1 ? false : rng.bernoulli(0.4));
      s.push_back({sc, pos});
      neg.push_back({-sc, pos});
      items.emplace_back(sc, pos);
    }
    EXPECT_NEAR(auroc(s), 1.0 - auroc(neg), 1e-12);
    EXPECT_NEAR(auroc(s), static_cast<double>(oracle::auroc(items)), 1e-12);
  }
}

TEST(Auroc, SingleClassIsError) {
  EXPECT_THROW(auroc({{0.1, true}, {0.2, true}}), InvalidArgument);
  EXPECT_THROW(auroc({}), InvalidArgument);
}

TEST(ConvertedRatio, Basics) {
  using Q = QualityLabel;
  EXPECT_EQ(converted_ratio({Q::Good, Q::Good}), 1.0);
  EXPECT_EQ(converted_ratio({Q::Reject, Q::Usable}), 0.0);
  EXPECT_EQ(converted_ratio({Q::Good, Q::Reject, Q::Good, Q::Usable, Q::Reject, Q::Good, Q::Reject, Q::Usable}), 0.375);
  EXPECT_THROW(converted_ratio({}), InvalidArgument);
}

TEST(QualityLabel, ParsesCaseInsensitively) {
  EXPECT_EQ(parse_quality("GOOD"), QualityLabel::Good);
  EXPECT_EQ(parse_quality("Usable"), QualityLabel::Usable);
  EXPECT_EQ(parse_quality("reject"), QualityLabel::Reject);
  EXPECT_THROW(parse_quality("meh"), InvalidArgument);
}

TEST(MetricCsv, ScoredLabelsAndConfusionRoundTrip) {
  const ScoredLabels s{{0.25, true}, {0.125, false}, {1.0 / 3.0, true}};
  std::stringstream ss;
  write_scored_labels_csv(ss, s);
  const auto back = read_scored_labels_csv(ss);
  ASSERT_EQ(back.size(), 3u);
  EXPECT_EQ(back[2].score, 1.0 / 3.0);
  EXPECT_EQ(auroc(back), auroc(s));

  const auto m = ConfusionMatrix::from_rows({{20, 5}, {10, 15}});
  std::stringstream cs;
  write_confusion_csv(cs, m);
  EXPECT_EQ(cs.str(), "20,5\n10,15\n");
  EXPECT_EQ(cohens_kappa(read_confusion_csv(cs)), cohens_kappa(m));
  std::stringstream bad("1,2\n3,x\n");
  EXPECT_THROW(read_confusion_csv(bad), ManifestError);
}
