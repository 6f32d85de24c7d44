#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <iomanip>
#include <istream>
#include <limits>
#include <numeric>
#include <ostream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "ote/errors.hpp"
#include "ote/image.hpp"

namespace ote {

// ---------------------------------------------------------------------------
// Quality labels

enum class QualityLabel { Good, Usable, Reject };

inline std::string to_string(QualityLabel q) {
  switch (q) {
    case QualityLabel::Good: return "good";
    case QualityLabel::Usable: return "usable";
    case QualityLabel::Reject: return "reject";
  }
  return "?";
}

inline QualityLabel parse_quality(std::string_view s) {
  std::string lower(s);
  for (char& c : lower) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  if (lower == "good") return QualityLabel::Good;
  if (lower == "usable") return QualityLabel::Usable;
  if (lower == "reject") return QualityLabel::Reject;
  throw InvalidArgument("unknown quality label '" + std::string(s) + "'");
}

inline constexpr int kQualityClasses = 3;
inline int class_index(QualityLabel q) { return static_cast<int>(q); }

// ---------------------------------------------------------------------------
// PSNR

/// Returned by psnr() for identical images.
inline constexpr double kPsnrInfinity = std::numeric_limits<double>::infinity();

inline double mse(const ImageTensor& a, const ImageTensor& b) {
  if (!a.same_shape(b)) throw ShapeMismatch("mse: image shapes differ");
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a.data()[i] - b.data()[i];
    acc += d * d;
  }
  return acc / static_cast<double>(a.size());
}

/// 10 log10(1 / MSE) for unit dynamic range.
inline double psnr(const ImageTensor& a, const ImageTensor& b) {
  const double e = mse(a, b);
  if (e == 0.0) return kPsnrInfinity;
  return -10.0 * std::log10(e);
}

// ---------------------------------------------------------------------------
// SSIM / MS-SSIM

struct SsimParams {
  int window_side = 11;
  double gaussian_sigma = 1.5;
  double k1 = 0.01;
  double k2 = 0.03;
  double dynamic_range = 1.0;

  void validate() const {
    if (window_side < 3 || window_side % 2 == 0) throw InvalidArgument("SsimParams: window_side must be odd and >= 3");
    if (!(gaussian_sigma > 0.0)) throw InvalidArgument("SsimParams: sigma must be positive");
    if (!(k1 > 0.0) || !(k2 > 0.0)) throw InvalidArgument("SsimParams: k1 and k2 must be positive");
    if (!(dynamic_range > 0.0)) throw InvalidArgument("SsimParams: dynamic_range must be positive");
  }
  double c1() const { return (k1 * dynamic_range) * (k1 * dynamic_range); }
  double c2() const { return (k2 * dynamic_range) * (k2 * dynamic_range); }
};

inline const std::vector<double>& canonical_ms_ssim_weights() {
  static const std::vector<double> w{0.0448, 0.2856, 0.3001, 0.2363, 0.1333};
  return w;
}

struct MsSsimParams {
  SsimParams base;
  std::vector<double> scale_weights = canonical_ms_ssim_weights();

  int scales() const { return static_cast<int>(scale_weights.size()); }

  /// Checks the invariants and renormalizes the weights to sum to one.
  void normalize() {
    base.validate();
    if (scale_weights.empty() || scale_weights.size() > 5) throw InvalidArgument("MsSsimParams: 1..5 scales required");
    double s = 0.0;
    for (double w : scale_weights) {
      if (!(w > 0.0)) throw InvalidArgument("MsSsimParams: scale weights must be positive");
      s += w;
    }
    for (double& w : scale_weights) w /= s;
  }

  /// Smallest image side accepted for the configured scale count.
  int min_side() const { return base.window_side << (scales() - 1); }

  /// Canonical weights truncated to the largest scale count that an image of
  /// `side` pixels admits, renormalized.
  static MsSsimParams for_side(int side, SsimParams base = {}, int max_scales = 5) {
    base.validate();
    int m = std::min(max_scales, 5);
    while (m > 1 && (base.window_side << (m - 1)) > side) --m;
    if (base.window_side > side) throw InvalidArgument("MsSsimParams::for_side: image smaller than the SSIM window");
    MsSsimParams p;
    p.base = base;
    p.scale_weights.assign(canonical_ms_ssim_weights().begin(), canonical_ms_ssim_weights().begin() + m);
    p.normalize();
    return p;
  }

  static MsSsimParams single_scale(SsimParams base = {}) {
    MsSsimParams p;
    p.base = base;
    p.scale_weights = {1.0};
    p.normalize();
    return p;
  }
};

namespace detail {

inline std::vector<double> gaussian_window(int n, double sigma) {
  std::vector<double> g(n);
  const double r = (n - 1) / 2.0;
  double s = 0.0;
  for (int i = 0; i < n; ++i) {
    g[i] = std::exp(-(i - r) * (i - r) / (2.0 * sigma * sigma));
    s += g[i];
  }
  for (double& v : g) v /= s;
  return g;
}

// Separable "valid" correlation: (h, w) -> (h-n+1, w-n+1).
inline std::vector<double> filter_valid(const double* in, int h, int w, const std::vector<double>& g) {
  const int n = static_cast<int>(g.size());
  const int oh = h - n + 1, ow = w - n + 1;
  std::vector<double> tmp(static_cast<std::size_t>(h) * ow, 0.0);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < ow; ++x) {
      double acc = 0.0;
      for (int k = 0; k < n; ++k) acc += g[k] * in[y * w + x + k];
      tmp[y * ow + x] = acc;
    }
  std::vector<double> out(static_cast<std::size_t>(oh) * ow, 0.0);
  for (int y = 0; y < oh; ++y)
    for (int x = 0; x < ow; ++x) {
      double acc = 0.0;
      for (int k = 0; k < n; ++k) acc += g[k] * tmp[(y + k) * ow + x];
      out[y * ow + x] = acc;
    }
  return out;
}

// Adjoint of filter_valid: (h-n+1, w-n+1) -> (h, w).
inline std::vector<double> filter_valid_adjoint(const std::vector<double>& gout, int h, int w, const std::vector<double>& g) {
  const int n = static_cast<int>(g.size());
  const int oh = h - n + 1, ow = w - n + 1;
  std::vector<double> tmp(static_cast<std::size_t>(h) * ow, 0.0);
  for (int y = 0; y < oh; ++y)
    for (int x = 0; x < ow; ++x)
      for (int k = 0; k < n; ++k) tmp[(y + k) * ow + x] += g[k] * gout[y * ow + x];
  std::vector<double> out(static_cast<std::size_t>(h) * w, 0.0);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < ow; ++x)
      for (int k = 0; k < n; ++k) out[y * w + x + k] += g[k] * tmp[y * ow + x];
  return out;
}

// 2x2 mean pooling; odd trailing rows/columns are dropped.
inline std::vector<double> pool2(const std::vector<double>& in, int h, int w) {
  const int oh = h / 2, ow = w / 2;
  std::vector<double> out(static_cast<std::size_t>(oh) * ow);
  for (int y = 0; y < oh; ++y)
    for (int x = 0; x < ow; ++x)
      out[y * ow + x] = 0.25 * (in[(2 * y) * w + 2 * x] + in[(2 * y) * w + 2 * x + 1] + in[(2 * y + 1) * w + 2 * x] +
                                in[(2 * y + 1) * w + 2 * x + 1]);
  return out;
}

inline void pool2_adjoint_add(const std::vector<double>& gout, int h, int w, std::vector<double>& gin) {
  const int oh = h / 2, ow = w / 2;
  for (int y = 0; y < oh; ++y)
    for (int x = 0; x < ow; ++x) {
      const double g = 0.25 * gout[y * ow + x];
      gin[(2 * y) * w + 2 * x] += g;
      gin[(2 * y) * w + 2 * x + 1] += g;
      gin[(2 * y + 1) * w + 2 * x] += g;
      gin[(2 * y + 1) * w + 2 * x + 1] += g;
    }
}

struct ScaleTerms {
  double mean_cs = 0.0;    // mean contrast-structure term
  double mean_ssim = 0.0;  // mean of luminance * contrast-structure
};

// SSIM terms of one plane pair at one scale. When grad_b is non-null, adds
// g_cs * d(mean_cs)/db + g_ssim * d(mean_ssim)/db into it.
inline ScaleTerms scale_terms(const std::vector<double>& a, const std::vector<double>& b, int h, int w,
                              const std::vector<double>& win, double c1, double c2, double g_cs = 0.0,
                              double g_ssim = 0.0, std::vector<double>* grad_b = nullptr) {
  const std::size_t np = a.size();
  std::vector<double> aa(np), bb(np), ab(np);
  for (std::size_t i = 0; i < np; ++i) {
    aa[i] = a[i] * a[i];
    bb[i] = b[i] * b[i];
    ab[i] = a[i] * b[i];
  }
  const auto mu_a = filter_valid(a.data(), h, w, win);
  const auto mu_b = filter_valid(b.data(), h, w, win);
  const auto e_aa = filter_valid(aa.data(), h, w, win);
  const auto e_bb = filter_valid(bb.data(), h, w, win);
  const auto e_ab = filter_valid(ab.data(), h, w, win);
  const std::size_t m = mu_a.size();
  const double inv_m = 1.0 / static_cast<double>(m);

  ScaleTerms t;
  std::vector<double> d_mu, d_bb, d_ab;
  if (grad_b) {
    d_mu.resize(m);
    d_bb.resize(m);
    d_ab.resize(m);
  }
  for (std::size_t i = 0; i < m; ++i) {
    const double ma = mu_a[i], mb = mu_b[i];
    const double va = e_aa[i] - ma * ma;
    const double vb = e_bb[i] - mb * mb;
    const double cov = e_ab[i] - ma * mb;
    const double l1 = 2.0 * ma * mb + c1, l2 = ma * ma + mb * mb + c1;
    const double n = 2.0 * cov + c2, d = va + vb + c2;
    const double l = l1 / l2, cs = n / d;
    t.mean_cs += cs;
    t.mean_ssim += l * cs;
    if (grad_b) {
      const double dcs_dab = 2.0 / d;
      const double dcs_dbb = -n / (d * d);
      const double dcs_dmu = -2.0 * ma / d + 2.0 * mb * n / (d * d);
      const double dl_dmu = 2.0 * ma / l2 - l1 * 2.0 * mb / (l2 * l2);
      const double wc = g_cs * inv_m, ws = g_ssim * inv_m;
      d_ab[i] = wc * dcs_dab + ws * l * dcs_dab;
      d_bb[i] = wc * dcs_dbb + ws * l * dcs_dbb;
      d_mu[i] = wc * dcs_dmu + ws * (dl_dmu * cs + l * dcs_dmu);
    }
  }
  t.mean_cs *= inv_m;
  t.mean_ssim *= inv_m;

  if (grad_b) {
    const auto g_mu = filter_valid_adjoint(d_mu, h, w, win);
    const auto g_bb = filter_valid_adjoint(d_bb, h, w, win);
    const auto g_ab = filter_valid_adjoint(d_ab, h, w, win);
    for (std::size_t i = 0; i < np; ++i) (*grad_b)[i] += g_mu[i] + 2.0 * b[i] * g_bb[i] + a[i] * g_ab[i];
  }
  return t;
}

inline constexpr double kMsSsimFloor = 1e-8;

// x^w for the MS-SSIM product; fractional powers need a positive base.
inline double ms_power(double x, double w) { return w == 1.0 ? x : std::pow(std::max(x, kMsSsimFloor), w); }
inline double ms_power_log_deriv(double x, double w) {  // d log(x^w)/dx
  if (w == 1.0) return 1.0 / x;
  return x > kMsSsimFloor ? w / x : 0.0;
}

// MS-SSIM of one channel; optional gradient with respect to b.
inline double ms_ssim_plane(std::span<const double> a_in, std::span<const double> b_in, int h, int w,
                            const MsSsimParams& p, std::vector<double>* grad_b, double upstream) {
  const int m = p.scales();
  const auto win = gaussian_window(p.base.window_side, p.base.gaussian_sigma);
  const double c1 = p.base.c1(), c2 = p.base.c2();

  std::vector<std::vector<double>> as(m), bs(m);
  std::vector<int> hs(m), ws(m);
  as[0].assign(a_in.begin(), a_in.end());
  bs[0].assign(b_in.begin(), b_in.end());
  hs[0] = h;
  ws[0] = w;
  for (int s = 1; s < m; ++s) {
    as[s] = pool2(as[s - 1], hs[s - 1], ws[s - 1]);
    bs[s] = pool2(bs[s - 1], hs[s - 1], ws[s - 1]);
    hs[s] = hs[s - 1] / 2;
    ws[s] = ws[s - 1] / 2;
  }

  std::vector<double> term(m);
  for (int s = 0; s < m; ++s) {
    const auto t = scale_terms(as[s], bs[s], hs[s], ws[s], win, c1, c2);
    term[s] = (s == m - 1) ? t.mean_ssim : t.mean_cs;
  }
  double value = 1.0;
  for (int s = 0; s < m; ++s) value *= ms_power(term[s], p.scale_weights[s]);

  if (grad_b) {
    // walk from the coarsest scale back to full resolution
    std::vector<double> carry;
    for (int s = m - 1; s >= 0; --s) {
      std::vector<double> g(bs[s].size(), 0.0);
      if (s < m - 1) pool2_adjoint_add(carry, hs[s], ws[s], g);
      double coeff;
      if (p.scale_weights[s] == 1.0 && m == 1)
        coeff = upstream;
      else
        coeff = upstream * value * ms_power_log_deriv(term[s], p.scale_weights[s]);
      if (s == m - 1)
        scale_terms(as[s], bs[s], hs[s], ws[s], win, c1, c2, 0.0, coeff, &g);
      else
        scale_terms(as[s], bs[s], hs[s], ws[s], win, c1, c2, coeff, 0.0, &g);
      carry = std::move(g);
    }
    for (std::size_t i = 0; i < carry.size(); ++i) (*grad_b)[i] += carry[i];
  }
  return value;
}

}  // namespace detail

/// Gaussian-weighted SSIM averaged over all valid window positions and channels.
inline double ssim(const ImageTensor& a, const ImageTensor& b, const SsimParams& p = {}) {
  p.validate();
  if (!a.same_shape(b)) throw ShapeMismatch("ssim: image shapes differ");
  if (a.height() < p.window_side || a.width() < p.window_side) throw InvalidArgument("ssim: image smaller than window");
  const auto win = detail::gaussian_window(p.window_side, p.gaussian_sigma);
  double acc = 0.0;
  for (int c = 0; c < a.channels(); ++c) {
    std::vector<double> pa(a.plane(c).begin(), a.plane(c).end()), pb(b.plane(c).begin(), b.plane(c).end());
    acc += detail::scale_terms(pa, pb, a.height(), a.width(), win, p.c1(), p.c2()).mean_ssim;
  }
  return acc / a.channels();
}

namespace detail {
inline MsSsimParams checked_ms_params(const ImageTensor& a, const ImageTensor& b, MsSsimParams p) {
  p.normalize();
  if (!a.same_shape(b)) throw ShapeMismatch("ms_ssim: image shapes differ");
  if (std::min(a.height(), a.width()) < p.min_side())
    throw InvalidArgument("ms_ssim: too few pixels for " + std::to_string(p.scales()) + " scales");
  return p;
}
}  // namespace detail

/// Multi-scale SSIM: contrast-structure terms at every scale, luminance at the
/// coarsest only; per-channel values are averaged.
inline double ms_ssim(const ImageTensor& a, const ImageTensor& b, const MsSsimParams& params = MsSsimParams{}) {
  const MsSsimParams p = detail::checked_ms_params(a, b, params);
  double acc = 0.0;
  for (int c = 0; c < a.channels(); ++c)
    acc += detail::ms_ssim_plane(a.plane(c), b.plane(c), a.height(), a.width(), p, nullptr, 0.0);
  return acc / a.channels();
}

/// ms_ssim(a, b) together with its gradient with respect to b (same layout as b).
/// The gradient with respect to a follows by symmetry: swap the arguments.
inline double ms_ssim_grad(const ImageTensor& a, const ImageTensor& b, const MsSsimParams& params,
                           std::vector<double>& grad_b) {
  const MsSsimParams p = detail::checked_ms_params(a, b, params);
  grad_b.assign(b.size(), 0.0);
  const double inv_c = 1.0 / a.channels();
  double acc = 0.0;
  const std::size_t hw = a.plane_size();
  for (int c = 0; c < a.channels(); ++c) {
    std::vector<double> g(hw, 0.0);
    acc += detail::ms_ssim_plane(a.plane(c), b.plane(c), a.height(), a.width(), p, &g, inv_c);
    std::copy(g.begin(), g.end(), grad_b.begin() + static_cast<std::ptrdiff_t>(c * hw));
  }
  return acc * inv_c;
}

// ---------------------------------------------------------------------------
// Agreement metrics

/// K x K counts; rows are the true class, columns the prediction.
class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(int classes) : k_(classes), counts_(static_cast<std::size_t>(classes) * classes, 0) {
    if (classes < 1) throw InvalidArgument("ConfusionMatrix: need at least one class");
  }

  static ConfusionMatrix from_rows(const std::vector<std::vector<std::int64_t>>& rows) {
    ConfusionMatrix m(static_cast<int>(rows.size()));
    for (std::size_t i = 0; i < rows.size(); ++i) {
      if (rows[i].size() != rows.size()) throw InvalidArgument("ConfusionMatrix: matrix must be square");
      for (std::size_t j = 0; j < rows.size(); ++j) {
        if (rows[i][j] < 0) throw InvalidArgument("ConfusionMatrix: negative count");
        m.at(static_cast<int>(i), static_cast<int>(j)) = rows[i][j];
      }
    }
    return m;
  }

  int classes() const noexcept { return k_; }
  std::int64_t& at(int t, int p) { return counts_[static_cast<std::size_t>(t) * k_ + p]; }
  std::int64_t at(int t, int p) const { return counts_[static_cast<std::size_t>(t) * k_ + p]; }
  void add(int truth, int pred) {
    if (truth < 0 || truth >= k_ || pred < 0 || pred >= k_) throw InvalidArgument("ConfusionMatrix: class out of range");
    ++at(truth, pred);
  }
  std::int64_t total() const { return std::accumulate(counts_.begin(), counts_.end(), std::int64_t{0}); }
  std::int64_t diagonal() const {
    std::int64_t d = 0;
    for (int i = 0; i < k_; ++i) d += at(i, i);
    return d;
  }
  double accuracy() const {
    const auto n = total();
    if (n < 1) throw InvalidArgument("ConfusionMatrix: empty matrix");
    return static_cast<double>(diagonal()) / static_cast<double>(n);
  }

  bool operator==(const ConfusionMatrix&) const = default;

 private:
  int k_;
  std::vector<std::int64_t> counts_;
};

/// (p_o - p_e) / (1 - p_e).
inline double cohens_kappa(const ConfusionMatrix& m) {
  const double n = static_cast<double>(m.total());
  if (n < 1) throw InvalidArgument("cohens_kappa: empty confusion matrix");
  const double po = static_cast<double>(m.diagonal()) / n;
  double pe = 0.0;
  for (int i = 0; i < m.classes(); ++i) {
    double row = 0.0, col = 0.0;
    for (int j = 0; j < m.classes(); ++j) {
      row += static_cast<double>(m.at(i, j));
      col += static_cast<double>(m.at(j, i));
    }
    pe += (row / n) * (col / n);
  }
  if (pe >= 1.0 - 1e-15) throw InvalidArgument("cohens_kappa: degenerate matrix (chance agreement is 1)");
  return (po - pe) / (1.0 - pe);
}

struct ScoredLabel {
  double score = 0.0;
  bool positive = false;
};
using ScoredLabels = std::vector<ScoredLabel>;

/// Mann-Whitney AUROC: fraction of (positive, negative) pairs ordered
/// correctly, ties counting one half. Computed from mid-ranks in O(n log n).
inline double auroc(const ScoredLabels& s) {
  std::size_t pos = 0;
  for (const auto& it : s) pos += it.positive ? 1 : 0;
  const std::size_t neg = s.size() - pos;
  if (pos == 0 || neg == 0) throw InvalidArgument("auroc: need at least one positive and one negative");
  for (const auto& it : s)
    if (std::isnan(it.score)) throw InvalidArgument("auroc: NaN score");

  std::vector<std::size_t> order(s.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return s[a].score < s[b].score; });
  // twice the rank sum keeps mid-ranks integral
  std::uint64_t twice_rank_sum = 0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j < order.size() && s[order[j]].score == s[order[i]].score) ++j;
    const std::uint64_t twice_mid = (i + 1) + j;  // ranks i+1..j
    for (std::size_t k = i; k < j; ++k)
      if (s[order[k]].positive) twice_rank_sum += twice_mid;
    i = j;
  }
  const double u = static_cast<double>(twice_rank_sum) / 2.0 - static_cast<double>(pos) * (pos + 1) / 2.0;
  return u / (static_cast<double>(pos) * static_cast<double>(neg));
}

/// Fraction of labels equal to Good.
inline double converted_ratio(const std::vector<QualityLabel>& labels) {
  if (labels.empty()) throw InvalidArgument("converted_ratio: empty label list");
  const auto good = std::count(labels.begin(), labels.end(), QualityLabel::Good);
  return static_cast<double>(good) / static_cast<double>(labels.size());
}

// ---------------------------------------------------------------------------
// Plain-text CSV forms used by the CLI

inline void write_scored_labels_csv(std::ostream& os, const ScoredLabels& s) {
  os << "score,positive\n" << std::setprecision(17);
  for (const auto& it : s) os << it.score << ',' << (it.positive ? 1 : 0) << '\n';
}

inline ScoredLabels read_scored_labels_csv(std::istream& is) {
  ScoredLabels out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty() || (lineno == 1 && line.rfind("score", 0) == 0)) continue;
    const auto comma = line.find(',');
    if (comma == std::string::npos) throw ManifestError("expected 'score,positive'", lineno);
    try {
      const double score = std::stod(line.substr(0, comma));
      const int lab = std::stoi(line.substr(comma + 1));
      if (lab != 0 && lab != 1) throw ManifestError("label must be 0 or 1", lineno);
      out.push_back({score, lab == 1});
    } catch (const std::logic_error&) {
      throw ManifestError("malformed number", lineno);
    }
  }
  return out;
}

inline void write_confusion_csv(std::ostream& os, const ConfusionMatrix& m) {
  for (int i = 0; i < m.classes(); ++i) {
    for (int j = 0; j < m.classes(); ++j) os << (j ? "," : "") << m.at(i, j);
    os << '\n';
  }
}

inline ConfusionMatrix read_confusion_csv(std::istream& is) {
  std::vector<std::vector<std::int64_t>> rows;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<std::int64_t> row;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) {
      try {
        row.push_back(std::stoll(cell));
      } catch (const std::logic_error&) {
        throw ManifestError("malformed count '" + cell + "'", lineno);
      }
    }
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw InvalidArgument("confusion matrix CSV is empty");
  return ConfusionMatrix::from_rows(rows);
}

}  // namespace ote
