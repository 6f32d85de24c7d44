#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <map>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "ote/degrade.hpp"
#include "ote/errors.hpp"
#include "ote/metrics.hpp"
#include "ote/networks.hpp"
#include "ote/optim.hpp"
#include "ote/pairing.hpp"
#include "ote/png_io.hpp"
#include "ote/serialize.hpp"

// Evaluation: small image classifiers (quality and DR grade), the
// no-reference and full-reference protocols, and the report format.

namespace ote {

// ---------------------------------------------------------------------------
// Classifiers

struct ClassifierSpec {
  int in_channels = 3;
  int base_channels = 8;
  int conv_layers = 3;
  int classes = kQualityClasses;
  double leaky_slope = 0.2;

  void validate() const {
    if (in_channels < 1 || base_channels < 1) throw InvalidArgument("ClassifierSpec: channel counts must be >= 1");
    if (conv_layers < 1) throw InvalidArgument("ClassifierSpec: conv_layers must be >= 1");
    if (classes < 2) throw InvalidArgument("ClassifierSpec: need at least two classes");
  }
  std::string fingerprint() const {
    std::ostringstream os;
    os << "classifier/v1 in=" << in_channels << " base=" << base_channels << " layers=" << conv_layers
       << " classes=" << classes << " slope=" << leaky_slope;
    return os.str();
  }
};

/// Stride-2 convolutions, global average pooling, linear head with one logit per class.
template <class T>
Sequential<T> make_classifier(const ClassifierSpec& spec, Rng& rng) {
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
  layers.push_back(nn::Dense::make(p, "head", c, spec.classes, rng));
  return Sequential<T>(std::move(layers), std::move(p), spec.fingerprint());
}

/// Numerically stable softmax of one logit row.
inline std::vector<double> softmax(const float* logits, int k) {
  std::vector<double> p(k);
  double mx = logits[0];
  for (int j = 1; j < k; ++j) mx = std::max(mx, static_cast<double>(logits[j]));
  double s = 0.0;
  for (int j = 0; j < k; ++j) s += p[j] = std::exp(static_cast<double>(logits[j]) - mx);
  for (double& v : p) v /= s;
  return p;
}

inline int argmax(const std::vector<double>& p) {
  return static_cast<int>(std::max_element(p.begin(), p.end()) - p.begin());
}

class ImageClassifier {
 public:
  ImageClassifier(ClassifierSpec spec, int image_side, Rng& rng)
      : spec_(spec), side_(image_side), net_(make_classifier<float>(spec, rng)) {
    if (image_side < 2) throw InvalidArgument("ImageClassifier: image side must be >= 2");
  }

  const ClassifierSpec& spec() const noexcept { return spec_; }
  int image_side() const noexcept { return side_; }
  Sequential<float>& net() noexcept { return net_; }
  const Sequential<float>& net() const noexcept { return net_; }

  void check_shape(const ImageTensor& img) const {
    if (img.channels() != spec_.in_channels || img.height() != side_ || img.width() != side_)
      throw ShapeMismatch("classifier expects " + std::to_string(spec_.in_channels) + "x" + std::to_string(side_) + "x" +
                          std::to_string(side_) + " images, got " + std::to_string(img.channels()) + "x" +
                          std::to_string(img.height()) + "x" + std::to_string(img.width()));
  }

  /// Class distribution for each image, in input order.
  std::vector<std::vector<double>> probabilities(const std::vector<ImageTensor>& images, int batch = 32) const {
    for (const auto& img : images) check_shape(img);
    std::vector<std::vector<double>> out;
    out.reserve(images.size());
    for (std::size_t i = 0; i < images.size(); i += batch) {
      const std::vector<ImageTensor> chunk(images.begin() + i, images.begin() + std::min(images.size(), i + batch));
      const auto logits = net_.forward(to_tensor<float>(chunk));
      for (int n = 0; n < logits.n(); ++n) out.push_back(softmax(logits.sample(n), spec_.classes));
    }
    return out;
  }

  std::vector<int> predict(const std::vector<ImageTensor>& images) const {
    std::vector<int> out;
    for (const auto& p : probabilities(images)) out.push_back(argmax(p));
    return out;
  }

  void save(const std::filesystem::path& path, const std::string& kind) const {
    Container c;
    c.fingerprint = spec_.fingerprint();
    c.metadata = {{"kind", kind},
                  {"created", utc_timestamp()},
                  {"image_side", std::to_string(side_)},
                  {"in_channels", std::to_string(spec_.in_channels)},
                  {"base_channels", std::to_string(spec_.base_channels)},
                  {"conv_layers", std::to_string(spec_.conv_layers)},
                  {"classes", std::to_string(spec_.classes)}};
    std::ostringstream slope;
    slope << std::setprecision(17) << spec_.leaky_slope;
    c.metadata["leaky_slope"] = slope.str();
    put_params(c, "classifier", net_.params());
    write_container(path, c);
  }

  /// Loads a classifier saved with the given kind; the stored fingerprint must
  /// match the one rebuilt from the stored spec.
  static ImageClassifier load(const std::filesystem::path& path, const std::string& kind) {
    const Container c = read_container(path);
    auto field = [&](const char* key) {
      const auto it = c.metadata.find(key);
      if (it == c.metadata.end()) throw CorruptData(std::string("classifier file lacks ") + key + ": " + path.string());
      return it->second;
    };
    if (field("kind") != kind)
      throw FingerprintMismatch("expected a " + kind + " classifier, file holds a " + field("kind") + " classifier");
    ClassifierSpec spec;
    try {
      spec.in_channels = std::stoi(field("in_channels"));
      spec.base_channels = std::stoi(field("base_channels"));
      spec.conv_layers = std::stoi(field("conv_layers"));
      spec.classes = std::stoi(field("classes"));
      spec.leaky_slope = std::stod(field("leaky_slope"));
    } catch (const std::logic_error&) {
      throw CorruptData("classifier file has malformed spec metadata: " + path.string());
    }
    if (c.fingerprint != spec.fingerprint()) throw FingerprintMismatch("classifier fingerprint does not match its spec");
    Rng scratch(0);
    ImageClassifier out(spec, std::stoi(field("image_side")), scratch);
    out.net_.load_params(get_params(c, "classifier", out.net_.params()));
    return out;
  }

 private:
  ClassifierSpec spec_;
  int side_;
  Sequential<float> net_;
};

inline constexpr const char* kQualityKind = "quality";
inline constexpr const char* kDrKind = "dr_grade";

struct ClassifierTrainConfig {
  int epochs = 40;
  int batch_size = 16;
  double lr = 2e-3;
  int image_side = 64;
  ClassifierSpec spec;
  std::uint64_t seed = 0;

  void validate() const {
    spec.validate();
    if (epochs < 0) throw InvalidArgument("classifier epochs must be >= 0");
    if (batch_size < 1) throw InvalidArgument("classifier batch_size must be >= 1");
    if (!(lr > 0.0)) throw InvalidArgument("classifier lr must be positive");
  }
};

/// Minibatch cross-entropy training with RMSprop. Labels index the classes.
inline ImageClassifier train_classifier(const std::vector<ImageTensor>& images, const std::vector<int>& labels,
                                        const ClassifierTrainConfig& cfg) {
  cfg.validate();
  if (images.size() != labels.size()) throw InvalidArgument("train_classifier: image and label counts differ");
  if (images.empty()) throw InvalidArgument("train_classifier: no training images");
  for (int l : labels)
    if (l < 0 || l >= cfg.spec.classes) throw InvalidArgument("train_classifier: label out of range");
  Rng init(derive_seed(cfg.seed, 21)), order_rng(derive_seed(cfg.seed, 22));
  ImageClassifier clf(cfg.spec, cfg.image_side, init);
  for (const auto& img : images) clf.check_shape(img);
  RmsProp<float> opt(clf.net().params());
  std::vector<std::size_t> order(images.size());
  std::iota(order.begin(), order.end(), 0);
  const int k = cfg.spec.classes;
  for (int e = 0; e < cfg.epochs; ++e) {
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[order_rng.index(i)]);
    for (std::size_t s = 0; s < order.size(); s += cfg.batch_size) {
      const std::size_t n = std::min<std::size_t>(cfg.batch_size, order.size() - s);
      std::vector<ImageTensor> batch;
      for (std::size_t j = 0; j < n; ++j) batch.push_back(images[order[s + j]]);
      typename Sequential<float>::Trace trace;
      const auto logits = clf.net().forward(to_tensor<float>(batch), trace);
      Tensor<float> g(logits.n(), k, 1, 1);
      for (std::size_t j = 0; j < n; ++j) {
        const auto p = softmax(logits.sample(static_cast<int>(j)), k);
        const int y = labels[order[s + j]];
        if (!std::isfinite(std::log(std::max(p[y], 1e-300))))
          throw NonFiniteLoss("train_classifier: non-finite cross-entropy at epoch " + std::to_string(e));
        for (int c = 0; c < k; ++c) g.sample(static_cast<int>(j))[c] = static_cast<float>((p[c] - (c == y)) / n);
      }
      auto grads = clf.net().params().zeros_like();
      clf.net().backward(trace, g, &grads);
      opt.step(clf.net().params(), grads, cfg.lr);
    }
  }
  return clf;
}

// ---------------------------------------------------------------------------
// Train/test partition

/// 64-bit FNV-1a; stable across platforms, used for the id split.
inline std::uint64_t fnv1a64(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

/// One id in five (by hash) is held out for testing; the rest train.
inline bool is_heldout(const std::string& id) { return fnv1a64(id) % 5 == 0; }

inline constexpr const char* kSplitNote = "split: 80/20 by id hash (FNV-1a 64 mod 5 == 0 held out)";

struct QualityTrainResult {
  ImageClassifier classifier;
  std::size_t train_count = 0, heldout_count = 0;
  ConfusionMatrix heldout_confusion{kQualityClasses};
  double heldout_kappa = 0.0;
  double heldout_auroc = 0.0;  // Good vs rest, scored by P(Good)
};

/// Trains the quality classifier on the training part of a manifest and scores
/// it on the held-out part.
inline QualityTrainResult train_quality_classifier(const Records& records, const ImageSource& source,
                                                   ClassifierTrainConfig cfg) {
  cfg.spec.classes = kQualityClasses;
  std::vector<bool> seen(kQualityClasses, false);
  for (const auto& r : records) seen[class_index(r.quality)] = true;
  if (std::count(seen.begin(), seen.end(), true) < 2)
    throw InvalidArgument("train_quality_classifier: manifest needs at least two quality classes");

  std::vector<ImageTensor> train_x, test_x;
  std::vector<int> train_y, test_y;
  for (const auto& r : records) {
    auto img = center_crop_resize(source(r), cfg.image_side);
    (is_heldout(r.id) ? test_x : train_x).push_back(std::move(img));
    (is_heldout(r.id) ? test_y : train_y).push_back(class_index(r.quality));
  }
  if (train_x.empty() || test_x.empty())
    throw InvalidArgument("train_quality_classifier: too few records for an 80/20 split");
  const bool has_good = std::count(test_y.begin(), test_y.end(), class_index(QualityLabel::Good)) > 0;
  const bool has_rest = std::count(test_y.begin(), test_y.end(), class_index(QualityLabel::Good)) <
                        static_cast<std::ptrdiff_t>(test_y.size());
  if (!has_good || !has_rest)
    throw InvalidArgument("train_quality_classifier: held-out part lacks Good or non-Good records; add more records");

  QualityTrainResult res{train_classifier(train_x, train_y, cfg), train_x.size(), test_x.size()};
  ScoredLabels scored;
  const auto probs = res.classifier.probabilities(test_x);
  for (std::size_t i = 0; i < probs.size(); ++i) {
    res.heldout_confusion.add(test_y[i], argmax(probs[i]));
    scored.push_back({probs[i][class_index(QualityLabel::Good)], test_y[i] == class_index(QualityLabel::Good)});
  }
  res.heldout_kappa = cohens_kappa(res.heldout_confusion);
  res.heldout_auroc = auroc(scored);
  return res;
}

// ---------------------------------------------------------------------------
// Report

inline constexpr int kDrClasses = kMaxDrGrade + 1;

/// One evaluated image. Fields a protocol does not produce stay empty.
struct EvalRow {
  std::string id;
  std::optional<double> psnr_baseline, psnr_enhanced;
  std::optional<double> ssim_baseline, ssim_enhanced;
  std::optional<QualityLabel> quality_verdict;
  std::optional<int> dr_grade_true, dr_grade_pred;
  std::optional<double> ms_ssim_baseline, ms_ssim_enhanced, ms_ssim_to_input;
  std::optional<double> p_good;
  std::vector<double> dr_scores;  // empty or one probability per grade

  bool operator==(const EvalRow&) const = default;
};

/// Aggregates, each a pure function of the rows.
struct EvalSummary {
  std::size_t rows = 0;
  std::optional<double> converted_ratio;
  std::optional<ConfusionMatrix> dr_confusion;
  std::optional<double> accuracy, kappa, auroc;
  std::optional<double> mean_psnr_baseline, mean_psnr_enhanced;
  std::optional<double> mean_ssim_baseline, mean_ssim_enhanced;
  std::optional<double> mean_ms_ssim_baseline, mean_ms_ssim_enhanced, mean_ms_ssim_to_input;

  bool operator==(const EvalSummary&) const = default;
};

namespace detail {

inline std::optional<double> mean_of(const std::vector<EvalRow>& rows, std::optional<double> EvalRow::*field) {
  double s = 0.0;
  std::size_t n = 0;
  for (const auto& r : rows)
    if (r.*field) {
      s += *(r.*field);
      ++n;
    }
  if (n == 0) return std::nullopt;
  return s / static_cast<double>(n);
}

}  // namespace detail

/// DR AUROC is the mean of the one-vs-rest AUROCs over grades that have both
/// positives and negatives among the predicted rows.
inline EvalSummary summarize(const std::vector<EvalRow>& rows) {
  EvalSummary s;
  s.rows = rows.size();
  std::vector<QualityLabel> verdicts;
  for (const auto& r : rows)
    if (r.quality_verdict) verdicts.push_back(*r.quality_verdict);
  if (!verdicts.empty()) s.converted_ratio = converted_ratio(verdicts);

  ConfusionMatrix cm(kDrClasses);
  std::vector<const EvalRow*> graded;
  for (const auto& r : rows)
    if (r.dr_grade_true && r.dr_grade_pred) {
      cm.add(*r.dr_grade_true, *r.dr_grade_pred);
      graded.push_back(&r);
    }
  if (!graded.empty()) {
    s.dr_confusion = cm;
    s.accuracy = cm.accuracy();
    try {
      s.kappa = cohens_kappa(cm);
    } catch (const InvalidArgument&) {
      // chance agreement of one: kappa undefined
    }
    double acc = 0.0;
    int used = 0;
    for (int g = 0; g < kDrClasses; ++g) {
      ScoredLabels sl;
      std::size_t pos = 0;
      for (const auto* r : graded) {
        if (r->dr_scores.size() != static_cast<std::size_t>(kDrClasses)) continue;
        sl.push_back({r->dr_scores[g], *r->dr_grade_true == g});
        pos += *r->dr_grade_true == g;
      }
      if (pos == 0 || pos == sl.size()) continue;
      acc += ote::auroc(sl);
      ++used;
    }
    if (used > 0) s.auroc = acc / used;
  }
  s.mean_psnr_baseline = detail::mean_of(rows, &EvalRow::psnr_baseline);
  s.mean_psnr_enhanced = detail::mean_of(rows, &EvalRow::psnr_enhanced);
  s.mean_ssim_baseline = detail::mean_of(rows, &EvalRow::ssim_baseline);
  s.mean_ssim_enhanced = detail::mean_of(rows, &EvalRow::ssim_enhanced);
  s.mean_ms_ssim_baseline = detail::mean_of(rows, &EvalRow::ms_ssim_baseline);
  s.mean_ms_ssim_enhanced = detail::mean_of(rows, &EvalRow::ms_ssim_enhanced);
  s.mean_ms_ssim_to_input = detail::mean_of(rows, &EvalRow::ms_ssim_to_input);
  return s;
}

struct EvalReport {
  std::vector<std::string> notes;  // protocol details, written as '#' lines
  std::vector<EvalRow> rows;

  EvalSummary summary() const { return summarize(rows); }
};

// The first eight columns are fixed; the rest carry what the aggregates need.
inline const std::vector<std::string>& report_columns() {
  static const std::vector<std::string> cols{
      "id",        "psnr_baseline", "psnr_enhanced", "ssim_baseline",    "ssim_enhanced",    "quality_verdict",
      "dr_grade_true", "dr_grade_pred", "ms_ssim_baseline", "ms_ssim_enhanced", "ms_ssim_to_input", "p_good",
      "dr_p0",     "dr_p1",         "dr_p2",         "dr_p3",            "dr_p4"};
  return cols;
}

namespace detail {

inline std::string cell(std::optional<double> v) {
  if (!v) return "";
  if (std::isinf(*v)) return *v > 0 ? "inf" : "-inf";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", *v);
  return buf;
}

inline std::optional<double> parse_real(const std::string& s, int line) {
  if (s.empty()) return std::nullopt;
  if (s == "inf") return kPsnrInfinity;
  if (s == "-inf") return -kPsnrInfinity;
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(s, &used);
  } catch (const std::logic_error&) {
    used = 0;
  }
  if (used != s.size()) throw ManifestError("report: malformed number '" + s + "'", line);
  return v;
}

inline std::optional<int> parse_int(const std::string& s, int line) {
  if (s.empty()) return std::nullopt;
  std::size_t used = 0;
  int v = 0;
  try {
    v = std::stoi(s, &used);
  } catch (const std::logic_error&) {
    used = 0;
  }
  if (used != s.size() || v < 0 || v > kMaxDrGrade) throw ManifestError("report: bad grade '" + s + "'", line);
  return v;
}

}  // namespace detail

inline void write_report_csv(std::ostream& os, const EvalReport& rep) {
  for (const auto& n : rep.notes) os << "# " << n << '\n';
  const auto& cols = report_columns();
  for (std::size_t i = 0; i < cols.size(); ++i) os << (i ? "," : "") << cols[i];
  os << '\n';
  for (const auto& r : rep.rows) {
    if (r.id.find_first_of(",\n") != std::string::npos) throw InvalidArgument("report: id contains a separator: " + r.id);
    os << r.id << ',' << detail::cell(r.psnr_baseline) << ',' << detail::cell(r.psnr_enhanced) << ','
       << detail::cell(r.ssim_baseline) << ',' << detail::cell(r.ssim_enhanced) << ','
       << (r.quality_verdict ? to_string(*r.quality_verdict) : "") << ','
       << (r.dr_grade_true ? std::to_string(*r.dr_grade_true) : "") << ','
       << (r.dr_grade_pred ? std::to_string(*r.dr_grade_pred) : "") << ',' << detail::cell(r.ms_ssim_baseline) << ','
       << detail::cell(r.ms_ssim_enhanced) << ',' << detail::cell(r.ms_ssim_to_input) << ','
       << detail::cell(r.p_good);
    for (int g = 0; g < kDrClasses; ++g)
      os << ',' << (r.dr_scores.empty() ? std::string() : detail::cell(r.dr_scores[g]));
    os << '\n';
  }
}

inline EvalReport read_report_csv(std::istream& is) {
  EvalReport rep;
  std::string line;
  int lineno = 0;
  bool header = false;
  while (std::getline(is, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!header && line.rfind("# ", 0) == 0) {
      rep.notes.push_back(line.substr(2));
      continue;
    }
    const auto f = detail::split_row(line);
    if (!header) {
      if (f != report_columns()) throw ManifestError("report: unexpected header", lineno);
      header = true;
      continue;
    }
    if (line.empty()) continue;
    if (f.size() != report_columns().size()) throw ManifestError("report: wrong number of fields", lineno);
    EvalRow r;
    r.id = f[0];
    r.psnr_baseline = detail::parse_real(f[1], lineno);
    r.psnr_enhanced = detail::parse_real(f[2], lineno);
    r.ssim_baseline = detail::parse_real(f[3], lineno);
    r.ssim_enhanced = detail::parse_real(f[4], lineno);
    if (!f[5].empty()) {
      try {
        r.quality_verdict = parse_quality(f[5]);
      } catch (const InvalidArgument&) {
        throw ManifestError("report: unknown quality label '" + f[5] + "'", lineno);
      }
    }
    r.dr_grade_true = detail::parse_int(f[6], lineno);
    r.dr_grade_pred = detail::parse_int(f[7], lineno);
    r.ms_ssim_baseline = detail::parse_real(f[8], lineno);
    r.ms_ssim_enhanced = detail::parse_real(f[9], lineno);
    r.ms_ssim_to_input = detail::parse_real(f[10], lineno);
    r.p_good = detail::parse_real(f[11], lineno);
    if (!f[12].empty())
      for (int g = 0; g < kDrClasses; ++g) {
        const auto v = detail::parse_real(f[12 + g], lineno);
        if (!v) throw ManifestError("report: partial DR score columns", lineno);
        r.dr_scores.push_back(*v);
      }
    rep.rows.push_back(std::move(r));
  }
  if (!header) throw ManifestError("report: missing header", lineno + 1);
  return rep;
}

inline void save_report_csv(const std::filesystem::path& path, const EvalReport& rep) {
  std::ofstream out(path);
  if (!out) throw WriteFailure("cannot open for writing: " + path.string());
  write_report_csv(out, rep);
  if (!out) throw WriteFailure("write failed: " + path.string());
}

inline EvalReport load_report_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FileNotFound("no such file: " + path.string());
  return read_report_csv(in);
}

/// Aligned text rendering: a no-reference block (CR, accuracy, kappa, AUC) and
/// a full-reference block (PSNR, SSIM, MS-SSIM for degraded and enhanced).
inline std::string render_table(const EvalReport& rep) {
  const EvalSummary s = rep.summary();
  auto fmt = [](std::optional<double> v) {
    if (!v) return std::string("-");
    if (std::isinf(*v)) return std::string(*v > 0 ? "inf" : "-inf");
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.4f", *v);
    return std::string(buf);
  };
  std::ostringstream os;
  for (const auto& n : rep.notes) os << "# " << n << '\n';
  os << "rows: " << s.rows << "\n\n";
  if (s.converted_ratio || s.accuracy) {
    os << "No-reference\n";
    os << std::left << std::setw(10) << "" << std::right << std::setw(10) << "CR" << std::setw(10) << "Accuracy"
       << std::setw(10) << "Kappa" << std::setw(10) << "AUC" << '\n';
    os << std::left << std::setw(10) << "Enhanced" << std::right << std::setw(10) << fmt(s.converted_ratio)
       << std::setw(10) << fmt(s.accuracy) << std::setw(10) << fmt(s.kappa) << std::setw(10) << fmt(s.auroc) << "\n\n";
  }
  if (s.mean_psnr_baseline || s.mean_psnr_enhanced) {
    os << "Full-reference\n";
    os << std::left << std::setw(10) << "" << std::right << std::setw(10) << "PSNR" << std::setw(10) << "SSIM"
       << std::setw(10) << "MS-SSIM" << '\n';
    os << std::left << std::setw(10) << "Degraded" << std::right << std::setw(10) << fmt(s.mean_psnr_baseline)
       << std::setw(10) << fmt(s.mean_ssim_baseline) << std::setw(10) << fmt(s.mean_ms_ssim_baseline) << '\n';
    os << std::left << std::setw(10) << "Enhanced" << std::right << std::setw(10) << fmt(s.mean_psnr_enhanced)
       << std::setw(10) << fmt(s.mean_ssim_enhanced) << std::setw(10) << fmt(s.mean_ms_ssim_enhanced) << '\n';
    if (s.mean_ms_ssim_to_input) os << "MS-SSIM(enhanced, input): " << fmt(s.mean_ms_ssim_to_input) << '\n';
  }
  return os.str();
}

// ---------------------------------------------------------------------------
// Protocols

using ImageLookup = std::function<ImageTensor(const std::string& id)>;

/// Reads <dir>/<id>.png.
inline ImageLookup directory_lookup(std::filesystem::path dir) {
  return [dir = std::move(dir)](const std::string& id) {
    const auto p = dir / (id + ".png");
    if (!std::filesystem::exists(p)) throw FileNotFound("no image for id '" + id + "': " + p.string());
    return load_image(p);
  };
}

/// Reads the path a manifest gives for an id.
inline ImageLookup manifest_lookup(const Records& records) {
  std::map<std::string, std::filesystem::path> paths;
  for (const auto& r : records) paths[r.id] = r.path;
  return [paths = std::move(paths)](const std::string& id) {
    const auto it = paths.find(id);
    if (it == paths.end()) throw FileNotFound("id '" + id + "' is not in the manifest");
    return load_image(it->second);
  };
}

struct FullReferenceOptions {
  SsimParams ssim;
  int ms_ssim_max_scales = 5;
  const ImageClassifier* quality = nullptr;  // fills verdicts when set
  std::map<std::string, int> dr_grades;      // by degraded id
};

/// Per pair: baseline compares degraded with clean, enhanced compares the
/// enhancement of the degraded image with clean. Rows are keyed by degraded id.
inline EvalReport evaluate_full_reference(const std::vector<CleanDegradedPair>& pairs, const ImageLookup& clean,
                                          const ImageLookup& degraded, const ImageLookup& enhanced,
                                          const FullReferenceOptions& opt = {}) {
  if (pairs.empty()) throw InvalidArgument("evaluate_full_reference: no pairs");
  EvalReport rep;
  std::ostringstream note;
  note << "full-reference: ssim window " << opt.ssim.window_side << " sigma " << opt.ssim.gaussian_sigma << " k1 "
       << opt.ssim.k1 << " k2 " << opt.ssim.k2 << " L " << opt.ssim.dynamic_range;
  rep.notes.push_back(note.str());
  for (const auto& p : pairs) {
    const ImageTensor c = clean(p.clean_id), d = degraded(p.degraded_id), e = enhanced(p.degraded_id);
    if (!d.same_shape(c) || !e.same_shape(c))
      throw ShapeMismatch("evaluate_full_reference: images for pair " + p.clean_id + "/" + p.degraded_id +
                          " differ in shape");
    const auto ms = MsSsimParams::for_side(std::min(c.height(), c.width()), opt.ssim, opt.ms_ssim_max_scales);
    EvalRow r;
    r.id = p.degraded_id;
    r.psnr_baseline = psnr(d, c);
    r.psnr_enhanced = psnr(e, c);
    r.ssim_baseline = ssim(d, c, opt.ssim);
    r.ssim_enhanced = ssim(e, c, opt.ssim);
    r.ms_ssim_baseline = ms_ssim(d, c, ms);
    r.ms_ssim_enhanced = ms_ssim(e, c, ms);
    r.ms_ssim_to_input = ms_ssim(e, d, ms);
    if (const auto g = opt.dr_grades.find(p.degraded_id); g != opt.dr_grades.end()) r.dr_grade_true = g->second;
    if (opt.quality) {
      const auto pr = opt.quality->probabilities({center_crop_resize(e, opt.quality->image_side())}).front();
      r.quality_verdict = static_cast<QualityLabel>(argmax(pr));
      r.p_good = pr[class_index(QualityLabel::Good)];
    }
    rep.rows.push_back(std::move(r));
  }
  return rep;
}

struct NoReferenceItem {
  std::string id;
  ImageTensor image;
  std::optional<int> dr_grade;
};

/// When set, a DR-grade classifier is trained on the training part of the
/// graded items and scored on the held-out part.
struct DrEvalConfig {
  ClassifierTrainConfig train;
};

inline EvalReport evaluate_no_reference(const std::vector<NoReferenceItem>& items, const ImageClassifier& quality,
                                        const std::optional<DrEvalConfig>& dr = std::nullopt) {
  if (items.empty()) throw InvalidArgument("evaluate_no_reference: no images");
  EvalReport rep;
  rep.notes.push_back("no-reference: converted ratio = fraction classified Good");
  std::vector<ImageTensor> resized;
  for (const auto& it : items) resized.push_back(center_crop_resize(it.image, quality.image_side()));
  const auto probs = quality.probabilities(resized);
  for (std::size_t i = 0; i < items.size(); ++i) {
    EvalRow r;
    r.id = items[i].id;
    r.quality_verdict = static_cast<QualityLabel>(argmax(probs[i]));
    r.p_good = probs[i][class_index(QualityLabel::Good)];
    r.dr_grade_true = items[i].dr_grade;
    rep.rows.push_back(std::move(r));
  }
  if (dr) {
    auto cfg = dr->train;
    cfg.spec.classes = kDrClasses;
    rep.notes.push_back(std::string("dr task: ") + kSplitNote);
    std::vector<ImageTensor> tx;
    std::vector<int> ty;
    std::vector<std::size_t> test;
    for (std::size_t i = 0; i < items.size(); ++i) {
      if (!items[i].dr_grade) continue;
      if (is_heldout(items[i].id)) {
        test.push_back(i);
      } else {
        tx.push_back(center_crop_resize(items[i].image, cfg.image_side));
        ty.push_back(*items[i].dr_grade);
      }
    }
    if (tx.empty() || test.empty()) throw InvalidArgument("evaluate_no_reference: too few graded images for the DR split");
    const auto clf = train_classifier(tx, ty, cfg);
    std::vector<ImageTensor> test_x;
    for (std::size_t i : test) test_x.push_back(center_crop_resize(items[i].image, cfg.image_side));
    const auto dp = clf.probabilities(test_x);
    for (std::size_t j = 0; j < test.size(); ++j) {
      rep.rows[test[j]].dr_grade_pred = argmax(dp[j]);
      rep.rows[test[j]].dr_scores = dp[j];
    }
  }
  return rep;
}

}  // namespace ote
