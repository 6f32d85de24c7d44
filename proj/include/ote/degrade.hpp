#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "ote/errors.hpp"
#include "ote/image.hpp"
#include "ote/pairing.hpp"
#include "ote/png_io.hpp"
#include "ote/rng.hpp"

namespace ote {

// ---------------------------------------------------------------------------
// Degradation: illumination field, then blur, then occlusions.

struct DegradationSpec {
  double illumination_strength = 0.45;  // field spans [1-s, 1+s]
  double blur_sigma = 0.8;              // pixels
  int artifact_count = 1;
  double artifact_radius_min = 2.0;  // pixels
  double artifact_radius_max = 4.0;
  std::uint64_t seed = 0;

  static DegradationSpec none() { return {0.0, 0.0, 0, 0.0, 0.0, 0}; }

  void validate() const {
    if (!(illumination_strength >= 0.0)) throw InvalidArgument("degradation: illumination_strength must be >= 0");
    if (!(blur_sigma >= 0.0)) throw InvalidArgument("degradation: blur_sigma must be >= 0");
    if (artifact_count < 0) throw InvalidArgument("degradation: artifact_count must be >= 0");
    if (artifact_count > 0 && !(artifact_radius_min > 0.0 && artifact_radius_min <= artifact_radius_max))
      throw InvalidArgument("degradation: artifact radius interval must be nonempty and positive");
  }
};

/// Separable Gaussian blur with mirrored borders; sigma 0 returns the input.
inline ImageTensor gaussian_blur(const ImageTensor& img, double sigma) {
  if (sigma <= 0.0) return img;
  const int r = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
  std::vector<double> k(2 * r + 1);
  double s = 0.0;
  for (int i = -r; i <= r; ++i) s += k[i + r] = std::exp(-0.5 * i * i / (sigma * sigma));
  for (auto& v : k) v /= s;
  const int h = img.height(), w = img.width();
  auto mirror = [](int i, int n) {
    if (n == 1) return 0;
    while (i < 0 || i >= n) i = i < 0 ? -i - 1 : 2 * n - i - 1;
    return i;
  };
  ImageTensor tmp = img, out = img;
  for (int c = 0; c < img.channels(); ++c) {
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        double a = 0.0;
        for (int i = -r; i <= r; ++i) a += k[i + r] * img.at(c, y, mirror(x + i, w));
        tmp.at(c, y, x) = a;
      }
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        double a = 0.0;
        for (int i = -r; i <= r; ++i) a += k[i + r] * tmp.at(c, mirror(y + i, h), x);
        out.at(c, y, x) = std::clamp(a, 0.0, 1.0);
      }
  }
  return out;
}

inline ImageTensor degrade(const ImageTensor& img, const DegradationSpec& spec, Rng& rng) {
  spec.validate();
  img.validate();
  ImageTensor out = img;
  const int h = img.height(), w = img.width();

  if (spec.illumination_strength > 0.0) {
    // one low-frequency sinusoid across the frame: u in [-1, 1]
    const double theta = rng.uniform(0.0, 2.0 * std::numbers::pi);
    const double phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
    const double freq = rng.uniform(0.5, 1.0);
    const double ct = std::cos(theta), st = std::sin(theta);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        const double X = 2.0 * (x + 0.5) / w - 1.0, Y = 2.0 * (y + 0.5) / h - 1.0;
        const double f = 1.0 + spec.illumination_strength * std::sin(std::numbers::pi * freq * (X * ct + Y * st) + phase);
        for (int c = 0; c < img.channels(); ++c) out.at(c, y, x) = std::clamp(out.at(c, y, x) * f, 0.0, 1.0);
      }
  }

  out = gaussian_blur(out, spec.blur_sigma);

  for (int a = 0; a < spec.artifact_count; ++a) {
    const double cx = rng.uniform(0.0, w), cy = rng.uniform(0.0, h);
    const double r = rng.uniform(spec.artifact_radius_min, spec.artifact_radius_max);
    const double shade = rng.uniform(0.0, 0.15);
    const double opacity = 0.85;
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        const double d = std::hypot(x + 0.5 - cx, y + 0.5 - cy);
        const double alpha = opacity * 0.5 * (1.0 - std::tanh((d - r) / 1.0));
        if (alpha < 1e-6) continue;
        for (int c = 0; c < img.channels(); ++c) out.at(c, y, x) = (1.0 - alpha) * out.at(c, y, x) + alpha * shade;
      }
  }
  return out;
}

inline ImageTensor degrade(const ImageTensor& img, const DegradationSpec& spec) {
  Rng rng(spec.seed);
  return degrade(img, spec, rng);
}

// ---------------------------------------------------------------------------
// Synthetic fundus-like images

struct Disc {
  double cx = 0.0, cy = 0.0, r = 0.0;  // pixels
};

struct SynthSpec {
  int side = 64;
  int vessel_count = 6;
  int dr_grade = 0;
  int lesion_base_count = 3;
  std::optional<Disc> optic_disc;  // randomized near the nasal side when absent
  std::uint64_t seed = 0;

  void validate() const {
    if (side < 32) throw InvalidArgument("synth: side must be >= 32");
    if (side > kMaxImageSide) throw InvalidArgument("synth: side too large");
    if (vessel_count < 0) throw InvalidArgument("synth: vessel_count must be >= 0");
    if (dr_grade < 0 || dr_grade > kMaxDrGrade) throw InvalidArgument("synth: dr_grade must be in 0-4");
    if (lesion_base_count < 0) throw InvalidArgument("synth: lesion_base_count must be >= 0");
  }
  int lesion_count() const { return lesion_base_count * dr_grade; }
};

struct SynthResult {
  ImageTensor image;
  int dr_grade = 0;
  std::vector<std::uint8_t> lesion_mask;  // side x side, 1 on lesion pixels
  int lesion_count = 0;
};

inline SynthResult synth_fundus(const SynthSpec& spec, Rng& rng) {
  spec.validate();
  const int n = spec.side;
  const double c0 = n / 2.0;
  const double fov_r = 0.46 * n;

  Disc disc;
  if (spec.optic_disc) {
    disc = *spec.optic_disc;
  } else {
    const double side_sign = rng.bernoulli(0.5) ? 1.0 : -1.0;
    disc.cx = c0 + side_sign * rng.uniform(0.22, 0.28) * n;
    disc.cy = c0 + rng.uniform(-0.06, 0.06) * n;
    disc.r = rng.uniform(0.06, 0.08) * n;
  }
  if (!(disc.r > 0.0) || std::hypot(disc.cx - c0, disc.cy - c0) + disc.r > fov_r)
    throw InvalidArgument("synth: optic disc does not fit inside the field of view");

  // background: reddish field of view with radial falloff and a darker macula
  const double mac_x = 2.0 * c0 - disc.cx, mac_y = disc.cy;
  const double tint = rng.uniform(-0.05, 0.05);
  ImageTensor img(3, n, n);
  const double base[3] = {0.78 + tint, 0.36 + tint / 2, 0.16};
  for (int y = 0; y < n; ++y)
    for (int x = 0; x < n; ++x) {
      const double px = x + 0.5, py = y + 0.5;
      const double rr = std::hypot(px - c0, py - c0) / fov_r;
      const double edge = 0.5 * (1.0 - std::tanh((rr - 1.0) * fov_r / 0.8));
      const double shade = (1.0 - 0.25 * rr * rr) * (1.0 - 0.3 * std::exp(-std::pow(std::hypot(px - mac_x, py - mac_y) / (0.09 * n), 2)));
      const double dd = std::hypot(px - disc.cx, py - disc.cy);
      const double od = 0.5 * (1.0 - std::tanh((dd - disc.r) / 0.8));
      const double disc_col[3] = {0.97, 0.88, 0.62};
      for (int c = 0; c < 3; ++c) img.at(c, y, x) = edge * ((1.0 - od) * base[c] * shade + od * disc_col[c]);
    }

  // vessels: smooth random walks leaving the disc
  std::vector<double> vmask(static_cast<std::size_t>(n) * n, 0.0);
  for (int v = 0; v < spec.vessel_count; ++v) {
    double ang = 2.0 * std::numbers::pi * (v + rng.uniform(0.0, 0.8)) / std::max(1, spec.vessel_count);
    double x = disc.cx + disc.r * 0.9 * std::cos(ang), y = disc.cy + disc.r * 0.9 * std::sin(ang);
    double width = rng.uniform(0.7, 1.1) * n / 64.0;
    double turn = rng.uniform(-0.015, 0.015);
    const double step = 0.5;
    for (int s = 0; s < 4 * n; ++s) {
      if (std::hypot(x - c0, y - c0) > fov_r) break;
      const int x0 = static_cast<int>(x - 3 * width - 1), x1 = static_cast<int>(x + 3 * width + 1);
      const int y0 = static_cast<int>(y - 3 * width - 1), y1 = static_cast<int>(y + 3 * width + 1);
      for (int py = std::max(0, y0); py <= std::min(n - 1, y1); ++py)
        for (int px = std::max(0, x0); px <= std::min(n - 1, x1); ++px) {
          const double d2 = (px + 0.5 - x) * (px + 0.5 - x) + (py + 0.5 - y) * (py + 0.5 - y);
          auto& m = vmask[static_cast<std::size_t>(py) * n + px];
          m = std::max(m, std::exp(-d2 / (2.0 * width * width)));
        }
      turn = std::clamp(turn + rng.uniform(-0.004, 0.004), -0.025, 0.025);
      ang += turn;
      x += step * std::cos(ang);
      y += step * std::sin(ang);
      width = std::max(0.45 * n / 64.0, width * 0.997);
    }
  }
  const double vessel_gain[3] = {0.45, 0.6, 0.5};
  for (int y = 0; y < n; ++y)
    for (int x = 0; x < n; ++x)
      for (int c = 0; c < 3; ++c) img.at(c, y, x) *= 1.0 - vessel_gain[c] * vmask[static_cast<std::size_t>(y) * n + x];

  // lesions: separated discrete disks, bright (exudate-like) or dark (haemorrhage-like)
  SynthResult res;
  res.dr_grade = spec.dr_grade;
  res.lesion_count = spec.lesion_count();
  res.lesion_mask.assign(static_cast<std::size_t>(n) * n, 0);
  struct Blob {
    int x, y;
    double r;
  };
  std::vector<Blob> blobs;
  const double radii[3] = {1.0, 1.5, 2.0};
  for (int l = 0; l < res.lesion_count; ++l) {
    bool placed = false;
    for (int attempt = 0; attempt < 20000 && !placed; ++attempt) {
      const double r = radii[rng.index(3)] * std::max(1.0, n / 64.0);
      const int bx = static_cast<int>(rng.index(n)), by = static_cast<int>(rng.index(n));
      if (std::hypot(bx + 0.5 - c0, by + 0.5 - c0) > fov_r - r - 2.0) continue;
      if (std::hypot(bx + 0.5 - disc.cx, by + 0.5 - disc.cy) < disc.r + r + 2.0) continue;
      bool clear = true;
      for (const auto& b : blobs)
        if (std::hypot(double(bx - b.x), double(by - b.y)) < r + b.r + 2.5) {
          clear = false;
          break;
        }
      if (!clear) continue;
      blobs.push_back({bx, by, r});
      placed = true;
    }
    if (!placed) throw InvalidArgument("synth: lesions do not fit on a " + std::to_string(n) + "px canvas");
  }
  for (std::size_t i = 0; i < blobs.size(); ++i) {
    const auto& b = blobs[i];
    const bool bright = i % 2 == 0;
    const double col[3] = {bright ? 0.98 : 0.32, bright ? 0.9 : 0.04, bright ? 0.45 : 0.03};
    const int R = static_cast<int>(std::ceil(b.r));
    for (int y = b.y - R; y <= b.y + R; ++y)
      for (int x = b.x - R; x <= b.x + R; ++x) {
        if (x < 0 || y < 0 || x >= n || y >= n) continue;
        if ((x - b.x) * (x - b.x) + (y - b.y) * (y - b.y) > b.r * b.r) continue;
        res.lesion_mask[static_cast<std::size_t>(y) * n + x] = 1;
        for (int c = 0; c < 3; ++c) img.at(c, y, x) = col[c];
      }
  }
  img.clamp01();
  res.image = std::move(img);
  return res;
}

inline SynthResult synth_fundus(const SynthSpec& spec) {
  Rng rng(spec.seed);
  return synth_fundus(spec, rng);
}

// ---------------------------------------------------------------------------
// Corpus on disk: good/, reject/, manifest.csv, pairs.csv

struct CorpusSpec {
  SynthSpec synth;               // dr_grade and seed are set per image
  DegradationSpec degradation;   // seed is set per image
  std::uint64_t seed = 0;
};

struct CleanDegradedPair {
  std::string clean_id, degraded_id;
};

inline constexpr const char* kPairsHeader = "clean_id,degraded_id";

inline std::string corpus_id(char kind, int grade, int k) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%c%d_%04d", kind, grade, k);
  return buf;
}

/// Writes n_per_grade clean images per DR grade plus one degraded copy of each.
/// Returns the manifest path.
inline std::filesystem::path build_corpus(int n_per_grade, const CorpusSpec& spec, const std::filesystem::path& dir) {
  if (n_per_grade < 1) throw InvalidArgument("build_corpus: n_per_grade must be >= 1");
  spec.synth.validate();
  spec.degradation.validate();
  std::error_code ec;
  std::filesystem::create_directories(dir / "good", ec);
  std::filesystem::create_directories(dir / "reject", ec);
  if (ec) throw WriteFailure("cannot create corpus directories under " + dir.string() + ": " + ec.message());
  Records records;
  std::vector<CleanDegradedPair> pairs;
  for (int g = 0; g <= kMaxDrGrade; ++g)
    for (int k = 0; k < n_per_grade; ++k) {
      SynthSpec ss = spec.synth;
      ss.dr_grade = g;
      ss.seed = derive_seed(spec.seed, 1 + g, k);
      const SynthResult s = synth_fundus(ss);
      DegradationSpec ds = spec.degradation;
      ds.seed = derive_seed(spec.seed ^ 0xd3a9u, 1 + g, k);
      const ImageTensor d = degrade(s.image, ds);
      const std::string cid = corpus_id('c', g, k), did = corpus_id('d', g, k);
      save_image(s.image, dir / "good" / (cid + ".png"));
      save_image(d, dir / "reject" / (did + ".png"));
      records.push_back({cid, dir / "good" / (cid + ".png"), QualityLabel::Good, g});
      records.push_back({did, dir / "reject" / (did + ".png"), QualityLabel::Reject, g});
      pairs.push_back({cid, did});
    }
  const auto manifest = dir / "manifest.csv";
  write_manifest(manifest, records);
  std::ofstream out(dir / "pairs.csv", std::ios::trunc);
  if (!out) throw WriteFailure("cannot write pairs.csv under " + dir.string());
  out << kPairsHeader << '\n';
  for (const auto& p : pairs) out << p.clean_id << ',' << p.degraded_id << '\n';
  if (!out) throw WriteFailure("write failed: pairs.csv");
  return manifest;
}

inline std::vector<CleanDegradedPair> load_pairs(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FileNotFound("no such pairs file: " + path.string());
  std::vector<CleanDegradedPair> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    line = detail::trim(line);
    if (lineno == 1) {
      if (line != kPairsHeader) throw ManifestError("expected header '" + std::string(kPairsHeader) + "'", 1);
      continue;
    }
    if (line.empty()) continue;
    const auto cells = detail::split_row(line);
    if (cells.size() != 2 || cells[0].empty() || cells[1].empty())
      throw ManifestError("expected clean_id,degraded_id", lineno);
    out.push_back({detail::trim(cells[0]), detail::trim(cells[1])});
  }
  return out;
}

}  // namespace ote
