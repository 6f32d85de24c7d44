#pragma once

#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "ote/errors.hpp"
#include "ote/image.hpp"
#include "ote/metrics.hpp"
#include "ote/rng.hpp"

namespace ote {

inline constexpr int kMaxDrGrade = 4;
inline constexpr const char* kManifestHeader = "id,path,quality,dr_grade";

struct FundusRecord {
  std::string id;
  std::filesystem::path path;  // resolved against the manifest's directory
  QualityLabel quality = QualityLabel::Good;
  int dr_grade = 0;

  friend bool operator==(const FundusRecord&, const FundusRecord&) = default;
};

using Records = std::vector<FundusRecord>;

namespace detail {

inline std::vector<std::string> split_row(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  std::stringstream ss(line);
  while (std::getline(ss, cell, ',')) cells.push_back(cell);
  if (!line.empty() && line.back() == ',') cells.emplace_back();
  return cells;
}

inline std::string trim(std::string s) {
  const auto b = s.find_first_not_of(" \t\r");
  const auto e = s.find_last_not_of(" \t\r");
  return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
}

}  // namespace detail

/// Parses a manifest. Relative paths resolve against the manifest's directory.
/// A file with no lines at all is an empty manifest.
inline Records load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FileNotFound("no such manifest: " + path.string());
  const auto base = path.parent_path();
  Records out;
  std::set<std::string> seen;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    line = detail::trim(line);
    if (lineno == 1) {
      if (line != kManifestHeader) throw ManifestError("expected header '" + std::string(kManifestHeader) + "'", 1);
      continue;
    }
    if (line.empty()) continue;
    const auto cells = detail::split_row(line);
    if (cells.size() != 4) throw ManifestError("expected 4 fields, found " + std::to_string(cells.size()), lineno);
    FundusRecord r;
    r.id = detail::trim(cells[0]);
    const std::string p = detail::trim(cells[1]);
    if (r.id.empty()) throw ManifestError("empty id", lineno);
    if (p.empty()) throw ManifestError("empty path", lineno);
    r.path = std::filesystem::path(p).is_absolute() ? std::filesystem::path(p) : base / p;
    try {
      r.quality = parse_quality(detail::trim(cells[2]));
    } catch (const InvalidArgument&) {
      throw ManifestError("unknown quality label '" + detail::trim(cells[2]) + "'", lineno);
    }
    const std::string g = detail::trim(cells[3]);
    std::size_t used = 0;
    int grade = -1;
    try {
      grade = std::stoi(g, &used);
    } catch (const std::logic_error&) {
      used = 0;
    }
    if (used != g.size() || g.empty()) throw ManifestError("dr_grade '" + g + "' is not an integer", lineno);
    if (grade < 0 || grade > kMaxDrGrade)
      throw ManifestError("dr_grade " + g + " out of range 0-" + std::to_string(kMaxDrGrade), lineno);
    r.dr_grade = grade;
    if (!seen.insert(r.id).second) throw ManifestError("duplicate id '" + r.id + "'", lineno);
    out.push_back(std::move(r));
  }
  return out;
}

/// Writes records with paths relative to the manifest's directory where possible.
inline void write_manifest(const std::filesystem::path& path, const Records& records) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw WriteFailure("cannot write manifest: " + path.string());
  const auto base = path.parent_path();
  out << kManifestHeader << '\n';
  for (const auto& r : records) {
    auto rel = r.path.lexically_relative(base.empty() ? "." : base);
    if (rel.empty() || r.path.is_relative()) rel = r.path;
    out << r.id << ',' << rel.generic_string() << ',' << to_string(r.quality) << ',' << r.dr_grade << '\n';
  }
  if (!out) throw WriteFailure("write failed: " + path.string());
}

inline Records filter_quality(const Records& records, QualityLabel q) {
  Records out;
  for (const auto& r : records)
    if (r.quality == q) out.push_back(r);
  return out;
}

/// Indices of one sampled batch: low[i] is paired with high[i], both of grade grades[i].
struct PairIndices {
  std::vector<std::size_t> low, high;
  std::vector<int> grades;
};

/// Grade-matched resampling: a uniform low-quality record, then a uniform
/// high-quality record of the same DR grade. Draws with replacement.
class PairSampler {
 public:
  PairSampler(const Records& low, const Records& high) : low_grades_(low.size()) {
    if (low.empty()) throw InvalidArgument("pairing: empty low-quality pool");
    if (high.empty()) throw InvalidArgument("pairing: empty high-quality pool");
    for (std::size_t i = 0; i < high.size(); ++i) by_grade_[high[i].dr_grade].push_back(i);
    for (std::size_t i = 0; i < low.size(); ++i) {
      low_grades_[i] = low[i].dr_grade;
      if (!by_grade_.count(low[i].dr_grade)) throw UnmatchedGrade(low[i].dr_grade);
    }
  }

  PairIndices draw(int batch_size, Rng& rng) const {
    if (batch_size < 1) throw InvalidArgument("pairing: batch_size must be >= 1");
    PairIndices p;
    for (int k = 0; k < batch_size; ++k) {
      const std::size_t li = rng.index(low_grades_.size());
      const int g = low_grades_[li];
      const auto& pool = by_grade_.at(g);
      p.low.push_back(li);
      p.high.push_back(pool[rng.index(pool.size())]);
      p.grades.push_back(g);
    }
    return p;
  }

 private:
  std::vector<int> low_grades_;
  std::map<int, std::vector<std::size_t>> by_grade_;
};

struct PairBatch {
  std::vector<ImageTensor> inputs;   // low quality
  std::vector<ImageTensor> targets;  // high quality, same DR grade
  std::vector<int> grades;
};

/// Looks up the image for a record (file load, cache, in-memory corpus...).
using ImageSource = std::function<ImageTensor(const FundusRecord&)>;

inline PairBatch sample_pair_batch(const Records& low, const Records& high, int batch_size, Rng& rng,
                                   const ImageSource& source) {
  const PairSampler sampler(low, high);
  const PairIndices idx = sampler.draw(batch_size, rng);
  PairBatch b;
  for (int k = 0; k < batch_size; ++k) {
    b.inputs.push_back(source(low[idx.low[k]]));
    b.targets.push_back(source(high[idx.high[k]]));
  }
  b.grades = idx.grades;
  return b;
}

}  // namespace ote
