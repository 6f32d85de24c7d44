#pragma once

#include <filesystem>
#include <string>

#include "ote/image.hpp"
#include "ote/rng.hpp"

namespace testutil {

inline ote::ImageTensor random_image(ote::Rng& rng, int c, int h, int w) {
  ote::ImageTensor img(c, h, w);
  for (auto& v : img.data()) v = rng.uniform();
  return img;
}

/// Smooth random image (sum of a few low-frequency cosines), values in [0,1].
inline ote::ImageTensor smooth_image(ote::Rng& rng, int c, int h, int w) {
  ote::ImageTensor img(c, h, w);
  for (int ch = 0; ch < c; ++ch) {
    const double fx = rng.uniform(0.5, 3.0), fy = rng.uniform(0.5, 3.0), ph = rng.uniform(0, 6.28);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
        img.at(ch, y, x) = 0.5 + 0.35 * std::cos(fx * x / w * 6.28 + ph) * std::cos(fy * y / h * 6.28);
  }
  return img;
}

/// Fresh empty directory under the system temp dir.
inline std::filesystem::path temp_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("ote_test_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

}  // namespace testutil
