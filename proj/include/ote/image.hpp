#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "ote/errors.hpp"
#include "ote/rng.hpp"

namespace ote {

/// channels x height x width intensity grid, row-major per channel, values in [0,1].
class ImageTensor {
 public:
  ImageTensor() = default;

  ImageTensor(int channels, int height, int width, double fill = 0.0)
      : channels_(channels), height_(height), width_(width) {
    check_dims(channels, height, width);
    data_.assign(static_cast<std::size_t>(channels) * height * width, fill);
    if (!(fill >= 0.0 && fill <= 1.0)) throw InvalidArgument("ImageTensor: fill outside [0,1]");
  }

  ImageTensor(int channels, int height, int width, std::vector<double> data)
      : channels_(channels), height_(height), width_(width), data_(std::move(data)) {
    check_dims(channels, height, width);
    if (data_.size() != static_cast<std::size_t>(channels) * height * width)
      throw ShapeMismatch("ImageTensor: data length does not match channels*height*width");
    validate();
  }

  int channels() const noexcept { return channels_; }
  int height() const noexcept { return height_; }
  int width() const noexcept { return width_; }
  std::size_t size() const noexcept { return data_.size(); }
  std::size_t plane_size() const noexcept { return static_cast<std::size_t>(height_) * width_; }
  bool empty() const noexcept { return data_.empty(); }

  double& at(int c, int y, int x) { return data_[index(c, y, x)]; }
  double at(int c, int y, int x) const { return data_[index(c, y, x)]; }

  std::span<double> plane(int c) { return {data_.data() + c * plane_size(), plane_size()}; }
  std::span<const double> plane(int c) const { return {data_.data() + c * plane_size(), plane_size()}; }

  std::vector<double>& data() noexcept { return data_; }
  const std::vector<double>& data() const noexcept { return data_; }

  bool same_shape(const ImageTensor& o) const noexcept {
    return channels_ == o.channels_ && height_ == o.height_ && width_ == o.width_;
  }

  /// Throws InvalidArgument when a value is non-finite or outside [0,1].
  void validate() const {
    for (double v : data_)
      if (!std::isfinite(v) || v < 0.0 || v > 1.0)
        throw InvalidArgument("ImageTensor: intensity outside [0,1] or non-finite");
  }

  /// Clamp every value into [0,1]; NaN maps to 0.
  void clamp01() {
    for (double& v : data_) v = std::isnan(v) ? 0.0 : std::clamp(v, 0.0, 1.0);
  }

  friend bool operator==(const ImageTensor& a, const ImageTensor& b) {
    return a.same_shape(b) && a.data_ == b.data_;
  }

 private:
  static void check_dims(int c, int h, int w) {
    if (c != 1 && c != 3) throw InvalidArgument("ImageTensor: channels must be 1 or 3");
    if (h < 1 || w < 1) throw InvalidArgument("ImageTensor: height and width must be >= 1");
  }
  std::size_t index(int c, int y, int x) const {
    return (static_cast<std::size_t>(c) * height_ + y) * width_ + x;
  }

  int channels_ = 0;
  int height_ = 0;
  int width_ = 0;
  std::vector<double> data_;
};

struct AugmentSpec {
  double hflip_prob = 0.5;
  double vflip_prob = 0.5;
  double max_rotation_deg = 10.0;
  double crop_fraction = 0.9;
  std::uint64_t seed = 0;

  void validate() const {
    auto prob = [](double p) { return p >= 0.0 && p <= 1.0; };
    if (!prob(hflip_prob) || !prob(vflip_prob)) throw InvalidArgument("AugmentSpec: flip probability outside [0,1]");
    if (!(max_rotation_deg >= 0.0 && max_rotation_deg <= 180.0))
      throw InvalidArgument("AugmentSpec: max_rotation_deg outside [0,180]");
    if (!(crop_fraction > 0.0 && crop_fraction <= 1.0))
      throw InvalidArgument("AugmentSpec: crop_fraction outside (0,1]");
  }

  static AugmentSpec none() { return {0.0, 0.0, 0.0, 1.0, 0}; }
};

namespace detail {

// Bilinear sample with coordinates clamped to the image border.
inline double sample_clamped(std::span<const double> plane, int h, int w, double y, double x) {
  y = std::clamp(y, 0.0, static_cast<double>(h - 1));
  x = std::clamp(x, 0.0, static_cast<double>(w - 1));
  const int y0 = static_cast<int>(std::floor(y));
  const int x0 = static_cast<int>(std::floor(x));
  const int y1 = std::min(y0 + 1, h - 1);
  const int x1 = std::min(x0 + 1, w - 1);
  const double fy = y - y0;
  const double fx = x - x0;
  const double top = plane[y0 * w + x0] * (1.0 - fx) + plane[y0 * w + x1] * fx;
  const double bot = plane[y1 * w + x0] * (1.0 - fx) + plane[y1 * w + x1] * fx;
  return top * (1.0 - fy) + bot * fy;
}

}  // namespace detail

/// Copy of the [y0, y0+h) x [x0, x0+w) window.
inline ImageTensor crop(const ImageTensor& img, int y0, int x0, int h, int w) {
  if (y0 < 0 || x0 < 0 || h < 1 || w < 1 || y0 + h > img.height() || x0 + w > img.width())
    throw InvalidArgument("crop: window outside image");
  ImageTensor out(img.channels(), h, w);
  for (int c = 0; c < img.channels(); ++c)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) out.at(c, y, x) = img.at(c, y0 + y, x0 + x);
  return out;
}

/// Bilinear resize with corner-aligned sampling: output corners map onto input corners.
inline ImageTensor resize_bilinear(const ImageTensor& img, int out_h, int out_w) {
  if (out_h < 1 || out_w < 1) throw InvalidArgument("resize_bilinear: non-positive size");
  if (out_h == img.height() && out_w == img.width()) return img;
  ImageTensor out(img.channels(), out_h, out_w);
  const double sy = out_h > 1 ? static_cast<double>(img.height() - 1) / (out_h - 1) : 0.0;
  const double sx = out_w > 1 ? static_cast<double>(img.width() - 1) / (out_w - 1) : 0.0;
  for (int c = 0; c < img.channels(); ++c) {
    auto src = img.plane(c);
    for (int y = 0; y < out_h; ++y)
      for (int x = 0; x < out_w; ++x)
        out.at(c, y, x) = std::clamp(detail::sample_clamped(src, img.height(), img.width(), y * sy, x * sx), 0.0, 1.0);
  }
  return out;
}

inline constexpr int kMaxImageSide = 16384;

/// Crops the largest centered square and resizes it to side x side.
inline ImageTensor center_crop_resize(const ImageTensor& img, int side) {
  if (side <= 0) throw InvalidArgument("center_crop_resize: side must be positive");
  if (side < 8) throw InvalidArgument("center_crop_resize: side must be >= 8");
  if (side > kMaxImageSide) throw InvalidArgument("center_crop_resize: side exceeds representable size");
  const int sq = std::min(img.height(), img.width());
  const int y0 = (img.height() - sq) / 2;
  const int x0 = (img.width() - sq) / 2;
  ImageTensor square = (sq == img.height() && sq == img.width()) ? img : crop(img, y0, x0, sq, sq);
  return resize_bilinear(square, side, side);
}

inline ImageTensor flip_horizontal(const ImageTensor& img) {
  ImageTensor out = img;
  for (int c = 0; c < img.channels(); ++c)
    for (int y = 0; y < img.height(); ++y)
      for (int x = 0; x < img.width(); ++x) out.at(c, y, x) = img.at(c, y, img.width() - 1 - x);
  return out;
}

inline ImageTensor flip_vertical(const ImageTensor& img) {
  ImageTensor out = img;
  for (int c = 0; c < img.channels(); ++c)
    for (int y = 0; y < img.height(); ++y)
      for (int x = 0; x < img.width(); ++x) out.at(c, y, x) = img.at(c, img.height() - 1 - y, x);
  return out;
}

/// Rotation about the image center; samples landing outside the source are black.
inline ImageTensor rotate(const ImageTensor& img, double degrees) {
  if (degrees == 0.0) return img;
  const double th = degrees * std::numbers::pi / 180.0;
  const double ct = std::cos(th), st = std::sin(th);
  const double cy = (img.height() - 1) / 2.0, cx = (img.width() - 1) / 2.0;
  ImageTensor out(img.channels(), img.height(), img.width());
  for (int y = 0; y < img.height(); ++y)
    for (int x = 0; x < img.width(); ++x) {
      // inverse map: rotate output coordinates by -theta
      const double dy = y - cy, dx = x - cx;
      const double sx = ct * dx + st * dy + cx;
      const double sy = -st * dx + ct * dy + cy;
      if (sx < 0.0 || sy < 0.0 || sx > img.width() - 1 || sy > img.height() - 1) continue;
      for (int c = 0; c < img.channels(); ++c)
        out.at(c, y, x) = std::clamp(detail::sample_clamped(img.plane(c), img.height(), img.width(), sy, sx), 0.0, 1.0);
    }
  return out;
}

/// Random hflip, vflip, crop (re-resized to the input size) and rotation.
///
/// The stream is advanced by the same number of draws regardless of which
/// transforms fire, so downstream consumers see a stable sequence.
inline ImageTensor augment(const ImageTensor& img, const AugmentSpec& spec, Rng& rng) {
  spec.validate();
  const double u_h = rng.uniform();
  const double u_v = rng.uniform();
  const double u_cy = rng.uniform();
  const double u_cx = rng.uniform();
  const double u_rot = rng.uniform();

  ImageTensor out = img;
  if (u_h < spec.hflip_prob) out = flip_horizontal(out);
  if (u_v < spec.vflip_prob) out = flip_vertical(out);
  if (spec.crop_fraction < 1.0) {
    const int ch = std::max(1, static_cast<int>(std::lround(out.height() * spec.crop_fraction)));
    const int cw = std::max(1, static_cast<int>(std::lround(out.width() * spec.crop_fraction)));
    const int y0 = std::min(out.height() - ch, static_cast<int>(u_cy * (out.height() - ch + 1)));
    const int x0 = std::min(out.width() - cw, static_cast<int>(u_cx * (out.width() - cw + 1)));
    out = resize_bilinear(crop(out, y0, x0, ch, cw), img.height(), img.width());
  }
  if (spec.max_rotation_deg > 0.0) out = rotate(out, (2.0 * u_rot - 1.0) * spec.max_rotation_deg);
  return out;
}

}  // namespace ote
