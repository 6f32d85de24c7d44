#pragma once

#include <png.h>

#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <memory>
#include <string>
#include <vector>

#include "ote/errors.hpp"
#include "ote/image.hpp"

namespace ote {

/// round(v * 255) with halves rounded up, clamped to [0,255].
inline std::uint8_t quantize8(double v) {
  if (!(v > 0.0)) return 0;  // also catches NaN
  const double q = std::floor(v * 255.0 + 0.5);
  return q >= 255.0 ? 255 : static_cast<std::uint8_t>(q);
}

/// Reads an 8-bit grayscale or RGB PNG (palette files are expanded to RGB).
/// Sample value v maps to v / 255.
inline ImageTensor load_image(const std::filesystem::path& path) {
  std::error_code ec;
  if (!std::filesystem::is_regular_file(path, ec)) throw FileNotFound("load_image: no such file: " + path.string());

  std::array<unsigned char, 8> sig{};
  {
    std::ifstream in(path, std::ios::binary);
    in.read(reinterpret_cast<char*>(sig.data()), sig.size());
    if (in.gcount() != static_cast<std::streamsize>(sig.size()) || png_sig_cmp(sig.data(), 0, sig.size()) != 0)
      throw UnsupportedFormat("load_image: not a PNG file: " + path.string());
  }

  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&image, path.c_str())) {
    const std::string msg = image.message;
    png_image_free(&image);
    throw CorruptData("load_image: " + path.string() + ": " + msg);
  }
  if (image.format & PNG_FORMAT_FLAG_LINEAR) {
    png_image_free(&image);
    throw UnsupportedFormat("load_image: 16-bit PNG not supported: " + path.string());
  }
  if (image.format & PNG_FORMAT_FLAG_ALPHA) {
    png_image_free(&image);
    throw UnsupportedFormat("load_image: PNG with alpha channel not supported: " + path.string());
  }
  const bool color = (image.format & PNG_FORMAT_FLAG_COLOR) != 0;
  image.format = color ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  const int channels = color ? 3 : 1;
  const int h = static_cast<int>(image.height), w = static_cast<int>(image.width);
  std::vector<std::uint8_t> buf(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, buf.data(), 0, nullptr)) {
    const std::string msg = image.message;
    png_image_free(&image);
    throw CorruptData("load_image: " + path.string() + ": " + msg);
  }

  std::vector<double> data(buf.size());
  for (int c = 0; c < channels; ++c)
    for (int i = 0; i < h * w; ++i) data[static_cast<std::size_t>(c) * h * w + i] = buf[static_cast<std::size_t>(i) * channels + c] / 255.0;
  return ImageTensor(channels, h, w, std::move(data));
}

inline void save_image(const ImageTensor& img, const std::filesystem::path& path) {
  if (img.empty()) throw InvalidArgument("save_image: empty image");
  const int channels = img.channels();
  const std::size_t hw = img.plane_size();
  std::vector<std::uint8_t> buf(img.size());
  for (int c = 0; c < channels; ++c)
    for (std::size_t i = 0; i < hw; ++i) buf[i * channels + c] = quantize8(img.data()[c * hw + i]);

  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(img.width());
  image.height = static_cast<png_uint_32>(img.height());
  image.format = channels == 3 ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  if (!png_image_write_to_file(&image, path.c_str(), 0, buf.data(), 0, nullptr)) {
    const std::string msg = image.message;
    png_image_free(&image);
    throw WriteFailure("save_image: " + path.string() + ": " + msg);
  }
}

}  // namespace ote
