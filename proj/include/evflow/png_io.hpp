#pragma once

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <ostream>
#include <string>
#include <vector>

#include "evflow/core.hpp"
#include "evflow/distance_surface.hpp"
#include "evflow/flow_field.hpp"

namespace evflow {

/// 8-bit image, 1 (gray) or 3 (RGB) interleaved channels.
struct Image8 {
  int width = 0;
  int height = 0;
  int channels = 3;
  std::vector<std::uint8_t> pixels;

  Image8() = default;
  Image8(int w, int h, int c, std::uint8_t fill = 0)
      : width(w), height(h), channels(c), pixels(static_cast<std::size_t>(w) * h * c, fill) {}

  std::uint8_t* at(int x, int y) {
    return pixels.data() + (static_cast<std::size_t>(y) * width + x) * channels;
  }
  const std::uint8_t* at(int x, int y) const {
    return pixels.data() + (static_cast<std::size_t>(y) * width + x) * channels;
  }
};

inline void write_png(const Image8& img, std::ostream& out) {
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(img.width);
  image.height = static_cast<png_uint_32>(img.height);
  image.format = img.channels == 1 ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
  png_alloc_size_t size = 0;
  if (!png_image_write_to_memory(&image, nullptr, &size, 0, img.pixels.data(), 0, nullptr))
    throw Error(std::string("png encode failed: ") + image.message);
  std::vector<std::uint8_t> buffer(size);
  if (!png_image_write_to_memory(&image, buffer.data(), &size, 0, img.pixels.data(), 0, nullptr))
    throw Error(std::string("png encode failed: ") + image.message);
  out.write(reinterpret_cast<const char*>(buffer.data()), static_cast<std::streamsize>(size));
  if (!out) throw Error("png write failed");
}

inline void write_png_file(const Image8& img, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open " + path.string() + " for writing");
  write_png(img, out);
}

/// Reads any PNG as 8-bit grayscale.
inline Image8 read_png_gray(const std::filesystem::path& path) {
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&image, path.string().c_str()))
    throw FormatError("cannot read png " + path.string() + ": " + image.message);
  image.format = PNG_FORMAT_GRAY;
  Image8 out(static_cast<int>(image.width), static_cast<int>(image.height), 1);
  if (!png_image_finish_read(&image, nullptr, out.pixels.data(), 0, nullptr)) {
    png_image_free(&image);
    throw FormatError("cannot decode png " + path.string() + ": " + image.message);
  }
  return out;
}

/// Non-zero pixels of a grayscale PNG.
inline Grid<std::uint8_t> read_mask_png(const std::filesystem::path& path) {
  const auto img = read_png_gray(path);
  Grid<std::uint8_t> mask(img.width, img.height);
  for (std::size_t i = 0; i < mask.size(); ++i) mask[i] = img.pixels[i] != 0;
  return mask;
}

// ---------------------------------------------------------------------------
// Visualisation
// ---------------------------------------------------------------------------

inline constexpr std::uint8_t kInvalidGray = 128;

namespace detail {

/// HSV with value 1 to 8-bit RGB; hue in degrees.
inline void hsv_to_rgb(double hue, double sat, std::uint8_t* rgb) {
  hue = std::fmod(hue, 360.0);
  if (hue < 0) hue += 360.0;
  const double c = sat;
  const double hp = hue / 60.0;
  const double x = c * (1.0 - std::fabs(std::fmod(hp, 2.0) - 1.0));
  double r = 0, g = 0, b = 0;
  if (hp < 1) { r = c; g = x; }
  else if (hp < 2) { r = x; g = c; }
  else if (hp < 3) { g = c; b = x; }
  else if (hp < 4) { g = x; b = c; }
  else if (hp < 5) { r = x; b = c; }
  else { r = c; b = x; }
  const double m = 1.0 - c;
  rgb[0] = static_cast<std::uint8_t>(std::lround(255.0 * (r + m)));
  rgb[1] = static_cast<std::uint8_t>(std::lround(255.0 * (g + m)));
  rgb[2] = static_cast<std::uint8_t>(std::lround(255.0 * (b + m)));
}

}  // namespace detail

/// Nearest-rank 99th percentile of the valid flow magnitudes (0 if none).
inline double flow_magnitude_p99(const FlowField& f) {
  std::vector<double> mags;
  for (std::size_t i = 0; i < f.valid.size(); ++i)
    if (f.valid[i]) mags.push_back(std::hypot(f.vectors[i].u, f.vectors[i].v));
  if (mags.empty()) return 0.0;
  const auto rank = static_cast<std::size_t>(std::ceil(0.99 * mags.size()));
  const auto k = std::clamp<std::size_t>(rank, 1, mags.size()) - 1;
  std::nth_element(mags.begin(), mags.begin() + k, mags.end());
  return mags[k];
}

/// Color wheel: hue is the direction (0 deg = +x, counter-clockwise with y
/// pointing down), saturation the magnitude over the 99th percentile.
/// Invalid pixels are medium gray.
inline Image8 render_flow(const FlowField& f) {
  const auto g = f.geometry();
  Image8 img(g.width, g.height, 3, kInvalidGray);
  const double scale = flow_magnitude_p99(f);
  for (int y = 0; y < g.height; ++y)
    for (int x = 0; x < g.width; ++x) {
      if (!f.valid(x, y)) continue;
      const auto& v = f.vectors(x, y);
      const double mag = std::hypot(v.u, v.v);
      const double sat = scale > 0.0 ? std::min(1.0, mag / scale) : 0.0;
      const double hue = std::atan2(-static_cast<double>(v.v), v.u) * 180.0 / M_PI;
      detail::hsv_to_rgb(hue, sat, img.at(x, y));
    }
  return img;
}

inline void render_flow_png(const FlowField& f, std::ostream& out) { write_png(render_flow(f), out); }

inline Image8 render_surface(const DistanceSurface& s) {
  Image8 img(s.quantized.width(), s.quantized.height(), 1);
  std::copy(s.quantized.data().begin(), s.quantized.data().end(), img.pixels.begin());
  return img;
}

inline Image8 render_edges(const EdgeImage& e) {
  Image8 img(e.bits.width(), e.bits.height(), 1);
  for (std::size_t i = 0; i < e.bits.size(); ++i) img.pixels[i] = e.bits[i] ? 255 : 0;
  return img;
}

}  // namespace evflow
