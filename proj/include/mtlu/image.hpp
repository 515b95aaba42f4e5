#pragma once

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "mtlu/errors.hpp"
#include "mtlu/resample.hpp"

namespace mtlu {

// 8-bit image with interleaved channels (1 = gray, 3 = RGB). The real view
// of a sample is byte / 255.
struct Image {
  int width = 0;
  int height = 0;
  int channels = 1;
  std::vector<std::uint8_t> pixels;

  Image() = default;
  Image(int w, int h, int c) : width(w), height(h), channels(c), pixels(static_cast<std::size_t>(w) * h * c, 0) {
    if (c != 1 && c != 3) throw ShapeError("images have 1 or 3 channels");
  }

  std::uint8_t& at(int x, int y, int c) { return pixels[(static_cast<std::size_t>(y) * width + x) * channels + c]; }
  std::uint8_t at(int x, int y, int c) const {
    return pixels[(static_cast<std::size_t>(y) * width + x) * channels + c];
  }
  double real(int x, int y, int c) const { return at(x, y, c) / 255.0; }

  friend bool operator==(const Image&, const Image&) = default;
};

// Real view -> byte: clamp to [0, 1], scale, round half to even.
inline std::uint8_t to_byte(double v) {
  const double s = std::clamp(v, 0.0, 1.0) * 255.0;
  return static_cast<std::uint8_t>(std::nearbyint(s));
}

inline Plane channel_plane(const Image& img, int c) {
  if (c < 0 || c >= img.channels) throw ShapeError("channel index out of range");
  Plane p(img.width, img.height);
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x) p.at(x, y) = img.real(x, y, c);
  return p;
}

inline Image image_from_planes(const std::vector<Plane>& planes) {
  if (planes.size() != 1 && planes.size() != 3) throw ShapeError("images have 1 or 3 channels");
  const int w = planes[0].width, h = planes[0].height;
  for (const auto& p : planes)
    if (p.width != w || p.height != h) throw ShapeError("channel planes differ in size");
  Image img(w, h, static_cast<int>(planes.size()));
  for (int c = 0; c < img.channels; ++c)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) img.at(x, y, c) = to_byte(planes[c].at(x, y));
  return img;
}

// BT.601 full-range luma on the real view. Written as
// G + 0.299 (R - G) + 0.114 (B - G) so gray pixels map to themselves exactly.
inline double luma(double r, double g, double b) { return g + 0.299 * (r - g) + 0.114 * (b - g); }

inline Plane rgb_to_y(const Image& img) {
  if (img.channels != 3) throw ShapeError("rgb_to_y needs a 3-channel image, got " + std::to_string(img.channels));
  Plane p(img.width, img.height);
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x) p.at(x, y) = luma(img.real(x, y, 0), img.real(x, y, 1), img.real(x, y, 2));
  return p;
}

// Luminance of any image: Y for RGB, the plane itself for gray.
inline Plane luminance(const Image& img) { return img.channels == 3 ? rgb_to_y(img) : channel_plane(img, 0); }

struct YCbCr {
  Plane y, cb, cr;
};

inline YCbCr rgb_to_ycbcr(const Image& img) {
  if (img.channels != 3) throw ShapeError("rgb_to_ycbcr needs a 3-channel image");
  YCbCr out{Plane(img.width, img.height), Plane(img.width, img.height), Plane(img.width, img.height)};
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x) {
      const double r = img.real(x, y, 0), g = img.real(x, y, 1), b = img.real(x, y, 2);
      const double l = luma(r, g, b);
      out.y.at(x, y) = l;
      out.cb.at(x, y) = 0.5 + (b - l) / 1.772;
      out.cr.at(x, y) = 0.5 + (r - l) / 1.402;
    }
  return out;
}

inline Image ycbcr_to_rgb(const YCbCr& ycc) {
  const int w = ycc.y.width, h = ycc.y.height;
  std::vector<Plane> rgb(3, Plane(w, h));
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const double l = ycc.y.at(x, y);
      const double r = l + 1.402 * (ycc.cr.at(x, y) - 0.5);
      const double b = l + 1.772 * (ycc.cb.at(x, y) - 0.5);
      rgb[0].at(x, y) = r;
      rgb[1].at(x, y) = (l - 0.299 * r - 0.114 * b) / 0.587;
      rgb[2].at(x, y) = b;
    }
  return image_from_planes(rgb);
}

// 8-bit gray and RGB PNG; palette images are expanded to RGB and alpha is
// dropped. Other bit depths are rejected.
inline Image load_png(const std::filesystem::path& path) {
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&img, path.string().c_str()))
    throw IoError("cannot read PNG '" + path.string() + "': " + img.message);
  if (img.format & PNG_FORMAT_FLAG_LINEAR) {
    png_image_free(&img);
    throw IoError("unsupported PNG bit depth in '" + path.string() + "' (only 8-bit is supported)");
  }
  const bool color = (img.format & PNG_FORMAT_FLAG_COLOR) != 0;
  const bool alpha = (img.format & PNG_FORMAT_FLAG_ALPHA) != 0;
  img.format = color ? (alpha ? PNG_FORMAT_RGBA : PNG_FORMAT_RGB) : (alpha ? PNG_FORMAT_GA : PNG_FORMAT_GRAY);
  const int stored = static_cast<int>(PNG_IMAGE_SAMPLE_CHANNELS(img.format));
  std::vector<std::uint8_t> buf(PNG_IMAGE_SIZE(img));
  if (!png_image_finish_read(&img, nullptr, buf.data(), 0, nullptr))
    throw IoError("cannot decode PNG '" + path.string() + "': " + img.message);
  Image out(static_cast<int>(img.width), static_cast<int>(img.height), color ? 3 : 1);
  const std::size_t n = static_cast<std::size_t>(out.width) * out.height;
  for (std::size_t i = 0; i < n; ++i)
    for (int c = 0; c < out.channels; ++c) out.pixels[i * out.channels + c] = buf[i * stored + c];
  return out;
}

inline void save_png(const Image& image, const std::filesystem::path& path) {
  if (image.channels != 1 && image.channels != 3) throw IoError("PNG output needs 1 or 3 channels");
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  img.width = static_cast<png_uint_32>(image.width);
  img.height = static_cast<png_uint_32>(image.height);
  img.format = image.channels == 3 ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  if (!png_image_write_to_file(&img, path.string().c_str(), 0, image.pixels.data(), 0, nullptr))
    throw IoError("cannot write PNG '" + path.string() + "': " + img.message);
}

}  // namespace mtlu
