#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <numbers>
#include <string>
#include <vector>

#include "mtlu/errors.hpp"
#include "mtlu/image.hpp"
#include "mtlu/metrics.hpp"
#include "mtlu/networks.hpp"
#include "mtlu/resample.hpp"
#include "mtlu/tensor.hpp"

namespace mtlu {

struct NamedPlane {
  std::string name;
  Plane plane;
};

template <class T>
Tensor<T> to_tensor(const Plane& p) {
  Tensor<T> t({1, 1, p.height, p.width});
  for (std::size_t i = 0; i < p.data.size(); ++i) t[i] = static_cast<T>(p.data[i]);
  return t;
}

template <class T>
Plane to_plane(const Tensor<T>& t, std::int64_t n = 0, std::int64_t c = 0) {
  const Shape s = t.shape();
  Plane p(static_cast<int>(s.w), static_cast<int>(s.h));
  for (std::int64_t y = 0; y < s.h; ++y)
    for (std::int64_t x = 0; x < s.w; ++x) p.at(static_cast<int>(x), static_cast<int>(y)) = t.at(n, c, y, x);
  return p;
}

// Largest top-left crop whose sides are multiples of m.
inline Plane mod_crop(const Plane& p, int m) {
  return crop(p, 0, 0, p.width - p.width % m, p.height - p.height % m);
}

inline Plane quantize8(Plane p) {
  for (auto& v : p.data) v = to_byte(v) / 255.0;
  return p;
}

// Procedural test image: a shaded background with anti-aliased rectangles,
// ellipses and stripes, some filled with sinusoidal gratings, quantized to
// 8 bits.
inline Plane synthesize_texture(int width, int height, Rng& rng) {
  if (width < 1 || height < 1) throw ShapeError("synthetic image must be non-empty");
  Plane img(width, height);
  const double b0 = rng.uniform(0.25, 0.75), bx = rng.uniform(-0.3, 0.3), by = rng.uniform(-0.3, 0.3);
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x)
      img.at(x, y) = b0 + bx * (x / static_cast<double>(width) - 0.5) + by * (y / static_cast<double>(height) - 0.5);

  constexpr int kSub = 4;
  const int shapes = 4 + static_cast<int>(rng.below(7));
  for (int s = 0; s < shapes; ++s) {
    const int kind = static_cast<int>(rng.below(3));  // 0 rect, 1 ellipse, 2 stripe
    const double cx = rng.uniform(0, width), cy = rng.uniform(0, height);
    const double rx = rng.uniform(0.05, 0.35) * width, ry = rng.uniform(0.05, 0.35) * height;
    const double theta = rng.uniform(0, std::numbers::pi);
    const double ct = std::cos(theta), st = std::sin(theta);
    const double level = rng.uniform(0.0, 1.0);
    const bool grating = rng.uniform() < 0.35;
    const double freq = rng.uniform(0.08, 0.35), phase = rng.uniform(0, 2 * std::numbers::pi);
    const double gt = rng.uniform(0, std::numbers::pi), amp = rng.uniform(0.1, 0.35);
    const double half_thick = rng.uniform(0.6, 2.5);

    const int x0 = std::max(0, static_cast<int>(cx - std::hypot(rx, ry)) - 3);
    const int x1 = std::min(width, static_cast<int>(cx + std::hypot(rx, ry)) + 3);
    const int y0 = std::max(0, static_cast<int>(cy - std::hypot(rx, ry)) - 3);
    const int y1 = std::min(height, static_cast<int>(cy + std::hypot(rx, ry)) + 3);
    for (int y = y0; y < y1; ++y)
      for (int x = x0; x < x1; ++x) {
        int hit = 0;
        for (int sy = 0; sy < kSub; ++sy)
          for (int sx = 0; sx < kSub; ++sx) {
            const double px = x + (sx + 0.5) / kSub - cx, py = y + (sy + 0.5) / kSub - cy;
            const double u = ct * px + st * py, v = -st * px + ct * py;
            bool inside = false;
            if (kind == 0) inside = std::abs(u) <= rx && std::abs(v) <= ry;
            else if (kind == 1) inside = (u * u) / (rx * rx) + (v * v) / (ry * ry) <= 1.0;
            else inside = std::abs(v) <= half_thick && std::abs(u) <= rx;
            hit += inside;
          }
        if (hit == 0) continue;
        double value = level;
        if (grating)
          value += amp * std::sin(2 * std::numbers::pi * freq * (std::cos(gt) * x + std::sin(gt) * y) + phase);
        const double cover = hit / static_cast<double>(kSub * kSub);
        img.at(x, y) = (1.0 - cover) * img.at(x, y) + cover * value;
      }
  }
  return quantize8(clip01(std::move(img)));
}

// Deterministic corpus; image i is drawn from the i-th child stream of the seed.
inline std::vector<NamedPlane> synthetic_corpus(int count, int size, std::uint64_t seed) {
  if (count < 0) throw ConfigError("synthetic image count must be non-negative");
  Rng master(seed);
  std::vector<NamedPlane> out;
  out.reserve(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) {
    Rng r = master.split();
    char name[32];
    std::snprintf(name, sizeof name, "synth_%04d", i);
    out.push_back({name, synthesize_texture(size, size, r)});
  }
  return out;
}

// Luminance planes of every PNG in a directory, sorted by file name.
inline std::vector<NamedPlane> load_luma_dir(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw IoError("image directory '" + dir.string() + "' not found");
  std::vector<std::filesystem::path> files;
  for (const auto& e : std::filesystem::directory_iterator(dir)) {
    auto ext = e.path().extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
    if (e.is_regular_file() && ext == ".png") files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  if (files.empty()) throw IoError("no PNG images in '" + dir.string() + "'");
  std::vector<NamedPlane> out;
  for (const auto& f : files) out.push_back({f.stem().string(), luminance(load_png(f))});
  return out;
}

inline void save_plane_png(const Plane& p, const std::filesystem::path& path) {
  save_png(image_from_planes({p}), path);
}

// Low-resolution counterpart of an HR plane: mod-crop by r, then bicubic /r.
struct SrPair {
  Plane hr;
  Plane lr;
};

inline SrPair make_sr_pair(const Plane& hr, int factor) {
  if (factor < 1) throw ConfigError("SR factor must be positive");
  Plane h = mod_crop(hr, factor);
  if (h.width < factor || h.height < factor) throw ShapeError("image smaller than the SR factor");
  Plane l = resize_bicubic(h, h.width / factor, h.height / factor);
  return {std::move(h), std::move(l)};
}

struct DatasetSpec {
  Task task = Task::super_resolution;
  int factor = 2;
  double sigma = 25.0;
  int patch = 24;  // input patch side (LR side for SR)
  bool augment = true;

  int target_patch() const { return task == Task::super_resolution ? patch * factor : patch; }
};

template <class T>
struct Batch {
  Tensor<T> input;
  Tensor<T> target;
};

struct PatchCoord {
  int image = 0;
  int x = 0;  // top-left in input coordinates
  int y = 0;
  int transform = 0;  // dihedral element 0..7
};

namespace detail {

// Dihedral transform of a square patch: bit 2 transposes, bit 1 flips rows, bit 0 flips columns.
inline void dihedral_copy(const Plane& src, int x0, int y0, int side, int t, double* dst) {
  for (int y = 0; y < side; ++y)
    for (int x = 0; x < side; ++x) {
      int sx = x, sy = y;
      if (t & 4) std::swap(sx, sy);
      if (t & 2) sy = side - 1 - sy;
      if (t & 1) sx = side - 1 - sx;
      dst[static_cast<std::size_t>(y) * side + x] = src.at(x0 + sx, y0 + sy);
    }
}

}  // namespace detail

// Random aligned (input, target) patches. SR inputs come from a bicubic LR
// version computed once per image; denoising draws fresh noise per patch.
class PatchDataset {
 public:
  PatchDataset(std::vector<NamedPlane> images, DatasetSpec spec) : spec_(spec) {
    if (images.empty()) throw ConfigError("training set is empty");
    if (spec.patch < 1) throw ConfigError("patch size must be positive");
    if (!(spec.sigma >= 0.0)) throw ConfigError("noise level must be non-negative");
    for (auto& im : images) {
      Plane input, target;
      if (spec.task == Task::super_resolution) {
        auto pair = make_sr_pair(im.plane, spec.factor);
        input = std::move(pair.lr);
        target = std::move(pair.hr);
      } else {
        input = im.plane;
      }
      if (input.width < spec.patch || input.height < spec.patch)
        throw ShapeError("image '" + im.name + "' (" + std::to_string(im.plane.width) + "x" +
                         std::to_string(im.plane.height) + ") is smaller than the patch size");
      names_.push_back(std::move(im.name));
      inputs_.push_back(std::move(input));
      targets_.push_back(std::move(target));
    }
  }

  const DatasetSpec& spec() const { return spec_; }
  std::size_t size() const { return inputs_.size(); }

  PatchCoord draw_coord(Rng& rng) const {
    PatchCoord c;
    c.image = static_cast<int>(rng.below(inputs_.size()));
    const Plane& in = inputs_[c.image];
    c.x = static_cast<int>(rng.below(static_cast<std::uint64_t>(in.width - spec_.patch + 1)));
    c.y = static_cast<int>(rng.below(static_cast<std::uint64_t>(in.height - spec_.patch + 1)));
    c.transform = spec_.augment ? static_cast<int>(rng.below(8)) : 0;
    return c;
  }

  template <class T>
  Batch<T> sample(Rng& rng, int n) const {
    if (n < 1) throw ConfigError("batch size must be positive");
    const int p = spec_.patch, tp = spec_.target_patch();
    Batch<T> b{Tensor<T>({n, 1, p, p}), Tensor<T>({n, 1, tp, tp})};
    std::vector<double> in(static_cast<std::size_t>(p) * p), tg(static_cast<std::size_t>(tp) * tp);
    for (int i = 0; i < n; ++i) {
      const PatchCoord c = draw_coord(rng);
      detail::dihedral_copy(inputs_[c.image], c.x, c.y, p, c.transform, in.data());
      if (spec_.task == Task::super_resolution) {
        detail::dihedral_copy(targets_[c.image], c.x * spec_.factor, c.y * spec_.factor, tp, c.transform,
                              tg.data());
      } else {
        tg = in;
        const double s = spec_.sigma / 255.0;
        for (auto& v : in) v += s * rng.normal();
      }
      std::copy(in.begin(), in.end(), b.input.data().begin() + static_cast<std::ptrdiff_t>(i) * p * p);
      std::copy(tg.begin(), tg.end(), b.target.data().begin() + static_cast<std::ptrdiff_t>(i) * tp * tp);
    }
    return b;
  }

 private:
  DatasetSpec spec_;
  std::vector<std::string> names_;
  std::vector<Plane> inputs_;
  std::vector<Plane> targets_;
};

}  // namespace mtlu
