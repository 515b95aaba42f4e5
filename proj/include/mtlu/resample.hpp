#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "mtlu/errors.hpp"
#include "mtlu/tensor.hpp"

namespace mtlu {

// Single-channel real-valued image, row-major.
struct Plane {
  int width = 0;
  int height = 0;
  std::vector<double> data;

  Plane() = default;
  Plane(int w, int h, double fill = 0.0)
      : width(w), height(h), data(static_cast<std::size_t>(w) * static_cast<std::size_t>(h), fill) {
    if (w < 0 || h < 0) throw ShapeError("plane dimensions must be non-negative");
  }

  double& at(int x, int y) { return data[static_cast<std::size_t>(y) * width + x]; }
  double at(int x, int y) const { return data[static_cast<std::size_t>(y) * width + x]; }

  friend bool operator==(const Plane&, const Plane&) = default;
};

inline Plane crop(const Plane& p, int x0, int y0, int w, int h) {
  if (x0 < 0 || y0 < 0 || w < 0 || h < 0 || x0 + w > p.width || y0 + h > p.height)
    throw ShapeError("crop window outside the plane");
  Plane out(w, h);
  for (int y = 0; y < h; ++y)
    std::copy_n(p.data.begin() + static_cast<std::ptrdiff_t>(y0 + y) * p.width + x0, w,
                out.data.begin() + static_cast<std::ptrdiff_t>(y) * w);
  return out;
}

// Keys cubic convolution kernel; a = -0.5 gives the Catmull-Rom-family
// interpolant used for all resampling in the library.
inline double cubic_kernel(double x, double a = -0.5) {
  x = std::abs(x);
  if (x <= 1.0) return ((a + 2.0) * x - (a + 3.0)) * x * x + 1.0;
  if (x < 2.0) return ((a * x - 5.0 * a) * x + 8.0 * a) * x - 4.0 * a;
  return 0.0;
}

namespace detail {

struct Taps {
  int first = 0;                 // source index of weights[0], may be out of range
  int ref = 0;                   // clamped source index nearest to the center
  std::vector<double> weights;   // normalized to sum 1
};

// Per-output-sample kernel taps along one axis. When shrinking, the kernel
// is stretched by 1/scale so it also acts as the anti-alias prefilter.
inline std::vector<Taps> resample_taps(int in_size, int out_size) {
  const double scale = static_cast<double>(out_size) / in_size;
  const double stretch = std::min(scale, 1.0);
  const double radius = 2.0 / stretch;
  std::vector<Taps> taps(static_cast<std::size_t>(out_size));
  for (int o = 0; o < out_size; ++o) {
    const double center = (o + 0.5) / scale - 0.5;
    const int lo = static_cast<int>(std::floor(center - radius)) + 1;
    const int hi = static_cast<int>(std::ceil(center + radius)) - 1;
    Taps& t = taps[o];
    t.first = lo;
    t.ref = std::clamp(static_cast<int>(std::lround(center)), 0, in_size - 1);
    double total = 0.0;
    for (int j = lo; j <= hi; ++j) {
      const double w = cubic_kernel((center - j) * stretch);
      t.weights.push_back(w);
      total += w;
    }
    for (auto& w : t.weights) w /= total;
  }
  return taps;
}

// out = ref + sum_j w_j (x_j - ref): exact on constant input.
inline double apply_taps(const Taps& t, const double* src, std::ptrdiff_t stride, int size) {
  const double ref = src[t.ref * stride];
  double acc = 0.0;
  for (std::size_t i = 0; i < t.weights.size(); ++i) {
    const int j = std::clamp(t.first + static_cast<int>(i), 0, size - 1);
    acc += t.weights[i] * (src[j * stride] - ref);
  }
  return ref + acc;
}

// Transpose of apply_taps: scatters g back onto the samples it was read from.
inline void apply_taps_adjoint(const Taps& t, double g, double* dst, std::ptrdiff_t stride, int size) {
  double total = 0.0;
  for (std::size_t i = 0; i < t.weights.size(); ++i) {
    const int j = std::clamp(t.first + static_cast<int>(i), 0, size - 1);
    dst[j * stride] += t.weights[i] * g;
    total += t.weights[i];
  }
  dst[t.ref * stride] += (1.0 - total) * g;
}

}  // namespace detail

// Separable cubic resampling with edge-clamped sampling.
inline Plane resize_bicubic(const Plane& in, int out_w, int out_h) {
  if (out_w < 1 || out_h < 1) throw ShapeError("bicubic resize: output dimensions must be at least 1");
  if (in.width < 1 || in.height < 1) throw ShapeError("bicubic resize: empty input");
  const auto tx = detail::resample_taps(in.width, out_w);
  const auto ty = detail::resample_taps(in.height, out_h);
  Plane mid(out_w, in.height);
  for (int y = 0; y < in.height; ++y) {
    const double* row = in.data.data() + static_cast<std::ptrdiff_t>(y) * in.width;
    for (int x = 0; x < out_w; ++x) mid.at(x, y) = detail::apply_taps(tx[x], row, 1, in.width);
  }
  Plane out(out_w, out_h);
  for (int x = 0; x < out_w; ++x) {
    const double* col = mid.data.data() + x;
    for (int y = 0; y < out_h; ++y) out.at(x, y) = detail::apply_taps(ty[y], col, out_w, in.height);
  }
  return out;
}

// Adjoint of resize_bicubic(., out.width, out.height) for an input of in_w x in_h.
inline Plane resize_bicubic_adjoint(const Plane& grad_out, int in_w, int in_h) {
  const int out_w = grad_out.width, out_h = grad_out.height;
  const auto tx = detail::resample_taps(in_w, out_w);
  const auto ty = detail::resample_taps(in_h, out_h);
  Plane mid(out_w, in_h);
  for (int x = 0; x < out_w; ++x)
    for (int y = 0; y < out_h; ++y) detail::apply_taps_adjoint(ty[y], grad_out.at(x, y), mid.data.data() + x, out_w, in_h);
  Plane g(in_w, in_h);
  for (int y = 0; y < in_h; ++y) {
    double* row = g.data.data() + static_cast<std::ptrdiff_t>(y) * in_w;
    for (int x = 0; x < out_w; ++x) detail::apply_taps_adjoint(tx[x], mid.at(x, y), row, 1, in_w);
  }
  return g;
}

inline Plane resize_bicubic(const Plane& in, double scale) {
  if (!(scale > 0.0)) throw ShapeError("bicubic resize: scale must be positive");
  const int w = static_cast<int>(std::lround(in.width * scale));
  const int h = static_cast<int>(std::lround(in.height * scale));
  if (w < 1 || h < 1)
    throw ShapeError("bicubic resize: scale " + std::to_string(scale) + " gives an empty image");
  return resize_bicubic(in, w, h);
}

// Bicubic upscaling of every (n, c) plane of a tensor by an integer factor.
template <class T>
Tensor<T> upscale_bicubic(const Tensor<T>& x, int factor) {
  const Shape s = x.shape();
  Tensor<T> out({s.n, s.c, s.h * factor, s.w * factor});
  Plane p(static_cast<int>(s.w), static_cast<int>(s.h));
  const std::size_t in_hw = static_cast<std::size_t>(s.h * s.w);
  const std::size_t out_hw = in_hw * factor * factor;
  for (std::int64_t i = 0; i < s.n * s.c; ++i) {
    for (std::size_t j = 0; j < in_hw; ++j) p.data[j] = x[i * in_hw + j];
    const Plane up = resize_bicubic(p, p.width * factor, p.height * factor);
    for (std::size_t j = 0; j < out_hw; ++j) out[i * out_hw + j] = static_cast<T>(up.data[j]);
  }
  return out;
}

template <class T>
Var<T> upscale_bicubic(Tape<T>& tape, const Var<T>& x, int factor) {
  const Shape s = x->shape();
  auto out = make_output(tape, {s.n, s.c, s.h * factor, s.w * factor}, {&x});
  const Tensor<T> y = upscale_bicubic(*x, factor);
  std::ranges::copy(y.data(), out->data().begin());
  if (out->requires_grad())
    tape.record([x, out, factor] {
      const Shape s = x->shape();
      const std::size_t in_hw = static_cast<std::size_t>(s.h * s.w);
      const std::size_t out_hw = in_hw * factor * factor;
      Plane g(static_cast<int>(s.w) * factor, static_cast<int>(s.h) * factor);
      auto go = out->grad();
      auto gx = x->grad();
      for (std::int64_t i = 0; i < s.n * s.c; ++i) {
        for (std::size_t j = 0; j < out_hw; ++j) g.data[j] = go[i * out_hw + j];
        const Plane back = resize_bicubic_adjoint(g, static_cast<int>(s.w), static_cast<int>(s.h));
        for (std::size_t j = 0; j < in_hw; ++j) gx[i * in_hw + j] += static_cast<T>(back.data[j]);
      }
    });
  return out;
}

}  // namespace mtlu
