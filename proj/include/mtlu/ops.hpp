#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <string>
#include <vector>

#include "mtlu/errors.hpp"
#include "mtlu/parallel.hpp"
#include "mtlu/tensor.hpp"

namespace mtlu {

enum class Mode { train, eval };

// Stride-1 convolution with zero "same" padding. weight is (outC, inC, k, k)
// with k odd, bias is (1, outC, 1, 1).
template <class T>
struct ConvParams {
  Var<T> weight;
  Var<T> bias;

  std::int64_t out_channels() const { return weight->shape().n; }
  std::int64_t in_channels() const { return weight->shape().c; }
  std::int64_t kernel() const { return weight->shape().h; }
};

// Kaiming fan-in initialization: N(0, 2 / (inC*k*k)) weights, zero bias.
template <class T>
ConvParams<T> make_conv(std::int64_t in_c, std::int64_t out_c, std::int64_t k, Rng& rng) {
  if (k <= 0 || k % 2 == 0) throw ConfigError("conv kernel size must be odd, got " + std::to_string(k));
  if (in_c <= 0 || out_c <= 0) throw ConfigError("conv channel counts must be positive");
  const double stddev = std::sqrt(2.0 / static_cast<double>(in_c * k * k));
  ConvParams<T> p;
  p.weight = make_var(randn<T>({out_c, in_c, k, k}, rng, 0.0, stddev), true);
  p.bias = make_var(zeros<T>({1, out_c, 1, 1}), true);
  return p;
}

namespace detail {

template <class T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MatMap = Eigen::Map<RowMat<T>>;
template <class T>
using ConstMatMap = Eigen::Map<const RowMat<T>>;

// Unfolds one CHW sample into a (C*k*k, H*W) column matrix.
template <class T>
void im2col(const T* src, std::int64_t channels, std::int64_t height, std::int64_t width,
            std::int64_t k, T* col) {
  const std::int64_t pad = (k - 1) / 2;
  const std::int64_t hw = height * width;
  for (std::int64_t c = 0; c < channels; ++c) {
    const T* plane = src + c * hw;
    for (std::int64_t ky = 0; ky < k; ++ky) {
      for (std::int64_t kx = 0; kx < k; ++kx) {
        T* row = col + ((c * k + ky) * k + kx) * hw;
        const std::int64_t dx = kx - pad;
        const std::int64_t x_lo = std::max<std::int64_t>(0, -dx);
        const std::int64_t x_hi = std::min<std::int64_t>(width, width - dx);
        for (std::int64_t y = 0; y < height; ++y) {
          T* out = row + y * width;
          const std::int64_t sy = y + ky - pad;
          if (sy < 0 || sy >= height || x_lo >= x_hi) {
            std::fill(out, out + width, T(0));
            continue;
          }
          std::fill(out, out + x_lo, T(0));
          std::memcpy(out + x_lo, plane + sy * width + x_lo + dx,
                      static_cast<std::size_t>(x_hi - x_lo) * sizeof(T));
          std::fill(out + x_hi, out + width, T(0));
        }
      }
    }
  }
}

// Adjoint of im2col: scatters-and-adds columns back into a CHW sample.
template <class T>
void col2im_add(const T* col, std::int64_t channels, std::int64_t height, std::int64_t width,
                std::int64_t k, T* dst) {
  const std::int64_t pad = (k - 1) / 2;
  const std::int64_t hw = height * width;
  for (std::int64_t c = 0; c < channels; ++c) {
    T* plane = dst + c * hw;
    for (std::int64_t ky = 0; ky < k; ++ky) {
      for (std::int64_t kx = 0; kx < k; ++kx) {
        const T* row = col + ((c * k + ky) * k + kx) * hw;
        const std::int64_t dx = kx - pad;
        const std::int64_t x_lo = std::max<std::int64_t>(0, -dx);
        const std::int64_t x_hi = std::min<std::int64_t>(width, width - dx);
        for (std::int64_t y = 0; y < height; ++y) {
          const std::int64_t sy = y + ky - pad;
          if (sy < 0 || sy >= height) continue;
          const T* in = row + y * width;
          T* out = plane + sy * width + dx;
          for (std::int64_t x = x_lo; x < x_hi; ++x) out[x] += in[x];
        }
      }
    }
  }
}

inline void require_same_shape(const Shape& a, const Shape& b, const char* op) {
  if (!(a == b))
    throw ShapeError(std::string(op) + ": shape mismatch " + a.str() + " vs " + b.str());
}

}  // namespace detail

template <class T>
Var<T> conv2d(Tape<T>& tape, const Var<T>& x, const ConvParams<T>& p) {
  const Shape xs = x->shape();
  const Shape ws = p.weight->shape();
  if (ws.h != ws.w || ws.h % 2 == 0) throw ShapeError("conv2d: kernel must be square and odd");
  if (xs.c != ws.c)
    throw ShapeError("conv2d: input has " + std::to_string(xs.c) + " channels, kernel expects " +
                     std::to_string(ws.c));
  if (!(p.bias->shape() == Shape{1, ws.n, 1, 1})) throw ShapeError("conv2d: bias shape mismatch");

  const std::int64_t k = ws.h, in_c = ws.c, out_c = ws.n;
  const std::int64_t hw = xs.h * xs.w;
  const std::int64_t rows = in_c * k * k;
  auto out = make_output(tape, {xs.n, out_c, xs.h, xs.w}, {&x, &p.weight, &p.bias});

  const T* xd = x->data().data();
  T* od = out->data().data();
  const T* wd = p.weight->data().data();
  const T* bd = p.bias->data().data();
  parallel_for(static_cast<std::size_t>(xs.n), [&](std::size_t n) {
    const T* src = xd + n * in_c * hw;
    std::vector<T> col;
    const T* colp = src;
    if (k != 1) {
      col.resize(static_cast<std::size_t>(rows * hw));
      detail::im2col(src, in_c, xs.h, xs.w, k, col.data());
      colp = col.data();
    }
    detail::ConstMatMap<T> wm(wd, out_c, rows);
    detail::ConstMatMap<T> cm(colp, rows, hw);
    detail::MatMap<T> om(od + n * out_c * hw, out_c, hw);
    om.noalias() = wm * cm;
    for (std::int64_t o = 0; o < out_c; ++o) om.row(o).array() += bd[o];
  });

  if (out->requires_grad()) {
    tape.record([x, p, out, k, in_c, out_c, hw, rows, xs] {
      const T* gd = out->grad().data();
      const bool need_x = x->requires_grad();
      const bool need_w = p.weight->requires_grad();
      const bool need_b = p.bias->requires_grad();
      T* gx = need_x ? x->grad().data() : nullptr;
      const T* wd = p.weight->data().data();
      const T* xd = x->data().data();
      // Per-sample weight partials are summed in sample order afterwards so
      // the result does not depend on the worker count.
      std::vector<T> partial(need_w ? static_cast<std::size_t>(xs.n * out_c * rows) : 0);
      parallel_for(static_cast<std::size_t>(xs.n), [&](std::size_t n) {
        detail::ConstMatMap<T> gm(gd + n * out_c * hw, out_c, hw);
        if (need_w) {
          const T* src = xd + n * in_c * hw;
          std::vector<T> col;
          const T* colp = src;
          if (k != 1) {
            col.resize(static_cast<std::size_t>(rows * hw));
            detail::im2col(src, in_c, xs.h, xs.w, k, col.data());
            colp = col.data();
          }
          detail::ConstMatMap<T> cm(colp, rows, hw);
          detail::MatMap<T> pm(partial.data() + n * out_c * rows, out_c, rows);
          pm.noalias() = gm * cm.transpose();
        }
        if (need_x) {
          detail::ConstMatMap<T> wm(wd, out_c, rows);
          if (k == 1) {
            detail::MatMap<T> gxm(gx + n * in_c * hw, in_c, hw);
            gxm.noalias() += wm.transpose() * gm;
          } else {
            detail::RowMat<T> dcol = wm.transpose() * gm;
            detail::col2im_add(dcol.data(), in_c, xs.h, xs.w, k, gx + n * in_c * hw);
          }
        }
      });
      if (need_w) {
        auto gw = p.weight->grad();
        const std::size_t per = static_cast<std::size_t>(out_c * rows);
        for (std::int64_t n = 0; n < xs.n; ++n)
          for (std::size_t i = 0; i < per; ++i) gw[i] += partial[n * per + i];
      }
      if (need_b) {
        auto gb = p.bias->grad();
        for (std::int64_t n = 0; n < xs.n; ++n)
          for (std::int64_t o = 0; o < out_c; ++o) {
            const T* g = gd + (n * out_c + o) * hw;
            T s = T(0);
            for (std::int64_t i = 0; i < hw; ++i) s += g[i];
            gb[o] += s;
          }
      }
    });
  }
  return out;
}

// Per-channel batch normalization. Running statistics use
// running = momentum * running + (1 - momentum) * batch, with the unbiased
// batch variance feeding the running variance.
template <class T>
struct BnParams {
  Var<T> gamma;  // (1, C, 1, 1)
  Var<T> beta;   // (1, C, 1, 1)
  std::vector<double> running_mean;
  std::vector<double> running_var;
  double momentum = 0.9;
  double eps = 1e-5;

  std::int64_t channels() const { return gamma->shape().c; }
};

template <class T>
BnParams<T> make_batchnorm(std::int64_t channels, double momentum = 0.9, double eps = 1e-5) {
  if (channels <= 0) throw ConfigError("batchnorm needs a positive channel count");
  if (!(momentum > 0.0 && momentum < 1.0)) throw ConfigError("batchnorm momentum must lie in (0,1)");
  if (!(eps > 0.0)) throw ConfigError("batchnorm eps must be positive");
  BnParams<T> p;
  p.gamma = make_var(Tensor<T>({1, channels, 1, 1}, std::vector<T>(channels, T(1))), true);
  p.beta = make_var(zeros<T>({1, channels, 1, 1}), true);
  p.running_mean.assign(channels, 0.0);
  p.running_var.assign(channels, 1.0);
  p.momentum = momentum;
  p.eps = eps;
  return p;
}

template <class T>
Var<T> batchnorm(Tape<T>& tape, const Var<T>& x, BnParams<T>& p, Mode mode) {
  const Shape s = x->shape();
  if (s.c != p.channels())
    throw ShapeError("batchnorm: input has " + std::to_string(s.c) + " channels, parameters have " +
                     std::to_string(p.channels()));
  const std::int64_t hw = s.h * s.w;
  const std::int64_t m = s.n * hw;
  auto out = make_output(tape, s, {&x, &p.gamma, &p.beta});
  const auto xd = x->data();
  auto od = out->data();
  const auto gamma = p.gamma->data();
  const auto beta = p.beta->data();

  if (mode == Mode::eval) {
    std::vector<T> mul(s.c), shift(s.c);
    for (std::int64_t c = 0; c < s.c; ++c) {
      const double inv = 1.0 / std::sqrt(p.running_var[c] + p.eps);
      mul[c] = static_cast<T>(gamma[c] * inv);
      shift[c] = static_cast<T>(beta[c] - gamma[c] * p.running_mean[c] * inv);
    }
    for (std::int64_t n = 0; n < s.n; ++n)
      for (std::int64_t c = 0; c < s.c; ++c) {
        const std::size_t base = static_cast<std::size_t>((n * s.c + c) * hw);
        for (std::int64_t i = 0; i < hw; ++i) od[base + i] = mul[c] * xd[base + i] + shift[c];
      }
    if (out->requires_grad()) {
      tape.record([x, out, gamma_v = p.gamma, beta_v = p.beta, mul, rm = p.running_mean,
                   rv = p.running_var, eps = p.eps, s, hw] {
        const auto g = out->grad();
        const auto xd = x->data();
        const bool nx = x->requires_grad();
        std::span<T> gx = nx ? x->grad() : std::span<T>{};
        std::span<T> gg = gamma_v->requires_grad() ? gamma_v->grad() : std::span<T>{};
        std::span<T> gb = beta_v->requires_grad() ? beta_v->grad() : std::span<T>{};
        for (std::int64_t c = 0; c < s.c; ++c) {
          const double inv = 1.0 / std::sqrt(rv[c] + eps);
          double sg = 0.0, sgx = 0.0;
          for (std::int64_t n = 0; n < s.n; ++n) {
            const std::size_t base = static_cast<std::size_t>((n * s.c + c) * hw);
            for (std::int64_t i = 0; i < hw; ++i) {
              const double gi = g[base + i];
              sg += gi;
              sgx += gi * (xd[base + i] - rm[c]) * inv;
              if (nx) gx[base + i] += mul[c] * g[base + i];
            }
          }
          if (!gg.empty()) gg[c] += static_cast<T>(sgx);
          if (!gb.empty()) gb[c] += static_cast<T>(sg);
        }
      });
    }
    return out;
  }

  if (m <= 1) throw ShapeError("batchnorm: training needs more than one value per channel");
  std::vector<double> mean(s.c), inv_std(s.c);
  std::vector<T> xhat(x->size());
  for (std::int64_t c = 0; c < s.c; ++c) {
    double sum = 0.0;
    for (std::int64_t n = 0; n < s.n; ++n) {
      const std::size_t base = static_cast<std::size_t>((n * s.c + c) * hw);
      for (std::int64_t i = 0; i < hw; ++i) sum += xd[base + i];
    }
    const double mu = sum / static_cast<double>(m);
    double sq = 0.0;
    for (std::int64_t n = 0; n < s.n; ++n) {
      const std::size_t base = static_cast<std::size_t>((n * s.c + c) * hw);
      for (std::int64_t i = 0; i < hw; ++i) {
        const double d = xd[base + i] - mu;
        sq += d * d;
      }
    }
    const double var = sq / static_cast<double>(m);
    mean[c] = mu;
    inv_std[c] = 1.0 / std::sqrt(var + p.eps);
    for (std::int64_t n = 0; n < s.n; ++n) {
      const std::size_t base = static_cast<std::size_t>((n * s.c + c) * hw);
      for (std::int64_t i = 0; i < hw; ++i) {
        const T xh = static_cast<T>((xd[base + i] - mu) * inv_std[c]);
        xhat[base + i] = xh;
        od[base + i] = gamma[c] * xh + beta[c];
      }
    }
    const double unbiased = sq / static_cast<double>(m - 1);
    p.running_mean[c] = p.momentum * p.running_mean[c] + (1.0 - p.momentum) * mu;
    p.running_var[c] = p.momentum * p.running_var[c] + (1.0 - p.momentum) * unbiased;
  }

  if (out->requires_grad()) {
    tape.record([x, out, gamma_v = p.gamma, beta_v = p.beta, xhat = std::move(xhat), inv_std, s,
                 hw, m] {
      const auto g = out->grad();
      const auto gamma = gamma_v->data();
      const bool nx = x->requires_grad();
      std::span<T> gx = nx ? x->grad() : std::span<T>{};
      std::span<T> gg = gamma_v->requires_grad() ? gamma_v->grad() : std::span<T>{};
      std::span<T> gb = beta_v->requires_grad() ? beta_v->grad() : std::span<T>{};
      const double inv_m = 1.0 / static_cast<double>(m);
      for (std::int64_t c = 0; c < s.c; ++c) {
        double sum_g = 0.0, sum_gx = 0.0;
        for (std::int64_t n = 0; n < s.n; ++n) {
          const std::size_t base = static_cast<std::size_t>((n * s.c + c) * hw);
          for (std::int64_t i = 0; i < hw; ++i) {
            sum_g += g[base + i];
            sum_gx += static_cast<double>(g[base + i]) * xhat[base + i];
          }
        }
        if (!gg.empty()) gg[c] += static_cast<T>(sum_gx);
        if (!gb.empty()) gb[c] += static_cast<T>(sum_g);
        if (!nx) continue;
        // dx = gamma * inv_std / m * (m*g - sum(g) - xhat * sum(g*xhat))
        const double k = gamma[c] * inv_std[c];
        for (std::int64_t n = 0; n < s.n; ++n) {
          const std::size_t base = static_cast<std::size_t>((n * s.c + c) * hw);
          for (std::int64_t i = 0; i < hw; ++i)
            gx[base + i] += static_cast<T>(
                k * (g[base + i] - inv_m * sum_g - xhat[base + i] * inv_m * sum_gx));
        }
      }
    });
  }
  return out;
}

namespace detail {

inline void check_shuffle_factor(std::int64_t r, const char* op) {
  if (r < 1) throw ShapeError(std::string(op) + ": factor must be positive");
}

}  // namespace detail

// (N, C, H, W) -> (N, C/r^2, H*r, W*r) with
// out(n, c, h*r+dy, w*r+dx) = in(n, c*r^2 + dy*r + dx, h, w).
template <class T>
Tensor<T> pixel_shuffle(const Tensor<T>& x, std::int64_t r) {
  detail::check_shuffle_factor(r, "pixel_shuffle");
  const Shape s = x.shape();
  if (s.c % (r * r) != 0)
    throw ShapeError("pixel_shuffle: channel count " + std::to_string(s.c) +
                     " is not divisible by " + std::to_string(r * r));
  const std::int64_t oc = s.c / (r * r);
  Tensor<T> out({s.n, oc, s.h * r, s.w * r});
  for (std::int64_t n = 0; n < s.n; ++n)
    for (std::int64_t c = 0; c < oc; ++c)
      for (std::int64_t dy = 0; dy < r; ++dy)
        for (std::int64_t dx = 0; dx < r; ++dx) {
          const std::int64_t ic = c * r * r + dy * r + dx;
          for (std::int64_t h = 0; h < s.h; ++h)
            for (std::int64_t w = 0; w < s.w; ++w)
              out.at(n, c, h * r + dy, w * r + dx) = x.at(n, ic, h, w);
        }
  return out;
}

template <class T>
Tensor<T> pixel_unshuffle(const Tensor<T>& x, std::int64_t r) {
  detail::check_shuffle_factor(r, "pixel_unshuffle");
  const Shape s = x.shape();
  if (s.h % r != 0 || s.w % r != 0)
    throw ShapeError("pixel_unshuffle: spatial size " + std::to_string(s.h) + "x" +
                     std::to_string(s.w) + " is not divisible by " + std::to_string(r));
  const std::int64_t oh = s.h / r, ow = s.w / r;
  Tensor<T> out({s.n, s.c * r * r, oh, ow});
  for (std::int64_t n = 0; n < s.n; ++n)
    for (std::int64_t c = 0; c < s.c; ++c)
      for (std::int64_t dy = 0; dy < r; ++dy)
        for (std::int64_t dx = 0; dx < r; ++dx) {
          const std::int64_t oc = c * r * r + dy * r + dx;
          for (std::int64_t h = 0; h < oh; ++h)
            for (std::int64_t w = 0; w < ow; ++w)
              out.at(n, oc, h, w) = x.at(n, c, h * r + dy, w * r + dx);
        }
  return out;
}

template <class T>
Var<T> pixel_shuffle(Tape<T>& tape, const Var<T>& x, std::int64_t r) {
  Tensor<T> y = pixel_shuffle(*x, r);
  auto out = make_output(tape, y.shape(), {&x});
  std::ranges::copy(y.data(), out->data().begin());
  if (out->requires_grad()) {
    tape.record([x, out, r] {
      Tensor<T> g(out->shape(), std::vector<T>(out->grad().begin(), out->grad().end()));
      Tensor<T> back = pixel_unshuffle(g, r);
      auto gx = x->grad();
      for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += back[i];
    });
  }
  return out;
}

template <class T>
Var<T> pixel_unshuffle(Tape<T>& tape, const Var<T>& x, std::int64_t r) {
  Tensor<T> y = pixel_unshuffle(*x, r);
  auto out = make_output(tape, y.shape(), {&x});
  std::ranges::copy(y.data(), out->data().begin());
  if (out->requires_grad()) {
    tape.record([x, out, r] {
      Tensor<T> g(out->shape(), std::vector<T>(out->grad().begin(), out->grad().end()));
      Tensor<T> back = pixel_shuffle(g, r);
      auto gx = x->grad();
      for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += back[i];
    });
  }
  return out;
}

// Elementwise x + sign*y.
template <class T>
Var<T> add_scaled(Tape<T>& tape, const Var<T>& x, const Var<T>& y, T sign) {
  detail::require_same_shape(x->shape(), y->shape(), "add");
  auto out = make_output(tape, x->shape(), {&x, &y});
  const auto a = x->data();
  const auto b = y->data();
  auto o = out->data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = a[i] + sign * b[i];
  if (out->requires_grad()) {
    tape.record([x, y, out, sign] {
      const auto g = out->grad();
      if (x->requires_grad()) {
        auto gx = x->grad();
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
      }
      if (y->requires_grad()) {
        auto gy = y->grad();
        for (std::size_t i = 0; i < g.size(); ++i) gy[i] += sign * g[i];
      }
    });
  }
  return out;
}

template <class T>
Var<T> add(Tape<T>& tape, const Var<T>& x, const Var<T>& y) {
  return add_scaled(tape, x, y, T(1));
}

template <class T>
Var<T> sub(Tape<T>& tape, const Var<T>& x, const Var<T>& y) {
  return add_scaled(tape, x, y, T(-1));
}

template <class T>
Var<T> scale(Tape<T>& tape, const Var<T>& x, T factor) {
  auto out = make_output(tape, x->shape(), {&x});
  const auto a = x->data();
  auto o = out->data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = factor * a[i];
  if (out->requires_grad()) {
    tape.record([x, out, factor] {
      const auto g = out->grad();
      auto gx = x->grad();
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += factor * g[i];
    });
  }
  return out;
}

template <class T>
Var<T> identity(Tape<T>& tape, const Var<T>& x) {
  return scale(tape, x, T(1));
}

// Sum of all elements as a (1,1,1,1) scalar.
template <class T>
Var<T> sum(Tape<T>& tape, const Var<T>& x) {
  auto out = make_output(tape, {1, 1, 1, 1}, {&x});
  double acc = 0.0;
  for (T v : x->data()) acc += v;
  (*out)[0] = static_cast<T>(acc);
  if (out->requires_grad()) {
    tape.record([x, out] {
      const T g = out->grad()[0];
      for (auto& v : x->grad()) v += g;
    });
  }
  return out;
}

template <class T>
Var<T> mean(Tape<T>& tape, const Var<T>& x) {
  if (x->empty()) throw ShapeError("mean of an empty tensor");
  return scale(tape, sum(tape, x), T(1) / static_cast<T>(x->size()));
}

// Mean squared error as a scalar; accumulated in double.
template <class T>
Var<T> mse_loss(Tape<T>& tape, const Var<T>& pred, const Var<T>& target) {
  detail::require_same_shape(pred->shape(), target->shape(), "mse_loss");
  if (pred->empty()) throw ShapeError("mse_loss: empty tensors");
  auto out = make_output(tape, {1, 1, 1, 1}, {&pred, &target});
  const auto p = pred->data();
  const auto t = target->data();
  double acc = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double d = static_cast<double>(p[i]) - static_cast<double>(t[i]);
    acc += d * d;
  }
  const double count = static_cast<double>(p.size());
  (*out)[0] = static_cast<T>(acc / count);
  if (out->requires_grad()) {
    tape.record([pred, target, out, count] {
      const double g = out->grad()[0];
      const auto p = pred->data();
      const auto t = target->data();
      const double k = 2.0 * g / count;
      if (pred->requires_grad()) {
        auto gp = pred->grad();
        for (std::size_t i = 0; i < gp.size(); ++i)
          gp[i] += static_cast<T>(k * (static_cast<double>(p[i]) - t[i]));
      }
      if (target->requires_grad()) {
        auto gt = target->grad();
        for (std::size_t i = 0; i < gt.size(); ++i)
          gt[i] -= static_cast<T>(k * (static_cast<double>(p[i]) - t[i]));
      }
    });
  }
  return out;
}

}  // namespace mtlu
