#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <variant>
#include <vector>

#include "mtlu/errors.hpp"
#include "mtlu/tensor.hpp"

namespace mtlu {

enum class ActivationKind { relu, prelu, mtlu, maxout, apl, plf };

inline std::string_view to_string(ActivationKind k) {
  switch (k) {
    case ActivationKind::relu: return "relu";
    case ActivationKind::prelu: return "prelu";
    case ActivationKind::mtlu: return "mtlu";
    case ActivationKind::maxout: return "maxout";
    case ActivationKind::apl: return "apl";
    case ActivationKind::plf: return "plf";
  }
  return "?";
}

inline ActivationKind parse_activation_kind(std::string_view s) {
  for (auto k : {ActivationKind::relu, ActivationKind::prelu, ActivationKind::mtlu,
                 ActivationKind::maxout, ActivationKind::apl, ActivationKind::plf})
    if (to_string(k) == s) return k;
  throw ConfigError("unknown activation kind '" + std::string(s) + "'");
}

// How MTLU parameter gradients are normalized. The default divides the raw
// per-bin sums by N = signals_per_channel / bins, i.e. scales them by
// bins / signals; signal_count divides by the raw signal count; none yields
// the exact gradient of the loss.
enum class GradNormalization { bins_over_signals, signal_count, none };

inline std::string_view to_string(GradNormalization g) {
  switch (g) {
    case GradNormalization::bins_over_signals: return "bins_over_signals";
    case GradNormalization::signal_count: return "signal_count";
    case GradNormalization::none: return "none";
  }
  return "?";
}

inline GradNormalization parse_grad_normalization(std::string_view s) {
  for (auto g : {GradNormalization::bins_over_signals, GradNormalization::signal_count,
                 GradNormalization::none})
    if (to_string(g) == s) return g;
  throw ConfigError("unknown gradient normalization '" + std::string(s) + "'");
}

// Hyperparameters for every activation family; only the fields of the
// selected kind are used.
struct ActivationSpec {
  ActivationKind kind = ActivationKind::mtlu;
  int bins = 40;
  double bin_width = 0.05;
  std::optional<double> left_edge;  // defaults to -bins * bin_width / 2
  bool shared = false;              // one MTLU for all channels
  GradNormalization grad_norm = GradNormalization::bins_over_signals;
  int apl_kernels = 5;
  int plf_segments = 40;
  double plf_interval = 0.05;
  double prelu_init = 0.25;

  friend bool operator==(const ActivationSpec&, const ActivationSpec&) = default;
};

// Equidistant bins of MTLU. Anchor k sits at (origin + k) * width where
// origin = left_edge / width, snapped to the nearest integer when it is
// within 1e-9 of one, so anchors on the width grid are exact multiples of
// the width (0.05 is an anchor of the default geometry, not 0.05 + ulp).
class BinGeometry {
 public:
  BinGeometry(int bins, double width, double left_edge) : bins_(bins), width_(width), left_(left_edge) {
    if (bins <= 0) throw ConfigError("MTLU needs at least one bin");
    if (!(width > 0.0) || !std::isfinite(width)) throw ConfigError("MTLU bin width must be positive");
    if (!std::isfinite(left_edge)) throw ConfigError("MTLU left edge must be finite");
    origin_ = left_edge / width;
    const double r = std::round(origin_);
    if (std::abs(origin_ - r) <= 1e-9 * std::max(1.0, std::abs(r))) origin_ = r;
  }

  static BinGeometry symmetric(int bins, double width) {
    return BinGeometry(bins, width, -static_cast<double>(bins) * width / 2.0);
  }

  int bins() const { return bins_; }
  double width() const { return width_; }
  double left_edge() const { return left_; }
  double origin() const { return origin_; }
  double right_edge() const { return anchor(bins_); }

  // Bin edges c_0 .. c_K; bin k covers [c_k, c_{k+1}), tails clamp to the edge bins.
  double anchor(int k) const { return (origin_ + k) * width_; }

  // Index of the bin owning x: the largest k in [0, K-1] with x >= c_k, or 0.
  int index(double x) const;

  friend bool operator==(const BinGeometry& a, const BinGeometry& b) {
    return a.bins_ == b.bins_ && a.width_ == b.width_ && a.left_ == b.left_;
  }

 private:
  int bins_;
  double width_;
  double left_;
  double origin_;
};

// Precision-specific bin lookup: divide and floor, then a fix-up against the anchor
// table so the result agrees with comparisons against the anchors themselves.
// Cost does not depend on the bin count.
template <class T>
class BinLocator {
 public:
  explicit BinLocator(const BinGeometry& g)
      : bins_(g.bins()),
        anchors_(static_cast<std::size_t>(g.bins()) + 1),
        lo_(static_cast<std::size_t>(g.bins())),
        hi_(static_cast<std::size_t>(g.bins())) {
    for (int k = 0; k <= bins_; ++k) anchors_[k] = static_cast<T>(g.anchor(k));
    // NaN edges never compare true, so the tail bins absorb everything
    // beyond them, including infinities.
    const T open = std::numeric_limits<T>::quiet_NaN();
    for (int k = 0; k < bins_; ++k) {
      lo_[k] = k == 0 ? open : anchors_[k];
      hi_[k] = k + 1 == bins_ ? open : anchors_[k + 1];
    }
    left_ = anchors_[0];
    inv_width_ = static_cast<T>(1.0 / g.width());
    top_ = static_cast<T>(bins_ - 1);
  }

  int operator()(T x) const {
    int i = guess(x, lo_.data(), hi_.data());
    return settle(x, i);
  }

  // Batch form of operator(): out[j] = (*this)(x[j]).
  void operator()(const T* x, std::int32_t* out, std::size_t n) const {
    const T* lo = lo_.data();
    const T* hi = hi_.data();
    for (std::size_t j = 0; j < n; ++j) out[j] = guess(x[j], lo, hi);
    for (std::size_t j = 0; j < n; ++j) {
      const int i = out[j];
      if ((x[j] < lo[i]) | (x[j] >= hi[i])) [[unlikely]]
        out[j] = settle(x[j], i);
    }
  }

  const std::vector<T>& anchors() const { return anchors_; }

 private:
  int guess(T x, const T* lo, const T* hi) const {
    T t = (x - left_) * inv_width_;
    t = t > T(0) ? t : T(0);  // also maps NaN to 0
    t = t < top_ ? t : top_;
    const int i = static_cast<int>(t);
    return i - static_cast<int>(x < lo[i]) + static_cast<int>(x >= hi[i]);
  }

  int settle(T x, int i) const {
    while (i > 0 && x < anchors_[i]) --i;
    while (i + 1 < bins_ && x >= anchors_[i + 1]) ++i;
    return i < bins_ ? i : bins_ - 1;
  }

  int bins_;
  std::vector<T> anchors_;
  std::vector<T> lo_;
  std::vector<T> hi_;
  T left_;
  T inv_width_;
  T top_;
};

inline int BinGeometry::index(double x) const {
  if (std::isnan(x)) throw ConfigError("bin index of NaN");
  return BinLocator<double>(*this)(x);
}

template <class T>
struct MtluParams {
  BinGeometry geometry = BinGeometry::symmetric(40, 0.05);
  std::int64_t channels = 0;
  bool shared = false;
  GradNormalization grad_norm = GradNormalization::bins_over_signals;
  Var<T> slopes;   // (1, P, 1, K), P = shared ? 1 : channels
  Var<T> offsets;  // (1, P, 1, K)

  std::int64_t rows() const { return shared ? 1 : channels; }
  std::int64_t row_of(std::int64_t c) const { return shared ? 0 : c; }
};

inline int bin_index(double x, const BinGeometry& g) { return g.index(x); }

template <class T>
int bin_index(double x, const MtluParams<T>& p) {
  return p.geometry.index(x);
}

template <class T>
MtluParams<T> make_mtlu(std::int64_t channels, const BinGeometry& g, bool shared = false,
                        GradNormalization norm = GradNormalization::bins_over_signals) {
  if (channels <= 0) throw ConfigError("MTLU needs a positive channel count");
  MtluParams<T> p;
  p.geometry = g;
  p.channels = channels;
  p.shared = shared;
  p.grad_norm = norm;
  const Shape s{1, p.rows(), 1, g.bins()};
  p.slopes = make_var(zeros<T>(s), true);
  p.offsets = make_var(zeros<T>(s), true);
  return p;
}

// MTLU equal to max(0, x) everywhere: zero must be an interior anchor.
template <class T>
MtluParams<T> mtlu_init_relu(std::int64_t channels, const BinGeometry& g, bool shared = false,
                             GradNormalization norm = GradNormalization::bins_over_signals) {
  int zero_anchor = -1;
  for (int k = 1; k < g.bins(); ++k)
    if (g.anchor(k) == 0.0) zero_anchor = k;
  if (zero_anchor < 0)
    throw ConfigError("ReLU initialization needs 0 to be an interior anchor (bins=" +
                      std::to_string(g.bins()) + ", left edge " + std::to_string(g.left_edge()) + ")");
  auto p = make_mtlu<T>(channels, g, shared, norm);
  auto a = p.slopes->data();
  for (std::int64_t r = 0; r < p.rows(); ++r)
    for (int k = zero_anchor; k < g.bins(); ++k) a[r * g.bins() + k] = T(1);
  return p;
}

template <class T>
MtluParams<T> mtlu_init_relu(std::int64_t channels, int bins, double width) {
  if (bins % 2 != 0)
    throw ConfigError("ReLU initialization with a symmetric range needs an even bin count, got " +
                      std::to_string(bins));
  return mtlu_init_relu<T>(channels, BinGeometry::symmetric(bins, width));
}

namespace detail {

inline void check_channels(std::int64_t got, std::int64_t want, const char* op) {
  if (got != want)
    throw ShapeError(std::string(op) + ": input has " + std::to_string(got) +
                     " channels, parameters have " + std::to_string(want));
}

// Test hook: when set, MTLU parameter gradients are deliberately wrong.
inline bool& mtlu_backward_fault() {
  static bool flag = false;
  return flag;
}

}  // namespace detail

// Scale applied to the raw per-bin sums: bins / signals, 1 / signals or 1,
// where signals is the number of inputs feeding one parameter row.
template <class T>
double mtlu_grad_factor(const MtluParams<T>& p, const Shape& s) {
  const double signals = static_cast<double>(s.n * s.h * s.w * (p.shared ? s.c : 1));
  if (signals == 0.0) return 0.0;
  switch (p.grad_norm) {
    case GradNormalization::bins_over_signals: return p.geometry.bins() / signals;
    case GradNormalization::signal_count: return 1.0 / signals;
    case GradNormalization::none: return 1.0;
  }
  return 1.0;
}

namespace detail {

template <class T>
std::vector<std::int32_t> mtlu_bins(const Tensor<T>& x, const MtluParams<T>& p) {
  std::vector<std::int32_t> k(x.size());
  BinLocator<T>(p.geometry)(x.data().data(), k.data(), k.size());
  return k;
}

template <class T>
void mtlu_apply(const Tensor<T>& x, const std::int32_t* k, const MtluParams<T>& p, T* out) {
  const Shape s = x.shape();
  const int bins = p.geometry.bins();
  const T* a = p.slopes->data().data();
  const T* b = p.offsets->data().data();
  const T* xd = x.data().data();
  const std::int64_t hw = s.h * s.w;
  for (std::int64_t n = 0; n < s.n; ++n)
    for (std::int64_t c = 0; c < s.c; ++c) {
      const T* ar = a + p.row_of(c) * bins;
      const T* br = b + p.row_of(c) * bins;
      const std::int64_t base = (n * s.c + c) * hw;
      for (std::int64_t i = base; i < base + hw; ++i) out[i] = ar[k[i]] * xd[i] + br[k[i]];
    }
}

// Adds the input gradient to gx (when non-null) and the scaled per-bin sums to ga, gb.
template <class T>
void mtlu_accumulate(const Tensor<T>& x, const T* up, const std::int32_t* k, const MtluParams<T>& p,
                     T* gx, T* ga, T* gb) {
  const Shape s = x.shape();
  const int bins = p.geometry.bins();
  const T* a = p.slopes->data().data();
  const T* xd = x.data().data();
  const std::int64_t hw = s.h * s.w;
  std::vector<double> sa(static_cast<std::size_t>(p.rows() * bins), 0.0);
  std::vector<double> sb(sa.size(), 0.0);
  for (std::int64_t n = 0; n < s.n; ++n)
    for (std::int64_t c = 0; c < s.c; ++c) {
      const std::int64_t r = p.row_of(c);
      const T* ar = a + r * bins;
      double* sar = sa.data() + r * bins;
      double* sbr = sb.data() + r * bins;
      const std::int64_t base = (n * s.c + c) * hw;
      if (gx)
        for (std::int64_t i = base; i < base + hw; ++i) gx[i] += ar[k[i]] * up[i];
      for (std::int64_t i = base; i < base + hw; ++i) {
        sar[k[i]] += static_cast<double>(xd[i]) * up[i];
        sbr[k[i]] += up[i];
      }
    }
  double factor = mtlu_grad_factor(p, s);
  if (mtlu_backward_fault()) factor *= 1.5;
  for (std::size_t i = 0; i < sa.size(); ++i) {
    if (ga) ga[i] += static_cast<T>(sa[i] * factor);
    if (gb) gb[i] += static_cast<T>(sb[i] * factor);
  }
}

}  // namespace detail

// f(x) = a[c][k] * x + b[c][k], k = bin of x; one multiply-add per element.
template <class T>
Tensor<T> mtlu_forward(const Tensor<T>& x, const MtluParams<T>& p) {
  detail::check_channels(x.shape().c, p.channels, "mtlu_forward");
  Tensor<T> out(x.shape());
  const auto k = detail::mtlu_bins(x, p);
  detail::mtlu_apply(x, k.data(), p, out.data().data());
  return out;
}

template <class T>
struct MtluGrads {
  Tensor<T> grad_x;
  Tensor<T> grad_a;
  Tensor<T> grad_b;
};

// grad_x is the within-bin slope times the upstream gradient. Parameter
// gradients are the per-bin sums of x*g and g, scaled by mtlu_grad_factor.
template <class T>
MtluGrads<T> mtlu_backward(const Tensor<T>& x, const Tensor<T>& upstream, const MtluParams<T>& p) {
  detail::check_channels(x.shape().c, p.channels, "mtlu_backward");
  if (!(upstream.shape() == x.shape())) throw ShapeError("mtlu_backward: upstream shape mismatch");
  MtluGrads<T> g{Tensor<T>(x.shape()), Tensor<T>(p.slopes->shape()), Tensor<T>(p.offsets->shape())};
  const auto k = detail::mtlu_bins(x, p);
  detail::mtlu_accumulate(x, upstream.data().data(), k.data(), p, g.grad_x.data().data(),
                          g.grad_a.data().data(), g.grad_b.data().data());
  return g;
}

namespace detail {

template <class T>
void accumulate(std::span<T> dst, const Tensor<T>& src) {
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

}  // namespace detail

template <class T>
Var<T> mtlu(Tape<T>& tape, const Var<T>& x, const MtluParams<T>& p) {
  detail::check_channels(x->shape().c, p.channels, "mtlu_forward");
  auto out = make_output(tape, x->shape(), {&x, &p.slopes, &p.offsets});
  auto k = std::make_shared<std::vector<std::int32_t>>(detail::mtlu_bins(*x, p));
  detail::mtlu_apply(*x, k->data(), p, out->data().data());
  if (out->requires_grad()) {
    tape.record([x, out, p, k] {
      auto grad_of = [](const Var<T>& v) { return v->requires_grad() ? v->grad().data() : nullptr; };
      detail::mtlu_accumulate(*x, out->grad().data(), k->data(), p, grad_of(x), grad_of(p.slopes),
                              grad_of(p.offsets));
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// ReLU

template <class T>
Tensor<T> relu_forward(const Tensor<T>& x) {
  Tensor<T> out(x.shape());
  auto o = out.data();
  const auto d = x.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = d[i] > T(0) ? d[i] : T(0);
  return out;
}

template <class T>
Var<T> relu(Tape<T>& tape, const Var<T>& x) {
  auto out = make_output(tape, x->shape(), {&x});
  auto y = relu_forward(*x);
  std::ranges::copy(y.data(), out->data().begin());
  if (out->requires_grad()) {
    tape.record([x, out] {
      const auto g = out->grad();
      const auto d = x->data();
      auto gx = x->grad();
      for (std::size_t i = 0; i < g.size(); ++i)
        if (d[i] > T(0)) gx[i] += g[i];
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// PReLU: x for x > 0, alpha[c] * x otherwise.

template <class T>
struct PreluParams {
  Var<T> alpha;  // (1, C, 1, 1)
  std::int64_t channels() const { return alpha->shape().c; }
};

template <class T>
PreluParams<T> make_prelu(std::int64_t channels, double init = 0.25) {
  if (channels <= 0) throw ConfigError("PReLU needs a positive channel count");
  if (!std::isfinite(init)) throw ConfigError("PReLU slope must be finite");
  return {make_var(Tensor<T>({1, channels, 1, 1}, std::vector<T>(channels, static_cast<T>(init))), true)};
}

template <class T>
Tensor<T> prelu_forward(const Tensor<T>& x, const PreluParams<T>& p) {
  const Shape s = x.shape();
  detail::check_channels(s.c, p.channels(), "prelu_forward");
  const auto al = p.alpha->data();
  Tensor<T> out(s);
  const std::int64_t hw = s.h * s.w;
  for (std::int64_t n = 0; n < s.n; ++n)
    for (std::int64_t c = 0; c < s.c; ++c)
      for (std::int64_t i = 0; i < hw; ++i) {
        const std::size_t j = static_cast<std::size_t>((n * s.c + c) * hw + i);
        const T v = x[j];
        out[j] = v > T(0) ? v : al[c] * v;
      }
  return out;
}

template <class T>
struct PreluGrads {
  Tensor<T> grad_x;
  Tensor<T> grad_alpha;
};

template <class T>
PreluGrads<T> prelu_backward(const Tensor<T>& x, const Tensor<T>& upstream, const PreluParams<T>& p) {
  const Shape s = x.shape();
  detail::check_channels(s.c, p.channels(), "prelu_backward");
  if (!(upstream.shape() == s)) throw ShapeError("prelu_backward: upstream shape mismatch");
  const auto al = p.alpha->data();
  PreluGrads<T> g{Tensor<T>(s), Tensor<T>(p.alpha->shape())};
  const std::int64_t hw = s.h * s.w;
  std::vector<double> acc(s.c, 0.0);
  for (std::int64_t n = 0; n < s.n; ++n)
    for (std::int64_t c = 0; c < s.c; ++c)
      for (std::int64_t i = 0; i < hw; ++i) {
        const std::size_t j = static_cast<std::size_t>((n * s.c + c) * hw + i);
        const T v = x[j];
        const T u = upstream[j];
        if (v > T(0)) {
          g.grad_x[j] = u;
        } else {
          g.grad_x[j] = al[c] * u;
          acc[c] += static_cast<double>(v) * u;
        }
      }
  for (std::int64_t c = 0; c < s.c; ++c) g.grad_alpha[c] = static_cast<T>(acc[c]);
  return g;
}

template <class T>
Var<T> prelu(Tape<T>& tape, const Var<T>& x, const PreluParams<T>& p) {
  auto out = make_output(tape, x->shape(), {&x, &p.alpha});
  auto y = prelu_forward(*x, p);
  std::ranges::copy(y.data(), out->data().begin());
  if (out->requires_grad()) {
    tape.record([x, out, p] {
      Tensor<T> up(out->shape(), std::vector<T>(out->grad().begin(), out->grad().end()));
      auto g = prelu_backward(*x, up, p);
      if (x->requires_grad()) detail::accumulate(x->grad(), g.grad_x);
      if (p.alpha->requires_grad()) detail::accumulate(p.alpha->grad(), g.grad_alpha);
    });
  }
  return out;
}

// The two-bin MTLU that reproduces PReLU: bins [-1, 0) and [0, 1) with
// tails, slopes (alpha, 1), zero offsets.
template <class T>
MtluParams<T> mtlu_from_prelu(const PreluParams<T>& p) {
  auto m = make_mtlu<T>(p.channels(), BinGeometry(2, 1.0, -1.0), false, GradNormalization::none);
  auto a = m.slopes->data();
  const auto al = p.alpha->data();
  for (std::int64_t c = 0; c < p.channels(); ++c) {
    a[c * 2] = al[c];
    a[c * 2 + 1] = T(1);
  }
  return m;
}

// ---------------------------------------------------------------------------
// MaxOut over channel pairs (2j, 2j+1); ties go to the lower channel.

template <class T>
Tensor<T> maxout_forward(const Tensor<T>& x) {
  const Shape s = x.shape();
  if (s.c % 2 != 0) throw ShapeError("maxout: channel count must be even, got " + std::to_string(s.c));
  const std::int64_t oc = s.c / 2, hw = s.h * s.w;
  Tensor<T> out({s.n, oc, s.h, s.w});
  for (std::int64_t n = 0; n < s.n; ++n)
    for (std::int64_t j = 0; j < oc; ++j)
      for (std::int64_t i = 0; i < hw; ++i) {
        const T lo = x[static_cast<std::size_t>((n * s.c + 2 * j) * hw + i)];
        const T hi = x[static_cast<std::size_t>((n * s.c + 2 * j + 1) * hw + i)];
        out[static_cast<std::size_t>((n * oc + j) * hw + i)] = hi > lo ? hi : lo;
      }
  return out;
}

template <class T>
Tensor<T> maxout_backward(const Tensor<T>& x, const Tensor<T>& upstream) {
  const Shape s = x.shape();
  if (s.c % 2 != 0) throw ShapeError("maxout: channel count must be even, got " + std::to_string(s.c));
  const std::int64_t oc = s.c / 2, hw = s.h * s.w;
  if (!(upstream.shape() == Shape{s.n, oc, s.h, s.w}))
    throw ShapeError("maxout_backward: upstream shape mismatch");
  Tensor<T> gx(s);
  for (std::int64_t n = 0; n < s.n; ++n)
    for (std::int64_t j = 0; j < oc; ++j)
      for (std::int64_t i = 0; i < hw; ++i) {
        const std::size_t lo = static_cast<std::size_t>((n * s.c + 2 * j) * hw + i);
        const std::size_t hi = static_cast<std::size_t>((n * s.c + 2 * j + 1) * hw + i);
        const T u = upstream[static_cast<std::size_t>((n * oc + j) * hw + i)];
        if (x[hi] > x[lo])
          gx[hi] = u;
        else
          gx[lo] = u;
      }
  return gx;
}

template <class T>
Var<T> maxout(Tape<T>& tape, const Var<T>& x) {
  auto y = maxout_forward(*x);
  auto out = make_output(tape, y.shape(), {&x});
  std::ranges::copy(y.data(), out->data().begin());
  if (out->requires_grad()) {
    tape.record([x, out] {
      Tensor<T> up(out->shape(), std::vector<T>(out->grad().begin(), out->grad().end()));
      detail::accumulate(x->grad(), maxout_backward(*x, up));
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// APL, spatially invariant: h(x) = max(0, x) + sum_s a[c][s] * max(0, b[c][s] - x).
// Work per element is linear in the kernel count S.

template <class T>
struct AplParams {
  int kernels = 0;
  Var<T> a;  // (1, C, 1, S)
  Var<T> b;  // (1, C, 1, S)
  std::int64_t channels() const { return a->shape().c; }
};

// a = 0 (starts as ReLU), hinge positions evenly spread over [-1, 1].
template <class T>
AplParams<T> make_apl(std::int64_t channels, int kernels) {
  if (channels <= 0) throw ConfigError("APL needs a positive channel count");
  if (kernels < 0) throw ConfigError("APL kernel count must be non-negative");
  AplParams<T> p;
  p.kernels = kernels;
  p.a = make_var(zeros<T>({1, channels, 1, kernels}), true);
  p.b = make_var(zeros<T>({1, channels, 1, kernels}), true);
  auto b = p.b->data();
  for (std::int64_t c = 0; c < channels; ++c)
    for (int s = 0; s < kernels; ++s)
      b[c * kernels + s] =
          kernels == 1 ? T(0) : static_cast<T>(-1.0 + 2.0 * s / static_cast<double>(kernels - 1));
  return p;
}

template <class T>
Tensor<T> apl_forward(const Tensor<T>& x, const AplParams<T>& p) {
  const Shape s = x.shape();
  detail::check_channels(s.c, p.channels(), "apl_forward");
  const int S = p.kernels;
  const auto a = p.a->data();
  const auto b = p.b->data();
  Tensor<T> out(s);
  const std::int64_t hw = s.h * s.w;
  for (std::int64_t n = 0; n < s.n; ++n)
    for (std::int64_t c = 0; c < s.c; ++c) {
      const T* ac = a.data() + c * S;
      const T* bc = b.data() + c * S;
      const std::size_t base = static_cast<std::size_t>((n * s.c + c) * hw);
      for (std::int64_t i = 0; i < hw; ++i) {
        const T v = x[base + i];
        T y = v > T(0) ? v : T(0);
        for (int k = 0; k < S; ++k) {
          const T hinge = bc[k] - v;
          y += ac[k] * (hinge > T(0) ? hinge : T(0));
        }
        out[base + i] = y;
      }
    }
  return out;
}

template <class T>
struct AplGrads {
  Tensor<T> grad_x;
  Tensor<T> grad_a;
  Tensor<T> grad_b;
};

template <class T>
AplGrads<T> apl_backward(const Tensor<T>& x, const Tensor<T>& upstream, const AplParams<T>& p) {
  const Shape s = x.shape();
  detail::check_channels(s.c, p.channels(), "apl_backward");
  if (!(upstream.shape() == s)) throw ShapeError("apl_backward: upstream shape mismatch");
  const int S = p.kernels;
  const auto a = p.a->data();
  const auto b = p.b->data();
  AplGrads<T> g{Tensor<T>(s), Tensor<T>(p.a->shape()), Tensor<T>(p.b->shape())};
  std::vector<double> sa(static_cast<std::size_t>(s.c * S), 0.0), sb(sa.size(), 0.0);
  const std::int64_t hw = s.h * s.w;
  for (std::int64_t n = 0; n < s.n; ++n)
    for (std::int64_t c = 0; c < s.c; ++c) {
      const T* ac = a.data() + c * S;
      const T* bc = b.data() + c * S;
      const std::size_t base = static_cast<std::size_t>((n * s.c + c) * hw);
      for (std::int64_t i = 0; i < hw; ++i) {
        const T v = x[base + i];
        const T u = upstream[base + i];
        T slope = v > T(0) ? T(1) : T(0);
        for (int k = 0; k < S; ++k) {
          const T hinge = bc[k] - v;
          if (hinge > T(0)) {
            slope -= ac[k];
            sa[c * S + k] += static_cast<double>(hinge) * u;
            sb[c * S + k] += static_cast<double>(ac[k]) * u;
          }
        }
        g.grad_x[base + i] = slope * u;
      }
    }
  for (std::size_t i = 0; i < sa.size(); ++i) {
    g.grad_a[i] = static_cast<T>(sa[i]);
    g.grad_b[i] = static_cast<T>(sb[i]);
  }
  return g;
}

template <class T>
Var<T> apl(Tape<T>& tape, const Var<T>& x, const AplParams<T>& p) {
  auto out = make_output(tape, x->shape(), {&x, &p.a, &p.b});
  auto y = apl_forward(*x, p);
  std::ranges::copy(y.data(), out->data().begin());
  if (out->requires_grad()) {
    tape.record([x, out, p] {
      Tensor<T> up(out->shape(), std::vector<T>(out->grad().begin(), out->grad().end()));
      auto g = apl_backward(*x, up, p);
      if (x->requires_grad()) detail::accumulate(x->grad(), g.grad_x);
      if (p.a->requires_grad()) detail::accumulate(p.a->grad(), g.grad_a);
      if (p.b->requires_grad()) detail::accumulate(p.b->grad(), g.grad_b);
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// PLF: linear interpolation between anchor values on a uniform grid
// p_m = first + m * interval, m = 0..M. Outside [p_0, p_M] the edge segment
// is extended. Each anchor value shapes the two segments that touch it.

template <class T>
struct PlfParams {
  int segments = 0;  // M; there are M + 1 anchors
  double interval = 0.05;
  double first_anchor = -1.0;
  Var<T> values;  // (1, C, 1, M + 1)
  std::int64_t channels() const { return values->shape().c; }
  double anchor(int m) const { return first_anchor + m * interval; }
};

// Symmetric grid around 0 with values sampling max(0, x), so the initial
// function is exactly ReLU when M is even.
template <class T>
PlfParams<T> make_plf(std::int64_t channels, int segments, double interval) {
  if (channels <= 0) throw ConfigError("PLF needs a positive channel count");
  if (segments < 1) throw ConfigError("PLF needs at least one segment");
  if (!(interval > 0.0)) throw ConfigError("PLF anchor interval must be positive");
  PlfParams<T> p;
  p.segments = segments;
  p.interval = interval;
  p.first_anchor = -static_cast<double>(segments) * interval / 2.0;
  p.values = make_var(zeros<T>({1, channels, 1, segments + 1}), true);
  auto v = p.values->data();
  for (std::int64_t c = 0; c < channels; ++c)
    for (int m = 0; m <= segments; ++m)
      v[c * (segments + 1) + m] = static_cast<T>(std::max(0.0, p.anchor(m)));
  return p;
}

namespace detail {

// Segment index in [0, M-1] and the local coordinate t (unclamped, so the
// edge segments extrapolate).
template <class T>
inline std::pair<int, T> plf_locate(T x, T first, T inv_interval, int segments) {
  const T u = (x - first) * inv_interval;
  int j;
  if (!(u > T(0)))
    j = 0;
  else if (u >= static_cast<T>(segments))
    j = segments - 1;
  else
    j = static_cast<int>(u);
  return {j, u - static_cast<T>(j)};
}

}  // namespace detail

template <class T>
Tensor<T> plf_forward(const Tensor<T>& x, const PlfParams<T>& p) {
  const Shape s = x.shape();
  detail::check_channels(s.c, p.channels(), "plf_forward");
  const int M = p.segments;
  const auto v = p.values->data();
  const T first = static_cast<T>(p.first_anchor);
  const T inv = static_cast<T>(1.0 / p.interval);
  Tensor<T> out(s);
  const std::int64_t hw = s.h * s.w;
  for (std::int64_t n = 0; n < s.n; ++n)
    for (std::int64_t c = 0; c < s.c; ++c) {
      const T* vc = v.data() + c * (M + 1);
      const std::size_t base = static_cast<std::size_t>((n * s.c + c) * hw);
      for (std::int64_t i = 0; i < hw; ++i) {
        const auto [j, t] = detail::plf_locate(x[base + i], first, inv, M);
        out[base + i] = (T(1) - t) * vc[j] + t * vc[j + 1];
      }
    }
  return out;
}

template <class T>
struct PlfGrads {
  Tensor<T> grad_x;
  Tensor<T> grad_values;
};

template <class T>
PlfGrads<T> plf_backward(const Tensor<T>& x, const Tensor<T>& upstream, const PlfParams<T>& p) {
  const Shape s = x.shape();
  detail::check_channels(s.c, p.channels(), "plf_backward");
  if (!(upstream.shape() == s)) throw ShapeError("plf_backward: upstream shape mismatch");
  const int M = p.segments;
  const auto v = p.values->data();
  const T first = static_cast<T>(p.first_anchor);
  const T inv = static_cast<T>(1.0 / p.interval);
  PlfGrads<T> g{Tensor<T>(s), Tensor<T>(p.values->shape())};
  std::vector<double> acc(static_cast<std::size_t>(s.c * (M + 1)), 0.0);
  const std::int64_t hw = s.h * s.w;
  for (std::int64_t n = 0; n < s.n; ++n)
    for (std::int64_t c = 0; c < s.c; ++c) {
      const T* vc = v.data() + c * (M + 1);
      double* ac = acc.data() + c * (M + 1);
      const std::size_t base = static_cast<std::size_t>((n * s.c + c) * hw);
      for (std::int64_t i = 0; i < hw; ++i) {
        const auto [j, t] = detail::plf_locate(x[base + i], first, inv, M);
        const T u = upstream[base + i];
        g.grad_x[base + i] = (vc[j + 1] - vc[j]) * inv * u;
        ac[j] += (1.0 - static_cast<double>(t)) * u;
        ac[j + 1] += static_cast<double>(t) * u;
      }
    }
  for (std::size_t i = 0; i < acc.size(); ++i) g.grad_values[i] = static_cast<T>(acc[i]);
  return g;
}

template <class T>
Var<T> plf(Tape<T>& tape, const Var<T>& x, const PlfParams<T>& p) {
  auto out = make_output(tape, x->shape(), {&x, &p.values});
  auto y = plf_forward(*x, p);
  std::ranges::copy(y.data(), out->data().begin());
  if (out->requires_grad()) {
    tape.record([x, out, p] {
      Tensor<T> up(out->shape(), std::vector<T>(out->grad().begin(), out->grad().end()));
      auto g = plf_backward(*x, up, p);
      if (x->requires_grad()) detail::accumulate(x->grad(), g.grad_x);
      if (p.values->requires_grad()) detail::accumulate(p.values->grad(), g.grad_values);
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Parameter accounting

inline std::int64_t param_count(ActivationKind kind, std::int64_t channels,
                                const ActivationSpec& hyper = {}) {
  switch (kind) {
    case ActivationKind::relu:
    case ActivationKind::maxout: return 0;
    case ActivationKind::prelu: return channels;
    case ActivationKind::mtlu: return 2LL * hyper.bins * (hyper.shared ? 1 : channels);
    case ActivationKind::apl: return 2LL * hyper.apl_kernels * channels;
    case ActivationKind::plf: return static_cast<std::int64_t>(hyper.plf_segments + 1) * channels;
  }
  return 0;
}

inline std::int64_t conv_param_count(std::int64_t in_c, std::int64_t out_c, std::int64_t kernel,
                                     bool with_bias = true) {
  return out_c * in_c * kernel * kernel + (with_bias ? out_c : 0);
}

// ---------------------------------------------------------------------------
// Runtime-selected activation used by the network builders.

template <class T>
class Activation {
 public:
  using Params = std::variant<std::monostate, PreluParams<T>, MtluParams<T>, AplParams<T>, PlfParams<T>>;

  Activation() = default;

  // channels is the input channel count of the activation.
  static Activation make(const ActivationSpec& spec, std::int64_t channels) {
    Activation act;
    act.spec_ = spec;
    act.channels_ = channels;
    switch (spec.kind) {
      case ActivationKind::relu: break;
      case ActivationKind::maxout:
        if (channels % 2 != 0) throw ConfigError("maxout needs an even channel count");
        break;
      case ActivationKind::prelu: act.params_ = make_prelu<T>(channels, spec.prelu_init); break;
      case ActivationKind::mtlu: {
        const BinGeometry g = spec.left_edge
                                  ? BinGeometry(spec.bins, spec.bin_width, *spec.left_edge)
                                  : BinGeometry::symmetric(spec.bins, spec.bin_width);
        act.params_ = mtlu_init_relu<T>(channels, g, spec.shared, spec.grad_norm);
        break;
      }
      case ActivationKind::apl: act.params_ = make_apl<T>(channels, spec.apl_kernels); break;
      case ActivationKind::plf:
        act.params_ = make_plf<T>(channels, spec.plf_segments, spec.plf_interval);
        break;
    }
    return act;
  }

  const ActivationSpec& spec() const { return spec_; }
  ActivationKind kind() const { return spec_.kind; }
  std::int64_t in_channels() const { return channels_; }
  std::int64_t out_channels() const {
    return spec_.kind == ActivationKind::maxout ? channels_ / 2 : channels_;
  }
  const Params& params() const { return params_; }
  Params& params() { return params_; }

  Var<T> apply(Tape<T>& tape, const Var<T>& x) const {
    switch (spec_.kind) {
      case ActivationKind::relu: return relu(tape, x);
      case ActivationKind::maxout: return maxout(tape, x);
      case ActivationKind::prelu: return prelu(tape, x, std::get<PreluParams<T>>(params_));
      case ActivationKind::mtlu: return mtlu(tape, x, std::get<MtluParams<T>>(params_));
      case ActivationKind::apl: return apl(tape, x, std::get<AplParams<T>>(params_));
      case ActivationKind::plf: return plf(tape, x, std::get<PlfParams<T>>(params_));
    }
    throw Error("unreachable activation kind");
  }

  // Learnable tensors with stable suffix names.
  std::vector<std::pair<std::string, Var<T>>> parameters() const {
    std::vector<std::pair<std::string, Var<T>>> out;
    std::visit(
        [&](const auto& p) {
          using P = std::decay_t<decltype(p)>;
          if constexpr (std::is_same_v<P, PreluParams<T>>) {
            out.emplace_back("alpha", p.alpha);
          } else if constexpr (std::is_same_v<P, MtluParams<T>>) {
            out.emplace_back("slopes", p.slopes);
            out.emplace_back("offsets", p.offsets);
          } else if constexpr (std::is_same_v<P, AplParams<T>>) {
            out.emplace_back("a", p.a);
            out.emplace_back("b", p.b);
          } else if constexpr (std::is_same_v<P, PlfParams<T>>) {
            out.emplace_back("values", p.values);
          }
        },
        params_);
    return out;
  }

 private:
  ActivationSpec spec_{};
  std::int64_t channels_ = 0;
  Params params_{};
};

}  // namespace mtlu
