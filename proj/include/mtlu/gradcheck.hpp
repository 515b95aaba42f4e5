#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <string>
#include <string_view>
#include <vector>

#include "mtlu/activations.hpp"
#include "mtlu/errors.hpp"
#include "mtlu/networks.hpp"
#include "mtlu/ops.hpp"
#include "mtlu/resample.hpp"
#include "mtlu/tensor.hpp"

namespace mtlu {

enum class GradScope { all, ops, activations, networks };

inline GradScope parse_grad_scope(std::string_view s) {
  if (s == "all") return GradScope::all;
  if (s == "ops") return GradScope::ops;
  if (s == "activations") return GradScope::activations;
  if (s == "networks") return GradScope::networks;
  throw ConfigError("unknown gradcheck scope '" + std::string(s) + "' (all, ops, activations, networks)");
}

struct GradCheckOptions {
  GradScope scope = GradScope::all;
  int seeds = 20;
  double tolerance = 1e-4;
  double step = 1e-3;          // central-difference step for op checks
  double network_step = 1e-5;  // step along random directions for whole networks
  std::uint64_t seed = 20240601;
  std::vector<std::string> only;  // restrict to these check names when non-empty
};

struct GradCheckResult {
  std::string name;
  std::string group;  // ops, activations or networks
  double worst_rel_error = 0.0;
  int cases = 0;
  int skipped = 0;  // coordinates or directions that crossed a kink
  bool passed = false;
};

namespace gradcheck {

using Builder = std::function<Var<double>(Tape<double>&, std::vector<int>*)>;

struct Wrt {
  std::string name;
  Var<double> var;
  double scale = 1.0;  // analytic gradient = scale * exact gradient
};

struct CaseResult {
  double worst = 0.0;
  int skipped = 0;
  bool usable = true;
};

// Scalar <x, r> for a fixed random r: gives every output a distinct upstream gradient.
inline Var<double> project(Tape<double>& tape, const Var<double>& x, const Tensor<double>& r) {
  auto out = make_output(tape, {1, 1, 1, 1}, {&x});
  double acc = 0.0;
  for (std::size_t i = 0; i < x->size(); ++i) acc += (*x)[i] * r[i];
  (*out)[0] = acc;
  if (out->requires_grad())
    tape.record([x, out, r] {
      const double g = out->grad()[0];
      auto gx = x->grad();
      for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += r[i] * g;
    });
  return out;
}

inline double loss_value(const Builder& f, std::vector<int>* sig) {
  Tape<double> tape(false);
  return (*f(tape, sig))[0];
}

inline std::vector<std::vector<double>> analytic(const Builder& f, std::vector<Wrt>& wrt, std::vector<int>& sig) {
  for (auto& w : wrt) {
    w.var->drop_grad();
    w.var->set_requires_grad(true);
  }
  Tape<double> tape;
  auto loss = f(tape, &sig);
  tape.backward(loss);
  std::vector<std::vector<double>> out;
  for (auto& w : wrt) {
    std::vector<double> g(w.var->size(), 0.0);
    if (w.var->has_grad()) {
      auto src = std::as_const(*w.var).grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] = src[i] / w.scale;
    }
    out.push_back(std::move(g));
    w.var->drop_grad();
  }
  return out;
}

// Every coordinate of every tensor in wrt; coordinates whose perturbation
// changes the kink signature are skipped.
inline CaseResult check_coordinates(const Builder& f, std::vector<Wrt> wrt, double h) {
  std::vector<int> base;
  const auto grads = analytic(f, wrt, base);
  CaseResult res;
  for (std::size_t t = 0; t < wrt.size(); ++t) {
    auto data = wrt[t].var->data();
    double num = 0.0, den = 1e-10;
    for (std::size_t i = 0; i < data.size(); ++i) {
      const double orig = data[i];
      std::vector<int> sp, sm;
      data[i] = orig + h;
      const double lp = loss_value(f, &sp);
      data[i] = orig - h;
      const double lm = loss_value(f, &sm);
      data[i] = orig;
      if (sp != base || sm != base) {
        ++res.skipped;
        continue;
      }
      const double fd = (lp - lm) / (2.0 * h);
      num = std::max(num, std::abs(grads[t][i] - fd));
      den = std::max({den, std::abs(fd), std::abs(grads[t][i])});
    }
    res.worst = std::max(res.worst, num / den);
  }
  return res;
}

// Directional derivative along a random direction over all of wrt; retried
// with a fresh direction when the perturbation crosses a kink.
inline CaseResult check_direction(const Builder& f, std::vector<Wrt> wrt, double h, Rng& rng, int attempts = 30) {
  std::vector<int> base;
  const auto grads = analytic(f, wrt, base);
  CaseResult res;
  for (int a = 0; a < attempts; ++a) {
    std::vector<std::vector<double>> dir;
    double predicted = 0.0;
    for (std::size_t t = 0; t < wrt.size(); ++t) {
      std::vector<double> d(wrt[t].var->size());
      for (std::size_t i = 0; i < d.size(); ++i) {
        d[i] = rng.normal();
        predicted += grads[t][i] * d[i];
      }
      dir.push_back(std::move(d));
    }
    auto shift = [&](double s) {
      for (std::size_t t = 0; t < wrt.size(); ++t) {
        auto data = wrt[t].var->data();
        for (std::size_t i = 0; i < data.size(); ++i) data[i] += s * dir[t][i];
      }
    };
    std::vector<std::vector<double>> saved;
    for (auto& w : wrt) saved.emplace_back(w.var->data().begin(), w.var->data().end());
    auto restore = [&] {
      for (std::size_t t = 0; t < wrt.size(); ++t) std::ranges::copy(saved[t], wrt[t].var->data().begin());
    };
    std::vector<int> sp, sm;
    shift(h);
    const double lp = loss_value(f, &sp);
    restore();
    shift(-h);
    const double lm = loss_value(f, &sm);
    restore();
    if (sp != base || sm != base) {
      ++res.skipped;
      continue;
    }
    const double fd = (lp - lm) / (2.0 * h);
    res.worst = std::abs(predicted - fd) / std::max({std::abs(fd), std::abs(predicted), 1e-10});
    return res;
  }
  res.usable = false;
  return res;
}

// Uniform draw in [lo, hi) at least `margin` away from every kink.
inline double away_from(Rng& rng, double lo, double hi, const std::vector<double>& kinks, double margin) {
  for (int i = 0; i < 100000; ++i) {
    const double v = rng.uniform(lo, hi);
    bool ok = true;
    for (double k : kinks)
      if (std::abs(v - k) < margin) {
        ok = false;
        break;
      }
    if (ok) return v;
  }
  throw Error("gradcheck: could not sample away from kinks");
}

inline Shape random_shape(Rng& rng, std::int64_t max_n, std::int64_t max_c, std::int64_t min_hw, std::int64_t max_hw) {
  auto pick = [&](std::int64_t lo, std::int64_t hi) {
    return lo + static_cast<std::int64_t>(rng.below(static_cast<std::uint64_t>(hi - lo + 1)));
  };
  return {pick(1, max_n), pick(1, max_c), pick(min_hw, max_hw), pick(min_hw, max_hw)};
}

inline Var<double> input(Shape s, Rng& rng) { return make_var(randn<double>(s, rng), true); }

// Kink signature of an activation input: which piece of the activation each element uses.
inline void activation_signature(const Activation<double>& act, const Tensor<double>& x, std::vector<int>& out) {
  const Shape s = x.shape();
  const std::int64_t hw = s.h * s.w;
  switch (act.kind()) {
    case ActivationKind::relu:
    case ActivationKind::prelu:
      for (double v : x.data()) out.push_back(v > 0.0);
      break;
    case ActivationKind::mtlu: {
      const auto& p = std::get<MtluParams<double>>(act.params());
      const BinLocator<double> loc(p.geometry);
      for (double v : x.data()) out.push_back(loc(v));
      break;
    }
    case ActivationKind::maxout:
      for (std::int64_t n = 0; n < s.n; ++n)
        for (std::int64_t j = 0; j < s.c / 2; ++j)
          for (std::int64_t i = 0; i < hw; ++i)
            out.push_back(x[x.index(n, 2 * j, 0, 0) + i] >= x[x.index(n, 2 * j + 1, 0, 0) + i]);
      break;
    case ActivationKind::apl: {
      const auto& p = std::get<AplParams<double>>(act.params());
      const std::int64_t S = p.kernels;
      for (std::int64_t n = 0; n < s.n; ++n)
        for (std::int64_t c = 0; c < s.c; ++c)
          for (std::int64_t i = 0; i < hw; ++i) {
            const double v = x[x.index(n, c, 0, 0) + i];
            int code = v > 0.0;
            for (std::int64_t k = 0; k < S; ++k) code = code * 2 + (v < (*p.b)[c * S + k]);
            out.push_back(code);
          }
      break;
    }
    case ActivationKind::plf: {
      const auto& p = std::get<PlfParams<double>>(act.params());
      for (double v : x.data()) {
        const double t = std::floor((v - p.first_anchor) / p.interval);
        out.push_back(static_cast<int>(std::clamp(t, -1.0, static_cast<double>(p.segments))));
      }
      break;
    }
  }
}

inline std::uint64_t name_seed(const std::string& name) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : name) h = (h ^ c) * 1099511628211ULL;
  return h % 1000;
}

struct Suite {
  const GradCheckOptions& opt;
  std::vector<GradCheckResult> results;

  bool wanted(const std::string& name, GradScope group) const {
    if (opt.scope != GradScope::all && opt.scope != group) return false;
    return opt.only.empty() || std::ranges::find(opt.only, name) != opt.only.end();
  }

  // fn(rng) -> CaseResult for one seed.
  void run(const std::string& name, GradScope group, const std::function<CaseResult(Rng&)>& fn) {
    if (!wanted(name, group)) return;
    GradCheckResult r;
    r.name = name;
    r.group = group == GradScope::ops ? "ops" : group == GradScope::activations ? "activations" : "networks";
    bool all_usable = true;
    for (int s = 0; s < opt.seeds; ++s) {
      Rng rng(opt.seed + 1000003ULL * static_cast<std::uint64_t>(s) + name_seed(name));
      const CaseResult c = fn(rng);
      r.skipped += c.skipped;
      if (!c.usable) {
        all_usable = false;
        continue;
      }
      ++r.cases;
      r.worst_rel_error = std::max(r.worst_rel_error, c.worst);
    }
    r.passed = all_usable && r.cases > 0 && r.worst_rel_error < opt.tolerance;
    results.push_back(r);
  }
};

inline void op_checks(Suite& suite) {
  const double h = suite.opt.step;
  suite.run("conv2d", GradScope::ops, [h](Rng& rng) {
    const Shape xs = random_shape(rng, 2, 4, 3, 6);
    const std::int64_t k = 1 + 2 * static_cast<std::int64_t>(rng.below(3));
    const std::int64_t oc = 1 + static_cast<std::int64_t>(rng.below(4));
    auto x = input(xs, rng);
    auto p = make_conv<double>(xs.c, oc, k, rng);
    p.bias = make_var(randn<double>({1, oc, 1, 1}, rng), true);
    const auto r = randn<double>({xs.n, oc, xs.h, xs.w}, rng);
    Builder f = [=](Tape<double>& t, std::vector<int>*) { return project(t, conv2d(t, x, p), r); };
    return check_coordinates(f, {{"x", x}, {"weight", p.weight}, {"bias", p.bias}}, h);
  });
  suite.run("batchnorm", GradScope::ops, [h](Rng& rng) {
    Shape xs = random_shape(rng, 2, 4, 2, 5);
    auto x = input(xs, rng);
    auto p = make_batchnorm<double>(xs.c);
    p.gamma = make_var(randn<double>({1, xs.c, 1, 1}, rng, 1.0, 0.3), true);
    p.beta = make_var(randn<double>({1, xs.c, 1, 1}, rng), true);
    const auto r = randn<double>(xs, rng);
    Builder f = [=](Tape<double>& t, std::vector<int>*) mutable {
      return project(t, batchnorm(t, x, p, Mode::train), r);
    };
    return check_coordinates(f, {{"x", x}, {"gamma", p.gamma}, {"beta", p.beta}}, h);
  });
  suite.run("batchnorm_eval", GradScope::ops, [h](Rng& rng) {
    Shape xs = random_shape(rng, 2, 4, 1, 5);
    auto x = input(xs, rng);
    auto p = make_batchnorm<double>(xs.c);
    p.gamma = make_var(randn<double>({1, xs.c, 1, 1}, rng, 1.0, 0.3), true);
    p.beta = make_var(randn<double>({1, xs.c, 1, 1}, rng), true);
    for (std::int64_t c = 0; c < xs.c; ++c) {
      p.running_mean[c] = rng.normal();
      p.running_var[c] = rng.uniform(0.2, 2.0);
    }
    const auto r = randn<double>(xs, rng);
    Builder f = [=](Tape<double>& t, std::vector<int>*) mutable {
      return project(t, batchnorm(t, x, p, Mode::eval), r);
    };
    return check_coordinates(f, {{"x", x}, {"gamma", p.gamma}, {"beta", p.beta}}, h);
  });
  suite.run("pixel_shuffle", GradScope::ops, [h](Rng& rng) {
    const std::int64_t r = 1 + static_cast<std::int64_t>(rng.below(3));
    Shape xs = random_shape(rng, 2, 2, 1, 3);
    xs.c *= r * r;
    auto x = input(xs, rng);
    const auto proj = randn<double>({xs.n, xs.c / (r * r), xs.h * r, xs.w * r}, rng);
    Builder f = [=](Tape<double>& t, std::vector<int>*) { return project(t, pixel_shuffle(t, x, r), proj); };
    return check_coordinates(f, {{"x", x}}, h);
  });
  suite.run("pixel_unshuffle", GradScope::ops, [h](Rng& rng) {
    const std::int64_t r = 1 + static_cast<std::int64_t>(rng.below(3));
    Shape xs = random_shape(rng, 2, 2, 1, 3);
    xs.h *= r;
    xs.w *= r;
    auto x = input(xs, rng);
    const auto proj = randn<double>({xs.n, xs.c * r * r, xs.h / r, xs.w / r}, rng);
    Builder f = [=](Tape<double>& t, std::vector<int>*) { return project(t, pixel_unshuffle(t, x, r), proj); };
    return check_coordinates(f, {{"x", x}}, h);
  });
  suite.run("upscale_bicubic", GradScope::ops, [h](Rng& rng) {
    const int r = 2 + static_cast<int>(rng.below(3));
    const Shape s = random_shape(rng, 2, 2, 1, 5);
    auto x = input(s, rng);
    const auto proj = randn<double>({s.n, s.c, s.h * r, s.w * r}, rng);
    Builder f = [=](Tape<double>& t, std::vector<int>*) { return project(t, upscale_bicubic(t, x, r), proj); };
    return check_coordinates(f, {{"x", x}}, h);
  });
  suite.run("add", GradScope::ops, [h](Rng& rng) {
    const Shape s = random_shape(rng, 2, 4, 1, 6);
    auto x = input(s, rng), y = input(s, rng);
    const auto r = randn<double>(s, rng);
    Builder f = [=](Tape<double>& t, std::vector<int>*) { return project(t, add(t, x, y), r); };
    return check_coordinates(f, {{"x", x}, {"y", y}}, h);
  });
  suite.run("fanout", GradScope::ops, [h](Rng& rng) {
    const Shape s = random_shape(rng, 2, 4, 1, 6);
    auto x = input(s, rng);
    const auto r = randn<double>(s, rng);
    Builder f = [=](Tape<double>& t, std::vector<int>*) {
      return project(t, add(t, scale(t, x, 2.0), sub(t, x, scale(t, x, 0.5))), r);
    };
    return check_coordinates(f, {{"x", x}}, h);
  });
  suite.run("mse_loss", GradScope::ops, [h](Rng& rng) {
    const Shape s = random_shape(rng, 2, 4, 1, 6);
    auto x = input(s, rng), y = input(s, rng);
    Builder f = [=](Tape<double>& t, std::vector<int>*) { return mse_loss(t, x, y); };
    return check_coordinates(f, {{"pred", x}, {"target", y}}, h);
  });
}

inline MtluParams<double> random_mtlu(Rng& rng, std::int64_t channels, GradNormalization norm, bool shared) {
  static constexpr int kBins[] = {4, 8, 20, 40};
  static constexpr double kWidths[] = {0.05, 0.1, 0.25};
  const int bins = kBins[rng.below(4)];
  const double width = kWidths[rng.below(3)];
  auto p = make_mtlu<double>(channels, BinGeometry::symmetric(bins, width), shared, norm);
  p.slopes = make_var(randn<double>(p.slopes->shape(), rng, 0.5, 0.5), true);
  p.offsets = make_var(randn<double>(p.offsets->shape(), rng, 0.0, 0.3), true);
  return p;
}

inline CaseResult mtlu_case(Rng& rng, GradNormalization norm, bool shared, double h) {
  const Shape s = random_shape(rng, 2, 4, 1, 6);
  auto p = random_mtlu(rng, s.c, norm, shared);
  const auto& g = p.geometry;
  std::vector<double> kinks;
  for (int k = 0; k <= g.bins(); ++k) kinks.push_back(g.anchor(k));
  auto x = make_var(Tensor<double>(s), true);
  for (auto& v : x->data()) v = away_from(rng, g.left_edge() - 4 * g.width(), g.right_edge() + 4 * g.width(), kinks,
                                          g.width() / 4);
  const double factor = mtlu_grad_factor(p, s);
  const auto r = randn<double>(s, rng);
  Builder f = [=](Tape<double>& t, std::vector<int>*) { return project(t, mtlu(t, x, p), r); };
  return check_coordinates(f, {{"x", x}, {"slopes", p.slopes, factor}, {"offsets", p.offsets, factor}}, h);
}

inline void activation_checks(Suite& suite) {
  const double h = suite.opt.step;
  suite.run("mtlu", GradScope::activations,
            [h](Rng& rng) { return mtlu_case(rng, GradNormalization::bins_over_signals, false, h); });
  suite.run("mtlu_signal_count", GradScope::activations,
            [h](Rng& rng) { return mtlu_case(rng, GradNormalization::signal_count, false, h); });
  suite.run("mtlu_exact", GradScope::activations,
            [h](Rng& rng) { return mtlu_case(rng, GradNormalization::none, false, h); });
  suite.run("mtlu_shared", GradScope::activations,
            [h](Rng& rng) { return mtlu_case(rng, GradNormalization::bins_over_signals, true, h); });
  suite.run("relu", GradScope::activations, [h](Rng& rng) {
    const Shape s = random_shape(rng, 2, 4, 1, 6);
    auto x = make_var(Tensor<double>(s), true);
    for (auto& v : x->data()) v = away_from(rng, -2, 2, {0.0}, 0.0125);
    const auto r = randn<double>(s, rng);
    Builder f = [=](Tape<double>& t, std::vector<int>*) { return project(t, relu(t, x), r); };
    return check_coordinates(f, {{"x", x}}, h);
  });
  suite.run("prelu", GradScope::activations, [h](Rng& rng) {
    const Shape s = random_shape(rng, 2, 4, 1, 6);
    auto x = make_var(Tensor<double>(s), true);
    for (auto& v : x->data()) v = away_from(rng, -2, 2, {0.0}, 0.0125);
    auto p = make_prelu<double>(s.c);
    p.alpha = make_var(randn<double>(p.alpha->shape(), rng, 0.25, 0.3), true);
    const auto r = randn<double>(s, rng);
    Builder f = [=](Tape<double>& t, std::vector<int>*) { return project(t, prelu(t, x, p), r); };
    return check_coordinates(f, {{"x", x}, {"alpha", p.alpha}}, h);
  });
  suite.run("maxout", GradScope::activations, [h](Rng& rng) {
    Shape s = random_shape(rng, 2, 3, 1, 6);
    s.c *= 2;
    auto x = make_var(randn<double>(s, rng), true);
    const std::int64_t hw = s.h * s.w;
    for (std::int64_t n = 0; n < s.n; ++n)
      for (std::int64_t j = 0; j < s.c / 2; ++j)
        for (std::int64_t i = 0; i < hw; ++i) {
          const double a = (*x)[x->index(n, 2 * j, 0, 0) + i];
          (*x)[x->index(n, 2 * j + 1, 0, 0) + i] = away_from(rng, -2, 2, {a}, 0.0125);
        }
    const auto r = randn<double>({s.n, s.c / 2, s.h, s.w}, rng);
    Builder f = [=](Tape<double>& t, std::vector<int>*) { return project(t, maxout(t, x), r); };
    return check_coordinates(f, {{"x", x}}, h);
  });
  suite.run("apl", GradScope::activations, [h](Rng& rng) {
    const Shape s = random_shape(rng, 2, 3, 1, 5);
    const int S = 1 + static_cast<int>(rng.below(5));
    auto p = make_apl<double>(s.c, S);
    p.a = make_var(randn<double>(p.a->shape(), rng, 0.0, 0.5), true);
    p.b = make_var(rand_uniform<double>(p.b->shape(), rng, -1.0, 1.0), true);
    auto x = make_var(Tensor<double>(s), true);
    for (std::int64_t n = 0; n < s.n; ++n)
      for (std::int64_t c = 0; c < s.c; ++c) {
        std::vector<double> kinks{0.0};
        for (int k = 0; k < S; ++k) kinks.push_back((*p.b)[c * S + k]);
        for (std::int64_t i = 0; i < s.h * s.w; ++i)
          (*x)[x->index(n, c, 0, 0) + i] = away_from(rng, -2, 2, kinks, 0.0125);
      }
    const auto r = randn<double>(s, rng);
    Builder f = [=](Tape<double>& t, std::vector<int>*) { return project(t, apl(t, x, p), r); };
    return check_coordinates(f, {{"x", x}, {"a", p.a}, {"b", p.b}}, h);
  });
  suite.run("plf", GradScope::activations, [h](Rng& rng) {
    const Shape s = random_shape(rng, 2, 4, 1, 6);
    static constexpr int kSegs[] = {4, 10, 40};
    const int M = kSegs[rng.below(3)];
    const double interval = rng.uniform() < 0.5 ? 0.05 : 0.2;
    auto p = make_plf<double>(s.c, M, interval);
    p.values = make_var(randn<double>(p.values->shape(), rng), true);
    std::vector<double> kinks;
    for (int m = 0; m <= M; ++m) kinks.push_back(p.anchor(m));
    auto x = make_var(Tensor<double>(s), true);
    for (auto& v : x->data()) v = away_from(rng, p.anchor(0) - 0.5, p.anchor(M) + 0.5, kinks, interval / 4);
    const auto r = randn<double>(s, rng);
    Builder f = [=](Tape<double>& t, std::vector<int>*) { return project(t, plf(t, x, p), r); };
    return check_coordinates(f, {{"x", x}, {"values", p.values}}, h);
  });
}

// Perturbs every activation parameter so the check does not sit at the
// (mostly linear) initialization.
inline void randomize_activations(Network<double>& net, Rng& rng) {
  for (const auto& g : net.registry())
    if (g.kind == ParamKind::activation)
      for (auto& v : g.tensor->data()) v += 0.3 * rng.normal();
}

inline CaseResult network_case(Rng& rng, Architecture arch, ActivationKind af, double h) {
  NetworkSpec spec;
  spec.arch = arch;
  spec.task = arch == Architecture::fdnet ? Task::denoise : Task::super_resolution;
  spec.factor = 2;
  spec.depth = 3;
  spec.width = 4;
  spec.af.kind = af;
  spec.af.bins = 8;
  spec.af.bin_width = 0.25;
  spec.af.grad_norm = GradNormalization::none;
  spec.af.apl_kernels = 2;
  spec.af.plf_segments = 8;
  spec.af.plf_interval = 0.25;
  if (arch == Architecture::fsrnet) spec.bicubic_skip = rng.uniform() < 0.5;
  auto net = std::make_shared<Network<double>>(build_network<double>(spec, rng));
  randomize_activations(*net, rng);
  const std::int64_t side = arch == Architecture::fdnet ? 8 : 5;
  auto x = make_var(rand_uniform<double>({2, 1, side, side}, rng, 0.0, 1.0), true);
  const auto r = randn<double>(output_shape(spec, x->shape()), rng);
  Builder f = [net, x, r](Tape<double>& t, std::vector<int>* sig) {
    if (sig)
      net->set_activation_probe([net, sig](std::size_t i, const Tensor<double>& in) {
        activation_signature(std::get<Activation<double>>(net->layers()[i]), in, *sig);
      });
    else
      net->set_activation_probe({});
    auto out = project(t, net->forward(t, x, Mode::train), r);
    net->set_activation_probe({});
    return out;
  };
  std::vector<Wrt> wrt{{"x", x}};
  for (const auto& g : net->registry()) wrt.push_back({g.name, g.tensor});
  return check_direction(f, wrt, h, rng);
}

inline void network_checks(Suite& suite) {
  const double h = suite.opt.network_step;
  static constexpr ActivationKind kKinds[] = {ActivationKind::mtlu, ActivationKind::relu, ActivationKind::prelu,
                                              ActivationKind::maxout, ActivationKind::apl, ActivationKind::plf};
  int counter = 0;
  for (auto arch : {Architecture::plain, Architecture::fsrnet, Architecture::fdnet}) {
    const std::string name = "network_" + std::string(to_string(arch));
    suite.run(name, GradScope::networks, [&counter, arch, h](Rng& rng) {
      return network_case(rng, arch, kKinds[counter++ % 6], h);
    });
  }
  suite.run("conv_mtlu", GradScope::networks, [&suite](Rng& rng) {
    const Shape xs = random_shape(rng, 2, 3, 2, 5);
    const std::int64_t oc = 1 + static_cast<std::int64_t>(rng.below(3));
    auto x = input(xs, rng);
    auto conv = make_conv<double>(xs.c, oc, 3, rng);
    auto p = random_mtlu(rng, oc, GradNormalization::bins_over_signals, false);
    const double factor = mtlu_grad_factor(p, {xs.n, oc, xs.h, xs.w});
    const auto r = randn<double>({xs.n, oc, xs.h, xs.w}, rng);
    Builder f = [=](Tape<double>& t, std::vector<int>* sig) {
      auto z = conv2d(t, x, conv);
      if (sig) {
        const BinLocator<double> loc(p.geometry);
        for (double v : z->data()) sig->push_back(loc(v));
      }
      return project(t, mtlu(t, z, p), r);
    };
    return check_coordinates(
        f, {{"x", x}, {"weight", conv.weight}, {"bias", conv.bias}, {"slopes", p.slopes, factor},
            {"offsets", p.offsets, factor}},
        suite.opt.step);
  });
}

}  // namespace gradcheck

// Central finite differences against the analytic gradients of every op,
// activation and a set of micro networks, in double precision. MTLU
// parameter gradients are compared after dividing out their normalization.
inline std::vector<GradCheckResult> run_gradcheck(const GradCheckOptions& opt = {}) {
  gradcheck::Suite suite{opt, {}};
  gradcheck::op_checks(suite);
  gradcheck::activation_checks(suite);
  gradcheck::network_checks(suite);
  return suite.results;
}

}  // namespace mtlu
