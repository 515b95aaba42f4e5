#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <numbers>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "mtlu/errors.hpp"

namespace mtlu {

// Batch / channel / height / width extents of a 4-D tensor.
struct Shape {
  std::int64_t n = 0;
  std::int64_t c = 0;
  std::int64_t h = 0;
  std::int64_t w = 0;

  // Element count; throws on negative extents or overflow.
  std::size_t count() const {
    if (n < 0 || c < 0 || h < 0 || w < 0)
      throw ShapeError("negative extent in shape " + str());
    constexpr auto kMax = static_cast<unsigned __int128>(std::numeric_limits<std::int64_t>::max());
    unsigned __int128 total = 1;
    for (auto d : {n, c, h, w}) {
      total *= static_cast<unsigned __int128>(d);
      if (total > kMax) throw ShapeError("element count overflows in shape " + str());
    }
    return static_cast<std::size_t>(total);
  }

  std::string str() const {
    return "(" + std::to_string(n) + "," + std::to_string(c) + "," + std::to_string(h) + "," +
           std::to_string(w) + ")";
  }

  friend bool operator==(const Shape&, const Shape&) = default;
};

// Dense NCHW array with an optional gradient slot of the same shape.
// idx(n,c,h,w) = ((n*C + c)*H + h)*W + w everywhere in the library.
template <class T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  explicit Tensor(Shape shape) : shape_(shape), data_(shape.count(), T(0)) {}
  Tensor(Shape shape, std::vector<T> data) : shape_(shape), data_(std::move(data)) {
    if (data_.size() != shape_.count())
      throw ShapeError("data length " + std::to_string(data_.size()) + " does not match shape " +
                       shape_.str());
  }

  const Shape& shape() const { return shape_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  std::span<T> data() { return data_; }
  std::span<const T> data() const { return data_; }
  const std::vector<T>& values() const { return data_; }

  std::size_t index(std::int64_t n, std::int64_t c, std::int64_t h, std::int64_t w) const {
    return static_cast<std::size_t>(((n * shape_.c + c) * shape_.h + h) * shape_.w + w);
  }
  T& at(std::int64_t n, std::int64_t c, std::int64_t h, std::int64_t w) {
    return data_[index(n, c, h, w)];
  }
  T at(std::int64_t n, std::int64_t c, std::int64_t h, std::int64_t w) const {
    return data_[index(n, c, h, w)];
  }
  T& operator[](std::size_t i) { return data_[i]; }
  T operator[](std::size_t i) const { return data_[i]; }

  bool requires_grad() const { return requires_grad_; }
  void set_requires_grad(bool on) { requires_grad_ = on; }

  bool has_grad() const { return has_grad_; }
  // Allocates a zeroed gradient slot if absent.
  std::span<T> grad() {
    if (!has_grad_) {
      grad_.assign(data_.size(), T(0));
      has_grad_ = true;
    }
    return grad_;
  }
  std::span<const T> grad() const { return grad_; }
  void zero_grad() { std::fill(grad_.begin(), grad_.end(), T(0)); }
  void drop_grad() {
    grad_.clear();
    grad_.shrink_to_fit();
    has_grad_ = false;
  }

  // Same-shape copy of the values without gradient state.
  Tensor detached() const { return Tensor(shape_, data_); }

  template <class U>
  Tensor<U> cast() const {
    std::vector<U> out(data_.begin(), data_.end());
    return Tensor<U>(shape_, std::move(out));
  }

 private:
  Shape shape_{};
  std::vector<T> data_;
  std::vector<T> grad_;
  bool requires_grad_ = false;
  bool has_grad_ = false;
};

// Graph values are shared so the tape can hold on to them until backward.
template <class T>
using Var = std::shared_ptr<Tensor<T>>;

template <class T>
Var<T> make_var(Tensor<T> t, bool requires_grad = false) {
  auto v = std::make_shared<Tensor<T>>(std::move(t));
  v->set_requires_grad(requires_grad);
  return v;
}

template <class T>
Tensor<T> zeros(Shape shape) {
  return Tensor<T>(shape);
}

// Deterministic generator: std::mt19937_64 (its output sequence is fixed by
// the C++ standard) with hand-written uniform and Box-Muller transforms, since
// the standard distributions are not reproducible across library vendors.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : seed_(seed), engine_(seed) {}

  std::uint64_t seed() const { return seed_; }
  std::uint64_t next_u64() { return engine_(); }

  // Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, bound) by rejection.
  std::uint64_t below(std::uint64_t bound) {
    if (bound == 0) throw ConfigError("Rng::below requires a positive bound");
    const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                                std::numeric_limits<std::uint64_t>::max() % bound;
    std::uint64_t x;
    do {
      x = engine_();
    } while (x >= limit);
    return x % bound;
  }

  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    const double u1 = 1.0 - uniform();  // (0, 1]
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * std::numbers::pi * u2;
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return r * std::cos(theta);
  }

  // Independent child stream; the parent advances by one draw.
  Rng split() { return Rng(engine_() ^ 0x9E3779B97F4A7C15ULL); }

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

template <class T>
Tensor<T> randn(Shape shape, Rng& rng, double mean = 0.0, double stddev = 1.0) {
  if (!(stddev >= 0.0)) throw ConfigError("randn: stddev must be non-negative");
  Tensor<T> t(shape);
  for (auto& v : t.data()) v = static_cast<T>(mean + stddev * rng.normal());
  return t;
}

template <class T>
Tensor<T> rand_uniform(Shape shape, Rng& rng, double lo, double hi) {
  Tensor<T> t(shape);
  for (auto& v : t.data()) v = static_cast<T>(rng.uniform(lo, hi));
  return t;
}

// Define-by-run reverse-mode tape. Operators append a closure that reads the
// output gradient and accumulates into the gradients of their inputs; the
// closures run in reverse insertion order, which is a valid reverse
// topological order because an op can only consume values that already exist.
template <class T>
class Tape {
 public:
  explicit Tape(bool recording = true) : recording_(recording) {}

  bool recording() const { return recording_; }
  std::size_t size() const { return nodes_.size(); }

  void record(std::function<void()> backward_fn) {
    if (recording_) nodes_.push_back(std::move(backward_fn));
  }

  // Seeds a scalar output with gradient 1.
  void backward(const Var<T>& output) {
    if (output->size() != 1)
      throw ShapeError("backward without seed requires a scalar output, got " +
                       output->shape().str());
    output->grad()[0] += T(1);
    run();
  }

  void backward(const Var<T>& output, const Tensor<T>& seed) {
    if (!(seed.shape() == output->shape()))
      throw ShapeError("seed gradient shape " + seed.shape().str() + " does not match output " +
                       output->shape().str());
    auto g = output->grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += seed[i];
    run();
  }

  void clear() { nodes_.clear(); }

 private:
  void run() {
    if (running_) throw Error("internal error: re-entrant backward on tape");
    running_ = true;
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) (*it)();
    running_ = false;
    nodes_.clear();
  }

  bool recording_;
  bool running_ = false;
  std::vector<std::function<void()>> nodes_;
};

// Output value for an op: it needs a gradient when recording and any input does.
template <class T>
Var<T> make_output(const Tape<T>& tape, Shape shape, std::initializer_list<const Var<T>*> inputs) {
  bool needs = false;
  if (tape.recording())
    for (const auto* in : inputs)
      if (*in && (*in)->requires_grad()) needs = true;
  return make_var(Tensor<T>(shape), needs);
}

}  // namespace mtlu
