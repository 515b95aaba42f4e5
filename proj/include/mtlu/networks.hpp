#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "mtlu/activations.hpp"
#include "mtlu/errors.hpp"
#include "mtlu/ops.hpp"
#include "mtlu/resample.hpp"
#include "mtlu/tensor.hpp"

namespace mtlu {

enum class Task { super_resolution, denoise };

// fsrnet: LR-space trunk, residual from head to last trunk block, one 3x3
//         reconstruction conv to r^2 channels, pixel shuffle x r.
// fdnet:  pixel unshuffle /4, LR-space trunk, conv to 16C, shuffle x4,
//         output = input - predicted noise.
// plain:  full-resolution CONV+BN+AF trunk with a global residual, for
//         activation-swap studies on fixed architectures.
enum class Architecture { fsrnet, fdnet, plain };

// What FDnet's last conv predicts.
enum class DenoiseTarget { noise_residual, clean };

inline std::string_view to_string(Task t) {
  return t == Task::super_resolution ? "sr" : "denoise";
}
inline Task parse_task(std::string_view s) {
  if (s == "sr") return Task::super_resolution;
  if (s == "denoise") return Task::denoise;
  throw ConfigError("unknown task '" + std::string(s) + "' (expected sr or denoise)");
}
inline std::string_view to_string(Architecture a) {
  switch (a) {
    case Architecture::fsrnet: return "fsrnet";
    case Architecture::fdnet: return "fdnet";
    case Architecture::plain: return "plain";
  }
  return "?";
}
inline Architecture parse_architecture(std::string_view s) {
  for (auto a : {Architecture::fsrnet, Architecture::fdnet, Architecture::plain})
    if (to_string(a) == s) return a;
  throw ConfigError("unknown architecture '" + std::string(s) + "'");
}
inline std::string_view to_string(DenoiseTarget t) {
  return t == DenoiseTarget::noise_residual ? "noise" : "clean";
}
inline DenoiseTarget parse_denoise_target(std::string_view s) {
  if (s == "noise") return DenoiseTarget::noise_residual;
  if (s == "clean") return DenoiseTarget::clean;
  throw ConfigError("unknown denoise target '" + std::string(s) + "' (expected noise or clean)");
}

struct NetworkSpec {
  Architecture arch = Architecture::fsrnet;
  Task task = Task::super_resolution;
  int factor = 4;    // SR scale; unused for denoising
  int depth = 7;     // number of conv layers
  int width = 64;    // trunk feature maps
  int channels = 1;  // image channels
  int kernel = 3;
  ActivationSpec af{};
  bool bicubic_skip = false;  // FSRnet: add the bicubic upscale of the input to the output
  DenoiseTarget denoise_target = DenoiseTarget::noise_residual;

  friend bool operator==(const NetworkSpec&, const NetworkSpec&) = default;
};

inline constexpr int kFdnetShuffle = 4;

enum class LayerKind {
  conv,
  bn,
  activation,
  shuffle,
  unshuffle,
  residual_mark,
  residual_add,
  input_residual,  // out = input + sign * current
  upsampled_skip,  // out = current + bicubic_upscale(input, factor)
};

inline std::string_view to_string(LayerKind k) {
  switch (k) {
    case LayerKind::conv: return "conv";
    case LayerKind::bn: return "bn";
    case LayerKind::activation: return "activation";
    case LayerKind::shuffle: return "shuffle";
    case LayerKind::unshuffle: return "unshuffle";
    case LayerKind::residual_mark: return "residual_mark";
    case LayerKind::residual_add: return "residual_add";
    case LayerKind::input_residual: return "input_residual";
    case LayerKind::upsampled_skip: return "upsampled_skip";
  }
  return "?";
}

struct LayerSpec {
  LayerKind kind = LayerKind::conv;
  std::int64_t in_channels = 0;
  std::int64_t out_channels = 0;
  int kernel = 0;
  int factor = 1;
  int sign = 1;
};

namespace detail {

inline void validate_spec(const NetworkSpec& s) {
  if (s.depth < 3) throw ConfigError("network depth must be at least 3 conv layers");
  if (s.width <= 0) throw ConfigError("network width must be positive");
  if (s.channels != 1 && s.channels != 3) throw ConfigError("image channels must be 1 or 3");
  if (s.kernel <= 0 || s.kernel % 2 == 0) throw ConfigError("kernel size must be odd");
  switch (s.arch) {
    case Architecture::fsrnet:
      if (s.task != Task::super_resolution) throw ConfigError("fsrnet is a super-resolution network");
      if (s.factor < 2 || s.factor > 4)
        throw ConfigError("fsrnet supports factors 2, 3 and 4, got " + std::to_string(s.factor));
      break;
    case Architecture::fdnet:
      if (s.task != Task::denoise) throw ConfigError("fdnet is a denoising network");
      break;
    case Architecture::plain:
      if (s.task == Task::super_resolution && s.factor < 2)
        throw ConfigError("super-resolution factor must be at least 2");
      break;
  }
}

// Channels entering the activation: MaxOut consumes twice the trunk width.
inline std::int64_t activation_in(const NetworkSpec& s) {
  return s.af.kind == ActivationKind::maxout ? 2LL * s.width : s.width;
}

inline void push_block(std::vector<LayerSpec>& L, const NetworkSpec& s, std::int64_t in_c, bool bn) {
  const std::int64_t mid = activation_in(s);
  L.push_back({LayerKind::conv, in_c, mid, s.kernel});
  if (bn) L.push_back({LayerKind::bn, mid, mid});
  L.push_back({LayerKind::activation, mid, s.width});
}

}  // namespace detail

// Declarative layer list for a spec; shapes are validated by Network.
inline std::vector<LayerSpec> network_layout(const NetworkSpec& s) {
  detail::validate_spec(s);
  std::vector<LayerSpec> L;
  const std::int64_t C = s.channels;
  switch (s.arch) {
    case Architecture::fsrnet: {
      detail::push_block(L, s, C, false);
      L.push_back({LayerKind::residual_mark, s.width, s.width});
      for (int i = 0; i < s.depth - 2; ++i) detail::push_block(L, s, s.width, true);
      L.push_back({LayerKind::residual_add, s.width, s.width});
      const std::int64_t rr = static_cast<std::int64_t>(s.factor) * s.factor;
      L.push_back({LayerKind::conv, s.width, rr * C, s.kernel});
      L.push_back({LayerKind::shuffle, rr * C, C, 0, s.factor});
      if (s.bicubic_skip) L.push_back({LayerKind::upsampled_skip, C, C, 0, s.factor});
      break;
    }
    case Architecture::fdnet: {
      const std::int64_t packed = static_cast<std::int64_t>(kFdnetShuffle) * kFdnetShuffle * C;
      L.push_back({LayerKind::unshuffle, C, packed, 0, kFdnetShuffle});
      detail::push_block(L, s, packed, false);
      for (int i = 0; i < s.depth - 2; ++i) detail::push_block(L, s, s.width, true);
      L.push_back({LayerKind::conv, s.width, packed, s.kernel});
      L.push_back({LayerKind::shuffle, packed, C, 0, kFdnetShuffle});
      if (s.denoise_target == DenoiseTarget::noise_residual)
        L.push_back({LayerKind::input_residual, C, C, 0, 1, -1});
      break;
    }
    case Architecture::plain: {
      detail::push_block(L, s, C, false);
      for (int i = 0; i < s.depth - 2; ++i) detail::push_block(L, s, s.width, true);
      L.push_back({LayerKind::conv, s.width, C, s.kernel});
      const bool residual = s.task == Task::super_resolution ||
                            s.denoise_target == DenoiseTarget::noise_residual;
      if (residual)
        L.push_back({LayerKind::input_residual, C, C, 0, 1, s.task == Task::denoise ? -1 : 1});
      break;
    }
  }
  return L;
}

// Receptive field of one output pixel, measured in input pixels along one
// axis. Each 3x3 conv after a /r unshuffle widens it by (k-1)*r pixels.
inline double receptive_field(const NetworkSpec& s) {
  double rf = 1.0, jump = 1.0;
  for (const auto& l : network_layout(s)) {
    switch (l.kind) {
      case LayerKind::unshuffle:
        rf += (l.factor - 1) * jump;
        jump *= l.factor;
        break;
      case LayerKind::conv: rf += (l.kernel - 1) * jump; break;
      case LayerKind::shuffle: jump /= l.factor; break;
      default: break;
    }
  }
  return rf;
}

// Input shapes the network accepts: FDnet needs sides divisible by 4.
inline void check_input_shape(const NetworkSpec& s, const Shape& x) {
  if (x.c != s.channels)
    throw ShapeError("network expects " + std::to_string(s.channels) + " input channels, got " +
                     std::to_string(x.c));
  if (x.h < 1 || x.w < 1) throw ShapeError("network input must be non-empty");
  if (s.arch == Architecture::fdnet && (x.h % kFdnetShuffle != 0 || x.w % kFdnetShuffle != 0))
    throw ShapeError("fdnet input sides must be multiples of 4, got " + std::to_string(x.h) + "x" +
                     std::to_string(x.w));
}

inline Shape output_shape(const NetworkSpec& s, const Shape& x) {
  check_input_shape(s, x);
  if (s.arch == Architecture::fsrnet) return {x.n, x.c, x.h * s.factor, x.w * s.factor};
  return x;
}

enum class ParamKind { conv, bn, activation };

inline std::string_view to_string(ParamKind k) {
  switch (k) {
    case ParamKind::conv: return "conv";
    case ParamKind::bn: return "bn";
    case ParamKind::activation: return "activation";
  }
  return "?";
}

template <class T>
struct ParamGroup {
  std::string name;
  Var<T> tensor;
  ParamKind kind;
  bool decay;
};

template <class T>
class Network {
 public:
  using Layer = std::variant<std::monostate, ConvParams<T>, BnParams<T>, Activation<T>>;

  Network(const NetworkSpec& spec, Rng& rng) : spec_(spec), layout_(network_layout(spec)) {
    std::int64_t cur = spec.channels;
    bool marked = false;
    std::int64_t mark_c = 0;
    layers_.reserve(layout_.size());
    for (std::size_t i = 0; i < layout_.size(); ++i) {
      const LayerSpec& l = layout_[i];
      if (l.in_channels != cur)
        throw ShapeError("layer " + std::to_string(i) + " (" + std::string(to_string(l.kind)) +
                         ") expects " + std::to_string(l.in_channels) + " channels, chain has " +
                         std::to_string(cur));
      const std::string prefix = layer_prefix(i);
      switch (l.kind) {
        case LayerKind::conv: {
          auto p = make_conv<T>(l.in_channels, l.out_channels, l.kernel, rng);
          registry_.push_back({prefix + "conv.weight", p.weight, ParamKind::conv, true});
          registry_.push_back({prefix + "conv.bias", p.bias, ParamKind::conv, true});
          layers_.emplace_back(std::move(p));
          break;
        }
        case LayerKind::bn: {
          auto p = make_batchnorm<T>(l.in_channels);
          registry_.push_back({prefix + "bn.gamma", p.gamma, ParamKind::bn, false});
          registry_.push_back({prefix + "bn.beta", p.beta, ParamKind::bn, false});
          layers_.emplace_back(std::move(p));
          break;
        }
        case LayerKind::activation: {
          auto act = Activation<T>::make(spec.af, l.in_channels);
          if (act.out_channels() != l.out_channels) throw ShapeError("activation channel mismatch");
          for (auto& [suffix, v] : act.parameters())
            registry_.push_back({prefix + std::string(to_string(spec.af.kind)) + "." + suffix, v,
                                 ParamKind::activation, false});
          layers_.emplace_back(std::move(act));
          break;
        }
        case LayerKind::shuffle:
          if (l.in_channels % (static_cast<std::int64_t>(l.factor) * l.factor) != 0)
            throw ShapeError("shuffle: channels not divisible by factor^2");
          layers_.emplace_back();
          break;
        case LayerKind::residual_mark:
          marked = true;
          mark_c = cur;
          layers_.emplace_back();
          break;
        case LayerKind::residual_add:
          if (!marked || mark_c != cur) throw ShapeError("residual add without a matching mark");
          layers_.emplace_back();
          break;
        case LayerKind::input_residual:
        case LayerKind::upsampled_skip:
          if (cur != spec.channels) throw ShapeError("skip connection channel mismatch");
          layers_.emplace_back();
          break;
        case LayerKind::unshuffle: layers_.emplace_back(); break;
      }
      cur = l.out_channels;
    }
    if (cur != spec.channels) throw ShapeError("network output channels do not match the image");
  }

  Network(Network&&) noexcept = default;
  Network& operator=(Network&&) noexcept = default;
  Network(const Network&) = delete;
  Network& operator=(const Network&) = delete;

  const NetworkSpec& spec() const { return spec_; }
  const std::vector<LayerSpec>& layout() const { return layout_; }
  const std::vector<Layer>& layers() const { return layers_; }
  std::vector<Layer>& layers() { return layers_; }
  const std::vector<ParamGroup<T>>& registry() const { return registry_; }

  std::int64_t parameter_count() const {
    std::int64_t n = 0;
    for (const auto& g : registry_) n += static_cast<std::int64_t>(g.tensor->size());
    return n;
  }

  int conv_count() const {
    int n = 0;
    for (const auto& l : layout_) n += l.kind == LayerKind::conv;
    return n;
  }

  std::vector<BnParams<T>*> batchnorms() {
    std::vector<BnParams<T>*> out;
    for (auto& l : layers_)
      if (auto* p = std::get_if<BnParams<T>>(&l)) out.push_back(p);
    return out;
  }
  std::vector<const BnParams<T>*> batchnorms() const {
    std::vector<const BnParams<T>*> out;
    for (const auto& l : layers_)
      if (const auto* p = std::get_if<BnParams<T>>(&l)) out.push_back(p);
    return out;
  }

  void zero_grad() {
    for (auto& g : registry_) g.tensor->drop_grad();
  }

  // Runs the layer list. In train mode batchnorm uses batch statistics and
  // updates its running averages; the tape records only when it is recording.
  Var<T> forward(Tape<T>& tape, const Var<T>& x, Mode mode) {
    check_input_shape(spec_, x->shape());
    Var<T> cur = x;
    Var<T> mark;
    for (std::size_t i = 0; i < layout_.size(); ++i) {
      const LayerSpec& l = layout_[i];
      switch (l.kind) {
        case LayerKind::conv: cur = conv2d(tape, cur, std::get<ConvParams<T>>(layers_[i])); break;
        case LayerKind::bn: cur = batchnorm(tape, cur, std::get<BnParams<T>>(layers_[i]), mode); break;
        case LayerKind::activation:
          if (probe_) probe_(i, *cur);
          cur = std::get<Activation<T>>(layers_[i]).apply(tape, cur);
          break;
        case LayerKind::shuffle: cur = pixel_shuffle(tape, cur, l.factor); break;
        case LayerKind::unshuffle: cur = pixel_unshuffle(tape, cur, l.factor); break;
        case LayerKind::residual_mark: mark = cur; break;
        case LayerKind::residual_add: cur = add(tape, mark, cur); break;
        case LayerKind::input_residual:
          cur = l.sign > 0 ? add(tape, x, cur) : sub(tape, x, cur);
          break;
        case LayerKind::upsampled_skip: {
          cur = add(tape, cur, upscale_bicubic(tape, x, l.factor));
          break;
        }
      }
    }
    return cur;
  }

  // Called with (layer index, input) before every activation layer.
  void set_activation_probe(std::function<void(std::size_t, const Tensor<T>&)> probe) {
    probe_ = std::move(probe);
  }

  // Inference without recording.
  Tensor<T> infer(const Tensor<T>& x) {
    Tape<T> tape(false);
    auto out = forward(tape, make_var(x.detached()), Mode::eval);
    return std::move(*out);
  }

  // Independent copy with identical parameters and batchnorm statistics.
  Network clone() const { return cast<T>(); }

  template <class U>
  Network<U> cast() const {
    Rng rng(0);
    Network<U> out(spec_, rng);
    copy_state(*this, out);
    return out;
  }

 private:
  static std::string layer_prefix(std::size_t i) {
    std::string idx = std::to_string(i);
    if (idx.size() < 2) idx = "0" + idx;
    return "layer" + idx + ".";
  }

  NetworkSpec spec_;
  std::vector<LayerSpec> layout_;
  std::vector<Layer> layers_;
  std::vector<ParamGroup<T>> registry_;
  std::function<void(std::size_t, const Tensor<T>&)> probe_;
};

// Copies parameters and batchnorm statistics between networks of the same
// spec, converting precision if needed.
template <class T, class U>
void copy_state(const Network<T>& from, Network<U>& to) {
  if (!(from.spec() == to.spec())) throw ConfigError("copy_state: network specs differ");
  const auto& a = from.registry();
  const auto& b = to.registry();
  for (std::size_t i = 0; i < a.size(); ++i) {
    const auto src = a[i].tensor->data();
    auto dst = b[i].tensor->data();
    for (std::size_t j = 0; j < src.size(); ++j) dst[j] = static_cast<U>(src[j]);
  }
  const auto bn_from = from.batchnorms();
  auto bn_to = to.batchnorms();
  for (std::size_t i = 0; i < bn_from.size(); ++i) {
    bn_to[i]->running_mean = bn_from[i]->running_mean;
    bn_to[i]->running_var = bn_from[i]->running_var;
  }
}

template <class T>
Network<T> build_fsrnet(NetworkSpec spec, Rng& rng) {
  spec.arch = Architecture::fsrnet;
  spec.task = Task::super_resolution;
  return Network<T>(spec, rng);
}

template <class T>
Network<T> build_fdnet(NetworkSpec spec, Rng& rng) {
  spec.arch = Architecture::fdnet;
  spec.task = Task::denoise;
  return Network<T>(spec, rng);
}

template <class T>
Network<T> build_network(const NetworkSpec& spec, Rng& rng) {
  return Network<T>(spec, rng);
}

// Closed-form learnable parameter count of a spec, computed from the
// architecture description rather than from an instantiated network.
inline std::int64_t expected_parameter_count(const NetworkSpec& s) {
  std::int64_t total = 0;
  for (const auto& l : network_layout(s)) {
    switch (l.kind) {
      case LayerKind::conv: total += conv_param_count(l.in_channels, l.out_channels, l.kernel); break;
      case LayerKind::bn: total += 2 * l.in_channels; break;
      case LayerKind::activation: total += param_count(s.af.kind, l.in_channels, s.af); break;
      default: break;
    }
  }
  return total;
}

}  // namespace mtlu
