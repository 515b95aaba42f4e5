#include <gtest/gtest.h>

#include <algorithm>
#include <set>

#include "mtlu/networks.hpp"

using namespace mtlu;

namespace {

NetworkSpec sr_spec(int factor, int depth, int width) {
  NetworkSpec s;
  s.arch = Architecture::fsrnet;
  s.task = Task::super_resolution;
  s.factor = factor;
  s.depth = depth;
  s.width = width;
  return s;
}

NetworkSpec dn_spec(int depth, int width) {
  NetworkSpec s;
  s.arch = Architecture::fdnet;
  s.task = Task::denoise;
  s.depth = depth;
  s.width = width;
  return s;
}

template <class T>
ConvParams<T>& last_conv(Network<T>& net) {
  for (auto it = net.layers().rbegin(); it != net.layers().rend(); ++it)
    if (auto* p = std::get_if<ConvParams<T>>(&*it)) return *p;
  throw Error("no conv layer");
}

}  // namespace

TEST(Fsrnet, ShapeLawTimesFour) {
  Rng rng(1);
  auto net = build_fsrnet<float>(sr_spec(4, 7, 16), rng);
  auto y = net.infer(zeros<float>({1, 1, 24, 24}));
  EXPECT_EQ(y.shape(), (Shape{1, 1, 96, 96}));
}

TEST(Fsrnet, ConvCountEqualsDepth) {
  Rng rng(2);
  for (int L : {3, 7, 13}) EXPECT_EQ(build_fsrnet<float>(sr_spec(2, L, 8), rng).conv_count(), L);
}

TEST(Fsrnet, ParameterCountClosedForm) {
  Rng rng(3);
  auto spec = sr_spec(4, 7, 64);
  auto net = build_fsrnet<float>(spec, rng);
  const std::int64_t head = 1 * 64 * 9 + 64 + 64 * 80;
  const std::int64_t block = 64 * 64 * 9 + 64 + 2 * 64 + 64 * 80;
  const std::int64_t recon = 64 * 16 * 9 + 16;
  EXPECT_EQ(net.parameter_count(), head + 5 * block + recon);
  EXPECT_EQ(expected_parameter_count(spec), head + 5 * block + recon);
}

TEST(Fsrnet, LayerSequence) {
  auto L = network_layout(sr_spec(3, 4, 8));
  std::vector<LayerKind> kinds;
  for (const auto& l : L) kinds.push_back(l.kind);
  const std::vector<LayerKind> want = {
      LayerKind::conv, LayerKind::activation, LayerKind::residual_mark,
      LayerKind::conv, LayerKind::bn,         LayerKind::activation,
      LayerKind::conv, LayerKind::bn,         LayerKind::activation,
      LayerKind::residual_add, LayerKind::conv, LayerKind::shuffle};
  EXPECT_EQ(kinds, want);
  EXPECT_EQ(L[10].out_channels, 9);
}

TEST(Fsrnet, BicubicSkipWithZeroReconstruction) {
  Rng rng(4);
  auto spec = sr_spec(2, 3, 8);
  spec.bicubic_skip = true;
  auto net = build_fsrnet<double>(spec, rng);
  std::ranges::fill(last_conv(net).weight->data(), 0.0);
  auto x = rand_uniform<double>({1, 1, 6, 5}, rng, 0.0, 1.0);
  EXPECT_EQ(net.infer(x).values(), upscale_bicubic(x, 2).values());
}

TEST(Fdnet, ShapeLawAndTrunkResolution) {
  Rng rng(5);
  auto net = build_fdnet<float>(dn_spec(6, 64), rng);
  std::vector<Shape> seen;
  net.set_activation_probe([&](std::size_t, const Tensor<float>& t) { seen.push_back(t.shape()); });
  auto y = net.infer(zeros<float>({1, 1, 64, 64}));
  EXPECT_EQ(y.shape(), (Shape{1, 1, 64, 64}));
  ASSERT_EQ(seen.size(), 5u);
  for (const auto& s : seen) EXPECT_EQ(s, (Shape{1, 64, 16, 16}));
}

TEST(Fdnet, ZeroReconstructionIsIdentity) {
  Rng rng(6);
  auto net = build_fdnet<float>(dn_spec(4, 16), rng);
  auto& last = last_conv(net);
  std::ranges::fill(last.weight->data(), 0.0f);
  std::ranges::fill(last.bias->data(), 0.0f);
  auto x = rand_uniform<float>({2, 1, 12, 8}, rng, 0.0, 1.0);
  EXPECT_EQ(net.infer(x).values(), x.values());
}

TEST(Fdnet, ConvCount) {
  Rng rng(7);
  EXPECT_EQ(build_fdnet<float>(dn_spec(10, 8), rng).conv_count(), 10);
}

TEST(Fdnet, PackedChannelsAndDivisibility) {
  Rng rng(8);
  auto net = build_fdnet<float>(dn_spec(3, 8), rng);
  EXPECT_EQ(net.layout()[1].in_channels, 16);
  EXPECT_THROW(net.infer(zeros<float>({1, 1, 10, 12})), ShapeError);
  EXPECT_THROW(net.infer(zeros<float>({1, 2, 12, 12})), ShapeError);
}

TEST(Fdnet, ReceptiveFieldHandCounts) {
  // unshuffle /4 covers 4 pixels; each 3x3 conv at quarter resolution adds 2*4
  EXPECT_EQ(receptive_field(dn_spec(4, 8)), 36.0);
  EXPECT_EQ(receptive_field(dn_spec(6, 8)), 52.0);
  for (int L = 3; L < 12; ++L) EXPECT_EQ(receptive_field(dn_spec(L + 1, 8)) - receptive_field(dn_spec(L, 8)), 8.0);
  EXPECT_EQ(receptive_field(sr_spec(2, 7, 8)), 15.0);
}

TEST(Networks, RandomizedShapeLaws) {
  Rng rng(9);
  for (int trial = 0; trial < 20; ++trial) {
    const int r = 2 + static_cast<int>(rng.below(3));
    auto sr = build_fsrnet<float>(sr_spec(r, 3, 4), rng);
    const std::int64_t n = 1 + static_cast<std::int64_t>(rng.below(2));
    const std::int64_t h = 1 + static_cast<std::int64_t>(rng.below(9)), w = 1 + static_cast<std::int64_t>(rng.below(9));
    EXPECT_EQ(sr.infer(zeros<float>({n, 1, h, w})).shape(), (Shape{n, 1, h * r, w * r}));
    auto dn = build_fdnet<float>(dn_spec(3, 4), rng);
    const std::int64_t dh = 4 * (1 + static_cast<std::int64_t>(rng.below(4)));
    const std::int64_t dw = 4 * (1 + static_cast<std::int64_t>(rng.below(4)));
    EXPECT_EQ(dn.infer(zeros<float>({n, 1, dh, dw})).shape(), (Shape{n, 1, dh, dw}));
  }
}

TEST(Networks, InvalidSpecs) {
  Rng rng(10);
  EXPECT_THROW(build_fsrnet<float>(sr_spec(2, 2, 8), rng), ConfigError);
  EXPECT_THROW(build_fsrnet<float>(sr_spec(5, 7, 8), rng), ConfigError);
  EXPECT_THROW(build_fdnet<float>(dn_spec(2, 8), rng), ConfigError);
  auto s = sr_spec(2, 3, 7);
  s.af.kind = ActivationKind::mtlu;
  s.af.bins = 41;
  EXPECT_THROW(build_fsrnet<float>(s, rng), ConfigError);
}

TEST(Networks, RegistryCompletenessAndDecayFlags) {
  Rng rng(11);
  for (auto kind : {ActivationKind::mtlu, ActivationKind::prelu, ActivationKind::apl, ActivationKind::plf,
                    ActivationKind::maxout, ActivationKind::relu}) {
    auto spec = sr_spec(2, 5, 8);
    spec.af.kind = kind;
    auto net = build_fsrnet<float>(spec, rng);
    std::set<const Tensor<float>*> unique;
    std::int64_t total = 0;
    for (const auto& g : net.registry()) {
      unique.insert(g.tensor.get());
      total += static_cast<std::int64_t>(g.tensor->size());
      EXPECT_EQ(g.decay, g.kind == ParamKind::conv) << g.name;
    }
    EXPECT_EQ(unique.size(), net.registry().size());
    EXPECT_EQ(total, expected_parameter_count(spec));
  }
}

TEST(Networks, MaxoutDoublesConvOutputs) {
  Rng rng(12);
  auto spec = sr_spec(2, 3, 8);
  spec.af.kind = ActivationKind::maxout;
  auto net = build_fsrnet<float>(spec, rng);
  EXPECT_EQ(net.layout()[0].out_channels, 16);
  EXPECT_EQ(net.infer(zeros<float>({1, 1, 4, 4})).shape(), (Shape{1, 1, 8, 8}));
}

TEST(Networks, EvalIsDeterministic) {
  Rng rng(13);
  auto net = build_fsrnet<float>(sr_spec(3, 5, 8), rng);
  auto x = rand_uniform<float>({2, 1, 7, 5}, rng, 0.0, 1.0);
  EXPECT_EQ(net.infer(x).values(), net.infer(x).values());
}

TEST(Networks, TrainAndEvalDifferOnlyInStatisticsSource) {
  Rng rng(14);
  auto net = build_fsrnet<double>(sr_spec(2, 5, 6), rng);
  auto x = make_var(rand_uniform<double>({2, 1, 8, 8}, rng, 0.0, 1.0));
  for (auto* bn : net.batchnorms()) bn->momentum = 0.0;  // running stats := batch stats
  Tape<double> tape(false);
  auto train_out = net.forward(tape, x, Mode::train);
  const double m = 2 * 8 * 8;
  for (auto* bn : net.batchnorms())
    for (auto& v : bn->running_var) v *= (m - 1) / m;  // unbiased -> biased
  auto eval_out = net.forward(tape, x, Mode::eval);
  double worst = 0;
  for (std::size_t i = 0; i < train_out->size(); ++i)
    worst = std::max(worst, std::abs((*train_out)[i] - (*eval_out)[i]));
  EXPECT_LT(worst, 1e-9);
}

TEST(Networks, CloneAndCastCopyState) {
  Rng rng(15);
  auto net = build_fdnet<float>(dn_spec(4, 8), rng);
  net.batchnorms()[0]->running_mean[3] = 0.5;
  auto copy = net.clone();
  auto x = rand_uniform<float>({1, 1, 8, 8}, rng, 0.0, 1.0);
  EXPECT_EQ(copy.infer(x).values(), net.infer(x).values());
  auto d = net.cast<double>();
  EXPECT_EQ(d.batchnorms()[0]->running_mean[3], 0.5);
  EXPECT_EQ(d.registry()[0].tensor->values()[0], static_cast<double>(net.registry()[0].tensor->values()[0]));
}

TEST(Networks, ParseNames) {
  EXPECT_EQ(parse_task("sr"), Task::super_resolution);
  EXPECT_EQ(parse_task("denoise"), Task::denoise);
  EXPECT_THROW(parse_task("deblur"), ConfigError);
  EXPECT_EQ(parse_architecture("fdnet"), Architecture::fdnet);
  EXPECT_EQ(parse_denoise_target("clean"), DenoiseTarget::clean);
}

TEST(Plain, ResidualAroundTrunk) {
  Rng rng(16);
  NetworkSpec s;
  s.arch = Architecture::plain;
  s.task = Task::denoise;
  s.depth = 4;
  s.width = 8;
  auto net = build_network<double>(s, rng);
  auto& last = last_conv(net);
  std::ranges::fill(last.weight->data(), 0.0);
  auto x = rand_uniform<double>({1, 1, 5, 6}, rng, 0.0, 1.0);
  EXPECT_EQ(net.infer(x).values(), x.values());
  EXPECT_EQ(net.conv_count(), 4);
}
