// Acceptance checks. Usage:
//   mtlu_acceptance [criterion...] [--work DIR] [--seed-report]
// Prints one PASS/FAIL line per criterion and exits non-zero on any failure.
// --seed-report runs the three-seed MTLU vs ReLU comparison for the SR
// experiment and only reports it.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <string>
#include <vector>

#include "golden.hpp"
#include "mtlu/mtlu.hpp"

using namespace mtlu;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Outcome {
  bool pass = true;
  std::string detail;

  void require(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      detail += (detail.empty() ? "" : "; ") + std::string("failed: ") + what;
    }
  }
  void note(const std::string& s) { detail += (detail.empty() ? "" : "; ") + s; }
};

std::string fmt(const char* f, double a) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

template <class T>
std::vector<T> flat_params(const Network<T>& net, bool (*want)(const ParamGroup<T>&)) {
  std::vector<T> out;
  for (const auto& g : net.registry())
    if (want(g)) out.insert(out.end(), g.tensor->values().begin(), g.tensor->values().end());
  return out;
}

// ---------------------------------------------------------------------------

Outcome gradient_oracles() {
  Outcome o;
  const auto t0 = Clock::now();
  const auto results = run_gradcheck();
  const double secs = seconds_since(t0);
  double worst = 0;
  for (const auto& r : results) {
    o.require(r.passed, r.name + " rel " + fmt("%.2e", r.worst_rel_error));
    worst = std::max(worst, r.worst_rel_error);
  }
  for (const char* name : {"conv2d", "batchnorm", "pixel_shuffle", "pixel_unshuffle", "add", "mse_loss", "mtlu",
                           "prelu", "maxout", "apl", "plf"})
    o.require(std::ranges::find(results, std::string(name), &GradCheckResult::name) != results.end(),
              std::string("check present: ") + name);
  o.require(secs < 120.0, "runtime under 2 min");
  o.note(std::to_string(results.size()) + " checks, worst rel " + fmt("%.2e", worst) + ", " + fmt("%.1f s", secs));
  return o;
}

// ---------------------------------------------------------------------------

template <class T>
T if_chain(T x, const BinGeometry& g, const T* a, const T* b) {
  const int K = g.bins();
  for (int k = K - 1; k >= 1; --k)
    if (x >= static_cast<T>(g.anchor(k))) return a[k] * x + b[k];
  return a[0] * x + b[0];
}

template <class T>
bool mtlu_matches_if_chain(int bins, Rng& rng) {
  const auto g = BinGeometry::symmetric(bins, 0.05);
  const std::int64_t C = 3;
  auto p = make_mtlu<T>(C, g);
  for (auto& v : p.slopes->data()) v = static_cast<T>(rng.normal());
  for (auto& v : p.offsets->data()) v = static_cast<T>(rng.normal());
  const double span = bins * 0.05;
  Tensor<T> x({1, C, 1, 10000 / C + 1});
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double u = rng.uniform();
    x[i] = static_cast<T>(u < 0.05 ? g.anchor(static_cast<int>(rng.below(bins))) : rng.uniform(-0.75, 0.75) * span);
  }
  const Tensor<T> y = mtlu_forward(x, p);
  const std::int64_t hw = x.shape().w;
  for (std::int64_t c = 0; c < C; ++c)
    for (std::int64_t i = 0; i < hw; ++i) {
      const std::size_t j = static_cast<std::size_t>(c * hw + i);
      const T want = if_chain<T>(x[j], g, p.slopes->values().data() + c * bins, p.offsets->values().data() + c * bins);
      if (y[j] != want) return false;
    }
  return true;
}

template <class T>
void copy_non_activation(const Network<T>& from, Network<T>& to) {
  std::vector<const ParamGroup<T>*> src, dst;
  for (const auto& g : from.registry())
    if (g.kind != ParamKind::activation) src.push_back(&g);
  for (const auto& g : to.registry())
    if (g.kind != ParamKind::activation) dst.push_back(&g);
  if (src.size() != dst.size()) throw Error("registries differ");
  for (std::size_t i = 0; i < src.size(); ++i) std::ranges::copy(src[i]->tensor->values(), dst[i]->tensor->data().begin());
  auto a = from.batchnorms();
  auto b = to.batchnorms();
  for (std::size_t i = 0; i < a.size(); ++i) {
    b[i]->running_mean = a[i]->running_mean;
    b[i]->running_var = a[i]->running_var;
  }
}

bool relu_init_matches_relu(NetworkSpec spec, Rng& rng, Shape in) {
  spec.af.kind = ActivationKind::mtlu;
  auto m = build_network<float>(spec, rng);
  for (auto* bn : m.batchnorms())
    for (std::size_t c = 0; c < bn->running_mean.size(); ++c) {
      bn->running_mean[c] = 0.1 * rng.normal();
      bn->running_var[c] = 0.5 + rng.uniform();
    }
  spec.af.kind = ActivationKind::relu;
  auto r = build_network<float>(spec, rng);
  copy_non_activation(m, r);
  const auto x = rand_uniform<float>(in, rng, 0.0, 1.0);
  return m.infer(x).values() == r.infer(x).values();
}

Outcome mtlu_exactness() {
  Outcome o;
  Rng rng(101);
  for (int bins : {20, 40, 80}) {
    o.require(mtlu_matches_if_chain<float>(bins, rng), "if-chain float K=" + std::to_string(bins));
    o.require(mtlu_matches_if_chain<double>(bins, rng), "if-chain double K=" + std::to_string(bins));
  }
  NetworkSpec sr;
  sr.factor = 3;
  sr.width = 16;
  o.require(relu_init_matches_relu(sr, rng, {2, 1, 11, 9}), "ReLU-init FSRnet equals ReLU FSRnet");
  NetworkSpec dn;
  dn.arch = Architecture::fdnet;
  dn.task = Task::denoise;
  dn.depth = 6;
  dn.width = 16;
  o.require(relu_init_matches_relu(dn, rng, {1, 1, 24, 16}), "ReLU-init FDnet equals ReLU FDnet");

  auto pr = make_prelu<float>(8, 0.25);
  for (auto& a : pr.alpha->data()) a = static_cast<float>(rng.uniform(-0.5, 0.9));
  const auto x = randn<float>({2, 8, 13, 7}, rng);
  const auto want = prelu_forward(x, pr).values();
  o.require(mtlu_forward(x, mtlu_from_prelu(pr)).values() == want, "two-bin PReLU embedding");
  auto wide = make_mtlu<float>(8, BinGeometry::symmetric(40, 0.05));
  for (std::int64_t c = 0; c < 8; ++c)
    for (int k = 0; k < 40; ++k) wide.slopes->data()[c * 40 + k] = k < 20 ? pr.alpha->values()[c] : 1.0f;
  o.require(mtlu_forward(x, wide).values() == want, "40-bin PReLU embedding");
  o.note("if-chain on 3x1e4 inputs per K, network and PReLU equivalences bitwise");
  return o;
}

// ---------------------------------------------------------------------------

Outcome cost_independence() {
  Outcome o;
  BenchOptions opt;  // 1x64x256x256 = 2^22 elements
  opt.repeats = 9;
  opt.warmup = 2;
  auto best_medians = [&](ActivationKind kind, const std::vector<int>& sweep) {
    std::vector<double> best(sweep.size(), 1e300);
    for (int round = 0; round < 7; ++round)
      for (std::size_t i = 0; i < sweep.size(); ++i) {
        ActivationSpec s;
        s.kind = kind;
        s.bins = sweep[i];
        s.apl_kernels = sweep[i];
        best[i] = std::min(best[i], bench_activation(s, opt).median_ms);
      }
    return best;
  };
  const auto m = best_medians(ActivationKind::mtlu, {20, 40, 80, 320});
  const double lo = *std::ranges::min_element(m), hi = *std::ranges::max_element(m);
  const double spread = (hi - lo) / lo;
  o.require(spread < 0.15, "MTLU spread " + fmt("%.1f%%", 100 * spread) + " under 15%");
  const auto a = best_medians(ActivationKind::apl, {2, 5, 10, 20});
  for (std::size_t i = 1; i < a.size(); ++i) o.require(a[i] > a[i - 1], "APL cost increases with S");
  std::string mt = "MTLU K=20/40/80/320 ms", ap = "APL S=2/5/10/20 ms";
  for (double v : m) mt += " " + fmt("%.2f", v);
  for (double v : a) ap += " " + fmt("%.2f", v);
  o.note(mt + " (spread " + fmt("%.1f%%", 100 * spread) + "), " + ap);
  return o;
}

// ---------------------------------------------------------------------------

Outcome shuffle_laws() {
  Outcome o;
  Rng rng(404);
  int shapes = 0;
  for (int t = 0; t < 100; ++t) {
    const std::int64_t r = 1 + static_cast<std::int64_t>(rng.below(4));
    const std::int64_t n = 1 + rng.below(3), c = 1 + rng.below(4), h = 1 + rng.below(9), w = 1 + rng.below(9);
    const auto x = randn<double>({n, c * r * r, h, w}, rng);
    const auto y = randn<double>({n, c, h * r, w * r}, rng);
    const bool ok = pixel_unshuffle(pixel_shuffle(x, r), r).values() == x.values() &&
                    pixel_shuffle(pixel_unshuffle(y, r), r).values() == y.values();
    o.require(ok, "round trip on shape " + std::to_string(n) + "x" + std::to_string(c * r * r) + "x" +
                      std::to_string(h) + "x" + std::to_string(w) + " r=" + std::to_string(r));
    shapes += ok;
  }
  int nets = 0;
  for (int t = 0; t < 30; ++t) {
    NetworkSpec sr;
    sr.factor = 2 + static_cast<int>(rng.below(3));
    sr.depth = 3 + static_cast<int>(rng.below(3));
    sr.width = 4;
    auto s = build_network<float>(sr, rng);
    const std::int64_t n = 1 + rng.below(2), h = 1 + rng.below(20), w = 1 + rng.below(20);
    o.require(s.infer(zeros<float>({n, 1, h, w})).shape() == Shape{n, 1, h * sr.factor, w * sr.factor},
              "FSRnet shape law");
    NetworkSpec dn;
    dn.arch = Architecture::fdnet;
    dn.task = Task::denoise;
    dn.depth = 3 + static_cast<int>(rng.below(3));
    dn.width = 4;
    auto d = build_network<float>(dn, rng);
    const std::int64_t dh = 4 * (1 + rng.below(6)), dw = 4 * (1 + rng.below(6));
    o.require(d.infer(zeros<float>({n, 1, dh, dw})).shape() == Shape{n, 1, dh, dw}, "FDnet shape law");
    bool threw = false;
    try {
      d.infer(zeros<float>({1, 1, dh + 1 + static_cast<std::int64_t>(rng.below(3)), dw}));
    } catch (const ShapeError&) {
      threw = true;
    }
    o.require(threw, "FDnet rejects H not divisible by 4");
    ++nets;
  }
  o.note(std::to_string(shapes) + "/100 shuffle round trips bitwise, " + std::to_string(nets) +
         " randomized FSRnet/FDnet pairs");
  return o;
}

// ---------------------------------------------------------------------------

struct RunResult {
  double psnr = 0.0;
  double baseline = 0.0;
  double seconds = 0.0;
};

RunResult run_experiment(const ExperimentConfig& cfg) {
  const auto t0 = Clock::now();
  const PatchDataset data(training_images(cfg), cfg.dataset_spec());
  auto net = initial_network<float>(cfg);
  train(net, data, cfg.train);
  const auto rep = eval_benchmark(net, validation_images(cfg), cfg.eval_options());
  return {rep.mean_psnr_db, rep.mean_baseline_db, seconds_since(t0)};
}

ExperimentConfig sr_config(ActivationKind af, std::uint64_t seed) {
  ExperimentConfig c;
  c.task = Task::super_resolution;
  c.factor = 2;
  c.depth = 7;
  c.width = 16;
  c.af.kind = af;
  c.af.bins = 40;
  c.train.batch_size = 16;
  c.train.lr_init = 1e-3;
  c.train.lr_halve_every = 2500;
  c.train.max_iters = 5000;
  c.train.seed = seed;
  c.synthetic_count = 200;
  c.synthetic_size = 96;
  c.val_count = 20;
  return c;
}

std::pair<RunResult, RunResult> sr_pair(std::uint64_t seed, const fs::path& work) {
  const fs::path cache = work / ("sr_seed" + std::to_string(seed) + ".txt");
  RunResult m, r;
  if (std::ifstream in(cache); in && in >> m.psnr >> m.baseline >> m.seconds >> r.psnr >> r.baseline >> r.seconds)
    return {m, r};
  m = run_experiment(sr_config(ActivationKind::mtlu, seed));
  r = run_experiment(sr_config(ActivationKind::relu, seed));
  fs::create_directories(work);
  std::ofstream out(cache);
  char buf[256];
  std::snprintf(buf, sizeof buf, "%.17g %.17g %.17g %.17g %.17g %.17g\n", m.psnr, m.baseline, m.seconds, r.psnr,
                r.baseline, r.seconds);
  out << buf;
  return {m, r};
}

Outcome sr_experiment(const fs::path& work) {
  Outcome o;
  fs::remove(work / "sr_seed1.txt");
  const auto [m, r] = sr_pair(1, work);
  const double secs = m.seconds + r.seconds;
  o.require(m.psnr >= m.baseline + 0.3, "MTLU beats bicubic by 0.3 dB");
  o.require(m.psnr >= r.psnr - 0.05, "MTLU within 0.05 dB of ReLU");
  o.require(secs <= 900.0, "runtime within 15 min");
  o.note("MTLU " + fmt("%.3f", m.psnr) + " dB, ReLU " + fmt("%.3f", r.psnr) + " dB, bicubic " +
         fmt("%.3f", m.baseline) + " dB, " + fmt("%.0f s", secs));
  return o;
}

void sr_seed_report(const fs::path& work) {
  int wins = 0;
  double total = 0;
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    const auto [m, r] = sr_pair(seed, work);
    std::printf("seed %llu: MTLU %.3f dB, ReLU %.3f dB, bicubic %.3f dB, MTLU - ReLU %+.3f dB\n",
                static_cast<unsigned long long>(seed), m.psnr, r.psnr, m.baseline, m.psnr - r.psnr);
    wins += m.psnr > r.psnr;
    total += m.psnr - r.psnr;
  }
  std::printf("REPORT 5 sr_seed_report: MTLU ahead on %d of 3 seeds, mean difference %+.3f dB (not gated)\n", wins,
              total / 3);
}

Outcome denoise_experiment() {
  Outcome o;
  ExperimentConfig c;
  c.task = Task::denoise;
  c.sigma = 25.0;
  c.depth = 6;
  c.width = 32;
  c.patch = 72;
  c.train.batch_size = 16;
  c.train.lr_init = 1e-3;
  c.train.lr_halve_every = 2500;
  c.train.max_iters = 5000;
  c.synthetic_count = 200;
  c.synthetic_size = 96;
  c.val_count = 20;
  const auto r = run_experiment(c);
  o.require(r.psnr >= r.baseline + 6.0, "6 dB over the noisy input");
  o.require(r.seconds <= 900.0, "runtime within 15 min");
  o.note("FDnet " + fmt("%.3f", r.psnr) + " dB, noisy " + fmt("%.3f", r.baseline) + " dB, gain " +
         fmt("%.2f", r.psnr - r.baseline) + " dB, " + fmt("%.0f s", r.seconds));
  return o;
}

// ---------------------------------------------------------------------------

ExperimentConfig small_train_config(double wd, std::int64_t iters) {
  ExperimentConfig c;
  c.factor = 2;
  c.depth = 5;
  c.width = 8;
  c.patch = 16;
  c.synthetic_count = 8;
  c.synthetic_size = 48;
  c.train.batch_size = 4;
  c.train.max_iters = iters;
  c.train.weight_decay = wd;
  return c;
}

Network<float> twin(const ExperimentConfig& c, bool zero_loss_gradient) {
  const PatchDataset data(training_images(c), c.dataset_spec());
  auto net = initial_network<float>(c);
  TrainHooks<float> hooks;
  if (zero_loss_gradient)
    hooks.after_backward = [](Network<float>& n, std::int64_t) {
      for (const auto& g : n.registry()) std::ranges::fill(g.tensor->grad(), 0.0f);
    };
  train(net, data, c.train, hooks);
  return net;
}

bool is_conv(const ParamGroup<float>& g) { return g.kind == ParamKind::conv; }
bool is_activation(const ParamGroup<float>& g) { return g.kind == ParamKind::activation; }
bool any_group(const ParamGroup<float>&) { return true; }

Outcome training_policy() {
  Outcome o;
  // (a) decay: with the loss gradient removed only decay moves parameters
  {
    auto with = twin(small_train_config(1e-4, 20), true), without = twin(small_train_config(0.0, 20), true);
    const auto init = initial_network<float>(small_train_config(1e-4, 20));
    o.require(flat_params(with, is_conv) != flat_params(init, is_conv), "decay moves conv weights");
    o.require(flat_params(without, is_conv) == flat_params(init, is_conv), "no decay leaves conv weights");
    o.require(flat_params(with, is_activation) == flat_params(init, is_activation), "decay never moves MTLU arrays");
  }
  // one real step: identical gradients, so MTLU arrays agree bitwise and conv weights do not
  {
    auto with = twin(small_train_config(1e-4, 1), false), without = twin(small_train_config(0.0, 1), false);
    o.require(flat_params(with, is_activation) == flat_params(without, is_activation),
              "first step MTLU arrays identical with and without decay");
    o.require(flat_params(with, is_conv) != flat_params(without, is_conv), "first step conv weights differ");
  }
  // (b) schedule and stop rule
  {
    TrainConfig t;
    t.lr_halve_every = 80000;
    o.require(lr_at(160000, t) == 2.5e-4 && lr_at(79999, t) == 1e-3, "lr_at halving");
    auto c = small_train_config(0.0, 1000);
    c.train.lr_halve_every = 10;
    const PatchDataset data(training_images(c), c.dataset_spec());
    auto net = initial_network<float>(c);
    const auto rep = train(net, data, c.train);
    o.require(rep.stopped_by_schedule && rep.iterations == 70, "stop once lr < 1e-5 (70 iterations)");
  }
  // (c) determinism
  {
    auto a = twin(small_train_config(1e-4, 15), false), b = twin(small_train_config(1e-4, 15), false);
    auto other = small_train_config(1e-4, 15);
    other.train.seed = 2;
    auto d = twin(other, false);
    o.require(flat_params(a, any_group) == flat_params(b, any_group),
              "identical seeds give identical parameters");
    o.require(serialize_checkpoint(a) == serialize_checkpoint(b), "identical checkpoints");
    o.require(serialize_checkpoint(a) != serialize_checkpoint(d), "different seed differs");
  }
  o.note("decay exemption, halving schedule, stop rule and determinism twin runs");
  return o;
}

// ---------------------------------------------------------------------------

Outcome parameter_accounting() {
  Outcome o;
  ActivationSpec s;
  s.bins = 40;
  const std::int64_t mtlu_params = param_count(ActivationKind::mtlu, 64, s);
  const std::int64_t conv = conv_param_count(64, 64, 3, false);
  o.require(mtlu_params == 64 * 80 && mtlu_params == 5120, "MTLU-40 on 64 channels has 5120 parameters");
  o.require(conv == 36864, "3x3 conv 64->64 has 36864 weights");
  o.require(7 * mtlu_params < conv, "7 x 5120 < 36864");
  Rng rng(8);
  NetworkSpec net;
  net.width = 64;
  const auto n = build_network<float>(net, rng);
  std::int64_t in_net = 0;
  for (const auto& g : n.registry())
    if (g.kind == ParamKind::activation) in_net += static_cast<std::int64_t>(g.tensor->size());
  o.require(in_net == 6 * 5120, "FSRnet_7 carries six MTLU-40 layers of 5120 parameters");
  o.note("5120 vs 36864/7 = " + fmt("%.1f", conv / 7.0));
  return o;
}

// ---------------------------------------------------------------------------

template <class E>
bool throws_as(const std::function<void()>& f) {
  try {
    f();
  } catch (const E&) {
    return true;
  } catch (...) {
    return false;
  }
  return false;
}

Outcome checkpoint_format() {
  Outcome o;
  Rng rng(9);
  NetworkSpec spec;
  spec.factor = 2;
  spec.width = 8;
  auto net = build_network<float>(spec, rng);
  for (const auto& g : net.registry())
    for (auto& v : g.tensor->data()) v = static_cast<float>(rng.normal());
  const auto bytes = serialize_checkpoint(net);
  auto back = deserialize_checkpoint<float>(bytes);
  const auto x = rand_uniform<float>({1, 1, 9, 10}, rng, 0.0, 1.0);
  o.require(serialize_checkpoint(back) == bytes, "round trip bitwise");
  o.require(back.infer(x).values() == net.infer(x).values(), "round trip output");

  auto flipped = bytes;
  flipped[flipped.size() / 2] ^= 0x01;
  o.require(throws_as<CheckpointChecksumError>([&] { deserialize_checkpoint<float>(flipped); }), "corrupt byte");
  std::vector<unsigned char> cut(bytes.begin(), bytes.end() - 9);
  o.require(throws_as<CheckpointChecksumError>([&] { deserialize_checkpoint<float>(cut); }), "truncated file");
  auto version = bytes;
  version[8] = 2;
  o.require(throws_as<CheckpointVersionError>([&] { deserialize_checkpoint<float>(version); }), "version mismatch");

  const fs::path dir = MTLU_TEST_DATA;
  auto golden = load_checkpoint<float>(dir / "golden_net.ckpt");
  const auto got = golden.infer(golden::read_values(dir / "golden_input.txt"));
  const auto want = golden::read_values(dir / "golden_output.txt");
  double worst = got.shape() == want.shape() ? 0.0 : 1e300;
  if (got.shape() == want.shape())
    for (std::size_t i = 0; i < got.size(); ++i) worst = std::max(worst, std::abs(double(got[i]) - want[i]));
  o.require(worst <= 1e-6, "golden output within 1e-6");
  o.note("golden max abs diff " + fmt("%.2e", worst));
  return o;
}

struct Criterion {
  int id;
  const char* name;
  std::function<Outcome()> run;
};

}  // namespace

int main(int argc, char** argv) {
  fs::path work = "acceptance_work";
  bool report = false;
  std::vector<int> wanted;
  for (int i = 1; i < argc; ++i) {
    const std::string a = argv[i];
    if (a == "--work" && i + 1 < argc) work = argv[++i];
    else if (a == "--seed-report") report = true;
    else wanted.push_back(std::stoi(a));
  }
  if (report) {
    sr_seed_report(work);
    return 0;
  }
  const std::vector<Criterion> all = {
      {1, "gradient_oracles", gradient_oracles},
      {2, "mtlu_exactness", mtlu_exactness},
      {3, "cost_independence", cost_independence},
      {4, "shuffle_laws", shuffle_laws},
      {5, "sr_experiment", [&] { return sr_experiment(work); }},
      {6, "denoise_experiment", denoise_experiment},
      {7, "training_policy", training_policy},
      {8, "parameter_accounting", parameter_accounting},
      {9, "checkpoint_format", checkpoint_format},
  };
  bool ok = true;
  for (const auto& c : all) {
    if (!wanted.empty() && std::ranges::find(wanted, c.id) == wanted.end()) continue;
    Outcome out;
    try {
      out = c.run();
    } catch (const std::exception& e) {
      out.pass = false;
      out.detail = std::string("exception: ") + e.what();
    }
    std::printf("%s %d %s: %s\n", out.pass ? "PASS" : "FAIL", c.id, c.name, out.detail.c_str());
    std::fflush(stdout);
    ok = ok && out.pass;
  }
  return ok ? 0 : 1;
}
