// mtlu: train, evaluate and inspect MTLU restoration networks.

#include <CLI11.hpp>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "mtlu/mtlu.hpp"

namespace fs = std::filesystem;
using namespace mtlu;

namespace {

enum Exit { kOk = 0, kCheckFailed = 1, kUsage = 2, kNumeric = 3 };

std::vector<NamedPlane> corpus(const std::string& dir, int count, int size, std::uint64_t seed) {
  if (!dir.empty()) return load_luma_dir(dir);
  return synthetic_corpus(count, size, seed);
}

ExperimentConfig build_config(const std::string& path, const std::vector<std::string>& overrides) {
  ExperimentConfig cfg = path.empty() ? ExperimentConfig{} : load_config(path);
  for (const auto& o : overrides) apply_override(cfg, o);
  return cfg;
}

int cmd_config(const std::string& path, const std::vector<std::string>& overrides) {
  std::cout << dump_config(build_config(path, overrides));
  return kOk;
}

int cmd_train(const std::string& path, const std::vector<std::string>& overrides, bool quiet) {
  const ExperimentConfig cfg = build_config(path, overrides);
  cfg.train.validate();
  const fs::path out(cfg.out_dir);
  fs::create_directories(out);
  {
    std::ofstream f(out / "effective.cfg");
    f << dump_config(cfg);
  }

  const PatchDataset data(training_images(cfg), cfg.dataset_spec());
  const std::vector<NamedPlane> val = validation_images(cfg);
  Network<float> net = initial_network<float>(cfg);

  std::ofstream log(out / "train.jsonl");
  std::ostringstream echo;
  TrainHooks<float> hooks;
  hooks.log = &log;
  hooks.validation = val.empty() ? nullptr : &val;
  hooks.val_options = cfg.eval_options();
  hooks.checkpoint_every = cfg.checkpoint_every;
  hooks.checkpoint = [&](const Network<float>& n, std::int64_t) { save_checkpoint(n, out / "model.ckpt"); };

  const auto t0 = std::chrono::steady_clock::now();
  TrainReport rep;
  try {
    rep = train(net, data, cfg.train, hooks);
  } catch (const NumericError& e) {
    std::cerr << "numeric abort: " << e.what() << "\n";
    if (fs::exists(out / "model.ckpt")) std::cerr << "last good checkpoint kept at " << (out / "model.ckpt") << "\n";
    return kNumeric;
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  save_checkpoint(net, out / "model.ckpt");

  if (!quiet) {
    std::printf("iterations   %lld%s\n", static_cast<long long>(rep.iterations),
                rep.stopped_by_schedule ? " (stopped by lr schedule)" : "");
    if (!rep.records.empty()) std::printf("final loss   %.6g\n", rep.records.back().loss);
    if (rep.final_val_psnr_db) std::printf("val psnr     %s dB\n", format_db(*rep.final_val_psnr_db).c_str());
    std::printf("parameters   %lld\n", static_cast<long long>(net.parameter_count()));
    std::printf("time         %.1f s\n", secs);
    std::printf("checkpoint   %s\n", (out / "model.ckpt").string().c_str());
  }
  return kOk;
}

struct EvalArgs {
  std::string checkpoint;
  std::string images;
  std::string csv;
  std::string task;
  int factor = 0;
  double sigma = 25.0;
  std::uint64_t seed = 0;
  int shave = -1;
  int synthetic = 0;
  int synthetic_size = 96;
  std::uint64_t synthetic_seed = 8;
};

int cmd_eval(const EvalArgs& a) {
  if (!fs::exists(a.checkpoint)) throw IoError("checkpoint '" + a.checkpoint + "' not found");
  Network<float> net = load_checkpoint<float>(a.checkpoint);
  if (!a.task.empty() && parse_task(a.task) != net.spec().task) {
    std::cerr << "error: checkpoint is a " << to_string(net.spec().task) << " model, --task asked for " << a.task
              << "\n";
    return kCheckFailed;
  }
  if (a.factor != 0 && a.factor != net.spec().factor && net.spec().task == Task::super_resolution) {
    std::cerr << "error: checkpoint is a x" << net.spec().factor << " model, --factor asked for x" << a.factor << "\n";
    return kCheckFailed;
  }
  if (a.images.empty() && a.synthetic <= 0) throw ConfigError("eval needs --images or --synthetic");
  const auto images = corpus(a.images, a.synthetic, a.synthetic_size, a.synthetic_seed);
  EvalOptions opt = eval_options_for(net, a.sigma, a.seed);
  opt.shave = a.shave;
  const EvalReport rep = eval_benchmark(net, images, opt);
  if (!a.csv.empty()) {
    std::ofstream f(a.csv);
    if (!f) throw IoError("cannot write '" + a.csv + "'");
    write_eval_csv(rep, f);
  } else {
    write_eval_csv(rep, std::cout);
  }
  std::printf("mean_psnr_db %s\n", format_db(rep.mean_psnr_db).c_str());
  std::printf("mean_baseline_db %s\n", format_db(rep.mean_baseline_db).c_str());
  return kOk;
}

int cmd_infer(const std::string& checkpoint, const std::string& input, const std::string& output) {
  if (!fs::exists(checkpoint)) throw IoError("checkpoint '" + checkpoint + "' not found");
  Network<float> net = load_checkpoint<float>(checkpoint);
  const Image img = load_png(input);
  const NetworkSpec& s = net.spec();
  auto run = [&](const Plane& p) { return to_plane(net.infer(to_tensor<float>(p))); };
  Image result;
  if (s.task == Task::super_resolution) {
    if (img.channels == 3) {
      YCbCr ycc = rgb_to_ycbcr(img);
      const int w = img.width * s.factor, h = img.height * s.factor;
      YCbCr up{run(ycc.y), resize_bicubic(ycc.cb, w, h), resize_bicubic(ycc.cr, w, h)};
      result = ycbcr_to_rgb(up);
    } else {
      result = image_from_planes({run(channel_plane(img, 0))});
    }
  } else {
    const int m = s.arch == Architecture::fdnet ? kFdnetShuffle : 1;
    std::vector<Plane> planes;
    for (int c = 0; c < img.channels; ++c) planes.push_back(run(mod_crop(channel_plane(img, c), m)));
    result = image_from_planes(planes);
  }
  save_png(result, output);
  std::printf("wrote %s (%dx%d)\n", output.c_str(), result.width, result.height);
  return kOk;
}

int cmd_gradcheck(const std::string& scope, int seeds, const std::vector<std::string>& only,
                  const std::string& fault) {
  GradCheckOptions opt;
  opt.scope = parse_grad_scope(scope);
  opt.seeds = seeds;
  opt.only = only;
  if (!fault.empty()) {
    if (fault != "mtlu") throw ConfigError("unknown fault '" + fault + "' (only mtlu is available)");
    detail::mtlu_backward_fault() = true;
  }
  const auto results = run_gradcheck(opt);
  bool ok = true;
  std::printf("%-18s %-12s %12s %6s %8s  %s\n", "check", "group", "worst_rel", "cases", "skipped", "status");
  for (const auto& r : results) {
    std::printf("%-18s %-12s %12.3e %6d %8d  %s\n", r.name.c_str(), r.group.c_str(), r.worst_rel_error, r.cases,
                r.skipped, r.passed ? "ok" : "FAIL");
    ok = ok && r.passed;
  }
  if (results.empty()) {
    std::fprintf(stderr, "no checks selected\n");
    return kUsage;
  }
  for (const auto& r : results)
    if (!r.passed) std::fprintf(stderr, "gradient check failed: %s\n", r.name.c_str());
  return ok ? kOk : kCheckFailed;
}

std::vector<int> parse_int_list(const std::string& s) {
  std::vector<int> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      out.push_back(std::stoi(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw ConfigError("expected a comma-separated integer list, got '" + s + "'");
    }
  }
  return out;
}

struct BenchArgs {
  std::string kinds = "mtlu,apl";
  std::string bins = "20,40,80,320";
  std::string kernels = "2,5,10,20";
  std::string segments = "40";
  std::vector<std::int64_t> size{1, 64, 256, 256};
  int repeats = 15;
  int warmup = 3;
  bool backward = false;
  std::string csv;
};

int cmd_bench(const BenchArgs& a) {
  BenchOptions opt;
  if (a.size.size() != 4) throw ConfigError("--size takes N C H W");
  opt.shape = {a.size[0], a.size[1], a.size[2], a.size[3]};
  opt.repeats = a.repeats;
  opt.warmup = a.warmup;
  opt.backward = a.backward;
  std::ofstream file;
  std::ostream* os = &std::cout;
  if (!a.csv.empty()) {
    file.open(a.csv);
    if (!file) throw IoError("cannot write '" + a.csv + "'");
    os = &file;
  }
  write_bench_csv_header(*os);
  std::stringstream ks(a.kinds);
  std::string k;
  while (std::getline(ks, k, ',')) {
    ActivationSpec spec;
    spec.kind = parse_activation_kind(k);
    std::vector<int> sweep{0};
    if (spec.kind == ActivationKind::mtlu) sweep = parse_int_list(a.bins);
    if (spec.kind == ActivationKind::apl) sweep = parse_int_list(a.kernels);
    if (spec.kind == ActivationKind::plf) sweep = parse_int_list(a.segments);
    for (int v : sweep) {
      if (spec.kind == ActivationKind::mtlu) spec.bins = v;
      if (spec.kind == ActivationKind::apl) spec.apl_kernels = v;
      if (spec.kind == ActivationKind::plf) spec.plf_segments = v;
      write_bench_csv_row(*os, bench_activation(spec, opt));
      os->flush();
    }
  }
  return kOk;
}

int cmd_synth(int count, int size, std::uint64_t seed, const std::string& dir) {
  fs::create_directories(dir);
  for (const auto& im : synthetic_corpus(count, size, seed)) save_plane_png(im.plane, fs::path(dir) / (im.name + ".png"));
  std::printf("wrote %d images to %s\n", count, dir.c_str());
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"MTLU activation library: training, evaluation and verification tools"};
  app.require_subcommand(1);

  std::string config_path;
  std::vector<std::string> overrides;
  bool quiet = false;
  auto* train_cmd = app.add_subcommand("train", "train a network from a key=value config");
  train_cmd->add_option("-c,--config", config_path, "config file (key=value lines)");
  train_cmd->add_option("overrides", overrides, "key=value overrides applied after the file");
  train_cmd->add_flag("-q,--quiet", quiet, "no summary on stdout");

  std::string show_path;
  std::vector<std::string> show_overrides;
  auto* config_cmd = app.add_subcommand("config", "print the effective config with every key documented");
  config_cmd->add_option("-c,--config", show_path, "config file");
  config_cmd->add_option("overrides", show_overrides, "key=value overrides");

  EvalArgs ea;
  auto* eval_cmd = app.add_subcommand("eval", "PSNR of a checkpoint on an image set, as CSV");
  eval_cmd->add_option("--checkpoint", ea.checkpoint, "checkpoint file")->required();
  eval_cmd->add_option("--images", ea.images, "directory of PNG images");
  eval_cmd->add_option("--synthetic", ea.synthetic, "evaluate on this many synthetic images instead");
  eval_cmd->add_option("--synthetic-size", ea.synthetic_size, "synthetic image side");
  eval_cmd->add_option("--synthetic-seed", ea.synthetic_seed, "synthetic corpus seed");
  eval_cmd->add_option("--task", ea.task, "expected task (sr or denoise)");
  eval_cmd->add_option("--factor", ea.factor, "expected SR factor");
  eval_cmd->add_option("--sigma", ea.sigma, "noise level for denoising (0-255 scale)");
  eval_cmd->add_option("--seed", ea.seed, "noise seed");
  eval_cmd->add_option("--shave", ea.shave, "border shave (-1: SR factor, 0 for denoising)");
  eval_cmd->add_option("--csv", ea.csv, "write the CSV here instead of stdout");

  std::string inf_ckpt, inf_in, inf_out;
  auto* infer_cmd = app.add_subcommand("infer", "run a checkpoint on one PNG");
  infer_cmd->add_option("--checkpoint", inf_ckpt, "checkpoint file")->required();
  infer_cmd->add_option("--input", inf_in, "input PNG")->required();
  infer_cmd->add_option("--output", inf_out, "output PNG")->required();

  std::string scope = "all", fault;
  int seeds = 20;
  std::vector<std::string> only;
  auto* grad_cmd = app.add_subcommand("gradcheck", "finite-difference check of every gradient (float64)");
  grad_cmd->add_option("--scope", scope, "all, ops, activations or networks");
  grad_cmd->add_option("--seeds", seeds, "random cases per check");
  grad_cmd->add_option("--only", only, "run only these checks");
  grad_cmd->add_option("--inject-fault", fault, "corrupt a backward pass on purpose (mtlu)");

  BenchArgs ba;
  auto* bench_cmd = app.add_subcommand("bench-act", "activation wall-clock: median and IQR per configuration");
  bench_cmd->add_option("--af", ba.kinds, "comma-separated activation kinds");
  bench_cmd->add_option("--bins", ba.bins, "MTLU bin counts to sweep");
  bench_cmd->add_option("--kernels", ba.kernels, "APL kernel counts to sweep");
  bench_cmd->add_option("--segments", ba.segments, "PLF segment counts to sweep");
  bench_cmd->add_option("--size", ba.size, "tensor shape N C H W")->expected(4);
  bench_cmd->add_option("--repeats", ba.repeats, "timed repetitions");
  bench_cmd->add_option("--warmup", ba.warmup, "untimed warm-up repetitions");
  bench_cmd->add_flag("--backward", ba.backward, "time the backward pass instead");
  bench_cmd->add_option("--csv", ba.csv, "write the CSV here instead of stdout");

  int synth_count = 20, synth_size = 96;
  std::uint64_t synth_seed = 7;
  std::string synth_dir;
  auto* synth_cmd = app.add_subcommand("synth", "write the synthetic texture corpus as PNGs");
  synth_cmd->add_option("--count", synth_count, "number of images");
  synth_cmd->add_option("--size", synth_size, "image side");
  synth_cmd->add_option("--seed", synth_seed, "corpus seed");
  synth_cmd->add_option("--out", synth_dir, "output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (*train_cmd) return cmd_train(config_path, overrides, quiet);
    if (*config_cmd) return cmd_config(show_path, show_overrides);
    if (*eval_cmd) return cmd_eval(ea);
    if (*infer_cmd) return cmd_infer(inf_ckpt, inf_in, inf_out);
    if (*grad_cmd) return cmd_gradcheck(scope, seeds, only, fault);
    if (*bench_cmd) return cmd_bench(ba);
    if (*synth_cmd) return cmd_synth(synth_count, synth_size, synth_seed, synth_dir);
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return kNumeric;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kUsage;
  } catch (const IoError& e) {
    std::cerr << "io error: " << e.what() << "\n";
    return kUsage;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "io error: " << e.what() << "\n";
    return kUsage;
  } catch (const ShapeError& e) {
    std::cerr << "shape error: " << e.what() << "\n";
    return kCheckFailed;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kCheckFailed;
  }
  return kUsage;
}
