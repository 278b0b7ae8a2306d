// Command-line front end: dataset generation, two-stage adversarial
// training, evaluation, numeric self-checks and attention-mask export.
//
// Exit codes: 0 success, 1 usage/config error, 2 data error, 3 numeric-check
// failure.

#include <CLI11.hpp>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>

#include "sap/data.hpp"
#include "sap/gradcheck_suite.hpp"
#include "sap/image_io.hpp"
#include "sap/run_config.hpp"
#include "sap/train.hpp"

namespace fs = std::filesystem;
using namespace sap;

namespace {

struct CliOptions {
  // shared
  std::string config_file, data_dir, out_dir, ckpt_file, image_file, split = "target";
  std::string report_file;
  std::vector<std::string> overrides;  // key=value
  std::vector<std::string> ablations;
  int levels = 0;
  double lambda = std::nan("");
  std::uint64_t seed = 0;
  bool have_seed = false;
  // gen-data
  std::string severity;
  std::size_t count = 200;
  // gradcheck
  bool full = false;
  bool source_only = false;
};

RunConfig build_config(const CliOptions& opt) {
  RunConfig cfg;
  if (!opt.config_file.empty()) cfg = RunConfig::from_file(opt.config_file);
  for (const auto& kv : opt.overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos)
      throw ConfigError("--set expects key=value, got '" + kv + "'");
    cfg.set(kv.substr(0, eq), kv.substr(eq + 1));
  }
  if (!std::isnan(opt.lambda)) cfg.train.lambda = opt.lambda;
  if (opt.have_seed) {
    cfg.train.seed = opt.seed;
    cfg.scene.seed = opt.seed;
  }
  if (opt.levels) cfg.model.pyramid.pool_sizes = PyramidConfig::level_set(opt.levels);
  for (const auto& a : opt.ablations) {
    if (a == "gm") cfg.model.pyramid.use_guided_map = false;
    else if (a == "ca") cfg.model.pyramid.use_channel_attention = false;
    else if (a == "sa") cfg.model.pyramid.use_spatial_attention = false;
    else if (a == "maxpool") cfg.model.pyramid.pooling = Pooling::kMax;
    else throw ConfigError("unknown ablation '" + a + "' (gm|ca|sa|maxpool)");
  }
  if (opt.source_only) cfg.train.adversarial = false;
  cfg.validate();
  return cfg;
}

int cmd_gen_data(const CliOptions& opt) {
  RunConfig cfg = build_config(opt);
  if (!opt.severity.empty()) {
    const auto comma = opt.severity.find(',');
    if (comma == std::string::npos)
      throw ConfigError("--severity expects 'sigma,alpha', got '" + opt.severity + "'");
    cfg.scene.noise_sigma = std::stod(opt.severity.substr(0, comma));
    cfg.scene.haze_alpha = std::stod(opt.severity.substr(comma + 1));
    cfg.scene.validate();
  }
  Dataset data = generate_dataset(cfg.scene, opt.count);
  save_dataset(opt.out_dir, data);
  std::ofstream(fs::path(opt.out_dir) / "scene.txt") << cfg.echo();
  std::cout << "wrote " << data.samples.size() << " samples (" << opt.count
            << " per domain) to " << opt.out_dir << "\n";
  return 0;
}

template <typename S>
int run_train(const RunConfig& cfg, const std::string& data_dir, const std::string& out_dir) {
  Dataset data = load_dataset(data_dir);
  SapModel<S> model(cfg.model, cfg.train.seed);
  Trainer<S> trainer(model, data, cfg.train);

  fs::create_directories(out_dir);
  std::ofstream csv(fs::path(out_dir) / "metrics.csv");
  if (!csv) throw IoError(out_dir + "/metrics.csv: cannot open for writing");
  trainer.run(&csv);

  const std::string echo = cfg.echo();
  std::ofstream(fs::path(out_dir) / "config.txt") << echo;
  std::ofstream ck(fs::path(out_dir) / "checkpoint.sapc", std::ios::binary);
  if (!ck) throw IoError(out_dir + "/checkpoint.sapc: cannot open for writing");
  save_checkpoint(ck, trainer.checkpoint(echo));

  EvalReport src = evaluate(model, data, 0);
  EvalReport tgt = evaluate(model, data, 1);
  std::cout << std::fixed << std::setprecision(4)
            << "done: " << cfg.train.total_iters << " iters; source mIoU " << src.miou
            << ", target mIoU " << tgt.miou << ", target disc acc " << tgt.disc_acc << "\n";
  return 0;
}

int cmd_train(const CliOptions& opt) {
  RunConfig cfg = build_config(opt);
  if (cfg.dtype == "f64") return run_train<double>(cfg, opt.data_dir, opt.out_dir);
  return run_train<float>(cfg, opt.data_dir, opt.out_dir);
}

template <typename S>
SapModel<S> model_from_checkpoint(const RunConfig& cfg, const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError(path + ": cannot open checkpoint");
  auto ck = load_checkpoint<S>(is);
  SapModel<S> model(cfg.model, cfg.train.seed);
  load_model_state(model, ck);
  return model;
}

RunConfig config_from_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError(path + ": cannot open checkpoint");
  RunConfig cfg;
  cfg.apply_text(read_checkpoint_config(is), path + " (config echo)");
  return cfg;
}

template <typename S>
int run_eval(const RunConfig& cfg, const CliOptions& opt) {
  SapModel<S> model = model_from_checkpoint<S>(cfg, opt.ckpt_file);
  Dataset data = load_dataset(opt.data_dir);
  const int domain = opt.split == "source" ? 0 : 1;
  EvalReport r = evaluate(model, data, domain);

  static const char* kClassNames[] = {"background", "circle", "square", "triangle"};
  std::cout << "split: " << opt.split << " (" << r.count << " samples)\n";
  std::cout << std::left << std::setw(12) << "class" << std::right << std::setw(10) << "IoU"
            << "\n";
  for (std::size_t c = 0; c < r.iou.size(); ++c) {
    const std::string name = c < 4 ? kClassNames[c] : "class" + std::to_string(c);
    std::cout << std::left << std::setw(12) << name << std::right << std::setw(10);
    if (r.iou[c] < 0) std::cout << "n/a";
    else std::cout << std::fixed << std::setprecision(4) << r.iou[c];
    std::cout << "\n";
  }
  std::cout << std::fixed << std::setprecision(4) << std::left << std::setw(12) << "mIoU"
            << std::right << std::setw(10) << r.miou << "\n"
            << std::left << std::setw(12) << "pixel_acc" << std::right << std::setw(10)
            << r.pixel_acc << "\n"
            << std::left << std::setw(12) << "disc_acc" << std::right << std::setw(10)
            << r.disc_acc << "\n";

  const std::string report =
      opt.report_file.empty() ? opt.ckpt_file + ".report.txt" : opt.report_file;
  std::ofstream rf(report);
  if (!rf) throw IoError(report + ": cannot open for writing");
  rf << std::setprecision(17) << "split=" << opt.split << "\ncount=" << r.count << "\n";
  for (std::size_t c = 0; c < r.iou.size(); ++c) rf << "iou_" << c << "=" << r.iou[c] << "\n";
  rf << "miou=" << r.miou << "\npixel_acc=" << r.pixel_acc << "\ndisc_acc=" << r.disc_acc << "\n";
  return 0;
}

int cmd_eval(const CliOptions& opt) {
  RunConfig cfg = config_from_checkpoint(opt.ckpt_file);
  if (opt.split != "source" && opt.split != "target")
    throw ConfigError("--split must be source or target");
  if (cfg.dtype == "f64") return run_eval<double>(cfg, opt);
  return run_eval<float>(cfg, opt);
}

int cmd_gradcheck(const CliOptions& opt) {
  ad::SuiteResult r = ad::run_gradcheck_suite(opt.full);
  for (const auto& line : r.lines) std::cout << line << "\n";
  std::cout << (r.ok ? "all gradient checks passed" : "GRADIENT CHECKS FAILED") << " (worst "
            << r.worst << ")\n";
  return r.ok ? 0 : 3;
}

template <typename S>
int run_export(const RunConfig& cfg, const CliOptions& opt) {
  SapModel<S> model = model_from_checkpoint<S>(cfg, opt.ckpt_file);
  Tensor<std::uint8_t> raw = read_ppm(opt.image_file);
  Tensor<S> img(raw.shape());
  for (std::size_t i = 0; i < raw.size(); ++i) img[i] = static_cast<S>(raw[i]) / S(255);

  ad::Tape<S> tape;
  ad::Var<S> f_hat = model.task().backbone(tape, tape.leaf(img));
  ad::Var<S> logits = model.task().seg_logits(tape, f_hat);
  ad::Var<S> gm = ad::softmax_channels(logits);
  auto out = model.sap().forward(tape, {f_hat}, {gm}, /*train=*/false, std::nullopt);
  const AttentionState<S>& st = out.states[0];
  if (st.masks.empty()) throw ConfigError("export-attention: spatial attention is disabled");

  fs::create_directories(opt.out_dir);
  for (std::size_t n = 0; n < st.masks.size(); ++n) {
    const Tensor<S>& m = st.masks[n];
    S lo = m[0], hi = m[0];
    for (std::size_t i = 0; i < m.size(); ++i) {
      lo = std::min(lo, m[i]);
      hi = std::max(hi, m[i]);
    }
    Tensor<std::uint8_t> gray(m.shape());
    const double range = std::max(static_cast<double>(hi - lo), 1e-20);
    for (std::size_t i = 0; i < m.size(); ++i)
      gray[i] = static_cast<std::uint8_t>(std::lround((m[i] - lo) / range * 255.0));
    std::ostringstream name;
    name << "mask_" << std::setw(2) << std::setfill('0') << n << ".pgm";
    write_pgm((fs::path(opt.out_dir) / name.str()).string(), gray);
  }
  std::ofstream wf(fs::path(opt.out_dir) / "weights.txt");
  const std::size_t N = st.phi.extent(0), C = st.phi.extent(1);
  for (std::size_t n = 0; n < N; ++n) {
    double mean = 0;
    for (std::size_t c = 0; c < C; ++c) mean += st.phi.at(n, c);
    wf << "level " << n << " pool " << cfg.model.pyramid.pool_sizes[n] << " mean_weight "
       << mean / C << "\n";
  }
  std::cout << "wrote " << st.masks.size() << " masks to " << opt.out_dir << "\n";
  return 0;
}

int cmd_export(const CliOptions& opt) {
  RunConfig cfg = config_from_checkpoint(opt.ckpt_file);
  if (cfg.dtype == "f64") return run_export<double>(cfg, opt);
  return run_export<float>(cfg, opt);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"spatial attention pyramid domain adaptation toolkit"};
  app.require_subcommand(1);
  CliOptions opt;

  auto* gen = app.add_subcommand("gen-data", "generate the synthetic two-domain dataset");
  gen->add_option("--out", opt.out_dir, "output directory")->required();
  gen->add_option("--seed", opt.seed, "scene seed")->each([&](const std::string&) {
    opt.have_seed = true;
  });
  gen->add_option("--count", opt.count, "samples per domain");
  gen->add_option("--severity", opt.severity, "target shift 'sigma,alpha'");
  gen->add_option("--set", opt.overrides, "override config key=value (repeatable)");
  gen->add_option("--config", opt.config_file, "config file");

  auto* train = app.add_subcommand("train", "run two-stage adversarial training");
  train->add_option("--config", opt.config_file, "config file");
  train->add_option("--data", opt.data_dir, "dataset directory")->required();
  train->add_option("--out", opt.out_dir, "output directory")->required();
  train->add_option("--lambda", opt.lambda, "reversal strength");
  train->add_option("--ablation", opt.ablations, "gm|ca|sa|maxpool (repeatable)");
  train->add_option("--levels", opt.levels, "pyramid level set: 3|7|9|13");
  train->add_option("--seed", opt.seed, "train + scene seed")->each([&](const std::string&) {
    opt.have_seed = true;
  });
  train->add_flag("--source-only", opt.source_only, "skip the adversarial stage entirely");
  train->add_option("--set", opt.overrides, "override config key=value (repeatable)");

  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint");
  eval->add_option("--ckpt", opt.ckpt_file, "checkpoint file")->required();
  eval->add_option("--data", opt.data_dir, "dataset directory")->required();
  eval->add_option("--split", opt.split, "source|target");
  eval->add_option("--report", opt.report_file, "key=value report path");

  auto* grad = app.add_subcommand("gradcheck", "finite-difference self test");
  grad->add_flag("--full", opt.full, "more samples per parameter");

  auto* exp = app.add_subcommand("export-attention", "write per-level attention masks");
  exp->add_option("--ckpt", opt.ckpt_file, "checkpoint file")->required();
  exp->add_option("--image", opt.image_file, "input PPM image")->required();
  exp->add_option("--out", opt.out_dir, "output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  try {
    if (gen->parsed()) return cmd_gen_data(opt);
    if (train->parsed()) return cmd_train(opt);
    if (eval->parsed()) return cmd_eval(opt);
    if (grad->parsed()) return cmd_gradcheck(opt);
    if (exp->parsed()) return cmd_export(opt);
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const IoError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const ShapeError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const TrainError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
  return 1;
}
