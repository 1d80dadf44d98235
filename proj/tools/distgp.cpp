#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "distgp/array_io.hpp"
#include "distgp/data.hpp"
#include "distgp/error.hpp"
#include "distgp/model.hpp"
#include "distgp/ood.hpp"
#include "distgp/png_io.hpp"
#include "distgp/run_config.hpp"
#include "distgp/training.hpp"
#include "distgp/verify.hpp"

namespace fs = std::filesystem;
using namespace distgp;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitIo = 3;
constexpr int kExitNumerical = 4;

int exit_code(ErrorKind k) {
  switch (k) {
    case ErrorKind::Io:
      return kExitIo;
    case ErrorKind::NotPositiveDefinite:
    case ErrorKind::ZeroDiagonal:
    case ErrorKind::NonFinite:
    case ErrorKind::ZeroColumn:
    case ErrorKind::NonFiniteGradient:
    case ErrorKind::NonFiniteLoss:
      return kExitNumerical;
    default:
      return kExitConfig;
  }
}

struct Common {
  std::string config_path;
  std::vector<std::string> overrides;
  std::string out_dir = "out";
  std::size_t threads = 0;  // 0 = config value
};

RunConfig load_config(const Common& c) {
  nlohmann::json j = nlohmann::json::object();
  if (!c.config_path.empty()) j = parse_config_text(read_file(c.config_path), c.config_path);
  for (const std::string& o : c.overrides) apply_override(j, o);
  std::optional<std::uint64_t> seed;
  if (const char* env = std::getenv("DISTGP_SEED")) {
    try {
      std::size_t used = 0;
      seed = std::stoull(env, &used);
      if (used != std::string(env).size()) throw std::invalid_argument(env);
    } catch (const std::exception&) {
      throw Error(ErrorKind::Config, std::string("DISTGP_SEED='") + env + "' is not an unsigned integer");
    }
  }
  RunConfig rc = resolve_run_config(j, seed);
  if (c.threads > 0) rc.train.threads = c.threads;
  return rc;
}

void prepare_out_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw Error(ErrorKind::Io, "cannot create " + dir.string() + ": " + ec.message());
}

void write_json(const fs::path& path, const nlohmann::json& j) { write_file_atomic(path, j.dump(2) + "\n"); }

Dataset obtain_dataset(const RunConfig& rc) {
  if (rc.data_dir) return load_dataset(*rc.data_dir);
  return make_dataset(rc.data);
}

std::vector<Tensor> images_of(const std::vector<SyntheticScan>& scans) {
  std::vector<Tensor> out;
  for (const SyntheticScan& s : scans) out.push_back(s.image);
  return out;
}

fs::path checkpoint_path(const Common& c, const std::string& explicit_path) {
  return explicit_path.empty() ? fs::path(c.out_dir) / "checkpoint" : fs::path(explicit_path);
}

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config_path, "JSON run config");
  cmd->add_option("--set", c.overrides, "dotted override, e.g. model.num_inducing=64")->take_all();
  cmd->add_option("--out-dir", c.out_dir, "artifact directory");
  cmd->add_option("--threads", c.threads, "worker cap for per-tile work");
}

int cmd_gen_data(const Common& c) {
  const RunConfig rc = load_config(c);
  const fs::path dir = rc.data_dir ? fs::path(*rc.data_dir) : fs::path(c.out_dir) / "data";
  prepare_out_dir(c.out_dir);
  write_json(fs::path(c.out_dir) / "config.gen-data.json", to_json(rc));
  const fs::path index = save_dataset(make_dataset(rc.data), dir);
  std::cout << index.string() << "\n";
  return kExitOk;
}

int cmd_train(const Common& c, bool resume, std::optional<std::size_t> steps) {
  RunConfig rc = load_config(c);
  if (steps) rc.train.steps = *steps;
  rc.train.validate();
  prepare_out_dir(c.out_dir);
  write_json(fs::path(c.out_dir) / "config.train.json", to_json(rc));
  const Dataset ds = obtain_dataset(rc);
  const Tiler tiler{rc.model.input_tile, rc.model.output_tile};
  const TileSet tiles = make_tile_set(ds.train, tiler);

  std::optional<Checkpoint> start;
  if (resume) {
    start = load_checkpoint(fs::path(c.out_dir) / "checkpoint");
    if (to_json(start->net.config()) != to_json(rc.model)) {
      throw Error(ErrorKind::Config, "checkpoint model config differs from the run config");
    }
  } else {
    const std::vector<Tensor> imgs = images_of(ds.train);
    SegNet net = SegNet::initialize(rc.model, imgs, rc.model.seed);
    start = Checkpoint{net, AdamState::zeros_like(net.parameters()), 0, rc.train};
  }
  TrainOptions opt;
  opt.out_dir = c.out_dir;
  opt.on_log = [](const MetricsRow& r) { std::cerr << format_metrics_row(r) << "\n"; };
  const Checkpoint done = train(std::move(*start), tiles, rc.train, opt);
  std::cout << (fs::path(c.out_dir) / "checkpoint").string() << " step " << done.step << "\n";
  return kExitOk;
}

int cmd_eval(const Common& c, const std::string& ckpt) {
  const RunConfig rc = load_config(c);
  prepare_out_dir(c.out_dir);
  const Checkpoint cp = load_checkpoint(checkpoint_path(c, ckpt));
  nlohmann::json resolved = to_json(rc);
  resolved["model"] = to_json(cp.net.config());
  write_json(fs::path(c.out_dir) / "config.eval.json", resolved);
  const Dataset ds = obtain_dataset(rc);
  std::vector<Tensor> preds, labels;
  for (const SyntheticScan& s : ds.val) {
    preds.push_back(predict_scan(cp.net, s.image, rc.train.threads).classes);
    labels.push_back(s.labels);
  }
  nlohmann::json out = to_json(segmentation_dice(preds, labels, cp.net.config().num_classes));
  out["split"] = "val";
  out["scans"] = ds.val.size();
  out["checkpoint_step"] = cp.step;
  write_json(fs::path(c.out_dir) / "eval.json", out);
  std::cout << out.dump(2) << "\n";
  return kExitOk;
}

int cmd_ood(const Common& c, const std::string& ckpt, bool png) {
  const RunConfig rc = load_config(c);
  prepare_out_dir(c.out_dir);
  const Checkpoint cp = load_checkpoint(checkpoint_path(c, ckpt));
  nlohmann::json resolved = to_json(rc);
  resolved["model"] = to_json(cp.net.config());
  write_json(fs::path(c.out_dir) / "config.ood.json", resolved);
  const Dataset ds = obtain_dataset(rc);
  if (ds.ood.empty()) throw Error(ErrorKind::EmptyInput, "empty OOD split");

  const fs::path maps = fs::path(c.out_dir) / "heatmaps";
  fs::create_directories(maps / "val");
  fs::create_directories(maps / "ood");
  std::vector<Tensor> in_maps, ood_maps, masks;
  for (std::size_t i = 0; i < ds.val.size(); ++i) {
    in_maps.push_back(heatmap(cp.net, ds.val[i].image, rc.ood.mode, rc.train.threads));
    char name[32];
    std::snprintf(name, sizeof(name), "%04zu", i);
    write_array(maps / "val" / (std::string(name) + ".bin"), in_maps.back());
  }
  for (std::size_t i = 0; i < ds.ood.size(); ++i) {
    ood_maps.push_back(heatmap(cp.net, ds.ood[i].image, rc.ood.mode, rc.train.threads));
    masks.push_back(ds.ood[i].anomaly_mask);
    char name[32];
    std::snprintf(name, sizeof(name), "%04zu", i);
    write_array(maps / "ood" / (std::string(name) + ".bin"), ood_maps.back());
  }
  const OodReport report = ood_report(in_maps, ood_maps, masks, rc.ood.fpr_levels, rc.ood.mode);
  if (png || rc.ood.png) {
    const double tau = report.levels.back().tau;
    for (std::size_t i = 0; i < ood_maps.size(); ++i) {
      char name[32];
      std::snprintf(name, sizeof(name), "%04zu", i);
      write_png_autoscale(maps / "ood" / (std::string(name) + ".png"), ood_maps[i]);
      write_png_gray(maps / "ood" / (std::string(name) + ".mask.png"), ood_mask(ood_maps[i], tau), 0.0, 1.0);
      write_png_gray(maps / "ood" / (std::string(name) + ".truth.png"), masks[i], 0.0, 1.0);
    }
  }
  nlohmann::json out = to_json(report);
  out["checkpoint_step"] = cp.step;
  write_json(fs::path(c.out_dir) / "ood.json", out);
  std::cout << out["levels"].dump(2) << "\n";
  return kExitOk;
}

int cmd_verify(const Common& c, const std::string& ckpt, bool require_lipschitz, VerifyOptions opts) {
  const RunConfig rc = load_config(c);
  prepare_out_dir(c.out_dir);
  opts.seed = rc.seed;
  opts.require_lipschitz = require_lipschitz;
  std::optional<SegNet> net;
  if (!ckpt.empty()) {
    net = load_checkpoint(ckpt).net;
  } else {
    DatasetConfig dc = rc.data;
    const std::vector<Tensor> imgs = images_of(make_dataset(dc).train);
    net = SegNet::initialize(rc.model, imgs, rc.model.seed);
  }
  nlohmann::json resolved = to_json(rc);
  resolved["model"] = to_json(net->config());
  write_json(fs::path(c.out_dir) / "config.verify.json", resolved);
  const std::vector<SuiteResult> suites = verify_model(*net, opts);
  const nlohmann::json out = to_json(suites);
  write_json(fs::path(c.out_dir) / "verify.json", out);
  for (const SuiteResult& s : suites) {
    std::cout << (s.passed ? "PASS " : "FAIL ") << s.name << "\n";
    if (!s.passed) std::cout << "  " << s.detail.dump() << "\n";
  }
  return out["passed"].get<bool>() ? kExitOk : kExitNumerical;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Distributional GP segmentation networks"};
  app.require_subcommand(1);
  Common common;
  std::string ckpt;
  bool resume = false, png = false, require_lipschitz = false;
  std::optional<std::size_t> steps;
  VerifyOptions vopts;

  auto* gen = app.add_subcommand("gen-data", "generate the synthetic dataset");
  add_common(gen, common);
  auto* tr = app.add_subcommand("train", "train a model");
  add_common(tr, common);
  tr->add_flag("--resume", resume, "continue from <out-dir>/checkpoint");
  tr->add_option("--steps", steps, "override train.steps");
  auto* ev = app.add_subcommand("eval", "per-class Dice on the validation split");
  add_common(ev, common);
  ev->add_option("--checkpoint", ckpt, "checkpoint directory (default <out-dir>/checkpoint)");
  auto* od = app.add_subcommand("ood", "OOD report at the configured FPR levels");
  add_common(od, common);
  od->add_option("--checkpoint", ckpt, "checkpoint directory (default <out-dir>/checkpoint)");
  od->add_flag("--png", png, "also write PNG heatmaps and masks");
  auto* ve = app.add_subcommand("verify", "property suites on a checkpoint or a fresh model");
  add_common(ve, common);
  ve->add_option("--checkpoint", ckpt, "checkpoint directory (default: fresh init from config)");
  ve->add_flag("--require-lipschitz", require_lipschitz, "report unconstrained affine layers as violations");
  ve->add_option("--prop1-trials", vopts.prop1_trials);
  ve->add_option("--prop2-trials", vopts.prop2_trials);
  ve->add_option("--axiom-triples", vopts.axiom_triples);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (gen->parsed()) return cmd_gen_data(common);
    if (tr->parsed()) return cmd_train(common, resume, steps);
    if (ev->parsed()) return cmd_eval(common, ckpt);
    if (od->parsed()) return cmd_ood(common, ckpt, png);
    return cmd_verify(common, ckpt, require_lipschitz, vopts);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code(e.kind());
  } catch (const fs::filesystem_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitIo;
  }
}
