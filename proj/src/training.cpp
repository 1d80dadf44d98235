#include "distgp/training.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <random>
#include <sstream>

#include "distgp/array_io.hpp"
#include "distgp/error.hpp"

namespace distgp {

namespace fs = std::filesystem;

void TrainConfig::validate() const {
  auto fail = [](const std::string& m) { throw Error(ErrorKind::Config, m); };
  if (steps < 1) fail("train.steps must be >= 1");
  if (batch_size < 1) fail("train.batch_size must be >= 1");
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) fail("train.learning_rate must be > 0");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) fail("adam betas must be in [0, 1)");
  if (!(epsilon > 0.0)) fail("train.epsilon must be > 0");
  if (log_every < 1) fail("train.log_every must be >= 1");
  if (precision != "f64") fail("train.precision '" + precision + "' not supported (only f64)");
  if (!(kl_weight >= 0.0) || !std::isfinite(kl_weight)) fail("train.kl_weight must be >= 0");
  if (threads < 1) fail("train.threads must be >= 1");
}

nlohmann::json to_json(const TrainConfig& c) {
  return {{"steps", c.steps},
          {"batch_size", c.batch_size},
          {"learning_rate", c.learning_rate},
          {"beta1", c.beta1},
          {"beta2", c.beta2},
          {"epsilon", c.epsilon},
          {"checkpoint_every", c.checkpoint_every},
          {"log_every", c.log_every},
          {"seed", c.seed},
          {"precision", c.precision},
          {"kl_weight", c.kl_weight},
          {"threads", c.threads},
          {"record_wall_time", c.record_wall_time}};
}

TrainConfig train_config_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw Error(ErrorKind::Config, "train config must be an object");
  TrainConfig c;
  try {
    for (const auto& [key, value] : j.items()) {
      if (key == "steps") c.steps = value.get<std::size_t>();
      else if (key == "batch_size") c.batch_size = value.get<std::size_t>();
      else if (key == "learning_rate") c.learning_rate = value.get<double>();
      else if (key == "beta1") c.beta1 = value.get<double>();
      else if (key == "beta2") c.beta2 = value.get<double>();
      else if (key == "epsilon") c.epsilon = value.get<double>();
      else if (key == "checkpoint_every") c.checkpoint_every = value.get<std::size_t>();
      else if (key == "log_every") c.log_every = value.get<std::size_t>();
      else if (key == "seed") c.seed = value.get<std::uint64_t>();
      else if (key == "precision") c.precision = value.get<std::string>();
      else if (key == "kl_weight") c.kl_weight = value.get<double>();
      else if (key == "threads") c.threads = value.get<std::size_t>();
      else if (key == "record_wall_time") c.record_wall_time = value.get<bool>();
      else throw Error(ErrorKind::Config, "unknown train key '" + key + "'");
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::Config, std::string("train config: ") + e.what());
  }
  return c;
}

AdamState AdamState::zeros_like(const ParameterSet& params) {
  AdamState s;
  for (const auto& [name, t] : params) {
    s.m.emplace(name, Tensor(t.shape()));
    s.v.emplace(name, Tensor(t.shape()));
  }
  return s;
}

void adam_step(ParameterSet& params, const ParameterSet& grads, AdamState& state, double lr, double beta1,
               double beta2, double epsilon) {
  for (const auto& [name, p] : params) {
    const auto g = grads.find(name);
    if (g == grads.end()) throw Error(ErrorKind::ShapeMismatch, "no gradient for parameter " + name);
    if (g->second.shape() != p.shape() || state.m.at(name).shape() != p.shape()) {
      throw Error(ErrorKind::ShapeMismatch, "gradient shape for " + name);
    }
    if (!g->second.all_finite()) throw Error(ErrorKind::NonFiniteGradient, "parameter " + name);
  }
  const std::size_t t = state.step + 1;
  const double c1 = 1.0 - std::pow(beta1, static_cast<double>(t));
  const double c2 = 1.0 - std::pow(beta2, static_cast<double>(t));
  ParameterSet new_p, new_m, new_v;
  for (const auto& [name, p] : params) {
    const Tensor& g = grads.at(name);
    Tensor m = state.m.at(name), v = state.v.at(name), x = p;
    for (std::size_t i = 0; i < x.size(); ++i) {
      m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
      v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
      x[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + epsilon);
    }
    if (!x.all_finite()) throw Error(ErrorKind::NonFinite, "update of parameter " + name);
    new_p.emplace(name, std::move(x));
    new_m.emplace(name, std::move(m));
    new_v.emplace(name, std::move(v));
  }
  params = std::move(new_p);
  state.m = std::move(new_m);
  state.v = std::move(new_v);
  state.step = t;
}

TileSet make_tile_set(std::span<const SyntheticScan> scans, const Tiler& tiler) {
  if (scans.empty()) throw Error(ErrorKind::EmptyInput, "no training scans");
  TileSet set;
  for (const SyntheticScan& s : scans) {
    const TileGrid grid = plan_tiles(s.image.dim(0), s.image.dim(1), tiler);
    for (std::size_t t = 0; t < grid.count(); ++t) {
      set.tiles.push_back(extract_tile(s.image, grid, t));
      set.labels.push_back(extract_label_tile(s.labels, grid, t, kIgnoreLabel));
    }
  }
  return set;
}

std::vector<std::size_t> minibatch_indices(std::uint64_t seed, std::size_t step, std::size_t dataset_size,
                                           std::size_t batch_size) {
  if (dataset_size == 0) throw Error(ErrorKind::EmptyInput, "empty training set");
  std::vector<std::size_t> idx;
  if (batch_size >= dataset_size) {
    for (std::size_t i = 0; i < dataset_size; ++i) idx.push_back(i);
    return idx;
  }
  // Partial Fisher-Yates on raw 64-bit draws (portable, unlike std distributions).
  std::mt19937_64 rng(mix_seed(mix_seed(seed, 0x747261696eULL), step));
  std::vector<std::size_t> perm(dataset_size);
  for (std::size_t i = 0; i < dataset_size; ++i) perm[i] = i;
  for (std::size_t i = 0; i < batch_size; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(rng() % (dataset_size - i));
    std::swap(perm[i], perm[j]);
    idx.push_back(perm[i]);
  }
  return idx;
}

std::string format_metrics_row(const MetricsRow& row) {
  char buf[160];
  std::snprintf(buf, sizeof(buf), "%zu,%.17g,%.17g,%.17g,%.3f", row.step, row.terms.elbo, row.terms.exp_log_lik,
                row.terms.kl_total, row.wall_ms);
  return buf;
}

namespace {

std::string file_name(const std::string& param) { return param + ".bin"; }

void write_set(const ParameterSet& set, const fs::path& dir) {
  fs::create_directories(dir);
  for (const auto& [name, t] : set) write_array(dir / file_name(name), t, DType::F64);
}

ParameterSet read_set(const ParameterSet& like, const fs::path& dir) {
  ParameterSet out;
  for (const auto& [name, t] : like) {
    Tensor v = read_array(dir / file_name(name));
    if (v.shape() != t.shape()) {
      throw Error(ErrorKind::Config, "checkpoint " + (dir / file_name(name)).string() + " has shape " +
                                         shape_string(v.shape()) + ", expected " + shape_string(t.shape()));
    }
    out.emplace(name, std::move(v));
  }
  return out;
}

}  // namespace

void save_checkpoint(const Checkpoint& ckpt, const fs::path& dir) {
  const fs::path tmp = dir.string() + ".tmp";
  const fs::path old = dir.string() + ".old";
  try {
    fs::remove_all(tmp);
    fs::create_directories(tmp);
    write_set(ckpt.net.parameters(), tmp / "params");
    write_set(ckpt.optimizer.m, tmp / "optimizer" / "m");
    write_set(ckpt.optimizer.v, tmp / "optimizer" / "v");

    nlohmann::json kernels = nlohmann::json::object();
    for (std::size_t i = 0; i < ckpt.net.layers().size(); ++i) {
      if (ckpt.net.layers()[i].kind == LayerKind::AffineMeasureConv) continue;
      const KernelParams k = ckpt.net.kernel_params(i);
      kernels[ckpt.net.layers()[i].name] = {{"variance", k.variance()}, {"lengthscale", k.lengthscale()}};
    }
    nlohmann::json params = nlohmann::json::object();
    for (const auto& [name, t] : ckpt.net.parameters()) params[name] = t.shape();
    const nlohmann::json manifest = {{"format_version", kCheckpointFormatVersion},
                                     {"step", ckpt.step},
                                     {"seed", ckpt.train.seed},
                                     {"optimizer_step", ckpt.optimizer.step},
                                     {"model", to_json(ckpt.net.config())},
                                     {"train", to_json(ckpt.train)},
                                     {"kernel_params", kernels},
                                     {"likelihood_beta", ckpt.net.beta()},
                                     {"parameters", params}};
    write_file_atomic(tmp / "manifest.json", manifest.dump(2) + "\n");
    fs::remove_all(old);
    if (fs::exists(dir)) fs::rename(dir, old);
    fs::rename(tmp, dir);
    fs::remove_all(old);
  } catch (const fs::filesystem_error& e) {
    throw Error(ErrorKind::Io, std::string("writing checkpoint: ") + e.what());
  }
}

Checkpoint load_checkpoint(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw Error(ErrorKind::Io, "no checkpoint directory " + dir.string());
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(read_file(dir / "manifest.json"));
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::Io, "checkpoint manifest: " + std::string(e.what()));
  }
  if (!manifest.contains("format_version") || manifest["format_version"] != kCheckpointFormatVersion) {
    throw Error(ErrorKind::Config, "checkpoint format version " +
                                       (manifest.contains("format_version") ? manifest["format_version"].dump()
                                                                            : std::string("missing")) +
                                       ", expected \"" + kCheckpointFormatVersion + "\"");
  }
  try {
    const SegNetConfig config = segnet_config_from_json(manifest.at("model"));
    const TrainConfig train = train_config_from_json(manifest.at("train"));
    const std::size_t step = manifest.at("step").get<std::size_t>();
    ParameterSet layout;
    for (const auto& [name, shape] : parameter_shapes(config)) layout.emplace(name, Tensor(shape));
    if (manifest.at("parameters").size() != layout.size()) {
      throw Error(ErrorKind::Config, "checkpoint parameter count does not match the architecture");
    }
    for (const auto& [name, shape] : manifest.at("parameters").items()) {
      if (!layout.count(name)) throw Error(ErrorKind::Config, "checkpoint has unknown parameter " + name);
      if (shape.get<Tensor::Shape>() != layout.at(name).shape()) {
        throw Error(ErrorKind::Config, "checkpoint parameter " + name + " shape mismatch");
      }
    }
    SegNet net(config, read_set(layout, dir / "params"));
    AdamState opt;
    opt.step = manifest.at("optimizer_step").get<std::size_t>();
    opt.m = read_set(layout, dir / "optimizer" / "m");
    opt.v = read_set(layout, dir / "optimizer" / "v");
    return {std::move(net), std::move(opt), step, train};
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::Config, "checkpoint manifest: " + std::string(e.what()));
  }
}

namespace {

// Rewrites metrics.csv keeping only rows logged before `step`, so a resumed run
// produces the same file as an uninterrupted one.
void truncate_metrics(const fs::path& path, std::size_t step) {
  std::string kept = std::string(kMetricsHeader) + "\n";
  if (step > 0 && fs::exists(path)) {
    std::istringstream in(read_file(path));
    std::string line;
    std::getline(in, line);
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      if (std::stoull(line.substr(0, line.find(','))) < step) kept += line + "\n";
    }
  }
  write_file_atomic(path, kept);
}

bool is_numerical(ErrorKind k) {
  return k == ErrorKind::NonFinite || k == ErrorKind::NotPositiveDefinite || k == ErrorKind::ZeroDiagonal;
}

}  // namespace

Checkpoint train(Checkpoint state, const TileSet& data, const TrainConfig& config, const TrainOptions& options) {
  config.validate();
  if (data.size() == 0) throw Error(ErrorKind::EmptyInput, "empty training set");
  state.train = config;
  std::ofstream log;
  fs::path ckpt_dir;
  if (options.out_dir) {
    fs::create_directories(*options.out_dir);
    const fs::path metrics = *options.out_dir / "metrics.csv";
    truncate_metrics(metrics, state.step);
    log.open(metrics, std::ios::app);
    if (!log) throw Error(ErrorKind::Io, "cannot open " + metrics.string());
    ckpt_dir = *options.out_dir / "checkpoint";
  }
  std::size_t last_saved = state.step;
  const auto t0 = std::chrono::steady_clock::now();

  std::vector<Tensor> tiles, labels;
  while (state.step < config.steps) {
    const std::size_t s = state.step;
    tiles.clear();
    labels.clear();
    for (std::size_t i : minibatch_indices(config.seed, s, data.size(), config.batch_size)) {
      tiles.push_back(data.tiles[i]);
      labels.push_back(data.labels[i]);
    }
    ElboGradient eg;
    try {
      eg = elbo_gradient(state.net, tiles, labels, data.size(), config.threads, kTrainJitter, config.kl_weight);
    } catch (const Error& e) {
      if (!is_numerical(e.kind())) throw;
      throw Error(ErrorKind::NonFiniteLoss, "step " + std::to_string(s) + ": " + e.what() +
                                                "; last good checkpoint at step " + std::to_string(last_saved));
    }
    if (!std::isfinite(eg.terms.elbo)) {
      throw Error(ErrorKind::NonFiniteLoss, "step " + std::to_string(s) + ": elbo " + std::to_string(eg.terms.elbo) +
                                                "; last good checkpoint at step " + std::to_string(last_saved));
    }
    if (s % config.log_every == 0 || s + 1 == config.steps) {
      MetricsRow row{s, eg.terms, 0.0};
      if (config.record_wall_time) {
        row.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
      }
      if (log) log << format_metrics_row(row) << '\n' << std::flush;
      if (options.on_log) options.on_log(row);
    }
    // Ascent on the ELBO = descent on its negation.
    for (auto& [name, g] : eg.grad) {
      for (double& x : g.data()) x = -x;
    }
    ParameterSet params = state.net.parameters();
    adam_step(params, eg.grad, state.optimizer, config.learning_rate, config.beta1, config.beta2, config.epsilon);
    state.net.set_parameters(std::move(params));
    state.step = s + 1;
    if (options.out_dir && config.checkpoint_every > 0 && state.step % config.checkpoint_every == 0) {
      save_checkpoint(state, ckpt_dir);
      last_saved = state.step;
    }
  }
  if (options.out_dir && last_saved != state.step) save_checkpoint(state, ckpt_dir);
  return state;
}

}  // namespace distgp
