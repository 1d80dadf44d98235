#include "distgp/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <random>

#include "distgp/array_io.hpp"
#include "distgp/error.hpp"

namespace distgp {

namespace {

constexpr std::size_t kNumWaves = 20;
constexpr double kMaxCycles = 6.0;
constexpr double kMinAnomalyFraction = 0.01;
constexpr double kMaxAnomalyFraction = 0.15;
constexpr int kMaxAnomalyAttempts = 1000;
constexpr std::uint64_t kAnomalyStream = 0xA11E5EEDULL;

double class_mean(std::size_t cls, std::size_t num_classes) {
  return -0.5 + static_cast<double>(cls) / static_cast<double>(num_classes - 1);
}

}  // namespace

bool SyntheticScan::has_anomaly() const {
  return std::any_of(anomaly_mask.data().begin(), anomaly_mask.data().end(), [](double v) { return v != 0.0; });
}

std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
  std::uint64_t z = a + 0x9E3779B97F4A7C15ULL * (b + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

SyntheticScan gen_scan(std::uint64_t seed, std::size_t size, std::size_t num_classes, double noise_sd) {
  if (size < 1 || num_classes < 2) throw Error(ErrorKind::InvalidArgument, "gen_scan needs size >= 1, classes >= 2");
  std::mt19937_64 rng(mix_seed(seed, 0));
  std::uniform_real_distribution<double> freq(-kMaxCycles, kMaxCycles);
  std::uniform_real_distribution<double> phase(0.0, 2.0 * std::numbers::pi);
  std::normal_distribution<double> normal(0.0, 1.0);

  struct Wave {
    double fx, fy, phase, amp;
  };
  std::vector<Wave> waves;
  while (waves.size() < kNumWaves) {
    const double fx = freq(rng), fy = freq(rng);
    const double f = std::hypot(fx, fy);
    if (f > kMaxCycles || f < 0.5) continue;
    waves.push_back({fx, fy, phase(rng), normal(rng) / (1.0 + f)});
  }
  const std::size_t n = size * size;
  std::vector<double> field(n);
  const double inv = 2.0 * std::numbers::pi / static_cast<double>(size);
  for (std::size_t y = 0; y < size; ++y) {
    for (std::size_t x = 0; x < size; ++x) {
      double v = 0.0;
      for (const Wave& w : waves) v += w.amp * std::cos(inv * (w.fx * x + w.fy * y) + w.phase);
      field[y * size + x] = v;
    }
  }
  std::vector<double> sorted = field;
  std::sort(sorted.begin(), sorted.end());
  std::vector<double> cuts;
  for (std::size_t k = 1; k < num_classes; ++k) cuts.push_back(sorted[k * n / num_classes]);

  SyntheticScan scan;
  scan.seed = seed;
  scan.image = Tensor({size, size, 1});
  scan.labels = Tensor({size, size});
  scan.anomaly_mask = Tensor({size, size});
  for (std::size_t i = 0; i < n; ++i) {
    const auto cls = static_cast<std::size_t>(std::upper_bound(cuts.begin(), cuts.end(), field[i]) - cuts.begin());
    scan.labels[i] = static_cast<double>(cls);
    const double noise = noise_sd > 0.0 ? noise_sd * normal(rng) : 0.0;
    scan.image[i] = std::clamp(class_mean(cls, num_classes) + noise, -1.0, 1.0);
  }
  return scan;
}

SyntheticScan inject_anomaly(const SyntheticScan& scan, std::uint64_t seed, double noise_sd) {
  const std::size_t h = scan.labels.dim(0), w = scan.labels.dim(1);
  std::mt19937_64 rng(mix_seed(seed, kAnomalyStream));
  std::uniform_int_distribution<int> count(1, 3);
  std::uniform_real_distribution<double> radius(4.0, 12.0);
  std::uniform_real_distribution<double> cy(0.0, static_cast<double>(h)), cx(0.0, static_cast<double>(w));
  std::uniform_real_distribution<double> angle(0.0, std::numbers::pi);
  std::uniform_real_distribution<double> level(0.8, 1.0);
  std::normal_distribution<double> normal(0.0, 1.0);

  for (int attempt = 0; attempt < kMaxAnomalyAttempts; ++attempt) {
    Tensor base({h, w});  // 0 = untouched, otherwise painted base intensity
    const int k = count(rng);
    for (int e = 0; e < k; ++e) {
      const double a = radius(rng), b = radius(rng), y0 = cy(rng), x0 = cx(rng), th = angle(rng), lv = level(rng);
      const double c = std::cos(th), s = std::sin(th);
      for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t x = 0; x < w; ++x) {
          const double dy = static_cast<double>(y) - y0, dx = static_cast<double>(x) - x0;
          const double u = (c * dx + s * dy) / a, v = (-s * dx + c * dy) / b;
          if (u * u + v * v <= 1.0) base(y, x) = lv;
        }
      }
    }
    std::size_t painted = 0;
    for (double v : base.data()) painted += v != 0.0;
    const double frac = static_cast<double>(painted) / static_cast<double>(h * w);
    if (frac < kMinAnomalyFraction || frac > kMaxAnomalyFraction) continue;

    SyntheticScan out = scan;
    for (std::size_t i = 0; i < h * w; ++i) {
      if (base[i] == 0.0) continue;
      const double noise = noise_sd > 0.0 ? noise_sd * normal(rng) : 0.0;
      out.image[i] = std::clamp(base[i] + noise, -1.0, 1.0);
      out.labels[i] = kIgnoreLabel;
      out.anomaly_mask[i] = 1.0;
    }
    return out;
  }
  throw Error(ErrorKind::InvalidArgument, "could not place an anomaly covering 1-15% of a " + std::to_string(h) +
                                              "x" + std::to_string(w) + " scan");
}

// ---------------------------------------------------------------------------
// Dataset

namespace {

const char* const kSplits[] = {"train", "val", "ood"};

std::size_t split_count(const DatasetConfig& c, const std::string& split) {
  if (split == "train") return c.n_train;
  if (split == "val") return c.n_val;
  return c.n_ood;
}

std::vector<SyntheticScan>& split_scans(Dataset& d, const std::string& split) {
  if (split == "train") return d.train;
  if (split == "val") return d.val;
  return d.ood;
}

const std::vector<SyntheticScan>& split_scans(const Dataset& d, const std::string& split) {
  return split_scans(const_cast<Dataset&>(d), split);
}

}  // namespace

std::uint64_t DatasetConfig::split_start(const std::string& split) const {
  // Default ranges sit 2^20 seeds apart inside a block chosen by the master seed.
  const std::uint64_t block = mix_seed(seed, 0x5EED) & 0x0000FFFFFFF00000ULL;
  if (split == "train") return train_seed_start.value_or(block);
  if (split == "val") return val_seed_start.value_or(block + (1ULL << 20));
  if (split == "ood") return ood_seed_start.value_or(block + (2ULL << 20));
  throw Error(ErrorKind::InvalidArgument, "unknown split " + split);
}

void DatasetConfig::validate() const {
  auto fail = [](const std::string& msg) { throw Error(ErrorKind::Config, msg); };
  if (n_train < 1) fail("n_train must be >= 1");
  if (n_val < 1) fail("n_val must be >= 1");
  if (n_ood < 1) fail("n_ood must be >= 1 (empty OOD split)");
  if (size < 48) fail("scan size must be >= 48");
  if (num_classes < 2) fail("num_classes must be >= 2");
  if (!(noise_sd >= 0.0)) fail("noise_sd must be >= 0");
  for (int i = 0; i < 3; ++i) {
    for (int j = i + 1; j < 3; ++j) {
      const std::uint64_t a0 = split_start(kSplits[i]), a1 = a0 + split_count(*this, kSplits[i]);
      const std::uint64_t b0 = split_start(kSplits[j]), b1 = b0 + split_count(*this, kSplits[j]);
      if (a0 < b1 && b0 < a1) {
        fail(std::string("seed ranges of splits '") + kSplits[i] + "' and '" + kSplits[j] + "' overlap");
      }
    }
  }
}

nlohmann::json to_json(const DatasetConfig& c) {
  nlohmann::json j{{"seed", c.seed},   {"n_train", c.n_train},         {"n_val", c.n_val},
                   {"n_ood", c.n_ood}, {"size", c.size},               {"num_classes", c.num_classes},
                   {"noise_sd", c.noise_sd}};
  j["train_seed_start"] = c.train_seed_start ? nlohmann::json(*c.train_seed_start) : nlohmann::json(nullptr);
  j["val_seed_start"] = c.val_seed_start ? nlohmann::json(*c.val_seed_start) : nlohmann::json(nullptr);
  j["ood_seed_start"] = c.ood_seed_start ? nlohmann::json(*c.ood_seed_start) : nlohmann::json(nullptr);
  return j;
}

DatasetConfig dataset_config_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw Error(ErrorKind::Config, "data config must be an object");
  DatasetConfig c;
  const nlohmann::json defaults = to_json(c);
  for (const auto& [key, value] : j.items()) {
    if (!defaults.contains(key)) throw Error(ErrorKind::Config, "unknown data key '" + key + "'");
  }
  try {
    auto get = [&](const char* key, auto& field) {
      if (j.contains(key)) j.at(key).get_to(field);
    };
    auto get_opt = [&](const char* key, std::optional<std::uint64_t>& field) {
      if (j.contains(key) && !j.at(key).is_null()) field = j.at(key).get<std::uint64_t>();
    };
    get("seed", c.seed);
    get("n_train", c.n_train);
    get("n_val", c.n_val);
    get("n_ood", c.n_ood);
    get("size", c.size);
    get("num_classes", c.num_classes);
    get("noise_sd", c.noise_sd);
    get_opt("train_seed_start", c.train_seed_start);
    get_opt("val_seed_start", c.val_seed_start);
    get_opt("ood_seed_start", c.ood_seed_start);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::Config, std::string("data config: ") + e.what());
  }
  c.validate();
  return c;
}

Dataset make_dataset(const DatasetConfig& config) {
  config.validate();
  Dataset d;
  d.config = config;
  for (const char* split : kSplits) {
    const std::uint64_t start = config.split_start(split);
    auto& scans = split_scans(d, split);
    for (std::size_t i = 0; i < split_count(config, split); ++i) {
      SyntheticScan s = gen_scan(start + i, config.size, config.num_classes, config.noise_sd);
      if (std::string(split) == "ood") s = inject_anomaly(s, start + i, config.noise_sd);
      scans.push_back(std::move(s));
    }
  }
  return d;
}

std::filesystem::path save_dataset(const Dataset& dataset, const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  try {
    fs::create_directories(dir);
  } catch (const fs::filesystem_error& e) {
    throw Error(ErrorKind::Io, e.what());
  }
  nlohmann::json index{{"generator_version", kGeneratorVersion}, {"config", to_json(dataset.config)}};
  for (const char* split : kSplits) {
    const auto& scans = split_scans(dataset, split);
    nlohmann::json entries = nlohmann::json::array();
    const fs::path sub = dir / split;
    try {
      fs::create_directories(sub);
    } catch (const fs::filesystem_error& e) {
      throw Error(ErrorKind::Io, e.what());
    }
    for (std::size_t i = 0; i < scans.size(); ++i) {
      char stem[32];
      std::snprintf(stem, sizeof stem, "%04zu", i);
      const std::string base = std::string(split) + "/" + stem;
      write_array(dir / (base + ".image.bin"), scans[i].image);
      write_array(dir / (base + ".labels.bin"), scans[i].labels);
      write_array(dir / (base + ".anomaly.bin"), scans[i].anomaly_mask);
      entries.push_back({{"seed", scans[i].seed},
                         {"image", base + ".image.bin"},
                         {"labels", base + ".labels.bin"},
                         {"anomaly_mask", base + ".anomaly.bin"}});
    }
    index["splits"][split] = {{"seed_start", dataset.config.split_start(split)}, {"scans", entries}};
  }
  const fs::path path = dir / "index.json";
  write_file_atomic(path, index.dump(2) + "\n");
  return path;
}

Dataset load_dataset(const std::filesystem::path& dir) {
  nlohmann::json index;
  try {
    index = nlohmann::json::parse(read_file(dir / "index.json"));
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(ErrorKind::Io, "dataset index: " + std::string(e.what()));
  }
  if (index.value("generator_version", "") != kGeneratorVersion) {
    throw Error(ErrorKind::Io, "dataset generator version mismatch in " + (dir / "index.json").string());
  }
  Dataset d;
  try {
    d.config = dataset_config_from_json(index.at("config"));
    for (const char* split : kSplits) {
      auto& scans = split_scans(d, split);
      for (const auto& e : index.at("splits").at(split).at("scans")) {
        SyntheticScan s;
        s.seed = e.at("seed").get<std::uint64_t>();
        s.image = read_array(dir / e.at("image").get<std::string>());
        s.labels = read_array(dir / e.at("labels").get<std::string>());
        s.anomaly_mask = read_array(dir / e.at("anomaly_mask").get<std::string>());
        scans.push_back(std::move(s));
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::Io, "malformed dataset index: " + std::string(e.what()));
  }
  return d;
}

}  // namespace distgp
