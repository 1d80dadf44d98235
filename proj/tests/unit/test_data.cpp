#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <set>

#include "distgp/array_io.hpp"
#include "distgp/data.hpp"
#include "distgp/error.hpp"

using namespace distgp;
namespace fs = std::filesystem;

TEST_CASE("gen_scan is seeded, balanced and in range") {
  const SyntheticScan a = gen_scan(3, 64), b = gen_scan(3, 64), c = gen_scan(4, 64);
  CHECK(a.image.shape() == Tensor::Shape{64, 64, 1});
  CHECK(a.labels.shape() == Tensor::Shape{64, 64});
  CHECK(a.image.values() == b.image.values());
  CHECK(a.labels.values() == b.labels.values());
  CHECK(a.image.values() != c.image.values());
  CHECK_FALSE(a.has_anomaly());

  std::size_t counts[3] = {0, 0, 0};
  for (double l : a.labels.data()) {
    REQUIRE((l == 0.0 || l == 1.0 || l == 2.0));
    ++counts[static_cast<int>(l)];
  }
  // Equal-frequency cuts: every class gets a third of the pixels, up to ties.
  for (std::size_t k : counts) CHECK(std::abs(static_cast<double>(k) - 4096.0 / 3.0) <= 2.0);
  for (double v : a.image.data()) CHECK((v >= -1.0 && v <= 1.0));
}

TEST_CASE("class intensities are ordered with noise-free scans") {
  const SyntheticScan s = gen_scan(9, 48, 3, 0.0);
  for (std::size_t i = 0; i < s.labels.size(); ++i) CHECK(s.image[i] == -0.5 + 0.5 * s.labels[i]);
}

TEST_CASE("inject_anomaly paints bright ellipses covering 1-15% and unlabels them") {
  std::set<std::size_t> blob_sizes;
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    const SyntheticScan base = gen_scan(seed, 64);
    const SyntheticScan s = inject_anomaly(base, seed);
    std::size_t painted = 0;
    for (std::size_t i = 0; i < s.anomaly_mask.size(); ++i) {
      if (s.anomaly_mask[i] != 0.0) {
        ++painted;
        CHECK(s.labels[i] == kIgnoreLabel);
        CHECK(s.image[i] >= 0.8 - 0.6);
      } else {
        CHECK(s.labels[i] == base.labels[i]);
        CHECK(s.image[i] == base.image[i]);
      }
    }
    const double frac = static_cast<double>(painted) / 4096.0;
    CHECK(frac >= 0.01);
    CHECK(frac <= 0.15);
    CHECK(s.has_anomaly());
    blob_sizes.insert(painted);
  }
  CHECK(blob_sizes.size() > 20);
}

TEST_CASE("anomalies are brighter than any class mean") {
  double sum = 0.0;
  std::size_t n = 0;
  const SyntheticScan s = inject_anomaly(gen_scan(5, 64, 3, 0.0), 5, 0.0);
  for (std::size_t i = 0; i < s.image.size(); ++i) {
    if (s.anomaly_mask[i] == 0.0) continue;
    CHECK(s.image[i] >= 0.8);
    sum += s.image[i];
    ++n;
  }
  CHECK(sum / static_cast<double>(n) > 0.5);
}

TEST_CASE("dataset config validation") {
  DatasetConfig c;
  CHECK_NOTHROW(c.validate());
  c.n_ood = 0;
  CHECK_THROWS_AS(c.validate(), Error);
  c = DatasetConfig{};
  c.size = 40;
  CHECK_THROWS_AS(c.validate(), Error);
  c = DatasetConfig{};
  c.train_seed_start = 100;
  c.val_seed_start = 250;
  CHECK_THROWS_AS(c.validate(), Error);
  c.val_seed_start = 300;
  c.ood_seed_start = 1000;
  CHECK_NOTHROW(c.validate());

  nlohmann::json j = to_json(DatasetConfig{});
  CHECK(to_json(dataset_config_from_json(j)) == j);
  j["n_tset"] = 3;
  CHECK_THROWS_AS(dataset_config_from_json(j), Error);
}

TEST_CASE("make_dataset produces disjoint splits and only OOD scans carry anomalies") {
  DatasetConfig c;
  c.n_train = 5;
  c.n_val = 3;
  c.n_ood = 4;
  c.size = 48;
  const Dataset d = make_dataset(c);
  CHECK(d.train.size() == 5);
  CHECK(d.val.size() == 3);
  CHECK(d.ood.size() == 4);
  std::set<std::uint64_t> seeds;
  for (const auto* split : {&d.train, &d.val, &d.ood})
    for (const SyntheticScan& s : *split) seeds.insert(s.seed);
  CHECK(seeds.size() == 12);
  for (const SyntheticScan& s : d.train) CHECK_FALSE(s.has_anomaly());
  for (const SyntheticScan& s : d.val) CHECK_FALSE(s.has_anomaly());
  for (const SyntheticScan& s : d.ood) CHECK(s.has_anomaly());

  c.seed = 1;
  const Dataset e = make_dataset(c);
  CHECK(e.train[0].image.values() != d.train[0].image.values());
}

TEST_CASE("dataset save/load round trip is exact") {
  DatasetConfig c;
  c.n_train = 2;
  c.n_val = 1;
  c.n_ood = 1;
  c.size = 48;
  const Dataset d = make_dataset(c);
  const fs::path dir = fs::temp_directory_path() / "distgp_test_data";
  fs::remove_all(dir);
  const fs::path index = save_dataset(d, dir);
  CHECK(fs::exists(index));
  const Dataset r = load_dataset(dir);
  CHECK(to_json(r.config) == to_json(d.config));
  REQUIRE(r.ood.size() == 1);
  CHECK(r.train[1].image.values() == d.train[1].image.values());
  CHECK(r.ood[0].labels.values() == d.ood[0].labels.values());
  CHECK(r.ood[0].anomaly_mask.values() == d.ood[0].anomaly_mask.values());
  CHECK(r.ood[0].seed == d.ood[0].seed);
  fs::remove_all(dir);
  CHECK_THROWS_AS(load_dataset(dir), Error);
}

TEST_CASE("mix_seed separates nearby inputs") {
  std::set<std::uint64_t> out;
  for (std::uint64_t a = 0; a < 50; ++a)
    for (std::uint64_t b = 0; b < 50; ++b) out.insert(mix_seed(a, b));
  CHECK(out.size() == 2500);
}
