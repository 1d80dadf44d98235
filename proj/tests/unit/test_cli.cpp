#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <sys/wait.h>

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>

#include "distgp/array_io.hpp"
#include "distgp/error.hpp"
#include "distgp/run_config.hpp"

using namespace distgp;
namespace fs = std::filesystem;

namespace {

const fs::path kRoot = fs::temp_directory_path() / "distgp_cli_test";
const std::string kSmall = " --set data.n_train=3 data.n_val=2 data.n_ood=2 model.num_inducing=8";

struct Run {
  int code;
  std::string out;
  std::string err;
};

Run cli(const std::string& args, const std::string& env = "") {
  const fs::path out = kRoot / "stdout.txt", err = kRoot / "stderr.txt";
  const std::string cmd = env + " " + DISTGP_CLI + " " + args + " >" + out.string() + " 2>" + err.string();
  const int status = std::system(cmd.c_str());
  return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, read_file(out), read_file(err)};
}

void write(const fs::path& p, const std::string& text) {
  std::ofstream(p) << text;
}

struct Fixture {
  Fixture() {
    fs::remove_all(kRoot);
    fs::create_directories(kRoot);
  }
};

}  // namespace

TEST_CASE("overrides, seeds and unknown keys in the run config") {
  nlohmann::json j = nlohmann::json::object();
  apply_override(j, "model.num_inducing=32");
  apply_override(j, "ood.mode=entropy");
  apply_override(j, "seed=7");
  CHECK(j["model"]["num_inducing"] == 32);
  CHECK(j["ood"]["mode"] == "entropy");
  RunConfig rc = resolve_run_config(j);
  CHECK(rc.model.num_inducing == 32);
  CHECK(rc.ood.mode == HeatmapMode::Entropy);
  CHECK(rc.data.seed == 7);
  CHECK(rc.model.seed == 7);
  CHECK(rc.train.seed == 7);

  apply_override(j, "train.seed=3");
  rc = resolve_run_config(j);
  CHECK(rc.train.seed == 3);
  CHECK(rc.model.seed == 7);
  rc = resolve_run_config(j, 11);
  CHECK(rc.train.seed == 11);
  CHECK(rc.data.seed == 11);
  CHECK(to_json(resolve_run_config(to_json(rc))) == to_json(rc));

  CHECK_THROWS_AS(apply_override(j, "novalue"), Error);
  CHECK_THROWS_AS(apply_override(j, "seed.x=1"), Error);
  nlohmann::json bad = {{"modle", nlohmann::json::object()}};
  CHECK_THROWS_AS(resolve_run_config(bad), Error);
  bad = {{"ood", {{"fpr_levels", {0.0}}}}};
  CHECK_THROWS_AS(resolve_run_config(bad), Error);
}

TEST_CASE("malformed JSON reports line and column") {
  try {
    parse_config_text("{\n  \"a\": 1,\n  \"b\": ]\n}", "cfg.json");
    FAIL("expected a parse error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::Config);
    CHECK(std::string(e.what()).find("cfg.json:3:8") != std::string::npos);
  }
}

TEST_CASE_FIXTURE(Fixture, "gen-data creates its directory and writes the reference split sizes") {
  const fs::path out = kRoot / "nested" / "gen";
  const Run r = cli("gen-data --out-dir " + out.string());
  REQUIRE(r.code == 0);
  CHECK(r.out.find("index.json") != std::string::npos);
  const auto index = nlohmann::json::parse(read_file(out / "data" / "index.json"));
  std::size_t scans = 0;
  for (const char* split : {"train", "val", "ood"}) {
    for (const auto& e : fs::directory_iterator(out / "data" / split)) scans += e.path().string().ends_with(".image.bin");
  }
  CHECK(scans == 300);
  CHECK(fs::exists(out / "config.gen-data.json"));
  (void)index;
}

TEST_CASE_FIXTURE(Fixture, "config and I/O failures map to exit codes 2 and 3") {
  write(kRoot / "bad.json", "{\"model\": {\"num_inducing\": 8,}}");
  Run r = cli("train --config " + (kRoot / "bad.json").string() + " --out-dir " + (kRoot / "o").string());
  CHECK(r.code == 2);
  CHECK(r.err.find("bad.json:1:") != std::string::npos);

  write(kRoot / "unknown.json", "{\"train\": {\"lr\": 0.1}}");
  r = cli("train --config " + (kRoot / "unknown.json").string() + " --out-dir " + (kRoot / "o").string());
  CHECK(r.code == 2);
  CHECK(r.err.find("lr") != std::string::npos);

  r = cli("ood --out-dir " + (kRoot / "o").string() + kSmall + " data.n_ood=0");
  CHECK(r.code == 2);
  r = cli("train --config " + (kRoot / "absent.json").string() + " --out-dir " + (kRoot / "o").string());
  CHECK(r.code == 3);
  r = cli("eval --out-dir " + (kRoot / "o").string() + " --checkpoint " + (kRoot / "none").string() + kSmall);
  CHECK(r.code == 3);
  r = cli("train --out-dir " + (kRoot / "o").string(), "DISTGP_SEED=abc");
  CHECK(r.code == 2);
  r = cli("frobnicate");
  CHECK(r.code == 2);
}

TEST_CASE_FIXTURE(Fixture, "train smoke test, resume numbering, eval, ood and verify") {
  const std::string out = (kRoot / "run").string();
  const auto t0 = std::chrono::steady_clock::now();
  Run r = cli("train --steps 1 --out-dir " + out + " --set data.n_train=3 data.n_val=2 data.n_ood=2");
  CHECK(r.code == 0);
  CHECK(std::chrono::steady_clock::now() - t0 < std::chrono::seconds(60));

  r = cli("train --steps 3 --out-dir " + out + kSmall + " train.log_every=1", "DISTGP_SEED=5");
  REQUIRE(r.code == 0);
  auto resolved = nlohmann::json::parse(read_file(fs::path(out) / "config.train.json"));
  CHECK(resolved["train"]["seed"] == 5);
  CHECK(resolved["model"]["num_inducing"] == 8);

  r = cli("train --steps 5 --resume --out-dir " + out + kSmall + " train.log_every=1", "DISTGP_SEED=5");
  REQUIRE(r.code == 0);
  const std::string log = read_file(fs::path(out) / "metrics.csv");
  for (const char* row : {"\n0,", "\n1,", "\n2,", "\n3,", "\n4,"}) CHECK(log.find(row) != std::string::npos);
  CHECK(std::count(log.begin(), log.end(), '\n') == 6);

  r = cli("eval --out-dir " + out + kSmall, "DISTGP_SEED=5");
  REQUIRE(r.code == 0);
  const auto eval = nlohmann::json::parse(read_file(fs::path(out) / "eval.json"));
  CHECK(eval["checkpoint_step"] == 5);
  for (const auto& c : eval["per_class"]) CHECK(c["dice"].get<double>() < 0.6);

  r = cli("ood --png --out-dir " + out + kSmall, "DISTGP_SEED=5");
  REQUIRE(r.code == 0);
  const auto ood = nlohmann::json::parse(read_file(fs::path(out) / "ood.json"));
  REQUIRE(ood["levels"].size() == 4);
  for (std::size_t i = 1; i < 4; ++i) CHECK(ood["levels"][i]["tau"] <= ood["levels"][i - 1]["tau"]);
  CHECK(fs::exists(fs::path(out) / "heatmaps" / "ood" / "0000.bin"));
  CHECK(fs::exists(fs::path(out) / "heatmaps" / "ood" / "0001.mask.png"));
  CHECK(read_array(fs::path(out) / "heatmaps" / "val" / "0001.bin").shape() == Tensor::Shape{64, 64});

  r = cli("verify --checkpoint " + out + "/checkpoint --out-dir " + out + kSmall + " --prop1-trials 2000");
  CHECK(r.code == 0);
  CHECK(r.out.find("FAIL") == std::string::npos);
}

TEST_CASE_FIXTURE(Fixture, "verify passes on a fresh model and flags unnormalized layers") {
  const std::string out = (kRoot / "verify").string();
  Run r = cli("verify --out-dir " + out + kSmall + " --prop1-trials 2000");
  CHECK(r.code == 0);
  r = cli("verify --require-lipschitz --out-dir " + out + kSmall + " model.lipschitz=false --prop1-trials 2000");
  CHECK(r.code == 4);
  CHECK(r.out.find("FAIL lipschitz_normalization") != std::string::npos);
  const auto report = nlohmann::json::parse(read_file(fs::path(out) / "verify.json"));
  CHECK(report["passed"] == false);
  CHECK(report["suites"]["prop2"]["passed"] == true);
}
