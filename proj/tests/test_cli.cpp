#include <doctest.h>

#include <unistd.h>

#include <atomic>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "cli/commands.hpp"
#include "ninode/io.hpp"

namespace fs = std::filesystem;
using namespace ninode;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    static std::atomic<int> counter{0};
    path = fs::temp_directory_path() / ("ninode_cli_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string operator/(const std::string& name) const { return (path / name).string(); }
};

const char* kSmall = R"({"plant": {"eta_samples": 2000},
  "controller": {"hidden": 8, "head_hidden": 8, "head_layers": 1},
  "train": {"steps": 20, "epochs": 2, "window": 10},
  "simulate": {"steps": 200},
  "verify": {"samples": 200, "pair_samples": 200, "steps": 200, "gradient_steps": 3},
  "sweep": {"factors": [0.5, 1]}})";

int invoke(std::vector<std::string> args, std::string* out_text = nullptr, std::string* err_text = nullptr) {
  args.insert(args.begin(), "ninode");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
  if (out_text) *out_text = out.str();
  if (err_text) *err_text = err.str();
  return code;
}

std::string write_config(const TempDir& dir, const std::string& text) {
  const std::string path = dir / "config.json";
  write_file(path, text);
  return path;
}

}  // namespace

TEST_CASE("train writes artifacts and the checkpoint verifies") {
  TempDir dir;
  const std::string cfg = write_config(dir, kSmall);
  const std::string out = dir / "run";
  REQUIRE(invoke({"train", "--config", cfg, "--out", out}) == cli::kOk);
  for (const char* f : {"checkpoint.json", "loss_history.csv", "trajectory.csv"}) CHECK(fs::exists(out + "/" + f));
  const Checkpoint ck = load_checkpoint(out + "/checkpoint.json");
  CHECK(ck.digest_matches);
  CHECK(ck.certificate.pass);

  std::string text;
  CHECK(invoke({"verify", "--config", cfg, "--checkpoint", out + "/checkpoint.json", "--out", dir / "v"}, &text) ==
        cli::kOk);
  CHECK(fs::exists(dir / "v/verify_report.json"));
  CHECK(text.find("checkpoint_digest") != std::string::npos);

  CHECK(invoke({"simulate", "--config", cfg, "--checkpoint", out + "/checkpoint.json", "--out", dir / "s"}) ==
        cli::kOk);
  CHECK(fs::exists(dir / "s/trajectory.csv"));
}

TEST_CASE("zero epochs checkpoint equals the initial controller") {
  TempDir dir;
  auto j = nlohmann::json::parse(kSmall);
  j["train"]["epochs"] = 0;
  const std::string cfg = write_config(dir, j.dump());
  REQUIRE(invoke({"train", "--config", cfg, "--out", dir / "run"}) == cli::kOk);
  const ExperimentConfig c = load_config(cfg);
  const MechanicalPlant plant = build_plant(c);
  auto initial = build_ninode(c, plant.eta());
  CHECK(load_checkpoint(dir / "run/checkpoint.json").digest == parameter_digest(*initial));
}

TEST_CASE("training is reproducible across invocations") {
  TempDir dir;
  const std::string cfg = write_config(dir, kSmall);
  REQUIRE(invoke({"train", "--config", cfg, "--out", dir / "a", "--seed", "5"}) == cli::kOk);
  REQUIRE(invoke({"train", "--config", cfg, "--out", dir / "b", "--seed", "5"}) == cli::kOk);
  CHECK(read_file(dir / "a/checkpoint.json") == read_file(dir / "b/checkpoint.json"));
  CHECK(read_file(dir / "a/loss_history.csv") == read_file(dir / "b/loss_history.csv"));
}

TEST_CASE("config and usage errors exit 1 without artifacts") {
  TempDir dir;
  const std::string cfg = write_config(dir, R"({"train": {"stepz": 3}})");
  std::string err;
  CHECK(invoke({"train", "--config", cfg, "--out", dir / "run"}, nullptr, &err) == cli::kUsage);
  CHECK(err.find("train.stepz") != std::string::npos);
  CHECK_FALSE(fs::exists(dir / "run"));
  CHECK(invoke({"train", "--config", dir / "missing.json", "--out", dir / "run"}) == cli::kUsage);
  CHECK(invoke({"verify", "--config", write_config(dir, kSmall), "--checkpoint", dir / "missing.json"}) ==
        cli::kUsage);
  CHECK(invoke({"frobnicate"}) == cli::kUsage);
  CHECK(invoke({}) == cli::kUsage);
  CHECK(invoke({"--help"}) == cli::kOk);
}

TEST_CASE("tampered checkpoint fails verification with exit 2") {
  TempDir dir;
  const std::string cfg = write_config(dir, kSmall);
  auto j = nlohmann::json::parse(kSmall);
  j["train"]["epochs"] = 0;
  write_file(dir / "zero.json", j.dump());
  REQUIRE(invoke({"train", "--config", dir / "zero.json", "--out", dir / "run"}) == cli::kOk);
  auto ck = nlohmann::json::parse(read_file(dir / "run/checkpoint.json"));
  for (auto& p : ck["parameters"])
    if (p["name"].get<std::string>().rfind("hamiltonian.layer0.weight", 0) == 0) {
      // Uniform scaling is absorbed by the normalization, so perturb one entry.
      p["data"][0] = p["data"][0].get<double>() + 10.0;
      break;
    }
  write_file(dir / "tampered.json", ck.dump());
  CHECK(invoke({"verify", "--config", cfg, "--checkpoint", dir / "tampered.json", "--out", dir / "v"}) ==
        cli::kCertification);
  CHECK(invoke({"simulate", "--config", cfg, "--checkpoint", dir / "tampered.json", "--out", dir / "s"}) ==
        cli::kCertification);
}

TEST_CASE("sweep writes one row per factor") {
  TempDir dir;
  const std::string cfg = write_config(dir, kSmall);
  REQUIRE(invoke({"sweep", "--config", cfg, "--out", dir / "sw"}) == cli::kOk);
  std::ifstream f(dir / "sw/sweep.csv");
  std::string line;
  std::vector<std::string> lines;
  while (std::getline(f, line)) lines.push_back(line);
  REQUIRE(lines.size() == 3);
  CHECK(lines[0] == "r,ninode_loss,linear_ni_loss,ninode_normalized,linear_ni_normalized,ninode_status,linear_ni_status");
  CHECK(lines[1].rfind("0.5,", 0) == 0);

  auto j = nlohmann::json::parse(kSmall);
  j["sweep"]["factors"] = nlohmann::json::array();
  CHECK(invoke({"sweep", "--config", write_config(dir, j.dump()), "--out", dir / "empty"}) == cli::kUsage);
}

TEST_CASE("sweep csv normalization") {
  std::ostringstream s;
  cli::write_sweep_csv(s, {{2.0, 8.0, 12.0, "ok", "diverged"}});
  CHECK(s.str().find("2,8,nan,2,nan,ok,diverged") != std::string::npos);
}

TEST_CASE("signal csv") {
  TempDir dir;
  write_file(dir / "sig.csv", "t,z1\n0,1\n0.5,2\n");
  const SignalSource sig = cli::load_signal_csv(dir / "sig.csv", 1);
  CHECK(sig(0.25)[0] == 1.0);
  CHECK(sig(0.75)[0] == 2.0);
  write_file(dir / "bad.csv", "t,z1\n0,1,3\n");
  CHECK_THROWS(cli::load_signal_csv(dir / "bad.csv", 1));
}
