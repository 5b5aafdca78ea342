#include <doctest.h>

#include <json.hpp>

#include "ninode/errors.hpp"
#include "ninode/io.hpp"

using namespace ninode;

namespace {

std::string error_of(const std::string& text) {
  try {
    parse_config(text);
  } catch (const ConfigError& e) {
    return e.what();
  }
  return "";
}

ExperimentConfig small_config() {
  return parse_config(R"({"plant": {"eta_samples": 2000},
                          "controller": {"hidden": 8, "head_hidden": 8, "head_layers": 1}})");
}

}  // namespace

TEST_CASE("config defaults and overrides") {
  const ExperimentConfig d = parse_config("{}");
  CHECK(d.seed == 1);
  CHECK(d.train.steps == 5000);
  CHECK(d.controller.ninode.kappa == 0.9);
  const ExperimentConfig c =
      parse_config(R"({"seed": 9, "train": {"epochs": 3, "h": 0.01}, "controller": {"orthogonal": true}})");
  CHECK(c.seed == 9);
  CHECK(c.train.epochs == 3);
  CHECK(c.train.h == 0.01);
  CHECK(c.controller.ninode.orthogonal);
  CHECK(c.controller.ninode.seed == 9);
}

TEST_CASE("config errors name the field") {
  CHECK(error_of(R"({"train": {"stepz": 3}})").find("train.stepz") != std::string::npos);
  CHECK(error_of(R"({"train": {"steps": "many"}})").find("train.steps") != std::string::npos);
  CHECK(error_of(R"({"plant": {"damping": [1, 2]}})").find("plant.damping") != std::string::npos);
  CHECK(error_of(R"({"train": {"q0": [1]}})").find("train.q0") != std::string::npos);
  CHECK(error_of(R"({"controller": {"m": 2}})").find("controller.m") != std::string::npos);
  CHECK(error_of(R"({"sweep": {"factors": [1, -1]}})").find("sweep") != std::string::npos);
  CHECK_FALSE(error_of("{\"seed\": ").empty());
  CHECK_FALSE(error_of("[1, 2]").empty());
  CHECK_THROWS_AS(load_config("/nonexistent/config.json"), ConfigError);
}

TEST_CASE("config round trip") {
  const ExperimentConfig a = parse_config(R"({"seed": 4, "plant": {"damping": [0.1, 0.2, 0.3]},
                                              "sweep": {"factors": [0.5, 2]}})");
  const std::string text = config_json(a);
  const ExperimentConfig b = parse_config(text);
  CHECK(config_json(b) == text);
  REQUIRE(b.plant.damping.has_value());
  CHECK((*b.plant.damping)[2] == 0.3);
  CHECK(b.sweep_factors.size() == 2);
}

TEST_CASE("seed override and eta radius") {
  ExperimentConfig c = parse_config("{}");
  apply_seed(c, 42);
  CHECK(c.seed == 42);
  CHECK(c.controller.ninode.seed == 42);
  CHECK(eta_radius(c) >= 5.0);
  c.sweep_factors = {4.0};
  CHECK(eta_radius(c) == doctest::Approx(1.2 * 4.0 * std::sqrt(14.0)));
}

TEST_CASE("checkpoint round trip reproduces the controller") {
  const ExperimentConfig c = small_config();
  const MechanicalPlant plant = build_plant(c);
  for (int kind = 0; kind < 2; ++kind) {
    std::unique_ptr<Controller> ctrl;
    if (kind == 0) ctrl = build_ninode(c, plant.eta());
    else ctrl = build_linear(c, plant.eta());
    const RegularityCertificate cert = ctrl->certify(plant.eta());
    const std::string doc = checkpoint_json(*ctrl, cert, 3);
    Checkpoint back = parse_checkpoint(doc);
    CHECK(back.controller->kind() == ctrl->kind());
    CHECK(back.digest_matches);
    CHECK(back.digest == parameter_digest(*ctrl));
    CHECK(back.seed == 3);
    CHECK(back.certificate.gamma == cert.gamma);
    CHECK(back.certificate.mu_upper == cert.mu_upper);
    const Vector x{0.3, -0.2, 0.1, 0.4, -0.5, 0.6};
    const Vector u{0.1, 0.2, -0.3};
    CHECK(back.controller->dynamics(x, u) == ctrl->dynamics(x, u));
    CHECK(back.controller->output(x) == ctrl->output(x));
    CHECK(checkpoint_json(*back.controller, back.certificate, 3) == doc);
  }
}

TEST_CASE("tampered and malformed checkpoints") {
  const ExperimentConfig c = small_config();
  const MechanicalPlant plant = build_plant(c);
  auto ctrl = build_ninode(c, plant.eta());
  const std::string doc = checkpoint_json(*ctrl, ctrl->certify(plant.eta()), 1);

  auto j = nlohmann::json::parse(doc);
  for (auto& p : j["parameters"])
    if (p["name"].get<std::string>().rfind("skew.", 0) == 0) {
      p["data"][0] = p["data"][0].get<double>() + 1e-3;
      break;
    }
  CHECK_FALSE(parse_checkpoint(j.dump()).digest_matches);

  auto bad_shape = nlohmann::json::parse(doc);
  bad_shape["parameters"][0]["data"].erase(0);
  CHECK_THROWS_AS(parse_checkpoint(bad_shape.dump()), ConfigError);

  auto missing = nlohmann::json::parse(doc);
  missing.erase("parameters");
  CHECK_THROWS_AS(parse_checkpoint(missing.dump()), ConfigError);

  auto version = nlohmann::json::parse(doc);
  version["version"] = 99;
  CHECK_THROWS_AS(parse_checkpoint(version.dump()), ConfigError);

  CHECK_THROWS_AS(parse_checkpoint("{\"format\": \"other\"}"), ConfigError);
  CHECK_THROWS_AS(parse_checkpoint("not json"), ConfigError);
  CHECK_THROWS_AS(load_checkpoint("/nonexistent/checkpoint.json"), ConfigError);
}
