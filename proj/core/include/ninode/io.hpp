#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "ninode/controller.hpp"
#include "ninode/plant.hpp"
#include "ninode/simulate.hpp"
#include "ninode/train.hpp"
#include "ninode/verify.hpp"

namespace ninode {

struct PlantConfig {
  SpringChainParams params = SpringChainParams::reference();
  std::optional<Vector> damping;
  /// Ball radius for eta certification; default max(5, 1.2 |q(0)|) over the sweep factors.
  std::optional<double> eta_radius;
  std::size_t eta_samples = 100000;
};

struct ControllerConfig {
  NinodeConfig ninode;
  /// Initial scale s of the linear baseline (P2 = 1/2 s^2 (I + L L^T)).
  double linear_scale = 1.0;
};

struct ExperimentConfig {
  std::uint64_t seed = 1;
  PlantConfig plant;
  ControllerConfig controller;
  TrainConfig train;
  bool include_controller_state = false;
  SimulationOptions simulation;
  std::size_t simulate_steps = 5000;
  VerifyOptions verify;
  Vector sweep_factors;
  std::string output_dir = "out";
};

/// Parses a JSON experiment document. Unknown fields and type errors raise
/// ConfigError naming the offending field; syntax errors report the position.
ExperimentConfig parse_config(const std::string& text);
ExperimentConfig load_config(const std::string& path);
std::string config_json(const ExperimentConfig& config);

/// Applies a master seed to the controller initialization and verification streams.
void apply_seed(ExperimentConfig& config, std::uint64_t seed);

double eta_radius(const ExperimentConfig& config);

/// Builds the configured plant and certifies its eta.
MechanicalPlant build_plant(const ExperimentConfig& config, EtaReport* report = nullptr);

std::unique_ptr<NinodeController> build_ninode(const ExperimentConfig& config, double eta);
std::unique_ptr<LinearNiController> build_linear(const ExperimentConfig& config, double eta);

/// Training configuration with cost matrices resolved for the plant and controller.
TrainConfig resolved_train_config(const ExperimentConfig& config, std::size_t n, std::size_t m);

struct Checkpoint {
  std::unique_ptr<Controller> controller;
  /// Certificate recorded when the checkpoint was written.
  RegularityCertificate certificate;
  std::uint64_t seed = 0;
  /// Digest stored in the document and whether the loaded parameters reproduce it.
  std::string digest;
  bool digest_matches = false;
};

/// FNV-1a over the bit patterns of every parameter and normalization direction.
std::string parameter_digest(Controller& ctrl);

/// JSON document holding topology, raw parameters, normalization directions,
/// certified constants and the regularity certificate.
std::string checkpoint_json(Controller& ctrl, const RegularityCertificate& cert, std::uint64_t seed);
void save_checkpoint(const std::string& path, Controller& ctrl, const RegularityCertificate& cert,
                     std::uint64_t seed);
Checkpoint parse_checkpoint(const std::string& text);
Checkpoint load_checkpoint(const std::string& path);

std::string read_file(const std::string& path);
void write_file(const std::string& path, const std::string& text);

}  // namespace ninode
