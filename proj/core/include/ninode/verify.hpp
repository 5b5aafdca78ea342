#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "ninode/controller.hpp"
#include "ninode/nets.hpp"
#include "ninode/plant.hpp"
#include "ninode/simulate.hpp"
#include "ninode/train.hpp"

namespace ninode {

struct CheckRecord {
  std::string name;
  std::size_t samples = 0;
  /// Largest violation measure; the check passes iff worst <= tol.
  double worst = 0.0;
  double tol = 0.0;
  bool pass = false;
  /// Property the check certifies.
  std::string anchor;
  std::string detail;
};

struct VerificationReport {
  std::vector<CheckRecord> checks;

  bool pass() const;
  const CheckRecord* find(const std::string& name) const;
  std::string text() const;
  /// {"pass": bool, "checks": [{name, samples, worst, tol, pass, anchor}]}
  std::string json() const;
};

/// Finite-difference gradient comparison, max_i |a_i - f_i| / max_i max(|a_i|, |f_i|).
/// Normwise because central differences cannot resolve entries near their
/// roundoff level (about eps |L| / step).
double gradient_mismatch(std::span<const double> analytic, std::span<const double> numeric);

/// Sampled NI identity of the plant, Hdot1 - u1^T ydot1 = -(M^-1 p)^T r1 (M^-1 p) <= 0,
/// from the plant vector field at random states (radius ball) and inputs.
CheckRecord check_ni_plant(const MechanicalPlant& plant, std::size_t trials, double radius, std::uint64_t seed);

/// Sampled controller dissipation identity Hdot2 - u2^T ydot2 = -v^T R2 v <= 0 with
/// v = grad H2 - Jac(C2)^T u2; both sides evaluated independently. The error is
/// measured relative to max(1, |v^T R2 v|).
CheckRecord check_ni_controller(const Controller& ctrl, std::size_t trials, double radius, std::uint64_t seed);

/// W(k) > -1e-12, W(k+1) - W(k) <= 1e-6 max(1, W(k)) and W(N) < W(0) (or W identically
/// zero for an equilibrium start).
CheckRecord check_lyapunov(const Trajectory& traj);

/// mu |a - b| - 1e-9 <= |net(a) - net(b)| <= nu |a - b| + 1e-9 on random pairs.
CheckRecord check_bilipschitz(const BiLipNet& net, const BiLipConstants& c, std::size_t pairs, double radius,
                              std::uint64_t seed, const std::string& name = "bilipschitz");

/// Structural sampling checks of a controller against its exact certificate:
/// regularity, skew exactness, SPD floor, PL inequality, quadratic lower bound,
/// output gain bound, output Jacobian rank, and bi-Lipschitz pairs for neural
/// components.
std::vector<CheckRecord> check_certified_nets(const Controller& ctrl, double eta, std::size_t trials,
                                              std::size_t pairs, double radius, std::uint64_t seed);

/// Tape gradient of the rollout loss against central differences over every
/// parameter entry (normalization directions frozen).
CheckRecord check_gradients(const MechanicalPlant& plant, const Controller& ctrl, const TrainConfig& config,
                            double fd_step = 1e-5, double tol = 1e-4);

struct VerifyOptions {
  std::uint64_t seed = 1;
  std::size_t structural_samples = 10000;
  std::size_t pair_samples = 10000;
  /// Sampling radius for controller states and bi-Lipschitz pairs.
  double radius = 5.0;
  /// Sampling radius for plant states in the NI identity.
  double plant_radius = 1.0;
  std::size_t rollout_steps = 5000;
  SimulationOptions simulation;
  ClosedLoopState initial;
  /// Horizon of the gradient check; 0 skips it.
  std::size_t gradient_steps = 10;
};

/// Runs every check in parallel, each with its own RNG stream derived from options.seed.
VerificationReport run_verification(const MechanicalPlant& plant, const Controller& ctrl,
                                    const VerifyOptions& options);

/// Independent seed for stream `index` of a master seed.
std::uint64_t derive_seed(std::uint64_t master, std::uint64_t index);

}  // namespace ninode
