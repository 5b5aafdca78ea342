#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <memory>
#include <string>
#include <vector>

#include "ninode/controller.hpp"
#include "ninode/plant.hpp"
#include "ninode/simulate.hpp"

namespace ninode {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct TrainConfig {
  /// State cost over (q, p), or over (q, p, x2) when sized 2n + m. Empty means identity on (q, p).
  Matrix state_cost;
  /// Control cost over u1. Empty means 0.1 I.
  Matrix control_cost;
  std::size_t steps = 5000;
  double h = 0.002;
  int substeps = 1;
  AdamConfig adam;
  std::size_t epochs = 200;
  std::uint64_t seed = 1;
  Vector q0 = {1.0, 2.0, 3.0};
  /// Scaling factor applied to q0.
  double r = 1.0;
  /// Truncated-BPTT window in steps; 0 means the full horizon.
  std::size_t window = 0;
  /// Power iterations per normalization refresh between updates.
  int power_iters = 20;
  /// Step-size halvings allowed when a candidate update fails re-certification.
  int max_halvings = 10;
  /// Off only for ablations: updates are accepted without re-certification.
  bool require_certificate = true;
};

/// Fills empty cost matrices with the defaults for an n-dof plant and checks shapes
/// (Q symmetric PSD, R symmetric PD).
void resolve_costs(TrainConfig& config, std::size_t n, std::size_t m);

/// sum_{k=1}^{N_s} x_k^T Q x_k + u_k^T R u_k with x_k = (q, p) or (q, p, x2) depending on the size of Q.
double quadratic_loss(const Trajectory& traj, const Matrix& state_cost, const Matrix& control_cost);

/// Same sum recorded on the tape for records [first, last].
ad::Var quadratic_loss(const TapeRollout& roll, const Matrix& state_cost, const Matrix& control_cost,
                       std::size_t first, std::size_t last);

struct LossGradient {
  double loss = 0.0;
  std::vector<Matrix> gradient;  // per controller parameter array
  double grad_norm = 0.0;
};

/// Loss of the configured rollout and its gradient with respect to every
/// controller parameter, using truncated BPTT when config.window > 0.
LossGradient loss_and_gradient(const MechanicalPlant& plant, const Controller& ctrl, const TrainConfig& config);

/// Loss of the configured rollout without differentiation.
double evaluate_loss(const MechanicalPlant& plant, const Controller& ctrl, const TrainConfig& config);

class Adam {
 public:
  Adam(const AdamConfig& config, const std::vector<Matrix*>& shapes);
  /// Advances the moment estimates with g and returns the unscaled step
  /// m_hat / (sqrt(v_hat) + eps) for each array.
  std::vector<Matrix> direction(const std::vector<Matrix>& g);
  std::size_t iterations() const noexcept { return t_; }

 private:
  AdamConfig config_;
  std::vector<Matrix> m_, v_;
  std::size_t t_ = 0;
};

struct EpochRecord {
  std::size_t epoch = 0;
  double loss = 0.0;
  double grad_norm = 0.0;
  /// Accepted step size of the update taken after this evaluation (0 for the last row).
  double step_size = 0.0;
  double certificate_margin = 0.0;
};

struct TrainResult {
  std::unique_ptr<Controller> controller;
  std::vector<EpochRecord> history;
  RegularityCertificate certificate;

  void write_history_csv(std::ostream& out) const;
  void write_history_csv(const std::string& path) const;
};

using EpochCallback = std::function<void(const EpochRecord&)>;

/// Gradient descent on the rollout loss. Every accepted update is followed by
/// a normalization refresh and exact re-certification against the plant's eta;
/// failing candidates are retried with halved step size and training aborts
/// with CertificationError after config.max_halvings failures.
TrainResult train(const MechanicalPlant& plant, const Controller& initial, const TrainConfig& config,
                  const EpochCallback& on_epoch = {});

/// Initial closed-loop state of a training run: q = r q0, p = 0, x2 = 0.
ClosedLoopState initial_state(const TrainConfig& config, std::size_t m);

}  // namespace ninode
