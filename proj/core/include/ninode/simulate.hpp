#pragma once

#include <cstddef>
#include <functional>
#include <iosfwd>
#include <memory>
#include <string>
#include <vector>

#include "ninode/controller.hpp"
#include "ninode/plant.hpp"
#include "ninode/tape.hpp"

namespace ninode {

struct ClosedLoopState {
  PlantState plant;
  Vector x2;
  double t = 0.0;
};

/// Extra controller signal z(t); empty when the controller takes none.
using SignalSource = std::function<Vector(double t)>;

struct StepRecord {
  double t = 0.0;
  Vector q, p, x2;
  Vector u1;  // plant input = controller output C2(x2)
  Vector y1;  // plant output = q = controller input
  double h1 = 0.0, h2 = 0.0, w = 0.0;
};

struct Trajectory {
  double h = 0.0;
  std::vector<StepRecord> records;

  std::size_t steps() const noexcept { return records.empty() ? 0 : records.size() - 1; }
  const StepRecord& back() const { return records.back(); }

  void write_csv(std::ostream& out) const;
  void write_csv(const std::string& path) const;
};

struct SimulationOptions {
  double h = 0.002;
  /// RK4 substeps per recorded step.
  int substeps = 4;
  /// Any state entry beyond this magnitude aborts the rollout.
  double divergence_bound = 1e6;
  /// Skip the regularity precondition (ablation runs).
  bool allow_uncertified = false;
};

/// W = H1(x1) + H2(x2) - q^T C2(x2).
double lyapunov_W(const MechanicalPlant& plant, const Controller& ctrl, const ClosedLoopState& state);

/// Closed-loop vector field and RK4 step recorded on a tape, with u1 = C2(x2)
/// and u2 = q evaluated at every stage.
class ClosedLoopTape {
 public:
  struct State {
    ad::Var q, p, x2;
  };
  struct Derivative {
    ad::Var qdot, pdot, x2dot;
    ad::Var u1;  // controller output at the evaluated state
  };

  ClosedLoopTape(const MechanicalPlant& plant, const Controller& ctrl, ad::Tape& tape, bool trainable,
                 SignalSource signal = {});

  ad::Tape& tape() const noexcept { return *tape_; }
  const BoundController& controller() const noexcept { return *ctrl_; }
  const BoundPlant& plant() const noexcept { return plant_; }

  State constant_state(const ClosedLoopState& s) const;
  Derivative derivative(const State& s, double t) const;
  /// One RK4 step of size h; `first` may carry a precomputed derivative at s.
  State rk4(const State& s, double t, double h, const Derivative* first = nullptr) const;
  ad::Var signal(double t) const;

 private:
  ad::Tape* tape_;
  BoundPlant plant_;
  std::unique_ptr<BoundController> ctrl_;
  SignalSource signal_;
  std::size_t l_;
};

/// One recorded step (substeps RK4 steps of h / substeps). Throws
/// DivergenceError if the result is non-finite or leaves the admissible region.
ClosedLoopState step(const MechanicalPlant& plant, const Controller& ctrl, const ClosedLoopState& state,
                     const SimulationOptions& options, const SignalSource& signal = {});

/// Integrates N_s steps from `initial`, recording every state. Requires the
/// regularity certificate against the plant's certified eta unless
/// options.allow_uncertified is set.
Trajectory rollout(const MechanicalPlant& plant, const Controller& ctrl, const ClosedLoopState& initial,
                   std::size_t steps, const SimulationOptions& options, const SignalSource& signal = {});

/// Plant-only rollout with u = 0 (the open-loop reference).
Trajectory open_loop_rollout(const MechanicalPlant& plant, const PlantState& initial, std::size_t steps,
                             const SimulationOptions& options);

/// Rollout variables kept on a tape for differentiation: index k holds the
/// state after k steps and the controller output at that state.
struct TapeRollout {
  std::vector<ad::Var> q, p, x2, u1;
};

TapeRollout record_rollout(const ClosedLoopTape& loop, const ClosedLoopState& initial, std::size_t steps,
                           const SimulationOptions& options);

}  // namespace ninode
