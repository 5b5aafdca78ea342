#include "ninode/simulate.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <sstream>

#include "ninode/errors.hpp"

namespace ninode {

using ad::Var;

void Trajectory::write_csv(std::ostream& out) const {
  if (records.empty()) return;
  const auto& r0 = records.front();
  out << "t";
  for (std::size_t i = 1; i <= r0.q.size(); ++i) out << ",q" << i;
  for (std::size_t i = 1; i <= r0.p.size(); ++i) out << ",p" << i;
  for (std::size_t i = 1; i <= r0.x2.size(); ++i) out << ",x2_" << i;
  for (std::size_t i = 1; i <= r0.u1.size(); ++i) out << ",u" << i;
  out << ",H1,H2,W\n";
  out << std::setprecision(17);
  for (const auto& r : records) {
    out << r.t;
    for (double v : r.q) out << ',' << v;
    for (double v : r.p) out << ',' << v;
    for (double v : r.x2) out << ',' << v;
    for (double v : r.u1) out << ',' << v;
    out << ',' << r.h1 << ',' << r.h2 << ',' << r.w << '\n';
  }
}

void Trajectory::write_csv(const std::string& path) const {
  std::ofstream f(path);
  if (!f) throw ConfigError("cannot open " + path + " for writing");
  write_csv(f);
}

double lyapunov_W(const MechanicalPlant& plant, const Controller& ctrl, const ClosedLoopState& state) {
  if (state.plant.q.size() != ctrl.output_dim()) throw ContractError("lyapunov_W: plant and controller disagree");
  const Vector y2 = ctrl.output(state.x2);
  return plant.hamiltonian(state.plant) + ctrl.hamiltonian(state.x2) - dot(state.plant.q, y2);
}

// Tape closed loop

ClosedLoopTape::ClosedLoopTape(const MechanicalPlant& plant, const Controller& ctrl, ad::Tape& tape,
                               bool trainable, SignalSource signal)
    : tape_(&tape),
      plant_(plant, tape),
      ctrl_(ctrl.bind(tape, trainable)),
      signal_(std::move(signal)),
      l_(ctrl.signal_dim()) {
  if (plant.dim() != ctrl.output_dim()) throw ContractError("closed loop: plant and controller dimensions differ");
  if (l_ > 0 && !signal_) throw ContractError("closed loop: controller expects a signal source");
}

ClosedLoopTape::State ClosedLoopTape::constant_state(const ClosedLoopState& s) const {
  return {tape_->constant(s.plant.q), tape_->constant(s.plant.p), tape_->constant(s.x2)};
}

Var ClosedLoopTape::signal(double t) const {
  if (l_ == 0) return Var{};
  const Vector z = signal_(t);
  if (z.size() != l_) throw ContractError("closed loop: signal source returned the wrong dimension");
  return tape_->constant(z);
}

ClosedLoopTape::Derivative ClosedLoopTape::derivative(const State& s, double t) const {
  const ControllerStage st = ctrl_->stage(s.x2, s.q, signal(t));
  return {plant_.qdot(s.p), plant_.pdot(s.q, s.p, st.y), st.xdot, st.y};
}

namespace {

Var axpy_var(Var x, double a, Var k) {
  const Var terms[2] = {x, k};
  const double coeffs[2] = {1.0, a};
  return ad::lincomb(terms, coeffs);
}

Var rk4_combine(Var x, Var k1, Var k2, Var k3, Var k4, double h) {
  const Var terms[5] = {x, k1, k2, k3, k4};
  const double coeffs[5] = {1.0, h / 6.0, h / 3.0, h / 3.0, h / 6.0};
  return ad::lincomb(terms, coeffs);
}

}  // namespace

ClosedLoopTape::State ClosedLoopTape::rk4(const State& s, double t, double h, const Derivative* first) const {
  const Derivative k1 = first ? *first : derivative(s, t);
  const State s2{axpy_var(s.q, 0.5 * h, k1.qdot), axpy_var(s.p, 0.5 * h, k1.pdot), axpy_var(s.x2, 0.5 * h, k1.x2dot)};
  const Derivative k2 = derivative(s2, t + 0.5 * h);
  const State s3{axpy_var(s.q, 0.5 * h, k2.qdot), axpy_var(s.p, 0.5 * h, k2.pdot), axpy_var(s.x2, 0.5 * h, k2.x2dot)};
  const Derivative k3 = derivative(s3, t + 0.5 * h);
  const State s4{axpy_var(s.q, h, k3.qdot), axpy_var(s.p, h, k3.pdot), axpy_var(s.x2, h, k3.x2dot)};
  const Derivative k4 = derivative(s4, t + h);
  return {rk4_combine(s.q, k1.qdot, k2.qdot, k3.qdot, k4.qdot, h),
          rk4_combine(s.p, k1.pdot, k2.pdot, k3.pdot, k4.pdot, h),
          rk4_combine(s.x2, k1.x2dot, k2.x2dot, k3.x2dot, k4.x2dot, h)};
}

// Plain rollouts

namespace {

void check_options(const SimulationOptions& o) {
  if (!(o.h > 0.0) || !std::isfinite(o.h)) throw ContractError("simulation: step size must be positive");
  if (o.substeps < 1) throw ContractError("simulation: substeps must be at least 1");
}

void guard(std::span<const double> q, std::span<const double> p, std::span<const double> x2, double bound,
           double t, std::size_t k) {
  double s = 0.0;
  bool finite = true;
  for (auto part : {q, p, x2})
    for (double v : part) {
      finite = finite && std::isfinite(v);
      s += v * v;
    }
  if (!finite || std::sqrt(s) > bound) {
    std::ostringstream msg;
    msg << "closed loop diverged at t=" << t << " (step " << k << ")";
    throw DivergenceError(msg.str(), t, k);
  }
}

ClosedLoopState read_state(const ClosedLoopTape::State& s, double t) {
  return {{s.q.value().to_vector(), s.p.value().to_vector()}, s.x2.value().to_vector(), t};
}

ClosedLoopState advance(const ClosedLoopTape& loop, const ClosedLoopState& cur, const SimulationOptions& o,
                        const ClosedLoopTape::Derivative* first, const ClosedLoopTape::State& start,
                        std::size_t k, double t_next) {
  const double hs = o.h / o.substeps;
  ClosedLoopTape::State s = start;
  for (int j = 0; j < o.substeps; ++j) {
    s = loop.rk4(s, cur.t + j * hs, hs, j == 0 ? first : nullptr);
  }
  ClosedLoopState next = read_state(s, t_next);
  guard(next.plant.q, next.plant.p, next.x2, o.divergence_bound, next.t, k + 1);
  return next;
}

void check_initial(const MechanicalPlant& plant, const Controller& ctrl, const ClosedLoopState& s) {
  plant.check_state(s.plant);
  if (s.x2.size() != ctrl.state_dim()) throw ContractError("simulation: controller state dimension mismatch");
}

}  // namespace

ClosedLoopState step(const MechanicalPlant& plant, const Controller& ctrl, const ClosedLoopState& state,
                     const SimulationOptions& options, const SignalSource& signal) {
  check_options(options);
  check_initial(plant, ctrl, state);
  ad::Tape tape;
  ClosedLoopTape loop(plant, ctrl, tape, false, signal);
  return advance(loop, state, options, nullptr, loop.constant_state(state), 0, state.t + options.h);
}

Trajectory rollout(const MechanicalPlant& plant, const Controller& ctrl, const ClosedLoopState& initial,
                   std::size_t steps, const SimulationOptions& options, const SignalSource& signal) {
  check_options(options);
  check_initial(plant, ctrl, initial);
  if (!options.allow_uncertified) {
    if (!plant.has_eta()) throw CertificationError("rollout: plant has no certified eta");
    validate_regularity(ctrl, plant.eta());
  }
  ad::Tape tape;
  ClosedLoopTape loop(plant, ctrl, tape, false, signal);
  const ad::Tape::Mark base = tape.mark();

  Trajectory traj;
  traj.h = options.h;
  traj.records.reserve(steps + 1);
  ClosedLoopState cur = initial;
  guard(cur.plant.q, cur.plant.p, cur.x2, options.divergence_bound, cur.t, 0);
  for (std::size_t k = 0;; ++k) {
    tape.rewind(base);
    const ClosedLoopTape::State s = loop.constant_state(cur);
    const bool last = k == steps;
    ClosedLoopTape::Derivative d;
    if (last) {
      d.u1 = loop.controller().output(s.x2);
    } else {
      d = loop.derivative(s, cur.t);
    }
    StepRecord r;
    r.t = cur.t;
    r.q = cur.plant.q;
    r.p = cur.plant.p;
    r.x2 = cur.x2;
    r.u1 = d.u1.value().to_vector();
    r.y1 = cur.plant.q;
    r.h1 = plant.hamiltonian(cur.plant);
    r.h2 = loop.controller().hamiltonian(s.x2).scalar();
    r.w = r.h1 + r.h2 - dot(r.q, r.u1);
    traj.records.push_back(std::move(r));
    if (last) break;
    cur = advance(loop, cur, options, &d, s, k, initial.t + static_cast<double>(k + 1) * options.h);
  }
  return traj;
}

Trajectory open_loop_rollout(const MechanicalPlant& plant, const PlantState& initial, std::size_t steps,
                             const SimulationOptions& options) {
  check_options(options);
  plant.check_state(initial);
  const std::size_t n = plant.dim();
  const Vector zero(n, 0.0);
  const double hs = options.h / options.substeps;
  auto shifted = [](const PlantState& x, double a, const PlantDerivative& k) {
    return PlantState{axpy(a, k.qdot, x.q), axpy(a, k.pdot, x.p)};
  };

  Trajectory traj;
  traj.h = options.h;
  traj.records.reserve(steps + 1);
  PlantState x = initial;
  for (std::size_t k = 0;; ++k) {
    StepRecord r;
    r.t = static_cast<double>(k) * options.h;  // open loop starts at t = 0
    r.q = x.q;
    r.p = x.p;
    r.u1 = zero;
    r.y1 = x.q;
    r.h1 = plant.hamiltonian(x);
    r.w = r.h1;
    traj.records.push_back(std::move(r));
    if (k == steps) break;
    for (int j = 0; j < options.substeps; ++j) {
      const PlantDerivative k1 = plant.dynamics(x, zero);
      const PlantDerivative k2 = plant.dynamics(shifted(x, 0.5 * hs, k1), zero);
      const PlantDerivative k3 = plant.dynamics(shifted(x, 0.5 * hs, k2), zero);
      const PlantDerivative k4 = plant.dynamics(shifted(x, hs, k3), zero);
      for (std::size_t i = 0; i < n; ++i) {
        x.q[i] += hs / 6.0 * (k1.qdot[i] + 2.0 * k2.qdot[i] + 2.0 * k3.qdot[i] + k4.qdot[i]);
        x.p[i] += hs / 6.0 * (k1.pdot[i] + 2.0 * k2.pdot[i] + 2.0 * k3.pdot[i] + k4.pdot[i]);
      }
    }
    guard(x.q, x.p, {}, options.divergence_bound, (k + 1) * options.h, k + 1);
  }
  return traj;
}

TapeRollout record_rollout(const ClosedLoopTape& loop, const ClosedLoopState& initial, std::size_t steps,
                           const SimulationOptions& options) {
  check_options(options);
  TapeRollout out;
  out.q.reserve(steps + 1);
  out.p.reserve(steps + 1);
  out.x2.reserve(steps + 1);
  out.u1.reserve(steps + 1);
  ClosedLoopTape::State s = loop.constant_state(initial);
  const double hs = options.h / options.substeps;
  for (std::size_t k = 0;; ++k) {
    const double t = initial.t + static_cast<double>(k) * options.h;
    out.q.push_back(s.q);
    out.p.push_back(s.p);
    out.x2.push_back(s.x2);
    if (k == steps) {
      out.u1.push_back(loop.controller().output(s.x2));
      break;
    }
    const ClosedLoopTape::Derivative d = loop.derivative(s, t);
    out.u1.push_back(d.u1);
    for (int j = 0; j < options.substeps; ++j) s = loop.rk4(s, t + j * hs, hs, j == 0 ? &d : nullptr);
    guard(s.q.values(), s.p.values(), s.x2.values(), options.divergence_bound, t + options.h, k + 1);
  }
  return out;
}

}  // namespace ninode
