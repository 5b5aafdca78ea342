#include "ninode/train.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <sstream>

#include "ninode/errors.hpp"
#include "ninode/linalg.hpp"

namespace ninode {

using ad::Var;

void resolve_costs(TrainConfig& config, std::size_t n, std::size_t m) {
  if (config.state_cost.empty()) config.state_cost = Matrix::identity(2 * n);
  if (config.control_cost.empty()) config.control_cost = 0.1 * Matrix::identity(n);
  const Matrix& q = config.state_cost;
  const Matrix& r = config.control_cost;
  if (!q.is_square() || (q.rows() != 2 * n && q.rows() != 2 * n + m))
    throw ContractError("train: state cost must be 2n x 2n or (2n+m) x (2n+m)");
  if (!r.is_square() || r.rows() != n) throw ContractError("train: control cost must be n x n");
  if (!is_symmetric(q) || symmetric_eigenvalues(q).front() < -1e-12)
    throw ContractError("train: state cost must be symmetric positive semidefinite");
  if (!is_symmetric(r) || !(symmetric_eigenvalues(r).front() > 0.0))
    throw ContractError("train: control cost must be symmetric positive definite");
  if (config.steps == 0) throw ContractError("train: need at least one step");
}

namespace {

double quadratic_form(const Matrix& a, std::span<const double> x) { return dot(x, matvec(a, x)); }

}  // namespace

double quadratic_loss(const Trajectory& traj, const Matrix& state_cost, const Matrix& control_cost) {
  if (traj.records.empty()) return 0.0;
  const std::size_t n = traj.records.front().q.size();
  const std::size_t m = traj.records.front().x2.size();
  const bool with_x2 = state_cost.rows() == 2 * n + m && state_cost.rows() != 2 * n;
  if (!state_cost.is_square() || (state_cost.rows() != 2 * n && !with_x2))
    throw ContractError("quadratic_loss: state cost does not match the recorded state");
  if (!control_cost.is_square() || control_cost.rows() != n)
    throw ContractError("quadratic_loss: control cost does not match the recorded input");
  Vector terms;
  terms.reserve(traj.records.size());
  for (std::size_t k = 1; k < traj.records.size(); ++k) {
    const StepRecord& r = traj.records[k];
    Vector x = r.q;
    x.insert(x.end(), r.p.begin(), r.p.end());
    if (with_x2) x.insert(x.end(), r.x2.begin(), r.x2.end());
    terms.push_back(quadratic_form(state_cost, x) + quadratic_form(control_cost, r.u1));
  }
  return pairwise_sum(terms);
}

Var quadratic_loss(const TapeRollout& roll, const Matrix& state_cost, const Matrix& control_cost,
                   std::size_t first, std::size_t last) {
  if (roll.q.empty() || last >= roll.q.size() || first > last)
    throw ContractError("quadratic_loss: record range out of bounds");
  ad::Tape& tape = *roll.q.front().tape;
  const std::size_t n = roll.q.front().size();
  const bool with_x2 = state_cost.rows() != 2 * n;
  const Var qc = tape.constant(state_cost);
  const Var rc = tape.constant(control_cost);
  std::vector<Var> terms;
  terms.reserve(last - first + 1);
  for (std::size_t k = first; k <= last; ++k) {
    std::vector<Var> parts = {roll.q[k], roll.p[k]};
    if (with_x2) parts.push_back(roll.x2[k]);
    const Var x = ad::concat(parts);
    terms.push_back(ad::dot(x, ad::matmul(qc, x)) + ad::dot(roll.u1[k], ad::matmul(rc, roll.u1[k])));
  }
  return ad::sum(terms);
}

ClosedLoopState initial_state(const TrainConfig& config, std::size_t m) {
  ClosedLoopState s;
  s.plant.q = config.q0;
  for (double& v : s.plant.q) v *= config.r;
  s.plant.p.assign(config.q0.size(), 0.0);
  s.x2.assign(m, 0.0);
  return s;
}

namespace {

SimulationOptions sim_options(const TrainConfig& c) {
  SimulationOptions o;
  o.h = c.h;
  o.substeps = c.substeps;
  o.allow_uncertified = true;
  return o;
}

}  // namespace

LossGradient loss_and_gradient(const MechanicalPlant& plant, const Controller& ctrl, const TrainConfig& config_in) {
  TrainConfig config = config_in;
  resolve_costs(config, plant.dim(), ctrl.state_dim());
  const std::size_t window = config.window == 0 ? config.steps : config.window;
  const SimulationOptions opts = sim_options(config);

  LossGradient out;
  ClosedLoopState state = initial_state(config, ctrl.state_dim());
  std::vector<double> chunk_losses;
  for (std::size_t start = 0; start < config.steps; start += window) {
    const std::size_t len = std::min(window, config.steps - start);
    state.t = static_cast<double>(start) * config.h;
    ad::Tape tape;
    ClosedLoopTape loop(plant, ctrl, tape, true);
    const TapeRollout roll = record_rollout(loop, state, len, opts);
    const Var loss = quadratic_loss(roll, config.state_cost, config.control_cost, 1, len);
    chunk_losses.push_back(loss.scalar());
    std::vector<Matrix> g = tape.grad(loss);
    if (out.gradient.empty()) {
      out.gradient = std::move(g);
    } else {
      for (std::size_t i = 0; i < g.size(); ++i) out.gradient[i] = out.gradient[i] + g[i];
    }
    state.plant.q = roll.q[len].value().to_vector();
    state.plant.p = roll.p[len].value().to_vector();
    state.x2 = roll.x2[len].value().to_vector();
  }
  out.loss = pairwise_sum(chunk_losses);
  Vector sq;
  for (const Matrix& g : out.gradient) sq.push_back(pairwise_dot(g.data(), 1, g.data(), 1, g.size()));
  out.grad_norm = std::sqrt(pairwise_sum(sq));
  return out;
}

double evaluate_loss(const MechanicalPlant& plant, const Controller& ctrl, const TrainConfig& config_in) {
  TrainConfig config = config_in;
  resolve_costs(config, plant.dim(), ctrl.state_dim());
  const Trajectory traj = rollout(plant, ctrl, initial_state(config, ctrl.state_dim()), config.steps,
                                  sim_options(config));
  return quadratic_loss(traj, config.state_cost, config.control_cost);
}

// Adam

Adam::Adam(const AdamConfig& config, const std::vector<Matrix*>& shapes) : config_(config) {
  if (!(config.lr > 0.0)) throw ContractError("Adam: step size must be positive");
  if (!(config.beta1 >= 0.0 && config.beta1 < 1.0 && config.beta2 >= 0.0 && config.beta2 < 1.0))
    throw ContractError("Adam: moment coefficients must lie in [0, 1)");
  for (const Matrix* p : shapes) {
    m_.emplace_back(p->rows(), p->cols());
    v_.emplace_back(p->rows(), p->cols());
  }
}

std::vector<Matrix> Adam::direction(const std::vector<Matrix>& g) {
  if (g.size() != m_.size()) throw ContractError("Adam: gradient count mismatch");
  ++t_;
  const double c1 = 1.0 - std::pow(config_.beta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(config_.beta2, static_cast<double>(t_));
  std::vector<Matrix> d;
  d.reserve(g.size());
  for (std::size_t i = 0; i < g.size(); ++i) {
    if (g[i].size() != m_[i].size()) throw ContractError("Adam: gradient shape mismatch");
    Matrix step(g[i].rows(), g[i].cols());
    for (std::size_t k = 0; k < g[i].size(); ++k) {
      m_[i][k] = config_.beta1 * m_[i][k] + (1.0 - config_.beta1) * g[i][k];
      v_[i][k] = config_.beta2 * v_[i][k] + (1.0 - config_.beta2) * g[i][k] * g[i][k];
      step[k] = (m_[i][k] / c1) / (std::sqrt(v_[i][k] / c2) + config_.epsilon);
    }
    d.push_back(std::move(step));
  }
  return d;
}

// Training loop

void TrainResult::write_history_csv(std::ostream& out) const {
  out << "epoch,loss,grad_norm,step_size,certificate_margin\n" << std::setprecision(17);
  for (const auto& r : history)
    out << r.epoch << ',' << r.loss << ',' << r.grad_norm << ',' << r.step_size << ',' << r.certificate_margin
        << '\n';
}

void TrainResult::write_history_csv(const std::string& path) const {
  std::ofstream f(path);
  if (!f) throw ConfigError("cannot open " + path + " for writing");
  write_history_csv(f);
}

TrainResult train(const MechanicalPlant& plant, const Controller& initial, const TrainConfig& config_in,
                  const EpochCallback& on_epoch) {
  TrainConfig config = config_in;
  resolve_costs(config, plant.dim(), initial.state_dim());
  if (config.q0.size() != plant.dim()) throw ContractError("train: initial condition dimension mismatch");
  const double eta = plant.eta();

  std::unique_ptr<Controller> ctrl = initial.clone();
  RegularityCertificate cert = config.require_certificate ? validate_regularity(*ctrl, eta) : ctrl->certify(eta);
  Adam adam(config.adam, ctrl->parameters());

  TrainResult result;
  for (std::size_t epoch = 0;; ++epoch) {
    const LossGradient lg = loss_and_gradient(plant, *ctrl, config);
    EpochRecord rec{epoch, lg.loss, lg.grad_norm, 0.0, cert.margin};
    if (epoch == config.epochs) {
      result.history.push_back(rec);
      if (on_epoch) on_epoch(rec);
      break;
    }
    const std::vector<Matrix> dir = adam.direction(lg.gradient);
    double lr = config.adam.lr;
    std::unique_ptr<Controller> accepted;
    std::string last_reason;
    for (int attempt = 0; attempt <= config.max_halvings; ++attempt, lr *= 0.5) {
      std::unique_ptr<Controller> cand = ctrl->clone();
      const std::vector<Matrix*> params = cand->parameters();
      bool finite = true;
      for (std::size_t i = 0; i < params.size(); ++i) {
        Matrix& p = *params[i];
        for (std::size_t k = 0; k < p.size(); ++k) p[k] -= lr * dir[i][k];
        finite = finite && p.all_finite();
      }
      if (!finite) {
        last_reason = "non-finite parameters";
        continue;
      }
      cand->refresh(NormRefresh::Training, config.power_iters);
      RegularityCertificate c = cand->certify(eta);
      if (c.pass || !config.require_certificate) {
        accepted = std::move(cand);
        cert = c;
        break;
      }
      last_reason = c.reason;
    }
    if (!accepted) {
      std::ostringstream msg;
      msg << "train: epoch " << epoch << " update failed re-certification after " << config.max_halvings
          << " halvings: " << last_reason;
      throw CertificationError(msg.str());
    }
    rec.step_size = lr;
    result.history.push_back(rec);
    if (on_epoch) on_epoch(rec);
    ctrl = std::move(accepted);
  }
  result.controller = std::move(ctrl);
  result.certificate = cert;
  return result;
}

}  // namespace ninode
