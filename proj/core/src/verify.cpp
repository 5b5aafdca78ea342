#include "ninode/verify.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <future>
#include <iomanip>
#include <limits>
#include <sstream>

#include <json.hpp>

#include "ninode/errors.hpp"
#include "ninode/linalg.hpp"

namespace ninode {

using ad::Var;

bool VerificationReport::pass() const {
  return !checks.empty() && std::all_of(checks.begin(), checks.end(), [](const CheckRecord& c) { return c.pass; });
}

const CheckRecord* VerificationReport::find(const std::string& name) const {
  for (const auto& c : checks)
    if (c.name == name) return &c;
  return nullptr;
}

std::string VerificationReport::text() const {
  std::ostringstream out;
  out << std::setprecision(3);
  for (const auto& c : checks) {
    out << (c.pass ? "PASS " : "FAIL ") << std::left << std::setw(28) << c.name << " worst=" << c.worst
        << " tol=" << c.tol << " samples=" << c.samples << "  [" << c.anchor << "]";
    if (!c.detail.empty()) out << "\n     " << c.detail;
    out << '\n';
  }
  out << (pass() ? "all checks passed" : "verification FAILED") << '\n';
  return out.str();
}

std::string VerificationReport::json() const {
  nlohmann::json j;
  j["pass"] = pass();
  j["checks"] = nlohmann::json::array();
  for (const auto& c : checks) {
    nlohmann::json e;
    e["name"] = c.name;
    e["samples"] = c.samples;
    e["worst"] = std::isfinite(c.worst) ? nlohmann::json(c.worst) : nlohmann::json(nullptr);
    e["tol"] = c.tol;
    e["pass"] = c.pass;
    e["anchor"] = c.anchor;
    if (!c.detail.empty()) e["detail"] = c.detail;
    j["checks"].push_back(std::move(e));
  }
  return j.dump(2);
}

std::uint64_t derive_seed(std::uint64_t master, std::uint64_t index) {
  std::uint64_t z = master + 0x9E3779B97F4A7C15ULL * (index + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

double gradient_mismatch(std::span<const double> analytic, std::span<const double> numeric) {
  if (analytic.size() != numeric.size()) throw ContractError("gradient_mismatch: size mismatch");
  double err = 0.0, scale = 0.0;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    err = std::max(err, std::abs(analytic[i] - numeric[i]));
    scale = std::max({scale, std::abs(analytic[i]), std::abs(numeric[i])});
  }
  if (!std::isfinite(err) || !std::isfinite(scale)) return std::numeric_limits<double>::infinity();
  return scale == 0.0 ? 0.0 : err / scale;
}

namespace {

CheckRecord make_record(std::string name, std::string anchor, double tol) {
  CheckRecord r;
  r.name = std::move(name);
  r.anchor = std::move(anchor);
  r.tol = tol;
  r.worst = -std::numeric_limits<double>::infinity();
  return r;
}

void finish(CheckRecord& r) {
  if (r.samples == 0) r.worst = 0.0;
  r.pass = r.worst <= r.tol;
}

Vector sample_or_empty(std::size_t n, double radius, Rng& rng) {
  return n == 0 ? Vector{} : sample_ball(n, radius, rng);
}

Var signal_or_empty(ad::Tape& tape, const Vector& z) { return z.empty() ? Var{} : tape.constant(z); }

}  // namespace

CheckRecord check_ni_plant(const MechanicalPlant& plant, std::size_t trials, double radius, std::uint64_t seed) {
  CheckRecord r = make_record("ni_plant", "plant NI dissipation: dH1/dt <= u1^T dy1/dt", 1e-10);
  Rng rng(seed);
  const std::size_t n = plant.dim();
  double worst_gap = 0.0, worst_lhs = -std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < trials; ++k) {
    const PlantState x{sample_ball(n, radius, rng), sample_ball(n, radius, rng)};
    const Vector u = sample_ball(n, radius, rng);
    const PlantDerivative d = plant.dynamics(x, u);
    const Vector grad_v = plant.potential().gradient(x.q);
    const Vector v = plant.velocity(x.p);
    const double hdot = dot(grad_v, d.qdot) + dot(v, d.pdot);
    const double lhs = hdot - dot(u, d.qdot);
    const double expected = plant.has_damping() ? -dot(v, matvec(plant.damping(), v)) : 0.0;
    worst_gap = std::max(worst_gap, std::abs(lhs - expected));
    worst_lhs = std::max(worst_lhs, lhs);
    r.worst = std::max({r.worst, lhs, std::abs(lhs - expected)});
    ++r.samples;
  }
  std::ostringstream d;
  d << std::setprecision(3) << "max |lhs + v^T r1 v| = " << worst_gap << ", max lhs = " << worst_lhs;
  finish(r);
  if (!r.pass) r.detail = d.str();
  return r;
}

CheckRecord check_ni_controller(const Controller& ctrl, std::size_t trials, double radius, std::uint64_t seed) {
  CheckRecord r = make_record("ni_controller", "controller dissipation: dH2/dt - u2^T dy2/dt = -v^T R2 v <= 0", 1e-9);
  Rng rng(seed);
  const std::size_t m = ctrl.state_dim(), n = ctrl.output_dim(), l = ctrl.signal_dim();
  ad::Tape tape;
  const auto b = ctrl.bind(tape, false);
  const ad::Tape::Mark base = tape.mark();
  for (std::size_t k = 0; k < trials; ++k) {
    tape.rewind(base);
    const Vector x2 = sample_ball(m, radius, rng);
    const Vector u2 = sample_ball(n, radius, rng);
    const Vector z = sample_or_empty(l, radius, rng);
    const Var x = tape.constant(x2);
    const Var zv = signal_or_empty(tape, z);
    const Vector xdot = b->stage(x, tape.constant(u2), zv).xdot.value().to_vector();
    const Vector grad = b->hamiltonian_gradient(x).value().to_vector();
    Matrix jac(n, m);
    for (std::size_t i = 0; i < n; ++i) {
      Vector e(n, 0.0);
      e[i] = 1.0;
      const auto row = b->output_vjp(x, tape.constant(e)).values();
      std::copy(row.begin(), row.end(), jac.data() + i * m);
    }
    const Matrix rm = b->damping(x, zv).value();
    const double lhs = dot(grad, xdot) - dot(u2, matvec(jac, xdot));
    const Vector v = axpy(-1.0, matvec_transposed(jac, u2), grad);
    const double rhs = -dot(v, matvec(rm, v));
    const double scale = std::max(1.0, std::abs(rhs));
    r.worst = std::max({r.worst, std::abs(lhs - rhs) / scale, lhs / scale});
    ++r.samples;
  }
  finish(r);
  return r;
}

CheckRecord check_lyapunov(const Trajectory& traj) {
  CheckRecord r = make_record("lyapunov", "closed-loop W positive and non-increasing", 1e-6);
  const auto& rec = traj.records;
  if (rec.empty()) {
    r.detail = "empty trajectory";
    r.pass = false;
    return r;
  }
  double min_w = rec.front().w;
  r.worst = 0.0;
  for (std::size_t k = 0; k + 1 < rec.size(); ++k) {
    r.worst = std::max(r.worst, (rec[k + 1].w - rec[k].w) / std::max(1.0, rec[k].w));
    min_w = std::min(min_w, rec[k + 1].w);
  }
  r.samples = rec.size();
  const double w0 = rec.front().w, wn = rec.back().w;
  std::ostringstream d;
  d << std::setprecision(6);
  if (min_w <= -1e-12) d << "W reaches " << min_w << " < 0; ";
  const bool at_rest = std::abs(w0) <= 1e-12;
  if (at_rest) {
    for (const auto& s : rec)
      if (std::abs(s.w) > 1e-12) {
        d << "equilibrium start but W leaves 0; ";
        break;
      }
  } else if (!(wn < w0)) {
    d << "no net decrease: W(0)=" << w0 << " W(end)=" << wn << "; ";
  }
  if (r.worst > r.tol) d << "per-step increase " << r.worst << " exceeds slack; ";
  r.detail = d.str();
  r.pass = r.detail.empty();
  if (r.pass) {
    std::ostringstream ok;
    ok << std::setprecision(6) << "W(0)=" << w0 << " W(end)=" << wn;
    r.detail = ok.str();
  }
  return r;
}

CheckRecord check_bilipschitz(const BiLipNet& net, const BiLipConstants& c, std::size_t pairs, double radius,
                              std::uint64_t seed, const std::string& name) {
  CheckRecord r = make_record(name, "bi-Lipschitz bounds mu|dx| <= |dy| <= nu|dx|", 1e-9);
  Rng rng(seed);
  ad::Tape tape;
  const BoundBiLip b(net, ParamBinder{tape, false});
  const ad::Tape::Mark base = tape.mark();
  double lo = std::numeric_limits<double>::infinity(), hi = 0.0;
  for (std::size_t k = 0; k < pairs; ++k) {
    tape.rewind(base);
    const Vector xa = sample_ball(net.dim(), radius, rng);
    const Vector xb = sample_ball(net.dim(), radius, rng);
    const Vector ya = b.forward(tape.constant(xa)).output.value().to_vector();
    const Vector yb = b.forward(tape.constant(xb)).output.value().to_vector();
    const double dx = norm(axpy(-1.0, xb, xa));
    const double dy = norm(axpy(-1.0, yb, ya));
    if (dx > 0.0) {
      lo = std::min(lo, dy / dx);
      hi = std::max(hi, dy / dx);
    }
    r.worst = std::max({r.worst, c.mu * dx - dy, dy - c.nu * dx});
    ++r.samples;
  }
  finish(r);
  std::ostringstream d;
  d << std::setprecision(4) << "certified (" << c.mu << ", " << c.nu << "), sampled ratio range [" << lo << ", " << hi
    << "]";
  r.detail = d.str();
  return r;
}

std::vector<CheckRecord> check_certified_nets(const Controller& ctrl, double eta, std::size_t trials,
                                              std::size_t pairs, double radius, std::uint64_t seed) {
  std::vector<CheckRecord> out;
  const RegularityCertificate cert = ctrl.certify(eta);
  {
    CheckRecord r = make_record("regularity", "mu_upper < sqrt(eta) gamma with exact constants", 0.0);
    r.samples = 1;
    r.worst = -cert.margin;
    r.pass = cert.pass;
    std::ostringstream d;
    d << std::setprecision(6) << "gamma=" << cert.gamma << " mu_lower=" << cert.mu_lower
      << " mu_upper=" << cert.mu_upper << " eta=" << cert.eta << " margin=" << cert.margin;
    if (!cert.pass) d << "; " << cert.reason;
    r.detail = d.str();
    if (!cert.pass && !(r.worst > r.tol)) r.worst = std::numeric_limits<double>::infinity();
    out.push_back(std::move(r));
  }
  const bool have_constants = cert.gamma > 0.0 && cert.mu_upper > 0.0;

  const std::size_t m = ctrl.state_dim(), n = ctrl.output_dim(), l = ctrl.signal_dim();
  const double eps = ctrl.damping_floor();
  const double g2 = cert.gamma * cert.gamma;
  CheckRecord skew = make_record("skew_exactness", "J2 = -J2^T", 1e-15);
  CheckRecord spd = make_record("spd_floor", "R2 symmetric with eigenvalues >= epsilon", 1e-9);
  CheckRecord pl = make_record("pl_inequality", "1/2|grad H2|^2 >= gamma^2 H2", 1e-9);
  CheckRecord quad = make_record("quadratic_lower_bound", "H2 >= 1/2 gamma^2 |x2|^2", 1e-9);
  CheckRecord gain = make_record("output_gain", "|C2(x2)| <= mu_upper |x2|", 1e-9);
  CheckRecord rank = make_record("output_jacobian_rank", "sigma_min(Jac C2) >= mu_lower", 1e-9);

  Rng rng(seed);
  ad::Tape tape;
  const auto b = ctrl.bind(tape, false);
  const ad::Tape::Mark base = tape.mark();
  for (std::size_t k = 0; k < trials; ++k) {
    tape.rewind(base);
    const Vector x2 = sample_ball(m, radius, rng);
    const Vector z = sample_or_empty(l, radius, rng);
    const Var x = tape.constant(x2);
    const Var zv = signal_or_empty(tape, z);

    const Matrix j = b->skew(x, zv).value();
    double asym = 0.0;
    for (std::size_t a = 0; a < m; ++a)
      for (std::size_t c = 0; c < m; ++c) asym = std::max(asym, std::abs(j(a, c) + j(c, a)));
    skew.worst = std::max(skew.worst, asym);
    ++skew.samples;

    const Matrix rm = b->damping(x, zv).value();
    double rsym = 0.0;
    for (std::size_t a = 0; a < m; ++a)
      for (std::size_t c = 0; c < m; ++c) rsym = std::max(rsym, std::abs(rm(a, c) - rm(c, a)));
    spd.worst = std::max({spd.worst, eps - symmetric_eigenvalues(rm).front(), rsym});
    ++spd.samples;

    if (!have_constants) continue;
    const double h = b->hamiltonian(x).scalar();
    const Vector grad = b->hamiltonian_gradient(x).value().to_vector();
    pl.worst = std::max(pl.worst, g2 * h - 0.5 * dot(grad, grad));
    ++pl.samples;
    quad.worst = std::max(quad.worst, 0.5 * g2 * dot(x2, x2) - h);
    ++quad.samples;
    const Vector y = b->output(x).value().to_vector();
    gain.worst = std::max(gain.worst, norm(y) - cert.mu_upper * norm(x2));
    ++gain.samples;
    Matrix jac(n, m);
    for (std::size_t i = 0; i < n; ++i) {
      Vector e(n, 0.0);
      e[i] = 1.0;
      const auto row = b->output_vjp(x, tape.constant(e)).values();
      std::copy(row.begin(), row.end(), jac.data() + i * m);
    }
    rank.worst = std::max(rank.worst, cert.mu_lower - singular_values(jac).back());
    ++rank.samples;
  }
  for (CheckRecord* r : {&skew, &spd}) {
    finish(*r);
    out.push_back(std::move(*r));
  }
  if (!have_constants) return out;
  for (CheckRecord* r : {&pl, &quad, &gain, &rank}) {
    finish(*r);
    out.push_back(std::move(*r));
  }

  if (const auto* nc = dynamic_cast<const NinodeController*>(&ctrl)) {
    try {
      const BiLipNet& core = nc->parts().hamiltonian.core();
      out.push_back(check_bilipschitz(core, core.certify(), pairs, radius, derive_seed(seed, 1),
                                      "hamiltonian_core_bilipschitz"));
      const BiLipNet& cbar = nc->parts().output;
      out.push_back(
          check_bilipschitz(cbar, cbar.certify(), pairs, radius, derive_seed(seed, 2), "output_net_bilipschitz"));
    } catch (const CertificationError& e) {
      CheckRecord r = make_record("bilipschitz", "bi-Lipschitz bounds mu|dx| <= |dy| <= nu|dx|", 1e-9);
      r.worst = std::numeric_limits<double>::infinity();
      r.detail = e.what();
      out.push_back(std::move(r));
    }
  }
  return out;
}

CheckRecord check_gradients(const MechanicalPlant& plant, const Controller& ctrl, const TrainConfig& config_in,
                            double fd_step, double tol) {
  CheckRecord r = make_record("gradients", "BPTT gradient matches central differences", tol);
  TrainConfig config = config_in;
  config.window = 0;
  const LossGradient lg = loss_and_gradient(plant, ctrl, config);
  std::unique_ptr<Controller> probe = ctrl.clone();
  const std::vector<Matrix*> params = probe->parameters();
  Vector analytic, numeric;
  for (std::size_t i = 0; i < params.size(); ++i) {
    Matrix& p = *params[i];
    for (std::size_t k = 0; k < p.size(); ++k) {
      const double saved = p[k];
      p[k] = saved + fd_step;
      const double lp = evaluate_loss(plant, *probe, config);
      p[k] = saved - fd_step;
      const double lm = evaluate_loss(plant, *probe, config);
      p[k] = saved;
      analytic.push_back(lg.gradient[i][k]);
      numeric.push_back((lp - lm) / (2.0 * fd_step));
    }
  }
  r.samples = analytic.size();
  r.worst = gradient_mismatch(analytic, numeric);
  std::ostringstream d;
  d << std::setprecision(6) << "loss=" << lg.loss << " |grad|=" << lg.grad_norm << " steps=" << config.steps;
  r.detail = d.str();
  r.pass = r.worst <= r.tol;
  return r;
}

VerificationReport run_verification(const MechanicalPlant& plant, const Controller& ctrl,
                                    const VerifyOptions& options) {
  using Task = std::function<std::vector<CheckRecord>()>;
  const double eta = plant.has_eta() ? plant.eta() : 0.0;
  ClosedLoopState initial = options.initial;
  if (initial.plant.q.size() != plant.dim()) throw ContractError("verify: initial state does not match the plant");
  if (initial.plant.p.empty()) initial.plant.p.assign(plant.dim(), 0.0);
  if (initial.x2.empty()) initial.x2.assign(ctrl.state_dim(), 0.0);
  std::vector<std::pair<std::string, Task>> tasks;
  tasks.emplace_back("ni_plant", [&] {
    return std::vector{check_ni_plant(plant, options.structural_samples, options.plant_radius,
                                      derive_seed(options.seed, 0))};
  });
  tasks.emplace_back("ni_controller", [&] {
    return std::vector{
        check_ni_controller(ctrl, options.structural_samples, options.radius, derive_seed(options.seed, 1))};
  });
  tasks.emplace_back("certified_nets", [&] {
    return check_certified_nets(ctrl, eta, options.structural_samples, options.pair_samples, options.radius,
                                derive_seed(options.seed, 2));
  });
  tasks.emplace_back("lyapunov", [&] {
    SimulationOptions sim = options.simulation;
    sim.allow_uncertified = true;
    return std::vector{check_lyapunov(rollout(plant, ctrl, initial, options.rollout_steps, sim))};
  });
  if (options.gradient_steps > 0) {
    tasks.emplace_back("gradients", [&] {
      TrainConfig tc;
      tc.steps = options.gradient_steps;
      tc.h = options.simulation.h;
      tc.substeps = 1;
      tc.q0 = initial.plant.q;
      tc.r = 1.0;
      return std::vector{check_gradients(plant, ctrl, tc)};
    });
  }

  std::vector<std::future<std::vector<CheckRecord>>> futures;
  for (auto& t : tasks) futures.push_back(std::async(std::launch::async, t.second));
  VerificationReport report;
  for (std::size_t i = 0; i < futures.size(); ++i) {
    try {
      for (auto& c : futures[i].get()) report.checks.push_back(std::move(c));
    } catch (const std::exception& e) {
      CheckRecord r = make_record(tasks[i].first, "check could not be evaluated", 0.0);
      r.worst = std::numeric_limits<double>::infinity();
      r.detail = e.what();
      report.checks.push_back(std::move(r));
    }
  }
  return report;
}

}  // namespace ninode
