// Acceptance run: one PASS/FAIL line per criterion, nonzero exit on any failure.
#include <Eigen/Eigenvalues>

#include <bit>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <future>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "ninode/io.hpp"
#include "ninode/verify.hpp"

using namespace ninode;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
  /// Bit patterns of every number the criterion depends on.
  std::string fingerprint;
  double seconds = 0.0;
};

class Bits {
 public:
  Bits& operator<<(double v) {
    char buf[20];
    std::snprintf(buf, sizeof buf, "%016llx ", static_cast<unsigned long long>(std::bit_cast<std::uint64_t>(v)));
    s_ += buf;
    return *this;
  }
  Bits& operator<<(const std::string& v) {
    s_ += v + ' ';
    return *this;
  }
  Bits& operator<<(const CheckRecord& r) { return *this << r.name << r.worst << static_cast<double>(r.samples); }
  std::string str() const { return s_; }

 private:
  std::string s_;
};

std::string fmt(double v) {
  std::ostringstream s;
  s.precision(4);
  s << v;
  return s.str();
}

const CheckRecord& pick(const std::vector<CheckRecord>& rs, const std::string& name) {
  for (const auto& r : rs)
    if (r.name == name) return r;
  throw std::runtime_error("missing check " + name);
}

struct Context {
  ExperimentConfig config;
  MechanicalPlant plant;
  EtaReport eta;
};

Context make_context(const std::string& config_path) {
  Context c{load_config(config_path), MechanicalPlant::spring_chain(SpringChainParams::reference()), {}};
  c.plant = build_plant(c.config, &c.eta);
  return c;
}

Outcome structural(const Context& ctx) {
  const auto ctrl = build_ninode(ctx.config, ctx.plant.eta());
  const auto rs = check_certified_nets(*ctrl, ctx.plant.eta(), 10000, 10000, 5.0, ctx.config.seed);
  const auto spd_only = check_certified_nets(*ctrl, ctx.plant.eta(), 1000, 1, 5.0, derive_seed(ctx.config.seed, 9));
  const CheckRecord& skew = pick(rs, "skew_exactness");
  const CheckRecord& spd = pick(spd_only, "spd_floor");
  const CheckRecord& pl = pick(rs, "pl_inequality");
  const CheckRecord& core = pick(rs, "hamiltonian_core_bilipschitz");
  const CheckRecord& out = pick(rs, "output_net_bilipschitz");
  Outcome o;
  o.pass = pick(rs, "regularity").pass && skew.worst <= 1e-15 && spd.worst <= 1e-9 && pl.worst <= 1e-9 &&
           core.worst <= 1e-9 && out.worst <= 1e-9 && core.samples == 10000 && pl.samples == 10000;
  o.detail = "skew " + fmt(skew.worst) + ", eps-eigmin(R2) " + fmt(spd.worst) + ", PL " + fmt(pl.worst) +
             ", bi-Lipschitz " + fmt(std::max(core.worst, out.worst));
  Bits b;
  for (const auto& r : rs) b << r;
  b << spd;
  o.fingerprint = b.str();
  return o;
}

Outcome plant_ni(const Context& ctx) {
  const CheckRecord free = check_ni_plant(ctx.plant, 10000, 1.0, ctx.config.seed);
  const MechanicalPlant damped =
      MechanicalPlant::spring_chain(ctx.config.plant.params, Vector{0.05, 0.1, 0.2});
  const CheckRecord wet = check_ni_plant(damped, 10000, 1.0, ctx.config.seed);
  Outcome o;
  o.pass = free.pass && wet.pass && free.worst <= 1e-10 && wet.worst <= 1e-10;
  o.detail = "frictionless " + fmt(free.worst) + ", damped " + fmt(wet.worst);
  o.fingerprint = (Bits() << free << wet).str();
  return o;
}

Outcome eta_certification(const Context& ctx) {
  const Matrix k = assemble_stiffness(ctx.config.plant.params);
  Eigen::Matrix3d ek;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) ek(i, j) = k(i, j);
  const double oracle = Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d>(ek).eigenvalues().minCoeff();
  const EtaReport r = estimate_eta(ctx.plant, 5.0, 100000, ctx.config.seed);
  const Matrix expected{{25, -10, 0}, {-10, 30, -20}, {0, -20, 20}};
  Outcome o;
  o.pass = k == expected && std::abs(r.lambda_min - oracle) <= 1e-9 && r.initial_violations == 0 &&
           r.halvings == 0 && r.samples == 100000 && r.worst_pd_margin >= 0.0 && r.worst_pl_margin >= 0.0;
  o.detail = "lambda_min " + fmt(r.lambda_min) + " vs oracle " + fmt(oracle) + ", violations " +
             std::to_string(r.initial_violations) + ", eta " + fmt(r.eta);
  o.fingerprint = (Bits() << r.lambda_min << r.eta << r.worst_pd_margin << r.worst_pl_margin).str();
  return o;
}

Outcome lyapunov(const Context& ctx) {
  const auto ctrl = build_ninode(ctx.config, ctx.plant.eta());
  const Trajectory t = rollout(ctx.plant, *ctrl, initial_state(ctx.config.train, ctrl->state_dim()), 5000,
                               ctx.config.simulation);
  const CheckRecord r = check_lyapunov(t);
  Outcome o;
  o.pass = r.pass && std::abs(t.back().t - 10.0) < 1e-9;
  o.detail = "worst per-step increase " + fmt(r.worst) + ", W(0) " + fmt(t.records.front().w) + " -> W(10 s) " +
             fmt(t.back().w);
  o.fingerprint = (Bits() << r << t.back().w << t.back().q[0]).str();
  return o;
}

Outcome conservation(const Context& ctx) {
  const Trajectory t = open_loop_rollout(ctx.plant, {{1, 2, 3}, {0, 0, 0}}, 5000, ctx.config.simulation);
  const double h0 = t.records.front().h1;
  double worst = 0.0;
  for (const auto& r : t.records) worst = std::max(worst, std::abs(r.h1 - h0) / h0);
  Outcome o;
  o.pass = worst <= 1e-6 && std::abs(t.back().t - 10.0) < 1e-9;
  o.detail = "relative H1 drift " + fmt(worst) + " over 10 s";
  o.fingerprint = (Bits() << worst << t.back().h1).str();
  return o;
}

Outcome gradients(const Context& ctx) {
  const auto ctrl = build_ninode(ctx.config, ctx.plant.eta());
  TrainConfig tc = resolved_train_config(ctx.config, ctx.plant.dim(), ctrl->state_dim());
  tc.steps = 10;
  tc.window = 0;
  const CheckRecord r = check_gradients(ctx.plant, *ctrl, tc);
  Outcome o;
  o.pass = r.pass && r.worst <= 1e-4;
  o.detail = "relative mismatch " + fmt(r.worst) + " over " + std::to_string(r.samples) + " parameters";
  o.fingerprint = (Bits() << r).str();
  return o;
}

struct Trained {
  TrainResult ninode, linear;
  double ninode_loss = 0.0, linear_loss = 0.0;
};

Trained train_both(const Context& ctx) {
  const auto n0 = build_ninode(ctx.config, ctx.plant.eta());
  const auto l0 = build_linear(ctx.config, ctx.plant.eta());
  const TrainConfig tc = resolved_train_config(ctx.config, ctx.plant.dim(), n0->state_dim());
  auto fn = std::async(std::launch::async, [&] { return train(ctx.plant, *n0, tc); });
  auto fl = std::async(std::launch::async, [&] { return train(ctx.plant, *l0, tc); });
  Trained t{fn.get(), fl.get()};
  t.ninode_loss = evaluate_loss(ctx.plant, *t.ninode.controller, tc);
  t.linear_loss = evaluate_loss(ctx.plant, *t.linear.controller, tc);
  return t;
}

Outcome convergence(const Context& ctx, const Trained& t) {
  const Controller& ctrl = *t.ninode.controller;
  const Trajectory traj =
      rollout(ctx.plant, ctrl, initial_state(ctx.config.train, ctrl.state_dim()), 5000, ctx.config.simulation);
  const double q0 = norm(ctx.config.train.q0) * ctx.config.train.r;
  const double qT = norm(traj.back().q);
  std::size_t rises = 0;
  for (std::size_t k = 1; k < traj.records.size(); ++k)
    if (!(traj.records[k].w < traj.records[k - 1].w)) ++rises;
  Outcome o;
  o.pass = t.ninode.history.size() >= 201 && qT <= 0.1 * q0 && rises == 0 && t.ninode.certificate.pass;
  o.detail = "|q(10 s)| " + fmt(qT) + " vs bound " + fmt(0.1 * q0) + ", non-decreasing W steps " +
             std::to_string(rises) + ", epochs " + std::to_string(t.ninode.history.size() - 1);
  o.fingerprint = (Bits() << parameter_digest(*t.ninode.controller) << qT << traj.back().w).str();
  return o;
}

Outcome baseline(const Trained& t) {
  Outcome o;
  o.pass = t.ninode_loss <= 1.05 * t.linear_loss;
  o.detail = "r=1 loss NINODE " + fmt(t.ninode_loss) + " vs linear NI " + fmt(t.linear_loss);
  o.fingerprint =
      (Bits() << parameter_digest(*t.linear.controller) << t.ninode_loss << t.linear_loss).str();
  return o;
}

std::vector<Outcome> run_criteria(const std::string& config_path) {
  const Context ctx = make_context(config_path);
  using Clock = std::chrono::steady_clock;
  const auto timed = [](const std::function<Outcome()>& f) {
    const auto t0 = Clock::now();
    Outcome o;
    try {
      o = f();
    } catch (const std::exception& e) {
      o.pass = false;
      o.detail = std::string("error: ") + e.what();
      o.fingerprint = o.detail;
    }
    o.seconds = std::chrono::duration<double>(Clock::now() - t0).count();
    return o;
  };
  std::vector<std::future<Outcome>> jobs;
  jobs.push_back(std::async(std::launch::async, [&] { return timed([&] { return structural(ctx); }); }));
  jobs.push_back(std::async(std::launch::async, [&] { return timed([&] { return plant_ni(ctx); }); }));
  jobs.push_back(std::async(std::launch::async, [&] { return timed([&] { return eta_certification(ctx); }); }));
  jobs.push_back(std::async(std::launch::async, [&] { return timed([&] { return lyapunov(ctx); }); }));
  jobs.push_back(std::async(std::launch::async, [&] { return timed([&] { return conservation(ctx); }); }));
  jobs.push_back(std::async(std::launch::async, [&] { return timed([&] { return gradients(ctx); }); }));
  std::vector<Outcome> out;
  for (auto& j : jobs) out.push_back(j.get());

  const auto t0 = Clock::now();
  try {
    const Trained t = train_both(ctx);
    const double train_seconds = std::chrono::duration<double>(Clock::now() - t0).count();
    out.push_back(timed([&] { return convergence(ctx, t); }));
    out.back().seconds += train_seconds;
    out.push_back(timed([&] { return baseline(t); }));
    out.back().seconds += train_seconds;
  } catch (const std::exception& e) {
    for (int i = 0; i < 2; ++i) out.push_back({false, std::string("error: ") + e.what(), e.what(), 0.0});
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  const std::string config = argc > 1 ? argv[1] : NINODE_DEFAULT_CONFIG;
  const char* names[] = {"structural certificates", "plant NI identity",   "eta certification",
                         "Lyapunov decrease",       "energy conservation", "BPTT gradient",
                         "trained convergence",     "baseline comparison"};
  const double budgets[] = {60, 60, 60, 30, 60, 60, 600, 600};

  auto first = std::async(std::launch::async, [&] { return run_criteria(config); });
  auto second = std::async(std::launch::async, [&] { return run_criteria(config); });
  const std::vector<Outcome> a = first.get();
  const std::vector<Outcome> b = second.get();

  bool all = true;
  std::size_t differing = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const bool within = a[i].seconds <= budgets[i];
    const bool ok = a[i].pass && within;
    all = all && ok;
    if (a[i].fingerprint != b[i].fingerprint) ++differing;
    std::cout << (ok ? "PASS" : "FAIL") << "  criterion " << i + 1 << " " << names[i] << ": " << a[i].detail
              << " (" << fmt(a[i].seconds) << " s" << (within ? "" : ", over budget") << ")\n";
  }
  const bool same = differing == 0;
  all = all && same;
  std::cout << (same ? "PASS" : "FAIL") << "  criterion 9 determinism: two concurrent runs of criteria 1-8, "
            << differing << " of " << a.size() << " fingerprints differ\n";
  std::cout << (all ? "all criteria passed" : "acceptance FAILED") << '\n';
  return all ? 0 : 1;
}
