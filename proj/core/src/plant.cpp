#include "ninode/plant.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "ninode/errors.hpp"
#include "ninode/linalg.hpp"

namespace ninode {

void SpringChainParams::validate() const {
  const std::size_t n = masses.size();
  if (n == 0) throw ContractError("spring chain: no masses");
  if (linear.size() != n || cubic.size() != n)
    throw ContractError("spring chain: masses, linear and cubic stiffness lengths differ");
  for (std::size_t i = 0; i < n; ++i) {
    if (!(masses[i] > 0.0) || !std::isfinite(masses[i])) throw ContractError("spring chain: masses must be positive");
    if (!(linear[i] > 0.0) || !std::isfinite(linear[i]))
      throw ContractError("spring chain: linear stiffnesses must be positive");
    if (!(cubic[i] >= 0.0) || !std::isfinite(cubic[i]))
      throw ContractError("spring chain: cubic stiffnesses must be non-negative");
  }
}

SpringChainParams SpringChainParams::reference() {
  return {{0.02, 0.01, 0.03}, {15.0, 10.0, 20.0}, {5.0, 2.0, 3.0}};
}

// Spring i has extension d_i = q_i - q_{i-1} (q_0 = 0).

SpringChainPotential::SpringChainPotential(SpringChainParams params) : params_(std::move(params)) {
  params_.validate();
}

double SpringChainPotential::value(std::span<const double> q) const {
  const std::size_t n = dim();
  if (q.size() != n) throw ContractError("potential: dimension mismatch");
  Vector terms(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double d = q[i] - (i == 0 ? 0.0 : q[i - 1]);
    const double d2 = d * d;
    terms[i] = 0.5 * params_.linear[i] * d2 + 0.25 * params_.cubic[i] * d2 * d2;
  }
  return pairwise_sum(terms);
}

Vector SpringChainPotential::gradient(std::span<const double> q) const {
  const std::size_t n = dim();
  if (q.size() != n) throw ContractError("potential: dimension mismatch");
  Vector force(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double d = q[i] - (i == 0 ? 0.0 : q[i - 1]);
    force[i] = params_.linear[i] * d + params_.cubic[i] * d * d * d;
  }
  Vector g(n);
  for (std::size_t i = 0; i < n; ++i) g[i] = force[i] - (i + 1 < n ? force[i + 1] : 0.0);
  return g;
}

Vector SpringChainPotential::hessian_times(std::span<const double> q, std::span<const double> w) const {
  const std::size_t n = dim();
  if (q.size() != n || w.size() != n) throw ContractError("potential: dimension mismatch");
  Vector t(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double d = q[i] - (i == 0 ? 0.0 : q[i - 1]);
    const double dw = w[i] - (i == 0 ? 0.0 : w[i - 1]);
    t[i] = (params_.linear[i] + 3.0 * params_.cubic[i] * d * d) * dw;
  }
  Vector out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = t[i] - (i + 1 < n ? t[i + 1] : 0.0);
  return out;
}

QuadraticPotential::QuadraticPotential(Matrix stiffness) : k_(std::move(stiffness)) {
  if (!is_symmetric(k_)) throw ContractError("QuadraticPotential: stiffness must be symmetric");
}

double QuadraticPotential::value(std::span<const double> q) const { return 0.5 * dot(q, matvec(k_, q)); }

Vector QuadraticPotential::gradient(std::span<const double> q) const { return matvec(k_, q); }

Vector QuadraticPotential::hessian_times(std::span<const double>, std::span<const double> w) const {
  return matvec(k_, w);
}

Matrix assemble_stiffness(const SpringChainParams& params) {
  params.validate();
  const std::size_t n = params.dim();
  Matrix k(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    k(i, i) = params.linear[i] + (i + 1 < n ? params.linear[i + 1] : 0.0);
    if (i + 1 < n) {
      k(i, i + 1) = -params.linear[i + 1];
      k(i + 1, i) = -params.linear[i + 1];
    }
  }
  return k;
}

// MechanicalPlant

MechanicalPlant::MechanicalPlant(Vector masses, std::shared_ptr<const Potential> potential,
                                 std::optional<Matrix> damping, std::optional<Matrix> stiffness)
    : masses_(std::move(masses)), potential_(std::move(potential)), stiffness_(std::move(stiffness)) {
  const std::size_t n = masses_.size();
  if (n == 0 || !potential_ || potential_->dim() != n)
    throw ContractError("MechanicalPlant: masses and potential dimensions differ");
  for (double m : masses_)
    if (!(m > 0.0) || !std::isfinite(m)) throw ContractError("MechanicalPlant: masses must be positive");
  if (damping) {
    if (damping->rows() != n || !is_symmetric(*damping))
      throw ContractError("MechanicalPlant: damping must be a symmetric n x n matrix");
    if (symmetric_eigenvalues(*damping).front() < -1e-12)
      throw ContractError("MechanicalPlant: damping must be positive semidefinite");
    damping_ = *damping;
    has_damping_ = max_abs(damping_.span()) > 0.0;
  } else {
    damping_ = Matrix(n, n);
  }
  if (stiffness_ && (stiffness_->rows() != n || !is_symmetric(*stiffness_)))
    throw ContractError("MechanicalPlant: stiffness must be a symmetric n x n matrix");
}

MechanicalPlant MechanicalPlant::spring_chain(const SpringChainParams& params, std::optional<Vector> damping_diag) {
  params.validate();
  std::optional<Matrix> damping;
  if (damping_diag) {
    if (damping_diag->size() != params.dim()) throw ContractError("spring chain: damping length mismatch");
    damping = Matrix::diagonal(*damping_diag);
  }
  return MechanicalPlant(params.masses, std::make_shared<SpringChainPotential>(params), damping,
                         assemble_stiffness(params));
}

double MechanicalPlant::eta() const {
  if (!eta_) throw CertificationError("plant: eta has not been certified");
  return *eta_;
}

void MechanicalPlant::set_eta(double eta) {
  if (!(eta > 0.0) || !std::isfinite(eta)) throw ContractError("plant: eta must be positive");
  eta_ = eta;
}

void MechanicalPlant::check_state(const PlantState& x) const {
  if (x.q.size() != dim() || x.p.size() != dim()) throw ContractError("plant: state dimension mismatch");
  for (std::size_t i = 0; i < dim(); ++i)
    if (!std::isfinite(x.q[i]) || !std::isfinite(x.p[i])) throw NumericError("plant: non-finite state");
}

Vector MechanicalPlant::velocity(std::span<const double> p) const {
  Vector v(p.size());
  for (std::size_t i = 0; i < p.size(); ++i) v[i] = p[i] / masses_[i];
  return v;
}

PlantDerivative MechanicalPlant::dynamics(const PlantState& x, std::span<const double> u) const {
  check_state(x);
  if (u.size() != dim()) throw ContractError("plant: input dimension mismatch");
  const Vector v = velocity(x.p);
  Vector pdot = potential_->gradient(x.q);
  for (double& g : pdot) g = -g;
  if (mass_derivative_) {
    const Vector md = mass_derivative_(x);
    for (std::size_t i = 0; i < dim(); ++i) pdot[i] -= 0.5 * md[i];
  }
  if (has_damping_) {
    const Vector rv = matvec(damping_, v);
    for (std::size_t i = 0; i < dim(); ++i) pdot[i] -= rv[i];
  }
  for (std::size_t i = 0; i < dim(); ++i) pdot[i] += u[i];
  return {v, pdot};
}

Vector MechanicalPlant::output(const PlantState& x) const { return x.q; }

double MechanicalPlant::hamiltonian(const PlantState& x) const {
  check_state(x);
  const Vector v = velocity(x.p);
  return potential_->value(x.q) + 0.5 * dot(x.p, v);
}

Vector sample_ball(std::size_t n, double radius, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> uniform(0.0, 1.0);
  Vector x(n);
  double nx = 0.0;
  do {
    for (double& xi : x) xi = normal(rng);
    nx = norm(x);
  } while (nx == 0.0);
  const double r = radius * std::pow(uniform(rng), 1.0 / static_cast<double>(n));
  for (double& xi : x) xi *= r / nx;
  return x;
}

EtaReport estimate_eta(const MechanicalPlant& plant, double radius, std::size_t samples, std::uint64_t seed) {
  if (!plant.stiffness()) throw ContractError("estimate_eta: plant has no assembled stiffness matrix");
  if (!(radius > 0.0) || samples == 0) throw ContractError("estimate_eta: need a positive radius and samples");
  const std::size_t n = plant.dim();
  const Potential& pot = plant.potential();

  struct Sample {
    double q2, v, g2;
  };
  std::vector<Sample> pts;
  pts.reserve(samples);
  std::mt19937_64 rng(seed);
  for (std::size_t s = 0; s < samples; ++s) {
    const Vector q = sample_ball(n, radius, rng);
    const Vector g = pot.gradient(q);
    pts.push_back({dot(q, q), pot.value(q), dot(g, g)});
  }

  // Relative round-off allowance so that equality cases (pure quadratics) pass.
  constexpr double kSlack = 1e-12;
  auto margins = [&](double eta, std::size_t& violations, double& pd, double& pl) {
    violations = 0;
    pd = std::numeric_limits<double>::infinity();
    pl = std::numeric_limits<double>::infinity();
    for (const Sample& p : pts) {
      const double pd_rhs = 0.5 * eta * p.q2;
      const double pl_lhs = 0.5 * p.g2;
      const double pl_rhs = eta * p.v;
      const double m1 = p.v - pd_rhs;
      const double m2 = pl_lhs - pl_rhs;
      pd = std::min(pd, m1);
      pl = std::min(pl, m2);
      if (m1 < -kSlack * std::abs(pd_rhs) || m2 < -kSlack * std::abs(pl_rhs)) ++violations;
    }
  };

  EtaReport report;
  report.lambda_min = symmetric_eigenvalues(*plant.stiffness()).front();
  report.radius = radius;
  report.samples = samples;
  double eta = report.lambda_min;
  std::size_t violations = 0;
  margins(eta, violations, report.worst_pd_margin, report.worst_pl_margin);
  report.initial_violations = violations;
  while (violations > 0) {
    eta *= 0.5;
    ++report.halvings;
    if (eta < 1e-6) throw CertificationError("estimate_eta: eta fell below 1e-6 without a clean sample set");
    margins(eta, violations, report.worst_pd_margin, report.worst_pl_margin);
  }
  if (!(eta > 0.0)) throw CertificationError("estimate_eta: stiffness is not positive definite");
  report.eta = eta;
  return report;
}

// Tape terms

namespace {

class PotentialGradientFn final : public ad::ExternalFunction {
 public:
  explicit PotentialGradientFn(std::shared_ptr<const Potential> v) : v_(std::move(v)) {}
  std::size_t output_size(std::size_t n) const override { return n; }
  void forward(std::span<const double> in, std::span<double> out) const override {
    const Vector g = v_->gradient(in);
    std::copy(g.begin(), g.end(), out.begin());
  }
  void vjp(std::span<const double> in, std::span<const double> out_bar, std::span<double> in_bar) const override {
    const Vector h = v_->hessian_times(in, out_bar);
    std::copy(h.begin(), h.end(), in_bar.begin());
  }

 private:
  std::shared_ptr<const Potential> v_;
};

class PotentialValueFn final : public ad::ExternalFunction {
 public:
  explicit PotentialValueFn(std::shared_ptr<const Potential> v) : v_(std::move(v)) {}
  std::size_t output_size(std::size_t) const override { return 1; }
  void forward(std::span<const double> in, std::span<double> out) const override { out[0] = v_->value(in); }
  void vjp(std::span<const double> in, std::span<const double> out_bar, std::span<double> in_bar) const override {
    const Vector g = v_->gradient(in);
    for (std::size_t i = 0; i < g.size(); ++i) in_bar[i] = out_bar[0] * g[i];
  }

 private:
  std::shared_ptr<const Potential> v_;
};

}  // namespace

BoundPlant::BoundPlant(const MechanicalPlant& plant, ad::Tape& tape) : plant_(&plant) {
  if (plant.has_mass_derivative())
    throw ContractError("BoundPlant: position-dependent mass matrices are not supported on the tape");
  Vector inv(plant.dim());
  for (std::size_t i = 0; i < plant.dim(); ++i) inv[i] = 1.0 / plant.masses()[i];
  inv_mass_ = tape.constant(inv);
  if (plant.has_damping()) damping_ = tape.constant(plant.damping());
  grad_fn_ = tape.add_external(std::make_shared<PotentialGradientFn>(plant.potential_ptr()));
  value_fn_ = tape.add_external(std::make_shared<PotentialValueFn>(plant.potential_ptr()));
}

ad::Var BoundPlant::qdot(ad::Var p) const { return ad::hadamard(inv_mass_, p); }

ad::Var BoundPlant::pdot(ad::Var q, ad::Var p, ad::Var u) const {
  ad::Var f = u - ad::external(grad_fn_, q);
  if (plant_->has_damping()) f = f - ad::matmul(damping_, qdot(p));
  return f;
}

ad::Var BoundPlant::hamiltonian(ad::Var q, ad::Var p) const {
  return ad::external(value_fn_, q) + 0.5 * ad::dot(p, qdot(p));
}

}  // namespace ninode
