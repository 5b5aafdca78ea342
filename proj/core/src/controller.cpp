#include "ninode/controller.hpp"

#include <cmath>
#include <sstream>

#include "ninode/errors.hpp"
#include "ninode/linalg.hpp"

namespace ninode {

using ad::Var;

double RegularityCertificate::ratio() const {
  const double bound = std::sqrt(eta) * gamma;
  return bound > 0.0 ? mu_upper / bound : INFINITY;
}

RegularityCertificate regularity_certificate(double gamma, double mu_lower, double mu_upper, double eta) {
  RegularityCertificate c;
  c.gamma = gamma;
  c.mu_lower = mu_lower;
  c.mu_upper = mu_upper;
  c.eta = eta;
  c.margin = std::sqrt(eta) * gamma - mu_upper;
  std::ostringstream why;
  why.precision(17);
  if (!(eta > 0.0) || !(gamma > 0.0)) {
    why << "eta and gamma must be positive (eta=" << eta << ", gamma=" << gamma << ")";
  } else if (!(mu_lower > 0.0)) {
    why << "output map lower Lipschitz constant " << mu_lower << " is not positive";
  } else if (!(mu_lower <= mu_upper)) {
    why << "lower constant " << mu_lower << " exceeds upper constant " << mu_upper;
  } else if (!(c.margin > 0.0)) {
    why << "mu_upper=" << mu_upper << " is not below sqrt(eta)*gamma=" << std::sqrt(eta) * gamma
        << " (gamma=" << gamma << ", eta=" << eta << ")";
  }
  c.reason = why.str();
  c.pass = c.reason.empty();
  return c;
}

RegularityCertificate validate_regularity(const RegularityCertificate& cert) {
  if (!cert.pass) throw CertificationError("regularity check failed: " + cert.reason);
  return cert;
}

RegularityCertificate validate_regularity(const Controller& ctrl, double eta) {
  return validate_regularity(ctrl.certify(eta));
}

// Plain evaluation helpers

void Controller::check_dims(std::span<const double> x2, std::span<const double> u2,
                            std::span<const double> z) const {
  if (x2.size() != state_dim()) throw ContractError("controller: state dimension mismatch");
  if (u2.size() != output_dim()) throw ContractError("controller: input dimension mismatch");
  if (z.size() != signal_dim()) throw ContractError("controller: signal dimension mismatch");
}

namespace {

Var signal_var(ad::Tape& tape, std::span<const double> z) { return z.empty() ? Var{} : tape.constant(z); }

}  // namespace

Vector Controller::dynamics(std::span<const double> x2, std::span<const double> u2,
                            std::span<const double> z) const {
  check_dims(x2, u2, z);
  ad::Tape tape;
  auto b = bind(tape, false);
  return b->stage(tape.constant(x2), tape.constant(u2), signal_var(tape, z)).xdot.value().to_vector();
}

Vector Controller::output(std::span<const double> x2) const {
  if (x2.size() != state_dim()) throw ContractError("controller: state dimension mismatch");
  ad::Tape tape;
  auto b = bind(tape, false);
  return b->output(tape.constant(x2)).value().to_vector();
}

double Controller::hamiltonian(std::span<const double> x2) const {
  if (x2.size() != state_dim()) throw ContractError("controller: state dimension mismatch");
  ad::Tape tape;
  auto b = bind(tape, false);
  return b->hamiltonian(tape.constant(x2)).scalar();
}

Vector Controller::hamiltonian_gradient(std::span<const double> x2) const {
  if (x2.size() != state_dim()) throw ContractError("controller: state dimension mismatch");
  ad::Tape tape;
  auto b = bind(tape, false);
  return b->hamiltonian_gradient(tape.constant(x2)).value().to_vector();
}

Matrix Controller::output_jacobian(std::span<const double> x2) const {
  if (x2.size() != state_dim()) throw ContractError("controller: state dimension mismatch");
  const std::size_t n = output_dim(), m = state_dim();
  ad::Tape tape;
  auto b = bind(tape, false);
  Var x = tape.constant(x2);
  Matrix jac(n, m);
  for (std::size_t i = 0; i < n; ++i) {
    Vector e(n, 0.0);
    e[i] = 1.0;
    const auto row = b->output_vjp(x, tape.constant(e)).values();
    for (std::size_t j = 0; j < m; ++j) jac(i, j) = row[j];
  }
  return jac;
}

Matrix Controller::skew(std::span<const double> x2, std::span<const double> z) const {
  check_dims(x2, Vector(output_dim()), z);
  ad::Tape tape;
  auto b = bind(tape, false);
  return b->skew(tape.constant(x2), signal_var(tape, z)).value();
}

Matrix Controller::damping(std::span<const double> x2, std::span<const double> z) const {
  check_dims(x2, Vector(output_dim()), z);
  ad::Tape tape;
  auto b = bind(tape, false);
  return b->damping(tape.constant(x2), signal_var(tape, z)).value();
}

std::size_t Controller::parameter_count() {
  std::size_t total = 0;
  for (const Matrix* p : parameters()) total += p->size();
  return total;
}

// NINODE controller

namespace {

// [w; 0] in R^m for w in R^n.
Var pad_to(Var w, std::size_t m) {
  const std::size_t n = w.size();
  if (n == m) return w;
  const Var parts[2] = {w, w.tape->constant(Matrix(m - n, 1))};
  return ad::concat(parts);
}

Var head_input(Var x2, Var z) {
  if (z.tape == nullptr || z.size() == 0) return x2;
  const Var parts[2] = {x2, z};
  return ad::concat(parts);
}

class BoundNinode final : public BoundController {
 public:
  BoundNinode(const NinodeController& c, ad::Tape& tape, bool trainable)
      : m_(c.state_dim()),
        n_(c.output_dim()),
        binder_{tape, trainable},
        h_(c.parts().hamiltonian, binder_),
        out_(c.parts().output, binder_),
        skew_(c.parts().skew, binder_),
        spd_(c.parts().spd, binder_),
        out_scale_(c.output_scale_ratio() * h_.scale()) {}

  ControllerStage stage(Var x2, Var u2, Var z) const override {
    const Var grad = h_.evaluate(x2).gradient;
    const BiLipTrace trace = out_.forward(x2);
    const Var y = ad::scale(out_scale_, ad::slice(trace.output, 0, n_));
    const Var jt = ad::scale(out_scale_, out_.vjp(trace, pad_to(u2, m_)));
    const Var v = grad - jt;
    const Var feat = head_input(x2, z);
    const Var jr = skew_.evaluate(feat) - spd_.evaluate(feat);
    return {ad::matmul(jr, v), y};
  }

  Var output(Var x2) const override {
    return ad::scale(out_scale_, ad::slice(out_.forward(x2).output, 0, n_));
  }
  Var hamiltonian(Var x2) const override { return h_.evaluate(x2).value; }
  Var hamiltonian_gradient(Var x2) const override { return h_.evaluate(x2).gradient; }
  Var output_vjp(Var x2, Var w) const override {
    return ad::scale(out_scale_, out_.vjp(out_.forward(x2), pad_to(w, m_)));
  }
  Var skew(Var x2, Var z) const override { return skew_.evaluate(head_input(x2, z)); }
  Var damping(Var x2, Var z) const override { return spd_.evaluate(head_input(x2, z)); }

 private:
  std::size_t m_, n_;
  ParamBinder binder_;
  BoundPlnet h_;
  BoundBiLip out_;
  BoundSkewHead skew_;
  BoundSpdHead spd_;
  Var out_scale_;
};

NinodeParts make_parts(const NinodeConfig& cfg) {
  if (cfg.n == 0 || cfg.m < cfg.n) throw ContractError("NinodeController: require 1 <= n <= m");
  Rng rng(cfg.seed);
  BiLipConfig bl;
  bl.dim = cfg.m;
  bl.layers = cfg.layers;
  bl.alpha = cfg.alpha;
  bl.beta = cfg.beta;
  bl.hidden = cfg.hidden;
  bl.weight_layers = cfg.weight_layers;
  bl.orthogonal = cfg.orthogonal;
  BiLipNet core(bl, rng);
  BiLipNet out(bl, rng);
  SkewHead skew(cfg.m, cfg.l, cfg.head_hidden, cfg.head_layers, rng);
  SpdHead spd(cfg.m, cfg.l, cfg.head_hidden, cfg.head_layers, cfg.epsilon, rng);
  return {PlnetHamiltonian(std::move(core), cfg.hamiltonian_scale), std::move(out), std::move(skew),
          std::move(spd)};
}

}  // namespace

NinodeController::NinodeController(const NinodeConfig& config, double design_eta)
    : NinodeController(make_parts(config), config.n, design_eta, config.kappa) {}

NinodeController::NinodeController(NinodeParts parts, std::size_t n, double design_eta, double kappa)
    : parts_(std::move(parts)), n_(n), design_eta_(design_eta), kappa_(kappa) {
  const std::size_t m = parts_.hamiltonian.core().dim();
  if (n == 0 || m < n) throw ContractError("NinodeController: require 1 <= n <= m");
  if (parts_.output.dim() != m || parts_.skew.dim() != m || parts_.spd.dim() != m)
    throw ContractError("NinodeController: component dimensions disagree");
  if (parts_.skew.signal_dim() != parts_.spd.signal_dim())
    throw ContractError("NinodeController: heads disagree on signal dimension");
  if (!(design_eta > 0.0)) throw ContractError("NinodeController: design eta must be positive");
  if (!(kappa > 0.0 && kappa < 1.0)) throw ContractError("NinodeController: kappa must lie in (0, 1)");
}

double NinodeController::output_scale_ratio() const {
  const double mu_g = parts_.hamiltonian.core().nominal_constants().mu;
  const double nu_c = parts_.output.nominal_constants().nu;
  return kappa_ * std::sqrt(design_eta_) * mu_g / nu_c;
}

std::unique_ptr<BoundController> NinodeController::bind(ad::Tape& tape, bool trainable) const {
  return std::make_unique<BoundNinode>(*this, tape, trainable);
}

std::vector<Matrix*> NinodeController::parameters() {
  std::vector<Matrix*> out;
  parts_.hamiltonian.collect(out);
  parts_.output.collect(out);
  parts_.skew.collect(out);
  parts_.spd.collect(out);
  return out;
}

std::vector<PowerIteration*> NinodeController::power_states() {
  std::vector<PowerIteration*> out;
  for (BiLipNet* net : {&parts_.hamiltonian.core(), &parts_.output})
    for (auto& r : net->residuals())
      for (auto& p : r.power_state()) out.push_back(&p);
  return out;
}

void NinodeController::refresh(NormRefresh mode, int iters) {
  parts_.hamiltonian.core().refresh(mode, iters);
  parts_.output.refresh(mode, iters);
}

RegularityCertificate NinodeController::certify(double eta) const {
  try {
    const double gamma = parts_.hamiltonian.certified_gamma();
    const BiLipConstants c = parts_.output.certify();
    const double s = output_scale();
    return regularity_certificate(gamma, s * c.mu, s * c.nu, eta);
  } catch (const CertificationError& e) {
    RegularityCertificate r;
    r.eta = eta;
    r.reason = e.what();
    return r;
  }
}

// Linear NI controller

namespace {

class BoundLinear final : public BoundController {
 public:
  BoundLinear(const LinearNiController& c, ad::Tape& tape, bool trainable) : m_(c.state_dim()), n_(c.output_dim()) {
    const ParamBinder b{tape, trainable};
    const auto& p = c.params();
    const Var log_s = b.bind(p.log_scale);
    const Var hf = b.bind(p.hamiltonian_factor);
    const Var sk = b.bind(p.skew);
    const Var df = b.bind(p.damping_factor);
    const Var raw = b.bind(p.output_raw);
    const Var s = ad::exp(log_s);
    const Var s2 = ad::exp(2.0 * log_s);
    const Var l = ad::lower_from_vec(hf, m_);
    p_ = ad::scale(0.5 * s2, ad::add_identity(ad::matmul(l, ad::transpose(l)), 1.0));
    j_ = ad::skew_from_upper(sk, m_);
    const Var bl = ad::lower_from_vec(df, m_);
    r_ = ad::add_identity(ad::matmul(bl, ad::transpose(bl)), c.epsilon());
    const double gain = c.kappa() * std::sqrt(c.design_eta());
    c_ = ad::scale(gain * s, ad::spectral_normalize(raw, 1.0, c.power().left(p.output_raw), c.power().right()));
  }

  ControllerStage stage(Var x2, Var u2, Var) const override {
    const Var v = hamiltonian_gradient(x2) - output_vjp(x2, u2);
    return {ad::matmul(j_ - r_, v), output(x2)};
  }
  Var output(Var x2) const override { return ad::slice(ad::matmul(c_, x2), 0, n_); }
  Var hamiltonian(Var x2) const override { return ad::dot(x2, ad::matmul(p_, x2)); }
  Var hamiltonian_gradient(Var x2) const override { return 2.0 * ad::matmul(p_, x2); }
  Var output_vjp(Var, Var w) const override { return ad::matmul_tn(c_, pad_to(w, m_)); }
  Var skew(Var, Var) const override { return j_; }
  Var damping(Var, Var) const override { return r_; }

 private:
  std::size_t m_, n_;
  Var p_, j_, r_, c_;
};

Matrix lower_from(const Matrix& v, std::size_t m) {
  Matrix l(m, m);
  std::size_t k = 0;
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j <= i; ++j) l(i, j) = v[k++];
  return l;
}

}  // namespace

LinearNiController::LinearNiController(std::size_t m, std::size_t n, double epsilon, double design_eta,
                                       double kappa, Params params)
    : m_(m), n_(n), epsilon_(epsilon), design_eta_(design_eta), kappa_(kappa), params_(std::move(params)) {
  if (n == 0 || m < n) throw ContractError("LinearNiController: require 1 <= n <= m");
  if (!(epsilon > 0.0)) throw ContractError("LinearNiController: epsilon must be positive");
  if (!(design_eta > 0.0)) throw ContractError("LinearNiController: design eta must be positive");
  if (!(kappa > 0.0 && kappa < 1.0)) throw ContractError("LinearNiController: kappa must lie in (0, 1)");
  const std::size_t tri = m * (m + 1) / 2;
  if (params_.log_scale.size() != 1 || params_.hamiltonian_factor.size() != tri ||
      params_.skew.size() != m * (m - 1) / 2 || params_.damping_factor.size() != tri ||
      params_.output_raw.rows() != m || params_.output_raw.cols() != m)
    throw ContractError("LinearNiController: parameter shapes do not match m");
  power_.converge(params_.output_raw);
}

Matrix LinearNiController::hamiltonian_matrix() const {
  const Matrix l = lower_from(params_.hamiltonian_factor, m_);
  const double s = std::exp(params_.log_scale[0]);
  return (0.5 * s * s) * (Matrix::identity(m_) + matmul(l, l.transpose()));
}

Matrix LinearNiController::output_matrix() const {
  const Matrix& v = params_.output_raw;
  const Vector left = power_.left(v);
  const Vector vr = matvec(v, power_.right());
  const double sigma = pairwise_dot(left.data(), 1, vr.data(), 1, m_);
  const double gain = kappa_ * std::sqrt(design_eta_) * std::exp(params_.log_scale[0]) / sigma;
  return gain * v;
}

Matrix LinearNiController::skew_matrix() const {
  Matrix j(m_, m_);
  std::size_t k = 0;
  for (std::size_t r = 0; r < m_; ++r)
    for (std::size_t c = r + 1; c < m_; ++c) {
      j(r, c) = params_.skew[k];
      j(c, r) = -params_.skew[k];
      ++k;
    }
  return j;
}

Matrix LinearNiController::damping_matrix() const {
  const Matrix l = lower_from(params_.damping_factor, m_);
  return matmul(l, l.transpose()) + epsilon_ * Matrix::identity(m_);
}

std::unique_ptr<BoundController> LinearNiController::bind(ad::Tape& tape, bool trainable) const {
  return std::make_unique<BoundLinear>(*this, tape, trainable);
}

std::vector<Matrix*> LinearNiController::parameters() {
  return {&params_.log_scale, &params_.hamiltonian_factor, &params_.skew, &params_.damping_factor,
          &params_.output_raw};
}

void LinearNiController::refresh(NormRefresh mode, int iters) {
  switch (mode) {
    case NormRefresh::Frozen:
      break;
    case NormRefresh::Training:
      power_.estimate(params_.output_raw, iters);
      break;
    case NormRefresh::Converged:
      power_.converge(params_.output_raw);
      break;
  }
}

RegularityCertificate LinearNiController::certify(double eta) const {
  const Vector ev = symmetric_eigenvalues(hamiltonian_matrix());
  const double gamma = std::sqrt(2.0 * ev.front());
  const Vector sv = singular_values(output_matrix());
  return regularity_certificate(gamma, sv.back(), sv.front(), eta);
}

LinearNiController build_linear_ni(std::size_t m, std::size_t n, std::uint64_t seed, double eta, double kappa,
                                   double epsilon, double scale) {
  if (n == 0 || m < n) throw ContractError("build_linear_ni: require 1 <= n <= m");
  Rng rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  const std::size_t tri = m * (m + 1) / 2;
  LinearNiController::Params p;
  p.log_scale = Matrix(1, 1, std::log(scale));
  p.hamiltonian_factor = Matrix(tri, 1);
  p.skew = Matrix(m * (m - 1) / 2, 1);
  p.damping_factor = Matrix(tri, 1);
  p.output_raw = Matrix(m, m);
  const double g = 0.3 / std::sqrt(static_cast<double>(m));
  for (std::size_t i = 0; i < tri; ++i) p.hamiltonian_factor[i] = g * normal(rng);
  for (std::size_t i = 0; i < p.skew.size(); ++i) p.skew[i] = g * normal(rng);
  for (std::size_t i = 0; i < tri; ++i) p.damping_factor[i] = g * normal(rng);
  for (std::size_t i = 0; i < p.output_raw.size(); ++i) p.output_raw[i] = normal(rng);
  return LinearNiController(m, n, epsilon, eta, kappa, std::move(p));
}

}  // namespace ninode
