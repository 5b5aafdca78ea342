#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "ninode/matrix.hpp"
#include "ninode/nets.hpp"
#include "ninode/tape.hpp"

namespace ninode {

/// Outcome of checking 0 < mu_lower <= mu_upper < sqrt(eta) gamma with exact constants.
struct RegularityCertificate {
  double gamma = 0.0;
  double mu_lower = 0.0;
  double mu_upper = 0.0;
  double eta = 0.0;
  /// sqrt(eta) gamma - mu_upper; positive iff the strict inequality holds.
  double margin = 0.0;
  bool pass = false;
  std::string reason;

  /// mu_upper / (sqrt(eta) gamma); below one for a passing certificate.
  double ratio() const;
};

/// Controller quantities for one integration stage.
struct ControllerStage {
  ad::Var xdot;  // m x 1
  ad::Var y;     // n x 1, the force applied to the plant
};

/// A controller whose parameters have been placed on a tape.
class BoundController {
 public:
  virtual ~BoundController() = default;
  /// xdot = (J - R)(grad H(x2) - Jac(C2, x2)^T u2) and y = C2(x2).
  virtual ControllerStage stage(ad::Var x2, ad::Var u2, ad::Var z) const = 0;
  virtual ad::Var output(ad::Var x2) const = 0;
  virtual ad::Var hamiltonian(ad::Var x2) const = 0;
  virtual ad::Var hamiltonian_gradient(ad::Var x2) const = 0;
  /// Jac(C2, x2)^T w for w in R^n.
  virtual ad::Var output_vjp(ad::Var x2, ad::Var w) const = 0;
  virtual ad::Var skew(ad::Var x2, ad::Var z) const = 0;
  virtual ad::Var damping(ad::Var x2, ad::Var z) const = 0;
};

/// Input-output Hamiltonian controller with dissipation, y = C2(x2).
class Controller {
 public:
  virtual ~Controller() = default;

  virtual std::string kind() const = 0;
  virtual std::size_t state_dim() const = 0;
  virtual std::size_t output_dim() const = 0;
  virtual std::size_t signal_dim() const = 0;
  virtual double kappa() const = 0;
  /// Lower bound epsilon on the eigenvalues of R2.
  virtual double damping_floor() const = 0;

  virtual std::unique_ptr<BoundController> bind(ad::Tape& tape, bool trainable) const = 0;
  /// Raw trainable arrays, in the order bind() registers parameter slots.
  virtual std::vector<Matrix*> parameters() = 0;
  /// Normalization directions, in a fixed order (persisted in checkpoints).
  virtual std::vector<PowerIteration*> power_states() = 0;
  /// Updates normalization directions (power iteration) between rollouts.
  virtual void refresh(NormRefresh mode, int iters = 20) = 0;
  /// Exact-constant regularity check against a plant PL constant; never throws
  /// for failing constants (the certificate records the reason).
  virtual RegularityCertificate certify(double eta) const = 0;
  virtual std::unique_ptr<Controller> clone() const = 0;

  // Plain evaluation (each call binds on a private tape).
  Vector dynamics(std::span<const double> x2, std::span<const double> u2, std::span<const double> z = {}) const;
  Vector output(std::span<const double> x2) const;
  double hamiltonian(std::span<const double> x2) const;
  Vector hamiltonian_gradient(std::span<const double> x2) const;
  /// n x m Jacobian of the output map.
  Matrix output_jacobian(std::span<const double> x2) const;
  Matrix skew(std::span<const double> x2, std::span<const double> z = {}) const;
  Matrix damping(std::span<const double> x2, std::span<const double> z = {}) const;

  std::size_t parameter_count();

 protected:
  void check_dims(std::span<const double> x2, std::span<const double> u2, std::span<const double> z) const;
};

/// Evaluates the strict regularity inequality for given constants.
RegularityCertificate regularity_certificate(double gamma, double mu_lower, double mu_upper, double eta);

/// Throws CertificationError carrying (gamma, mu_upper, eta) if the certificate fails.
RegularityCertificate validate_regularity(const RegularityCertificate& cert);
RegularityCertificate validate_regularity(const Controller& ctrl, double eta);

struct NinodeConfig {
  std::size_t n = 3;
  std::size_t m = 6;
  std::size_t l = 0;
  std::size_t layers = 2;
  double alpha = 1.0;
  double beta = 0.5;
  std::size_t hidden = 32;
  std::size_t weight_layers = 2;
  bool orthogonal = false;
  std::size_t head_hidden = 32;
  std::size_t head_layers = 2;
  double epsilon = 0.1;
  double kappa = 0.9;
  /// Initial output scale s of the Hamiltonian core (gamma = s mu_G).
  double hamiltonian_scale = 4.0;
  std::uint64_t seed = 1;
};

/// Components of a NINODE controller; lets tests assemble identity-configured parts.
struct NinodeParts {
  PlnetHamiltonian hamiltonian;
  BiLipNet output;
  SkewHead skew;
  SpdHead spd;
};

/// NINODE controller: H2 = 1/2|s G(x2)|^2 with a bi-Lipschitz core G,
/// C2 = [I 0] s_C Cbar(x2) with a bi-Lipschitz Cbar, skew J2 and SPD R2 heads.
/// The output scale is tied to the Hamiltonian scale,
///   s_C = kappa sqrt(eta) s mu_G / nu_C   (nominal constants),
/// so mu_upper = kappa sqrt(eta) gamma holds for every parameter value.
class NinodeController final : public Controller {
 public:
  NinodeController(const NinodeConfig& config, double design_eta);
  NinodeController(NinodeParts parts, std::size_t n, double design_eta, double kappa);

  std::string kind() const override { return "ninode"; }
  std::size_t state_dim() const override { return parts_.hamiltonian.core().dim(); }
  std::size_t output_dim() const override { return n_; }
  std::size_t signal_dim() const override { return parts_.skew.signal_dim(); }
  double kappa() const override { return kappa_; }
  double damping_floor() const override { return parts_.spd.floor(); }
  double design_eta() const noexcept { return design_eta_; }
  /// s_C / s: fixed ratio between output and Hamiltonian scales.
  double output_scale_ratio() const;
  double output_scale() const { return output_scale_ratio() * parts_.hamiltonian.scale(); }

  NinodeParts& parts() noexcept { return parts_; }
  const NinodeParts& parts() const noexcept { return parts_; }

  std::unique_ptr<BoundController> bind(ad::Tape& tape, bool trainable) const override;
  std::vector<Matrix*> parameters() override;
  std::vector<PowerIteration*> power_states() override;
  void refresh(NormRefresh mode, int iters = 20) override;
  RegularityCertificate certify(double eta) const override;
  std::unique_ptr<Controller> clone() const override { return std::make_unique<NinodeController>(*this); }

 private:
  NinodeParts parts_;
  std::size_t n_;
  double design_eta_;
  double kappa_;
};

/// Linear NI controller: H2 = x^T P x with P = 1/2 s^2 (I + L L^T),
/// J2 = A - A^T, R2 = B B^T + eps I, C2 = [I 0] Cbar with
/// Cbar = kappa sqrt(eta) s V / |V|_2. gamma = sqrt(2 lambda_min(P)) >= s.
class LinearNiController final : public Controller {
 public:
  struct Params {
    Matrix log_scale{1, 1, 0.0};
    Matrix hamiltonian_factor;  // m(m+1)/2 column
    Matrix skew;                // m(m-1)/2 column
    Matrix damping_factor;      // m(m+1)/2 column
    Matrix output_raw;          // m x m
  };

  LinearNiController(std::size_t m, std::size_t n, double epsilon, double design_eta, double kappa,
                     Params params);

  std::string kind() const override { return "linear_ni"; }
  std::size_t state_dim() const override { return m_; }
  std::size_t output_dim() const override { return n_; }
  std::size_t signal_dim() const override { return 0; }
  double kappa() const override { return kappa_; }
  double damping_floor() const override { return epsilon_; }
  double design_eta() const noexcept { return design_eta_; }
  double epsilon() const noexcept { return epsilon_; }

  Params& params() noexcept { return params_; }
  const Params& params() const noexcept { return params_; }
  PowerIteration& power() noexcept { return power_; }
  const PowerIteration& power() const noexcept { return power_; }

  Matrix hamiltonian_matrix() const;
  /// Full m x m Cbar; the output map is its first n rows.
  Matrix output_matrix() const;
  Matrix skew_matrix() const;
  Matrix damping_matrix() const;

  std::unique_ptr<BoundController> bind(ad::Tape& tape, bool trainable) const override;
  std::vector<Matrix*> parameters() override;
  std::vector<PowerIteration*> power_states() override { return {&power_}; }
  void refresh(NormRefresh mode, int iters = 20) override;
  RegularityCertificate certify(double eta) const override;
  std::unique_ptr<Controller> clone() const override { return std::make_unique<LinearNiController>(*this); }

 private:
  std::size_t m_, n_;
  double epsilon_, design_eta_, kappa_;
  Params params_;
  PowerIteration power_;
};

/// Random linear NI controller whose certificate passes with margin kappa.
LinearNiController build_linear_ni(std::size_t m, std::size_t n, std::uint64_t seed, double eta,
                                   double kappa = 0.9, double epsilon = 0.1, double scale = 1.0);

}  // namespace ninode
