#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <random>
#include <span>

#include "ninode/matrix.hpp"
#include "ninode/tape.hpp"

namespace ninode {

/// Position / generalized-momentum pair of a mechanical plant.
struct PlantState {
  Vector q;
  Vector p;
};

struct PlantDerivative {
  Vector qdot;
  Vector pdot;
};

/// Potential energy V(q) with V(0) = 0 and grad V(0) = 0.
class Potential {
 public:
  virtual ~Potential() = default;
  virtual std::size_t dim() const = 0;
  virtual double value(std::span<const double> q) const = 0;
  virtual Vector gradient(std::span<const double> q) const = 0;
  /// Hessian-vector product (the Hessian is symmetric).
  virtual Vector hessian_times(std::span<const double> q, std::span<const double> w) const = 0;
};

/// Masses in series joined by springs with force law F = k_l d + k_n d^3;
/// spring 1 anchors mass 1 to the wall, spring i joins masses i-1 and i.
struct SpringChainParams {
  Vector masses;   // kg
  Vector linear;   // N/m
  Vector cubic;    // N/m^3

  std::size_t dim() const noexcept { return masses.size(); }
  /// Throws ContractError unless sizes agree, masses and linear stiffnesses are
  /// positive and cubic stiffnesses non-negative.
  void validate() const;

  /// The three-mass chain of the reference experiment.
  static SpringChainParams reference();
};

class SpringChainPotential final : public Potential {
 public:
  explicit SpringChainPotential(SpringChainParams params);
  std::size_t dim() const override { return params_.dim(); }
  double value(std::span<const double> q) const override;
  Vector gradient(std::span<const double> q) const override;
  Vector hessian_times(std::span<const double> q, std::span<const double> w) const override;

 private:
  SpringChainParams params_;
};

/// V(q) = 1/2 q^T K q.
class QuadraticPotential final : public Potential {
 public:
  explicit QuadraticPotential(Matrix stiffness);
  std::size_t dim() const override { return k_.rows(); }
  double value(std::span<const double> q) const override;
  Vector gradient(std::span<const double> q) const override;
  Vector hessian_times(std::span<const double> q, std::span<const double> w) const override;

 private:
  Matrix k_;
};

/// Returns grad_q(p^T M(q)^{-1} p); zero for constant mass matrices.
using MassDerivativeTerm = std::function<Vector(const PlantState&)>;

/// Fully actuated mechanical plant with colocated force input and position output:
///   qdot = M^{-1} p
///   pdot = -grad V(q) - 1/2 grad_q(p^T M^{-1} p) - r1 M^{-1} p + u
///   y = q
class MechanicalPlant {
 public:
  MechanicalPlant(Vector masses, std::shared_ptr<const Potential> potential,
                  std::optional<Matrix> damping = std::nullopt,
                  std::optional<Matrix> stiffness = std::nullopt);

  static MechanicalPlant spring_chain(const SpringChainParams& params,
                                      std::optional<Vector> damping_diag = std::nullopt);

  std::size_t dim() const noexcept { return masses_.size(); }
  const Vector& masses() const noexcept { return masses_; }
  Matrix mass_matrix() const { return Matrix::diagonal(masses_); }
  const Matrix& damping() const noexcept { return damping_; }
  bool has_damping() const noexcept { return has_damping_; }
  const std::optional<Matrix>& stiffness() const noexcept { return stiffness_; }
  const Potential& potential() const noexcept { return *potential_; }
  std::shared_ptr<const Potential> potential_ptr() const noexcept { return potential_; }

  void set_mass_derivative(MassDerivativeTerm term) { mass_derivative_ = std::move(term); }
  bool has_mass_derivative() const noexcept { return static_cast<bool>(mass_derivative_); }

  /// Certified PL constant; throws CertificationError when not yet certified.
  double eta() const;
  void set_eta(double eta);
  bool has_eta() const noexcept { return eta_.has_value(); }

  PlantDerivative dynamics(const PlantState& x, std::span<const double> u) const;
  Vector output(const PlantState& x) const;
  double hamiltonian(const PlantState& x) const;
  /// M^{-1} p
  Vector velocity(std::span<const double> p) const;

  void check_state(const PlantState& x) const;

 private:
  Vector masses_;
  std::shared_ptr<const Potential> potential_;
  Matrix damping_;
  bool has_damping_ = false;
  std::optional<Matrix> stiffness_;
  MassDerivativeTerm mass_derivative_;
  std::optional<double> eta_;
};

/// Linear stiffness of a spring chain (Hessian of V at the origin).
Matrix assemble_stiffness(const SpringChainParams& params);

struct EtaReport {
  double eta = 0.0;
  double lambda_min = 0.0;
  double radius = 0.0;
  std::size_t samples = 0;
  std::size_t halvings = 0;
  /// Violations found for the initial candidate lambda_min.
  std::size_t initial_violations = 0;
  /// min over samples of V(q) - 1/2 eta |q|^2 and 1/2|grad V|^2 - eta V at the certified eta.
  double worst_pd_margin = 0.0;
  double worst_pl_margin = 0.0;
};

/// Certifies eta for V(q) >= 1/2 eta |q|^2 and 1/2 |grad V|^2 >= eta V(q) on a ball,
/// starting from lambda_min(K) and halving until no sample violates.
EtaReport estimate_eta(const MechanicalPlant& plant, double radius, std::size_t samples,
                       std::uint64_t seed = 1);

/// Uniform sample in the radius-r ball of R^n.
Vector sample_ball(std::size_t n, double radius, std::mt19937_64& rng);

/// Plant terms recorded on a tape for differentiable rollouts.
class BoundPlant {
 public:
  BoundPlant(const MechanicalPlant& plant, ad::Tape& tape);
  ad::Var qdot(ad::Var p) const;
  ad::Var pdot(ad::Var q, ad::Var p, ad::Var u) const;
  ad::Var hamiltonian(ad::Var q, ad::Var p) const;

 private:
  const MechanicalPlant* plant_;
  ad::Var inv_mass_;
  ad::Var damping_;
  std::int32_t grad_fn_;
  std::int32_t value_fn_;
};

}  // namespace ninode
