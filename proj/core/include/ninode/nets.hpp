#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "ninode/linalg.hpp"
#include "ninode/matrix.hpp"
#include "ninode/tape.hpp"

namespace ninode {

using Rng = std::mt19937_64;

/// Places raw parameter arrays on a tape, either as differentiable parameter
/// slots or as constants.
struct ParamBinder {
  ad::Tape& tape;
  bool trainable = false;

  ad::Var bind(const Matrix& m) const { return trainable ? tape.parameter(m) : tape.constant(m); }
};

/// Fixed-direction normalization state: power iteration vectors are refreshed
/// only between rollouts, so evaluation is reentrant.
enum class NormRefresh { Frozen, Training, Converged };

/// Bounded-Lipschitz MLP g: R^d -> R^d,
///   g(x) = W_D tanh(... tanh(W_1 x + b_1) ...) + b_D,
/// with W_i = bound^(1/D) V_i / |V_i|_2, so Lip(g) <= bound for the 1-Lipschitz tanh.
/// A bound of zero makes g identically constant (all effective weights zero).
class LipschitzMlp {
 public:
  LipschitzMlp() = default;
  LipschitzMlp(std::size_t dim, std::size_t hidden, std::size_t weight_layers, double bound, Rng& rng);

  std::size_t dim() const noexcept { return dim_; }
  std::size_t weight_layers() const noexcept { return raw_.size(); }
  double bound() const noexcept { return bound_; }
  /// Per-matrix spectral target bound^(1/D).
  double layer_scale() const;

  std::vector<Matrix>& raw_weights() noexcept { return raw_; }
  const std::vector<Matrix>& raw_weights() const noexcept { return raw_; }
  std::vector<Matrix>& biases() noexcept { return biases_; }
  const std::vector<Matrix>& biases() const noexcept { return biases_; }
  std::vector<PowerIteration>& power_state() noexcept { return power_; }
  const std::vector<PowerIteration>& power_state() const noexcept { return power_; }

  void refresh(NormRefresh mode, int iters = 20);
  /// Effective weight using the current (frozen) normalization directions.
  Matrix effective_weight(std::size_t i) const;
  /// Product of exact spectral norms of the effective weights.
  double certified_bound() const;

  void collect(std::vector<Matrix*>& out);

 private:
  std::size_t dim_ = 0;
  double bound_ = 0.0;
  std::vector<Matrix> raw_;
  std::vector<Matrix> biases_;
  std::vector<PowerIteration> power_;
};

struct BiLipConfig {
  std::size_t dim = 0;
  std::size_t layers = 2;
  double alpha = 1.0;
  double beta = 0.5;
  std::size_t hidden = 32;
  std::size_t weight_layers = 2;
  bool orthogonal = false;
};

struct BiLipConstants {
  double mu = 0.0;
  double nu = 0.0;
};

/// Composition of invertible residual layers y = alpha x + g(x), Lip(g) <= beta < alpha,
/// optionally followed per layer by a Cayley-orthogonal map. The output is shifted
/// so that net(0) = 0, and each layer is (alpha - beta, alpha + beta)-Lipschitz.
class BiLipNet {
 public:
  BiLipNet() = default;
  BiLipNet(const BiLipConfig& config, Rng& rng);
  /// alpha = 1, g = 0: the identity map.
  static BiLipNet identity(std::size_t dim, std::size_t layers = 1);

  const BiLipConfig& config() const noexcept { return config_; }
  std::size_t dim() const noexcept { return config_.dim; }
  std::vector<LipschitzMlp>& residuals() noexcept { return residuals_; }
  const std::vector<LipschitzMlp>& residuals() const noexcept { return residuals_; }
  std::vector<Matrix>& rotations() noexcept { return rotations_; }
  const std::vector<Matrix>& rotations() const noexcept { return rotations_; }

  /// Constants implied by the nominal per-layer bound beta.
  BiLipConstants nominal_constants() const;
  /// Constants from exact spectral norms of the effective weights.
  /// Throws CertificationError if any layer bound reaches alpha.
  BiLipConstants certify() const;

  void refresh(NormRefresh mode, int iters = 20);
  void collect(std::vector<Matrix*>& out);

  Vector forward(std::span<const double> x) const;

 private:
  BiLipConfig config_;
  std::vector<LipschitzMlp> residuals_;
  std::vector<Matrix> rotations_;  // strictly-upper skew parameters, one column per layer
};

/// Intermediate values of one forward pass, reused by the VJP.
struct BiLipTrace {
  std::vector<std::vector<ad::Var>> hidden;  // per layer: tanh activations
  std::vector<ad::Var> rotation;             // per layer: orthogonal factor (if any)
  ad::Var output;                            // net(x), offset removed
};

class BoundMlp {
 public:
  BoundMlp() = default;
  BoundMlp(const LipschitzMlp& mlp, const ParamBinder& binder);

  /// Returns g(x); `hidden` receives the tanh activations.
  ad::Var forward(ad::Var x, std::vector<ad::Var>& hidden) const;
  /// (dg/dx)^T w at the point that produced `hidden`.
  ad::Var vjp(const std::vector<ad::Var>& hidden, ad::Var w) const;
  bool is_zero() const noexcept { return weights_.empty(); }

 private:
  std::vector<ad::Var> weights_;
  std::vector<ad::Var> biases_;
};

/// A BiLipNet whose parameters live on a tape.
class BoundBiLip {
 public:
  BoundBiLip(const BiLipNet& net, const ParamBinder& binder);

  BiLipTrace forward(ad::Var x) const;
  /// J(x)^T w with J the Jacobian of the net at the traced point.
  ad::Var vjp(const BiLipTrace& trace, ad::Var w) const;
  ad::Var offset() const noexcept { return offset_; }

 private:
  ad::Var raw_forward(ad::Var x, BiLipTrace* trace) const;

  ad::Tape* tape_;
  double alpha_;
  std::vector<BoundMlp> layers_;
  std::vector<ad::Var> rotations_;
  ad::Var offset_;
};

/// H(x) = 1/2 |s G(x)|^2 with G a BiLipNet and s = exp(log_scale); gamma = s mu_G.
class PlnetHamiltonian {
 public:
  PlnetHamiltonian() = default;
  PlnetHamiltonian(BiLipNet core, double scale);

  BiLipNet& core() noexcept { return core_; }
  const BiLipNet& core() const noexcept { return core_; }
  double scale() const;
  Matrix& log_scale() noexcept { return log_scale_; }
  const Matrix& log_scale() const noexcept { return log_scale_; }

  /// Certified inverse-Lipschitz constant gamma of s G.
  double certified_gamma() const;

  double value(std::span<const double> x) const;
  Vector gradient(std::span<const double> x) const;

  void collect(std::vector<Matrix*>& out);

 private:
  BiLipNet core_;
  Matrix log_scale_{1, 1, 0.0};
};

struct PlnetEval {
  ad::Var value;     // 1x1
  ad::Var gradient;  // m x 1
  ad::Var features;  // s G(x)
};

class BoundPlnet {
 public:
  BoundPlnet(const PlnetHamiltonian& h, const ParamBinder& binder);
  PlnetEval evaluate(ad::Var x) const;
  ad::Var scale() const noexcept { return scale_; }

 private:
  BoundBiLip core_;
  ad::Var scale_;
};

/// Unconstrained tanh MLP used as a feature map for the structural heads.
class FeatureMlp {
 public:
  FeatureMlp() = default;
  FeatureMlp(std::size_t in, std::size_t hidden, std::size_t hidden_layers, std::size_t out,
             double output_gain, Rng& rng);

  std::size_t input_dim() const noexcept { return in_; }
  std::size_t output_dim() const noexcept { return out_; }
  std::vector<Matrix>& weights() noexcept { return weights_; }
  const std::vector<Matrix>& weights() const noexcept { return weights_; }
  std::vector<Matrix>& biases() noexcept { return biases_; }
  const std::vector<Matrix>& biases() const noexcept { return biases_; }

  /// Zeroes the last layer so the network outputs exactly `bias`.
  void set_constant_output(std::span<const double> bias);

  void collect(std::vector<Matrix*>& out);

 private:
  std::size_t in_ = 0, out_ = 0;
  std::vector<Matrix> weights_;
  std::vector<Matrix> biases_;
};

class BoundFeatureMlp {
 public:
  BoundFeatureMlp(const FeatureMlp& mlp, const ParamBinder& binder);
  ad::Var forward(ad::Var x) const;

 private:
  std::vector<ad::Var> weights_;
  std::vector<ad::Var> biases_;
};

/// J(x, z) = A - A^T with A strictly upper triangular from a feature network.
class SkewHead {
 public:
  SkewHead() = default;
  SkewHead(std::size_t m, std::size_t l, std::size_t hidden, std::size_t hidden_layers, Rng& rng);

  std::size_t dim() const noexcept { return m_; }
  std::size_t signal_dim() const noexcept { return l_; }
  FeatureMlp& features() noexcept { return net_; }
  const FeatureMlp& features() const noexcept { return net_; }

  Matrix evaluate(std::span<const double> x2, std::span<const double> z) const;
  void collect(std::vector<Matrix*>& out) { net_.collect(out); }

 private:
  std::size_t m_ = 0, l_ = 0;
  FeatureMlp net_;
};

/// R(x, z) = L L^T + eps I with L lower triangular from a feature network.
class SpdHead {
 public:
  SpdHead() = default;
  SpdHead(std::size_t m, std::size_t l, std::size_t hidden, std::size_t hidden_layers, double floor,
          Rng& rng);

  std::size_t dim() const noexcept { return m_; }
  std::size_t signal_dim() const noexcept { return l_; }
  double floor() const noexcept { return floor_; }
  FeatureMlp& features() noexcept { return net_; }
  const FeatureMlp& features() const noexcept { return net_; }

  Matrix evaluate(std::span<const double> x2, std::span<const double> z) const;
  void collect(std::vector<Matrix*>& out) { net_.collect(out); }

 private:
  std::size_t m_ = 0, l_ = 0;
  double floor_ = 0.1;
  FeatureMlp net_;
};

class BoundSkewHead {
 public:
  BoundSkewHead(const SkewHead& head, const ParamBinder& binder);
  /// `features` is the concatenated (x2, z) column.
  ad::Var evaluate(ad::Var features) const;

 private:
  std::size_t m_;
  BoundFeatureMlp net_;
};

class BoundSpdHead {
 public:
  BoundSpdHead(const SpdHead& head, const ParamBinder& binder);
  ad::Var evaluate(ad::Var features) const;

 private:
  std::size_t m_;
  double floor_;
  BoundFeatureMlp net_;
};

/// Gaussian matrix scaled to unit spectral norm (exact).
Matrix random_unit_norm(std::size_t rows, std::size_t cols, Rng& rng);

}  // namespace ninode
