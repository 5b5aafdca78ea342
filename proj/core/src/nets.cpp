#include "ninode/nets.hpp"

#include <cmath>

#include "ninode/errors.hpp"

namespace ninode {

using ad::Var;

Matrix random_unit_norm(std::size_t rows, std::size_t cols, Rng& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Matrix m(rows, cols);
  for (std::size_t i = 0; i < m.size(); ++i) m[i] = normal(rng);
  const double s = spectral_norm(m);
  return (1.0 / s) * m;
}

// LipschitzMlp

LipschitzMlp::LipschitzMlp(std::size_t dim, std::size_t hidden, std::size_t weight_layers, double bound,
                           Rng& rng)
    : dim_(dim), bound_(bound) {
  if (dim == 0 || weight_layers == 0) throw ContractError("LipschitzMlp: empty architecture");
  if (!(bound >= 0.0) || !std::isfinite(bound)) throw ContractError("LipschitzMlp: bound must be >= 0");
  if (bound == 0.0) return;
  for (std::size_t i = 0; i < weight_layers; ++i) {
    const std::size_t in = i == 0 ? dim : hidden;
    const std::size_t out = i + 1 == weight_layers ? dim : hidden;
    raw_.push_back(random_unit_norm(out, in, rng));
    biases_.emplace_back(out, 1, 0.0);
  }
  power_.resize(raw_.size());
  refresh(NormRefresh::Converged);
}

double LipschitzMlp::layer_scale() const {
  if (raw_.empty()) return 0.0;
  return std::pow(bound_, 1.0 / static_cast<double>(raw_.size()));
}

void LipschitzMlp::refresh(NormRefresh mode, int iters) {
  for (std::size_t i = 0; i < raw_.size(); ++i) {
    switch (mode) {
      case NormRefresh::Frozen:
        break;
      case NormRefresh::Training:
        power_[i].estimate(raw_[i], iters);
        break;
      case NormRefresh::Converged:
        power_[i].converge(raw_[i]);
        break;
    }
  }
}

Matrix LipschitzMlp::effective_weight(std::size_t i) const {
  const Matrix& v = raw_.at(i);
  const Vector left = power_[i].left(v);
  const Vector& right = power_[i].right();
  Vector vr(v.rows());
  for (std::size_t r = 0; r < v.rows(); ++r) vr[r] = pairwise_dot(v.data() + r * v.cols(), 1, right.data(), 1, v.cols());
  const double sigma = pairwise_dot(left.data(), 1, vr.data(), 1, v.rows());
  const double s = layer_scale() / sigma;
  Matrix w(v.rows(), v.cols());
  for (std::size_t k = 0; k < v.size(); ++k) w[k] = s * v[k];
  return w;
}

double LipschitzMlp::certified_bound() const {
  double b = 1.0;
  if (raw_.empty()) return 0.0;
  for (std::size_t i = 0; i < raw_.size(); ++i) b *= spectral_norm(effective_weight(i));
  return b;
}

void LipschitzMlp::collect(std::vector<Matrix*>& out) {
  for (std::size_t i = 0; i < raw_.size(); ++i) {
    out.push_back(&raw_[i]);
    out.push_back(&biases_[i]);
  }
}

BoundMlp::BoundMlp(const LipschitzMlp& mlp, const ParamBinder& binder) {
  const double c = mlp.layer_scale();
  for (std::size_t i = 0; i < mlp.weight_layers(); ++i) {
    const Matrix& raw = mlp.raw_weights()[i];
    const auto& power = mlp.power_state()[i];
    Var v = binder.bind(raw);
    weights_.push_back(ad::spectral_normalize(v, c, power.left(raw), power.right()));
    biases_.push_back(binder.bind(mlp.biases()[i]));
  }
}

Var BoundMlp::forward(Var x, std::vector<Var>& hidden) const {
  hidden.clear();
  Var h = x;
  for (std::size_t i = 0; i + 1 < weights_.size(); ++i) {
    h = ad::tanh(ad::matmul(weights_[i], h) + biases_[i]);
    hidden.push_back(h);
  }
  return ad::matmul(weights_.back(), h) + biases_.back();
}

Var BoundMlp::vjp(const std::vector<Var>& hidden, Var w) const {
  Var delta = ad::matmul_tn(weights_.back(), w);
  for (std::size_t i = hidden.size(); i-- > 0;) {
    delta = ad::hadamard(delta, ad::one_minus_square(hidden[i]));
    delta = ad::matmul_tn(weights_[i], delta);
  }
  return delta;
}

// BiLipNet

BiLipNet::BiLipNet(const BiLipConfig& config, Rng& rng) : config_(config) {
  if (config.dim == 0 || config.layers == 0) throw ContractError("BiLipNet: empty architecture");
  if (!(config.alpha > 0.0)) throw ContractError("BiLipNet: alpha must be positive");
  if (!(config.beta >= 0.0 && config.beta < config.alpha))
    throw ContractError("BiLipNet: require 0 <= beta < alpha");
  std::normal_distribution<double> normal(0.0, 0.1);
  for (std::size_t k = 0; k < config.layers; ++k) {
    residuals_.emplace_back(config.dim, config.hidden, config.weight_layers, config.beta, rng);
    if (config.orthogonal) {
      Matrix a(config.dim * (config.dim - 1) / 2, 1);
      for (std::size_t i = 0; i < a.size(); ++i) a[i] = normal(rng);
      rotations_.push_back(std::move(a));
    }
  }
}

BiLipNet BiLipNet::identity(std::size_t dim, std::size_t layers) {
  BiLipConfig config;
  config.dim = dim;
  config.layers = layers;
  config.alpha = 1.0;
  config.beta = 0.0;
  Rng rng(0);
  return BiLipNet(config, rng);
}

BiLipConstants BiLipNet::nominal_constants() const {
  const double l = static_cast<double>(config_.layers);
  return {std::pow(config_.alpha - config_.beta, l), std::pow(config_.alpha + config_.beta, l)};
}

BiLipConstants BiLipNet::certify() const {
  BiLipConstants c{1.0, 1.0};
  for (std::size_t k = 0; k < residuals_.size(); ++k) {
    const double b = residuals_[k].certified_bound();
    if (!(b < config_.alpha)) {
      throw CertificationError("BiLipNet: layer " + std::to_string(k) + " has Lipschitz bound " +
                               std::to_string(b) + " >= alpha " + std::to_string(config_.alpha));
    }
    c.mu *= config_.alpha - b;
    c.nu *= config_.alpha + b;
  }
  return c;
}

void BiLipNet::refresh(NormRefresh mode, int iters) {
  for (auto& r : residuals_) r.refresh(mode, iters);
}

void BiLipNet::collect(std::vector<Matrix*>& out) {
  for (std::size_t k = 0; k < residuals_.size(); ++k) {
    residuals_[k].collect(out);
    if (!rotations_.empty()) out.push_back(&rotations_[k]);
  }
}

Vector BiLipNet::forward(std::span<const double> x) const {
  if (x.size() != dim()) throw ContractError("BiLipNet::forward: dimension mismatch");
  ad::Tape tape;
  BoundBiLip bound(*this, ParamBinder{tape, false});
  return bound.forward(tape.constant(x)).output.value().to_vector();
}

BoundBiLip::BoundBiLip(const BiLipNet& net, const ParamBinder& binder)
    : tape_(&binder.tape), alpha_(net.config().alpha) {
  for (std::size_t k = 0; k < net.residuals().size(); ++k) {
    layers_.emplace_back(net.residuals()[k], binder);
    if (!net.rotations().empty()) {
      Var a = binder.bind(net.rotations()[k]);
      rotations_.push_back(ad::cayley(ad::skew_from_upper(a, net.dim())));
    }
  }
  offset_ = raw_forward(tape_->constant(Matrix(net.dim(), 1)), nullptr);
}

Var BoundBiLip::raw_forward(Var x, BiLipTrace* trace) const {
  std::vector<Var> hidden;
  const double coeffs[2] = {alpha_, 1.0};
  for (std::size_t k = 0; k < layers_.size(); ++k) {
    if (layers_[k].is_zero()) {
      x = alpha_ * x;
      hidden.clear();
    } else {
      Var g = layers_[k].forward(x, hidden);
      const Var terms[2] = {x, g};
      x = ad::lincomb(terms, coeffs);
    }
    if (!rotations_.empty()) x = ad::matmul(rotations_[k], x);
    if (trace) {
      trace->hidden.push_back(hidden);
      if (!rotations_.empty()) trace->rotation.push_back(rotations_[k]);
    }
  }
  return x;
}

BiLipTrace BoundBiLip::forward(Var x) const {
  if (x.size() != static_cast<std::size_t>(offset_.size()))
    throw ContractError("BiLipNet: input dimension mismatch");
  BiLipTrace trace;
  trace.output = raw_forward(x, &trace) - offset_;
  return trace;
}

Var BoundBiLip::vjp(const BiLipTrace& trace, Var w) const {
  const double coeffs[2] = {alpha_, 1.0};
  for (std::size_t k = layers_.size(); k-- > 0;) {
    if (!rotations_.empty()) w = ad::matmul_tn(rotations_[k], w);
    if (layers_[k].is_zero()) {
      w = alpha_ * w;
    } else {
      const Var terms[2] = {w, layers_[k].vjp(trace.hidden[k], w)};
      w = ad::lincomb(terms, coeffs);
    }
  }
  return w;
}

// PlnetHamiltonian

PlnetHamiltonian::PlnetHamiltonian(BiLipNet core, double scale)
    : core_(std::move(core)), log_scale_(1, 1, std::log(scale)) {
  if (!(scale > 0.0)) throw ContractError("PlnetHamiltonian: scale must be positive");
}

double PlnetHamiltonian::scale() const { return std::exp(log_scale_[0]); }

double PlnetHamiltonian::certified_gamma() const { return scale() * core_.certify().mu; }

double PlnetHamiltonian::value(std::span<const double> x) const {
  if (x.size() != core_.dim()) throw ContractError("PlnetHamiltonian: dimension mismatch");
  ad::Tape tape;
  BoundPlnet h(*this, ParamBinder{tape, false});
  return h.evaluate(tape.constant(x)).value.scalar();
}

Vector PlnetHamiltonian::gradient(std::span<const double> x) const {
  if (x.size() != core_.dim()) throw ContractError("PlnetHamiltonian: dimension mismatch");
  ad::Tape tape;
  BoundPlnet h(*this, ParamBinder{tape, false});
  return h.evaluate(tape.constant(x)).gradient.value().to_vector();
}

void PlnetHamiltonian::collect(std::vector<Matrix*>& out) {
  core_.collect(out);
  out.push_back(&log_scale_);
}

BoundPlnet::BoundPlnet(const PlnetHamiltonian& h, const ParamBinder& binder)
    : core_(h.core(), binder), scale_(ad::exp(binder.bind(h.log_scale()))) {}

PlnetEval BoundPlnet::evaluate(Var x) const {
  const BiLipTrace trace = core_.forward(x);
  Var f = ad::scale(scale_, trace.output);
  PlnetEval e;
  e.features = f;
  e.value = 0.5 * ad::dot(f, f);
  e.gradient = core_.vjp(trace, ad::scale(scale_, f));
  return e;
}

// Feature networks and structural heads

FeatureMlp::FeatureMlp(std::size_t in, std::size_t hidden, std::size_t hidden_layers, std::size_t out,
                       double output_gain, Rng& rng)
    : in_(in), out_(out) {
  if (in == 0 || hidden == 0 || hidden_layers == 0) throw ContractError("FeatureMlp: empty architecture");
  std::normal_distribution<double> normal(0.0, 1.0);
  for (std::size_t i = 0; i <= hidden_layers; ++i) {
    const std::size_t fan_in = i == 0 ? in : hidden;
    const std::size_t fan_out = i == hidden_layers ? out : hidden;
    const double gain = (i == hidden_layers ? output_gain : 1.0) / std::sqrt(static_cast<double>(fan_in));
    Matrix w(fan_out, fan_in);
    for (std::size_t k = 0; k < w.size(); ++k) w[k] = gain * normal(rng);
    weights_.push_back(std::move(w));
    biases_.emplace_back(fan_out, 1, 0.0);
  }
}

void FeatureMlp::set_constant_output(std::span<const double> bias) {
  if (bias.size() != out_) throw ContractError("FeatureMlp: bias size mismatch");
  weights_.back() = Matrix(weights_.back().rows(), weights_.back().cols());
  biases_.back() = Matrix::column(bias);
}

void FeatureMlp::collect(std::vector<Matrix*>& out) {
  for (std::size_t i = 0; i < weights_.size(); ++i) {
    out.push_back(&weights_[i]);
    out.push_back(&biases_[i]);
  }
}

BoundFeatureMlp::BoundFeatureMlp(const FeatureMlp& mlp, const ParamBinder& binder) {
  for (std::size_t i = 0; i < mlp.weights().size(); ++i) {
    weights_.push_back(binder.bind(mlp.weights()[i]));
    biases_.push_back(binder.bind(mlp.biases()[i]));
  }
}

Var BoundFeatureMlp::forward(Var x) const {
  Var h = x;
  for (std::size_t i = 0; i + 1 < weights_.size(); ++i) h = ad::tanh(ad::matmul(weights_[i], h) + biases_[i]);
  return ad::matmul(weights_.back(), h) + biases_.back();
}

namespace {

Var feature_input(ad::Tape& tape, std::span<const double> x2, std::span<const double> z, std::size_t m,
                  std::size_t l) {
  if (x2.size() != m || z.size() != l) throw ContractError("head: input dimension mismatch");
  Vector in(x2.begin(), x2.end());
  in.insert(in.end(), z.begin(), z.end());
  return tape.constant(in);
}

}  // namespace

SkewHead::SkewHead(std::size_t m, std::size_t l, std::size_t hidden, std::size_t hidden_layers, Rng& rng)
    : m_(m), l_(l), net_(m + l, hidden, hidden_layers, m * (m - 1) / 2, 1.0, rng) {}

Matrix SkewHead::evaluate(std::span<const double> x2, std::span<const double> z) const {
  ad::Tape tape;
  BoundSkewHead head(*this, ParamBinder{tape, false});
  return head.evaluate(feature_input(tape, x2, z, m_, l_)).value();
}

SpdHead::SpdHead(std::size_t m, std::size_t l, std::size_t hidden, std::size_t hidden_layers, double floor,
                 Rng& rng)
    : m_(m), l_(l), floor_(floor), net_(m + l, hidden, hidden_layers, m * (m + 1) / 2, 1.0, rng) {
  if (!(floor > 0.0)) throw ContractError("SpdHead: floor must be positive");
}

Matrix SpdHead::evaluate(std::span<const double> x2, std::span<const double> z) const {
  ad::Tape tape;
  BoundSpdHead head(*this, ParamBinder{tape, false});
  return head.evaluate(feature_input(tape, x2, z, m_, l_)).value();
}

BoundSkewHead::BoundSkewHead(const SkewHead& head, const ParamBinder& binder)
    : m_(head.dim()), net_(head.features(), binder) {}

Var BoundSkewHead::evaluate(Var features) const { return ad::skew_from_upper(net_.forward(features), m_); }

BoundSpdHead::BoundSpdHead(const SpdHead& head, const ParamBinder& binder)
    : m_(head.dim()), floor_(head.floor()), net_(head.features(), binder) {}

Var BoundSpdHead::evaluate(Var features) const {
  Var l = ad::lower_from_vec(net_.forward(features), m_);
  return ad::add_identity(ad::matmul(l, ad::transpose(l)), floor_);
}

}  // namespace ninode
