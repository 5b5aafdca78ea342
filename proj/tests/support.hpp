#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "ninode/matrix.hpp"
#include "ninode/tape.hpp"

namespace testing_support {

using ninode::Matrix;
using ninode::Vector;

inline Eigen::MatrixXd to_eigen(const Matrix& m) {
  Eigen::MatrixXd e(m.rows(), m.cols());
  for (std::size_t r = 0; r < m.rows(); ++r)
    for (std::size_t c = 0; c < m.cols(); ++c) e(r, c) = m(r, c);
  return e;
}

inline Matrix random_matrix(std::size_t rows, std::size_t cols, std::mt19937_64& rng, double sd = 1.0) {
  std::normal_distribution<double> nd(0.0, sd);
  Matrix m(rows, cols);
  for (std::size_t i = 0; i < m.size(); ++i) m[i] = nd(rng);
  return m;
}

inline Vector random_vector(std::size_t n, std::mt19937_64& rng, double sd = 1.0) {
  return random_matrix(n, 1, rng, sd).to_vector();
}

inline double eigen_spectral_norm(const Matrix& m) {
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(to_eigen(m));
  return svd.singularValues()(0);
}

inline double eigen_min_singular(const Matrix& m) {
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(to_eigen(m));
  return svd.singularValues()(svd.singularValues().size() - 1);
}

inline double eigen_min_eig(const Matrix& m) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(to_eigen(m));
  return es.eigenvalues()(0);
}

using LossBuilder = std::function<ninode::ad::Var(ninode::ad::Tape&, const std::vector<ninode::ad::Var>&)>;

// Normwise relative error between tape gradients and central differences.
inline double tape_fd_error(const std::vector<Matrix>& params, const LossBuilder& build, double h = 1e-6) {
  ninode::ad::Tape tape;
  std::vector<ninode::ad::Var> vars;
  for (const auto& p : params) vars.push_back(tape.parameter(p));
  const std::vector<Matrix> g = tape.grad(build(tape, vars));
  const auto eval = [&](const std::vector<Matrix>& ps) {
    ninode::ad::Tape t;
    std::vector<ninode::ad::Var> vs;
    for (const auto& p : ps) vs.push_back(t.constant(p));
    return build(t, vs).scalar();
  };
  double err = 0.0, scale = 0.0;
  std::vector<Matrix> work = params;
  for (std::size_t i = 0; i < work.size(); ++i) {
    for (std::size_t k = 0; k < work[i].size(); ++k) {
      const double s = work[i][k];
      work[i][k] = s + h;
      const double lp = eval(work);
      work[i][k] = s - h;
      const double lm = eval(work);
      work[i][k] = s;
      const double fd = (lp - lm) / (2.0 * h);
      err = std::max(err, std::abs(fd - g[i][k]));
      scale = std::max({scale, std::abs(fd), std::abs(g[i][k])});
    }
  }
  return scale == 0.0 ? 0.0 : err / scale;
}

}  // namespace testing_support
