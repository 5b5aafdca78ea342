#pragma once

#include <cstddef>
#include <span>

#include "ninode/matrix.hpp"

namespace ninode {

/// Eigenvalues of a symmetric matrix in ascending order (cyclic Jacobi).
Vector symmetric_eigenvalues(const Matrix& a);

/// Singular values in descending order (one-sided Jacobi).
Vector singular_values(const Matrix& a);

double min_singular_value(const Matrix& a);

/// Largest singular value to solver precision.
double spectral_norm(const Matrix& w);

/// Power iteration on W^T W with a persisted right iterate, so repeated calls
/// on a slowly changing matrix warm-start from the previous direction.
class PowerIteration {
 public:
  PowerIteration() = default;
  explicit PowerIteration(Vector right) : right_(std::move(right)) {}

  /// Runs `iters` iterations and returns |W v| for the updated unit iterate v.
  /// The estimate never exceeds the true norm beyond round-off.
  double estimate(const Matrix& w, int iters);

  /// Iterates until the estimate stops changing (relative 1e-15) or max_iters.
  double converge(const Matrix& w, int max_iters = 5000);

  const Vector& right() const noexcept { return right_; }
  /// Unit left vector u = W v / |W v| for the current iterate.
  Vector left(const Matrix& w) const;

 private:
  void ensure_initialized(std::size_t cols);
  Vector right_;
};

/// Solves A X = B with partial-pivot LU. Throws NumericError when A is singular.
Matrix solve(const Matrix& a, const Matrix& b);
Matrix inverse(const Matrix& a);
double determinant(const Matrix& a);

bool is_skew(const Matrix& a, double tol = 1e-12);
bool is_symmetric(const Matrix& a, double tol = 1e-12);

/// Q = (I - A)(I + A)^{-1} for skew-symmetric A; Q is orthogonal with det +1.
Matrix cayley_orthogonal(const Matrix& a);

}  // namespace ninode
