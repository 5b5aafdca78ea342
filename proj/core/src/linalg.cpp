#include "ninode/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <functional>

#include "ninode/errors.hpp"

namespace ninode {

namespace {

void require_finite(const Matrix& a, const char* what) {
  if (a.empty()) throw ContractError(std::string(what) + ": empty matrix");
  if (!a.all_finite()) throw ContractError(std::string(what) + ": non-finite entries");
}

}  // namespace

Vector symmetric_eigenvalues(const Matrix& input) {
  require_finite(input, "symmetric_eigenvalues");
  if (!input.is_square()) throw ContractError("symmetric_eigenvalues: matrix not square");
  const std::size_t n = input.rows();
  Matrix a = input;
  for (int sweep = 0; sweep < 100; ++sweep) {
    double off = 0.0;
    double diag = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      diag += a(i, i) * a(i, i);
      for (std::size_t j = i + 1; j < n; ++j) off += a(i, j) * a(i, j);
    }
    if (off <= 1e-32 * std::max(diag, 1e-300)) break;
    for (std::size_t p = 0; p < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        const double apq = a(p, q);
        if (apq == 0.0) continue;
        const double theta = (a(q, q) - a(p, p)) / (2.0 * apq);
        const double t = std::copysign(1.0, theta) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        for (std::size_t k = 0; k < n; ++k) {
          const double akp = a(k, p);
          const double akq = a(k, q);
          a(k, p) = c * akp - s * akq;
          a(k, q) = s * akp + c * akq;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double apk = a(p, k);
          const double aqk = a(q, k);
          a(p, k) = c * apk - s * aqk;
          a(q, k) = s * apk + c * aqk;
        }
      }
    }
  }
  Vector eig(n);
  for (std::size_t i = 0; i < n; ++i) eig[i] = a(i, i);
  std::sort(eig.begin(), eig.end());
  return eig;
}

Vector singular_values(const Matrix& input) {
  require_finite(input, "singular_values");
  // One-sided Jacobi on the columns of the taller orientation.
  Matrix a = input.rows() >= input.cols() ? input : input.transpose();
  const std::size_t m = a.rows();
  const std::size_t n = a.cols();
  for (int sweep = 0; sweep < 100; ++sweep) {
    bool rotated = false;
    for (std::size_t p = 0; p + 1 < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        double alpha = 0.0, beta = 0.0, gamma = 0.0;
        for (std::size_t k = 0; k < m; ++k) {
          alpha += a(k, p) * a(k, p);
          beta += a(k, q) * a(k, q);
          gamma += a(k, p) * a(k, q);
        }
        if (std::abs(gamma) <= 1e-15 * std::sqrt(alpha * beta) || gamma == 0.0) continue;
        rotated = true;
        const double zeta = (beta - alpha) / (2.0 * gamma);
        const double t = std::copysign(1.0, zeta) / (std::abs(zeta) + std::sqrt(1.0 + zeta * zeta));
        const double c = 1.0 / std::sqrt(1.0 + t * t);
        const double s = c * t;
        for (std::size_t k = 0; k < m; ++k) {
          const double akp = a(k, p);
          const double akq = a(k, q);
          a(k, p) = c * akp - s * akq;
          a(k, q) = s * akp + c * akq;
        }
      }
    }
    if (!rotated) break;
  }
  Vector sv(n);
  for (std::size_t j = 0; j < n; ++j) {
    double s = 0.0;
    for (std::size_t k = 0; k < m; ++k) s += a(k, j) * a(k, j);
    sv[j] = std::sqrt(s);
  }
  std::sort(sv.begin(), sv.end(), std::greater<>());
  return sv;
}

double min_singular_value(const Matrix& a) {
  const Vector sv = singular_values(a);
  // A wide matrix has min(rows, cols) nontrivial singular values.
  return sv[std::min(a.rows(), a.cols()) - 1];
}

double spectral_norm(const Matrix& w) { return singular_values(w).front(); }

void PowerIteration::ensure_initialized(std::size_t cols) {
  if (right_.size() == cols) return;
  // Deterministic start with no special alignment to coordinate axes.
  right_.assign(cols, 0.0);
  for (std::size_t i = 0; i < cols; ++i) right_[i] = 1.0 + 0.1 * static_cast<double>(i % 7);
  const double nv = norm(right_);
  for (double& x : right_) x /= nv;
}

double PowerIteration::estimate(const Matrix& w, int iters) {
  require_finite(w, "spectral_norm");
  ensure_initialized(w.cols());
  for (int it = 0; it < iters; ++it) {
    Vector next = matvec_transposed(w, matvec(w, right_));
    const double nn = norm(next);
    if (nn == 0.0) return 0.0;
    for (double& x : next) x /= nn;
    right_ = std::move(next);
  }
  return norm(matvec(w, right_));
}

double PowerIteration::converge(const Matrix& w, int max_iters) {
  double prev = estimate(w, 1);
  for (int it = 1; it < max_iters; ++it) {
    const double cur = estimate(w, 1);
    if (std::abs(cur - prev) <= 1e-15 * std::max(cur, 1e-300)) return cur;
    prev = cur;
  }
  return prev;
}

Vector PowerIteration::left(const Matrix& w) const {
  Vector u = matvec(w, right_);
  const double nu = norm(u);
  if (nu > 0.0)
    for (double& x : u) x /= nu;
  return u;
}

namespace {

struct Lu {
  Matrix lu;
  std::vector<std::size_t> perm;
  int sign = 1;
};

Lu lu_decompose(const Matrix& a) {
  if (!a.is_square()) throw ContractError("lu: matrix not square");
  Lu f{a, {}, 1};
  const std::size_t n = a.rows();
  f.perm.resize(n);
  for (std::size_t i = 0; i < n; ++i) f.perm[i] = i;
  for (std::size_t k = 0; k < n; ++k) {
    std::size_t piv = k;
    for (std::size_t i = k + 1; i < n; ++i)
      if (std::abs(f.lu(i, k)) > std::abs(f.lu(piv, k))) piv = i;
    if (f.lu(piv, k) == 0.0) throw NumericError("lu: singular matrix");
    if (piv != k) {
      for (std::size_t j = 0; j < n; ++j) std::swap(f.lu(k, j), f.lu(piv, j));
      std::swap(f.perm[k], f.perm[piv]);
      f.sign = -f.sign;
    }
    for (std::size_t i = k + 1; i < n; ++i) {
      f.lu(i, k) /= f.lu(k, k);
      for (std::size_t j = k + 1; j < n; ++j) f.lu(i, j) -= f.lu(i, k) * f.lu(k, j);
    }
  }
  return f;
}

}  // namespace

Matrix solve(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows()) throw ContractError("solve: dimension mismatch");
  const Lu f = lu_decompose(a);
  const std::size_t n = a.rows();
  Matrix x(n, b.cols());
  for (std::size_t c = 0; c < b.cols(); ++c) {
    Vector y(n);
    for (std::size_t i = 0; i < n; ++i) {
      double s = b(f.perm[i], c);
      for (std::size_t j = 0; j < i; ++j) s -= f.lu(i, j) * y[j];
      y[i] = s;
    }
    for (std::size_t i = n; i-- > 0;) {
      double s = y[i];
      for (std::size_t j = i + 1; j < n; ++j) s -= f.lu(i, j) * x(j, c);
      x(i, c) = s / f.lu(i, i);
    }
  }
  return x;
}

Matrix inverse(const Matrix& a) { return solve(a, Matrix::identity(a.rows())); }

double determinant(const Matrix& a) {
  Lu f;
  try {
    f = lu_decompose(a);
  } catch (const NumericError&) {
    return 0.0;
  }
  double d = f.sign;
  for (std::size_t i = 0; i < a.rows(); ++i) d *= f.lu(i, i);
  return d;
}

bool is_skew(const Matrix& a, double tol) {
  if (!a.is_square()) return false;
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = i; j < a.cols(); ++j)
      if (std::abs(a(i, j) + a(j, i)) > tol) return false;
  return true;
}

bool is_symmetric(const Matrix& a, double tol) {
  if (!a.is_square()) return false;
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = i + 1; j < a.cols(); ++j)
      if (std::abs(a(i, j) - a(j, i)) > tol) return false;
  return true;
}

Matrix cayley_orthogonal(const Matrix& a) {
  require_finite(a, "cayley_orthogonal");
  if (!is_skew(a)) throw ContractError("cayley_orthogonal: input is not skew-symmetric");
  const Matrix id = Matrix::identity(a.rows());
  // (I - A)(I + A)^{-1} = ((I + A)^{-T} (I - A)^T)^T, and (I+A)^T = I - A for skew A.
  const Matrix rhs = (id - a).transpose();
  return solve(id - a, rhs).transpose();
}

}  // namespace ninode
