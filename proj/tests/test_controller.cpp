#include <doctest.h>

#include "ninode/controller.hpp"
#include "ninode/errors.hpp"
#include "support.hpp"

using namespace ninode;
using namespace testing_support;

namespace {

constexpr double kEta = 2.5790402038;

NinodeParts identity_parts(std::size_t m, double epsilon) {
  Rng rng(1);
  NinodeParts parts{PlnetHamiltonian(BiLipNet::identity(m, 1), 1.0), BiLipNet::identity(m, 1),
                    SkewHead(m, 0, 4, 1, rng), SpdHead(m, 0, 4, 1, epsilon, rng)};
  parts.skew.features().set_constant_output(Vector(m * (m - 1) / 2, 0.0));
  parts.spd.features().set_constant_output(Vector(m * (m + 1) / 2, 0.0));
  return parts;
}

NinodeController random_ninode(std::uint64_t seed, std::size_t l = 0) {
  NinodeConfig c;
  c.seed = seed;
  c.l = l;
  c.hidden = 16;
  c.head_hidden = 16;
  return NinodeController(c, kEta);
}

Matrix fd_output_jacobian(const Controller& ctrl, const Vector& x) {
  Matrix j(ctrl.output_dim(), x.size());
  for (std::size_t k = 0; k < x.size(); ++k) {
    Vector a = x, b = x;
    a[k] += 1e-6;
    b[k] -= 1e-6;
    const Vector fa = ctrl.output(a), fb = ctrl.output(b);
    for (std::size_t r = 0; r < j.rows(); ++r) j(r, k) = (fa[r] - fb[r]) / 2e-6;
  }
  return j;
}

}  // namespace

TEST_CASE("regularity certificate arithmetic") {
  const RegularityCertificate ok = regularity_certificate(1.0, 0.5, 1.5, 2.66);
  CHECK(ok.pass);
  CHECK(ok.margin == doctest::Approx(std::sqrt(2.66) - 1.5));
  CHECK(ok.ratio() == doctest::Approx(1.5 / std::sqrt(2.66)));

  const RegularityCertificate big = regularity_certificate(1.0, 0.5, 2.0, 2.66);
  CHECK_FALSE(big.pass);
  CHECK(big.margin < 0.0);
  CHECK_THROWS_AS(validate_regularity(big), CertificationError);

  CHECK_FALSE(regularity_certificate(1.0, 0.5, 2.0, 4.0).pass);  // equality is rejected
  CHECK_FALSE(regularity_certificate(1.0, 0.0, 1.0, 4.0).pass);
  CHECK_FALSE(regularity_certificate(1.0, 1.2, 1.0, 4.0).pass);
  CHECK(regularity_certificate(1.0, 1.0, 1.0, 4.0).pass);
  CHECK_FALSE(regularity_certificate(0.0, 0.5, 1.0, 4.0).pass);
  CHECK_FALSE(regularity_certificate(1.0, 0.5, 1.0, 0.0).pass);
  try {
    validate_regularity(big);
  } catch (const CertificationError& e) {
    const std::string what = e.what();
    CHECK(what.find("gamma=1") != std::string::npos);
    CHECK(what.find("eta=2.66") != std::string::npos);
  }
}

TEST_CASE("identity-configured NINODE controller") {
  const NinodeController ctrl(identity_parts(3, 1.0), 3, kEta, 0.9);
  CHECK(ctrl.output_scale() == doctest::Approx(0.9 * std::sqrt(kEta)));
  const Vector xdot = ctrl.dynamics(Vector{1, 0, 0}, Vector{0, 0, 0});
  CHECK(max_abs_diff(Matrix::column(xdot), Matrix::column(Vector{-1, 0, 0})) <= 1e-15);
  CHECK(ctrl.hamiltonian(Vector{3, 4, 0}) == doctest::Approx(12.5));

  const NinodeController wide(identity_parts(4, 0.1), 3, kEta, 0.9);
  const Vector y = wide.output(Vector{1, 2, 3, 4});
  const double s = wide.output_scale();
  CHECK(max_abs_diff(Matrix::column(y), Matrix::column(Vector{s, 2 * s, 3 * s})) <= 1e-14);

  const RegularityCertificate c = wide.certify(kEta);
  CHECK(c.pass);
  CHECK(c.gamma == doctest::Approx(1.0));
  CHECK(c.mu_upper == doctest::Approx(s));
  CHECK(c.ratio() == doctest::Approx(0.9));
}

TEST_CASE("random NINODE controller: equilibrium and certificate") {
  const NinodeController ctrl = random_ninode(3);
  CHECK(max_abs(ctrl.dynamics(Vector(6, 0.0), Vector(3, 0.0))) == 0.0);
  CHECK(max_abs(ctrl.output(Vector(6, 0.0))) == 0.0);
  CHECK(ctrl.hamiltonian(Vector(6, 0.0)) == 0.0);
  const RegularityCertificate c = ctrl.certify(kEta);
  CHECK(c.pass);
  CHECK(c.ratio() <= 0.9 + 1e-12);
  CHECK_FALSE(ctrl.certify(0.5 * kEta).pass);
  CHECK_NOTHROW(validate_regularity(ctrl, kEta));
}

TEST_CASE("NINODE output gain, Jacobian and gradient against oracles") {
  const NinodeController ctrl = random_ninode(5);
  const RegularityCertificate c = ctrl.certify(kEta);
  std::mt19937_64 rng(10);
  double worst = -1e300;
  for (int i = 0; i < 10000; ++i) {
    const Vector x = random_vector(6, rng, 2.0);
    worst = std::max(worst, norm(ctrl.output(x)) - c.mu_upper * norm(x));
  }
  CHECK(worst <= 1e-9);

  for (int i = 0; i < 10; ++i) {
    const Vector x = random_vector(6, rng, 2.0);
    const Matrix jt = ctrl.output_jacobian(x);
    CHECK(max_abs_diff(jt, fd_output_jacobian(ctrl, x)) <= 1e-7);
    // Rows of the output Jacobian are rows of an invertible map's Jacobian.
    CHECK(eigen_min_singular(jt) >= c.mu_lower - 1e-9);
    const Vector g = ctrl.hamiltonian_gradient(x);
    for (std::size_t k = 0; k < 6; ++k) {
      Vector a = x, b = x;
      a[k] += 1e-6;
      b[k] -= 1e-6;
      CHECK(g[k] == doctest::Approx((ctrl.hamiltonian(a) - ctrl.hamiltonian(b)) / 2e-6).epsilon(1e-6));
    }
  }
}

TEST_CASE("controller dissipation identity with an independent evaluation") {
  const NinodeController ctrl = random_ninode(8, 2);
  std::mt19937_64 rng(2);
  for (int i = 0; i < 200; ++i) {
    const Vector x = random_vector(6, rng, 2.0), u = random_vector(3, rng), z = random_vector(2, rng);
    const Vector xdot = ctrl.dynamics(x, u, z);
    const Matrix jac = fd_output_jacobian(ctrl, x);
    const double hdot = dot(ctrl.hamiltonian_gradient(x), xdot);
    const double supply = dot(u, matvec(jac, xdot));
    const Vector v = axpy(-1.0, matvec_transposed(jac, u), ctrl.hamiltonian_gradient(x));
    const double diss = dot(v, matvec(ctrl.damping(x, z), v));
    const double scale = std::max(1.0, std::abs(diss));
    CHECK(std::abs((hdot - supply) + diss) <= 1e-6 * scale);
    CHECK(hdot - supply <= 1e-6 * scale);
  }
}

TEST_CASE("structural heads inside the controller") {
  const NinodeController ctrl = random_ninode(4, 1);
  std::mt19937_64 rng(3);
  for (int i = 0; i < 100; ++i) {
    const Vector x = random_vector(6, rng, 3.0), z = random_vector(1, rng);
    const Matrix j = ctrl.skew(x, z);
    CHECK(max_abs((j + j.transpose()).entries()) == 0.0);
    CHECK(eigen_min_eig(ctrl.damping(x, z)) >= 0.1 - 1e-9);
  }
}

TEST_CASE("dimension and argument checks") {
  const NinodeController ctrl = random_ninode(1);
  CHECK_THROWS_AS(ctrl.dynamics(Vector(5, 0.0), Vector(3, 0.0)), ContractError);
  CHECK_THROWS_AS(ctrl.dynamics(Vector(6, 0.0), Vector(2, 0.0)), ContractError);
  CHECK_THROWS_AS(ctrl.dynamics(Vector(6, 0.0), Vector(3, 0.0), Vector(1, 0.0)), ContractError);
  CHECK_THROWS_AS(NinodeController(identity_parts(3, 0.1), 3, kEta, 1.0), ContractError);
  CHECK_THROWS_AS(NinodeController(identity_parts(3, 0.1), 4, kEta, 0.9), ContractError);
  NinodeConfig bad;
  bad.m = 2;
  CHECK_THROWS_AS(NinodeController(bad, kEta), ContractError);
}

TEST_CASE("clones are independent") {
  const NinodeController ctrl = random_ninode(6);
  std::unique_ptr<Controller> copy = ctrl.clone();
  const Vector x{0.1, 0.2, 0.3, 0.4, 0.5, 0.6};
  CHECK(copy->hamiltonian(x) == ctrl.hamiltonian(x));
  (*copy->parameters().front())[0] += 1.0;
  CHECK(copy->hamiltonian(x) != ctrl.hamiltonian(x));
}

TEST_CASE("linear NI baseline") {
  for (std::uint64_t seed : {1u, 2u, 3u, 4u, 5u}) {
    const LinearNiController ctrl = build_linear_ni(3, 3, seed, kEta);
    const RegularityCertificate c = ctrl.certify(kEta);
    CHECK(c.pass);
    // The frozen norm estimate never exceeds the exact norm, so the ratio sits at or below kappa.
    CHECK(c.ratio() <= 0.9 + 1e-12);
    CHECK(c.ratio() > 0.85);
  }
  const LinearNiController ctrl = build_linear_ni(6, 3, 9, kEta);
  const RegularityCertificate c = ctrl.certify(kEta);
  const Matrix p = ctrl.hamiltonian_matrix();
  const Matrix cbar = ctrl.output_matrix();
  CHECK(c.gamma == doctest::Approx(std::sqrt(2.0 * eigen_min_eig(p))).epsilon(1e-12));
  CHECK(c.mu_upper == doctest::Approx(eigen_spectral_norm(cbar)).epsilon(1e-12));
  CHECK(c.mu_lower == doctest::Approx(eigen_min_singular(cbar)).epsilon(1e-12));

  std::mt19937_64 rng(4);
  const Vector x = random_vector(6, rng), u = random_vector(3, rng);
  CHECK(ctrl.hamiltonian(x) == doctest::Approx(dot(x, matvec(p, x))).epsilon(1e-12));
  const Vector y = ctrl.output(x), full = matvec(cbar, x);
  for (std::size_t i = 0; i < 3; ++i) CHECK(y[i] == doctest::Approx(full[i]).epsilon(1e-12));
  const Matrix jr = ctrl.skew_matrix() - ctrl.damping_matrix();
  Matrix cn(3, 6);
  for (std::size_t r = 0; r < 3; ++r)
    for (std::size_t k = 0; k < 6; ++k) cn(r, k) = cbar(r, k);
  const Vector v = axpy(-1.0, matvec_transposed(cn, u), matvec(2.0 * p, x));
  const Vector expect = matvec(jr, v), got = ctrl.dynamics(x, u);
  for (std::size_t i = 0; i < 6; ++i) CHECK(got[i] == doctest::Approx(expect[i]).epsilon(1e-10));
  CHECK(eigen_min_eig(ctrl.damping_matrix()) >= 0.1 - 1e-12);

  LinearNiController::Params half;
  half.hamiltonian_factor = Matrix(21, 1);
  half.skew = Matrix(15, 1);
  half.damping_factor = Matrix(21, 1);
  half.output_raw = Matrix::identity(6);
  const LinearNiController plain(6, 3, 0.1, kEta, 0.9, half);
  CHECK(plain.hamiltonian(Vector{1, 2, 0, 0, 0, 0}) == doctest::Approx(2.5));
  CHECK(plain.certify(kEta).gamma == doctest::Approx(1.0));
}
