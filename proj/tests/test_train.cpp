#include <doctest.h>

#include <cmath>
#include <sstream>

#include "ninode/errors.hpp"
#include "ninode/train.hpp"
#include "support.hpp"

using namespace ninode;
using namespace testing_support;

namespace {

MechanicalPlant certified_plant() {
  MechanicalPlant plant = MechanicalPlant::spring_chain(SpringChainParams::reference());
  plant.set_eta(estimate_eta(plant, 5.0, 20000).eta);
  return plant;
}

NinodeController small_ninode(double eta, std::uint64_t seed = 1) {
  NinodeConfig c;
  c.seed = seed;
  c.hidden = 8;
  c.head_hidden = 8;
  c.head_layers = 1;
  return NinodeController(c, eta);
}

Trajectory two_records(Vector q, Vector p, Vector u) {
  Trajectory t;
  t.h = 0.002;
  StepRecord a;
  a.q = {7, 7, 7};
  a.p = {7, 7, 7};
  a.x2 = Vector(6, 0.0);
  a.u1 = {7, 7, 7};
  StepRecord b;
  b.q = std::move(q);
  b.p = std::move(p);
  b.x2 = Vector(6, 0.0);
  b.u1 = std::move(u);
  t.records = {a, b};
  return t;
}

}  // namespace

TEST_CASE("quadratic loss examples") {
  TrainConfig c;
  resolve_costs(c, 3, 6);
  CHECK(c.state_cost == Matrix::identity(6));
  CHECK(c.control_cost == 0.1 * Matrix::identity(3));

  Trajectory zero = two_records(Vector(3, 0.0), Vector(3, 0.0), Vector(3, 0.0));
  zero.records[0] = zero.records[1];
  CHECK(quadratic_loss(zero, c.state_cost, c.control_cost) == 0.0);
  // The initial record is excluded from the sum.
  CHECK(quadratic_loss(two_records({1, 0, 0}, {0, 0, 0}, {0, 0, 0}), c.state_cost, c.control_cost) == 1.0);
  CHECK(quadratic_loss(two_records({0, 0, 0}, {0, 0, 0}, {1, 1, 1}), c.state_cost, c.control_cost) ==
        doctest::Approx(0.3).epsilon(1e-15));

  Trajectory with_x2 = two_records({0, 0, 0}, {0, 0, 0}, {0, 0, 0});
  with_x2.records[1].x2 = {1, 1, 0, 0, 0, 0};
  CHECK(quadratic_loss(with_x2, Matrix::identity(12), c.control_cost) == 2.0);
  CHECK(quadratic_loss(with_x2, c.state_cost, c.control_cost) == 0.0);
}

TEST_CASE("cost validation") {
  TrainConfig bad_q;
  bad_q.state_cost = Matrix{{1, 0}, {0, -1}};
  CHECK_THROWS_AS(resolve_costs(bad_q, 1, 1), ContractError);
  TrainConfig bad_r;
  bad_r.control_cost = Matrix(3, 3);
  CHECK_THROWS_AS(resolve_costs(bad_r, 3, 6), ContractError);
  TrainConfig bad_shape;
  bad_shape.state_cost = Matrix::identity(5);
  CHECK_THROWS_AS(resolve_costs(bad_shape, 3, 6), ContractError);
  TrainConfig no_steps;
  no_steps.steps = 0;
  CHECK_THROWS_AS(resolve_costs(no_steps, 3, 6), ContractError);
}

TEST_CASE("Adam direction") {
  Matrix p(2, 1);
  Adam adam(AdamConfig{}, {&p});
  const auto d = adam.direction({Matrix::column(Vector{0.5, -2.0})});
  CHECK(d[0][0] == doctest::Approx(1.0).epsilon(1e-6));
  CHECK(d[0][1] == doctest::Approx(-1.0).epsilon(1e-6));
  CHECK(adam.iterations() == 1);
  CHECK_THROWS_AS(adam.direction({}), ContractError);
  AdamConfig bad;
  bad.lr = 0.0;
  CHECK_THROWS_AS(Adam(bad, {&p}), ContractError);
}

TEST_CASE("loss and gradient") {
  const MechanicalPlant plant = certified_plant();
  const NinodeController ctrl = small_ninode(plant.eta());
  TrainConfig c;
  c.steps = 10;
  const LossGradient lg = loss_and_gradient(plant, ctrl, c);
  CHECK(lg.loss == doctest::Approx(evaluate_loss(plant, ctrl, c)).epsilon(1e-13));
  REQUIRE(lg.gradient.size() == const_cast<NinodeController&>(ctrl).parameters().size());

  std::unique_ptr<Controller> probe = ctrl.clone();
  double err = 0.0, scale = 0.0;
  const auto params = probe->parameters();
  for (std::size_t i = 0; i < params.size(); ++i) {
    for (std::size_t k = 0; k < params[i]->size(); ++k) {
      const double s = (*params[i])[k];
      (*params[i])[k] = s + 1e-5;
      const double lp = evaluate_loss(plant, *probe, c);
      (*params[i])[k] = s - 1e-5;
      const double lm = evaluate_loss(plant, *probe, c);
      (*params[i])[k] = s;
      const double fd = (lp - lm) / 2e-5;
      err = std::max(err, std::abs(fd - lg.gradient[i][k]));
      scale = std::max({scale, std::abs(fd), std::abs(lg.gradient[i][k])});
    }
  }
  CHECK(err / scale <= 1e-4);

  TrainConfig windowed = c;
  windowed.window = 3;
  const LossGradient w = loss_and_gradient(plant, ctrl, windowed);
  CHECK(w.loss == doctest::Approx(lg.loss).epsilon(1e-13));
  CHECK(w.gradient.size() == lg.gradient.size());
}

TEST_CASE("zero epochs return the initial controller") {
  const MechanicalPlant plant = certified_plant();
  NinodeController ctrl = small_ninode(plant.eta());
  TrainConfig c;
  c.steps = 20;
  c.epochs = 0;
  TrainResult r = train(plant, ctrl, c);
  REQUIRE(r.history.size() == 1);
  CHECK(r.history[0].epoch == 0);
  const auto a = ctrl.parameters(), b = r.controller->parameters();
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(*a[i] == *b[i]);
}

TEST_CASE("short training run improves the loss and keeps the certificate") {
  const MechanicalPlant plant = certified_plant();
  const NinodeController ctrl = small_ninode(plant.eta(), 3);
  TrainConfig c;
  c.steps = 100;
  c.epochs = 15;
  c.adam.lr = 1e-2;
  std::size_t calls = 0;
  TrainResult r = train(plant, ctrl, c, [&](const EpochRecord&) { ++calls; });
  CHECK(calls == 16);
  REQUIRE(r.history.size() == 16);
  CHECK(r.history.back().loss < r.history.front().loss);
  for (const auto& e : r.history) CHECK(e.certificate_margin > 0.0);
  for (std::size_t i = 0; i + 1 < r.history.size(); ++i) {
    const double ratio = c.adam.lr / r.history[i].step_size;
    CHECK(std::abs(ratio - std::exp2(std::round(std::log2(ratio)))) <= 1e-12 * ratio);
  }
  CHECK(r.certificate.pass);
  CHECK(r.certificate.margin == r.history.back().certificate_margin);

  std::ostringstream csv;
  r.write_history_csv(csv);
  CHECK(csv.str().rfind("epoch,loss,grad_norm,step_size,certificate_margin\n", 0) == 0);

  TrainResult again = train(plant, ctrl, c);
  for (std::size_t i = 0; i < r.history.size(); ++i) CHECK(again.history[i].loss == r.history[i].loss);
}

TEST_CASE("linear baseline trains through the same loop") {
  const MechanicalPlant plant = certified_plant();
  const LinearNiController ctrl = build_linear_ni(6, 3, 2, plant.eta());
  TrainConfig c;
  c.steps = 100;
  c.epochs = 10;
  c.adam.lr = 1e-2;
  const TrainResult r = train(plant, ctrl, c);
  CHECK(r.history.back().loss < r.history.front().loss);
  CHECK(r.certificate.pass);
}

TEST_CASE("uncertified initial controllers are rejected unless certificates are waived") {
  const MechanicalPlant plant = certified_plant();
  const NinodeController loose = small_ninode(4.0 * plant.eta());
  TrainConfig c;
  c.steps = 5;
  c.epochs = 1;
  CHECK_THROWS_AS(train(plant, loose, c), CertificationError);
  c.require_certificate = false;
  CHECK_NOTHROW(train(plant, loose, c));
}

TEST_CASE("initial state scaling") {
  TrainConfig c;
  c.r = 0.5;
  const ClosedLoopState s = initial_state(c, 6);
  CHECK(s.plant.q == Vector{0.5, 1.0, 1.5});
  CHECK(s.plant.p == Vector(3, 0.0));
  CHECK(s.x2 == Vector(6, 0.0));
}
