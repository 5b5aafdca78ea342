#include <doctest.h>

#include <json.hpp>

#include "ninode/errors.hpp"
#include "ninode/verify.hpp"
#include "support.hpp"

using namespace ninode;
using namespace testing_support;

namespace {

MechanicalPlant certified_plant(std::optional<Vector> damping = std::nullopt) {
  MechanicalPlant plant = MechanicalPlant::spring_chain(SpringChainParams::reference(), std::move(damping));
  plant.set_eta(estimate_eta(plant, 5.0, 20000).eta);
  return plant;
}

NinodeController small_ninode(double eta, std::uint64_t seed = 1, std::size_t l = 0) {
  NinodeConfig c;
  c.seed = seed;
  c.l = l;
  c.hidden = 8;
  c.head_hidden = 8;
  c.head_layers = 1;
  return NinodeController(c, eta);
}

VerifyOptions fast_options() {
  VerifyOptions o;
  o.structural_samples = 300;
  o.pair_samples = 300;
  o.rollout_steps = 1000;
  o.gradient_steps = 4;
  o.initial.plant.q = {1, 2, 3};
  return o;
}

}  // namespace

TEST_CASE("gradient mismatch measure") {
  CHECK(gradient_mismatch(Vector{1, 2}, Vector{1, 2}) == 0.0);
  CHECK(gradient_mismatch(Vector{0, 0}, Vector{0, 0}) == 0.0);
  CHECK(gradient_mismatch(Vector{1, 2}, Vector{1, 2.0002}) == doctest::Approx(1e-4).epsilon(1e-6));
  CHECK(gradient_mismatch(Vector{1, 0}, Vector{1, 1e-12}) <= 1e-12);
  CHECK_THROWS_AS(gradient_mismatch(Vector{1}, Vector{1, 2}), ContractError);
}

TEST_CASE("plant NI identity") {
  const CheckRecord free = check_ni_plant(certified_plant(), 10000, 1.0, 1);
  CHECK(free.pass);
  CHECK(free.worst <= 1e-10);
  CHECK(free.samples == 10000);
  const CheckRecord damped = check_ni_plant(certified_plant(Vector{0.1, 0.1, 0.1}), 10000, 1.0, 2);
  CHECK(damped.pass);
}

TEST_CASE("controller dissipation identity") {
  const MechanicalPlant plant = certified_plant();
  for (std::size_t l : {0u, 2u}) {
    const CheckRecord r = check_ni_controller(small_ninode(plant.eta(), 3, l), 2000, 5.0, 4);
    CHECK(r.pass);
  }
  CHECK(check_ni_controller(build_linear_ni(6, 3, 1, plant.eta()), 2000, 5.0, 5).pass);
}

TEST_CASE("Lyapunov check") {
  const MechanicalPlant plant = certified_plant();
  const NinodeController ctrl = small_ninode(plant.eta());
  const ClosedLoopState rest{{Vector(3, 0.0), Vector(3, 0.0)}, Vector(6, 0.0), 0.0};
  const CheckRecord at_rest = check_lyapunov(rollout(plant, ctrl, rest, 100, SimulationOptions{}));
  CHECK(at_rest.pass);
  CHECK(at_rest.worst == 0.0);

  const ClosedLoopState start{{{1, 2, 3}, Vector(3, 0.0)}, Vector(6, 0.0), 0.0};
  const CheckRecord moving = check_lyapunov(rollout(plant, ctrl, start, 5000, SimulationOptions{}));
  CHECK(moving.pass);

  Trajectory rising;
  for (double w : {1.0, 2.0, 3.0}) {
    StepRecord s;
    s.w = w;
    rising.records.push_back(s);
  }
  CHECK_FALSE(check_lyapunov(rising).pass);
  CHECK_FALSE(check_lyapunov(Trajectory{}).pass);

  // Uncertified controllers are still checked; the outcome is reported, not assumed.
  const NinodeController loose = small_ninode(16.0 * plant.eta());
  SimulationOptions ablation;
  ablation.allow_uncertified = true;
  const CheckRecord r = check_lyapunov(rollout(plant, loose, start, 2000, ablation));
  CHECK(r.samples == 2001);
  CHECK_FALSE(r.detail.empty());
}

TEST_CASE("bi-Lipschitz sampling check") {
  Rng rng(3);
  BiLipConfig c;
  c.dim = 4;
  const BiLipNet net(c, rng);
  CHECK(check_bilipschitz(net, net.certify(), 10000, 5.0, 1).pass);
  CHECK(check_bilipschitz(net, {0.25, 2.25}, 10000, 5.0, 1).pass);
  CHECK_FALSE(check_bilipschitz(net, {1.0, 1.0}, 1000, 5.0, 1).pass);
  CHECK(check_bilipschitz(BiLipNet::identity(3), {1.0, 1.0}, 1000, 5.0, 1).pass);
}

TEST_CASE("certified-net suite") {
  const MechanicalPlant plant = certified_plant();
  for (int kind = 0; kind < 2; ++kind) {
    std::unique_ptr<Controller> ctrl;
    if (kind == 0) ctrl = std::make_unique<NinodeController>(small_ninode(plant.eta(), 2, 1));
    else ctrl = std::make_unique<LinearNiController>(build_linear_ni(6, 3, 2, plant.eta()));
    const auto records = check_certified_nets(*ctrl, plant.eta(), 1000, 1000, 5.0, 7);
    for (const auto& r : records) {
      INFO(ctrl->kind() << " " << r.name << " worst=" << r.worst << " " << r.detail);
      CHECK(r.pass);
    }
    CHECK(records.size() >= 7);
  }
  const auto loose = check_certified_nets(small_ninode(4.0 * plant.eta()), plant.eta(), 100, 100, 5.0, 1);
  CHECK_FALSE(loose.front().pass);
  CHECK(loose.front().name == "regularity");
}

TEST_CASE("rollout gradient check") {
  const MechanicalPlant plant = certified_plant();
  TrainConfig c;
  c.steps = 10;
  const CheckRecord r = check_gradients(plant, small_ninode(plant.eta()), c);
  CHECK(r.pass);
  CHECK(r.worst <= 1e-4);
}

TEST_CASE("full verification report") {
  const MechanicalPlant plant = certified_plant();
  const NinodeController ctrl = small_ninode(plant.eta(), 5);
  const VerificationReport report = run_verification(plant, ctrl, fast_options());
  CHECK(report.pass());
  for (const char* name : {"ni_plant", "ni_controller", "regularity", "skew_exactness", "spd_floor", "pl_inequality",
                           "output_gain", "lyapunov", "gradients"})
    CHECK(report.find(name) != nullptr);
  const auto j = nlohmann::json::parse(report.json());
  CHECK(j.at("pass").get<bool>());
  for (const auto& c : j.at("checks"))
    for (const char* key : {"name", "samples", "worst", "tol", "pass", "anchor"}) CHECK(c.contains(key));
  CHECK(report.text().find("PASS ni_plant") != std::string::npos);

  const VerificationReport again = run_verification(plant, ctrl, fast_options());
  CHECK(again.json() == report.json());

  const VerificationReport loose = run_verification(plant, small_ninode(4.0 * plant.eta()), fast_options());
  CHECK_FALSE(loose.pass());
  CHECK_FALSE(loose.find("regularity")->pass);
}

TEST_CASE("seed derivation") {
  CHECK(derive_seed(1, 0) != derive_seed(1, 1));
  CHECK(derive_seed(1, 0) != derive_seed(2, 0));
  CHECK(derive_seed(5, 3) == derive_seed(5, 3));
}
