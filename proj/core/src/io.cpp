#include "ninode/io.hpp"

#include <algorithm>
#include <bit>
#include <iomanip>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "ninode/errors.hpp"

namespace ninode {

using nlohmann::json;

std::string read_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw ConfigError("cannot read " + path);
  std::ostringstream s;
  s << f.rdbuf();
  return s.str();
}

void write_file(const std::string& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw ConfigError("cannot open " + path + " for writing");
  f << text;
  if (!f) throw ConfigError("failed writing " + path);
}

namespace {

// Typed access to one JSON object; remembers consumed keys so that leftovers
// can be reported as unknown fields.
class Fields {
 public:
  Fields(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j.is_object()) throw ConfigError("config: '" + where() + "' must be an object");
  }

  bool has(const char* key) const { return j_.contains(key); }

  const json* child(const char* key) {
    seen_.insert(key);
    auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  std::string path(const char* key) const { return path_.empty() ? key : path_ + "." + key; }

  void get(const char* key, double& out) {
    if (const json* v = child(key)) {
      if (!v->is_number()) fail(key, "a number");
      out = v->get<double>();
      if (!std::isfinite(out)) fail(key, "finite");
    }
  }
  void get(const char* key, std::size_t& out) {
    if (const json* v = child(key)) {
      if (!v->is_number_unsigned()) fail(key, "a non-negative integer");
      out = v->get<std::size_t>();
    }
  }
  void get(const char* key, std::uint64_t& out, int) {
    if (const json* v = child(key)) {
      if (!v->is_number_unsigned()) fail(key, "a non-negative integer");
      out = v->get<std::uint64_t>();
    }
  }
  void get(const char* key, int& out) {
    if (const json* v = child(key)) {
      if (!v->is_number_integer()) fail(key, "an integer");
      out = v->get<int>();
    }
  }
  void get(const char* key, bool& out) {
    if (const json* v = child(key)) {
      if (!v->is_boolean()) fail(key, "a boolean");
      out = v->get<bool>();
    }
  }
  void get(const char* key, std::string& out) {
    if (const json* v = child(key)) {
      if (!v->is_string()) fail(key, "a string");
      out = v->get<std::string>();
    }
  }
  void get(const char* key, Vector& out) {
    if (const json* v = child(key)) out = vector_of(*v, key);
  }
  void get(const char* key, std::optional<Vector>& out) {
    if (const json* v = child(key)) out = vector_of(*v, key);
  }
  void get(const char* key, std::optional<double>& out) {
    if (const json* v = child(key)) {
      if (!v->is_number()) fail(key, "a number");
      out = v->get<double>();
    }
  }
  void get(const char* key, Matrix& out) {
    if (const json* v = child(key)) {
      if (!v->is_array() || v->empty()) fail(key, "a non-empty array of rows");
      const std::size_t rows = v->size();
      std::size_t cols = 0;
      std::vector<double> data;
      for (const auto& row : *v) {
        const Vector r = vector_of(row, key);
        if (cols == 0) cols = r.size();
        if (r.size() != cols || cols == 0) fail(key, "a rectangular matrix");
        data.insert(data.end(), r.begin(), r.end());
      }
      out = Matrix(rows, cols, std::move(data));
    }
  }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it)
      if (!seen_.count(it.key())) throw ConfigError("config: unknown field '" + path(it.key().c_str()) + "'");
  }

 private:
  std::string where() const { return path_.empty() ? "<root>" : path_; }
  [[noreturn]] void fail(const char* key, const std::string& what) const {
    throw ConfigError("config: field '" + path(key) + "' must be " + what);
  }
  Vector vector_of(const json& v, const char* key) const {
    if (!v.is_array()) fail(key, "an array of numbers");
    Vector out;
    for (const auto& e : v) {
      if (!e.is_number()) fail(key, "an array of numbers");
      out.push_back(e.get<double>());
    }
    return out;
  }

  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

json parse_json(const std::string& text, const std::string& what) {
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(what + ": " + e.what());
  }
}

json matrix_json(const Matrix& m) {
  json rows = json::array();
  for (std::size_t r = 0; r < m.rows(); ++r) {
    json row = json::array();
    for (std::size_t c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace

ExperimentConfig parse_config(const std::string& text) {
  const json root = parse_json(text, "config");
  ExperimentConfig c;
  Fields top(root, "");
  top.get("seed", c.seed, 0);
  top.get("output_dir", c.output_dir);

  if (const json* j = top.child("plant")) {
    Fields f(*j, "plant");
    f.get("masses", c.plant.params.masses);
    f.get("linear_stiffness", c.plant.params.linear);
    f.get("cubic_stiffness", c.plant.params.cubic);
    f.get("damping", c.plant.damping);
    f.get("eta_radius", c.plant.eta_radius);
    f.get("eta_samples", c.plant.eta_samples);
    f.finish();
  }
  if (const json* j = top.child("controller")) {
    Fields f(*j, "controller");
    NinodeConfig& n = c.controller.ninode;
    f.get("m", n.m);
    f.get("l", n.l);
    f.get("layers", n.layers);
    f.get("alpha", n.alpha);
    f.get("beta", n.beta);
    f.get("hidden", n.hidden);
    f.get("weight_layers", n.weight_layers);
    f.get("orthogonal", n.orthogonal);
    f.get("head_hidden", n.head_hidden);
    f.get("head_layers", n.head_layers);
    f.get("epsilon", n.epsilon);
    f.get("kappa", n.kappa);
    f.get("hamiltonian_scale", n.hamiltonian_scale);
    f.get("linear_scale", c.controller.linear_scale);
    f.finish();
  }
  if (const json* j = top.child("train")) {
    Fields f(*j, "train");
    TrainConfig& t = c.train;
    f.get("steps", t.steps);
    f.get("h", t.h);
    f.get("substeps", t.substeps);
    f.get("epochs", t.epochs);
    f.get("lr", t.adam.lr);
    f.get("beta1", t.adam.beta1);
    f.get("beta2", t.adam.beta2);
    f.get("adam_epsilon", t.adam.epsilon);
    f.get("q0", t.q0);
    f.get("r", t.r);
    f.get("window", t.window);
    f.get("power_iters", t.power_iters);
    f.get("max_halvings", t.max_halvings);
    f.get("include_controller_state", c.include_controller_state);
    f.get("state_cost", t.state_cost);
    f.get("control_cost", t.control_cost);
    f.finish();
  }
  if (const json* j = top.child("simulate")) {
    Fields f(*j, "simulate");
    f.get("steps", c.simulate_steps);
    f.get("h", c.simulation.h);
    f.get("substeps", c.simulation.substeps);
    f.get("divergence_bound", c.simulation.divergence_bound);
    f.finish();
  }
  if (const json* j = top.child("verify")) {
    Fields f(*j, "verify");
    f.get("samples", c.verify.structural_samples);
    f.get("pair_samples", c.verify.pair_samples);
    f.get("radius", c.verify.radius);
    f.get("plant_radius", c.verify.plant_radius);
    f.get("steps", c.verify.rollout_steps);
    f.get("gradient_steps", c.verify.gradient_steps);
    f.finish();
  }
  if (const json* j = top.child("sweep")) {
    Fields f(*j, "sweep");
    f.get("factors", c.sweep_factors);
    f.finish();
  }
  top.finish();

  // Semantic checks that do not need the plant to be built.
  try {
    c.plant.params.validate();
  } catch (const ContractError& e) {
    throw ConfigError(std::string("config: plant: ") + e.what());
  }
  const std::size_t n = c.plant.params.dim();
  if (c.plant.damping && c.plant.damping->size() != n)
    throw ConfigError("config: field 'plant.damping' must have one entry per mass");
  if (c.plant.damping)
    for (double d : *c.plant.damping)
      if (!(d >= 0.0)) throw ConfigError("config: field 'plant.damping' must be non-negative");
  if (c.train.q0.size() != n) throw ConfigError("config: field 'train.q0' must have one entry per mass");
  if (c.controller.ninode.m < n) throw ConfigError("config: field 'controller.m' must be at least the plant dimension");
  if (!(c.train.h > 0.0) || !(c.simulation.h > 0.0)) throw ConfigError("config: step sizes must be positive");
  if (c.train.substeps < 1 || c.simulation.substeps < 1) throw ConfigError("config: substeps must be at least 1");
  if (c.train.steps == 0) throw ConfigError("config: field 'train.steps' must be positive");
  if (!(c.train.adam.lr > 0.0)) throw ConfigError("config: field 'train.lr' must be positive");
  for (double r : c.sweep_factors)
    if (!(r > 0.0)) throw ConfigError("config: sweep factors must be positive");
  if (c.plant.eta_radius && !(*c.plant.eta_radius > 0.0))
    throw ConfigError("config: field 'plant.eta_radius' must be positive");
  c.controller.ninode.n = n;
  c.controller.ninode.seed = c.seed;
  c.verify.seed = c.seed;
  c.train.seed = c.seed;
  return c;
}

ExperimentConfig load_config(const std::string& path) { return parse_config(read_file(path)); }

std::string config_json(const ExperimentConfig& c) {
  json j;
  j["seed"] = c.seed;
  j["output_dir"] = c.output_dir;
  json plant;
  plant["masses"] = c.plant.params.masses;
  plant["linear_stiffness"] = c.plant.params.linear;
  plant["cubic_stiffness"] = c.plant.params.cubic;
  if (c.plant.damping) plant["damping"] = *c.plant.damping;
  if (c.plant.eta_radius) plant["eta_radius"] = *c.plant.eta_radius;
  plant["eta_samples"] = c.plant.eta_samples;
  j["plant"] = plant;
  const NinodeConfig& n = c.controller.ninode;
  j["controller"] = {{"m", n.m},
                     {"l", n.l},
                     {"layers", n.layers},
                     {"alpha", n.alpha},
                     {"beta", n.beta},
                     {"hidden", n.hidden},
                     {"weight_layers", n.weight_layers},
                     {"orthogonal", n.orthogonal},
                     {"head_hidden", n.head_hidden},
                     {"head_layers", n.head_layers},
                     {"epsilon", n.epsilon},
                     {"kappa", n.kappa},
                     {"hamiltonian_scale", n.hamiltonian_scale},
                     {"linear_scale", c.controller.linear_scale}};
  const TrainConfig& t = c.train;
  json train = {{"steps", t.steps},
                {"h", t.h},
                {"substeps", t.substeps},
                {"epochs", t.epochs},
                {"lr", t.adam.lr},
                {"beta1", t.adam.beta1},
                {"beta2", t.adam.beta2},
                {"adam_epsilon", t.adam.epsilon},
                {"q0", t.q0},
                {"r", t.r},
                {"window", t.window},
                {"power_iters", t.power_iters},
                {"max_halvings", t.max_halvings},
                {"include_controller_state", c.include_controller_state}};
  if (!t.state_cost.empty()) train["state_cost"] = matrix_json(t.state_cost);
  if (!t.control_cost.empty()) train["control_cost"] = matrix_json(t.control_cost);
  j["train"] = train;
  j["simulate"] = {{"steps", c.simulate_steps},
                   {"h", c.simulation.h},
                   {"substeps", c.simulation.substeps},
                   {"divergence_bound", c.simulation.divergence_bound}};
  j["verify"] = {{"samples", c.verify.structural_samples},
                 {"pair_samples", c.verify.pair_samples},
                 {"radius", c.verify.radius},
                 {"plant_radius", c.verify.plant_radius},
                 {"steps", c.verify.rollout_steps},
                 {"gradient_steps", c.verify.gradient_steps}};
  j["sweep"] = {{"factors", c.sweep_factors}};
  return j.dump(2) + "\n";
}

void apply_seed(ExperimentConfig& config, std::uint64_t seed) {
  config.seed = seed;
  config.controller.ninode.seed = seed;
  config.verify.seed = seed;
  config.train.seed = seed;
}

double eta_radius(const ExperimentConfig& config) {
  if (config.plant.eta_radius) return *config.plant.eta_radius;
  double r = config.train.r;
  for (double f : config.sweep_factors) r = std::max(r, f);
  return std::max(5.0, 1.2 * r * norm(config.train.q0));
}

MechanicalPlant build_plant(const ExperimentConfig& config, EtaReport* report) {
  MechanicalPlant plant = MechanicalPlant::spring_chain(config.plant.params, config.plant.damping);
  const EtaReport rep = estimate_eta(plant, eta_radius(config), config.plant.eta_samples, config.seed);
  plant.set_eta(rep.eta);
  if (report) *report = rep;
  return plant;
}

std::unique_ptr<NinodeController> build_ninode(const ExperimentConfig& config, double eta) {
  NinodeConfig n = config.controller.ninode;
  n.n = config.plant.params.dim();
  n.seed = config.seed;
  return std::make_unique<NinodeController>(n, eta);
}

std::unique_ptr<LinearNiController> build_linear(const ExperimentConfig& config, double eta) {
  const NinodeConfig& n = config.controller.ninode;
  return std::make_unique<LinearNiController>(build_linear_ni(n.m, config.plant.params.dim(), config.seed, eta,
                                                              n.kappa, n.epsilon, config.controller.linear_scale));
}

TrainConfig resolved_train_config(const ExperimentConfig& config, std::size_t n, std::size_t m) {
  TrainConfig t = config.train;
  if (t.state_cost.empty() && config.include_controller_state) t.state_cost = Matrix::identity(2 * n + m);
  resolve_costs(t, n, m);
  return t;
}

// Checkpoints

namespace {

constexpr const char* kFormat = "ninode-checkpoint";
constexpr int kVersion = 1;

json bilip_config_json(const BiLipConfig& c) {
  return {{"dim", c.dim},           {"layers", c.layers}, {"alpha", c.alpha},
          {"beta", c.beta},         {"hidden", c.hidden}, {"weight_layers", c.weight_layers},
          {"orthogonal", c.orthogonal}};
}

BiLipConfig bilip_config_from(const json& j, const std::string& path) {
  BiLipConfig c;
  Fields f(j, path);
  f.get("dim", c.dim);
  f.get("layers", c.layers);
  f.get("alpha", c.alpha);
  f.get("beta", c.beta);
  f.get("hidden", c.hidden);
  f.get("weight_layers", c.weight_layers);
  f.get("orthogonal", c.orthogonal);
  f.finish();
  return c;
}

json head_json(const FeatureMlp& net) {
  return {{"hidden", net.weights().front().rows()}, {"layers", net.weights().size() - 1}};
}

void net_names(const BiLipNet& net, const std::string& prefix, std::vector<std::string>& out) {
  for (std::size_t k = 0; k < net.residuals().size(); ++k) {
    const std::string layer = prefix + ".layer" + std::to_string(k);
    for (std::size_t i = 0; i < net.residuals()[k].weight_layers(); ++i) {
      out.push_back(layer + ".weight" + std::to_string(i));
      out.push_back(layer + ".bias" + std::to_string(i));
    }
    if (!net.rotations().empty()) out.push_back(layer + ".rotation");
  }
}

void head_names(const FeatureMlp& net, const std::string& prefix, std::vector<std::string>& out) {
  for (std::size_t i = 0; i < net.weights().size(); ++i) {
    out.push_back(prefix + ".weight" + std::to_string(i));
    out.push_back(prefix + ".bias" + std::to_string(i));
  }
}

std::vector<std::string> parameter_names(const Controller& ctrl) {
  std::vector<std::string> out;
  if (const auto* nc = dynamic_cast<const NinodeController*>(&ctrl)) {
    net_names(nc->parts().hamiltonian.core(), "hamiltonian", out);
    out.push_back("hamiltonian.log_scale");
    net_names(nc->parts().output, "output", out);
    head_names(nc->parts().skew.features(), "skew", out);
    head_names(nc->parts().spd.features(), "damping", out);
  } else {
    out = {"log_scale", "hamiltonian_factor", "skew", "damping_factor", "output_raw"};
  }
  return out;
}

json certificate_json(const RegularityCertificate& c) {
  return {{"gamma", c.gamma}, {"mu_lower", c.mu_lower}, {"mu_upper", c.mu_upper},
          {"eta", c.eta},     {"margin", c.margin},     {"pass", c.pass}};
}

}  // namespace

std::string parameter_digest(Controller& ctrl) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  const auto mix = [&h](std::uint64_t word) {
    for (int b = 0; b < 8; ++b) {
      h ^= (word >> (8 * b)) & 0xffU;
      h *= 0x100000001b3ULL;
    }
  };
  const auto mix_values = [&](const std::vector<double>& v) {
    mix(v.size());
    for (double x : v) mix(std::bit_cast<std::uint64_t>(x));
  };
  for (Matrix* p : ctrl.parameters()) {
    mix(p->rows());
    mix_values(p->entries());
  }
  for (PowerIteration* p : ctrl.power_states()) mix_values(p->right());
  std::ostringstream out;
  out << std::hex << std::setw(16) << std::setfill('0') << h;
  return out.str();
}

std::string checkpoint_json(Controller& ctrl, const RegularityCertificate& cert, std::uint64_t seed) {
  json j;
  j["format"] = kFormat;
  j["version"] = kVersion;
  j["kind"] = ctrl.kind();
  j["seed"] = seed;
  j["n"] = ctrl.output_dim();
  j["m"] = ctrl.state_dim();
  j["l"] = ctrl.signal_dim();
  j["kappa"] = ctrl.kappa();
  j["epsilon"] = ctrl.damping_floor();
  json constants = certificate_json(cert);
  constants["epsilon"] = ctrl.damping_floor();
  if (auto* nc = dynamic_cast<NinodeController*>(&ctrl)) {
    j["design_eta"] = nc->design_eta();
    j["hamiltonian_net"] = bilip_config_json(nc->parts().hamiltonian.core().config());
    j["output_net"] = bilip_config_json(nc->parts().output.config());
    j["skew_head"] = head_json(nc->parts().skew.features());
    j["damping_head"] = head_json(nc->parts().spd.features());
    try {
      const BiLipConstants g = nc->parts().hamiltonian.core().certify();
      const BiLipConstants c = nc->parts().output.certify();
      constants["hamiltonian_net"] = {{"mu", g.mu}, {"nu", g.nu}};
      constants["output_net"] = {{"mu", c.mu}, {"nu", c.nu}};
    } catch (const CertificationError&) {
    }
  } else if (auto* lc = dynamic_cast<LinearNiController*>(&ctrl)) {
    j["design_eta"] = lc->design_eta();
  } else {
    throw ContractError("checkpoint: unsupported controller kind " + ctrl.kind());
  }
  const std::vector<std::string> names = parameter_names(ctrl);
  const std::vector<Matrix*> params = ctrl.parameters();
  if (names.size() != params.size()) throw ContractError("checkpoint: parameter naming out of sync");
  json arrays = json::array();
  for (std::size_t i = 0; i < params.size(); ++i)
    arrays.push_back(
        {{"name", names[i]}, {"rows", params[i]->rows()}, {"cols", params[i]->cols()}, {"data", params[i]->entries()}});
  j["parameters"] = std::move(arrays);
  json power = json::array();
  for (PowerIteration* p : ctrl.power_states()) power.push_back(p->right());
  j["power_vectors"] = std::move(power);
  j["certificate"] = certificate_json(cert);
  j["digest"] = parameter_digest(ctrl);
  j["constants"] = std::move(constants);
  return j.dump(1) + "\n";
}

void save_checkpoint(const std::string& path, Controller& ctrl, const RegularityCertificate& cert,
                     std::uint64_t seed) {
  write_file(path, checkpoint_json(ctrl, cert, seed));
}

Checkpoint parse_checkpoint(const std::string& text) {
  const json j = parse_json(text, "checkpoint");
  try {
    if (!j.is_object() || j.value("format", "") != kFormat) throw ConfigError("checkpoint: not a checkpoint document");
    if (j.at("version").get<int>() != kVersion) throw ConfigError("checkpoint: unsupported version");
    const std::string kind = j.at("kind").get<std::string>();
    const std::size_t n = j.at("n").get<std::size_t>();
    const std::size_t m = j.at("m").get<std::size_t>();
    const std::size_t l = j.at("l").get<std::size_t>();
    const double kappa = j.at("kappa").get<double>();
    const double eps = j.at("epsilon").get<double>();
    const double design_eta = j.at("design_eta").get<double>();

    Checkpoint cp;
    cp.seed = j.at("seed").get<std::uint64_t>();
    if (kind == "ninode") {
      Rng rng(0);
      const BiLipConfig gc = bilip_config_from(j.at("hamiltonian_net"), "hamiltonian_net");
      const BiLipConfig cc = bilip_config_from(j.at("output_net"), "output_net");
      const json& sh = j.at("skew_head");
      const json& dh = j.at("damping_head");
      NinodeParts parts{PlnetHamiltonian(BiLipNet(gc, rng), 1.0), BiLipNet(cc, rng),
                        SkewHead(m, l, sh.at("hidden").get<std::size_t>(), sh.at("layers").get<std::size_t>(), rng),
                        SpdHead(m, l, dh.at("hidden").get<std::size_t>(), dh.at("layers").get<std::size_t>(), eps, rng)};
      cp.controller = std::make_unique<NinodeController>(std::move(parts), n, design_eta, kappa);
    } else if (kind == "linear_ni") {
      const std::size_t tri = m * (m + 1) / 2;
      LinearNiController::Params p;
      p.hamiltonian_factor = Matrix(tri, 1);
      p.skew = Matrix(m * (m - 1) / 2, 1);
      p.damping_factor = Matrix(tri, 1);
      p.output_raw = Matrix::identity(m);
      cp.controller = std::make_unique<LinearNiController>(m, n, eps, design_eta, kappa, std::move(p));
    } else {
      throw ConfigError("checkpoint: unknown controller kind '" + kind + "'");
    }
    if (cp.controller->state_dim() != m || cp.controller->signal_dim() != l)
      throw ConfigError("checkpoint: topology does not match the stored dimensions");

    const std::vector<std::string> names = parameter_names(*cp.controller);
    const std::vector<Matrix*> params = cp.controller->parameters();
    const json& arrays = j.at("parameters");
    if (arrays.size() != params.size())
      throw ConfigError("checkpoint: expected " + std::to_string(params.size()) + " parameter arrays, found " +
                        std::to_string(arrays.size()));
    for (std::size_t i = 0; i < params.size(); ++i) {
      const json& a = arrays[i];
      const std::string name = a.at("name").get<std::string>();
      const std::size_t rows = a.at("rows").get<std::size_t>(), cols = a.at("cols").get<std::size_t>();
      std::vector<double> data = a.at("data").get<std::vector<double>>();
      if (name != names[i] || rows != params[i]->rows() || cols != params[i]->cols() || data.size() != rows * cols)
        throw ConfigError("checkpoint: parameter '" + name + "' does not match the topology");
      *params[i] = Matrix(rows, cols, std::move(data));
      if (!params[i]->all_finite()) throw ConfigError("checkpoint: parameter '" + name + "' is not finite");
    }
    const std::vector<PowerIteration*> power = cp.controller->power_states();
    const json& pv = j.at("power_vectors");
    if (pv.size() != power.size()) throw ConfigError("checkpoint: power vector count does not match the topology");
    for (std::size_t i = 0; i < power.size(); ++i) {
      Vector v = pv[i].get<Vector>();
      if (v.size() != power[i]->right().size())
        throw ConfigError("checkpoint: power vector " + std::to_string(i) + " has the wrong length");
      *power[i] = PowerIteration(std::move(v));
    }
    cp.digest = j.at("digest").get<std::string>();
    cp.digest_matches = cp.digest == parameter_digest(*cp.controller);
    const json& c = j.at("certificate");
    cp.certificate = regularity_certificate(c.at("gamma").get<double>(), c.at("mu_lower").get<double>(),
                                            c.at("mu_upper").get<double>(), c.at("eta").get<double>());
    return cp;
  } catch (const json::exception& e) {
    throw ConfigError(std::string("checkpoint: malformed document: ") + e.what());
  } catch (const ContractError& e) {
    throw ConfigError(std::string("checkpoint: inconsistent topology: ") + e.what());
  }
}

Checkpoint load_checkpoint(const std::string& path) { return parse_checkpoint(read_file(path)); }

}  // namespace ninode
