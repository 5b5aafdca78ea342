#include "commands.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <future>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <thread>

#include <CLI11.hpp>

#include "ninode/errors.hpp"
#include "ninode/io.hpp"

namespace ninode::cli {

namespace fs = std::filesystem;

namespace {

ExperimentConfig load(const Options& opts) {
  ExperimentConfig c = opts.config.empty() ? parse_config("{}") : load_config(opts.config);
  if (opts.seed) apply_seed(c, *opts.seed);
  return c;
}

fs::path output_dir(const Options& opts, const ExperimentConfig& c) {
  fs::path dir = opts.out.empty() ? fs::path(c.output_dir) : fs::path(opts.out);
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw ConfigError("cannot create output directory " + dir.string() + ": " + ec.message());
  return dir;
}

std::unique_ptr<Controller> initial_controller(const Options& opts, const ExperimentConfig& c, double eta,
                                               Checkpoint* loaded = nullptr) {
  if (!opts.checkpoint.empty()) {
    Checkpoint cp = load_checkpoint(opts.checkpoint);
    if (cp.controller->output_dim() != c.plant.params.dim())
      throw ConfigError("checkpoint output dimension does not match the plant");
    std::unique_ptr<Controller> ctrl = std::move(cp.controller);
    if (loaded) *loaded = std::move(cp);
    return ctrl;
  }
  if (opts.controller == "ninode") return build_ninode(c, eta);
  if (opts.controller == "linear") return build_linear(c, eta);
  throw ConfigError("unknown controller '" + opts.controller + "' (expected ninode or linear)");
}

void warn_uncertified(const Options& opts, std::ostream& err) {
  if (opts.allow_uncertified)
    err << "warning: --allow-uncertified disables the regularity certificate; stability is not guaranteed\n";
}

void print_certificate(std::ostream& out, const RegularityCertificate& c) {
  out << std::setprecision(6) << "certificate: gamma=" << c.gamma << " mu_lower=" << c.mu_lower
      << " mu_upper=" << c.mu_upper << " eta=" << c.eta << " margin=" << c.margin
      << (c.pass ? " pass" : " FAIL") << '\n';
  if (!c.pass && !c.reason.empty()) out << "  reason: " << c.reason << '\n';
}

// Maps library exceptions to exit codes; everything else is treated as a usage error.
template <class F>
int guarded(std::ostream& err, F&& body) {
  try {
    return body();
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << '\n';
    return kUsage;
  } catch (const ContractError& e) {
    err << "error: " << e.what() << '\n';
    return kUsage;
  } catch (const CertificationError& e) {
    err << "certification failure: " << e.what() << '\n';
    return kCertification;
  } catch (const DivergenceError& e) {
    err << "divergence: " << e.what() << '\n';
    return kDivergence;
  } catch (const NumericError& e) {
    err << "numeric failure: " << e.what() << '\n';
    return kDivergence;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kUsage;
  }
}

SimulationOptions simulation(const Options& opts, const ExperimentConfig& c) {
  SimulationOptions s = c.simulation;
  s.allow_uncertified = opts.allow_uncertified;
  return s;
}

}  // namespace

SignalSource load_signal_csv(const std::string& path, std::size_t l) {
  std::istringstream in(read_file(path));
  std::string line;
  if (!std::getline(in, line)) throw ConfigError(path + ": empty signal file");
  std::vector<double> times;
  std::vector<Vector> values;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream row(line);
    std::string cell;
    Vector v;
    while (std::getline(row, cell, ',')) {
      try {
        std::size_t used = 0;
        v.push_back(std::stod(cell, &used));
      } catch (const std::exception&) {
        throw ConfigError(path + ":" + std::to_string(lineno) + ": not a number: '" + cell + "'");
      }
    }
    if (v.size() != l + 1)
      throw ConfigError(path + ":" + std::to_string(lineno) + ": expected " + std::to_string(l + 1) + " columns");
    if (!times.empty() && !(v[0] > times.back()))
      throw ConfigError(path + ":" + std::to_string(lineno) + ": times must increase");
    times.push_back(v[0]);
    values.emplace_back(v.begin() + 1, v.end());
  }
  if (times.empty()) throw ConfigError(path + ": no signal samples");
  return [times = std::move(times), values = std::move(values)](double t) {
    auto it = std::upper_bound(times.begin(), times.end(), t);
    const std::size_t k = it == times.begin() ? 0 : static_cast<std::size_t>(it - times.begin()) - 1;
    return values[k];
  };
}

void write_sweep_csv(std::ostream& out, const std::vector<SweepRow>& rows) {
  out << "r,ninode_loss,linear_ni_loss,ninode_normalized,linear_ni_normalized,ninode_status,linear_ni_status\n"
      << std::setprecision(17);
  const auto cell = [](double v, const std::string& status) {
    std::ostringstream s;
    s << std::setprecision(17);
    if (status == "ok") s << v; else s << "nan";
    return s.str();
  };
  for (const SweepRow& r : rows) {
    const double r2 = r.r * r.r;
    out << r.r << ',' << cell(r.ninode_loss, r.ninode_status) << ',' << cell(r.linear_ni_loss, r.linear_ni_status)
        << ',' << cell(r.ninode_loss / r2, r.ninode_status) << ','
        << cell(r.linear_ni_loss / r2, r.linear_ni_status) << ',' << r.ninode_status << ','
        << r.linear_ni_status << '\n';
  }
}

int cmd_train(const Options& opts, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    const ExperimentConfig c = load(opts);
    warn_uncertified(opts, err);
    const MechanicalPlant plant = build_plant(c);
    std::unique_ptr<Controller> ctrl = initial_controller(opts, c, plant.eta());
    TrainConfig tc = resolved_train_config(c, plant.dim(), ctrl->state_dim());
    tc.require_certificate = !opts.allow_uncertified;

    const RegularityCertificate initial_cert = ctrl->certify(plant.eta());
    print_certificate(out, initial_cert);
    if (!initial_cert.pass && !opts.allow_uncertified)
      throw CertificationError("initial controller is not certified: " + initial_cert.reason);

    out << "training " << ctrl->kind() << " (" << ctrl->parameter_count() << " parameters, " << tc.epochs
        << " epochs, " << tc.steps << " steps)\n";
    const std::size_t every = std::max<std::size_t>(1, tc.epochs / 10);
    TrainResult result = train(plant, *ctrl, tc, [&](const EpochRecord& r) {
      if (r.epoch % every == 0 || r.epoch == tc.epochs)
        out << "  epoch " << r.epoch << " loss " << std::setprecision(8) << r.loss << " margin "
            << r.certificate_margin << '\n';
    });

    const Trajectory traj = rollout(plant, *result.controller, initial_state(tc, result.controller->state_dim()),
                                    c.simulate_steps, simulation(opts, c));

    const fs::path dir = output_dir(opts, c);
    save_checkpoint((dir / "checkpoint.json").string(), *result.controller, result.certificate, c.seed);
    result.write_history_csv((dir / "loss_history.csv").string());
    traj.write_csv((dir / "trajectory.csv").string());
    print_certificate(out, result.certificate);
    out << "final loss " << std::setprecision(10) << result.history.back().loss << ", |q(T)| "
        << norm(traj.back().q) << "\nwrote " << dir.string() << "/{checkpoint.json,loss_history.csv,trajectory.csv}\n";
    return static_cast<int>(kOk);
  });
}

int cmd_simulate(const Options& opts, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    const ExperimentConfig c = load(opts);
    warn_uncertified(opts, err);
    const MechanicalPlant plant = build_plant(c);
    std::unique_ptr<Controller> ctrl = initial_controller(opts, c, plant.eta());
    SignalSource signal;
    if (!opts.signal.empty()) signal = load_signal_csv(opts.signal, ctrl->signal_dim());
    const RegularityCertificate cert = ctrl->certify(plant.eta());
    print_certificate(out, cert);

    const Trajectory traj = rollout(plant, *ctrl, initial_state(c.train, ctrl->state_dim()), c.simulate_steps,
                                    simulation(opts, c), signal);
    const fs::path dir = output_dir(opts, c);
    traj.write_csv((dir / "trajectory.csv").string());
    out << std::setprecision(8) << "steps " << traj.steps() << ", |q(T)| " << norm(traj.back().q) << ", W(0) "
        << traj.records.front().w << ", W(T) " << traj.back().w << "\nwrote " << (dir / "trajectory.csv").string()
        << '\n';
    return static_cast<int>(kOk);
  });
}

int cmd_verify(const Options& opts, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    const ExperimentConfig c = load(opts);
    const MechanicalPlant plant = build_plant(c);
    Checkpoint loaded;
    std::unique_ptr<Controller> ctrl = initial_controller(opts, c, plant.eta(), &loaded);
    const std::optional<RegularityCertificate> stored =
        opts.checkpoint.empty() ? std::nullopt : std::optional(loaded.certificate);

    VerifyOptions vo = c.verify;
    vo.simulation = c.simulation;
    vo.initial = initial_state(c.train, ctrl->state_dim());
    VerificationReport report = run_verification(plant, *ctrl, vo);

    if (stored) {
      // A tampered checkpoint no longer reproduces the certificate it was saved with.
      const RegularityCertificate now = ctrl->certify(plant.eta());
      CheckRecord rec;
      rec.name = "checkpoint_certificate";
      rec.samples = 1;
      rec.tol = 1e-9;
      rec.anchor = "stored certified constants reproduce from the stored parameters";
      const auto rel = [](double a, double b) {
        if (!std::isfinite(a) || !std::isfinite(b)) return std::numeric_limits<double>::infinity();
        return std::abs(a - b) / std::max(1.0, std::abs(b));
      };
      rec.worst = std::max({rel(now.gamma, stored->gamma), rel(now.mu_lower, stored->mu_lower),
                            rel(now.mu_upper, stored->mu_upper)});
      if (now.pass != stored->pass) rec.worst = std::numeric_limits<double>::infinity();
      rec.pass = rec.worst <= rec.tol;
      if (!rec.pass) rec.detail = now.reason.empty() ? "constants differ from the stored certificate" : now.reason;
      report.checks.push_back(rec);

      CheckRecord digest;
      digest.name = "checkpoint_digest";
      digest.samples = 1;
      digest.anchor = "parameters unchanged since the checkpoint was written";
      digest.worst = loaded.digest_matches ? 0.0 : 1.0;
      digest.pass = loaded.digest_matches;
      if (!digest.pass) digest.detail = "stored digest " + loaded.digest + ", parameters hash to " + parameter_digest(*ctrl);
      report.checks.push_back(digest);
    }

    out << report.text();
    const fs::path dir = output_dir(opts, c);
    write_file((dir / "verify_report.json").string(), report.json());
    return static_cast<int>(report.pass() ? kOk : kCertification);
  });
}

int cmd_sweep(const Options& opts, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    const ExperimentConfig c = load(opts);
    if (c.sweep_factors.empty()) throw ConfigError("sweep: the sweep.factors list is empty");
    warn_uncertified(opts, err);
    const MechanicalPlant plant = build_plant(c);

    struct Run {
      double loss = 0.0;
      std::string status = "ok";
      int code = kOk;
    };
    const auto run_one = [&](double r, bool neural) {
      Run run;
      try {
        std::unique_ptr<Controller> ctrl =
            neural ? std::unique_ptr<Controller>(build_ninode(c, plant.eta())) : build_linear(c, plant.eta());
        TrainConfig tc = resolved_train_config(c, plant.dim(), ctrl->state_dim());
        tc.r = r;
        tc.require_certificate = !opts.allow_uncertified;
        run.loss = train(plant, *ctrl, tc).history.back().loss;
      } catch (const CertificationError&) {
        run.status = "certification_failed";
        run.code = kCertification;
      } catch (const DivergenceError&) {
        run.status = "diverged";
        run.code = kDivergence;
      } catch (const NumericError&) {
        run.status = "diverged";
        run.code = kDivergence;
      }
      return run;
    };

    // Runs fan out in bounded batches; each run is sequential and seeded identically.
    const std::size_t jobs = std::max(1u, std::thread::hardware_concurrency());
    std::vector<std::pair<double, bool>> work;
    for (double r : c.sweep_factors) {
      work.emplace_back(r, true);
      work.emplace_back(r, false);
    }
    std::vector<Run> results(work.size());
    for (std::size_t start = 0; start < work.size(); start += jobs) {
      std::vector<std::future<Run>> batch;
      for (std::size_t i = start; i < std::min(work.size(), start + jobs); ++i)
        batch.push_back(std::async(std::launch::async, run_one, work[i].first, work[i].second));
      for (std::size_t i = 0; i < batch.size(); ++i) results[start + i] = batch[i].get();
    }

    std::vector<SweepRow> rows;
    int code = kOk;
    for (std::size_t k = 0; k < c.sweep_factors.size(); ++k) {
      const Run& a = results[2 * k];
      const Run& b = results[2 * k + 1];
      rows.push_back({c.sweep_factors[k], a.loss, b.loss, a.status, b.status});
      code = std::max({code, a.code, b.code});
    }
    const fs::path dir = output_dir(opts, c);
    std::ofstream f(dir / "sweep.csv");
    if (!f) throw ConfigError("cannot write " + (dir / "sweep.csv").string());
    write_sweep_csv(f, rows);
    write_sweep_csv(out, rows);
    out << "wrote " << (dir / "sweep.csv").string() << '\n';
    return code;
  });
}

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Negative-imaginary neural ODE controllers with stability certificates", "ninode"};
  app.require_subcommand(1);
  Options opts;
  std::uint64_t seed = 0;

  const auto common = [&](CLI::App* sub) {
    sub->add_option("--config", opts.config, "Experiment JSON document");
    sub->add_option("--checkpoint", opts.checkpoint, "Controller checkpoint");
    sub->add_option("--out", opts.out, "Output directory (default: output_dir from the config)");
    sub->add_option("--seed", seed, "Master seed overriding the config");
    sub->add_flag("--allow-uncertified", opts.allow_uncertified, "Ablation only: skip certificate enforcement");
  };
  CLI::App* train_cmd = app.add_subcommand("train", "Train a controller and write checkpoint, loss and trajectory");
  CLI::App* sim_cmd = app.add_subcommand("simulate", "Roll out the closed loop and write the trajectory");
  CLI::App* verify_cmd = app.add_subcommand("verify", "Run the verification suite on a controller");
  CLI::App* sweep_cmd = app.add_subcommand("sweep", "Train both controllers over the scaling factors");
  for (CLI::App* sub : {train_cmd, sim_cmd, verify_cmd, sweep_cmd}) common(sub);
  for (CLI::App* sub : {train_cmd, sim_cmd, verify_cmd})
    sub->add_option("--controller", opts.controller, "ninode or linear, when no checkpoint is given")
        ->check(CLI::IsMember({"ninode", "linear"}));
  sim_cmd->add_option("--signal", opts.signal, "CSV of t,z1..zl for the controller signal");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << '\n';
    return kUsage;
  }
  for (CLI::App* sub : {train_cmd, sim_cmd, verify_cmd, sweep_cmd})
    if (sub->count("--seed")) opts.seed = seed;

  if (train_cmd->parsed()) return cmd_train(opts, out, err);
  if (sim_cmd->parsed()) return cmd_simulate(opts, out, err);
  if (verify_cmd->parsed()) return cmd_verify(opts, out, err);
  return cmd_sweep(opts, out, err);
}

}  // namespace ninode::cli
