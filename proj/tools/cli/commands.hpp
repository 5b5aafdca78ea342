#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "ninode/simulate.hpp"

namespace ninode::cli {

enum ExitCode : int { kOk = 0, kUsage = 1, kCertification = 2, kDivergence = 3 };

struct Options {
  std::string config;
  std::string checkpoint;
  std::string out;
  /// CSV with columns t,z1..zl feeding the controller signal (zero-order hold).
  std::string signal;
  /// "ninode" or "linear"; used when no checkpoint is given.
  std::string controller = "ninode";
  std::optional<std::uint64_t> seed;
  bool allow_uncertified = false;
};

int cmd_train(const Options& opts, std::ostream& out, std::ostream& err);
int cmd_simulate(const Options& opts, std::ostream& out, std::ostream& err);
int cmd_verify(const Options& opts, std::ostream& out, std::ostream& err);
int cmd_sweep(const Options& opts, std::ostream& out, std::ostream& err);

/// Parses argv (subcommand first) and dispatches.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

struct SweepRow {
  double r = 0.0;
  double ninode_loss = 0.0;
  double linear_ni_loss = 0.0;
  std::string ninode_status = "ok";
  std::string linear_ni_status = "ok";
};

/// r, both final losses, both losses divided by r^2, and per-run status.
void write_sweep_csv(std::ostream& out, const std::vector<SweepRow>& rows);

/// Zero-order-hold signal from a CSV file with a header row and t in the first column.
SignalSource load_signal_csv(const std::string& path, std::size_t l);

}  // namespace ninode::cli
