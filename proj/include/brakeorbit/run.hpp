#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include <json.hpp>

#include "brakeorbit/error.hpp"

namespace brakeorbit {

struct RunConfig {
  int N = 1;
  nlohmann::json nonlinearity = {{"kind", "pure_power"}, {"p", 3.0}};
  double r_max = 20.0;
  int n_r = 2000;
  double dy = 0.025;
  /// b = 0 only: distance from the far zero slice to the turning slice.
  double initial_window = 14.0;
  /// Fractions of c, each in [0, 1).
  std::vector<double> b_list;
  int max_iters = 4000;
  double tol_grad = 1e-5;
  double tol_constraint = 1e-9;
  double tol_residual = 1e-9;
  int checkpoint_every = 100;
  int constant_profiles = 64;
  int constant_scales = 128;
  std::filesystem::path output_dir = "brakeorbit_out";
  std::uint64_t seed = 20240531;
  /// Directory of the config file; relative table paths resolve against it.
  std::filesystem::path base;
};

/// Strict parser: unknown keys and ill-typed values throw ConfigError.
RunConfig parse_run_config(const nlohmann::json& j, const std::filesystem::path& base = {});
RunConfig load_run_config(const std::filesystem::path& path);

struct SummaryRow {
  double b_fraction = 0.0;
  double b = 0.0;
  double m_b = 0.0;
  double T_b = 0.0;  ///< +inf for b = 0
  double max_energy_dev = 0.0;
  double residual = 0.0;
  int checks_passed = 0;
  int checks_total = 0;
  double lower_bound = 0.0;  ///< sqrt(c - b) delta0 estimate
  bool converged = false;
};

void write_summary_csv(const std::filesystem::path& path, std::vector<SummaryRow> rows);
std::vector<SummaryRow> read_summary_csv(const std::filesystem::path& path);

/// (b, -b, m_b, T_b) rows sorted by b, written to `out`.
void energy_diagram(const std::vector<SummaryRow>& rows, std::ostream& out);

struct RunOptions {
  int jobs = 1;
  bool resume = false;
  std::ostream* log = nullptr;
};

/// Ground state, constants and, per b, minimize -> assemble -> verify. Returns
/// 0 when every run converges and passes, 2 for a malformed config and 1 for
/// any other failure; failures are reported as JSON on stderr and in
/// error.json. BRAKEORBIT_OUTPUT_ROOT, when set, replaces the working
/// directory as the base of a relative output_dir.
int run(const std::filesystem::path& config_path, const RunOptions& opt = {});

/// Error report in the shape written by `run`.
nlohmann::json error_json(const std::exception& e);

}  // namespace brakeorbit
