#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "brakeorbit/minimizer.hpp"
#include "brakeorbit/nonlinearity.hpp"
#include "brakeorbit/potential.hpp"
#include "brakeorbit/trajectory.hpp"

namespace brakeorbit {

/// Full solution on R^{N+1}. For b > 0 `v` holds one period [0, 2T_b] whose
/// last slice repeats the first; for b = 0 it is the even homoclinic on a
/// window [-Y, Y] with the turning slice at y = 0.
struct BrakeOrbitSolution {
  Trajectory v;
  double T_b = 0.0;  ///< +inf for b = 0
  double b = 0.0;
  double c = 0.0;
  double E_target = 0.0;
  double m_b = 0.0;
  double sigma_bar = 0.0;
  double tau_bar = 0.0;
  double core_residual = 0.0;  ///< interior residual of the core segment
  nlohmann::json provenance;

  bool periodic() const noexcept { return b > 0.0; }
  /// Index of the slice at y = T_b (b > 0) or y = 0 (b = 0).
  int turn_index() const noexcept { return (v.n_y() - 1) / 2; }
};

/// Reflection and periodic continuation (b > 0) or even reflection about the
/// turning slice (b = 0). Throws CoreNotConverged.
BrakeOrbitSolution assemble(const CoreSegment& core, double b, double c, const Nonlinearity& nl);

struct CrossCheck {
  double m0 = 0.0;
  double c_next = 0.0;
  double ratio = 0.0;      ///< c_next / (2 m0)
  double phi_full = 0.0;   ///< phi over the whole reflected trajectory
  double radial_sup = 0.0; ///< sup |v0(r, y) - w(sqrt(r^2 + y^2))|, diagnostic only
};

/// Level identity c_{N+1} = 2 m0 for a b = 0 solution, with c_{N+1} from the
/// ground state in one dimension more on the same radial resolution.
CrossCheck mountain_pass_crosscheck(const BrakeOrbitSolution& sol, const Nonlinearity& nl);

struct Check {
  std::string name;
  double value = 0.0;
  double limit = 0.0;
  std::string relation;  ///< "<", "<=", ">", ">=" or "in" (value within [limit, limit2])
  double limit2 = 0.0;
  bool passed = false;
};

struct Verdict {
  double b = 0.0;
  double c = 0.0;
  std::vector<Check> checks;
  nlohmann::json diagnostics;

  int passed() const noexcept;
  bool all_passed() const noexcept { return passed() == static_cast<int>(checks.size()); }
};

struct VerifyOptions {
  double energy_tol = 1e-3;   ///< relative to max(1, c)
  double residual_tol = 1e-3;
  double symmetry_tol = 1e-12;
  double stationarity_tol = 1e-8;
  double far_norm_tol = 1e-4;
  double far_potential_tol = 1e-6;
  double ratio_lo = 0.98;
  double ratio_hi = 1.02;
  int second_variation_probes = 8;
};

/// Measured checks of every qualitative clause for the assembled solution.
Verdict verify(const BrakeOrbitSolution& sol, const Nonlinearity& nl,
               const VerifyOptions& opt = {});

nlohmann::json to_json(const Verdict& v);

/// Writes trajectory.csv, energy.csv and solution.json into `dir`.
void write_solution(const std::filesystem::path& dir, const BrakeOrbitSolution& sol,
                    const Nonlinearity& nl);

struct LoadedSolution {
  BrakeOrbitSolution sol;
  Nonlinearity nl;
};
LoadedSolution read_solution(const std::filesystem::path& dir);

}  // namespace brakeorbit
