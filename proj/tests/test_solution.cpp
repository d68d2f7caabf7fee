#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <limits>

#include "brakeorbit/error.hpp"
#include "brakeorbit/minimizer.hpp"
#include "brakeorbit/solution.hpp"

using namespace brakeorbit;

namespace {

const Nonlinearity nl = Nonlinearity::pure_power(3.0);

const GroundState& gs() {
  static const GroundState g = ground_state(1, nl, {.r_max = 16.0, .n_r = 400});
  return g;
}

CoreSegment solve(double frac) {
  const double b = frac * gs().c;
  ConstantsBudget budget;
  budget.profiles = 16;
  budget.scales = 32;
  MinimizeConfig cfg;
  cfg.b = b;
  cfg.seed = gs().w0;
  cfg.dy = 0.025;
  cfg.mode = b > 0.0 ? BoundaryMode::ClampedMinus : BoundaryMode::FreeDecay;
  cfg.decay_length = 10.0;
  return minimize(cfg, estimate_constants(b, gs(), nl, budget), nl);
}

const CoreSegment& core_half() {
  static const CoreSegment seg = solve(0.5);
  return seg;
}

const CoreSegment& core_zero() {
  static const CoreSegment seg = solve(0.0);
  return seg;
}

const Check* find(const Verdict& v, const std::string& name) {
  for (const auto& c : v.checks) {
    if (c.name == name) return &c;
  }
  return nullptr;
}

double l2(const Trajectory& v, int j) { return std::sqrt(v.grid.radial->l2_sq(v.slice(j))); }

}  // namespace

TEST_CASE("periodic assembly") {
  const double c = gs().c;
  const double b = 0.5 * c;
  const auto& core = core_half();
  REQUIRE(core.converged);
  const auto sol = assemble(core, b, c, nl);
  const auto& v = sol.v;
  const int n = v.n_y();
  const int t = sol.turn_index();
  CHECK(sol.periodic());
  CHECK(sol.E_target == -b);
  CHECK(sol.T_b == doctest::Approx(core.tau_bar - core.sigma_bar).epsilon(1e-12));
  CHECK(v.grid.y_min == 0.0);
  CHECK(v.grid.y_max == doctest::Approx(2 * sol.T_b).epsilon(1e-12));
  CHECK(v.grid.y(t) == doctest::Approx(sol.T_b).epsilon(1e-12));
  CHECK((v.values.row(0) - v.values.row(n - 1)).cwiseAbs().maxCoeff() <= 1e-12);
  for (int j = 0; j <= t; ++j) {
    CHECK((v.values.row(t + j) - v.values.row(t - j)).cwiseAbs().maxCoeff() <= 1e-12);
  }
  // centered differences at the rest slices, wrapped at y = 0
  const double d0 = std::sqrt(v.grid.radial->l2_sq(v.slice(1) - v.slice(n - 2)));
  const double dT = std::sqrt(v.grid.radial->l2_sq(v.slice(t + 1) - v.slice(t - 1)));
  CHECK(d0 < 1e-8);
  CHECK(dT < 1e-8);
  CHECK(classify(*v.grid.radial, v.slice(0), b + 1e-2, nl) == Side::Minus);
  CHECK(classify(*v.grid.radial, v.slice(t), b + 1e-2, nl) == Side::Plus);

  const auto verdict = verify(sol, nl);
  for (const auto& ch : verdict.checks) {
    INFO(ch.name, " = ", ch.value);
    CHECK(ch.passed);
  }
  for (const char* name : {"energy_identity", "pde_residual", "reflection_residual_ratio", "positivity_min",
                           "radial_monotone_max", "y_monotone_min", "period_stitch", "second_variation_min"}) {
    CHECK(find(verdict, name) != nullptr);
  }
  CHECK(find(verdict, "energy_identity")->value < 1e-3 * std::max(1.0, c));
  CHECK(find(verdict, "reflection_residual_ratio")->value < 2.0);
  CHECK(verdict.diagnostics.contains("radial_strict_fraction"));

  SUBCASE("bundle round trip") {
    const auto dir = std::filesystem::temp_directory_path() / "brakeorbit_solution_test";
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    write_solution(dir, sol, nl);
    const auto back = read_solution(dir);
    CHECK(back.sol.v.values == sol.v.values);
    CHECK(back.sol.T_b == sol.T_b);
    CHECK(back.sol.b == sol.b);
    CHECK(back.nl.p() == 3.0);
    const auto again = verify(back.sol, back.nl);
    CHECK(to_json(again).dump() == to_json(verdict).dump());
    std::filesystem::remove_all(dir);
  }
}

TEST_CASE("unconverged cores are refused") {
  CoreSegment seg = core_half();
  seg.converged = false;
  bool refused = false;
  try {
    assemble(seg, 0.5 * gs().c, gs().c, nl);
  } catch (const Error& e) {
    refused = e.kind() == ErrorKind::CoreNotConverged;
  }
  CHECK(refused);
}

TEST_CASE("homoclinic assembly") {
  const double c = gs().c;
  const auto& core = core_zero();
  REQUIRE(core.converged);
  const auto sol = assemble(core, 0.0, c, nl);
  const auto& v = sol.v;
  const int n = v.n_y();
  const int t = sol.turn_index();
  CHECK(!sol.periodic());
  CHECK(sol.T_b == std::numeric_limits<double>::infinity());
  CHECK(sol.sigma_bar == -std::numeric_limits<double>::infinity());
  CHECK(v.grid.y(t) == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(v.grid.y_min == doctest::Approx(-v.grid.y_max));
  for (int j = 0; j <= t; ++j) {
    CHECK((v.values.row(t + j) - v.values.row(t - j)).cwiseAbs().maxCoeff() <= 1e-12);
  }
  const Vec V = slice_potentials(v, nl);
  CHECK(l2(v, 1) < 1e-4);
  CHECK(l2(v, n - 2) < 1e-4);
  CHECK(std::abs(V[1]) < 1e-6);
  CHECK(std::abs(V[n - 2]) < 1e-6);

  const auto cc = mountain_pass_crosscheck(sol, nl);
  CHECK(cc.ratio >= 0.98);
  CHECK(cc.ratio <= 1.02);
  CHECK(std::abs(cc.phi_full - 2 * cc.m0) < 1e-10);
  CHECK(cc.m0 == doctest::Approx(core.m_b).epsilon(1e-6));

  const auto verdict = verify(sol, nl);
  for (const auto& ch : verdict.checks) {
    INFO(ch.name, " = ", ch.value);
    CHECK(ch.passed);
  }
  CHECK(find(verdict, "mountain_pass_ratio") != nullptr);
  CHECK(find(verdict, "far_field_norm") != nullptr);
}

TEST_CASE("two-dimensional level is resolution stable") {
  const auto a = ground_state(2, nl, {.r_max = 20.0, .n_r = 2000});
  const auto b = ground_state(2, nl, {.r_max = 20.0, .n_r = 4000});
  CHECK(std::abs(a.c - b.c) < 5e-3 * b.c);
  // Townes profile: c_2 = |Q|_2^2 / 2 with |Q|_2^2 = 2 pi * 1.86225
  CHECK(a.c == doctest::Approx(5.8503).epsilon(1e-3));
}
