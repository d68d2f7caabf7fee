#include "brakeorbit/solution.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <random>
#include <sstream>

#include "brakeorbit/error.hpp"
#include "brakeorbit/io.hpp"

namespace brakeorbit {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// Core rows 0..n-1 followed by their mirror image, so the middle row is the
// axis of reflection.
Matrix mirror(const Matrix& core) {
  const Eigen::Index n = core.rows();
  Matrix full(2 * n - 1, core.cols());
  full.topRows(n) = core;
  for (Eigen::Index j = 1; j < n; ++j) full.row(n - 1 + j) = core.row(n - 1 - j);
  return full;
}

double slice_gap(const RadialGrid& g, const Matrix& m, int a, int b) {
  return std::sqrt(g.l2_sq((m.row(a) - m.row(b)).transpose()));
}

// V''(u)[h, h].
double hessian_form(const RadialGrid& g, const Vec& u, const Vec& h, const Nonlinearity& nl) {
  double s = g.grad_sq(h) + g.l2_sq(h);
  for (int i = 0; i < g.size(); ++i) s -= g.weights()[i] * nl.df(u[i]) * h[i] * h[i];
  return s;
}

// Second variation of phi in the direction h, same quadrature as phi.
double second_variation(const RadialGrid& g, const Matrix& v, const Matrix& h, double dy,
                        const Nonlinearity& nl) {
  const int n = static_cast<int>(v.rows());
  double s = 0.0;
  for (int j = 0; j < n; ++j) {
    const double tau = (j == 0 || j == n - 1) ? 0.5 : 1.0;
    s += tau * dy * hessian_form(g, v.row(j).transpose(), h.row(j).transpose(), nl);
    if (j + 1 < n) s += g.l2_sq((h.row(j + 1) - h.row(j)).transpose()) / dy;
  }
  return s;
}

double h1_norm_sq(const RadialGrid& g, const Matrix& h, double dy) {
  const int n = static_cast<int>(h.rows());
  double s = 0.0;
  for (int j = 0; j < n; ++j) {
    const Vec hj = h.row(j).transpose();
    s += dy * (g.grad_sq(hj) + g.l2_sq(hj));
    if (j + 1 < n) s += g.l2_sq((h.row(j + 1) - h.row(j)).transpose()) / dy;
  }
  return s;
}

void add(Verdict& v, std::string name, double value, std::string rel, double limit,
         double limit2 = 0.0) {
  bool ok = false;
  if (rel == "<") ok = value < limit;
  else if (rel == "<=") ok = value <= limit;
  else if (rel == ">") ok = value > limit;
  else if (rel == ">=") ok = value >= limit;
  else if (rel == "in") ok = value >= limit && value <= limit2;
  v.checks.push_back({std::move(name), value, limit, std::move(rel), limit2, ok && std::isfinite(value)});
}

}  // namespace

BrakeOrbitSolution assemble(const CoreSegment& core, double b, double c, const Nonlinearity& nl) {
  if (!core.converged) throw Error(ErrorKind::CoreNotConverged, "core segment did not converge");
  const bool periodic = b > 0.0;
  if (periodic && !(std::isfinite(core.sigma_bar) && std::isfinite(core.tau_bar))) {
    throw Error(ErrorKind::CoreNotConverged, "turning ordinates are not both finite");
  }
  if (!periodic && std::isfinite(core.sigma_bar)) {
    throw Error(ErrorKind::CoreNotConverged, "b = 0 core has a finite sigma_bar");
  }
  const Trajectory& cv = core.v;
  const int n = cv.n_y();
  const double span = cv.grid.y_max - cv.grid.y_min;

  BrakeOrbitSolution sol;
  sol.b = b;
  sol.c = c;
  sol.E_target = -b;
  sol.m_b = core.m_b;
  sol.sigma_bar = core.sigma_bar;
  sol.tau_bar = core.tau_bar;
  sol.core_residual = pde_residual(cv, nl).l2;
  if (periodic) {
    sol.T_b = span;
    sol.v = Trajectory(CylinderGrid(cv.grid.radial, 0.0, 2.0 * span, 2 * n - 1), mirror(cv.values));
  } else {
    sol.T_b = kInf;
    sol.v = Trajectory(CylinderGrid(cv.grid.radial, -span, span, 2 * n - 1), mirror(cv.values));
  }
  const RadialGrid& g = *cv.grid.radial;
  sol.provenance = {{"N", g.dim()},          {"r_max", g.r_max()}, {"n_r", g.size()},
                    {"dy", cv.grid.dy()},     {"core_slices", n},   {"iterations", core.iterations},
                    {"grad_norm", core.grad_norm}, {"resamples", core.resamples},
                    {"window_extensions", core.window_extensions}};
  return sol;
}

CrossCheck mountain_pass_crosscheck(const BrakeOrbitSolution& sol, const Nonlinearity& nl) {
  if (sol.periodic()) throw Error(ErrorKind::InvalidField, "cross-check needs the b = 0 solution");
  const RadialGrid& g = *sol.v.grid.radial;
  const int t = sol.turn_index();
  const CylinderGrid& fg = sol.v.grid;
  Trajectory half(CylinderGrid(fg.radial, fg.y_min, fg.y(t), t + 1), sol.v.values.topRows(t + 1));

  CrossCheck out;
  // the turning slice may sit O(dy^2) below the level, so both use explicit windows
  out.m0 = phi(half, 0.0, nl, Window{half.grid.y_min, half.grid.y_max});
  out.phi_full = phi(sol.v, 0.0, nl, Window{fg.y_min, fg.y_max});
  GroundStateOptions opt;
  opt.r_max = g.r_max();
  opt.n_r = g.size();
  const GroundState next = ground_state(g.dim() + 1, nl, opt);
  out.c_next = next.c;
  out.ratio = next.c / (2.0 * out.m0);

  // compare v0(r, y) with the (N+1)-dimensional profile at distance sqrt(r^2 + y^2)
  // from the turning point
  const Vec& r = g.nodes();
  const Vec& w = next.w0.values;
  const double h = g.h();
  double sup = 0.0;
  for (int j = 0; j < sol.v.n_y(); ++j) {
    const double y = fg.y(j);
    for (int i = 0; i < g.size(); ++i) {
      const double rho = std::hypot(r[i], y);
      const double s = rho / h - 0.5;
      double wv = 0.0;
      if (s <= 0.0) {
        wv = w[0];
      } else if (s < g.size() - 1) {
        const int k = static_cast<int>(s);
        const double a = s - k;
        wv = (1.0 - a) * w[k] + a * w[k + 1];
      }
      sup = std::max(sup, std::abs(sol.v.values(j, i) - wv));
    }
  }
  out.radial_sup = sup;
  return out;
}

int Verdict::passed() const noexcept {
  return static_cast<int>(std::count_if(checks.begin(), checks.end(),
                                        [](const Check& c) { return c.passed; }));
}

Verdict verify(const BrakeOrbitSolution& sol, const Nonlinearity& nl, const VerifyOptions& opt) {
  const Trajectory& v = sol.v;
  const RadialGrid& g = *v.grid.radial;
  const Matrix& m = v.values;
  const int n = v.n_y();
  const int nr = v.n_r();
  const int t = sol.turn_index();
  const double dy = v.grid.dy();
  const bool periodic = sol.periodic();

  Verdict out;
  out.b = sol.b;
  out.c = sol.c;

  // energy identity over every slice of the closed orbit, interior slices otherwise
  const EnergyProfile e = energy_profile(v, nl, periodic);
  double emax = 0.0;
  for (int j = periodic ? 0 : 1; j < (periodic ? n : n - 1); ++j) {
    emax = std::max(emax, std::abs(e.E[j] + sol.b));
  }
  add(out, "energy_identity", emax, "<", opt.energy_tol * std::max(1.0, sol.c));

  const Residual res = pde_residual(v, nl, periodic);
  add(out, "pde_residual", res.l2, "<", opt.residual_tol);
  add(out, "reflection_residual_ratio", res.l2 / std::max(sol.core_residual, 1e-300), "<", 2.0);

  // sign checks; the last radial node is the Dirichlet ring
  const int ri = nr - 1;
  const int j_lo = periodic ? 0 : 1;
  const int j_hi = periodic ? n - 1 : n - 2;
  double vmin = std::numeric_limits<double>::infinity();
  for (int j = j_lo; j <= j_hi; ++j) vmin = std::min(vmin, m.row(j).head(ri).minCoeff());
  add(out, "positivity_min", vmin, ">", 0.0);

  double dr_max = -std::numeric_limits<double>::infinity();
  long strict = 0, inner = 0;
  for (int j = 0; j < n; ++j) {
    for (int i = 0; i + 1 < nr; ++i) {
      const double d = m(j, i + 1) - m(j, i);
      dr_max = std::max(dr_max, d);
      if (g.nodes()[i] <= 0.5 * g.r_max() && j >= j_lo && j <= j_hi) {
        ++inner;
        if (d < 0.0) ++strict;
      }
    }
  }
  add(out, "radial_monotone_max", dr_max, "<=", 0.0);
  out.diagnostics["radial_strict_fraction"] = inner ? double(strict) / double(inner) : 0.0;
  out.diagnostics["radial_strict_subdomain"] = {{"r_max", 0.5 * g.r_max()}};

  // y-monotonicity on the rising half: (0, T_b) for b > 0, (-Y, 0) for b = 0
  double dy_min = std::numeric_limits<double>::infinity();
  for (int j = j_lo; j < t; ++j) {
    dy_min = std::min(dy_min, (m.row(j + 1).head(ri) - m.row(j).head(ri)).minCoeff());
  }
  add(out, "y_monotone_min", dy_min, ">", 0.0);

  // reflection identities, checked slice by slice
  double sym0 = 0.0, symT = 0.0;
  if (periodic) {
    const int P = n - 1;
    for (int j = 0; j <= P; ++j) sym0 = std::max(sym0, slice_gap(g, m, j, (P - j) % P));
    for (int k = 0; k <= t; ++k) symT = std::max(symT, slice_gap(g, m, t + k, t - k));
    add(out, "symmetry_about_0", sym0, "<=", opt.symmetry_tol);
    add(out, "symmetry_about_T", symT, "<=", opt.symmetry_tol);
    add(out, "period_stitch", slice_gap(g, m, 0, n - 1), "<=", opt.symmetry_tol);
    const double d0 = slice_gap(g, m, 1, n - 2) / (2.0 * dy);
    const double dT = slice_gap(g, m, t + 1, t - 1) / (2.0 * dy);
    add(out, "stationary_at_0", d0, "<", opt.stationarity_tol);
    add(out, "stationary_at_T", dT, "<", opt.stationarity_tol);
    add(out, "rest_slice_0_minus", classify(g, v.slice(0), sol.b, nl) == Side::Minus ? 1.0 : 0.0,
        ">=", 1.0);
    add(out, "rest_slice_T_plus", classify(g, v.slice(t), sol.b, nl) == Side::Plus ? 1.0 : 0.0,
        ">=", 1.0);
  } else {
    for (int j = 0; j < n; ++j) sym0 = std::max(sym0, slice_gap(g, m, j, n - 1 - j));
    add(out, "symmetry_about_0", sym0, "<=", opt.symmetry_tol);
    add(out, "stationary_at_0", slice_gap(g, m, t + 1, t - 1) / (2.0 * dy), "<",
        opt.stationarity_tol);
    add(out, "turning_slice_plus", classify(g, v.slice(t), 0.0, nl) == Side::Plus ? 1.0 : 0.0,
        ">=", 1.0);
    // the outermost slices that are not pinned to zero
    const double far = std::max(std::sqrt(g.l2_sq(v.slice(1))), std::sqrt(g.l2_sq(v.slice(n - 2))));
    const double farV = std::max(std::abs(potential_value(g, v.slice(1), nl)),
                                 std::abs(potential_value(g, v.slice(n - 2), nl)));
    add(out, "far_field_norm", far, "<", opt.far_norm_tol);
    add(out, "far_field_potential", farV, "<", opt.far_potential_tol);
    const CrossCheck cc = mountain_pass_crosscheck(sol, nl);
    add(out, "mountain_pass_ratio", cc.ratio, "in", opt.ratio_lo, opt.ratio_hi);
    add(out, "reflection_phi_identity", std::abs(cc.phi_full - 2.0 * cc.m0), "<",
        1e-10 * std::max(1.0, cc.phi_full));
    out.diagnostics["m0"] = cc.m0;
    out.diagnostics["c_next"] = cc.c_next;
    out.diagnostics["xy_radial_sup"] = cc.radial_sup;
  }
  add(out, "m_b_nonnegative", sol.m_b, ">=", 0.0);

  // second variation on the core [0, t] along probes supported inside it
  const Matrix core = m.topRows(t + 1);
  std::mt19937_64 rng(0x5eedULL);
  std::uniform_real_distribution<double> U(0.0, 1.0);
  double worst = std::numeric_limits<double>::infinity();
  for (int p = 0; p < opt.second_variation_probes + 2; ++p) {
    int a = 1, z = t - 1;
    if (p >= 2) {
      a = 1 + static_cast<int>(U(rng) * 0.5 * t);
      z = std::min(t - 1, a + 2 + static_cast<int>(U(rng) * (t - a)));
    }
    if (z - a < 2) continue;
    Vec radial(nr);
    if (p == 0) {
      radial.setZero();
    } else {
      const double s = 0.5 + 4.0 * U(rng);
      const double k = 3.0 * U(rng);
      for (int i = 0; i < nr; ++i) {
        const double r = g.nodes()[i];
        radial[i] = std::exp(-r * r / (2.0 * s * s)) * std::cos(k * r);
      }
    }
    Matrix h = Matrix::Zero(t + 1, nr);
    for (int j = a; j <= z; ++j) {
      const double bump = std::pow(std::sin(std::numbers::pi * (j - a) / (z - a)), 2);
      // p == 0 probes the amplitude direction v itself
      h.row(j) = bump * (p == 0 ? Vec(core.row(j).transpose()) : radial).transpose();
    }
    const double q = second_variation(g, core, h, dy, nl) / h1_norm_sq(g, h, dy);
    worst = std::min(worst, q);
  }
  add(out, "second_variation_min", worst, ">=", -1e-6);
  return out;
}

json to_json(const Verdict& v) {
  json checks = json::array();
  for (const Check& c : v.checks) {
    json j = {{"name", c.name}, {"value", finite_or_null(c.value)}, {"relation", c.relation},
              {"limit", c.limit}, {"pass", c.passed}};
    if (c.relation == "in") j["limit_hi"] = c.limit2;
    checks.push_back(std::move(j));
  }
  return {{"b", v.b},
          {"c", v.c},
          {"checks", checks},
          {"passed", v.passed()},
          {"total", v.checks.size()},
          {"pass", v.all_passed()},
          {"diagnostics", v.diagnostics.is_null() ? json::object() : v.diagnostics}};
}

void write_solution(const fs::path& dir, const BrakeOrbitSolution& sol, const Nonlinearity& nl) {
  fs::create_directories(dir);
  write_trajectory_csv(dir / "trajectory.csv", sol.v);
  write_energy_csv(dir / "energy.csv", energy_profile(sol.v, nl, sol.periodic()));
  json j = {{"b", sol.b},
            {"c", sol.c},
            {"T_b", finite_or_null(sol.T_b)},
            {"E_target", sol.E_target},
            {"m_b", sol.m_b},
            {"sigma_bar", finite_or_null(sol.sigma_bar)},
            {"tau_bar", sol.tau_bar},
            {"core_residual", sol.core_residual},
            {"nonlinearity", to_json(nl)},
            {"provenance", sol.provenance}};
  write_text_atomic(dir / "solution.json", j.dump(2) + "\n");
}

LoadedSolution read_solution(const fs::path& dir) {
  const json j = read_json(dir / "solution.json");
  auto need = [&](const char* key) -> const json& {
    if (!j.contains(key)) throw Error(ErrorKind::Io, std::string("solution.json lacks '") + key + "'");
    return j[key];
  };
  BrakeOrbitSolution sol;
  sol.v = read_trajectory_csv(dir / "trajectory.csv");
  sol.b = need("b").get<double>();
  sol.c = need("c").get<double>();
  sol.T_b = number_or(need("T_b"), kInf);
  sol.E_target = need("E_target").get<double>();
  sol.m_b = need("m_b").get<double>();
  sol.sigma_bar = number_or(need("sigma_bar"), -std::numeric_limits<double>::infinity());
  sol.tau_bar = need("tau_bar").get<double>();
  sol.core_residual = need("core_residual").get<double>();
  sol.provenance = j.value("provenance", json::object());
  return {std::move(sol), nonlinearity_from_json(need("nonlinearity"))};
}

}  // namespace brakeorbit
