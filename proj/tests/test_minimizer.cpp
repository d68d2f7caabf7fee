#include <doctest.h>

#include <cmath>
#include <limits>

#include "brakeorbit/error.hpp"
#include "brakeorbit/minimizer.hpp"
#include "brakeorbit/potential.hpp"

using namespace brakeorbit;

namespace {

const Nonlinearity nl = Nonlinearity::pure_power(3.0);

const GroundState& gs() {
  static const GroundState g = ground_state(1, nl, {.r_max = 16.0, .n_r = 400});
  return g;
}

PotentialConstants constants(double b) {
  ConstantsBudget budget;
  budget.profiles = 16;
  budget.scales = 32;
  return estimate_constants(b, gs(), nl, budget);
}

RadialField scaled(const RadialField& u, double t) { return RadialField(u.grid, t * u.values); }

double l2(const Vec& u) { return std::sqrt(gs().w0.grid->l2_sq(u)); }

struct Run {
  CoreSegment seg;
  std::vector<CheckpointInfo> log;
};

const Run& half_run() {
  static const Run run = [] {
    Run r;
    const double b = 0.5 * gs().c;
    MinimizeConfig cfg;
    cfg.b = b;
    cfg.seed = gs().w0;
    cfg.dy = 0.025;
    cfg.checkpoint_every = 1;
    cfg.on_checkpoint = [&](const CheckpointInfo& info, const Trajectory&) { r.log.push_back(info); };
    r.seg = minimize(cfg, constants(b), nl);
    return r;
  }();
  return run;
}

}  // namespace

TEST_CASE("initial ray trajectory") {
  const auto& w = gs().w0;
  for (double frac : {0.0, 0.5}) {
    const double b = frac * gs().c;
    const auto k = constants(b);
    const auto seed = RadialField::sample(w.grid, [](double r) { return std::exp(-r * r / 2); });
    const auto ray = ray_scan(seed, b, nl);
    const CylinderGrid cg(w.grid, -1.0, ray.omega - ray.alpha + 1.0, 201);
    const auto v = initial_trajectory(seed, b, k, cg, nl);
    const Vec V = slice_potentials(v, nl);
    CHECK(V.minCoeff() >= b - 1e-10);
    for (int j = 0; j < v.n_y(); ++j) CHECK(RadialField(w.grid, v.slice(j)).is_monotone());
    CHECK(classify(*w.grid, v.slice(0), b, nl) == Side::Minus);
    CHECK(classify(*w.grid, v.slice(v.n_y() - 1), b, nl) == Side::Plus);
    const double bound = (0.5 * norms(seed).l2_sq + ray.v_at_tu - b) * (ray.omega - ray.alpha);
    CHECK(phi(v, b, nl, Window{cg.y_min, cg.y_max}) <= bound + 1e-3);

    const auto st = detect_sigma_tau(v, b, k, nl);
    CHECK(st.tau_bar > st.sigma_bar);
    const double shift = 0.5 * (cg.y_min + cg.y_max) - 0.5 * (ray.alpha + ray.omega);
    CHECK(std::abs(st.tau_bar - (ray.omega + shift)) <= cg.dy() + 1e-12);
    if (b > 0.0) {
      CHECK(std::abs(st.sigma_bar - (ray.alpha + shift)) <= cg.dy() + 1e-12);
    }
  }
  // every ray peaks at or above c, so only a level beyond it has no crossing
  const double c = gs().c;
  bool no_crossing = false;
  try {
    initial_trajectory(w, 10.0 * c, constants(0.5 * c), CylinderGrid(w.grid, 0.0, 1.0, 11), nl);
  } catch (const Error& e) {
    no_crossing = e.kind() == ErrorKind::NotAboveLevel;
  }
  CHECK(no_crossing);
}

TEST_CASE("tail on the Plus side") {
  const double b = 0.5 * gs().c;
  const auto k = constants(b);
  const auto& w = gs().w0;
  // u0 on the ray past the peak with V(u0) - b below beta_plus - b
  const auto ray = ray_scan(w, b, nl);
  double lo = 1.0, hi = ray.omega;
  const double target = b + 0.5 * (k.beta_plus - b);
  for (int i = 0; i < 200; ++i) {
    const double mid = 0.5 * (lo + hi);
    (evaluate_V(scaled(w, mid), nl) > target ? lo : hi) = mid;
  }
  const auto u0 = scaled(w, lo);
  const double V0 = evaluate_V(u0, nl);
  const auto t = tail_plus(u0, b, nl, 0.005);
  CHECK(t.s0 > 1.0);
  CHECK(std::abs(potential_value(*w.grid, t.values.row(t.values.rows() - 1).transpose(), nl) - b) < 1e-10);
  CHECK(t.cost <= k.C_plus * std::pow(V0 - b, 1.5) + 1e-6);
  double excursion = 0.0;
  for (int j = 0; j < t.values.rows(); ++j) {
    excursion = std::max(excursion, l2(t.values.row(j).transpose() - u0.values));
  }
  CHECK(std::abs(excursion - (t.s0 - 1.0) * l2(u0.values)) < 1e-10);

  const auto at = scaled(w, ray.omega);
  const auto z = tail_plus(at, b, nl);
  CHECK(z.s0 == 1.0);
  CHECK(z.cost == 0.0);
  CHECK(z.length == 0.0);
  CHECK_THROWS_AS(tail_plus(scaled(w, 0.9), b, nl), Error);
  CHECK_THROWS_AS(tail_minus(scaled(w, 1.1), b, nl), Error);
}

TEST_CASE("tail on the Minus side") {
  const auto& w = gs().w0;
  SUBCASE("b = 0 homotopy to zero") {
    for (double s : {0.3, 0.6, 0.9}) {
      const auto u0 = scaled(w, s);
      const double V0 = evaluate_V(u0, nl);
      const double L2 = norms(u0).l2_sq;
      const auto t = tail_minus(u0, 0.0, nl, 0.001);
      CHECK(t.cost <= 0.5 * L2 + V0 + 1e-6);
      if (L2 <= 4 * V0) CHECK(t.cost <= 3 * V0 + 1e-6);
      CHECK(t.values.row(0).norm() == 0.0);
    }
    const auto z = tail_minus(RadialField(w.grid, Vec::Zero(w.size())), 0.0, nl);
    CHECK(z.cost == 0.0);
    CHECK(z.length == 0.0);
  }
  SUBCASE("b > 0 descent to the crossing") {
    const double b = 0.5 * gs().c;
    const auto ray = ray_scan(w, b, nl);
    const auto u0 = scaled(w, 0.5 * (ray.alpha + 1.0));
    const auto t = tail_minus(u0, b, nl);
    const Vec end = t.values.row(0).transpose();
    CHECK(classify(*w.grid, end, b, nl) == Side::Minus);
    CHECK(std::abs(potential_value(*w.grid, end, nl) - b) < 1e-10);
    CHECK(t.s0 == doctest::Approx(ray.alpha / (0.5 * (ray.alpha + 1.0))).epsilon(1e-9));
  }
}

TEST_CASE("minimization at b = c/2") {
  const auto& r = half_run();
  const auto& seg = r.seg;
  const double b = 0.5 * gs().c;
  const double c = gs().c;
  CHECK(seg.converged);
  CHECK(seg.grad_norm < 1e-5);
  CHECK(seg.residual < 1e-9);
  CHECK(seg.m_b > 0.0);
  CHECK(std::isfinite(seg.sigma_bar));
  CHECK(seg.sigma_bar < seg.tau_bar);

  SUBCASE("monotone descent") {
    REQUIRE(!seg.descent.empty());
    for (const auto& [before, after] : seg.descent) CHECK(after <= before + 1e-12);
  }
  SUBCASE("iterates stay admissible") {
    REQUIRE(!r.log.empty());
    const double tol = 1e-9 * std::max(1.0, c);
    for (const auto& info : r.log) CHECK(info.min_slack >= -tol);
  }
  SUBCASE("end slices on the two sides") {
    const auto& g = *gs().w0.grid;
    CHECK(classify(g, seg.v.slice(0), b + 1e-2, nl) == Side::Minus);
    CHECK(classify(g, seg.v.slice(seg.v.n_y() - 1), b + 1e-2, nl) == Side::Plus);
    const Vec V = slice_potentials(seg.v, nl);
    // the free rest slice may sit O(dy^2) below the level
    const double dy = seg.v.grid.dy();
    CHECK(V.minCoeff() >= b - dy * dy);
    for (int j = 1; j + 1 < seg.v.n_y(); ++j) CHECK(V[j] > b);
    for (int j = 0; j < seg.v.n_y(); ++j) CHECK(RadialField(gs().w0.grid, seg.v.slice(j)).is_monotone());
  }
  SUBCASE("energy is flat and the ends are at rest") {
    const auto e = energy_profile(seg.v, nl);
    const int n = seg.v.n_y();
    std::vector<double> mid(e.E.data() + 2, e.E.data() + n - 2);
    std::nth_element(mid.begin(), mid.begin() + mid.size() / 2, mid.end());
    const double med = mid[mid.size() / 2];
    for (int j = 2; j + 2 < n; ++j) CHECK(std::abs(e.E[j] - med) < 1e-3 * std::max(1.0, c));
    const double dy = seg.v.grid.dy();
    const double k0 = l2(seg.v.slice(1) - seg.v.slice(0)) / dy;
    const double k1 = l2(seg.v.slice(n - 1) - seg.v.slice(n - 2)) / dy;
    // one-sided differences at a rest slice are O(dy)
    CHECK(k0 < 1e-2 * std::sqrt(c) + dy);
    CHECK(k1 < 1e-2 * std::sqrt(c) + dy);
  }
  SUBCASE("halving dy does not raise the level") {
    MinimizeConfig cfg;
    cfg.b = b;
    cfg.seed = gs().w0;
    cfg.dy = 0.05;
    const auto coarse = minimize(cfg, constants(b), nl);
    REQUIRE(coarse.converged);
    cfg.dy = 0.025;
    cfg.resume_from = coarse.v;
    const auto fine = minimize(cfg, constants(b), nl);
    CHECK(fine.converged);
    CHECK(fine.v.grid.dy() < 0.03);
    CHECK(fine.m_b <= coarse.m_b + 1e-3 * c);
  }
}

TEST_CASE("b = 0 free decay") {
  MinimizeConfig cfg;
  cfg.b = 0.0;
  cfg.mode = BoundaryMode::FreeDecay;
  cfg.seed = gs().w0;
  cfg.dy = 0.05;
  cfg.decay_length = 10.0;
  const auto seg = minimize(cfg, constants(0.0), nl);
  CHECK(seg.converged);
  CHECK(seg.sigma_bar == -std::numeric_limits<double>::infinity());
  CHECK(seg.m_b > 0.0);
  CHECK(l2(seg.v.slice(0)) < 1e-4);
  const auto st = detect_sigma_tau(seg.v, 0.0, constants(0.0), nl);
  CHECK(st.sigma_index == -1);
  CHECK(st.tau_bar == doctest::Approx(seg.tau_bar));
}

TEST_CASE("configuration errors") {
  MinimizeConfig cfg;
  cfg.b = gs().c;
  cfg.seed = gs().w0;
  CHECK_THROWS_AS(minimize(cfg, constants(0.0), nl), Error);
  MinimizeConfig none;
  CHECK_THROWS_AS(minimize(none, constants(0.0), nl), Error);
}

TEST_CASE("distance surrogate") {
  const auto& w = gs().w0;
  const double b = 0.5 * gs().c;
  const auto ray = ray_scan(w, b, nl);
  CHECK(distance_to_minus(*w.grid, ray.alpha * w.values, b, nl) == doctest::Approx(0.0).epsilon(1e-9));
  CHECK(distance_to_minus(*w.grid, w.values, b, nl) ==
        doctest::Approx((1 - ray.alpha) * l2(w.values)).epsilon(1e-9));
}
