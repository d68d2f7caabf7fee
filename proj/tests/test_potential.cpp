#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include "brakeorbit/error.hpp"
#include "brakeorbit/potential.hpp"
#include "helpers.hpp"

using namespace brakeorbit;
using brakeorbit::test::sech;

namespace {

const Nonlinearity& cubic() {
  static const auto nl = Nonlinearity::pure_power(3.0);
  return nl;
}

const GroundState& gs1() {
  static const GroundState gs = ground_state(1, cubic());
  return gs;
}

double h1(const RadialField& u) { return norms(u).h1_sq; }

RadialField scaled(const RadialField& u, double t) { return RadialField(u.grid, t * u.values); }

}  // namespace

TEST_CASE("V on closed forms") {
  const auto g = make_grid(1);
  CHECK(evaluate_V(RadialField(g, Vec::Zero(g->size())), cubic()) == 0.0);
  const auto u = RadialField::sample(g, [](double r) { return std::sqrt(2.0) * sech(r); });
  CHECK(std::abs(evaluate_V(u, cubic()) - 4.0 / 3.0) < 1e-3);

  std::mt19937_64 rng(11);
  for (double p : {2.0, 3.0, 4.0}) {
    const auto nl = Nonlinearity::pure_power(p);
    const auto w = test::random_field(make_grid(2, 12.0, 400), rng);
    const double t = 1.7;
    const double direct = evaluate_V(scaled(w, t), nl);
    const double formula = 0.5 * t * t * h1(w) - std::pow(t, p + 1) / (p + 1) * lq(w, p + 1);
    CHECK(std::abs(direct - formula) <= 1e-10 * std::max(1.0, std::abs(formula)));
  }
}

TEST_CASE("gradient of V") {
  std::mt19937_64 rng(12);
  const auto g = make_grid(1);
  CHECK(grad_V(RadialField(g, Vec::Zero(g->size())), cubic()).values.cwiseAbs().maxCoeff() == 0.0);
  CHECK(std::sqrt(norms(grad_V(gs1().w0, cubic())).l2_sq) < 1e-6);
  for (int N : {1, 2, 3}) {
    const auto grid = make_grid(N, 12.0, 600);
    const auto nl = Nonlinearity::pure_power(N == 3 ? 2.2 : 2.5);
    for (int k = 0; k < 10; ++k) {
      const auto u = test::random_field(grid, rng);
      const auto h = test::random_field(grid, rng);
      const double eps = 1e-5;
      const double fd = (evaluate_V(RadialField(grid, u.values + eps * h.values), nl) -
                         evaluate_V(RadialField(grid, u.values - eps * h.values), nl)) /
                        (2 * eps);
      const double an = grid->dot(grad_V(u, nl).values, h.values);
      CHECK(std::abs(fd - an) <= 1e-6 * std::max(std::abs(an), 1e-3));
    }
  }
}

TEST_CASE("second variation") {
  std::mt19937_64 rng(13);
  const auto g = make_grid(2, 12.0, 400);
  const auto nl = Nonlinearity::pure_power(2.5);
  const auto zero = RadialField(g, Vec::Zero(g->size()));
  for (int k = 0; k < 10; ++k) {
    const auto u = test::random_field(g, rng);
    const auto h = test::random_field(g, rng);
    CHECK(dirichlet_form(zero, h, nl) == doctest::Approx(h1(h)).epsilon(1e-13));
    const double eps = 1e-3;
    const double fd = (evaluate_V(RadialField(g, u.values + eps * h.values), nl) - 2 * evaluate_V(u, nl) +
                       evaluate_V(RadialField(g, u.values - eps * h.values), nl)) /
                      (eps * eps);
    const double an = dirichlet_form(u, h, nl);
    CHECK(std::abs(fd - an) <= 1e-4 * std::abs(an));
  }
  CHECK_THROWS_AS(dirichlet_form(zero, RadialField(make_grid(2, 12.0, 401), Vec::Zero(401)), nl), Error);
}

TEST_CASE("ray scan") {
  std::mt19937_64 rng(14);
  const auto g = make_grid(1, 16.0, 800);
  const double c = gs1().c;
  for (double p : {2.0, 3.0, 4.5}) {
    const auto nl = Nonlinearity::pure_power(p);
    for (int k = 0; k < 10; ++k) {
      const auto u = test::random_monotone(g, rng);
      const double A = h1(u), B = lq(u, p + 1);
      const auto r0 = ray_scan(u, 0.0, nl);
      CHECK(std::abs(r0.t_u - std::pow(A / B, 1.0 / (p - 1))) <= 1e-8 * r0.t_u);
      CHECK(r0.alpha == 0.0);
      const double om = std::pow((p + 1) * A / (2 * B), 1.0 / (p - 1));
      CHECK(std::abs(r0.omega - om) <= 1e-8 * om);
      const double b = 0.5 * std::min(c, r0.v_at_tu);
      const auto r = ray_scan(u, b, nl);
      CHECK(r.alpha < r.t_u);
      CHECK(r.t_u < r.omega);
      CHECK(std::abs(evaluate_V(scaled(u, r.alpha), nl) - b) < 1e-10 * std::max(1.0, c));
      CHECK(std::abs(evaluate_V(scaled(u, r.omega), nl) - b) < 1e-10 * std::max(1.0, c));
      // ray increases before the peak and decreases after it
      for (double s : {0.3, 0.7, 0.95}) {
        const double t = s * r.t_u, dt = 1e-4 * r.t_u;
        CHECK(evaluate_V(scaled(u, t + dt), nl) > evaluate_V(scaled(u, t - dt), nl));
      }
      double prev = 0.0;
      for (int q = 0; q < 8; ++q) {
        const double t = r.t_u * (1.05 + 0.3 * q), dt = 1e-4 * r.t_u;
        CHECK(evaluate_V(scaled(u, t + dt), nl) < evaluate_V(scaled(u, t - dt), nl));
        const double n = nehari(*g, t * u.values, nl);
        if (q > 0) CHECK(n < prev);
        prev = n;
      }
    }
  }
  CHECK_THROWS_AS(ray_scan(RadialField(g, Vec::Zero(g->size())), 0.0, cubic()), Error);
  bool below = false;
  try {
    const auto u = RadialField::sample(g, [](double r) { return sech(r); });
    ray_scan(u, 1e3, cubic());
  } catch (const Error& e) {
    below = e.kind() == ErrorKind::NotAboveLevel;
  }
  CHECK(below);
}

TEST_CASE("sublevel classification") {
  const auto& w = gs1().w0;
  const double b = 0.5 * gs1().c;
  CHECK(classify(RadialField(w.grid, Vec::Zero(w.size())), b, cubic()) == Side::Minus);
  const auto seed = RadialField::sample(w.grid, [](double r) { return std::exp(-r * r / 4); });
  const auto r = ray_scan(seed, b, cubic());
  CHECK(classify(scaled(seed, r.omega), b, cubic()) == Side::Plus);
  CHECK(classify(scaled(seed, r.alpha), b, cubic()) == Side::Minus);
  CHECK(classify(scaled(seed, r.t_u), b, cubic()) == Side::AboveLevel);
  CHECK(classify(w, b, cubic()) == Side::AboveLevel);
  // rearranged fields stay classifiable
  std::mt19937_64 rng(15);
  for (int k = 0; k < 20; ++k) {
    const auto u = rearrange(test::random_field(w.grid, rng));
    const Side s = classify(u, b, cubic());
    CHECK((s == Side::Minus || s == Side::Plus || s == Side::AboveLevel));
  }
}

TEST_CASE("ground states") {
  SUBCASE("N = 1, p = 3") {
    const auto& gs = gs1();
    double err = 0.0;
    for (int i = 0; i < gs.w0.size(); ++i) {
      err = std::max(err, std::abs(gs.w0.values[i] - std::sqrt(2.0) * sech(gs.w0.grid->nodes()[i])));
    }
    CHECK(err < 1e-3);
    CHECK(std::abs(gs.c - 4.0 / 3.0) < 1e-3);
    CHECK(gs.residual < 1e-6);
    CHECK(gs.w0.is_monotone());
    CHECK(gs.w0.values.minCoeff() > 0.0);
    CHECK(std::abs(ray_peak(*gs.w0.grid, gs.w0.values, cubic()) - 1.0) < 1e-6);
  }
  SUBCASE("N = 1, p = 2") {
    const auto nl = Nonlinearity::pure_power(2.0);
    const auto gs = ground_state(1, nl);
    double err = 0.0;
    for (int i = 0; i < gs.w0.size(); ++i) {
      err = std::max(err, std::abs(gs.w0.values[i] - 1.5 * std::pow(sech(0.5 * gs.w0.grid->nodes()[i]), 2)));
    }
    CHECK(err < 1e-3);
    // c = (p-1)/(2(p+1)) |w|_3^3 = (1/6) 27/8 * 2 * 2 * 8/15
    CHECK(std::abs(gs.c - 1.2) < 1e-3);
  }
  SUBCASE("higher dimensions") {
    for (int N : {2, 3}) {
      const auto nl = Nonlinearity::pure_power(N == 2 ? 2.5 : 2.2);
      const auto gs = ground_state(N, nl);
      CHECK(gs.residual < 1e-6);
      CHECK(gs.w0.is_monotone());
      CHECK(std::abs(nehari(*gs.w0.grid, gs.w0.values, nl)) < 1e-6);
    }
  }
}

TEST_CASE("structural inequalities") {
  std::mt19937_64 rng(16);
  const auto g = make_grid(1, 16.0, 800);
  const auto nl = cubic();
  const double mu = nl.mu();
  for (int k = 0; k < 100; ++k) {
    const auto u = scaled(test::random_monotone(g, rng), 0.2 + 2.0 * (k % 10) / 10.0);
    const double lhs = mu * evaluate_V(u, nl) - nehari(*g, u.values, nl);
    CHECK(lhs >= 0.5 * (mu - 2.0) * h1(u) - 1e-8);
  }
  SUBCASE("small fields sit above a quarter of the norm") {
    ConstantsBudget budget;
    budget.profiles = 16;
    budget.scales = 32;
    const auto kc = estimate_constants(0.5 * gs1().c, gs1(), nl, budget);
    REQUIRE(kc.rho > 0.0);
    for (int q = 0; q < 50; ++q) {
      const auto u = test::random_field(gs1().w0.grid, rng);
      const double s = kc.rho * (q + 1) / 50.0 / std::sqrt(h1(u));
      const auto v = scaled(u, s);
      CHECK(evaluate_V(v, nl) >= 0.25 * h1(v));
    }
  }
  SUBCASE("bounded L2 with growing gradient is coercive") {
    double prev = -1.0;
    for (int n = 1; n <= 6; ++n) {
      const double freq = 2.0 * n;
      const auto u = RadialField::sample(g, [&](double r) { return std::exp(-r * r) * (1 + 0.5 * std::cos(freq * r)); });
      // |u|_2^2 <= 2.25 int exp(-2 r^2) over the line
      CHECK(norms(u).l2_sq < 2.25 * std::sqrt(std::numbers::pi / 2));
      const double V = evaluate_V(u, nl);
      CHECK(V > prev);
      prev = V;
    }
    CHECK(prev > 5.0);
  }
}

TEST_CASE("constants bundle") {
  const auto& gs = gs1();
  const double c = gs.c;
  ConstantsBudget budget;
  budget.profiles = 24;
  budget.scales = 32;
  for (double frac : {0.0, 0.5}) {
    const double b = frac * c;
    const auto k = estimate_constants(b, gs, cubic(), budget);
    CHECK(k.beta == b + (c - b) / 4.0);
    CHECK(k.lambda0 == std::sqrt((c - b) / 2.0) * (k.delta0 / 5.0) / 4.0);
    CHECK(k.delta0 > 0.0);
    CHECK(k.nu_plus > 0.0);
    CHECK(k.theta == doctest::Approx(1.0 - 0.5 * 2.0 / 4.0));
    const double x = k.beta_plus - b;
    CHECK(x > 0.0);
    CHECK(x / k.nu_plus < 0.5);
    CHECK(std::max(1.0, k.C_plus) * std::pow(x, 0.25) < 0.25);
    CHECK(k.C_plus * std::pow(x, 1.5) <= k.lambda0);
    if (frac > 0.0) {
      CHECK(k.beta == doctest::Approx(5.0 * c / 8.0).epsilon(1e-15));
      CHECK(k.nu_minus > 0.0);
      const double y = k.beta_minus - b;
      CHECK(y > 0.0);
      CHECK(std::max(1.0, k.C_minus) * std::pow(y, 0.25) < 0.25);
      CHECK(k.C_minus * std::pow(y, 1.5) <= k.lambda0);
    } else {
      CHECK(std::isnan(k.beta_minus));
    }
    CHECK(m_b_lower_bound(k) == doctest::Approx(std::sqrt(c - b) * k.delta0));
    const auto j = to_json(k);
    CHECK(j.at("dictionary_seed").get<std::uint64_t>() == budget.seed);
  }
  PotentialConstants k;
  k.c = 1.0;
  k.b = 1.0 - 1e-12;
  k.delta0 = 0.3;
  CHECK(m_b_lower_bound(k) < 1e-6);
  k.delta0 = 0.0;
  CHECK(m_b_lower_bound(k) == 0.0);
  CHECK_THROWS_AS(estimate_constants(c, gs, cubic(), budget), Error);
}
