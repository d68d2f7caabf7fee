#include "brakeorbit/potential.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <functional>
#include <random>
#include <vector>

#include <Eigen/SparseCore>
#include <Eigen/SparseLU>
#include <boost/math/tools/roots.hpp>

#include "brakeorbit/error.hpp"

namespace brakeorbit {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

double sum_F(const RadialGrid& g, const Vec& u, const Nonlinearity& nl, double t = 1.0) {
  const Vec& w = g.weights();
  double s = 0.0;
  for (int i = 0; i < g.size(); ++i) s += w[i] * nl.F(t * u[i]);
  return s;
}

// sum_i w_i f(t u_i) u_i
double sum_fu(const RadialGrid& g, const Vec& u, const Nonlinearity& nl, double t) {
  const Vec& w = g.weights();
  double s = 0.0;
  for (int i = 0; i < g.size(); ++i) s += w[i] * nl.f(t * u[i]) * u[i];
  return s;
}

// t -> V(tu) for a fixed profile.
struct Ray {
  const RadialGrid& g;
  const Vec& u;
  const Nonlinearity& nl;
  double H;

  Ray(const RadialGrid& grid, const Vec& field, const Nonlinearity& n)
      : g(grid), u(field), nl(n), H(grid.l2_sq(field) + grid.grad_sq(field)) {}

  double value(double t) const { return 0.5 * t * t * H - sum_F(g, u, nl, t); }
  // (d/dt V(tu)) / t
  double slope(double t) const { return H - sum_fu(g, u, nl, t) / t; }
};

template <class Fn>
double solve_root(Fn&& fn, double a, double b, double fa, double fb) {
  if (fa == 0.0) return a;
  if (fb == 0.0) return b;
  boost::math::tools::eps_tolerance<double> tol(std::numeric_limits<double>::digits - 1);
  std::uintmax_t iters = 300;
  const auto [lo, hi] = boost::math::tools::toms748_solve(fn, a, b, fa, fb, tol, iters);
  return std::abs(fn(lo)) <= std::abs(fn(hi)) ? lo : hi;
}

double peak_of(const Ray& ray) {
  if (!(ray.H > 0.0)) throw Error(ErrorKind::InvalidField, "ray scan of the zero field");
  double lo = 1.0;
  double hi = 1.0;
  double s = ray.slope(1.0);
  if (s > 0.0) {
    while (s > 0.0) {
      lo = hi;
      hi *= 2.0;
      if (hi > 1e150) throw Error(ErrorKind::NotAboveLevel, "ray is increasing without bound");
      s = ray.slope(hi);
    }
  } else {
    while (s <= 0.0) {
      hi = lo;
      lo *= 0.5;
      if (lo < 1e-150) throw Error(ErrorKind::InvalidField, "ray peak not bracketed");
      s = ray.slope(lo);
    }
  }
  auto fn = [&](double t) { return ray.slope(t); };
  return solve_root(fn, lo, hi, ray.slope(lo), ray.slope(hi));
}

RayReport scan(const Ray& ray, double b) {
  RayReport rep;
  rep.t_u = peak_of(ray);
  rep.v_at_tu = ray.value(rep.t_u);
  if (rep.v_at_tu < b) {
    throw Error(ErrorKind::NotAboveLevel, "ray peak V(t_u u) lies below the level b");
  }
  auto fn = [&](double t) { return ray.value(t) - b; };
  const double fpeak = rep.v_at_tu - b;
  if (b <= 0.0) {
    rep.alpha = 0.0;
  } else {
    rep.alpha = solve_root(fn, 0.0, rep.t_u, -b, fpeak);
  }
  double hi = 2.0 * rep.t_u;
  double fhi = fn(hi);
  while (fhi >= 0.0) {
    hi *= 2.0;
    fhi = fn(hi);
  }
  rep.omega = solve_root(fn, rep.t_u, hi, fpeak, fhi);
  return rep;
}

void require_finite(const Vec& u) {
  if (!u.allFinite()) throw Error(ErrorKind::InvalidField, "field has non-finite values");
}

}  // namespace

double potential_value(const RadialGrid& g, const Vec& u, const Nonlinearity& nl) {
  return 0.5 * (g.l2_sq(u) + g.grad_sq(u)) - sum_F(g, u, nl);
}

void potential_gradient(const RadialGrid& g, const Vec& u, const Nonlinearity& nl, Vec& out) {
  g.stiffness_apply(u, out);
  const Vec& w = g.weights();
  for (int i = 0; i < g.size(); ++i) out[i] = out[i] / w[i] + u[i] - nl.f(u[i]);
}

double nehari(const RadialGrid& g, const Vec& u, const Nonlinearity& nl) {
  return g.l2_sq(u) + g.grad_sq(u) - sum_fu(g, u, nl, 1.0);
}

double evaluate_V(const RadialField& u, const Nonlinearity& nl) {
  check_finite(u);
  return potential_value(*u.grid, u.values, nl);
}

RadialField grad_V(const RadialField& u, const Nonlinearity& nl) {
  check_finite(u);
  Vec g;
  potential_gradient(*u.grid, u.values, nl, g);
  return RadialField(u.grid, std::move(g));
}

double dirichlet_form(const RadialField& u, const RadialField& h, const Nonlinearity& nl) {
  check_same_grid(u, h);
  check_finite(u);
  check_finite(h);
  const RadialGrid& g = *u.grid;
  double pot = 0.0;
  for (int i = 0; i < g.size(); ++i) {
    pot += g.weights()[i] * nl.df(u.values[i]) * h.values[i] * h.values[i];
  }
  return g.grad_sq(h.values) + g.l2_sq(h.values) - pot;
}

RayReport ray_scan(const RadialGrid& g, const Vec& u, double b, const Nonlinearity& nl) {
  require_finite(u);
  return scan(Ray(g, u, nl), b);
}

RayReport ray_scan(const RadialField& u, double b, const Nonlinearity& nl) {
  check_finite(u);
  return ray_scan(*u.grid, u.values, b, nl);
}

double ray_peak(const RadialGrid& g, const Vec& u, const Nonlinearity& nl) {
  require_finite(u);
  return peak_of(Ray(g, u, nl));
}

std::string_view to_string(Side s) noexcept {
  switch (s) {
    case Side::Minus: return "Minus";
    case Side::Plus: return "Plus";
    case Side::AboveLevel: return "AboveLevel";
  }
  return "Unknown";
}

Side classify(const RadialGrid& g, const Vec& u, double b, const Nonlinearity& nl) {
  const double V = potential_value(g, u, nl);
  if (V > b + 1e-10 * std::max(1.0, std::abs(b))) return Side::AboveLevel;
  const double norm_sq = g.l2_sq(u) + g.grad_sq(u);
  if (norm_sq == 0.0) return Side::Minus;
  const double d = nehari(g, u, nl);
  if (std::abs(d) <= 1e-10 * std::max(1.0, norm_sq)) {
    return ray_peak(g, u, nl) > 1.0 ? Side::Minus : Side::Plus;
  }
  return d > 0.0 ? Side::Minus : Side::Plus;
}

Side classify(const RadialField& u, double b, const Nonlinearity& nl) {
  check_finite(u);
  return classify(*u.grid, u.values, b, nl);
}

// ---------------------------------------------------------------------------
// Ground state

namespace {

enum class Shot { Undershoot, Overshoot, Undecided };

struct ShotResult {
  Shot kind = Shot::Undecided;
  std::vector<double> r;  // node radii reached before the event
  std::vector<double> w;
};

// Integrates w'' = -(N-1)/r w' + w - f(w) from the origin and records the
// values at the grid nodes until the solution crosses zero or turns upward.
ShotResult shoot(double amp, const RadialGrid& g, const Nonlinearity& nl, bool record) {
  const int N = g.dim();
  const double h = g.h();
  const double stiff = std::max(1.0, std::abs(nl.df(amp)) + 1.0);
  const int sub = std::max(4, static_cast<int>(std::ceil(h * std::sqrt(stiff) / 0.05)));
  auto rhs = [&](double r, double w, double dw, double& ddw) {
    const double drift = (N > 1 && r > 0.0) ? (N - 1) / r * dw : 0.0;
    ddw = -drift + w - nl.f(w);
  };
  ShotResult res;
  // series start near the origin
  const double c2 = (amp - nl.f(amp)) / (2.0 * N);
  double r = 1e-6 * h;
  double w = amp + c2 * r * r;
  double dw = 2.0 * c2 * r;
  auto step_to = [&](double r_end, int n_sub) -> bool {
    const double dr = (r_end - r) / n_sub;
    for (int k = 0; k < n_sub; ++k) {
      double a1, a2, a3, a4;
      rhs(r, w, dw, a1);
      const double w2 = w + 0.5 * dr * dw, dw2 = dw + 0.5 * dr * a1;
      rhs(r + 0.5 * dr, w2, dw2, a2);
      const double w3 = w + 0.5 * dr * dw2, dw3 = dw + 0.5 * dr * a2;
      rhs(r + 0.5 * dr, w3, dw3, a3);
      const double w4 = w + dr * dw3, dw4 = dw + dr * a3;
      rhs(r + dr, w4, dw4, a4);
      w += dr / 6.0 * (dw + 2.0 * dw2 + 2.0 * dw3 + dw4);
      dw += dr / 6.0 * (a1 + 2.0 * a2 + 2.0 * a3 + a4);
      r += dr;
      if (!std::isfinite(w)) {
        res.kind = Shot::Overshoot;
        return false;
      }
      if (w < 0.0) {
        res.kind = Shot::Overshoot;
        return false;
      }
      if (dw > 0.0) {
        res.kind = Shot::Undershoot;
        return false;
      }
    }
    return true;
  };
  for (int i = 0; i < g.size(); ++i) {
    const double target = g.nodes()[i];
    if (!step_to(target, i == 0 ? sub : sub)) break;
    if (record) {
      res.r.push_back(target);
      res.w.push_back(w);
    }
  }
  return res;
}

// Newton on S u + W (u - f(u)) = 0.
double polish(const RadialGrid& g, const Nonlinearity& nl, Vec& u, double tol) {
  const int n = g.size();
  const Vec& w = g.weights();
  auto residual = [&](const Vec& x) {
    Vec r;
    potential_gradient(g, x, nl, r);
    return r;
  };
  Vec res = residual(u);
  double norm = std::sqrt(g.l2_sq(res));
  for (int it = 0; it < 100 && norm > 1e-13; ++it) {
    std::vector<Eigen::Triplet<double>> trip;
    trip.reserve(3 * n);
    for (int i = 0; i < n; ++i) {
      trip.emplace_back(i, i, g.stiff_diag()[i] + w[i] * (1.0 - nl.df(u[i])));
      if (i + 1 < n) {
        trip.emplace_back(i, i + 1, g.stiff_off()[i]);
        trip.emplace_back(i + 1, i, g.stiff_off()[i]);
      }
    }
    Eigen::SparseMatrix<double> J(n, n);
    J.setFromTriplets(trip.begin(), trip.end());
    Eigen::SparseLU<Eigen::SparseMatrix<double>> lu;
    lu.compute(J);
    if (lu.info() != Eigen::Success) break;
    const Vec rhs = -res.cwiseProduct(w);
    const Vec du = lu.solve(rhs);
    double step = 1.0;
    bool accepted = false;
    for (int ls = 0; ls < 30; ++ls) {
      Vec trial = u + step * du;
      Vec tres = residual(trial);
      const double tn = std::sqrt(g.l2_sq(tres));
      if (tn < norm) {
        u = std::move(trial);
        res = std::move(tres);
        norm = tn;
        accepted = true;
        break;
      }
      step *= 0.5;
    }
    if (!accepted) break;
  }
  if (!(norm < tol)) {
    throw Error(ErrorKind::ShootingFailed,
                "Newton polish did not reach the residual tolerance (" + std::to_string(norm) + ")");
  }
  return norm;
}

}  // namespace

GroundState ground_state(int dim, const Nonlinearity& nl, const GroundStateOptions& opt) {
  auto grid = make_grid(dim, opt.r_max, opt.n_r);
  double lo = opt.amp_lo;
  double hi = opt.amp_hi;
  if (shoot(lo, *grid, nl, false).kind != Shot::Undershoot ||
      shoot(hi, *grid, nl, false).kind != Shot::Overshoot) {
    throw Error(ErrorKind::ShootingFailed,
                "overshoot indicator does not change sign on the amplitude range");
  }
  for (int it = 0; it < 200 && hi / lo - 1.0 > 4e-16; ++it) {
    const double mid = std::sqrt(lo * hi);
    if (mid <= lo || mid >= hi) break;
    const Shot s = shoot(mid, *grid, nl, false).kind;
    if (s == Shot::Overshoot) {
      hi = mid;
    } else if (s == Shot::Undershoot) {
      lo = mid;
    } else {
      lo = hi = mid;
    }
  }
  ShotResult best = shoot(lo, *grid, nl, true);
  const int n = grid->size();
  Vec u = Vec::Zero(n);
  const int m = static_cast<int>(best.w.size());
  // Keep the shooting profile up to its minimum and continue with the
  // linearized decay beyond.
  int cut = m;
  for (int i = 1; i < m; ++i) {
    if (best.w[i] > best.w[i - 1]) {
      cut = i;
      break;
    }
  }
  if (cut < 2) throw Error(ErrorKind::ShootingFailed, "shooting profile collapsed");
  for (int i = 0; i < cut; ++i) u[i] = best.w[i];
  const double r_c = grid->nodes()[cut - 1];
  const double w_c = best.w[cut - 1];
  for (int i = cut; i < n; ++i) {
    const double r = grid->nodes()[i];
    u[i] = w_c * std::exp(-(r - r_c)) * std::pow(r_c / r, 0.5 * (dim - 1));
  }
  GroundState gs;
  gs.amplitude = lo;
  gs.residual = polish(*grid, nl, u, opt.residual_tol);
  if (u.minCoeff() < 0.0) u = u.cwiseAbs();
  gs.c = potential_value(*grid, u, nl);
  gs.w0 = RadialField(grid, std::move(u));
  return gs;
}

// ---------------------------------------------------------------------------
// Constants

namespace {

Vec dilate(const RadialGrid& g, const Vec& w0, double lambda) {
  const Vec& r = g.nodes();
  const int n = g.size();
  Vec out(n);
  for (int i = 0; i < n; ++i) {
    const double x = r[i] / lambda;
    const double pos = x / g.h() - 0.5;
    if (pos <= 0.0) {
      out[i] = w0[0];
    } else if (pos >= n - 1) {
      out[i] = 0.0;
    } else {
      const int k = static_cast<int>(pos);
      const double a = pos - k;
      out[i] = (1.0 - a) * w0[k] + a * w0[k + 1];
    }
  }
  return out;
}

// min |s a - t b| over s in [0, s_max], t >= t_min for unit vectors with
// inner product G.
double box_distance(double G, double s_max, double t_min) {
  auto value = [&](double t) {
    const double s = std::clamp(t * G, 0.0, s_max);
    return std::sqrt(std::max(0.0, s * s - 2.0 * s * t * G + t * t));
  };
  double best = value(t_min);
  best = std::min(best, value(std::max(t_min, s_max * G)));
  return best;
}

double largest_feasible(double cap, const std::function<bool(double)>& ok) {
  if (!(cap > 0.0)) return 0.0;
  if (ok(cap)) return cap;
  double lo = 0.0;
  double hi = cap;
  for (int it = 0; it < 200; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (ok(mid)) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  return lo;
}

}  // namespace

PotentialConstants estimate_constants(double b, const GroundState& gs, const Nonlinearity& nl,
                                      const ConstantsBudget& budget) {
  const double c = gs.c;
  if (!(b >= 0.0 && b < c)) {
    throw Error(ErrorKind::InvalidField, "energy level must satisfy 0 <= b < c");
  }
  const RadialGrid& g = *gs.w0.grid;
  const int N = g.dim();
  const double p = nl.p();
  const double mu = nl.mu();

  PotentialConstants k;
  k.b = b;
  k.c = c;
  k.mu = mu;
  k.seed = budget.seed;
  k.profiles = budget.profiles;
  k.scales = budget.scales;
  k.beta = b + (c - b) / 4.0;
  k.theta = 1.0 - 0.5 * N * (p - 1.0) / (p + 1.0);
  const double level = 0.5 * (b + c);

  std::mt19937_64 rng(budget.seed);
  std::uniform_real_distribution<double> lam(std::log(0.5), std::log(2.0));
  std::uniform_real_distribution<double> sig(std::log(0.5), std::log(4.0));
  std::vector<Vec> dict;
  dict.reserve(budget.profiles);
  for (int q = 0; q < budget.profiles; ++q) {
    Vec d;
    if (q % 2 == 0) {
      d = dilate(g, gs.w0.values, std::exp(lam(rng)));
    } else {
      const double s = std::exp(sig(rng));
      d = (-(g.nodes().array() / s).square()).exp().matrix();
    }
    const double n2 = std::sqrt(g.l2_sq(d));
    if (n2 > 0.0) dict.push_back(d / n2);
  }

  struct Entry {
    int idx;
    RayReport at_level, at_beta, at_b;
  };
  std::vector<Entry> ok;
  double kappa = 0.0;
  for (int q = 0; q < static_cast<int>(dict.size()); ++q) {
    const Vec& d = dict[q];
    const double grad = g.grad_sq(d);
    if (grad > 0.0) {
      const double lp = std::pow(g.weights().dot(d.cwiseAbs().array().pow(p + 1.0).matrix()),
                                 1.0 / (p + 1.0));
      kappa = std::max(kappa, lp / std::pow(std::sqrt(grad), 1.0 - k.theta));
    }
    try {
      Entry e{q, ray_scan(g, d, level, nl), ray_scan(g, d, k.beta, nl), ray_scan(g, d, b, nl)};
      ok.push_back(e);
    } catch (const Error& err) {
      if (err.kind() != ErrorKind::NotAboveLevel) throw;
    }
  }
  k.kappa = kappa;
  k.plus_members = static_cast<int>(ok.size());
  k.minus_members = static_cast<int>(ok.size());
  if (static_cast<int>(ok.size()) < budget.min_members) {
    throw Error(ErrorKind::DictionaryTooSmall,
                "only " + std::to_string(ok.size()) + " admissible dictionary profiles");
  }

  // delta0 over ray pairs
  double delta = std::numeric_limits<double>::infinity();
  for (const auto& e1 : ok) {
    for (const auto& e2 : ok) {
      const double G = g.dot(dict[e1.idx], dict[e2.idx]);
      delta = std::min(delta, box_distance(G, e1.at_level.alpha, e2.at_level.omega));
    }
  }
  k.delta0 = delta;
  k.r0 = k.delta0 / 5.0;
  k.lambda0 = std::sqrt((c - b) / 2.0) * k.r0 / 4.0;

  // nu^+(beta) and nu^-(b)
  const int S = std::max(2, budget.scales);
  double nu_p = std::numeric_limits<double>::infinity();
  double nu_m = std::numeric_limits<double>::infinity();
  for (const auto& e : ok) {
    const Vec& d = dict[e.idx];
    for (int s = 0; s < S; ++s) {
      const double t = e.at_beta.omega * std::pow(4.0, static_cast<double>(s) / (S - 1));
      const Vec u = t * d;
      nu_p = std::min(nu_p, -nehari(g, u, nl) / std::max(1.0, g.l2_sq(u)));
    }
    if (b > 0.0) {
      for (int s = 0; s < S; ++s) {
        const double t =
            e.at_b.alpha + (e.at_level.alpha - e.at_b.alpha) * (s + 1.0) / static_cast<double>(S);
        nu_m = std::min(nu_m, nehari(g, t * d, nl));
      }
    }
  }
  k.nu_plus = nu_p;
  k.C_plus = std::sqrt(2.0 / nu_p) * (1.0 / (3.0 * nu_p) + 1.0);
  const double Cp = k.C_plus;
  const double L0 = k.lambda0;
  // the inequalities are tested on the excess as recovered from b + x
  auto stored = [b](double x) { return (b + x) - b; };
  k.beta_plus = b + largest_feasible(k.beta - b, [&](double x) {
                  x = stored(x);
                  return x / nu_p < 0.5 && std::max(1.0, Cp) * std::pow(x, 0.25) < 0.25 &&
                         Cp * std::pow(x, 1.5) <= L0;
                });
  if (b > 0.0) {
    k.nu_minus = nu_m;
    const double l2max = 2.0 * mu / (mu - 2.0) * k.beta;
    k.C_minus = std::sqrt(2.0 / nu_m) * (l2max / (3.0 * nu_m) + 1.0);
    const double Cm = k.C_minus;
    k.beta_minus = b + largest_feasible(k.beta - b, [&](double x) {
                     x = stored(x);
                     return std::max(1.0, Cm) * std::pow(x, 0.25) < 0.25 &&
                            Cm * std::pow(x, 1.5) <= L0;
                   });
  } else {
    k.nu_minus = kNaN;
    k.C_minus = kNaN;
    k.beta_minus = kNaN;
  }

  // rho: largest sampled H1 radius where V >= |u|^2 / 4 holds, halved
  double rho_obs = 0.0;
  for (int s = 1; s <= S; ++s) {
    const double R = static_cast<double>(s) / S;
    bool holds = true;
    for (const Vec& d : dict) {
      const double H = std::sqrt(g.l2_sq(d) + g.grad_sq(d));
      const Vec u = (R / H) * d;
      if (potential_value(g, u, nl) < 0.25 * R * R) {
        holds = false;
        break;
      }
    }
    if (!holds) break;
    rho_obs = R;
  }
  k.rho = 0.5 * rho_obs;
  return k;
}

double m_b_lower_bound(const PotentialConstants& k) {
  if (!(k.delta0 > 0.0)) return 0.0;
  return std::sqrt(std::max(0.0, k.c - k.b)) * k.delta0;
}

nlohmann::json to_json(const PotentialConstants& k) {
  auto num = [](double x) -> nlohmann::json {
    if (std::isfinite(x)) return x;
    return nullptr;
  };
  nlohmann::json j;
  j["b"] = num(k.b);
  j["c"] = num(k.c);
  j["rho"] = num(k.rho);
  j["delta0"] = num(k.delta0);
  j["r0"] = num(k.r0);
  j["beta"] = num(k.beta);
  j["lambda0"] = num(k.lambda0);
  j["nu_plus"] = num(k.nu_plus);
  j["nu_minus"] = num(k.nu_minus);
  j["beta_plus"] = num(k.beta_plus);
  j["beta_minus"] = num(k.beta_minus);
  j["C_plus"] = num(k.C_plus);
  j["C_minus"] = num(k.C_minus);
  j["theta"] = num(k.theta);
  j["kappa"] = num(k.kappa);
  j["mu"] = num(k.mu);
  j["m_b_lower_bound"] = num(m_b_lower_bound(k));
  j["dictionary_seed"] = k.seed;
  j["dictionary_profiles"] = k.profiles;
  j["dictionary_scales"] = k.scales;
  j["dictionary_families"] = {"ground_state_dilation", "gaussian"};
  j["admissible_members"] = k.plus_members;
  j["estimate_quality"] = {{"delta0", "dictionary_upper_estimate"},
                           {"nu_plus", "dictionary_upper_estimate"},
                           {"nu_minus", "dictionary_upper_estimate"},
                           {"kappa", "dictionary_lower_estimate"},
                           {"rho", "sampled"}};
  return j;
}

}  // namespace brakeorbit
