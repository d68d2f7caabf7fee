#pragma once

#include <cstdint>
#include <string>

#include <json.hpp>

#include "brakeorbit/nonlinearity.hpp"
#include "brakeorbit/radial_grid.hpp"

namespace brakeorbit {

// Vector-level kernels shared by the trajectory and minimizer code.

/// V(u) = 1/2 (|u|_2^2 + D(u)) - sum_i w_i F(u_i).
double potential_value(const RadialGrid& g, const Vec& u, const Nonlinearity& nl);
/// g = u - Delta u - f(u), the W-gradient of potential_value.
void potential_gradient(const RadialGrid& g, const Vec& u, const Nonlinearity& nl, Vec& out);
/// V'(u)u.
double nehari(const RadialGrid& g, const Vec& u, const Nonlinearity& nl);

double evaluate_V(const RadialField& u, const Nonlinearity& nl);
RadialField grad_V(const RadialField& u, const Nonlinearity& nl);
/// V''(u)h.h = D(h) + |h|_2^2 - sum_i w_i f'(u_i) h_i^2.
double dirichlet_form(const RadialField& u, const RadialField& h, const Nonlinearity& nl);

struct RayReport {
  double t_u = 0.0;
  double alpha = 0.0;
  double omega = 0.0;
  double v_at_tu = 0.0;
};

/// Peak scale and level-b crossings of t -> V(tu).
/// Throws NotAboveLevel when the ray peaks below b, InvalidField for u = 0.
RayReport ray_scan(const RadialGrid& g, const Vec& u, double b, const Nonlinearity& nl);
RayReport ray_scan(const RadialField& u, double b, const Nonlinearity& nl);

/// Peak scale only.
double ray_peak(const RadialGrid& g, const Vec& u, const Nonlinearity& nl);

enum class Side { Minus, Plus, AboveLevel };
std::string_view to_string(Side s) noexcept;

Side classify(const RadialGrid& g, const Vec& u, double b, const Nonlinearity& nl);
Side classify(const RadialField& u, double b, const Nonlinearity& nl);

struct GroundStateOptions {
  double r_max = 20.0;
  int n_r = 2000;
  double amp_lo = 1e-2;
  double amp_hi = 1e3;
  double residual_tol = 1e-6;
};

struct GroundState {
  RadialField w0;
  double c = 0.0;
  double residual = 0.0;   ///< |-Delta w + w - f(w)|_2
  double amplitude = 0.0;  ///< w0(0) from shooting
};

/// Positive radial ground state in dimension `dim`: shooting on w(0) and a
/// damped Newton polish on the discrete equation.
GroundState ground_state(int dim, const Nonlinearity& nl, const GroundStateOptions& opt = {});

struct ConstantsBudget {
  int profiles = 64;
  int scales = 128;
  std::uint64_t seed = 20240531;
  int min_members = 16;
};

struct PotentialConstants {
  double b = 0.0;
  double c = 0.0;
  double rho = 0.0;
  double delta0 = 0.0;
  double r0 = 0.0;
  double beta = 0.0;
  double lambda0 = 0.0;
  double nu_plus = 0.0;
  double nu_minus = 0.0;  ///< NaN for b = 0
  double beta_plus = 0.0;
  double beta_minus = 0.0;  ///< NaN for b = 0
  double C_plus = 0.0;
  double C_minus = 0.0;  ///< NaN for b = 0
  double theta = 0.0;
  double kappa = 0.0;
  double mu = 0.0;
  std::uint64_t seed = 0;
  int profiles = 0;
  int scales = 0;
  int plus_members = 0;
  int minus_members = 0;
};

/// Dictionary estimates of the per-b constants. `w0` is the ground state on
/// the working grid and `c` its level.
PotentialConstants estimate_constants(double b, const GroundState& gs, const Nonlinearity& nl,
                                      const ConstantsBudget& budget = {});

/// sqrt(c - b) delta0; 0 when delta0 is not positive.
double m_b_lower_bound(const PotentialConstants& k);

nlohmann::json to_json(const PotentialConstants& k);

}  // namespace brakeorbit
