#pragma once

#include <functional>
#include <limits>
#include <optional>
#include <vector>

#include "brakeorbit/nonlinearity.hpp"
#include "brakeorbit/potential.hpp"
#include "brakeorbit/radial_grid.hpp"
#include "brakeorbit/trajectory.hpp"

namespace brakeorbit {

/// ClampedMinus: the left end is a Minus-side slice on V = b (b > 0).
/// FreeDecay: the left end is pinned to 0 far away (b = 0).
enum class BoundaryMode { ClampedMinus, FreeDecay };

enum class Placement { Centered, RightAligned };

struct CheckpointInfo {
  int iteration = 0;
  double phi = 0.0;
  double grad_norm = 0.0;
  double dy = 0.0;
  double min_slack = 0.0;  ///< min_j V_j - b over the free slices
};

struct MinimizeConfig {
  double b = 0.0;
  BoundaryMode mode = BoundaryMode::ClampedMinus;
  RadialField seed;  ///< profile whose ray builds the initial path

  int max_iters = 4000;
  double tol_grad = 1e-5;
  double tol_constraint = 1e-9;  ///< relative to max(1, c)
  double armijo = 1e-4;
  double backtrack = 0.5;
  int max_backtracks = 40;
  bool conjugate = true;  ///< Polak-Ribiere+ directions on top of the preconditioner

  /// Target slice spacing. With b > 0 the half-period is tuned until both end
  /// slices are at rest, and the grid is resampled once the spacing drifts by
  /// more than `resample_factor`.
  double dy = 0.025;
  double resample_factor = 1.5;
  /// Relative change of the half-period below which the spacing is final.
  /// The end multiplier carries noise of order tol_grad, so this cannot be
  /// much tighter; the polish settles the spacing exactly.
  double tol_time = 1e-6;
  int max_outer = 60;

  /// Final Newton solve of the discrete equations with reflective rest slices.
  bool polish = true;
  double tol_residual = 1e-9;
  int max_newton = 30;

  /// FreeDecay only: distance from the pinned zero slice to the right end.
  double decay_length = 14.0;
  double decay_threshold = 1e-4;
  double window_growth = 2.0;

  int checkpoint_every = 0;
  std::function<void(const CheckpointInfo&, const Trajectory&)> on_checkpoint;
  std::optional<Trajectory> resume_from;
};

struct CoreSegment {
  Trajectory v;
  double sigma_bar = -std::numeric_limits<double>::infinity();
  double tau_bar = 0.0;
  double m_b = 0.0;
  int iterations = 0;
  bool converged = false;
  double grad_norm = 0.0;
  double residual = 0.0;  ///< discrete equation residual including the rest slices
  double min_slack = 0.0;
  int resamples = 0;
  int window_extensions = 0;
  /// (phi before, phi after) for every accepted line-search step.
  std::vector<std::pair<double, double>> descent;
};

struct SigmaTau {
  double sigma_bar = -std::numeric_limits<double>::infinity();
  double tau_bar = 0.0;
  int sigma_index = -1;  ///< -1 when sigma_bar is -infinity
  int tau_index = -1;
};

/// Clipped ray path through `u_seed` placed inside the grid's y window.
Trajectory initial_trajectory(const RadialField& u_seed, double b, const PotentialConstants& k,
                              const CylinderGrid& grid, const Nonlinearity& nl,
                              Placement placement = Placement::Centered);

struct TailSegment {
  Vec y;
  Matrix values;  ///< one row per y sample
  double s0 = 1.0;
  double cost = 0.0;
  double length = 0.0;
};

/// (1 + y^2/2) u0 up to the Plus crossing s0 u0.
TailSegment tail_plus(const RadialField& u0, double b, const Nonlinearity& nl, double dy = 0.01);
/// Descent to the Minus crossing (b > 0) or the linear homotopy to 0 (b = 0),
/// laid out on y <= 0.
TailSegment tail_minus(const RadialField& u0, double b, const Nonlinearity& nl, double dy = 0.01);

CoreSegment minimize(const MinimizeConfig& config, const PotentialConstants& k,
                     const Nonlinearity& nl);

/// Discrete turning ordinates. Numerically zero slices stand for the limit
/// state at -infinity and never qualify for sigma_bar.
SigmaTau detect_sigma_tau(const Trajectory& v, double b, const PotentialConstants& k,
                          const Nonlinearity& nl, double zero_tol = 1e-4);

/// dist(u, V_-^b) surrogate (1 - alpha)_+ |u|_2, or |u|_2 without a crossing.
double distance_to_minus(const RadialGrid& g, const Vec& u, double b, const Nonlinearity& nl);

}  // namespace brakeorbit
