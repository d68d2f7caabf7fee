#pragma once

#include <filesystem>
#include <optional>
#include <vector>

#include <Eigen/Core>

#include "brakeorbit/nonlinearity.hpp"
#include "brakeorbit/radial_grid.hpp"

namespace brakeorbit {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct CylinderGrid {
  GridPtr radial;
  double y_min = 0.0;
  double y_max = 1.0;
  int n_y = 3;

  CylinderGrid() = default;
  CylinderGrid(GridPtr r, double y0, double y1, int ny);

  double dy() const noexcept { return (y_max - y_min) / (n_y - 1); }
  double y(int j) const noexcept { return y_min + j * dy(); }
};

/// v(r_i, y_j) stored as one row per slice.
struct Trajectory {
  CylinderGrid grid;
  Matrix values;

  Trajectory() = default;
  Trajectory(CylinderGrid g, Matrix v);

  int n_y() const noexcept { return grid.n_y; }
  int n_r() const noexcept { return grid.radial->size(); }
  Vec slice(int j) const { return values.row(j).transpose(); }
  /// Same values listed in reverse y order.
  Trajectory reversed() const;
};

struct Window {
  double lo;
  double hi;
};

/// Renormalized action. The kinetic part uses forward differences on each
/// grid edge, the potential part the trapezoid rule over the slices. Without
/// a window the trajectory stands for all of R and every slice must satisfy
/// V >= b - tol_constraint (ConstraintViolated otherwise).
double phi(const Trajectory& v, double b, const Nonlinearity& nl,
           std::optional<Window> window = std::nullopt, double tol_constraint = 1e-9);

/// Per-slice values of V.
Vec slice_potentials(const Trajectory& v, const Nonlinearity& nl);

struct EnergyProfile {
  Vec y;
  Vec kinetic;
  Vec potential;
  Vec E;
};

/// Centered differences inside, one-sided at the ends; `periodic` wraps the
/// centered stencil around a closed orbit whose last slice repeats the first.
EnergyProfile energy_profile(const Trajectory& v, const Nonlinearity& nl, bool periodic = false);

struct Residual {
  Trajectory field;
  double l2 = 0.0;
};

/// R = -(d_y^2 v + Delta_r v) + v - f(v). The norm runs over interior slices
/// with trapezoid y-weights; in periodic mode every slice of the closed orbit
/// is included once.
Residual pde_residual(const Trajectory& v, const Nonlinearity& nl, bool periodic = false);

/// max over slice pairs of |v_2 - v_1|_2^2 - |d_y v|^2_{L2(y_1,y_2)} |y_2 - y_1|.
double slice_continuity_check(const Trajectory& v);

void write_trajectory_csv(const std::filesystem::path& path, const Trajectory& v);
Trajectory read_trajectory_csv(const std::filesystem::path& path);
void write_energy_csv(const std::filesystem::path& path, const EnergyProfile& e);

}  // namespace brakeorbit
