#pragma once

#include <filesystem>
#include <memory>
#include <string>

#include <Eigen/Core>

namespace brakeorbit {

using Vec = Eigen::VectorXd;

/// Cell-centered finite-volume grid for radial functions on R^N.
///
/// Nodes sit at r_i = (i + 1/2) h with h = r_max / n_r. The weight w_i is the
/// exact volume of the shell [ih, (i+1)h] in R^N, so for N = 1 the weights
/// already cover the full line. The Dirichlet form is
///
///   D(u) = sum_j A_j (u_j - u_{j-1})^2 / h + 2 A_n u_{n-1}^2 / h
///
/// with face areas A_j = |S^{N-1}| (jh)^{N-1}; the last term comes from the
/// ghost value -u_{n-1} beyond r_max. Writing D(u) = u^T S u, the discrete
/// Laplacian is -W^{-1} S, which makes it W-self-adjoint and nonpositive.
class RadialGrid {
 public:
  RadialGrid(int dim, double r_max, int n_r);

  int dim() const noexcept { return dim_; }
  double r_max() const noexcept { return r_max_; }
  int size() const noexcept { return n_; }
  double h() const noexcept { return h_; }
  const Vec& nodes() const noexcept { return r_; }
  const Vec& weights() const noexcept { return w_; }
  double sphere_area() const noexcept { return sphere_; }

  /// Tridiagonal stiffness S: diag(i) and off(i) coupling i and i+1.
  const Vec& stiff_diag() const noexcept { return sd_; }
  const Vec& stiff_off() const noexcept { return so_; }

  double integrate(const Vec& g) const { return w_.dot(g); }
  double l2_sq(const Vec& u) const { return w_.dot(u.cwiseAbs2()); }
  double dot(const Vec& u, const Vec& v) const { return w_.dot(u.cwiseProduct(v)); }
  double grad_sq(const Vec& u) const;
  /// S u.
  void stiffness_apply(const Vec& u, Vec& out) const;
  /// Delta u = -W^{-1} S u.
  Vec laplacian(const Vec& u) const;

  bool same_as(const RadialGrid& o) const noexcept {
    return dim_ == o.dim_ && n_ == o.n_ && r_max_ == o.r_max_;
  }

 private:
  int dim_;
  double r_max_;
  int n_;
  double h_;
  double sphere_;
  Vec r_, w_, sd_, so_;
};

using GridPtr = std::shared_ptr<const RadialGrid>;

inline GridPtr make_grid(int dim, double r_max = 20.0, int n_r = 2000) {
  return std::make_shared<const RadialGrid>(dim, r_max, n_r);
}

/// Radial profile sampled on a grid.
struct RadialField {
  GridPtr grid;
  Vec values;

  RadialField() = default;
  RadialField(GridPtr g, Vec v);
  /// Samples `fn(r)` at the grid nodes.
  template <class Fn>
  static RadialField sample(GridPtr g, Fn&& fn) {
    Vec v(g->size());
    for (int i = 0; i < g->size(); ++i) v[i] = fn(g->nodes()[i]);
    return RadialField(std::move(g), std::move(v));
  }

  int size() const noexcept { return static_cast<int>(values.size()); }
  bool is_monotone() const noexcept;
};

struct Norms {
  double l2_sq = 0.0;
  double grad_sq = 0.0;
  double h1_sq = 0.0;
};

/// Throws Error{InvalidField} if any value is not finite.
void check_finite(const RadialField& u);
/// Throws Error{GridMismatch} unless both fields live on the same grid.
void check_same_grid(const RadialField& u, const RadialField& w);

Norms norms(const RadialField& u);
/// sum_i w_i |u_i|^q.
double lq(const RadialField& u, double q);
RadialField radial_laplacian(const RadialField& u);
RadialField rearrange(const RadialField& u);
Vec rearrange(const RadialGrid& grid, const Vec& u);
double l2_distance(const RadialField& u, const RadialField& w);

void write_field_csv(const std::filesystem::path& path, const RadialField& u);
RadialField read_field_csv(const std::filesystem::path& path);

}  // namespace brakeorbit
