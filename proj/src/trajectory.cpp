#include "brakeorbit/trajectory.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>

#include "brakeorbit/error.hpp"
#include "brakeorbit/potential.hpp"

namespace brakeorbit {

namespace {

// Sums t[0..n) pairing t[k] with t[n-1-k], so the result is unchanged when
// the array is reversed.
double symmetric_sum(const std::vector<double>& t) {
  const std::size_t n = t.size();
  double s = 0.0;
  for (std::size_t k = 0; k < n / 2; ++k) s += t[k] + t[n - 1 - k];
  if (n % 2 == 1) s += t[n / 2];
  return s;
}

}  // namespace

CylinderGrid::CylinderGrid(GridPtr r, double y0, double y1, int ny)
    : radial(std::move(r)), y_min(y0), y_max(y1), n_y(ny) {
  if (!radial) throw Error(ErrorKind::InvalidField, "cylinder grid without radial grid");
  if (n_y < 3) throw Error(ErrorKind::InvalidField, "cylinder grid needs at least 3 slices");
  if (!(y_max > y_min)) throw Error(ErrorKind::InvalidField, "empty y interval");
}

Trajectory::Trajectory(CylinderGrid g, Matrix v) : grid(std::move(g)), values(std::move(v)) {
  if (values.rows() != grid.n_y || values.cols() != grid.radial->size()) {
    throw Error(ErrorKind::GridMismatch, "trajectory matrix does not match its grid");
  }
}

Trajectory Trajectory::reversed() const {
  return Trajectory(grid, values.colwise().reverse());
}

Vec slice_potentials(const Trajectory& v, const Nonlinearity& nl) {
  Vec out(v.n_y());
  for (int j = 0; j < v.n_y(); ++j) out[j] = potential_value(*v.grid.radial, v.slice(j), nl);
  return out;
}

double phi(const Trajectory& v, double b, const Nonlinearity& nl, std::optional<Window> window,
           double tol_constraint) {
  const RadialGrid& g = *v.grid.radial;
  const double dy = v.grid.dy();
  int j0 = 0;
  int j1 = v.n_y() - 1;
  if (window) {
    const double eps = 1e-9 * dy;
    j0 = static_cast<int>(std::ceil((window->lo - v.grid.y_min) / dy - eps));
    j1 = static_cast<int>(std::floor((window->hi - v.grid.y_min) / dy + eps));
    j0 = std::max(j0, 0);
    j1 = std::min(j1, v.n_y() - 1);
    if (j1 <= j0) return 0.0;
  }
  std::vector<double> terms;
  terms.reserve(2 * (j1 - j0) + 1);
  for (int j = j0; j <= j1; ++j) {
    const double V = potential_value(g, v.slice(j), nl);
    if (!window && V < b - tol_constraint) {
      throw Error(ErrorKind::ConstraintViolated,
                  "slice " + std::to_string(j) + " has V below the level b");
    }
    const double tau = (j == j0 || j == j1) ? 0.5 : 1.0;
    terms.push_back(tau * (V - b) * dy);
    if (j < j1) {
      const Vec d = (v.values.row(j + 1) - v.values.row(j)).transpose();
      terms.push_back(0.5 * g.l2_sq(d) / dy);
    }
  }
  return symmetric_sum(terms);
}

EnergyProfile energy_profile(const Trajectory& v, const Nonlinearity& nl, bool periodic) {
  const RadialGrid& g = *v.grid.radial;
  const int n = v.n_y();
  const double dy = v.grid.dy();
  EnergyProfile e;
  e.y.resize(n);
  e.kinetic.resize(n);
  e.potential.resize(n);
  e.E.resize(n);
  for (int j = 0; j < n; ++j) {
    Vec d;
    if (periodic && (j == 0 || j == n - 1)) {
      d = (v.values.row(1) - v.values.row(n - 2)).transpose() / (2.0 * dy);
    } else if (j == 0) {
      d = (v.values.row(1) - v.values.row(0)).transpose() / dy;
    } else if (j == n - 1) {
      d = (v.values.row(n - 1) - v.values.row(n - 2)).transpose() / dy;
    } else {
      d = (v.values.row(j + 1) - v.values.row(j - 1)).transpose() / (2.0 * dy);
    }
    e.y[j] = v.grid.y(j);
    e.kinetic[j] = 0.5 * g.l2_sq(d);
    e.potential[j] = potential_value(g, v.slice(j), nl);
    e.E[j] = e.kinetic[j] - e.potential[j];
  }
  return e;
}

Residual pde_residual(const Trajectory& v, const Nonlinearity& nl, bool periodic) {
  const RadialGrid& g = *v.grid.radial;
  const int n = v.n_y();
  const double dy = v.grid.dy();
  Matrix R = Matrix::Zero(n, v.n_r());
  double acc = 0.0;
  Vec gv;
  for (int j = 0; j < n; ++j) {
    int jm = j - 1;
    int jp = j + 1;
    if (periodic) {
      if (j == 0) jm = n - 2;
      if (j == n - 1) jp = 1;
    } else if (j == 0 || j == n - 1) {
      continue;
    }
    const Vec vj = v.slice(j);
    potential_gradient(g, vj, nl, gv);
    const Vec d2 = (v.values.row(jp) + v.values.row(jm)).transpose() - 2.0 * vj;
    const Vec r = gv - d2 / (dy * dy);
    R.row(j) = r.transpose();
    double tau = 1.0;
    if (periodic) {
      if (j == n - 1) tau = 0.0;
    } else if (j == 1 || j == n - 2) {
      tau = 0.5;
    }
    acc += tau * dy * g.l2_sq(r);
  }
  Residual out{Trajectory(v.grid, std::move(R)), std::sqrt(acc)};
  return out;
}

double slice_continuity_check(const Trajectory& v) {
  const RadialGrid& g = *v.grid.radial;
  const int n = v.n_y();
  const double dy = v.grid.dy();
  const Vec sw = g.weights().cwiseSqrt();
  const Matrix X = v.values * sw.asDiagonal();
  // prefix sums of |v_{j+1} - v_j|^2 / dy
  std::vector<double> K(n, 0.0);
  for (int j = 1; j < n; ++j) K[j] = K[j - 1] + (X.row(j) - X.row(j - 1)).squaredNorm() / dy;
  double worst = -std::numeric_limits<double>::infinity();
  if (n < 2) return 0.0;
  for (int a = 0; a < n; ++a) {
    for (int b = a + 1; b < n; ++b) {
      const double lhs = (X.row(b) - X.row(a)).squaredNorm();
      const double rhs = (K[b] - K[a]) * (b - a) * dy;
      worst = std::max(worst, lhs - rhs);
    }
  }
  return worst;
}

void write_trajectory_csv(const std::filesystem::path& path, const Trajectory& v) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorKind::Io, "cannot write '" + path.string() + "'");
  const RadialGrid& g = *v.grid.radial;
  out << std::setprecision(17);
  out << "# N=" << g.dim() << " r_max=" << g.r_max() << " y_min=" << v.grid.y_min
      << " y_max=" << v.grid.y_max << "\n";
  out << "y\\r";
  for (int i = 0; i < g.size(); ++i) out << "," << g.nodes()[i];
  out << "\n";
  for (int j = 0; j < v.n_y(); ++j) {
    out << v.grid.y(j);
    for (int i = 0; i < g.size(); ++i) out << "," << v.values(j, i);
    out << "\n";
  }
}

Trajectory read_trajectory_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::Io, "cannot open '" + path.string() + "'");
  std::string line;
  int dim = 0;
  double r_max = 0.0, y_min = 0.0, y_max = 0.0;
  bool have_radii = false;
  int n_r = 0;
  std::vector<std::vector<double>> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (line[0] == '#') {
      std::istringstream ss(line.substr(1));
      std::string tok;
      while (ss >> tok) {
        const auto eq = tok.find('=');
        if (eq == std::string::npos) continue;
        const std::string key = tok.substr(0, eq);
        const std::string val = tok.substr(eq + 1);
        if (key == "N") dim = std::stoi(val);
        if (key == "r_max") r_max = std::stod(val);
        if (key == "y_min") y_min = std::stod(val);
        if (key == "y_max") y_max = std::stod(val);
      }
      continue;
    }
    std::vector<double> cells;
    std::stringstream ss(line);
    std::string cell;
    bool first = true;
    while (std::getline(ss, cell, ',')) {
      if (first) {
        first = false;
        continue;
      }
      cells.push_back(std::stod(cell));
    }
    if (!have_radii) {
      n_r = static_cast<int>(cells.size());
      have_radii = true;
      continue;
    }
    if (static_cast<int>(cells.size()) != n_r) {
      throw Error(ErrorKind::Io, "ragged trajectory row in '" + path.string() + "'");
    }
    rows.push_back(std::move(cells));
  }
  if (dim < 1 || !(r_max > 0.0) || rows.size() < 3) {
    throw Error(ErrorKind::Io, "incomplete trajectory file '" + path.string() + "'");
  }
  Matrix m(static_cast<Eigen::Index>(rows.size()), n_r);
  for (std::size_t j = 0; j < rows.size(); ++j) {
    for (int i = 0; i < n_r; ++i) m(static_cast<Eigen::Index>(j), i) = rows[j][i];
  }
  CylinderGrid cg(make_grid(dim, r_max, n_r), y_min, y_max, static_cast<int>(rows.size()));
  return Trajectory(std::move(cg), std::move(m));
}

void write_energy_csv(const std::filesystem::path& path, const EnergyProfile& e) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorKind::Io, "cannot write '" + path.string() + "'");
  out << std::setprecision(17) << "y,kinetic,potential,E\n";
  for (Eigen::Index j = 0; j < e.y.size(); ++j) {
    out << e.y[j] << "," << e.kinetic[j] << "," << e.potential[j] << "," << e.E[j] << "\n";
  }
}

}  // namespace brakeorbit
