#include "brakeorbit/radial_grid.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numbers>
#include <numeric>
#include <sstream>
#include <vector>

#include "brakeorbit/error.hpp"

namespace brakeorbit {

namespace {

double unit_sphere_area(int dim) {
  // |S^{N-1}| = 2 pi^{N/2} / Gamma(N/2)
  return 2.0 * std::pow(std::numbers::pi, 0.5 * dim) / std::tgamma(0.5 * dim);
}

}  // namespace

RadialGrid::RadialGrid(int dim, double r_max, int n_r)
    : dim_(dim), r_max_(r_max), n_(n_r) {
  if (dim < 1) throw Error(ErrorKind::InvalidField, "grid dimension must be >= 1");
  if (!(r_max > 0.0) || !std::isfinite(r_max)) {
    throw Error(ErrorKind::InvalidField, "grid radius must be positive");
  }
  if (n_r < 3) throw Error(ErrorKind::InvalidField, "grid needs at least 3 nodes");
  h_ = r_max / n_r;
  sphere_ = unit_sphere_area(dim);
  r_.resize(n_);
  w_.resize(n_);
  for (int i = 0; i < n_; ++i) {
    r_[i] = (i + 0.5) * h_;
    const double lo = i * h_;
    const double hi = (i + 1) * h_;
    w_[i] = sphere_ / dim * (std::pow(hi, dim) - std::pow(lo, dim));
  }
  auto area = [&](int j) { return sphere_ * std::pow(j * h_, dim - 1); };
  sd_ = Vec::Zero(n_);
  so_ = Vec::Zero(n_ - 1);
  for (int j = 1; j < n_; ++j) {
    const double a = area(j) / h_;
    sd_[j - 1] += a;
    sd_[j] += a;
    so_[j - 1] = -a;
  }
  sd_[n_ - 1] += 2.0 * area(n_) / h_;
}

double RadialGrid::grad_sq(const Vec& u) const {
  double s = 0.0;
  for (int j = 1; j < n_; ++j) {
    const double d = u[j] - u[j - 1];
    s -= so_[j - 1] * d * d;
  }
  const double boundary = sd_[n_ - 1] + so_[n_ - 2];
  return s + boundary * u[n_ - 1] * u[n_ - 1];
}

void RadialGrid::stiffness_apply(const Vec& u, Vec& out) const {
  out.resize(n_);
  out[0] = sd_[0] * u[0] + so_[0] * u[1];
  for (int i = 1; i + 1 < n_; ++i) {
    out[i] = so_[i - 1] * u[i - 1] + sd_[i] * u[i] + so_[i] * u[i + 1];
  }
  out[n_ - 1] = so_[n_ - 2] * u[n_ - 2] + sd_[n_ - 1] * u[n_ - 1];
}

Vec RadialGrid::laplacian(const Vec& u) const {
  Vec s;
  stiffness_apply(u, s);
  return -s.cwiseQuotient(w_);
}

RadialField::RadialField(GridPtr g, Vec v) : grid(std::move(g)), values(std::move(v)) {
  if (!grid) throw Error(ErrorKind::InvalidField, "field without grid");
  if (values.size() != grid->size()) {
    throw Error(ErrorKind::GridMismatch, "field length does not match grid size");
  }
}

bool RadialField::is_monotone() const noexcept {
  for (int i = 0; i + 1 < size(); ++i) {
    if (values[i] < values[i + 1]) return false;
  }
  return true;
}

void check_finite(const RadialField& u) {
  if (!u.grid) throw Error(ErrorKind::InvalidField, "field without grid");
  if (!u.values.allFinite()) throw Error(ErrorKind::InvalidField, "field has non-finite values");
}

void check_same_grid(const RadialField& u, const RadialField& w) {
  if (!u.grid || !w.grid || !u.grid->same_as(*w.grid)) {
    throw Error(ErrorKind::GridMismatch, "fields live on different grids");
  }
}

Norms norms(const RadialField& u) {
  check_finite(u);
  Norms n;
  n.l2_sq = u.grid->l2_sq(u.values);
  n.grad_sq = u.grid->grad_sq(u.values);
  n.h1_sq = n.l2_sq + n.grad_sq;
  return n;
}

double lq(const RadialField& u, double q) {
  check_finite(u);
  return u.grid->weights().dot(u.values.cwiseAbs().array().pow(q).matrix());
}

RadialField radial_laplacian(const RadialField& u) {
  check_finite(u);
  return RadialField(u.grid, u.grid->laplacian(u.values));
}

Vec rearrange(const RadialGrid& grid, const Vec& u) {
  const int n = grid.size();
  Vec a = u.cwiseAbs();
  std::vector<int> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  std::stable_sort(perm.begin(), perm.end(), [&](int i, int j) { return a[i] > a[j]; });
  bool identity = true;
  for (int i = 0; i < n; ++i) {
    if (perm[i] != i) {
      identity = false;
      break;
    }
  }
  if (identity) return a;

  Vec out(n);
  if (grid.dim() == 1) {
    for (int i = 0; i < n; ++i) out[i] = a[perm[i]];
    return out;
  }
  // Lay the sorted values out in volume order and average u^2 over each cell.
  const Vec& w = grid.weights();
  int k = 0;
  double used = 0.0;  // volume of sorted piece k already consumed
  for (int i = 0; i < n; ++i) {
    double need = w[i];
    double acc = 0.0;
    while (need > 0.0 && k < n) {
      const double avail = w[perm[k]] - used;
      const double take = std::min(avail, need);
      const double val = a[perm[k]];
      acc += take * val * val;
      need -= take;
      used += take;
      if (used >= w[perm[k]] * (1.0 - 1e-15)) {
        ++k;
        used = 0.0;
      }
    }
    out[i] = std::sqrt(acc / w[i]);
  }
  for (int i = 1; i < n; ++i) out[i] = std::min(out[i], out[i - 1]);
  return out;
}

RadialField rearrange(const RadialField& u) {
  check_finite(u);
  return RadialField(u.grid, rearrange(*u.grid, u.values));
}

double l2_distance(const RadialField& u, const RadialField& w) {
  check_same_grid(u, w);
  return std::sqrt(u.grid->l2_sq(u.values - w.values));
}

void write_field_csv(const std::filesystem::path& path, const RadialField& u) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorKind::Io, "cannot write '" + path.string() + "'");
  out << "# N=" << u.grid->dim() << " r_max=" << std::setprecision(17) << u.grid->r_max()
      << "\n";
  for (int i = 0; i < u.size(); ++i) {
    out << u.grid->nodes()[i] << "," << u.values[i] << "\n";
  }
}

RadialField read_field_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::Io, "cannot open '" + path.string() + "'");
  std::string line;
  int dim = 0;
  double r_max = 0.0;
  std::vector<double> vals;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (line[0] == '#') {
      std::istringstream ss(line.substr(1));
      std::string tok;
      while (ss >> tok) {
        if (tok.rfind("N=", 0) == 0) dim = std::stoi(tok.substr(2));
        if (tok.rfind("r_max=", 0) == 0) r_max = std::stod(tok.substr(6));
      }
      continue;
    }
    const auto comma = line.find(',');
    if (comma == std::string::npos) throw Error(ErrorKind::Io, "malformed field row: " + line);
    vals.push_back(std::stod(line.substr(comma + 1)));
  }
  if (dim < 1 || !(r_max > 0.0)) {
    throw Error(ErrorKind::Io, "field file lacks '# N=<dim> r_max=<val>' header");
  }
  auto grid = make_grid(dim, r_max, static_cast<int>(vals.size()));
  return RadialField(grid, Eigen::Map<const Vec>(vals.data(), static_cast<Eigen::Index>(vals.size())));
}

}  // namespace brakeorbit
