#include "brakeorbit/minimizer.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <functional>
#include <numbers>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/IterativeLinearSolvers>
#include <unsupported/Eigen/FFT>
#include <unsupported/Eigen/IterativeSolvers>

#include "brakeorbit/error.hpp"

// Matrix-free symmetric operator and preconditioner for Eigen's MINRES.
namespace brakeorbit::detail {
class LinearOperator;
}  // namespace brakeorbit::detail

template <>
struct Eigen::internal::traits<brakeorbit::detail::LinearOperator>
    : public Eigen::internal::traits<Eigen::SparseMatrix<double>> {};

namespace brakeorbit::detail {

using Apply = std::function<void(const Eigen::VectorXd&, Eigen::VectorXd&)>;

class LinearOperator : public Eigen::EigenBase<LinearOperator> {
 public:
  using Scalar = double;
  using RealScalar = double;
  using StorageIndex = int;
  enum {
    ColsAtCompileTime = Eigen::Dynamic,
    MaxColsAtCompileTime = Eigen::Dynamic,
    IsRowMajor = false
  };

  LinearOperator(Eigen::Index n, Apply apply) : n_(n), apply_(std::move(apply)) {}
  Eigen::Index rows() const { return n_; }
  Eigen::Index cols() const { return n_; }
  void apply(const Eigen::VectorXd& x, Eigen::VectorXd& y) const { apply_(x, y); }

  template <typename Rhs>
  Eigen::Product<LinearOperator, Rhs, Eigen::AliasFreeProduct> operator*(
      const Eigen::MatrixBase<Rhs>& x) const {
    return Eigen::Product<LinearOperator, Rhs, Eigen::AliasFreeProduct>(*this, x.derived());
  }

 private:
  Eigen::Index n_;
  Apply apply_;
};

class Preconditioner {
 public:
  using StorageIndex = int;
  enum { ColsAtCompileTime = Eigen::Dynamic, MaxColsAtCompileTime = Eigen::Dynamic };

  Preconditioner() = default;
  template <typename M>
  explicit Preconditioner(const M&) {}
  template <typename M>
  Preconditioner& analyzePattern(const M&) { return *this; }
  template <typename M>
  Preconditioner& factorize(const M&) { return *this; }
  template <typename M>
  Preconditioner& compute(const M&) { return *this; }
  void set(Apply a) { apply_ = std::move(a); }
  template <typename Rhs>
  Eigen::VectorXd solve(const Rhs& b) const {
    Eigen::VectorXd out;
    apply_(Eigen::VectorXd(b), out);
    return out;
  }
  Eigen::ComputationInfo info() const { return Eigen::Success; }

 private:
  Apply apply_;
};

}  // namespace brakeorbit::detail

namespace Eigen::internal {

template <typename Rhs>
struct generic_product_impl<brakeorbit::detail::LinearOperator, Rhs, SparseShape, DenseShape,
                            GemvProduct>
    : generic_product_impl_base<
          brakeorbit::detail::LinearOperator, Rhs,
          generic_product_impl<brakeorbit::detail::LinearOperator, Rhs>> {
  template <typename Dest>
  static void scaleAndAddTo(Dest& dst, const brakeorbit::detail::LinearOperator& lhs,
                            const Rhs& rhs, const double& alpha) {
    Eigen::VectorXd y;
    lhs.apply(Eigen::VectorXd(rhs), y);
    dst += alpha * y;
  }
};

}  // namespace Eigen::internal

namespace brakeorbit {

namespace {

// Solves the SPD tridiagonal system (diag, off) x = rhs in place.
void thomas(const Vec& diag, const Vec& off, Eigen::Ref<Vec> x, Vec& scratch) {
  const Eigen::Index n = diag.size();
  scratch.resize(n);
  double beta = diag[0];
  x[0] /= beta;
  for (Eigen::Index i = 1; i < n; ++i) {
    scratch[i] = off[i - 1] / beta;
    beta = diag[i] - off[i - 1] * scratch[i];
    x[i] = (x[i] - off[i - 1] * x[i - 1]) / beta;
  }
  for (Eigen::Index i = n - 2; i >= 0; --i) x[i] -= scratch[i + 1] * x[i + 1];
}

// Above this many free slices the y-modes are applied by FFT.
constexpr int kDenseModes = 192;

bool is_smooth(int n) {
  if (n < 1) return false;
  for (int p : {2, 3, 5}) {
    while (n % p == 0) n /= p;
  }
  return n == 1;
}

// Smallest slice count >= n whose edge count n - 1 has no prime factor above 5.
int smooth_count(int n) {
  int e = std::max(1, n - 1);
  while (!is_smooth(e)) ++e;
  return e + 1;
}

Matrix sample_path(const Vec& u, const Vec& scales) {
  Matrix m(scales.size(), u.size());
  for (Eigen::Index j = 0; j < scales.size(); ++j) m.row(j) = scales[j] * u.transpose();
  return m;
}

double segment_cost(const RadialGrid& g, const Matrix& m, double dy, double b,
                    const Nonlinearity& nl) {
  const Eigen::Index n = m.rows();
  double s = 0.0;
  for (Eigen::Index j = 0; j < n; ++j) {
    const double tau = (j == 0 || j == n - 1) ? 0.5 : 1.0;
    s += tau * dy * (potential_value(g, m.row(j).transpose(), nl) - b);
    if (j + 1 < n) s += 0.5 * g.l2_sq((m.row(j + 1) - m.row(j)).transpose()) / dy;
  }
  return s;
}

// Cubic spline through the rows of m with zero y-slope at both ends (the
// rest condition of a brake orbit), evaluated on n_new equispaced rows.
Matrix spline_resample(const Matrix& m, int n_new) {
  const Eigen::Index n = m.rows();
  Matrix M(n, m.cols());
  // clamped spline moments at unit spacing
  M.row(0) = 6.0 * (m.row(1) - m.row(0));
  for (Eigen::Index j = 1; j + 1 < n; ++j) M.row(j) = 6.0 * (m.row(j + 1) - 2.0 * m.row(j) + m.row(j - 1));
  M.row(n - 1) = -6.0 * (m.row(n - 1) - m.row(n - 2));
  std::vector<double> c(n);
  double beta = 2.0;
  M.row(0) /= beta;
  for (Eigen::Index j = 1; j < n; ++j) {
    c[j] = 1.0 / beta;
    beta = (j + 1 < n ? 4.0 : 2.0) - c[j];
    M.row(j) = (M.row(j) - M.row(j - 1)) / beta;
  }
  for (Eigen::Index j = n - 2; j >= 0; --j) M.row(j) -= c[j + 1] * M.row(j + 1);
  Matrix out(n_new, m.cols());
  for (int j = 0; j < n_new; ++j) {
    const double pos = static_cast<double>(j) * (n - 1) / (n_new - 1);
    const Eigen::Index a = std::min<Eigen::Index>(static_cast<Eigen::Index>(pos), n - 2);
    const double t = pos - a;
    const double s = 1.0 - t;
    out.row(j) = s * m.row(a) + t * m.row(a + 1) + ((s * s * s - s) / 6.0) * M.row(a) +
                 ((t * t * t - t) / 6.0) * M.row(a + 1);
  }
  out.row(0) = m.row(0);
  out.row(n_new - 1) = m.row(n - 1);
  return out;
}

class Solver {
 public:
  Solver(const MinimizeConfig& cfg, const PotentialConstants& k, const Nonlinearity& nl)
      : cfg_(cfg), k_(k), nl_(nl) {
    if (!cfg.seed.grid) throw Error(ErrorKind::InvalidField, "minimizer needs a seed profile");
    grid_ = cfg.seed.grid;
    tol_ = cfg.tol_constraint * std::max(1.0, k.c);
    free_decay_ = cfg.mode == BoundaryMode::FreeDecay;
  }

  CoreSegment run();

 private:
  const RadialGrid& g() const { return *grid_; }
  int first_free() const { return free_decay_ ? 1 : 0; }

  void initialize();
  void setup_modes();
  double evaluate(const Matrix& v, double dy, Vec* V) const;
  double gradient(const Matrix& v, const Vec& V, Matrix& G, bool kkt = true) const;
  Matrix hessian_apply(const Matrix& df, const Matrix& h) const;
  bool polish(int pinned, double& residual);
  Matrix precondition(const Matrix& G) const;
  Matrix modal(const Matrix& x, bool transpose) const;
  bool project(Matrix& v) const;
  void tangent_rows(const Matrix& v, const Vec& V, Matrix& D) const;
  Matrix constrained(const Matrix& Z, const Vec& V) const;
  bool scale_to_crossing(Vec& u, bool minus_side) const;
  void rescale_time();
  void resample(int n_new);
  void extend_window();
  double min_slack(const Vec& V) const;
  double end_multiplier() const;

  const MinimizeConfig& cfg_;
  const PotentialConstants& k_;
  const Nonlinearity& nl_;
  GridPtr grid_;
  double tol_ = 0.0;
  bool free_decay_ = false;

  Matrix v_;
  double dy_ = 0.0;
  double y0_ = 0.0;
  mutable Eigen::FFT<double> fft_;
  int N_ = 0;  // number of y edges
  bool use_fft_ = false;
  Eigen::MatrixXd Q_;  // q_k(j) for small grids
  Vec lam_;
  Vec inv_norm_;
  int resamples_ = 0;
  int outer_steps_ = 0;
  bool outer_hist_ = false;
  double T_prev_ = 0.0;
  double lam_prev_ = 0.0;
  int extensions_ = 0;
};

void Solver::initialize() {
  if (cfg_.resume_from) {
    const Trajectory& t = *cfg_.resume_from;
    if (!t.grid.radial->same_as(g())) {
      throw Error(ErrorKind::GridMismatch, "resume trajectory uses a different radial grid");
    }
    v_ = t.values;
    dy_ = t.grid.dy();
    y0_ = t.grid.y_min;
    if (!project(v_)) {
      throw Error(ErrorKind::ConstraintProjectionFailed, "resume trajectory is not admissible");
    }
    if (!free_decay_) {
      const double target = cfg_.dy;
      const double ratio = dy_ / target;
      if (ratio > cfg_.resample_factor || ratio < 1.0 / cfg_.resample_factor) {
        resample(static_cast<int>(std::lround((v_.rows() - 1) * dy_ / target)) + 1);
      }
    }
    return;
  }
  const Vec& u = cfg_.seed.values;
  const RayReport ray = ray_scan(g(), u, cfg_.b, nl_);
  if (free_decay_) {
    const double len = cfg_.decay_length;
    const int n = smooth_count(std::max(5, static_cast<int>(std::ceil(len / cfg_.dy)) + 1));
    dy_ = len / (n - 1);
    y0_ = ray.omega - len;
    Vec scales(n);
    for (int j = 0; j < n; ++j) scales[j] = std::clamp(y0_ + j * dy_, 0.0, ray.omega);
    v_ = sample_path(u, scales);
    v_.row(0).setZero();
  } else {
    const double len = ray.omega - ray.alpha;
    const int n = smooth_count(std::max(5, static_cast<int>(std::ceil(len / cfg_.dy)) + 1));
    dy_ = len / (n - 1);
    y0_ = ray.alpha;
    Vec scales(n);
    for (int j = 0; j < n; ++j) scales[j] = ray.alpha + j * dy_;
    scales[n - 1] = ray.omega;
    v_ = sample_path(u, scales);
  }
  if (!project(v_)) {
    throw Error(ErrorKind::ConstraintProjectionFailed, "initial path is not admissible");
  }
}

// Generalized eigenmodes of the y-stiffness K against the trapezoid mass T
// at unit spacing. Free ends give cosines cos(pi j k / N); a pinned first
// slice gives sin((k + 1/2) pi j / N). Large grids apply them through a
// length-2N FFT.
void Solver::setup_modes() {
  const int n = static_cast<int>(v_.rows());
  N_ = n - 1;
  const int m = n - first_free();
  lam_.resize(m);
  inv_norm_.resize(m);
  for (int k = 0; k < m; ++k) {
    const double theta = free_decay_ ? (k + 0.5) * std::numbers::pi / N_ : k * std::numbers::pi / N_;
    lam_[k] = 2.0 - 2.0 * std::cos(theta);
    const bool full = !free_decay_ && (k == 0 || k == N_);
    inv_norm_[k] = 1.0 / std::sqrt(full ? N_ : 0.5 * N_);
  }
  use_fft_ = m > kDenseModes && is_smooth(N_);
  if (use_fft_) {
    Q_.resize(0, 0);
    return;
  }
  Q_.resize(m, m);
  for (int i = 0; i < m; ++i) {
    const int j = i + first_free();
    for (int k = 0; k < m; ++k) {
      Q_(i, k) = free_decay_ ? std::sin((k + 0.5) * std::numbers::pi * j / N_)
                             : std::cos(std::numbers::pi * j * k / N_);
    }
  }
}

// out_k = sum_j q_k(j) x_j over the free slices (transpose == false) or
// out_j = sum_k q_k(j) x_k (transpose == true), column by column.
Matrix Solver::modal(const Matrix& x, bool transpose) const {
  if (!use_fft_) return transpose ? Matrix(Q_ * x) : Matrix(Q_.transpose() * x);
  const int f0 = first_free();
  const int m = static_cast<int>(x.rows());
  const int L = 2 * N_;
  std::vector<std::complex<double>> buf(L), spec(L);
  Matrix out(m, x.cols());
  for (Eigen::Index c = 0; c < x.cols(); ++c) {
    std::fill(buf.begin(), buf.end(), std::complex<double>(0.0, 0.0));
    for (int i = 0; i < m; ++i) {
      // index i is the slice j = i + f0 (forward) or the mode k = i (transpose)
      const int idx = transpose ? i : i + f0;
      double val = x(i, c);
      std::complex<double> a(val, 0.0);
      if (free_decay_ && !transpose) a *= std::polar(1.0, -std::numbers::pi * idx / L);
      buf[idx] = a;
    }
    fft_.fwd(spec, buf);
    for (int i = 0; i < m; ++i) {
      const int idx = transpose ? i + f0 : i;  // output slice j or mode k
      double val;
      if (!free_decay_) {
        val = spec[idx].real();
      } else if (!transpose) {
        val = -spec[idx].imag();
      } else {
        val = (std::polar(1.0, std::numbers::pi * idx / L) * std::conj(spec[idx])).imag();
      }
      out(i, c) = val;
    }
  }
  return out;
}

double Solver::evaluate(const Matrix& v, double dy, Vec* V) const {
  const int n = static_cast<int>(v.rows());
  double kin = 0.0;
  double pot = 0.0;
  if (V) V->resize(n);
  for (int j = 0; j < n; ++j) {
    const double Vj = potential_value(g(), v.row(j).transpose(), nl_);
    if (V) (*V)[j] = Vj;
    const double tau = (j == 0 || j == n - 1) ? 0.5 : 1.0;
    pot += tau * (Vj - cfg_.b);
    if (j + 1 < n) kin += 0.5 * g().l2_sq((v.row(j + 1) - v.row(j)).transpose());
  }
  return kin / dy + pot * dy;
}

// Raw gradient of phi. Returns the cylinder L2 norm of the strong-form
// representative; with `kkt` the normal part is removed on the end slices and
// on active slices that would be pushed below b.
double Solver::gradient(const Matrix& v, const Vec& V, Matrix& G, bool kkt) const {
  const int n = static_cast<int>(v.rows());
  const Vec& w = g().weights();
  G.setZero(n, v.cols());
  double acc = 0.0;
  Vec gv;
  for (int j = first_free(); j < n; ++j) {
    const Vec vj = v.row(j).transpose();
    potential_gradient(g(), vj, nl_, gv);
    const bool end = (j == 0 || j == n - 1);
    const double tau = end ? 0.5 : 1.0;
    Vec lap = 2.0 * vj;
    if (j > 0) {
      lap -= v.row(j - 1).transpose();
    } else {
      lap -= v.row(1).transpose();
    }
    if (j < n - 1) {
      lap -= v.row(j + 1).transpose();
    } else {
      lap -= v.row(j - 1).transpose();
    }
    // strong form: (2v_j - v_{j-1} - v_{j+1})/dy^2 + gradV(v_j), endpoints mirrored
    Vec s = lap / (dy_ * dy_) + gv;
    const double nn = g().l2_sq(gv);
    if (kkt && nn > 0.0) {
      const double proj = g().dot(s, gv);
      if (end || (V[j] - cfg_.b <= tol_ && proj > 0.0)) s -= (proj / nn) * gv;
    }
    acc += tau * dy_ * g().l2_sq(s);
    G.row(j) = (tau * dy_) * s.cwiseProduct(w).transpose();
  }
  return std::sqrt(acc);
}

Matrix Solver::precondition(const Matrix& G) const {
  const int n = static_cast<int>(G.rows());
  const int f0 = first_free();
  const int m = n - f0;
  Matrix H = modal(G.bottomRows(m), false);
  const Vec& w = g().weights();
  const Vec base = w + g().stiff_diag();
  Vec scratch;
  for (int k = 0; k < m; ++k) {
    const double lk = lam_[k] / (dy_ * dy_);
    const Vec diag = base + lk * w;
    Vec x = H.row(k).transpose() * (inv_norm_[k] * inv_norm_[k] / dy_);
    thomas(diag, g().stiff_off(), x, scratch);
    H.row(k) = x.transpose();
  }
  Matrix Z = Matrix::Zero(n, G.cols());
  Z.bottomRows(m) = modal(H, true);
  return Z;
}

// M-orthogonal projection of the preconditioned gradient Z onto the
// directions that keep the end rows on {V = b} and do not push active
// interior rows below b.
Matrix Solver::constrained(const Matrix& Z, const Vec& V) const {
  const int n = static_cast<int>(v_.rows());
  const Vec& w = g().weights();
  std::vector<int> rows;
  std::vector<Vec> normals(n);
  auto normal = [&](int j) -> const Vec& {
    if (normals[j].size() == 0) {
      Vec gv;
      potential_gradient(g(), v_.row(j).transpose(), nl_, gv);
      normals[j] = gv.cwiseProduct(w);
    }
    return normals[j];
  };
  if (!free_decay_) rows.push_back(0);
  rows.push_back(n - 1);
  std::vector<Matrix> Y;
  Matrix out = Z;
  for (int round = 0; round < 8; ++round) {
    while (Y.size() < rows.size()) {
      Matrix C = Matrix::Zero(n, Z.cols());
      C.row(rows[Y.size()]) = normal(rows[Y.size()]).transpose();
      Y.push_back(precondition(C));
    }
    const int m = static_cast<int>(rows.size());
    Eigen::MatrixXd H(m, m);
    Vec rhs(m);
    for (int a = 0; a < m; ++a) {
      const Vec& c = normal(rows[a]);
      rhs[a] = c.dot(Z.row(rows[a]).transpose());
      for (int b = 0; b < m; ++b) H(a, b) = c.dot(Y[b].row(rows[a]).transpose());
    }
    const Vec lam = H.ldlt().solve(rhs);
    out = Z;
    for (int b = 0; b < m; ++b) out -= lam[b] * Y[b];
    bool added = false;
    for (int j = first_free() + 1; j < n - 1; ++j) {
      if (V[j] - cfg_.b > tol_) continue;
      if (std::find(rows.begin(), rows.end(), j) != rows.end()) continue;
      // near 0 the bound V >= 0 holds on its own
      if (cfg_.b <= 0.0 && normal(j).dot(v_.row(j).transpose()) >= 0.0) continue;
      // the step is -out; it must not decrease V on an active row
      if (normal(j).dot(out.row(j).transpose()) > 0.0) {
        rows.push_back(j);
        added = true;
      }
    }
    if (!added) break;
  }
  return out;
}

// Removes the component of a row that would leave {V >= b} through an
// active constraint, measured along the ray so that the crossing rescale only
// acts at second order. Endpoint rows always stay on {V = b}.
void Solver::tangent_rows(const Matrix& v, const Vec& V, Matrix& D) const {
  const int n = static_cast<int>(v.rows());
  Vec gv;
  for (int j = first_free(); j < n; ++j) {
    const bool end = (j == 0 || j == n - 1);
    if (!end && V[j] - cfg_.b > tol_) continue;
    const Vec vj = v.row(j).transpose();
    potential_gradient(g(), vj, nl_, gv);
    const double dv = g().dot(gv, D.row(j).transpose());
    if (!end && dv >= 0.0) continue;
    const double den = g().dot(gv, vj);
    if (den == 0.0) continue;
    D.row(j) -= (dv / den) * vj.transpose();
  }
}

// Hessian of phi applied to h; `df` holds f'(v) node by node.
Matrix Solver::hessian_apply(const Matrix& df, const Matrix& h) const {
  const int n = static_cast<int>(h.rows());
  const Vec& w = g().weights();
  Matrix out = Matrix::Zero(n, h.cols());
  Vec sh;
  for (int j = first_free(); j < n; ++j) {
    const Vec hj = h.row(j).transpose();
    const double tau = (j == 0 || j == n - 1) ? 0.5 : 1.0;
    g().stiffness_apply(hj, sh);
    Vec r = tau * dy_ * (sh + w.cwiseProduct(hj - df.row(j).transpose().cwiseProduct(hj)));
    Vec k = Vec::Zero(hj.size());
    if (j > 0) k += hj - h.row(j - 1).transpose();
    if (j + 1 < n) k += hj - h.row(j + 1).transpose();
    r += w.cwiseProduct(k) / dy_;
    out.row(j) = r.transpose();
  }
  return out;
}

// Newton iteration on the discrete Euler-Lagrange equations with the rest
// slices free, so the reflected orbit satisfies the equation there too. With
// b > 0 the spacing is an unknown and slice `pinned` stays on {V = b}; the
// other rest slice then sits within O(dy^2) of the level.
bool Solver::polish(int pinned, double& residual) {
  const int n = static_cast<int>(v_.rows());
  const int nr = static_cast<int>(v_.cols());
  const Eigen::Index size = static_cast<Eigen::Index>(n) * nr;
  const bool timed = !free_decay_;
  const Vec& w = g().weights();
  Matrix df(n, nr);

  auto flat = [](const Matrix& m) { return Eigen::Map<const Vec>(m.data(), m.size()); };
  auto shape = [&](const Vec& x) { return Matrix(Eigen::Map<const Matrix>(x.data(), n, nr)); };
  detail::LinearOperator op(size, [&](const Vec& x, Vec& y) {
    y = flat(hessian_apply(df, shape(x)));
  });
  Eigen::MINRES<detail::LinearOperator, Eigen::Lower | Eigen::Upper, detail::Preconditioner> krylov;
  krylov.preconditioner().set([&](const Vec& x, Vec& y) { y = flat(precondition(shape(x))); });
  krylov.setTolerance(1e-10);
  krylov.setMaxIterations(2000);
  krylov.compute(op);

  auto state = [&](const Matrix& v, Matrix& R, Vec& V, double& gval) {
    evaluate(v, dy_, &V);
    const double res = gradient(v, V, R, false);
    gval = timed ? V[pinned] - cfg_.b : 0.0;
    return res;
  };

  Matrix R;
  Vec V;
  double gval = 0.0;
  residual = state(v_, R, V, gval);
  for (int it = 0; it < cfg_.max_newton; ++it) {
    if (residual < cfg_.tol_residual && std::abs(gval) <= tol_) return true;
    for (int j = 0; j < n; ++j) {
      for (int i = 0; i < nr; ++i) df(j, i) = nl_.df(v_(j, i));
    }
    Vec x = krylov.solve(-flat(R));
    double ddy = 0.0;
    Vec gv;
    if (timed) {
      // d/d(dy) of the gradient is -R/dy + 2 tau W gradV
      Matrix Rdy = -R / dy_;
      for (int j = 0; j < n; ++j) {
        potential_gradient(g(), v_.row(j).transpose(), nl_, gv);
        const double tau = (j == 0 || j == n - 1) ? 0.5 : 1.0;
        Rdy.row(j) += 2.0 * tau * gv.cwiseProduct(w).transpose();
      }
      const Vec y = krylov.solve(-flat(Rdy));
      potential_gradient(g(), v_.row(pinned).transpose(), nl_, gv);
      const Vec c = gv.cwiseProduct(w);
      const double den = c.dot(y.segment(static_cast<Eigen::Index>(pinned) * nr, nr));
      if (den == 0.0) return false;
      ddy = -(gval + c.dot(x.segment(static_cast<Eigen::Index>(pinned) * nr, nr))) / den;
      x += ddy * y;
    }
    const Matrix step = shape(x);
    const double merit = residual * residual + gval * gval;
    const Matrix v0 = v_;
    const double dy0 = dy_;
    bool accepted = false;
    for (double t = 1.0; t > 1e-3; t *= 0.5) {
      v_ = v0 + t * step;
      dy_ = dy0 + t * ddy;
      if (!(dy_ > 0.0) || !v_.allFinite()) continue;
      Matrix Rt;
      Vec Vt;
      double gt = 0.0;
      const double rt = state(v_, Rt, Vt, gt);
      if (rt * rt + gt * gt < merit) {
        R = std::move(Rt);
        residual = rt;
        gval = gt;
        accepted = true;
        break;
      }
    }
    if (!accepted) {
      v_ = v0;
      dy_ = dy0;
      return false;
    }
  }
  return residual < cfg_.tol_residual && std::abs(gval) <= tol_;
}

bool Solver::scale_to_crossing(Vec& u, bool minus_side) const {
  try {
    const RayReport r = ray_scan(g(), u, cfg_.b, nl_);
    const double s = minus_side ? r.alpha : r.omega;
    if (!(s > 0.0)) return false;
    u *= s;
    return true;
  } catch (const Error&) {
    return false;
  }
}

bool Solver::project(Matrix& v) const {
  const int n = static_cast<int>(v.rows());
  if (!v.allFinite()) return false;
  for (int j = first_free(); j < n; ++j) {
    Vec u = rearrange(g(), v.row(j).transpose());
    if (j == 0) {
      if (!scale_to_crossing(u, true)) return false;
    } else if (j == n - 1) {
      if (!scale_to_crossing(u, false)) return false;
    } else {
      const double Vj = potential_value(g(), u, nl_);
      if (Vj < cfg_.b - tol_) {
        const Side side = classify(g(), u, cfg_.b, nl_);
        if (side == Side::Minus && cfg_.b <= 0.0) {
          // V < 0 never happens on the Minus side
          return false;
        }
        if (!scale_to_crossing(u, side == Side::Minus)) return false;
      }
    }
    v.row(j) = u.transpose();
  }
  if (free_decay_) v.row(0).setZero();
  return true;
}

double Solver::min_slack(const Vec& V) const {
  double m = std::numeric_limits<double>::infinity();
  for (Eigen::Index j = first_free(); j < V.size(); ++j) m = std::min(m, V[j] - cfg_.b);
  return m;
}

// Mean normal multiplier of the end slices; zero when both ends are at rest.
double Solver::end_multiplier() const {
  const int n = static_cast<int>(v_.rows());
  double acc = 0.0;
  int count = 0;
  Vec gv;
  for (int j : {0, n - 1}) {
    if (j == 0 && free_decay_) continue;
    const int nb = j == 0 ? 1 : n - 2;
    const Vec vj = v_.row(j).transpose();
    potential_gradient(g(), vj, nl_, gv);
    const Vec s = 2.0 * (vj - v_.row(nb).transpose()) / (dy_ * dy_) + gv;
    acc += g().dot(s, gv) / g().l2_sq(gv);
    ++count;
  }
  return count > 0 ? acc / count : 0.0;
}

void Solver::rescale_time() {
  const int n = static_cast<int>(v_.rows());
  double kin = 0.0;
  double pot = 0.0;
  for (int j = 0; j < n; ++j) {
    const double tau = (j == 0 || j == n - 1) ? 0.5 : 1.0;
    pot += tau * (potential_value(g(), v_.row(j).transpose(), nl_) - cfg_.b);
    if (j + 1 < n) kin += 0.5 * g().l2_sq((v_.row(j + 1) - v_.row(j)).transpose());
  }
  if (kin > 0.0 && pot > 0.0) dy_ = std::sqrt(kin / pot);
}

void Solver::resample(int n_new) {
  n_new = smooth_count(std::max(5, n_new));
  const double T = (v_.rows() - 1) * dy_;
  v_ = spline_resample(v_, n_new);
  dy_ = T / (n_new - 1);
  ++resamples_;
  project(v_);
}

void Solver::extend_window() {
  const int n = static_cast<int>(v_.rows());
  const int grow = std::max(2, static_cast<int>(std::lround((cfg_.window_growth - 1.0) * (n - 1))));
  const int add = smooth_count(n + grow) - n;
  Matrix out = Matrix::Zero(n + add, v_.cols());
  out.bottomRows(n) = v_;
  v_ = std::move(out);
  y0_ -= add * dy_;
  ++extensions_;
}

CoreSegment Solver::run() {
  initialize();
  setup_modes();
  CoreSegment seg;
  Vec V;
  double f = evaluate(v_, dy_, &V);
  if (!free_decay_) {
    rescale_time();
    f = evaluate(v_, dy_, &V);
  }
  Matrix G, Gold, Z, Zold, D;
  double gnorm = gradient(v_, V, G);
  bool restart = true;
  int it = 0;
  for (; it < cfg_.max_iters; ++it) {
    if (gnorm < cfg_.tol_grad) {
      if (!free_decay_) {
        // Outer step on the half-period: a secant on the end multiplier, which
        // vanishes once the end slices are at rest. Minimizing over the spacing
        // as well would favour merging slices at the ends.
        const double lam = end_multiplier();
        const double T = (v_.rows() - 1) * dy_;
        double T_new;
        if (outer_hist_) {
          const double dl = lam - lam_prev_;
          T_new = dl != 0.0 ? T - lam * (T - T_prev_) / dl : T;
        } else {
          const double before = dy_;
          rescale_time();
          T_new = (v_.rows() - 1) * dy_;
          dy_ = before;
        }
        T_new = std::clamp(T_new, 0.8 * T, 1.25 * T);
        if (std::abs(T_new / T - 1.0) > cfg_.tol_time && outer_steps_ < cfg_.max_outer) {
          ++outer_steps_;
          T_prev_ = T;
          lam_prev_ = lam;
          outer_hist_ = true;
          dy_ = T_new / (v_.rows() - 1);
          const double ratio = dy_ / cfg_.dy;
          if (ratio > cfg_.resample_factor || ratio < 1.0 / cfg_.resample_factor) {
            resample(static_cast<int>(std::lround(T_new / cfg_.dy)) + 1);
            outer_hist_ = false;
          }
          setup_modes();
          f = evaluate(v_, dy_, &V);
          gnorm = gradient(v_, V, G);
          restart = true;
          continue;
        }
      }
      if (free_decay_ && std::sqrt(g().l2_sq(v_.row(1).transpose())) >= cfg_.decay_threshold) {
        extend_window();
        setup_modes();
        f = evaluate(v_, dy_, &V);
        gnorm = gradient(v_, V, G);
        restart = true;
        continue;
      }
      // With polishing the spacing is solved for exactly, so the outer loop
      // only has to land in its basin.
      seg.converged = free_decay_ || outer_steps_ < cfg_.max_outer || cfg_.polish;
      if (cfg_.polish) {
        const int n = static_cast<int>(v_.rows());
        const Matrix v0 = v_;
        const double dy0 = dy_;
        seg.converged = polish(n - 1, seg.residual);
        // keep both rest slices at or below the level when the free one overshoots
        if (seg.converged && !free_decay_ &&
            potential_value(g(), v_.row(0).transpose(), nl_) > cfg_.b + tol_) {
          v_ = v0;
          dy_ = dy0;
          seg.converged = polish(0, seg.residual);
        }
        f = evaluate(v_, dy_, &V);
        gnorm = gradient(v_, V, G);
      }
      break;
    }
    Z = constrained(precondition(G), V);
    if (restart || !cfg_.conjugate) {
      D = -Z;
    } else {
      const double num = (G.cwiseProduct(Z - Zold)).sum();
      const double den = (Gold.cwiseProduct(Zold)).sum();
      const double beta = den > 0.0 ? std::max(0.0, num / den) : 0.0;
      D = -Z + beta * D;
    }
    tangent_rows(v_, V, D);
    double slope = (G.cwiseProduct(D)).sum();
    if (!(slope < 0.0)) {
      D = -Z;
      tangent_rows(v_, V, D);
      slope = (G.cwiseProduct(D)).sum();
    }
    double step = 1.0;
    bool accepted = false;
    Matrix trial;
    Vec Vt;
    double ft = 0.0;
    for (int ls = 0; ls < cfg_.max_backtracks; ++ls) {
      trial = v_ + step * D;
      if (project(trial)) {
        ft = evaluate(trial, dy_, &Vt);
        if (ft <= f + cfg_.armijo * step * slope) {
          accepted = true;
          break;
        }
      }
      step *= cfg_.backtrack;
    }
    if (!accepted) {
      if (!restart) {
        restart = true;
        continue;
      }
      break;
    }
    seg.descent.emplace_back(f, ft);
    v_ = std::move(trial);
    V = std::move(Vt);
    f = ft;
    restart = false;
    Gold = G;
    Zold = Z;
    gnorm = gradient(v_, V, G);
    if (cfg_.checkpoint_every > 0 && cfg_.on_checkpoint && (it + 1) % cfg_.checkpoint_every == 0) {
      const int n = static_cast<int>(v_.rows());
      Trajectory snap(CylinderGrid(grid_, y0_, y0_ + (n - 1) * dy_, n), v_);
      cfg_.on_checkpoint(CheckpointInfo{it + 1, f, gnorm, dy_, min_slack(V)}, snap);
    }
  }
  const int n = static_cast<int>(v_.rows());
  seg.v = Trajectory(CylinderGrid(grid_, y0_, y0_ + (n - 1) * dy_, n), v_);
  seg.iterations = it;
  seg.grad_norm = gnorm;
  seg.min_slack = min_slack(V);
  seg.resamples = resamples_;
  seg.window_extensions = extensions_;
  seg.m_b = f;
  return seg;
}

}  // namespace

double distance_to_minus(const RadialGrid& g, const Vec& u, double b, const Nonlinearity& nl) {
  const double norm = std::sqrt(g.l2_sq(u));
  if (norm == 0.0) return 0.0;
  try {
    const RayReport r = ray_scan(g, u, b, nl);
    return std::max(0.0, 1.0 - r.alpha) * norm;
  } catch (const Error& e) {
    if (e.kind() != ErrorKind::NotAboveLevel) throw;
    return norm;
  }
}

SigmaTau detect_sigma_tau(const Trajectory& v, double b, const PotentialConstants& k,
                          const Nonlinearity& nl, double zero_tol) {
  const RadialGrid& g = *v.grid.radial;
  const double tol = 1e-9 * std::max(1.0, k.c);
  const int n = v.n_y();
  SigmaTau st;
  Vec V(n);
  for (int j = 0; j < n; ++j) V[j] = potential_value(g, v.slice(j), nl);
  for (int j = 0; j < n; ++j) {
    const Vec u = v.slice(j);
    if (std::sqrt(g.l2_sq(u)) < zero_tol) continue;
    if (V[j] <= b + tol && distance_to_minus(g, u, b, nl) <= k.r0) st.sigma_index = j;
  }
  if (st.sigma_index >= 0) st.sigma_bar = v.grid.y(st.sigma_index);
  for (int j = st.sigma_index + 1; j < n; ++j) {
    if (V[j] <= b + tol && classify(g, v.slice(j), b, nl) == Side::Plus) {
      st.tau_index = j;
      break;
    }
  }
  if (st.tau_index < 0) {
    throw Error(ErrorKind::NoTransition, "no Plus-side slice with V <= b after sigma_bar");
  }
  st.tau_bar = v.grid.y(st.tau_index);
  return st;
}

Trajectory initial_trajectory(const RadialField& u_seed, double b, const PotentialConstants& k,
                              const CylinderGrid& grid, const Nonlinearity& nl,
                              Placement placement) {
  (void)k;
  check_finite(u_seed);
  if (!grid.radial->same_as(*u_seed.grid)) {
    throw Error(ErrorKind::GridMismatch, "seed profile and cylinder use different radial grids");
  }
  const RayReport r = ray_scan(u_seed, b, nl);
  double shift = 0.0;
  if (placement == Placement::Centered) {
    shift = 0.5 * (grid.y_min + grid.y_max) - 0.5 * (r.alpha + r.omega);
  } else {
    shift = grid.y_max - r.omega;
  }
  Vec scales(grid.n_y);
  for (int j = 0; j < grid.n_y; ++j) scales[j] = std::clamp(grid.y(j) - shift, r.alpha, r.omega);
  return Trajectory(grid, sample_path(u_seed.values, scales));
}

TailSegment tail_plus(const RadialField& u0, double b, const Nonlinearity& nl, double dy) {
  check_finite(u0);
  const RadialGrid& g = *u0.grid;
  TailSegment t;
  const double V0 = potential_value(g, u0.values, nl);
  if (std::abs(V0 - b) <= 1e-12 * std::max(1.0, std::abs(b))) {
    t.s0 = 1.0;
    t.y = Vec::Zero(1);
    t.values = u0.values.transpose();
    return t;
  }
  RayReport ray;
  try {
    ray = ray_scan(g, u0.values, b, nl);
  } catch (const Error& e) {
    throw Error(ErrorKind::NoCrossing, std::string("no Plus crossing on the ray: ") + e.what());
  }
  if (!(ray.t_u < 1.0 && ray.omega >= 1.0)) {
    throw Error(ErrorKind::NoCrossing, "profile is not on the Plus side");
  }
  t.s0 = ray.omega;
  t.length = std::sqrt(2.0 * (t.s0 - 1.0));
  const int n = std::max(3, static_cast<int>(std::ceil(t.length / dy)) + 1);
  const double h = t.length / (n - 1);
  t.y.resize(n);
  Vec scales(n);
  for (int j = 0; j < n; ++j) {
    t.y[j] = j * h;
    scales[j] = 1.0 + 0.5 * t.y[j] * t.y[j];
  }
  scales[n - 1] = t.s0;
  t.values = sample_path(u0.values, scales);
  t.cost = segment_cost(g, t.values, h, b, nl);
  return t;
}

TailSegment tail_minus(const RadialField& u0, double b, const Nonlinearity& nl, double dy) {
  check_finite(u0);
  const RadialGrid& g = *u0.grid;
  TailSegment t;
  const double norm = std::sqrt(g.l2_sq(u0.values));
  if (b <= 0.0) {
    if (norm == 0.0) {
      t.s0 = 0.0;
      t.y = Vec::Zero(1);
      t.values = u0.values.transpose();
      return t;
    }
    t.s0 = 0.0;
    t.length = 1.0;
    const int n = std::max(3, static_cast<int>(std::ceil(1.0 / dy)) + 1);
    const double h = 1.0 / (n - 1);
    t.y.resize(n);
    Vec scales(n);
    for (int j = 0; j < n; ++j) {
      t.y[j] = -1.0 + j * h;
      scales[j] = 1.0 + t.y[j];
    }
    scales[0] = 0.0;
    scales[n - 1] = 1.0;
    t.values = sample_path(u0.values, scales);
    t.cost = segment_cost(g, t.values, h, b, nl);
    return t;
  }
  const double V0 = potential_value(g, u0.values, nl);
  if (std::abs(V0 - b) <= 1e-12 * std::max(1.0, b)) {
    t.s0 = 1.0;
    t.y = Vec::Zero(1);
    t.values = u0.values.transpose();
    return t;
  }
  RayReport ray;
  try {
    ray = ray_scan(g, u0.values, b, nl);
  } catch (const Error& e) {
    throw Error(ErrorKind::NoCrossing, std::string("no Minus crossing on the ray: ") + e.what());
  }
  if (!(ray.t_u > 1.0 && ray.alpha > 0.0 && ray.alpha <= 1.0)) {
    throw Error(ErrorKind::NoCrossing, "profile is not on the Minus side");
  }
  t.s0 = ray.alpha;
  t.length = std::sqrt(2.0 * (1.0 - t.s0));
  const int n = std::max(3, static_cast<int>(std::ceil(t.length / dy)) + 1);
  const double h = t.length / (n - 1);
  t.y.resize(n);
  Vec scales(n);
  for (int j = 0; j < n; ++j) {
    t.y[j] = -t.length + j * h;
    scales[j] = 1.0 - 0.5 * t.y[j] * t.y[j];
  }
  scales[0] = t.s0;
  scales[n - 1] = 1.0;
  t.values = sample_path(u0.values, scales);
  t.cost = segment_cost(g, t.values, h, b, nl);
  return t;
}

CoreSegment minimize(const MinimizeConfig& config, const PotentialConstants& k,
                     const Nonlinearity& nl) {
  if (!(config.b >= 0.0 && config.b < k.c)) {
    throw Error(ErrorKind::InvalidField, "minimizer level must satisfy 0 <= b < c");
  }
  Solver solver(config, k, nl);
  CoreSegment seg = solver.run();
  const SigmaTau st = detect_sigma_tau(seg.v, config.b, k, nl);
  seg.sigma_bar = st.sigma_bar;
  seg.tau_bar = st.tau_bar;
  const int lo = std::max(st.sigma_index, 0);
  const int hi = st.tau_index;
  if (lo > 0 || hi < seg.v.n_y() - 1) {
    const CylinderGrid& cg = seg.v.grid;
    CylinderGrid cut(cg.radial, cg.y(lo), cg.y(hi), hi - lo + 1);
    seg.v = Trajectory(cut, seg.v.values.middleRows(lo, hi - lo + 1));
    // the free rest slice may sit O(dy^2) below the level, so no admissibility test here
    seg.m_b = phi(seg.v, config.b, nl, Window{cut.y_min, cut.y_max});
  }
  return seg;
}

}  // namespace brakeorbit
