#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace brakeorbit {

/// Odd nonlinearity f with primitive F and derivative f'.
///
/// Two variants are supported: the pure power f(t) = |t|^{p-1} t and a
/// tabulated f given on t >= 0 and extended by oddness. For tables, f is the
/// piecewise-linear interpolant of the samples, F is its exact primitive and
/// f' comes from centered differences of the samples, so F' = f holds to
/// roundoff. Below the first sample and beyond the last one f is continued as
/// a power law matching the log-slope of the adjacent segment; a linear piece
/// at the origin would pin f(t)t/F(t) to 2.
///
/// Instances are immutable and cheap to copy.
class Nonlinearity {
 public:
  enum class Kind { PurePower, UserTable };

  static Nonlinearity pure_power(double p);

  /// Tabulated f from samples (t_k, f(t_k)) with 0 < t_0 < t_1 < ...; the
  /// point (0, 0) is implied. `p` is the growth exponent used by the
  /// subcriticality check; pass a non-positive value to estimate it from the
  /// tail log-slope.
  static Nonlinearity from_table(std::vector<double> t, std::vector<double> f,
                                 double p = 0.0);

  /// Reads a two-column CSV of (t, f(t)) pairs. Lines starting with '#' and a
  /// non-numeric header line are skipped. Samples with t <= 0 are ignored.
  static Nonlinearity from_csv(const std::filesystem::path& path, double p = 0.0);

  Kind kind() const noexcept { return kind_; }
  double p() const noexcept { return p_; }
  double mu() const noexcept { return mu_; }

  double f(double t) const noexcept;
  double F(double t) const noexcept;
  double df(double t) const noexcept;

  /// Table samples (empty for PurePower).
  std::span<const double> table_t() const noexcept { return t_; }
  std::span<const double> table_f() const noexcept { return fv_; }

 private:
  Nonlinearity() = default;

  double f_pos(double t) const noexcept;
  double F_pos(double t) const noexcept;
  double df_pos(double t) const noexcept;

  Kind kind_ = Kind::PurePower;
  double p_ = 3.0;
  double mu_ = 4.0;

  // Table representation, t_ includes the leading 0.
  std::vector<double> t_;
  std::vector<double> fv_;
  std::vector<double> Fv_;
  std::vector<double> dfv_;
  double head_exponent_ = 1.0;
  double tail_exponent_ = 1.0;
};

struct HypothesisCheck {
  std::string name;
  bool passed = false;
  double worst = 0.0;  ///< worst observed margin (negative means violated)
  std::string detail;
};

struct ValidationReport {
  int dim = 1;
  double p = 0.0;
  double mu = 0.0;
  double growth_constant = 0.0;  ///< sup |f(t)|/(1+|t|^p) over the samples
  double a_half = 0.0;           ///< A_{1/2} with |f(t)| <= t/2 + A|t|^p
  double small_t_threshold = 0.0;  ///< largest sample t with |f(t)/t| < 1e-3
  std::vector<HypothesisCheck> checks;

  bool all_passed() const noexcept;
  const HypothesisCheck* find(const std::string& name) const noexcept;
};

/// Log-spaced sample grid t in [1e-6, 1e3]; the checks reflect each sample
/// through the origin themselves.
std::vector<double> default_samples(int count = 200);

/// Sampled verification of the growth, superquadraticity, convexity and
/// oddness hypotheses plus the monotonicity of s -> f(st)t/s.
///
/// Throws Error{InvalidNonlinearity} when mu <= 2, p <= 1 or p >= 1 + 4/N,
/// or when `samples` is empty.
ValidationReport validate_hypotheses(const Nonlinearity& nl, int dim,
                                     std::span<const double> samples);

}  // namespace brakeorbit
