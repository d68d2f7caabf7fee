#include "brakeorbit/nonlinearity.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include "brakeorbit/error.hpp"

namespace brakeorbit {

std::string_view to_string(ErrorKind kind) noexcept {
  switch (kind) {
    case ErrorKind::InvalidNonlinearity: return "InvalidNonlinearity";
    case ErrorKind::InvalidField: return "InvalidField";
    case ErrorKind::GridMismatch: return "GridMismatch";
    case ErrorKind::NotAboveLevel: return "NotAboveLevel";
    case ErrorKind::ShootingFailed: return "ShootingFailed";
    case ErrorKind::DictionaryTooSmall: return "DictionaryTooSmall";
    case ErrorKind::ConstraintViolated: return "ConstraintViolated";
    case ErrorKind::NoCrossing: return "NoCrossing";
    case ErrorKind::NotConverged: return "NotConverged";
    case ErrorKind::ConstraintProjectionFailed: return "ConstraintProjectionFailed";
    case ErrorKind::NoTransition: return "NoTransition";
    case ErrorKind::CoreNotConverged: return "CoreNotConverged";
    case ErrorKind::Config: return "Config";
    case ErrorKind::Io: return "Io";
  }
  return "Unknown";
}

Nonlinearity Nonlinearity::pure_power(double p) {
  if (!(p > 1.0)) {
    throw Error(ErrorKind::InvalidNonlinearity, "pure power requires p > 1");
  }
  Nonlinearity nl;
  nl.kind_ = Kind::PurePower;
  nl.p_ = p;
  nl.mu_ = p + 1.0;
  return nl;
}

Nonlinearity Nonlinearity::from_table(std::vector<double> t, std::vector<double> f,
                                      double p) {
  if (t.size() != f.size() || t.size() < 3) {
    throw Error(ErrorKind::InvalidNonlinearity,
                "table needs at least 3 samples with matching t and f columns");
  }
  Nonlinearity nl;
  nl.kind_ = Kind::UserTable;
  nl.t_.reserve(t.size() + 1);
  nl.fv_.reserve(t.size() + 1);
  nl.t_.push_back(0.0);
  nl.fv_.push_back(0.0);
  for (std::size_t k = 0; k < t.size(); ++k) {
    if (!std::isfinite(t[k]) || !std::isfinite(f[k])) {
      throw Error(ErrorKind::InvalidNonlinearity, "non-finite table entry");
    }
    if (!(t[k] > nl.t_.back())) {
      throw Error(ErrorKind::InvalidNonlinearity,
                  "table abscissae must be positive and strictly increasing");
    }
    nl.t_.push_back(t[k]);
    nl.fv_.push_back(f[k]);
  }
  const std::size_t n = nl.t_.size();
  if (!(nl.fv_[1] > 0.0 && nl.fv_[2] > nl.fv_[1])) {
    throw Error(ErrorKind::InvalidNonlinearity,
                "table must start with positive, increasing f values");
  }
  // power law through the first two samples on [0, t_0]
  nl.head_exponent_ = std::log(nl.fv_[2] / nl.fv_[1]) / std::log(nl.t_[2] / nl.t_[1]);
  nl.Fv_.assign(n, 0.0);
  nl.Fv_[1] = nl.fv_[1] * nl.t_[1] / (nl.head_exponent_ + 1.0);
  for (std::size_t k = 2; k < n; ++k) {
    nl.Fv_[k] = nl.Fv_[k - 1] + 0.5 * (nl.fv_[k] + nl.fv_[k - 1]) * (nl.t_[k] - nl.t_[k - 1]);
  }
  nl.dfv_.assign(n, 0.0);
  nl.dfv_[1] = nl.head_exponent_ * nl.fv_[1] / nl.t_[1];
  for (std::size_t k = 2; k + 1 < n; ++k) {
    nl.dfv_[k] = (nl.fv_[k + 1] - nl.fv_[k - 1]) / (nl.t_[k + 1] - nl.t_[k - 1]);
  }
  const double fa = nl.fv_[n - 2];
  const double fb = nl.fv_[n - 1];
  if (!(fa > 0.0 && fb > fa)) {
    throw Error(ErrorKind::InvalidNonlinearity,
                "table must end with positive, increasing f values");
  }
  nl.tail_exponent_ = std::log(fb / fa) / std::log(nl.t_[n - 1] / nl.t_[n - 2]);
  nl.dfv_[n - 1] = nl.tail_exponent_ * fb / nl.t_[n - 1];

  nl.p_ = p > 0.0 ? p : nl.tail_exponent_;

  double mu = std::numeric_limits<double>::infinity();
  for (std::size_t k = 1; k < n; ++k) {
    const double tm = 0.5 * (nl.t_[k - 1] + nl.t_[k]);
    for (double s : {nl.t_[k], tm}) {
      const double Fs = nl.F_pos(s);
      if (Fs > 0.0) mu = std::min(mu, nl.f_pos(s) * s / Fs);
    }
  }
  nl.mu_ = mu;
  return nl;
}

Nonlinearity Nonlinearity::from_csv(const std::filesystem::path& path, double p) {
  std::ifstream in(path);
  if (!in) {
    throw Error(ErrorKind::Io, "cannot open nonlinearity table '" + path.string() + "'");
  }
  std::vector<double> t;
  std::vector<double> f;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::replace(line.begin(), line.end(), ',', ' ');
    std::istringstream ss(line);
    double a = 0.0;
    double b = 0.0;
    if (!(ss >> a >> b)) continue;
    if (a <= 0.0) continue;
    t.push_back(a);
    f.push_back(b);
  }
  return from_table(std::move(t), std::move(f), p);
}

double Nonlinearity::f_pos(double t) const noexcept {
  if (kind_ == Kind::PurePower) {
    if (p_ == 3.0) return t * t * t;
    if (p_ == 2.0) return t * t;
    return std::pow(t, p_);
  }
  const std::size_t n = t_.size();
  if (t >= t_[n - 1]) return fv_[n - 1] * std::pow(t / t_[n - 1], tail_exponent_);
  if (t < t_[1]) return fv_[1] * std::pow(t / t_[1], head_exponent_);
  const auto it = std::upper_bound(t_.begin(), t_.end(), t);
  const std::size_t k = static_cast<std::size_t>(it - t_.begin()) - 1;
  const double s = (fv_[k + 1] - fv_[k]) / (t_[k + 1] - t_[k]);
  return fv_[k] + s * (t - t_[k]);
}

double Nonlinearity::F_pos(double t) const noexcept {
  if (kind_ == Kind::PurePower) {
    if (p_ == 3.0) {
      const double t2 = t * t;
      return 0.25 * t2 * t2;
    }
    if (p_ == 2.0) return t * t * t / 3.0;
    return std::pow(t, p_ + 1.0) / (p_ + 1.0);
  }
  const std::size_t n = t_.size();
  if (t >= t_[n - 1]) {
    const double q1 = tail_exponent_ + 1.0;
    return Fv_[n - 1] + fv_[n - 1] * t_[n - 1] / q1 * (std::pow(t / t_[n - 1], q1) - 1.0);
  }
  if (t < t_[1]) return Fv_[1] * std::pow(t / t_[1], head_exponent_ + 1.0);
  const auto it = std::upper_bound(t_.begin(), t_.end(), t);
  const std::size_t k = static_cast<std::size_t>(it - t_.begin()) - 1;
  const double s = (fv_[k + 1] - fv_[k]) / (t_[k + 1] - t_[k]);
  const double d = t - t_[k];
  return Fv_[k] + fv_[k] * d + 0.5 * s * d * d;
}

double Nonlinearity::df_pos(double t) const noexcept {
  if (kind_ == Kind::PurePower) {
    if (p_ == 3.0) return 3.0 * t * t;
    if (p_ == 2.0) return 2.0 * t;
    return p_ * std::pow(t, p_ - 1.0);
  }
  const std::size_t n = t_.size();
  if (t >= t_[n - 1]) return tail_exponent_ * f_pos(t) / t;
  if (t < t_[1]) return t > 0.0 ? head_exponent_ * f_pos(t) / t : 0.0;
  const auto it = std::upper_bound(t_.begin(), t_.end(), t);
  const std::size_t k = static_cast<std::size_t>(it - t_.begin()) - 1;
  const double w = (t - t_[k]) / (t_[k + 1] - t_[k]);
  return (1.0 - w) * dfv_[k] + w * dfv_[k + 1];
}

double Nonlinearity::f(double t) const noexcept {
  return t >= 0.0 ? f_pos(t) : -f_pos(-t);
}

double Nonlinearity::F(double t) const noexcept { return F_pos(std::abs(t)); }

double Nonlinearity::df(double t) const noexcept { return df_pos(std::abs(t)); }

bool ValidationReport::all_passed() const noexcept {
  return std::all_of(checks.begin(), checks.end(),
                     [](const HypothesisCheck& c) { return c.passed; });
}

const HypothesisCheck* ValidationReport::find(const std::string& name) const noexcept {
  for (const auto& c : checks) {
    if (c.name == name) return &c;
  }
  return nullptr;
}

std::vector<double> default_samples(int count) {
  std::vector<double> out;
  out.reserve(static_cast<std::size_t>(count));
  const double lo = std::log10(1e-6);
  const double hi = std::log10(1e3);
  for (int k = 0; k < count; ++k) {
    out.push_back(std::pow(10.0, lo + (hi - lo) * k / std::max(1, count - 1)));
  }
  return out;
}

ValidationReport validate_hypotheses(const Nonlinearity& nl, int dim,
                                     std::span<const double> samples) {
  if (samples.empty()) {
    throw Error(ErrorKind::InvalidNonlinearity, "no samples supplied");
  }
  if (dim < 1) throw Error(ErrorKind::InvalidNonlinearity, "dimension must be >= 1");
  const double p = nl.p();
  const double mu = nl.mu();
  const double p_crit = 1.0 + 4.0 / dim;
  if (!(mu > 2.0)) {
    throw Error(ErrorKind::InvalidNonlinearity, "superquadraticity constant mu must exceed 2");
  }
  if (!(p > 1.0)) throw Error(ErrorKind::InvalidNonlinearity, "exponent p must exceed 1");
  if (!(p < p_crit)) {
    std::ostringstream msg;
    msg << "exponent p=" << p << " is not below the L2-critical value 1+4/N=" << p_crit;
    throw Error(ErrorKind::InvalidNonlinearity, msg.str());
  }

  ValidationReport rep;
  rep.dim = dim;
  rep.p = p;
  rep.mu = mu;

  std::vector<double> ts;
  for (double t : samples) {
    if (t != 0.0 && std::isfinite(t)) {
      ts.push_back(std::abs(t));
      ts.push_back(-std::abs(t));
    }
  }
  if (ts.empty()) throw Error(ErrorKind::InvalidNonlinearity, "only zero samples supplied");

  // growth
  HypothesisCheck growth{"f2_growth", true, 0.0, ""};
  double C = 0.0;
  double a_half = 0.0;
  for (double t : ts) {
    const double at = std::abs(t);
    const double ratio = std::abs(nl.f(t)) / (1.0 + std::pow(at, p));
    if (!std::isfinite(ratio)) growth.passed = false;
    C = std::max(C, ratio);
    a_half = std::max(a_half, (std::abs(nl.f(t)) - 0.5 * at) / std::pow(at, p));
  }
  growth.worst = p_crit - p;
  growth.detail = "sup |f|/(1+|t|^p) = " + std::to_string(C);
  rep.growth_constant = C;
  rep.a_half = a_half;

  HypothesisCheck f3{"f3_superquadratic", true, std::numeric_limits<double>::infinity(), ""};
  HypothesisCheck f4{"f4_convexity", true, std::numeric_limits<double>::infinity(), ""};
  HypothesisCheck f5{"f5_odd", true, std::numeric_limits<double>::infinity(), ""};
  HypothesisCheck mono{"scaling_monotone", true, std::numeric_limits<double>::infinity(), ""};

  for (double t : ts) {
    const double Ft = nl.F(t);
    const double ft = nl.f(t) * t;
    const double scale = std::max(std::abs(ft), std::numeric_limits<double>::min());
    // 0 < mu F(t) <= f(t) t, equality allowed up to roundoff
    const double upper = (ft - mu * Ft) / scale;
    if (!(Ft > 0.0) || upper < -1e-12) f3.passed = false;
    f3.worst = std::min(f3.worst, Ft > 0.0 ? upper : -1.0);

    const double conv = (nl.df(t) * t * t - ft) / scale;
    if (!(conv > 0.0)) f4.passed = false;
    f4.worst = std::min(f4.worst, conv);

    const double odd = std::abs(nl.f(-t) + nl.f(t)) / scale;
    if (odd > 1e-14) f5.passed = false;
    f5.worst = std::min(f5.worst, -odd);

    double prev = -std::numeric_limits<double>::infinity();
    for (int k = 0; k <= 40; ++k) {
      const double s = std::pow(10.0, -2.0 + 4.0 * k / 40.0);
      const double g = nl.f(s * t) * t / s;
      if (k > 0) {
        const double gap = g - prev;
        mono.worst = std::min(mono.worst, gap / std::max(std::abs(g), 1e-300));
        if (!(gap > 0.0)) mono.passed = false;
      }
      prev = g;
    }
  }
  f3.detail = "min (f(t)t - mu F(t))/|f(t)t|";
  f4.detail = "min (f'(t)t^2 - f(t)t)/|f(t)t|";
  f5.detail = "max |f(-t)+f(t)|/|f(t)t|";
  mono.detail = "min relative increment of s -> f(st)t/s";

  double threshold = 0.0;
  for (double t : ts) {
    if (t > 0.0 && std::abs(nl.f(t) / t) < 1e-3) threshold = std::max(threshold, t);
  }
  rep.small_t_threshold = threshold;

  rep.checks = {growth, f3, f4, f5, mono};
  return rep;
}

}  // namespace brakeorbit
