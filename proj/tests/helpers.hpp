#pragma once

#include <cmath>
#include <random>

#include "brakeorbit/radial_grid.hpp"

namespace brakeorbit::test {

inline double sech(double x) { return 1.0 / std::cosh(x); }

/// Smooth random profile: a short sum of Gaussian bumps with random centres,
/// widths and signs, vanishing near r_max.
inline RadialField random_field(const GridPtr& g, std::mt19937_64& rng, bool signed_values = true) {
  std::uniform_real_distribution<double> U(0.0, 1.0);
  const int bumps = 1 + static_cast<int>(4 * U(rng));
  double amp[5], cen[5], wid[5];
  for (int k = 0; k < bumps; ++k) {
    amp[k] = (signed_values ? 2.0 * U(rng) - 1.0 : U(rng)) * 2.0;
    cen[k] = 0.4 * g->r_max() * U(rng);
    wid[k] = 0.5 + 2.5 * U(rng);
  }
  return RadialField::sample(g, [&](double r) {
    double s = 0.0;
    for (int k = 0; k < bumps; ++k) s += amp[k] * std::exp(-std::pow((r - cen[k]) / wid[k], 2));
    return s;
  });
}

/// Random member of the monotone cone: a + b exp(-r^2/s^2) + c sech(r/l).
inline RadialField random_monotone(const GridPtr& g, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> U(0.0, 1.0);
  const double a = 2.0 * U(rng), s = 0.5 + 3.0 * U(rng);
  const double c = 2.0 * U(rng), l = 0.5 + 2.0 * U(rng);
  return RadialField::sample(g, [&](double r) {
    return a * std::exp(-r * r / (s * s)) + c * sech(r / l);
  });
}

/// Values of u on nodes with independent uniform noise.
inline RadialField noise_field(const GridPtr& g, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> U(-1.0, 1.0);
  Vec v(g->size());
  for (int i = 0; i < g->size(); ++i) v[i] = U(rng);
  return RadialField(g, v);
}

}  // namespace brakeorbit::test
