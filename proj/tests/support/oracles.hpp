#pragma once

// Reference implementations used only by tests. Each one is deliberately
// naive so that it shares no code path with the library.

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>
#include <vector>

#include "dmn/model.hpp"
#include "dmn/rng.hpp"

namespace dmn::oracle {

/// Integer-mass distribution: point x carries `mass` unit atoms.
struct Atomic {
  std::vector<double> x;
  std::vector<int> mass;

  std::vector<double> atoms() const {
    std::vector<double> out;
    for (std::size_t i = 0; i < x.size(); ++i) out.insert(out.end(), mass[i], x[i]);
    return out;
  }
};

/// Optimal transport between two distributions of equal total mass by
/// enumerating every pairing of unit atoms. Cost per atom is 1/total.
inline double brute_force_emd(const Atomic& a, const Atomic& b) {
  const auto xa = a.atoms();
  auto xb = b.atoms();
  std::sort(xb.begin(), xb.end());
  double best = std::numeric_limits<double>::infinity();
  do {
    double c = 0.0;
    for (std::size_t i = 0; i < xa.size(); ++i) c += std::abs(xa[i] - xb[i]);
    best = std::min(best, c);
  } while (std::next_permutation(xb.begin(), xb.end()));
  return best / static_cast<double>(xa.size());
}

/// Random distribution on at most `max_points` support points whose integer
/// masses sum to `total`.
inline Atomic random_atomic(Rng& rng, int total, std::size_t max_points, bool integer_support) {
  Atomic d;
  const std::size_t k = 1 + rng.below(std::min<std::size_t>(max_points, static_cast<std::size_t>(total)));
  std::vector<int> mass(k, 1);
  for (int left = total - static_cast<int>(k); left > 0; --left) ++mass[rng.below(k)];
  for (std::size_t i = 0; i < k; ++i) {
    d.x.push_back(integer_support ? static_cast<double>(rng.below(5)) : 10.0 * rng.uniform() - 5.0);
    d.mass.push_back(mass[i]);
  }
  return d;
}

/// -log density of a lognormal mixture over tau in hours, written straight
/// from the formula with hour-space parameters.
inline double direct_mixture_nll(const MixtureParams& p, double tau, const NormStats& n) {
  double dens = 0.0;
  for (std::size_t k = 0; k < p.K(); ++k) {
    const double mu = n.std_log_tau * p.mu[k] + n.mean_log_tau;
    const double sd = n.std_log_tau * p.sigma[k];
    const double z = (std::log(tau) - mu) / sd;
    dens += p.omega[k] / (tau * sd * std::sqrt(2.0 * std::numbers::pi)) * std::exp(-0.5 * z * z);
  }
  return -std::log(dens);
}

}  // namespace dmn::oracle
