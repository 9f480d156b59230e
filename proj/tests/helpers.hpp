#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "ntcp/dvh.hpp"
#include "ntcp/msm.hpp"

namespace testkit {

// Uniform draw from the simplex via normalized exponentials.
inline Eigen::VectorXd random_simplex(int n, std::mt19937_64& rng) {
  std::exponential_distribution<double> e(1.0);
  Eigen::VectorXd b(n);
  for (int i = 0; i < n; ++i) b(i) = e(rng);
  return b / b.sum();
}

inline ntcp::CumulativeDvh random_cumulative(const ntcp::DoseGrid& grid, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<double> v(static_cast<std::size_t>(grid.n_bins()));
  for (auto& x : v) x = u(rng);
  std::sort(v.begin(), v.end(), std::greater<>());
  return ntcp::CumulativeDvh(grid, Eigen::Map<Eigen::VectorXd>(v.data(), grid.n_bins()));
}

// Patients with normal-shaped DVHs, one binary covariate and outcomes that
// rise with mean dose.
inline ntcp::Cohort toy_cohort(int n, int bins, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  ntcp::DoseGrid grid(bins, 30.0, 50.0);
  ntcp::Cohort c{grid, {"x1"}, {}};
  for (int i = 0; i < n; ++i) {
    const double x = u(rng) < 0.4 ? 1.0 : 0.0;
    const double mu = 35.0 + 10.0 * u(rng);
    const double sigma = 1.0 + u(rng);
    const double p = 1.0 / (1.0 + std::exp(-(-18.0 + 0.45 * mu + 0.5 * x)));
    Eigen::VectorXd cov(1);
    cov << x;
    c.patients.push_back({"p" + std::to_string(i + 1), cov, ntcp::normal_dvh(mu, sigma, grid), u(rng) < p ? 1 : 0});
  }
  return c;
}

inline ntcp::ModelSpec quick_spec(ntcp::ModelFamily f, int iterations, std::uint64_t seed) {
  ntcp::ModelSpec s;
  s.family = f;
  s.mcmc.iterations = iterations;
  s.mcmc.burn_in = iterations / 2;
  s.mcmc.seed = seed;
  s.mcmc.moves_per_iteration = 5;
  return s;
}

}  // namespace testkit
