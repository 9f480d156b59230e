#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <random>

#include "ntcp/errors.hpp"
#include "ntcp/numeric.hpp"
#include "ntcp/parallel.hpp"
#include "ntcp/sim.hpp"

namespace ntcp::sim {

std::optional<double> sigma_from(double mu, double g, double d_gy) {
  if (g == 0.5) throw SingularSolve("sigma_from: g = 0.5 leaves sigma unconstrained");
  if (!(g > 0.0 && g < 1.0)) return std::nullopt;
  const double sigma = (d_gy - mu) / normal_quantile(1.0 - g);
  if (!std::isfinite(sigma) || !(sigma > 0.0)) return std::nullopt;
  return sigma;
}

std::optional<MuInterval> mu_bounds(double g, double d_gy, const Dgp& dgp) {
  if (!(g > 0.0 && g < 1.0)) return std::nullopt;
  const double z = normal_quantile(1.0 - g);
  const double m1 = d_gy - dgp.b_min * z;
  const double m2 = d_gy - dgp.b_max * z;
  const double lo = std::max(std::min(m1, m2), dgp.a_min);
  const double hi = std::min(std::max(m1, m2), dgp.a_max);
  if (!(lo < hi)) return std::nullopt;
  return MuInterval{lo, hi};
}

double jacobian(double mu, double g, double d_gy, const OracleConfig& oracle) {
  const auto sigma = sigma_from(mu, g, d_gy);
  if (!sigma) throw DomainError("jacobian: no positive sigma solves the volume equation");
  const double s = *sigma;
  auto f = [&](double t) {
    const double u = (t - mu) / s;
    return normal_pdf(u) * (1.0 - u * u);
  };
  std::vector<double> cuts;
  for (double k : {-8.0, -3.0, -1.0, 0.0, 1.0, 3.0, 8.0}) cuts.push_back(mu + k * s);
  const auto r = quadrature::integrate(f, 0.0, d_gy, oracle.jacobian, std::span<const double>(cuts));
  if (std::abs(r.value) < 1e-14) throw SingularJacobian("jacobian: inner integral vanishes");
  return s * s / std::abs(r.value);
}

namespace {

// Integral over [lo, hi] of f(mu) times the unnormalized Beta kernel of the
// mean-dose law. A power substitution removes an endpoint singularity when a
// shape parameter is below 1.
template <typename F>
double integrate_mu(F&& f, double lo, double hi, double alpha, double beta, const Dgp& dgp,
                    const quadrature::Options& opts) {
  const double a = dgp.a_min;
  const double b = dgp.a_max;
  if (alpha < 1.0) {
    auto h = [&](double u) {
      const double mu = std::min(a + std::pow(u, 1.0 / alpha), b);
      return std::pow(b - mu, beta - 1.0) * f(mu) / alpha;
    };
    return quadrature::integrate(h, std::pow(lo - a, alpha), std::pow(hi - a, alpha), opts).value;
  }
  if (beta < 1.0) {
    auto h = [&](double v) {
      const double mu = std::max(b - std::pow(v, 1.0 / beta), a);
      return std::pow(mu - a, alpha - 1.0) * f(mu) / beta;
    };
    return quadrature::integrate(h, std::pow(b - hi, beta), std::pow(b - lo, beta), opts).value;
  }
  auto h = [&](double mu) { return std::pow(mu - a, alpha - 1.0) * std::pow(b - mu, beta - 1.0) * f(mu); };
  return quadrature::integrate(h, lo, hi, opts).value;
}

struct AtomIntegrals {
  double num = 0.0;
  double den = 0.0;
};

// int expit(eta) w and int w over mu at fixed (d_gy, g), w = Beta kernel x |J|.
AtomIntegrals mu_integrals(double d_gy, double g, const MuInterval& bounds, const Dgp::Atom& atom, const Dgp& dgp,
                           const OracleConfig& oracle) {
  const auto [alpha, beta] = dgp.shapes(atom.x1, atom.x2);
  auto jac = [&](double mu) { return jacobian(mu, g, d_gy, oracle); };
  auto risk = [&](double mu) { return expit(dgp.outcome_eta(mu, atom.x1, atom.x2)) * jac(mu); };
  AtomIntegrals out;
  out.num = integrate_mu(risk, bounds.lower, bounds.upper, alpha, beta, dgp, oracle.integration);
  out.den = integrate_mu(jac, bounds.lower, bounds.upper, alpha, beta, dgp, oracle.integration);
  return out;
}

}  // namespace

std::optional<double> true_pointwise_ntcp_gy(double d_gy, double g, const Dgp& dgp, const OracleConfig& oracle) {
  dgp.validate();
  const auto bounds = mu_bounds(g, d_gy, dgp);
  if (!bounds) return std::nullopt;
  double total = 0.0;
  for (const auto& atom : dgp.covariate_atoms(oracle.hermite_order)) {
    const AtomIntegrals r = mu_integrals(d_gy, g, *bounds, atom, dgp, oracle);
    if (!(r.den > 0.0)) throw DegenerateDenominator("true_pointwise_ntcp: zero conditional mass");
    total += atom.weight * r.num / r.den;
  }
  return total;
}

std::optional<double> true_pointwise_ntcp(int d_bin, double g, const Dgp& dgp, const OracleConfig& oracle) {
  if (d_bin < 1 || d_bin > dgp.grid.n_bins()) throw InvalidParameter("dose bin out of range");
  return true_pointwise_ntcp_gy(dgp.grid.lower_edge(d_bin), g, dgp, oracle);
}

double true_stochastic_ntcp(const Dgp& dgp, int d_star, double q, const OracleConfig& oracle) {
  dgp.validate();
  if (d_star < 1 || d_star > dgp.grid.n_bins()) throw InvalidParameter("dose bin out of range");
  if (!(q > 0.0 && q <= 1.0)) throw InvalidParameter("threshold q must lie in (0, 1]");
  const double d_gy = dgp.grid.lower_edge(d_star);
  const std::vector<double> cuts{0.5};
  double total = 0.0;
  for (const auto& atom : dgp.covariate_atoms(oracle.hermite_order)) {
    std::map<double, AtomIntegrals> cache;
    auto inner = [&](double g) -> const AtomIntegrals& {
      auto it = cache.find(g);
      if (it != cache.end()) return it->second;
      AtomIntegrals r;
      if (const auto bounds = mu_bounds(g, d_gy, dgp)) r = mu_integrals(d_gy, g, *bounds, atom, dgp, oracle);
      return cache.emplace(g, r).first->second;
    };
    const double num =
        quadrature::integrate([&](double g) { return inner(g).num; }, 0.0, q, oracle.integration,
                              std::span<const double>(cuts))
            .value;
    const double den =
        quadrature::integrate([&](double g) { return inner(g).den; }, 0.0, q, oracle.integration,
                              std::span<const double>(cuts))
            .value;
    if (!(den > 0.0)) throw DegenerateDenominator("true_stochastic_ntcp: no mass below the threshold");
    total += atom.weight * num / den;
  }
  return total;
}

McEstimate mc_truth_oracle(const Dgp& dgp, int d_star, std::optional<double> q, std::int64_t n_draws,
                           std::uint64_t seed) {
  dgp.validate();
  if (d_star < 1 || d_star > dgp.grid.n_bins()) throw InvalidParameter("dose bin out of range");
  if (n_draws < 1) throw InvalidParameter("n_draws must be >= 1");
  const double d_gy = dgp.grid.lower_edge(d_star);
  const bool truncate = q && *q < 1.0;
  Rng rng(seed);
  std::int64_t proposals = 0;
  std::int64_t accepted = 0;
  double sum = 0.0;
  double sumsq = 0.0;
  while (proposals < n_draws) {
    Latent l = draw_latent(dgp, rng);
    ++proposals;
    bool ok = !truncate || normal_sf((d_gy - l.mu) / l.sigma) <= *q;
    while (!ok && proposals < n_draws) {
      redraw_dose(dgp, l, rng);
      ++proposals;
      ok = normal_sf((d_gy - l.mu) / l.sigma) <= *q;
    }
    if (!ok) break;
    const double p = expit(dgp.outcome_eta(l.mu, l.x(0), dgp.has_x2 ? l.x(1) : 0.0));
    sum += p;
    sumsq += p * p;
    ++accepted;
  }
  if (accepted < 1000)
    throw InsufficientAcceptance("mc_truth_oracle: only " + std::to_string(accepted) + " accepted draws");
  McEstimate est;
  est.accepted = accepted;
  est.value = sum / static_cast<double>(accepted);
  const double var = std::max(0.0, sumsq / static_cast<double>(accepted) - est.value * est.value);
  est.se = std::sqrt(var / static_cast<double>(accepted));
  return est;
}

std::vector<std::optional<McEstimate>> mc_pointwise_oracle(const Dgp& dgp, const std::vector<PointQuery>& queries,
                                                           std::int64_t n_draws, std::uint64_t seed, double h,
                                                           std::int64_t min_accepted) {
  dgp.validate();
  if (dgp.has_x2) throw InvalidParameter("mc_pointwise_oracle: requires a design with a binary covariate only");
  if (!(h > 0.0)) throw InvalidParameter("band half-width must be > 0");
  std::vector<double> doses;
  for (const auto& qy : queries) doses.push_back(qy.d_gy);
  std::sort(doses.begin(), doses.end());
  doses.erase(std::unique(doses.begin(), doses.end()), doses.end());
  std::vector<std::size_t> dose_of;
  for (const auto& qy : queries)
    dose_of.push_back(static_cast<std::size_t>(std::lower_bound(doses.begin(), doses.end(), qy.d_gy) - doses.begin()));

  struct Acc {
    double sum = 0.0;
    double sumsq = 0.0;
    std::int64_t count = 0;
  };
  std::vector<std::array<Acc, 2>> acc(queries.size());
  std::vector<double> gval(doses.size());
  Rng rng(seed);
  for (std::int64_t s = 0; s < n_draws; ++s) {
    const Latent l = draw_latent(dgp, rng);
    for (std::size_t k = 0; k < doses.size(); ++k) gval[k] = normal_sf((doses[k] - l.mu) / l.sigma);
    const double p = expit(dgp.outcome_eta(l.mu, l.x(0), 0.0));
    const int stratum = l.x(0) == 1.0 ? 1 : 0;
    for (std::size_t j = 0; j < queries.size(); ++j) {
      if (std::abs(gval[dose_of[j]] - queries[j].g) > h) continue;
      Acc& a = acc[j][static_cast<std::size_t>(stratum)];
      a.sum += p;
      a.sumsq += p * p;
      ++a.count;
    }
  }
  std::vector<std::optional<McEstimate>> out(queries.size());
  for (std::size_t j = 0; j < queries.size(); ++j) {
    const auto& a = acc[j];
    if (a[0].count + a[1].count < min_accepted) continue;
    McEstimate est;
    double var = 0.0;
    bool ok = true;
    for (int x = 0; x <= 1; ++x) {
      const double w = x == 1 ? dgp.p_x1 : 1.0 - dgp.p_x1;
      if (w == 0.0) continue;
      const Acc& s = a[static_cast<std::size_t>(x)];
      if (s.count < 2) {
        ok = false;
        break;
      }
      const double m = s.sum / static_cast<double>(s.count);
      const double v = std::max(0.0, s.sumsq / static_cast<double>(s.count) - m * m);
      est.value += w * m;
      var += w * w * v / static_cast<double>(s.count);
      est.accepted += s.count;
    }
    if (!ok) continue;
    est.se = std::sqrt(var);
    out[j] = est;
  }
  return out;
}

EvalGrid bin_grid(const DoseGrid& grid) {
  EvalGrid e;
  const int n = grid.n_bins();
  for (int k = 1; k <= n; ++k) e.d_scaled.push_back(grid.scaled(k));
  for (int k = 0; k < n; ++k) e.g.push_back(static_cast<double>(k) / (n - 1));
  return e;
}

EvalGrid uniform_grid(int n) {
  if (n < 2) throw InvalidParameter("uniform_grid: need at least 2 points");
  EvalGrid e;
  for (int k = 0; k < n; ++k) {
    e.d_scaled.push_back(static_cast<double>(k) / (n - 1));
    e.g.push_back(static_cast<double>(k) / (n - 1));
  }
  return e;
}

int TruthGrid::evaluable() const {
  int c = 0;
  for (Eigen::Index i = 0; i < values.size(); ++i) c += std::isnan(values.data()[i]) ? 0 : 1;
  return c;
}

TruthGrid compute_truth(const Dgp& dgp, const EvalGrid& grid, int d_star, double q, const OracleConfig& oracle,
                        int workers) {
  TruthGrid t;
  t.grid = grid;
  const auto nd = static_cast<Eigen::Index>(grid.d_scaled.size());
  const auto ng = static_cast<Eigen::Index>(grid.g.size());
  t.values.resize(nd, ng);
  parallel_for(static_cast<int>(nd * ng), workers, [&](int cell) {
    const Eigen::Index a = cell / ng;
    const Eigen::Index b = cell % ng;
    const double d_gy = dgp.grid.gy_from_scaled(grid.d_scaled[static_cast<std::size_t>(a)]);
    const auto v = true_pointwise_ntcp_gy(d_gy, grid.g[static_cast<std::size_t>(b)], dgp, oracle);
    t.values(a, b) = v ? *v : std::numeric_limits<double>::quiet_NaN();
  });
  t.stochastic = true_stochastic_ntcp(dgp, d_star, q, oracle);
  return t;
}

}  // namespace ntcp::sim
