#include <doctest.h>

#include <cmath>
#include <random>

#include "helpers.hpp"
#include "ntcp/errors.hpp"
#include "ntcp/numeric.hpp"
#include "ntcp/sim.hpp"

using namespace ntcp;
using namespace ntcp::sim;

TEST_CASE("sigma_from inverts the normal DVH") {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int t = 0; t < 500; ++t) {
    const double mu = 35.0 + 10.0 * u(rng);
    const double sigma = 1.0 + u(rng);
    const double d = 30.0 + 20.0 * u(rng);
    const double g = 1.0 - normal_cdf((d - mu) / sigma);
    if (g < 1e-6 || g > 1.0 - 1e-6 || std::abs(g - 0.5) < 1e-3) continue;
    const auto s = sigma_from(mu, g, d);
    REQUIRE(s.has_value());
    CHECK(*s == doctest::Approx(sigma).epsilon(1e-7));
  }
  CHECK_THROWS_AS(sigma_from(40.0, 0.5, 38.0), SingularSolve);
  // g above one half needs d < mu
  CHECK_FALSE(sigma_from(40.0, 0.8, 42.0).has_value());
}

TEST_CASE("mu_bounds brackets the admissible mean doses") {
  Dgp dgp;
  std::mt19937_64 rng(6);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  int checked = 0;
  for (int t = 0; t < 300; ++t) {
    const double g = 0.02 + 0.96 * u(rng);
    const double d = 34.0 + 12.0 * u(rng);
    if (std::abs(g - 0.5) < 1e-3) continue;
    const auto b = mu_bounds(g, d, dgp);
    // Independent scan over a fine mu grid.
    double lo = INFINITY, hi = -INFINITY;
    for (int k = 0; k <= 20000; ++k) {
      const double mu = dgp.a_min + (dgp.a_max - dgp.a_min) * k / 20000.0;
      const auto s = sigma_from(mu, g, d);
      if (s && *s >= dgp.b_min && *s <= dgp.b_max) {
        lo = std::min(lo, mu);
        hi = std::max(hi, mu);
      }
    }
    if (!b) {
      CHECK((lo == INFINITY || hi - lo < 2e-3));
      continue;
    }
    ++checked;
    CHECK(b->lower == doctest::Approx(lo).epsilon(1e-3));
    CHECK(b->upper == doctest::Approx(hi).epsilon(1e-3));
  }
  CHECK(checked > 50);
  CHECK_FALSE(mu_bounds(0.0, 40.0, dgp).has_value());
  CHECK_FALSE(mu_bounds(1.0, 40.0, dgp).has_value());
}

TEST_CASE("jacobian agrees with a finite difference of sigma in g") {
  Dgp dgp;
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  int n = 0;
  while (n < 100) {
    const double mu = 35.0 + 10.0 * u(rng);
    const double sigma = 1.0 + u(rng);
    const double d = 30.0 + 20.0 * u(rng);
    const double g = 1.0 - normal_cdf((d - mu) / sigma);
    if (g < 1e-3 || g > 1.0 - 1e-3 || std::abs(g - 0.5) < 0.02) continue;
    const double h = 1e-6 * std::min(g, 1.0 - g);
    const auto sp = sigma_from(mu, g + h, d);
    const auto sm = sigma_from(mu, g - h, d);
    REQUIRE(sp.has_value());
    REQUIRE(sm.has_value());
    const double fd = std::abs((*sp - *sm) / (2.0 * h));
    CHECK(std::abs(jacobian(mu, g, d) - fd) <= 1e-4 * fd);
    ++n;
  }
}

TEST_CASE("covariate atoms are a probability law") {
  Dgp a;
  const auto atoms = a.covariate_atoms(24);
  REQUIRE(atoms.size() == 2);
  CHECK(atoms[0].weight + atoms[1].weight == doctest::Approx(1.0));
  Dgp b = Sim2Config{500, Scenario::Strong, 1}.dgp();
  REQUIRE(b.has_x2);
  double w = 0.0, m2 = 0.0;
  for (const auto& at : b.covariate_atoms(24)) {
    w += at.weight;
    m2 += at.weight * at.x2 * at.x2;
  }
  CHECK(w == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(m2 == doctest::Approx(1.0).epsilon(1e-10));
}

TEST_CASE("binary mixture shapes") {
  Dgp d;
  auto [a1, b1] = d.shapes(1.0, 0.0);
  auto [a0, b0] = d.shapes(0.0, 0.0);
  CHECK(a1 == doctest::Approx(2.0));
  CHECK(b1 == doctest::Approx(4.0 / 3.0));
  CHECK(a0 == doctest::Approx(4.0 / 3.0));
  CHECK(b0 == doctest::Approx(2.0));
}

TEST_CASE("cohort generation is deterministic and matches the DGP") {
  Sim1Config cfg;
  cfg.n = 50;
  cfg.seed = 11;
  const auto a = generate_cohort_sim1(cfg);
  const auto b = generate_cohort_sim1(cfg);
  REQUIRE(a.cohort.size() == 50);
  for (int i = 0; i < 50; ++i) {
    const auto& pa = a.cohort.patients[static_cast<std::size_t>(i)];
    const auto& pb = b.cohort.patients[static_cast<std::size_t>(i)];
    CHECK(pa.dvh.g() == pb.dvh.g());
    CHECK(pa.outcome == pb.outcome);
    const auto& l = a.latents[static_cast<std::size_t>(i)];
    CHECK(l.mu >= 35.0);
    CHECK(l.mu <= 45.0);
    CHECK(l.sigma >= 1.0);
    CHECK(l.sigma <= 2.0);
    for (int d = 1; d <= 26; ++d)
      CHECK(pa.dvh.at(d) == doctest::Approx(1.0 - normal_cdf((a.cohort.grid.lower_edge(d) - l.mu) / l.sigma)));
  }
  cfg.seed = 12;
  CHECK_FALSE(generate_cohort_sim1(cfg).cohort.patients[0].dvh.g() == a.cohort.patients[0].dvh.g());
}

TEST_CASE("stochastic oracle agrees with brute-force Monte Carlo") {
  for (auto dgp : {Sim1Config{}.dgp(), Sim2Config{500, Scenario::Strong, 1}.dgp()}) {
    for (double q : {0.5, 0.8}) {
      const double exact = true_stochastic_ntcp(dgp, 14, q);
      const auto mc = mc_truth_oracle(dgp, 14, q, 400000, 21);
      CHECK(std::abs(exact - mc.value) <= 4.0 * mc.se);
    }
    const double identity = true_stochastic_ntcp(dgp, 14, 1.0);
    const auto mc = mc_truth_oracle(dgp, 14, std::nullopt, 400000, 22);
    CHECK(std::abs(identity - mc.value) <= 4.0 * mc.se);
  }
}

TEST_CASE("pointwise oracle agrees with the band estimate") {
  const Dgp dgp = Sim1Config{}.dgp();
  std::vector<PointQuery> qs{{38.0, 0.3}, {40.0, 0.6}, {42.0, 0.2}};
  const auto mc = mc_pointwise_oracle(dgp, qs, 2000000, 31, 0.005, 2000);
  for (std::size_t i = 0; i < qs.size(); ++i) {
    const auto exact = true_pointwise_ntcp_gy(qs[i].d_gy, qs[i].g, dgp);
    REQUIRE(exact.has_value());
    REQUIRE(mc[i].has_value());
    CHECK(std::abs(*exact - mc[i]->value) <= 0.01 + 3.0 * mc[i]->se);
  }
  CHECK_FALSE(true_pointwise_ntcp_gy(30.0, 0.01, dgp).has_value());
}

TEST_CASE("evaluation grids") {
  const auto u = uniform_grid(5);
  REQUIRE(u.d_scaled.size() == 5);
  CHECK(u.g[4] == 1.0);
  CHECK(u.d_scaled[2] == 0.5);
  const auto b = bin_grid(DoseGrid(26, 30.0, 50.0));
  CHECK(b.d_scaled.size() == 26);
  CHECK(b.g.size() == 26);
}

TEST_CASE("tiny experiment runs and reports every family") {
  ExperimentConfig cfg;
  cfg.n = 40;
  cfg.replicates = 2;
  cfg.mcmc.iterations = 100;
  cfg.mcmc.burn_in = 50;
  cfg.mcmc.moves_per_iteration = 5;
  cfg.workers = 1;
  const auto truth = compute_truth(cfg.dgp, uniform_grid(4), cfg.d_star, cfg.q);
  CHECK(truth.evaluable() > 0);
  const auto r = run_experiment(cfg, truth);
  REQUIRE(r.families.size() == 4);
  for (const auto& f : r.families) {
    CHECK(f.replicates_ok == 2);
    CHECK(std::isfinite(f.abs_bias));
  }
  const auto csv = report_csv(r);
  CHECK(csv.rfind("n,model,abs_bias", 0) == 0);
  cfg.workers = 2;
  CHECK(report_csv(run_experiment(cfg, truth)) == csv);
}

TEST_CASE("truncation oracle edge cases") {
  const Dgp dgp = Sim1Config{}.dgp();
  CHECK_THROWS_AS(mc_truth_oracle(dgp, 14, 1e-9, 100000, 3), InsufficientAcceptance);
  const auto id = mc_truth_oracle(dgp, 14, std::nullopt, 1000000, 4);
  CHECK(id.se <= 0.0005);
  CHECK(true_stochastic_ntcp(dgp, 14, 0.8) <= true_stochastic_ntcp(dgp, 14, 1.0));
}

TEST_CASE("true pointwise surface is monotone on the evaluable region") {
  const Dgp dgp = Sim1Config{}.dgp();
  const auto t = compute_truth(dgp, uniform_grid(9), 14, 0.8);
  int compared = 0;
  for (Eigen::Index i = 0; i < t.values.rows(); ++i)
    for (Eigen::Index j = 0; j < t.values.cols(); ++j) {
      const double v = t.values(i, j);
      if (std::isnan(v)) continue;
      if (j > 0 && !std::isnan(t.values(i, j - 1))) {
        CHECK(v >= t.values(i, j - 1) - 1e-9);
        ++compared;
      }
      if (i > 0 && !std::isnan(t.values(i - 1, j))) {
        CHECK(v >= t.values(i - 1, j) - 1e-9);
        ++compared;
      }
    }
  CHECK(compared > 10);
}

TEST_CASE("larger mean dose dominates at equal sigma") {
  const DoseGrid grid(26, 30.0, 50.0);
  for (double sigma : {1.0, 1.5, 2.0})
    for (double mu = 35.0; mu < 45.0; mu += 0.5)
      CHECK(stochastically_dominates(normal_dvh(mu, sigma, grid), normal_dvh(mu + 0.5, sigma, grid)));
}

namespace {

// Newton-Raphson logistic fit of y on (1, columns); returns coefficients and standard errors.
std::pair<Eigen::VectorXd, Eigen::VectorXd> logistic_refit(const Eigen::MatrixXd& x, const Eigen::VectorXi& y) {
  Eigen::MatrixXd d(x.rows(), x.cols() + 1);
  d << Eigen::VectorXd::Ones(x.rows()), x;
  Eigen::VectorXd b = Eigen::VectorXd::Zero(d.cols());
  Eigen::MatrixXd info;
  for (int it = 0; it < 30; ++it) {
    const Eigen::VectorXd p = (d * b).unaryExpr([](double e) { return expit(e); });
    const Eigen::VectorXd w = p.array() * (1.0 - p.array());
    info = d.transpose() * w.asDiagonal() * d;
    b += info.ldlt().solve(d.transpose() * (y.cast<double>() - p));
  }
  return {b, info.inverse().diagonal().cwiseSqrt()};
}

std::pair<Eigen::VectorXd, Eigen::VectorXd> refit(Scenario s, int n) {
  const auto sc = generate_cohort_sim2(Sim2Config{n, s, 77});
  Eigen::MatrixXd x(n, 3);
  Eigen::VectorXi y(n);
  for (int i = 0; i < n; ++i) {
    const auto& l = sc.latents[static_cast<std::size_t>(i)];
    x.row(i) << l.mu, l.x(0), l.x(1);
    y(i) = sc.cohort.patients[static_cast<std::size_t>(i)].outcome;
  }
  return logistic_refit(x, y);
}

}  // namespace

TEST_CASE("sim2 scenarios set the covariate-outcome dependence") {
  const auto [b0, se0] = refit(Scenario::NoConfounding, 100000);
  CHECK(std::abs(b0(2)) <= 3.0 * se0(2));
  CHECK(std::abs(b0(3)) <= 3.0 * se0(3));
  CHECK(b0(1) == doctest::Approx(0.45).epsilon(0.1));
  const auto [bw, sew] = refit(Scenario::Weak, 20000);
  const auto [bs, ses] = refit(Scenario::Strong, 20000);
  CHECK(std::abs(bs(3)) > std::abs(bw(3)));
}
