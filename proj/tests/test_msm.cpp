#include <doctest.h>

#include <cmath>
#include <random>

#include "helpers.hpp"
#include "ntcp/errors.hpp"
#include "ntcp/msm.hpp"
#include "ntcp/numeric.hpp"

using namespace ntcp;

namespace {

// Bernoulli log-likelihood written out independently of the library helpers.
double bern(int y, double eta) { return y == 1 ? -std::log1p(std::exp(-eta)) : -std::log1p(std::exp(eta)); }

const MSMFit& shared_fit(ModelFamily f) {
  static std::map<ModelFamily, MSMFit> cache;
  auto it = cache.find(f);
  if (it == cache.end()) {
    static const Cohort c = testkit::toy_cohort(40, 8, 17);
    it = cache.emplace(f, fit_msm(c, testkit::quick_spec(f, 300, 5))).first;
  }
  return it->second;
}

const Cohort& shared_cohort() {
  static const Cohort c = testkit::toy_cohort(40, 8, 17);
  return c;
}

}  // namespace

TEST_CASE("replicated dataset is patient-major with scaled doses") {
  const auto c = testkit::toy_cohort(3, 4, 1);
  const auto rows = build_replicated_dataset(c);
  REQUIRE(rows.size() == 12);
  for (int i = 0; i < 3; ++i)
    for (int d = 1; d <= 4; ++d) {
      const auto& r = rows[static_cast<std::size_t>(i * 4 + d - 1)];
      CHECK(r.patient_index == i);
      CHECK(r.d_bin == d);
      CHECK(r.d_scaled == doctest::Approx((d - 1) / 3.0));
      CHECK(r.g == c.patients[static_cast<std::size_t>(i)].dvh.at(d));
      CHECK(r.y == c.patients[static_cast<std::size_t>(i)].outcome);
    }
}

TEST_CASE("quasi log-likelihood equals the sum of per-slice Bernoulli fits") {
  std::mt19937_64 rng(99);
  std::normal_distribution<double> z(0.0, 1.0);
  for (int t = 0; t < 20; ++t) {
    const auto c = testkit::toy_cohort(15 + t, 6, 100 + static_cast<std::uint64_t>(t));
    const auto rows = build_replicated_dataset(c);
    Eigen::VectorXd beta(1);
    beta << z(rng);
    const double a = z(rng), b = z(rng), s = z(rng);
    auto lambda = [&](double d, double g) { return a + b * d + s * g * g; };
    double slices = 0.0;
    for (int d = 1; d <= 6; ++d) {
      double slice = 0.0;
      for (const auto& p : c.patients)
        slice += bern(p.outcome, beta(0) * p.covariates(0) + lambda(c.grid.scaled(d), p.dvh.at(d)));
      slices += slice;
    }
    CHECK(std::abs(quasi_loglik(rows, beta, lambda) - slices) <= 1e-10);
  }
}

TEST_CASE("parametric design rows") {
  const auto lin = parametric_terms(ModelFamily::Linear, 0.3, 0.6);
  REQUIRE(lin.size() == 3);
  CHECK(lin(0) == 1.0);
  CHECK(lin(1) == 0.3);
  CHECK(lin(2) == 0.6);
  const auto poly = parametric_terms(ModelFamily::Polynomial, 0.3, 0.6);
  REQUIRE(poly.size() == 5);
  CHECK(poly(3) == doctest::Approx(0.09));
  CHECK(poly(4) == doctest::Approx(0.36));
  CHECK_THROWS_AS(parametric_terms(ModelFamily::AdditiveMonotone, 0.3, 0.6), InvalidParameter);
}

TEST_CASE("family names parse back") {
  for (auto f : {ModelFamily::Linear, ModelFamily::Polynomial, ModelFamily::AdditiveMonotone,
                 ModelFamily::BivariableMonotone})
    CHECK(parse_family(family_name(f)) == f);
  CHECK(parse_family("bivariable") == ModelFamily::BivariableMonotone);
  CHECK_THROWS_AS(parse_family("spline"), InvalidParameter);
}

TEST_CASE("model spec validation") {
  ModelSpec s;
  s.mcmc.burn_in = s.mcmc.iterations;
  CHECK_THROWS_AS(s.validate(), InvalidParameter);
  ModelSpec w;
  w.volume_warp = 0.0;
  CHECK_THROWS_AS(w.validate(), InvalidParameter);
  ModelSpec id;
  for (double g : {0.0, 0.25, 0.5, 1.0}) CHECK(id.surface_volume(g) == doctest::Approx(g));
  ModelSpec warp;
  warp.volume_warp = 0.3;
  CHECK(warp.surface_volume(0.5) == doctest::Approx(0.5));
  CHECK(warp.surface_volume(0.9) < 0.9);
  CHECK(warp.surface_volume(0.1) > 0.1);
}

TEST_CASE("fits are deterministic given the seed") {
  const auto c = testkit::toy_cohort(25, 6, 3);
  for (auto f : {ModelFamily::Linear, ModelFamily::BivariableMonotone}) {
    const auto a = fit_msm(c, testkit::quick_spec(f, 200, 42));
    const auto b = fit_msm(c, testkit::quick_spec(f, 200, 42));
    CHECK(a.beta_draws == b.beta_draws);
    CHECK(a.quasi_posterior_mean_surface == b.quasi_posterior_mean_surface);
    const auto d = fit_msm(c, testkit::quick_spec(f, 200, 43));
    CHECK_FALSE(a.beta_draws == d.beta_draws);
  }
}

TEST_CASE("draw counts follow burn-in and thinning") {
  const auto c = testkit::toy_cohort(20, 5, 8);
  auto spec = testkit::quick_spec(ModelFamily::AdditiveMonotone, 300, 1);
  spec.mcmc.burn_in = 100;
  spec.mcmc.thinning = 4;
  const auto fit = fit_msm(c, spec);
  CHECK(fit.draw_count() == 50);
  CHECK(fit.surface_draws.size() == 50);
}

TEST_CASE("monotone fits produce monotone draws and surfaces") {
  for (auto f : {ModelFamily::AdditiveMonotone, ModelFamily::BivariableMonotone}) {
    const auto& fit = shared_fit(f);
    std::vector<double> grid;
    for (int i = 0; i <= 15; ++i) grid.push_back(i / 15.0);
    for (const auto& s : fit.surface_draws) {
      const std::vector<MonotoneSurface> one{s};
      REQUIRE(is_monotone_sample(posterior_mean_on_grid<MonotoneSurface>(one, grid, grid)));
    }
    CHECK(is_monotone_sample(fit.quasi_posterior_mean_surface));
    CHECK(is_monotone_sample(pointwise_ntcp_grid(fit, shared_cohort(), grid, grid)));
  }
}

TEST_CASE("fit metrics identities") {
  for (auto f : {ModelFamily::Linear, ModelFamily::BivariableMonotone}) {
    const auto& fit = shared_fit(f);
    const auto& m = fit.metrics;
    CHECK(m.k_effective == doctest::Approx(m.deviance_mean - m.deviance_at_mean));
    CHECK(m.dic == doctest::Approx(m.deviance_at_mean + 2.0 * m.k_effective));
    CHECK(m.brier == doctest::Approx(100.0 * m.brier_raw));
    const auto rows = build_replicated_dataset(shared_cohort());
    double sq = 0.0;
    for (const auto& r : rows) {
      const double p = expit(fit.covariate_term(r.x) + fit.lambda_hat(r.d_scaled, r.g));
      sq += (r.y - p) * (r.y - p);
    }
    CHECK(m.brier_raw == doctest::Approx(sq / static_cast<double>(rows.size())).epsilon(1e-9));
  }
}

TEST_CASE("degenerate outcome warns but fits") {
  auto c = testkit::toy_cohort(12, 5, 2);
  for (auto& p : c.patients) p.outcome = 0;
  const auto fit = fit_msm(c, testkit::quick_spec(ModelFamily::Linear, 100, 1));
  bool warned = false;
  for (const auto& w : fit.diagnostics.warnings) warned |= w.find("degenerate") != std::string::npos;
  CHECK(warned);
}

TEST_CASE("pointwise NTCP averages fitted risks over the cohort") {
  const auto& fit = shared_fit(ModelFamily::BivariableMonotone);
  const auto& c = shared_cohort();
  double direct = 0.0;
  const double lam = fit.lambda_hat(c.grid.scaled(5), 0.4);
  for (const auto& p : c.patients) direct += expit(fit.covariate_term(p.covariates) + lam);
  CHECK(pointwise_ntcp(fit, c, 5, 0.4) == doctest::Approx(direct / c.size()).epsilon(1e-14));
  CHECK_THROWS_AS(pointwise_ntcp(fit, c, 0, 0.4), InvalidParameter);
  CHECK_THROWS_AS(pointwise_ntcp(fit, c, 5, 1.4), DomainError);
}

TEST_CASE("identity and q = 1 estimator identities") {
  const auto& c = shared_cohort();
  for (auto f : {ModelFamily::Linear, ModelFamily::AdditiveMonotone, ModelFamily::BivariableMonotone}) {
    const auto& fit = shared_fit(f);
    const int d = 4;
    double mean_risk = 0.0;
    for (const auto& p : c.patients)
      mean_risk += expit(fit.covariate_term(p.covariates) + fit.lambda_hat(c.grid.scaled(d), p.dvh.at(d)));
    mean_risk /= c.size();
    const auto id = stochastic_ntcp(fit, c, InterventionSpec::identity(d));
    CHECK(std::abs(id.ntcp - mean_risk) <= 1e-12);
    const auto q1 = stochastic_ntcp(fit, c, InterventionSpec::truncate_upper(d, 1.0));
    CHECK(std::abs(q1.ntcp - id.ntcp) <= 1e-12);
    CHECK(causal_risk_ratio(fit, c, InterventionSpec::identity(d)) == 1.0);
  }
}

TEST_CASE("empirical CDF and stratified weight model") {
  EmpiricalCdf f({0.0, 0.2, 0.2, 0.7, 1.0});
  CHECK(f(0.2) == doctest::Approx(0.6));
  CHECK(f(-0.1) == 0.0);
  CHECK(f(1.0) == 1.0);
  CHECK(f.mass_at_zero() == doctest::Approx(0.2));
  CHECK(f.mass_at_one() == doctest::Approx(0.2));
  CHECK_THROWS_AS(EmpiricalCdf(std::vector<double>{}), EmptyStratum);

  const auto& c = shared_cohort();
  const int d = 5;
  const auto wm = estimate_weight_model(c, d);
  CHECK(wm.stratum_count() == 2);
  for (double q : {0.1, 0.5, 0.8})
    for (double x : {0.0, 1.0}) {
      int n = 0, below = 0;
      for (const auto& p : c.patients)
        if (p.covariates(0) == x) {
          ++n;
          below += p.dvh.at(d) <= q;
        }
      Eigen::VectorXd xv(1);
      xv << x;
      CHECK(wm.cdf(q, xv) == doctest::Approx(static_cast<double>(below) / n));
    }
}

TEST_CASE("continuous covariates are cut at quartiles") {
  auto c = testkit::toy_cohort(40, 5, 31);
  std::mt19937_64 rng(1);
  std::normal_distribution<double> z(0.0, 1.0);
  c.covariate_names.push_back("x2");
  for (auto& p : c.patients) {
    Eigen::VectorXd v(2);
    v << p.covariates(0), z(rng);
    p.covariates = v;
  }
  WeightModelOptions o;
  o.covariates = std::vector<int>{1};
  const auto wm = estimate_weight_model(c, 3, o);
  CHECK(wm.stratum_count() == 4);
  int total = 0;
  for (const auto& [k, cdf] : wm.strata()) total += cdf.count();
  CHECK(total == 40);
}

TEST_CASE("truncation weights reproduce 1{g <= q} / F(q | x)") {
  const auto& c = shared_cohort();
  const auto& fit = shared_fit(ModelFamily::BivariableMonotone);
  const int d = 5;
  const double q = 0.6;
  const auto wm = estimate_weight_model(c, d);
  const auto est = stochastic_ntcp(fit, c, InterventionSpec::truncate_upper(d, q), wm);
  double within_stratum[2] = {0.0, 0.0};
  int counts[2] = {0, 0};
  for (int i = 0; i < c.size(); ++i) {
    const auto& p = c.patients[static_cast<std::size_t>(i)];
    const double expected = p.dvh.at(d) <= q ? 1.0 / wm.cdf(q, p.covariates) : 0.0;
    CHECK(est.weights[static_cast<std::size_t>(i)] == doctest::Approx(expected));
    within_stratum[static_cast<int>(p.covariates(0))] += est.weights[static_cast<std::size_t>(i)];
    ++counts[static_cast<int>(p.covariates(0))];
  }
  for (int s = 0; s < 2; ++s)
    if (wm.cdf(q, Eigen::VectorXd::Constant(1, s)) > 0.0) CHECK(within_stratum[s] == doctest::Approx(counts[s]));
  double wsum = 0.0, wmax = 0.0;
  for (double w : est.weights) {
    wsum += w;
    wmax = std::max(wmax, w);
  }
  CHECK(est.effective_sample_size == doctest::Approx(wsum / wmax));
  CHECK(est.max_weight == wmax);

  auto capped = InterventionSpec::truncate_upper(d, q);
  capped.weight_truncation_percentile = 50.0;
  const auto c50 = stochastic_ntcp(fit, c, capped, wm);
  CHECK(c50.max_weight <= est.max_weight);

  auto strict = InterventionSpec::truncate_upper(d, q);
  strict.positivity_threshold = 1.0;
  CHECK(stochastic_ntcp(fit, c, strict, wm).positivity_warning);
}

TEST_CASE("truncation lowers risk for a dose-increasing surface") {
  const auto& fit = shared_fit(ModelFamily::Linear);
  const auto e = compute_estimands(fit, shared_cohort(), InterventionSpec::truncate_upper(5, 0.5));
  CHECK(e.risk_ratio == doctest::Approx(e.ntcp_intervention / e.ntcp_observed));
  CHECK(e.risk_ratio < 1.0);
}

TEST_CASE("intervention validation") {
  DoseGrid g(5, 0.0, 10.0);
  CHECK_THROWS_AS(InterventionSpec::truncate_upper(2, 0.0).validate(g), InvalidParameter);
  CHECK_THROWS_AS(InterventionSpec::truncate_upper(6, 0.5).validate(g), InvalidParameter);
  CHECK_THROWS_AS(InterventionSpec::pointwise(2, 1.5).validate(g), InvalidParameter);
  CHECK_NOTHROW(InterventionSpec::identity(5).validate(g));
}

TEST_CASE("percentile interval interpolates order statistics") {
  std::vector<double> v{10, 9, 8, 7, 6, 5, 4, 3, 2, 1};
  const auto ci = percentile_interval(v, 0.9);
  CHECK(ci.lower == doctest::Approx(1.45));
  CHECK(ci.upper == doctest::Approx(9.55));
  CHECK_THROWS_AS(percentile_interval({}, 0.9), EmptyDraws);
  CHECK_THROWS_AS(percentile_interval(v, 1.0), InvalidParameter);
}

TEST_CASE("clustered bootstrap") {
  const auto c = testkit::toy_cohort(30, 6, 12);
  const auto spec = testkit::quick_spec(ModelFamily::Linear, 200, 1);
  const auto iv = InterventionSpec::truncate_upper(4, 0.6);
  BootstrapOptions o;
  o.n_boot = 12;
  o.seed = 9;
  o.workers = 2;
  const auto a = clustered_bootstrap(c, spec, iv, o);
  CHECK(a.replicates.size() == 12);
  CHECK(a.failures == 0);
  CHECK(a.ci_risk_ratio.lower <= a.ci_risk_ratio.upper);
  CHECK(a.ci_intervention.lower <= a.ci_intervention.upper);
  o.workers = 1;
  const auto b = clustered_bootstrap(c, spec, iv, o);
  for (int r = 0; r < 12; ++r)
    CHECK(a.replicates[static_cast<std::size_t>(r)].estimands.risk_ratio ==
          b.replicates[static_cast<std::size_t>(r)].estimands.risk_ratio);
  o.identical_streams = true;
  const auto same = clustered_bootstrap(c, spec, iv, o);
  for (const auto& r : same.replicates) CHECK(r.estimands.risk_ratio == same.replicates[0].estimands.risk_ratio);
  CHECK(same.ci_risk_ratio.upper - same.ci_risk_ratio.lower == 0.0);
}
