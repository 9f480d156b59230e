#include <algorithm>
#include <cctype>
#include <cmath>
#include <string>

#include "ntcp/errors.hpp"
#include "ntcp/msm.hpp"
#include "ntcp/numeric.hpp"

namespace ntcp {

std::vector<ReplicatedRow> build_replicated_dataset(const Cohort& cohort) {
  cohort.validate();
  const int n_bins = cohort.grid.n_bins();
  std::vector<ReplicatedRow> rows;
  rows.reserve(static_cast<std::size_t>(cohort.size()) * static_cast<std::size_t>(n_bins));
  for (int i = 0; i < cohort.size(); ++i) {
    const auto& pt = cohort.patients[static_cast<std::size_t>(i)];
    for (int d = 1; d <= n_bins; ++d)
      rows.push_back({i, pt.outcome, pt.covariates, d, cohort.grid.scaled(d), pt.dvh.at(d)});
  }
  return rows;
}

const char* family_name(ModelFamily f) {
  switch (f) {
    case ModelFamily::Linear: return "Linear";
    case ModelFamily::Polynomial: return "Polynomial";
    case ModelFamily::AdditiveMonotone: return "AdditiveMonotone";
    case ModelFamily::BivariableMonotone: return "BivariableMonotone";
  }
  return "unknown";
}

ModelFamily parse_family(const std::string& name) {
  std::string s;
  for (char c : name) s.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
  if (s == "linear" || s == "logistic") return ModelFamily::Linear;
  if (s == "polynomial") return ModelFamily::Polynomial;
  if (s == "additive" || s == "additivemonotone") return ModelFamily::AdditiveMonotone;
  if (s == "bivariable" || s == "bivariablemonotone") return ModelFamily::BivariableMonotone;
  throw InvalidParameter("unknown model family '" + name + "'");
}

int parametric_term_count(ModelFamily f) {
  switch (f) {
    case ModelFamily::Linear: return 3;
    case ModelFamily::Polynomial: return 5;
    default: return 0;
  }
}

Eigen::VectorXd parametric_terms(ModelFamily f, double d_scaled, double g) {
  if (f == ModelFamily::Linear) return Eigen::Vector3d(1.0, d_scaled, g);
  if (f == ModelFamily::Polynomial) {
    Eigen::VectorXd t(5);
    t << 1.0, d_scaled, g, d_scaled * d_scaled, g * g;
    return t;
  }
  throw InvalidParameter(std::string("parametric_terms: ") + family_name(f) + " is not parametric");
}

void ModelSpec::validate() const {
  if (mcmc.iterations <= mcmc.burn_in || mcmc.burn_in < 0)
    throw InvalidParameter("mcmc: require iterations > burn_in >= 0");
  if (mcmc.thinning < 1) throw InvalidParameter("mcmc: thinning must be >= 1");
  if (mcmc.moves_per_iteration < 1 || mcmc.parametric_updates_per_iteration < 1 || mcmc.adapt_interval < 1)
    throw InvalidParameter("mcmc: per-iteration update counts must be >= 1");
  if (!(coefficient_prior_sd > 0.0)) throw InvalidParameter("coefficient_prior_sd must be > 0");
  if (!(volume_warp > 0.0 && std::isfinite(volume_warp))) throw InvalidParameter("volume_warp must be > 0");
  prior.validate();
}

double ModelSpec::surface_volume(double g) const {
  if (volume_warp == 1.0 || !is_monotone(family)) return g;
  if (g <= 0.0) return 0.0;
  if (g >= 1.0) return 1.0;
  return normal_cdf(volume_warp * normal_quantile(g));
}

std::vector<int> ModelSpec::covariate_indices(const Cohort& cohort) const {
  std::vector<int> idx;
  if (!covariates) {
    for (int j = 0; j < cohort.covariate_count(); ++j) idx.push_back(j);
    return idx;
  }
  for (int j : *covariates) {
    if (j < 0 || j >= cohort.covariate_count())
      throw InvalidParameter("model covariate index " + std::to_string(j) + " out of range");
    idx.push_back(j);
  }
  return idx;
}

double quasi_loglik(std::span<const ReplicatedRow> rows, const Eigen::VectorXd& beta,
                    const std::function<double(double, double)>& lambda) {
  double total = 0.0;
  for (const auto& r : rows) {
    if (r.x.size() != beta.size())
      throw InvalidParameter("quasi_loglik: beta has " + std::to_string(beta.size()) + " entries, rows carry " +
                             std::to_string(r.x.size()) + " covariates");
    const double eta = r.x.dot(beta) + lambda(r.d_scaled, r.g);
    if (std::isnan(eta)) throw NumericalError("quasi_loglik: NaN linear predictor");
    total += bernoulli_loglik(r.y, eta);
  }
  return total;
}

double quasi_loglik(std::span<const ReplicatedRow> rows, const Eigen::VectorXd& beta, const MonotoneSurface& surface) {
  return quasi_loglik(rows, beta, [&](double d, double g) { return surface.evaluate(d, g); });
}

double quasi_loglik(std::span<const ReplicatedRow> rows, const Eigen::VectorXd& beta, ModelFamily family,
                    const Eigen::VectorXd& coefficients) {
  if (coefficients.size() != parametric_term_count(family))
    throw InvalidParameter("quasi_loglik: wrong number of coefficients for family");
  return quasi_loglik(rows, beta,
                      [&](double d, double g) { return parametric_terms(family, d, g).dot(coefficients); });
}

double MSMFit::lambda_hat(double d_scaled, double g) const {
  if (is_monotone(spec.family)) {
    if (surface_draws.empty()) throw EmptyDraws("MSMFit has no surface draws");
    double sum = 0.0;
    const double u = spec.surface_volume(g);
    for (const auto& s : surface_draws) sum += s.evaluate(d_scaled, u);
    return sum / static_cast<double>(surface_draws.size());
  }
  return parametric_terms(spec.family, d_scaled, g).dot(coefficient_mean);
}

Eigen::MatrixXd MSMFit::lambda_hat_grid(std::span<const double> d_scaled, std::span<const double> g) const {
  if (is_monotone(spec.family)) {
    std::vector<double> u;
    for (double v : g) u.push_back(spec.surface_volume(v));
    return posterior_mean_on_grid(std::span<const MonotoneSurface>(surface_draws), d_scaled, std::span<const double>(u));
  }
  Eigen::MatrixXd out(static_cast<Eigen::Index>(d_scaled.size()), static_cast<Eigen::Index>(g.size()));
  for (std::size_t a = 0; a < d_scaled.size(); ++a)
    for (std::size_t b = 0; b < g.size(); ++b)
      out(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b)) = lambda_hat(d_scaled[a], g[b]);
  return out;
}

double MSMFit::covariate_term(const Eigen::VectorXd& x) const {
  double s = 0.0;
  for (std::size_t j = 0; j < covariate_indices.size(); ++j)
    s += beta_mean(static_cast<Eigen::Index>(j)) * x(covariate_indices[j]);
  return s;
}

void MSMFit::summarize() {
  beta_mean = beta_draws.rows() > 0 ? Eigen::VectorXd(beta_draws.colwise().mean().transpose())
                                    : Eigen::VectorXd::Zero(beta_draws.cols());
  if (coefficient_draws.rows() > 0) coefficient_mean = coefficient_draws.colwise().mean().transpose();
  surface_grid_d.clear();
  for (int k = 1; k <= grid.n_bins(); ++k) surface_grid_d.push_back(grid.scaled(k));
  surface_grid_g.clear();
  constexpr int kVolumePoints = 26;
  for (int b = 0; b < kVolumePoints; ++b) surface_grid_g.push_back(static_cast<double>(b) / (kVolumePoints - 1));
  quasi_posterior_mean_surface = lambda_hat_grid(surface_grid_d, surface_grid_g);
}

FitMetrics fit_metrics(const MSMFit& fit, std::span<const ReplicatedRow> rows) {
  const int draws = fit.draw_count();
  if (draws == 0) throw EmptyDraws("fit_metrics: fit has no draws");
  const auto nrows = rows.size();
  std::vector<double> lambda_sum(nrows, 0.0);
  double deviance_sum = 0.0;
  for (int s = 0; s < draws; ++s) {
    double ll = 0.0;
    for (std::size_t r = 0; r < nrows; ++r) {
      const auto& row = rows[r];
      double cov = 0.0;
      for (std::size_t j = 0; j < fit.covariate_indices.size(); ++j)
        cov += fit.beta_draws(s, static_cast<Eigen::Index>(j)) * row.x(fit.covariate_indices[j]);
      double lambda;
      if (is_monotone(fit.spec.family))
        lambda = fit.surface_draws[static_cast<std::size_t>(s)].evaluate(row.d_scaled, fit.spec.surface_volume(row.g));
      else
        lambda = parametric_terms(fit.spec.family, row.d_scaled, row.g).dot(fit.coefficient_draws.row(s).transpose());
      lambda_sum[r] += lambda;
      ll += bernoulli_loglik(row.y, cov + lambda);
    }
    deviance_sum += -2.0 * ll;
  }
  FitMetrics m;
  m.deviance_mean = deviance_sum / draws;
  double ll_at_mean = 0.0;
  double sq = 0.0;
  for (std::size_t r = 0; r < nrows; ++r) {
    const double eta = fit.covariate_term(rows[r].x) + lambda_sum[r] / draws;
    ll_at_mean += bernoulli_loglik(rows[r].y, eta);
    const double resid = rows[r].y - expit(eta);
    sq += resid * resid;
  }
  m.deviance_at_mean = -2.0 * ll_at_mean;
  m.k_effective = m.deviance_mean - m.deviance_at_mean;
  m.dic = m.deviance_at_mean + 2.0 * m.k_effective;
  m.brier_raw = sq / static_cast<double>(nrows);
  m.brier = 100.0 * m.brier_raw;
  return m;
}

}  // namespace ntcp
