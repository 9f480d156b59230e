#include <algorithm>
#include <cmath>
#include <string>

#include "ntcp/errors.hpp"
#include "ntcp/msm.hpp"
#include "ntcp/numeric.hpp"

namespace ntcp {
namespace {

void check_d_bin(const DoseGrid& grid, int d_bin) {
  if (d_bin < 1 || d_bin > grid.n_bins())
    throw InvalidParameter("dose bin " + std::to_string(d_bin) + " outside 1.." + std::to_string(grid.n_bins()));
}

void check_fit_cohort(const MSMFit& fit, const Cohort& cohort) {
  if (!(fit.grid == cohort.grid)) throw GridMismatch("fit and cohort use different dose grids");
  for (int j : fit.covariate_indices)
    if (j >= cohort.covariate_count()) throw InvalidParameter("cohort lacks covariates used by the fit");
}

// Linear interpolation between order statistics of sorted data, p in [0, 1].
double sorted_quantile(const std::vector<double>& sorted, double p) {
  const double h = p * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (h - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

std::vector<double> patient_risks(const MSMFit& fit, const Cohort& cohort, int d_bin) {
  const double d = cohort.grid.scaled(d_bin);
  std::vector<double> p;
  p.reserve(cohort.patients.size());
  for (const auto& pt : cohort.patients)
    p.push_back(expit(fit.covariate_term(pt.covariates) + fit.lambda_hat(d, pt.dvh.at(d_bin))));
  return p;
}

}  // namespace

double pointwise_ntcp_scaled(const MSMFit& fit, const Cohort& cohort, double d_scaled, double g_value) {
  check_fit_cohort(fit, cohort);
  if (!(d_scaled >= 0.0 && d_scaled <= 1.0)) throw DomainError("scaled dose outside [0, 1]");
  if (!(g_value >= 0.0 && g_value <= 1.0)) throw DomainError("volume value outside [0, 1]");
  if (cohort.patients.empty()) throw EmptySubset("pointwise_ntcp: empty cohort");
  const double lambda = fit.lambda_hat(d_scaled, g_value);
  double sum = 0.0;
  for (const auto& pt : cohort.patients) sum += expit(fit.covariate_term(pt.covariates) + lambda);
  return sum / static_cast<double>(cohort.size());
}

double pointwise_ntcp(const MSMFit& fit, const Cohort& cohort, int d_bin, double g_value) {
  check_d_bin(cohort.grid, d_bin);
  return pointwise_ntcp_scaled(fit, cohort, cohort.grid.scaled(d_bin), g_value);
}

Eigen::MatrixXd pointwise_ntcp_grid(const MSMFit& fit, const Cohort& cohort, std::span<const double> d_scaled,
                                    std::span<const double> g) {
  check_fit_cohort(fit, cohort);
  if (cohort.patients.empty()) throw EmptySubset("pointwise_ntcp_grid: empty cohort");
  for (double v : d_scaled)
    if (!(v >= 0.0 && v <= 1.0)) throw DomainError("scaled dose outside [0, 1]");
  for (double v : g)
    if (!(v >= 0.0 && v <= 1.0)) throw DomainError("volume value outside [0, 1]");
  const Eigen::MatrixXd lambda = fit.lambda_hat_grid(d_scaled, g);
  std::vector<double> cov;
  for (const auto& pt : cohort.patients) cov.push_back(fit.covariate_term(pt.covariates));
  Eigen::MatrixXd out(lambda.rows(), lambda.cols());
  for (Eigen::Index a = 0; a < lambda.rows(); ++a)
    for (Eigen::Index b = 0; b < lambda.cols(); ++b) {
      double sum = 0.0;
      for (double c : cov) sum += expit(c + lambda(a, b));
      out(a, b) = sum / static_cast<double>(cov.size());
    }
  return out;
}

EmpiricalCdf::EmpiricalCdf(std::vector<double> values) : sorted_(std::move(values)) {
  if (sorted_.empty()) throw EmptyStratum("empirical CDF of an empty sample");
  std::sort(sorted_.begin(), sorted_.end());
  const auto n = static_cast<double>(sorted_.size());
  mass_at_zero_ = static_cast<double>(std::count_if(sorted_.begin(), sorted_.end(), [](double v) { return v <= 0.0; })) / n;
  mass_at_one_ = static_cast<double>(std::count_if(sorted_.begin(), sorted_.end(), [](double v) { return v >= 1.0; })) / n;
}

double EmpiricalCdf::operator()(double q) const {
  const auto below = std::upper_bound(sorted_.begin(), sorted_.end(), q) - sorted_.begin();
  return static_cast<double>(below) / static_cast<double>(sorted_.size());
}

std::vector<int> WeightModel::stratum_key(const Eigen::VectorXd& x) const {
  std::vector<int> key;
  key.reserve(columns_.size());
  for (const auto& c : columns_) {
    if (c.column >= x.size()) throw InvalidParameter("covariate vector too short for weight model");
    const double v = x(c.column);
    if (c.discrete) {
      const auto it = std::find(c.levels.begin(), c.levels.end(), v);
      if (it == c.levels.end()) throw EmptyStratum("covariate level not seen when estimating the weight model");
      key.push_back(static_cast<int>(it - c.levels.begin()));
    } else {
      key.push_back(static_cast<int>(std::upper_bound(c.cutpoints.begin(), c.cutpoints.end(), v) - c.cutpoints.begin()));
    }
  }
  return key;
}

const EmpiricalCdf& WeightModel::stratum(const Eigen::VectorXd& x) const {
  const auto it = strata_.find(stratum_key(x));
  if (it == strata_.end()) throw EmptyStratum("covariate stratum has no patients");
  return it->second;
}

double WeightModel::cdf(double q, const Eigen::VectorXd& x) const { return stratum(x)(q); }

WeightModel estimate_weight_model(const Cohort& cohort, int d_bin, const WeightModelOptions& options) {
  cohort.validate();
  check_d_bin(cohort.grid, d_bin);
  if (options.quantile_bins < 1 || options.max_discrete_levels < 1)
    throw InvalidParameter("weight model: quantile_bins and max_discrete_levels must be >= 1");
  WeightModel model;
  model.d_bin_ = d_bin;
  std::vector<int> cols;
  if (options.covariates) {
    cols = *options.covariates;
  } else {
    for (int j = 0; j < cohort.covariate_count(); ++j) cols.push_back(j);
  }
  for (int j : cols) {
    if (j < 0 || j >= cohort.covariate_count())
      throw InvalidParameter("weight model covariate index " + std::to_string(j) + " out of range");
    std::vector<double> values;
    for (const auto& pt : cohort.patients) values.push_back(pt.covariates(j));
    std::sort(values.begin(), values.end());
    std::vector<double> distinct = values;
    distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());
    WeightModel::Coarsening c;
    c.column = j;
    if (static_cast<int>(distinct.size()) <= options.max_discrete_levels) {
      c.levels = distinct;
    } else {
      c.discrete = false;
      for (int k = 1; k < options.quantile_bins; ++k)
        c.cutpoints.push_back(sorted_quantile(values, static_cast<double>(k) / options.quantile_bins));
    }
    model.columns_.push_back(std::move(c));
  }
  std::map<std::vector<int>, std::vector<double>> samples;
  for (const auto& pt : cohort.patients) samples[model.stratum_key(pt.covariates)].push_back(pt.dvh.at(d_bin));
  for (auto& [key, v] : samples) model.strata_.emplace(key, EmpiricalCdf(std::move(v)));
  return model;
}

InterventionSpec InterventionSpec::identity(int d_bin) {
  InterventionSpec s;
  s.kind = Kind::Identity;
  s.d_bin = d_bin;
  return s;
}

InterventionSpec InterventionSpec::pointwise(int d_bin, double g_value) {
  InterventionSpec s;
  s.kind = Kind::PointwiseDeterministic;
  s.d_bin = d_bin;
  s.g_value = g_value;
  return s;
}

InterventionSpec InterventionSpec::truncate_upper(int d_bin, double q) {
  InterventionSpec s;
  s.kind = Kind::TruncateUpper;
  s.d_bin = d_bin;
  s.threshold = q;
  return s;
}

void InterventionSpec::validate(const DoseGrid& grid) const {
  check_d_bin(grid, d_bin);
  if (kind == Kind::PointwiseDeterministic && !(g_value >= 0.0 && g_value <= 1.0))
    throw InvalidParameter("intervention g_value must lie in [0, 1]");
  if (kind == Kind::TruncateUpper && !(threshold > 0.0 && threshold <= 1.0))
    throw InvalidParameter("intervention threshold q must lie in (0, 1]");
  if (weight_truncation_percentile && !(*weight_truncation_percentile > 0.0 && *weight_truncation_percentile <= 100.0))
    throw InvalidParameter("weight_truncation_percentile must lie in (0, 100]");
  if (!(positivity_threshold > 0.0)) throw InvalidParameter("positivity_threshold must be > 0");
}

const char* intervention_kind_name(InterventionSpec::Kind k) {
  switch (k) {
    case InterventionSpec::Kind::Identity: return "Identity";
    case InterventionSpec::Kind::PointwiseDeterministic: return "PointwiseDeterministic";
    case InterventionSpec::Kind::TruncateUpper: return "TruncateUpper";
  }
  return "unknown";
}

StochasticEstimate stochastic_ntcp(const MSMFit& fit, const Cohort& cohort, const InterventionSpec& intervention,
                                   const WeightModel& weights) {
  check_fit_cohort(fit, cohort);
  intervention.validate(cohort.grid);
  if (cohort.patients.empty()) throw EmptySubset("stochastic_ntcp: empty cohort");
  const int n = cohort.size();
  StochasticEstimate est;
  if (intervention.kind == InterventionSpec::Kind::PointwiseDeterministic) {
    est.ntcp = pointwise_ntcp(fit, cohort, intervention.d_bin, intervention.g_value);
    est.weights.assign(static_cast<std::size_t>(n), 1.0);
  } else {
    const int d_bin = intervention.d_bin;
    if (intervention.kind == InterventionSpec::Kind::TruncateUpper && weights.d_bin() != d_bin)
      throw InvalidParameter("weight model was estimated at a different dose bin");
    const std::vector<double> p = patient_risks(fit, cohort, d_bin);
    est.weights.assign(static_cast<std::size_t>(n), 1.0);
    if (intervention.kind == InterventionSpec::Kind::TruncateUpper) {
      const double q = intervention.threshold;
      for (int i = 0; i < n; ++i) {
        const auto& pt = cohort.patients[static_cast<std::size_t>(i)];
        const double f = weights.cdf(q, pt.covariates);
        est.weights[static_cast<std::size_t>(i)] = (pt.dvh.at(d_bin) <= q && f > 0.0) ? 1.0 / f : 0.0;
      }
      if (intervention.weight_truncation_percentile) {
        std::vector<double> positive;
        for (double w : est.weights)
          if (w > 0.0) positive.push_back(w);
        if (!positive.empty()) {
          std::sort(positive.begin(), positive.end());
          const double cap = sorted_quantile(positive, *intervention.weight_truncation_percentile / 100.0);
          for (double& w : est.weights) w = std::min(w, cap);
        }
      }
    }
    double sum = 0.0;
    for (int i = 0; i < n; ++i) sum += p[static_cast<std::size_t>(i)] * est.weights[static_cast<std::size_t>(i)];
    est.ntcp = sum / static_cast<double>(n);
  }
  double wsum = 0.0;
  for (double w : est.weights) {
    wsum += w;
    est.max_weight = std::max(est.max_weight, w);
  }
  est.mean_weight = wsum / static_cast<double>(n);
  est.effective_sample_size = est.max_weight > 0.0 ? wsum / est.max_weight : 0.0;
  est.positivity_warning = est.max_weight > intervention.positivity_threshold;
  return est;
}

StochasticEstimate stochastic_ntcp(const MSMFit& fit, const Cohort& cohort, const InterventionSpec& intervention,
                                   const WeightModelOptions& options) {
  intervention.validate(cohort.grid);
  if (intervention.kind != InterventionSpec::Kind::TruncateUpper) return stochastic_ntcp(fit, cohort, intervention, WeightModel{});
  return stochastic_ntcp(fit, cohort, intervention, estimate_weight_model(cohort, intervention.d_bin, options));
}

double causal_risk_ratio(const MSMFit& fit, const Cohort& cohort, const InterventionSpec& intervention,
                         const WeightModelOptions& options) {
  return compute_estimands(fit, cohort, intervention, options).risk_ratio;
}

Estimands compute_estimands(const MSMFit& fit, const Cohort& cohort, const InterventionSpec& intervention,
                            const WeightModelOptions& options) {
  const StochasticEstimate num = stochastic_ntcp(fit, cohort, intervention, options);
  const StochasticEstimate den = stochastic_ntcp(fit, cohort, InterventionSpec::identity(intervention.d_bin), options);
  if (den.ntcp < 1e-10) throw DegenerateDenominator("observed-risk denominator below 1e-10");
  Estimands e;
  e.ntcp_intervention = num.ntcp;
  e.ntcp_observed = den.ntcp;
  e.risk_ratio = num.ntcp / den.ntcp;
  e.max_weight = num.max_weight;
  return e;
}

Interval percentile_interval(std::vector<double> values, double level) {
  if (values.empty()) throw EmptyDraws("percentile_interval: no values");
  if (!(level > 0.0 && level < 1.0)) throw InvalidParameter("confidence level must lie in (0, 1)");
  std::sort(values.begin(), values.end());
  const double alpha = 0.5 * (1.0 - level);
  return {sorted_quantile(values, alpha), sorted_quantile(values, 1.0 - alpha)};
}

}  // namespace ntcp
