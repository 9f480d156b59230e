#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "ntcp/dvh.hpp"
#include "ntcp/monotone_surface.hpp"

namespace ntcp {

// One (patient, dose bin) row of the replicated data set. The outcome is
// repeated at every dose bin and paired with the volume at that bin.
struct ReplicatedRow {
  int patient_index = 0;  // 0-based index into Cohort::patients
  int y = 0;
  Eigen::VectorXd x;
  int d_bin = 1;          // 1-based
  double d_scaled = 0.0;  // (d_bin - 1) / (n_bins - 1)
  double g = 0.0;
};

// n * n_bins rows, patient-major.
std::vector<ReplicatedRow> build_replicated_dataset(const Cohort& cohort);

enum class ModelFamily { Linear, Polynomial, AdditiveMonotone, BivariableMonotone };

const char* family_name(ModelFamily f);
// Accepts the names produced by family_name() and short aliases
// ("linear", "polynomial", "additive", "bivariable").
ModelFamily parse_family(const std::string& name);
inline bool is_monotone(ModelFamily f) {
  return f == ModelFamily::AdditiveMonotone || f == ModelFamily::BivariableMonotone;
}
// Number of dose-volume coefficients (intercept included) of a parametric family.
int parametric_term_count(ModelFamily f);
// Dose-volume design row of a parametric family: (1, d, g[, d^2, g^2]).
Eigen::VectorXd parametric_terms(ModelFamily f, double d_scaled, double g);

struct McmcSettings {
  int iterations = 2000;
  int burn_in = 1000;
  int thinning = 1;
  std::uint64_t seed = 1;
  // Surface moves per iteration for monotone families.
  int moves_per_iteration = 20;
  // Joint coefficient updates per iteration for parametric families.
  int parametric_updates_per_iteration = 5;
  // Proposal scales are tuned every `adapt_interval` burn-in iterations.
  int adapt_interval = 50;
};

struct ModelSpec {
  ModelFamily family = ModelFamily::BivariableMonotone;
  // Cohort covariate columns entering the linear term; nullopt = all.
  std::optional<std::vector<int>> covariates;
  McmcSettings mcmc;
  PriorConfig prior;
  double coefficient_prior_sd = 10.0;
  // Monotone surfaces live on u = Phi(c * Phi^-1(g)) along the volume axis;
  // c = 1 is the identity. The map is a monotone bijection of [0, 1], so
  // it only changes where the uniform location prior puts support points.
  double volume_warp = 1.0;

  void validate() const;
  double surface_volume(double g) const;
  std::vector<int> covariate_indices(const Cohort& cohort) const;
};

struct FitMetrics {
  double brier = 0.0;      // 100 x mean squared error over replicated rows
  double brier_raw = 0.0;  // same, unscaled
  double deviance_mean = 0.0;
  double deviance_at_mean = 0.0;
  double k_effective = 0.0;
  double dic = 0.0;
};

struct FitDiagnostics {
  KernelStats surface_moves;
  std::vector<double> beta_acceptance;  // per covariate, post burn-in
  double coefficient_acceptance = 0.0;  // parametric joint updates, post burn-in
  double mean_point_count = 0.0;
  bool non_convergence = false;
  std::vector<std::string> warnings;
};

struct MSMFit {
  ModelSpec spec;
  DoseGrid grid{2, 0.0, 1.0};
  std::vector<int> covariate_indices;
  Eigen::MatrixXd beta_draws;                  // draws x covariates
  std::vector<MonotoneSurface> surface_draws;  // monotone families
  Eigen::MatrixXd coefficient_draws;           // parametric families: draws x terms
  Eigen::VectorXd beta_mean;
  Eigen::VectorXd coefficient_mean;
  std::vector<double> surface_grid_d;  // scaled dose
  std::vector<double> surface_grid_g;
  Eigen::MatrixXd quasi_posterior_mean_surface;  // lambda-hat on the grids above
  FitMetrics metrics;
  FitDiagnostics diagnostics;

  int draw_count() const { return static_cast<int>(beta_draws.rows()); }
  // Quasi-posterior mean of lambda(d, g).
  double lambda_hat(double d_scaled, double g) const;
  // lambda-hat on a grid (rows: d, cols: g).
  Eigen::MatrixXd lambda_hat_grid(std::span<const double> d_scaled, std::span<const double> g) const;
  // beta-hat . x restricted to the fitted covariates.
  double covariate_term(const Eigen::VectorXd& x) const;
  // Reassembles means and the default surface grid from draws.
  void summarize();
};

// Quasi-log-likelihood of the replicated rows for linear predictor
// beta . x + lambda(d, g). `beta` matches the full covariate vector of a row.
double quasi_loglik(std::span<const ReplicatedRow> rows, const Eigen::VectorXd& beta,
                    const std::function<double(double, double)>& lambda);
double quasi_loglik(std::span<const ReplicatedRow> rows, const Eigen::VectorXd& beta, const MonotoneSurface& surface);
double quasi_loglik(std::span<const ReplicatedRow> rows, const Eigen::VectorXd& beta, ModelFamily family,
                    const Eigen::VectorXd& coefficients);

MSMFit fit_msm(const Cohort& cohort, const ModelSpec& spec);

// Recomputes the in-sample metrics of a fit from its stored draws.
FitMetrics fit_metrics(const MSMFit& fit, std::span<const ReplicatedRow> rows);

// Population-average NTCP under the deterministic intervention G_d = g.
double pointwise_ntcp(const MSMFit& fit, const Cohort& cohort, int d_bin, double g_value);
double pointwise_ntcp_scaled(const MSMFit& fit, const Cohort& cohort, double d_scaled, double g_value);
// Pointwise NTCP on a grid (rows: d, cols: g).
Eigen::MatrixXd pointwise_ntcp_grid(const MSMFit& fit, const Cohort& cohort, std::span<const double> d_scaled,
                                    std::span<const double> g);

// Empirical CDF with explicit point masses at the bounds.
class EmpiricalCdf {
 public:
  EmpiricalCdf() = default;
  explicit EmpiricalCdf(std::vector<double> values);
  double operator()(double q) const;
  int count() const { return static_cast<int>(sorted_.size()); }
  double mass_at_zero() const { return mass_at_zero_; }
  double mass_at_one() const { return mass_at_one_; }

 private:
  std::vector<double> sorted_;
  double mass_at_zero_ = 0.0;
  double mass_at_one_ = 0.0;
};

struct WeightModelOptions {
  // Covariates defining strata; nullopt = all cohort covariates.
  std::optional<std::vector<int>> covariates;
  // Continuous covariates are coarsened into this many quantile bins.
  int quantile_bins = 4;
  // Columns with at most this many distinct values are treated as discrete.
  int max_discrete_levels = 5;
};

// Per-covariate-stratum empirical distribution of G_d.
class WeightModel {
 public:
  int d_bin() const { return d_bin_; }
  int stratum_count() const { return static_cast<int>(strata_.size()); }
  std::vector<int> stratum_key(const Eigen::VectorXd& x) const;
  // F-hat(q | x). Throws EmptyStratum when x falls in a stratum without patients.
  double cdf(double q, const Eigen::VectorXd& x) const;
  const EmpiricalCdf& stratum(const Eigen::VectorXd& x) const;
  const std::map<std::vector<int>, EmpiricalCdf>& strata() const { return strata_; }

 private:
  friend WeightModel estimate_weight_model(const Cohort&, int, const WeightModelOptions&);
  struct Coarsening {
    int column = 0;
    bool discrete = true;
    std::vector<double> levels;     // discrete: sorted distinct values
    std::vector<double> cutpoints;  // continuous: interior quantiles
  };
  int d_bin_ = 1;
  std::vector<Coarsening> columns_;
  std::map<std::vector<int>, EmpiricalCdf> strata_;
};

WeightModel estimate_weight_model(const Cohort& cohort, int d_bin, const WeightModelOptions& options = {});

struct InterventionSpec {
  enum class Kind { Identity, PointwiseDeterministic, TruncateUpper };
  Kind kind = Kind::Identity;
  int d_bin = 1;
  double g_value = 0.0;    // PointwiseDeterministic
  double threshold = 1.0;  // TruncateUpper: q
  // Cap weights at this percentile (0-100] of the positive weights.
  std::optional<double> weight_truncation_percentile;
  double positivity_threshold = 10.0;

  static InterventionSpec identity(int d_bin);
  static InterventionSpec pointwise(int d_bin, double g_value);
  static InterventionSpec truncate_upper(int d_bin, double q);
  void validate(const DoseGrid& grid) const;
};

const char* intervention_kind_name(InterventionSpec::Kind k);

struct StochasticEstimate {
  double ntcp = 0.0;
  std::vector<double> weights;
  double max_weight = 0.0;
  double mean_weight = 0.0;
  double effective_sample_size = 0.0;  // sum(w) / max(w)
  bool positivity_warning = false;
};

StochasticEstimate stochastic_ntcp(const MSMFit& fit, const Cohort& cohort, const InterventionSpec& intervention,
                                   const WeightModel& weights);
StochasticEstimate stochastic_ntcp(const MSMFit& fit, const Cohort& cohort, const InterventionSpec& intervention,
                                   const WeightModelOptions& options = {});

// NTCP under `intervention` over the model-based observed risk at the same dose bin.
double causal_risk_ratio(const MSMFit& fit, const Cohort& cohort, const InterventionSpec& intervention,
                         const WeightModelOptions& options = {});

struct Estimands {
  double ntcp_intervention = 0.0;
  double ntcp_observed = 0.0;
  double risk_ratio = 0.0;
  double max_weight = 0.0;
};

Estimands compute_estimands(const MSMFit& fit, const Cohort& cohort, const InterventionSpec& intervention,
                            const WeightModelOptions& options = {});

struct Interval {
  double lower = 0.0;
  double upper = 0.0;
};

// Percentile interval (linear interpolation between order statistics).
Interval percentile_interval(std::vector<double> values, double level);

struct BootstrapOptions {
  int n_boot = 1000;
  double ci_level = 0.95;
  std::uint64_t seed = 1;
  int workers = 0;  // 0 = available parallelism
  // Every replicate uses the same resampling/MCMC stream (testing aid).
  bool identical_streams = false;
  double max_failure_fraction = 0.2;
  WeightModelOptions weights;
};

struct BootstrapReplicate {
  bool ok = false;
  Estimands estimands;
  std::string error;
};

struct BootstrapResult {
  Estimands point;
  std::vector<BootstrapReplicate> replicates;
  int failures = 0;
  Interval ci_intervention;
  Interval ci_observed;
  Interval ci_risk_ratio;
};

// Resamples patients with replacement, refits and recomputes the estimands.
// Throws ReplicateFailure if more than max_failure_fraction of replicates fail.
BootstrapResult clustered_bootstrap(const Cohort& cohort, const ModelSpec& spec, const InterventionSpec& intervention,
                                    const BootstrapOptions& options);

}  // namespace ntcp
