#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "ntcp/dvh.hpp"
#include "ntcp/msm.hpp"
#include "ntcp/quadrature.hpp"

namespace ntcp::sim {

// Data-generating process shared by both simulation designs:
//   mu    = a_min + (a_max - a_min) * Beta(alpha(x), beta(x))
//   sigma ~ U(b_min, b_max)
//   G_d   = 1 - Phi((lower_edge(d) - mu) / sigma)
//   Y     ~ Bernoulli(expit(gamma0 + gamma_mu mu + gamma_x1 x1 + gamma_x2 x2))
struct Dgp {
  enum class Shape {
    // alpha = 2 if x1 = 1 else 4/3, beta = 10/3 - alpha
    BinaryMixture,
    // alpha = s expit(eta), beta = s (1 - expit(eta)), eta = c1 x1 + c2 x2
    BetaRegression
  };

  DoseGrid grid{26, 30.0, 50.0};
  double a_min = 35.0;
  double a_max = 45.0;
  double b_min = 1.0;
  double b_max = 2.0;
  double gamma0 = -18.0;
  double gamma_mu = 0.45;
  double gamma_x1 = 0.5;
  double gamma_x2 = 0.0;
  double p_x1 = 0.4;
  // x2 ~ N(0, 1) is generated (and reported as a covariate) when set.
  bool has_x2 = false;
  Shape shape = Shape::BinaryMixture;
  double shape_total = 10.0 / 3.0;
  double eta_x1 = 0.2;
  double eta_x2 = 0.5;

  void validate() const;
  int covariate_count() const { return has_x2 ? 2 : 1; }
  std::vector<std::string> covariate_names() const;
  // Beta shape parameters (alpha, beta) of the mean-dose law given x.
  std::pair<double, double> shapes(double x1, double x2) const;
  double outcome_eta(double mu, double x1, double x2) const {
    return gamma0 + gamma_mu * mu + gamma_x1 * x1 + gamma_x2 * x2;
  }
  // One covariate atom of the marginal law: for a binary-only design two
  // atoms, otherwise x1 levels times Gauss-Hermite nodes over x2.
  struct Atom {
    double x1;
    double x2;
    double weight;
  };
  std::vector<Atom> covariate_atoms(int hermite_order) const;
};

struct Sim1Config {
  int n = 100;
  double gamma0 = -18.0;
  double gamma1 = 0.45;
  double gamma2 = 0.5;
  double a_min = 35.0;
  double a_max = 45.0;
  double b_min = 1.0;
  double b_max = 2.0;
  double p_x = 0.4;
  int d_star = 14;
  double q = 0.8;
  std::uint64_t seed = 1;

  Dgp dgp() const;
};

enum class Scenario { NoConfounding, Weak, Strong };
const char* scenario_name(Scenario s);
Scenario parse_scenario(const std::string& name);

struct Sim2Config {
  int n = 500;
  Scenario scenario = Scenario::Strong;
  std::uint64_t seed = 1;

  Dgp dgp() const;
};

struct Latent {
  double mu = 0.0;
  double sigma = 0.0;
  Eigen::VectorXd x;
};

// Draws x, then (mu, sigma) given x.
Latent draw_latent(const Dgp& dgp, Rng& rng);
// Redraws (mu, sigma) given l.x.
void redraw_dose(const Dgp& dgp, Latent& l, Rng& rng);

struct SimulatedCohort {
  Cohort cohort;
  std::vector<Latent> latents;
};

SimulatedCohort generate_cohort(const Dgp& dgp, int n, std::uint64_t seed);
SimulatedCohort generate_cohort_sim1(const Sim1Config& cfg);
SimulatedCohort generate_cohort_sim2(const Sim2Config& cfg);

struct OracleConfig {
  // Outer integrals over mu and g.
  quadrature::Options integration{1e-8, 1e-6, 400, true};
  // Inner integral of the Jacobian; its magnitude can be far below abs_tol.
  quadrature::Options jacobian{1e-300, 1e-10, 400, true};
  int hermite_order = 24;
};

// sigma solving g = 1 - Phi((d_gy - mu) / sigma); nullopt when the solution
// is not finite and positive. Throws SingularSolve at g = 0.5.
std::optional<double> sigma_from(double mu, double g, double d_gy);

struct MuInterval {
  double lower = 0.0;
  double upper = 0.0;
};

// Mean doses whose implied sigma lies in [b_min, b_max], clipped to
// [a_min, a_max]; nullopt when empty or g is not in (0, 1).
std::optional<MuInterval> mu_bounds(double g, double d_gy, const Dgp& dgp);

// |J| = sigma^2 / |int_0^d_gy phi((t - mu)/sigma) (1 - ((t - mu)/sigma)^2) dt|.
double jacobian(double mu, double g, double d_gy, const OracleConfig& oracle = {});

// Marginal NTCP when G at dose d_gy is set to g; nullopt outside the
// evaluable region.
std::optional<double> true_pointwise_ntcp_gy(double d_gy, double g, const Dgp& dgp, const OracleConfig& oracle = {});
std::optional<double> true_pointwise_ntcp(int d_bin, double g, const Dgp& dgp, const OracleConfig& oracle = {});

// Marginal NTCP when G_{d_star} is drawn from its observed law given x
// truncated to [0, q].
double true_stochastic_ntcp(const Dgp& dgp, int d_star, double q, const OracleConfig& oracle = {});

struct McEstimate {
  double value = 0.0;
  double se = 0.0;
  std::int64_t accepted = 0;
};

// Brute-force Monte Carlo truth under Identity (q >= 1 or nullopt) or upper
// truncation at d_star: per drawn x, (mu, sigma) are redrawn until G <= q.
// n_draws bounds the total number of proposals.
McEstimate mc_truth_oracle(const Dgp& dgp, int d_star, std::optional<double> q, std::int64_t n_draws,
                           std::uint64_t seed);

struct PointQuery {
  double d_gy = 0.0;
  double g = 0.0;
};

// Band estimate of the pointwise truth: draws with |G_d - g| <= h, averaged
// within each x1 level and weighted by P(x1). Requires a binary-only design.
std::vector<std::optional<McEstimate>> mc_pointwise_oracle(const Dgp& dgp, const std::vector<PointQuery>& queries,
                                                           std::int64_t n_draws, std::uint64_t seed,
                                                           double h = 0.005, std::int64_t min_accepted = 1000);

// Evaluation grid of an experiment on the scaled dose and volume axes.
struct EvalGrid {
  std::vector<double> d_scaled;
  std::vector<double> g;
};

// All dose bins x volumes k/(n_bins-1).
EvalGrid bin_grid(const DoseGrid& grid);
// n x n points: scaled doses and volumes at k/(n-1).
EvalGrid uniform_grid(int n);

struct TruthGrid {
  EvalGrid grid;
  Eigen::MatrixXd values;  // NaN where undefined
  double stochastic = 0.0;
  int evaluable() const;
};

TruthGrid compute_truth(const Dgp& dgp, const EvalGrid& grid, int d_star, double q, const OracleConfig& oracle = {},
                        int workers = 1);

// Larger marks and more support points than the PriorConfig defaults.
inline PriorConfig desk_prior() {
  PriorConfig p;
  p.point_count_prior_mean = 40.0;
  p.mark_prior_rate = 0.25;
  return p;
}

struct ExperimentConfig {
  Dgp dgp;
  int n = 100;
  int replicates = 20;
  std::vector<ModelFamily> families{ModelFamily::Linear, ModelFamily::Polynomial, ModelFamily::AdditiveMonotone,
                                    ModelFamily::BivariableMonotone};
  McmcSettings mcmc;
  // Monotone-family settings of the simulation studies.
  PriorConfig prior = desk_prior();
  double volume_warp = 0.3;
  // Include the confounders in the outcome model and the weight model.
  bool adjusted = true;
  int d_star = 14;
  double q = 0.8;
  std::uint64_t seed = 1;
  int workers = 0;
  // Every replicate reuses the same cohort and chain seeds (testing aid).
  bool identical_replicates = false;

  void validate() const;
};

struct FamilySummary {
  ModelFamily family = ModelFamily::Linear;
  int replicates_ok = 0;
  Eigen::MatrixXd mean_estimate;
  Eigen::MatrixXd bias;  // mean estimate - truth
  Eigen::MatrixXd mcsd;
  Eigen::MatrixXd rmse;
  double abs_bias = 0.0;  // grid averages over evaluable cells
  double mcsd_avg = 0.0;
  double rmse_avg = 0.0;
  double mce_avg = 0.0;
  FitMetrics metrics;  // mean over replicates
  double stochastic_mean = 0.0;
  double stochastic_bias = 0.0;
  double stochastic_mcsd = 0.0;
  std::vector<std::string> failures;
};

struct ExperimentReport {
  int n = 0;
  int replicates = 0;
  TruthGrid truth;
  std::vector<FamilySummary> families;
};

ExperimentReport run_experiment(const ExperimentConfig& cfg, const TruthGrid& truth);

// Table-shaped summary: n,model,abs_bias,mcsd,rmse,mce,brier,deviance,k,dic
std::string report_csv(const ExperimentReport& report);
// Per-cell grid of one family: d_gy,volume,truth,mean_est,bias,mcsd,rmse
std::string grid_csv(const ExperimentReport& report, const FamilySummary& family, const DoseGrid& grid);

}  // namespace ntcp::sim
