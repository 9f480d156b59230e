#include <cmath>
#include <cstdio>
#include <limits>
#include <sstream>

#include "ntcp/errors.hpp"
#include "ntcp/numeric.hpp"
#include "ntcp/parallel.hpp"
#include "ntcp/sim.hpp"

namespace ntcp::sim {
namespace {

std::string fmt(double v) {
  if (std::isnan(v)) return "NA";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

struct TaskResult {
  bool ok = false;
  Eigen::MatrixXd estimate;
  FitMetrics metrics;
  double stochastic = 0.0;
  std::string error;
};

}  // namespace

void ExperimentConfig::validate() const {
  dgp.validate();
  if (n < 2) throw InvalidParameter("experiment: n must be >= 2");
  if (replicates < 2) throw InvalidParameter("experiment: replicates must be >= 2");
  if (families.empty()) throw InvalidParameter("experiment: no model families");
  if (d_star < 1 || d_star > dgp.grid.n_bins()) throw InvalidParameter("experiment: d_star out of range");
  if (!(q > 0.0 && q <= 1.0)) throw InvalidParameter("experiment: q must lie in (0, 1]");
  ModelSpec probe;
  probe.mcmc = mcmc;
  probe.prior = prior;
  probe.validate();
}

ExperimentReport run_experiment(const ExperimentConfig& cfg, const TruthGrid& truth) {
  cfg.validate();
  const int families = static_cast<int>(cfg.families.size());
  const int tasks = cfg.replicates * families;
  std::vector<TaskResult> results(static_cast<std::size_t>(tasks));
  const auto& grid = truth.grid;

  parallel_for(tasks, cfg.workers, [&](int t) {
    const int r = t / families;
    const int f = t % families;
    TaskResult& out = results[static_cast<std::size_t>(t)];
    try {
      const std::uint64_t cohort_seed = derive_seed(cfg.seed, cfg.identical_replicates ? 0 : static_cast<std::uint64_t>(r));
      const SimulatedCohort sim = generate_cohort(cfg.dgp, cfg.n, cohort_seed);
      ModelSpec spec;
      spec.family = cfg.families[static_cast<std::size_t>(f)];
      spec.mcmc = cfg.mcmc;
      spec.mcmc.seed = derive_seed(cohort_seed, static_cast<std::uint64_t>(f) + 1);
      spec.prior = cfg.prior;
      spec.volume_warp = cfg.volume_warp;
      WeightModelOptions wopts;
      if (!cfg.adjusted) {
        spec.covariates = std::vector<int>{};
        wopts.covariates = std::vector<int>{};
      }
      const MSMFit fit = fit_msm(sim.cohort, spec);
      out.estimate = pointwise_ntcp_grid(fit, sim.cohort, grid.d_scaled, grid.g);
      out.metrics = fit.metrics;
      out.stochastic =
          stochastic_ntcp(fit, sim.cohort, InterventionSpec::truncate_upper(cfg.d_star, cfg.q), wopts).ntcp;
      out.ok = true;
    } catch (const std::exception& e) {
      out.error = e.what();
    }
  });

  ExperimentReport report;
  report.n = cfg.n;
  report.replicates = cfg.replicates;
  report.truth = truth;
  const auto nd = static_cast<Eigen::Index>(grid.d_scaled.size());
  const auto ng = static_cast<Eigen::Index>(grid.g.size());
  for (int f = 0; f < families; ++f) {
    FamilySummary s;
    s.family = cfg.families[static_cast<std::size_t>(f)];
    std::vector<const TaskResult*> ok;
    for (int r = 0; r < cfg.replicates; ++r) {
      const TaskResult& res = results[static_cast<std::size_t>(r * families + f)];
      if (res.ok)
        ok.push_back(&res);
      else
        s.failures.push_back("replicate " + std::to_string(r) + ": " + res.error);
    }
    s.replicates_ok = static_cast<int>(ok.size());
    if (ok.size() < 2 || static_cast<double>(s.failures.size()) > 0.2 * cfg.replicates)
      throw ReplicateFailure(std::string(family_name(s.family)) + ": " + std::to_string(s.failures.size()) + " of " +
                             std::to_string(cfg.replicates) + " replicates failed" +
                             (s.failures.empty() ? "" : " (" + s.failures.front() + ")"));
    const double k = static_cast<double>(ok.size());
    s.mean_estimate = Eigen::MatrixXd::Zero(nd, ng);
    for (const auto* res : ok) s.mean_estimate += res->estimate;
    s.mean_estimate /= k;
    Eigen::MatrixXd ss = Eigen::MatrixXd::Zero(nd, ng);
    for (const auto* res : ok) ss += (res->estimate - s.mean_estimate).array().square().matrix();
    s.mcsd = (ss / (k - 1.0)).array().sqrt().matrix();
    s.bias = s.mean_estimate - truth.values;
    s.rmse = (s.bias.array().square() + s.mcsd.array().square()).sqrt().matrix();
    int cells = 0;
    for (Eigen::Index a = 0; a < nd; ++a)
      for (Eigen::Index b = 0; b < ng; ++b) {
        if (std::isnan(truth.values(a, b))) continue;
        ++cells;
        s.abs_bias += std::abs(s.bias(a, b));
        s.mcsd_avg += s.mcsd(a, b);
        s.rmse_avg += s.rmse(a, b);
      }
    if (cells > 0) {
      s.abs_bias /= cells;
      s.mcsd_avg /= cells;
      s.rmse_avg /= cells;
    }
    s.mce_avg = s.mcsd_avg / std::sqrt(k);

    double st_sum = 0.0;
    for (const auto* res : ok) {
      s.metrics.brier += res->metrics.brier / k;
      s.metrics.brier_raw += res->metrics.brier_raw / k;
      s.metrics.deviance_mean += res->metrics.deviance_mean / k;
      s.metrics.deviance_at_mean += res->metrics.deviance_at_mean / k;
      s.metrics.k_effective += res->metrics.k_effective / k;
      s.metrics.dic += res->metrics.dic / k;
      st_sum += res->stochastic;
    }
    s.stochastic_mean = st_sum / k;
    double st_ss = 0.0;
    for (const auto* res : ok) st_ss += (res->stochastic - s.stochastic_mean) * (res->stochastic - s.stochastic_mean);
    s.stochastic_mcsd = std::sqrt(st_ss / (k - 1.0));
    s.stochastic_bias = s.stochastic_mean - truth.stochastic;
    report.families.push_back(std::move(s));
  }
  return report;
}

std::string report_csv(const ExperimentReport& report) {
  std::ostringstream os;
  os << "n,model,abs_bias,mcsd,rmse,mce,brier,deviance,k,dic\n";
  for (const auto& s : report.families)
    os << report.n << ',' << family_name(s.family) << ',' << fmt(s.abs_bias) << ',' << fmt(s.mcsd_avg) << ','
       << fmt(s.rmse_avg) << ',' << fmt(s.mce_avg) << ',' << fmt(s.metrics.brier) << ','
       << fmt(s.metrics.deviance_at_mean) << ',' << fmt(s.metrics.k_effective) << ',' << fmt(s.metrics.dic) << '\n';
  return os.str();
}

std::string grid_csv(const ExperimentReport& report, const FamilySummary& family, const DoseGrid& grid) {
  std::ostringstream os;
  os << "d_gy,volume,truth,mean_est,bias,mcsd,rmse\n";
  const auto& eg = report.truth.grid;
  for (std::size_t a = 0; a < eg.d_scaled.size(); ++a)
    for (std::size_t b = 0; b < eg.g.size(); ++b) {
      const auto i = static_cast<Eigen::Index>(a);
      const auto j = static_cast<Eigen::Index>(b);
      os << fmt(grid.gy_from_scaled(eg.d_scaled[a])) << ',' << fmt(eg.g[b]) << ',' << fmt(report.truth.values(i, j))
         << ',' << fmt(family.mean_estimate(i, j)) << ',' << fmt(family.bias(i, j)) << ',' << fmt(family.mcsd(i, j))
         << ',' << fmt(family.rmse(i, j)) << '\n';
    }
  return os.str();
}

}  // namespace ntcp::sim
