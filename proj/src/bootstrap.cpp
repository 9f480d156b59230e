#include <cmath>
#include <string>

#include "ntcp/errors.hpp"
#include "ntcp/msm.hpp"
#include "ntcp/numeric.hpp"
#include "ntcp/parallel.hpp"

namespace ntcp {

BootstrapResult clustered_bootstrap(const Cohort& cohort, const ModelSpec& spec, const InterventionSpec& intervention,
                                    const BootstrapOptions& options) {
  if (options.n_boot < 2) throw InvalidParameter("n_boot must be >= 2");
  if (!(options.ci_level > 0.0 && options.ci_level < 1.0)) throw InvalidParameter("ci_level must lie in (0, 1)");
  cohort.validate();
  spec.validate();
  intervention.validate(cohort.grid);

  BootstrapResult result;
  result.point = compute_estimands(fit_msm(cohort, spec), cohort, intervention, options.weights);
  result.replicates.resize(static_cast<std::size_t>(options.n_boot));

  const int n = cohort.size();
  parallel_for(options.n_boot, options.workers, [&](int b) {
    const std::uint64_t stream = options.identical_streams ? 0 : static_cast<std::uint64_t>(b);
    const std::uint64_t seed = derive_seed(options.seed, stream);
    Rng rng(seed);
    std::uniform_int_distribution<int> pick(0, n - 1);
    std::vector<int> idx(static_cast<std::size_t>(n));
    for (int& i : idx) i = pick(rng);
    BootstrapReplicate& rep = result.replicates[static_cast<std::size_t>(b)];
    try {
      const Cohort resampled = cohort.subset(idx);
      ModelSpec s = spec;
      s.mcmc.seed = mix_seed(seed);
      rep.estimands = compute_estimands(fit_msm(resampled, s), resampled, intervention, options.weights);
      rep.ok = true;
    } catch (const std::exception& e) {
      rep.error = e.what();
    }
  });

  std::vector<double> a, o, r;
  for (const auto& rep : result.replicates) {
    if (!rep.ok) {
      ++result.failures;
      continue;
    }
    a.push_back(rep.estimands.ntcp_intervention);
    o.push_back(rep.estimands.ntcp_observed);
    r.push_back(rep.estimands.risk_ratio);
  }
  if (static_cast<double>(result.failures) > options.max_failure_fraction * options.n_boot || a.empty())
    throw ReplicateFailure(std::to_string(result.failures) + " of " + std::to_string(options.n_boot) +
                           " bootstrap replicates failed");
  result.ci_intervention = percentile_interval(a, options.ci_level);
  result.ci_observed = percentile_interval(o, options.ci_level);
  result.ci_risk_ratio = percentile_interval(r, options.ci_level);
  return result;
}

}  // namespace ntcp
