#include "ntcp/dvh.hpp"

#include <cmath>
#include <string>

#include "ntcp/errors.hpp"
#include "ntcp/numeric.hpp"

namespace ntcp {

DoseGrid::DoseGrid(int n_bins, double d_min, double d_max) : n_bins_(n_bins), d_min_(d_min), d_max_(d_max) {
  if (n_bins < 2) throw InvalidParameter("DoseGrid: n_bins must be >= 2, got " + std::to_string(n_bins));
  if (!(d_max > d_min) || !std::isfinite(d_min) || !std::isfinite(d_max))
    throw InvalidParameter("DoseGrid: require finite d_max > d_min");
}

DifferentialDvh::DifferentialDvh(DoseGrid grid, Eigen::VectorXd b, bool strict, DvhTolerance tol)
    : grid_(grid), b_(std::move(b)) {
  if (b_.size() != grid_.n_bins())
    throw InvalidHistogram("differential DVH has " + std::to_string(b_.size()) + " bins, grid has " +
                           std::to_string(grid_.n_bins()));
  for (Eigen::Index d = 0; d < b_.size(); ++d) {
    if (!std::isfinite(b_(d)) || b_(d) < 0.0 || b_(d) > 1.0 + tol.mass)
      throw InvalidHistogram("differential DVH entry " + std::to_string(d + 1) + " outside [0, 1]");
  }
  const double total = b_.sum();
  if (total > 1.0 + tol.mass) throw InvalidHistogram("differential DVH mass exceeds 1: " + std::to_string(total));
  if ((strict || grid_.d_min() == 0.0) && std::abs(total - 1.0) > tol.mass)
    throw InvalidHistogram("differential DVH mass must equal 1, got " + std::to_string(total));
}

CumulativeDvh::CumulativeDvh(DoseGrid grid, Eigen::VectorXd g, DvhTolerance tol) : grid_(grid), g_(std::move(g)) {
  if (g_.size() != grid_.n_bins())
    throw InvalidHistogram("cumulative DVH has " + std::to_string(g_.size()) + " bins, grid has " +
                           std::to_string(grid_.n_bins()));
  for (Eigen::Index d = 0; d < g_.size(); ++d) {
    if (!std::isfinite(g_(d)) || g_(d) < 0.0 || g_(d) > 1.0)
      throw InvalidHistogram("cumulative DVH entry " + std::to_string(d + 1) + " outside [0, 1]");
    if (d > 0 && g_(d) > g_(d - 1)) {
      if (g_(d) - g_(d - 1) > tol.repair)
        throw InvalidHistogram("cumulative DVH increases at bin " + std::to_string(d + 1) + " by " +
                               std::to_string(g_(d) - g_(d - 1)));
      g_(d) = g_(d - 1);
    }
  }
}

void Cohort::validate() const {
  if (patients.empty()) throw ValidationError("cohort is empty");
  const auto p = static_cast<Eigen::Index>(covariate_names.size());
  for (const auto& pt : patients) {
    if (!(pt.dvh.grid() == grid)) throw GridMismatch("patient " + pt.id + " uses a different dose grid");
    if (pt.covariates.size() != p)
      throw ValidationError("patient " + pt.id + " has " + std::to_string(pt.covariates.size()) +
                            " covariates, cohort declares " + std::to_string(p));
    if (pt.outcome != 0 && pt.outcome != 1)
      throw ValidationError("patient " + pt.id + " outcome must be 0 or 1");
  }
}

Cohort Cohort::subset(std::span<const int> indices) const {
  Cohort out{grid, covariate_names, {}};
  out.patients.reserve(indices.size());
  for (int i : indices) out.patients.push_back(patients.at(static_cast<std::size_t>(i)));
  return out;
}

CumulativeDvh cumulative_from_differential(const DifferentialDvh& b) {
  const auto n = b.b().size();
  Eigen::VectorXd g(n);
  double tail = 0.0;
  for (Eigen::Index d = n - 1; d >= 0; --d) {
    tail += b.b()(d);
    g(d) = tail;
  }
  // Rounding can push the head a few ulp past 1.
  for (Eigen::Index d = 0; d < n; ++d) g(d) = std::min(g(d), 1.0);
  return CumulativeDvh(b.grid(), std::move(g));
}

DifferentialDvh differential_from_cumulative(const CumulativeDvh& g) {
  const auto n = g.g().size();
  Eigen::VectorXd b(n);
  for (Eigen::Index d = 0; d < n; ++d) b(d) = g.g()(d) - (d + 1 < n ? g.g()(d + 1) : 0.0);
  return DifferentialDvh(g.grid(), std::move(b), /*strict=*/false,
                         DvhTolerance{.ordering = 1e-12, .mass = 1e-9, .repair = 1e-6});
}

bool stochastically_dominates(const CumulativeDvh& lo, const CumulativeDvh& hi, double tol) {
  if (!(lo.grid() == hi.grid())) throw GridMismatch("stochastically_dominates: DVHs use different grids");
  return ((lo.g().array() - hi.g().array()) <= tol).all();
}

CumulativeDvh normal_dvh(double mu, double sigma, const DoseGrid& grid) {
  if (!(sigma > 0.0) || !std::isfinite(sigma)) throw InvalidParameter("normal_dvh: sigma must be > 0");
  if (std::isnan(mu)) throw InvalidParameter("normal_dvh: mu is NaN");
  Eigen::VectorXd g(grid.n_bins());
  for (int k = 1; k <= grid.n_bins(); ++k) g(k - 1) = normal_sf((grid.lower_edge(k) - mu) / sigma);
  return CumulativeDvh(grid, std::move(g));
}

CumulativeDvh pointwise_average_dvh(const Cohort& cohort, std::span<const int> subset) {
  if (subset.empty()) throw EmptySubset("pointwise_average_dvh: empty subset");
  Eigen::VectorXd sum = Eigen::VectorXd::Zero(cohort.grid.n_bins());
  for (int i : subset) sum += cohort.patients.at(static_cast<std::size_t>(i)).dvh.g();
  return CumulativeDvh(cohort.grid, sum / static_cast<double>(subset.size()));
}

}  // namespace ntcp
