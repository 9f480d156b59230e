#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <vector>

#include <Eigen/Dense>

namespace ntcp {

using Rng = std::mt19937_64;

struct PriorConfig {
  int max_points = 200;
  // Poisson mean of the point count, truncated at max_points.
  double point_count_prior_mean = 10.0;
  // Exponential rate of each mark.
  double mark_prior_rate = 2.0;
  double base_level_prior_sd = 10.0;
  // Log-scale sd of the multiplicative mark walk.
  double proposal_sd_mark = 0.3;
  double proposal_sd_base = 0.1;
  // Probability that a location coordinate sits exactly on the lower edge (0);
  // otherwise it is uniform on (0, 1].
  double edge_probability = 0.1;

  void validate() const;
};

// A support point in [0,1]^dim. For dim == 1 only coords[0] is used and
// coords[1] stays 0.
struct SupportPoint {
  std::array<double, 2> coords{0.0, 0.0};
  double mark = 0.0;
};

// Piecewise-constant non-decreasing function on [0,1]^dim:
//   f(u) = base_level + max{ mark_j : coords_j <= u }   (max of {} = 0).
// Marks are non-negative so monotonicity holds for every configuration.
class MonotonePointConfig {
 public:
  MonotonePointConfig() = default;
  MonotonePointConfig(int dim, double base_level, PriorConfig prior = {}, bool base_free = true);

  int dim() const { return dim_; }
  double base_level() const { return base_level_; }
  bool base_free() const { return base_free_; }
  const std::vector<SupportPoint>& points() const { return points_; }
  const PriorConfig& prior() const { return prior_; }
  int size() const { return static_cast<int>(points_.size()); }

  // Throws DomainError if u lies outside the unit hypercube.
  double evaluate(std::span<const double> u) const;
  double evaluate(double d, double g = 0.0) const;

  // Level above base at (d, g): max of dominated marks, 0 if none. No range
  // checks; this is the sampler's hot path.
  double level_above_base(double d, double g) const {
    double best = 0.0;
    for (const auto& p : points_)
      if (p.coords[0] <= d && p.coords[1] <= g && p.mark > best) best = p.mark;
    return best;
  }

  // Log prior density up to a constant (truncated Poisson count, uniform
  // locations, exponential marks, normal base level when free).
  double log_prior() const;

  void set_base_level(double b) { base_level_ = b; }
  void set_prior(const PriorConfig& prior);
  void add_point(SupportPoint p);
  void remove_point(int index);
  void replace_point(int index, SupportPoint p);

 private:
  int dim_ = 2;
  double base_level_ = 0.0;
  bool base_free_ = true;
  PriorConfig prior_{};
  std::vector<SupportPoint> points_;
};

enum class MoveType : int { Birth = 0, Death = 1, Move = 2, MarkShift = 3, BaseShift = 4 };
inline constexpr int kMoveTypeCount = 5;
const char* move_name(MoveType m);

struct KernelStats {
  std::array<std::int64_t, kMoveTypeCount> proposed{};
  std::array<std::int64_t, kMoveTypeCount> accepted{};
  // Proposals impossible from the current state (counted in `proposed`).
  std::array<std::int64_t, kMoveTypeCount> skipped{};
  std::int64_t numerical_errors = 0;

  KernelStats& operator+=(const KernelStats& o);
  // Accepted over attempted (proposed minus skipped).
  double acceptance_rate(MoveType m) const;
  std::int64_t attempted(MoveType m) const;
};

// A proposed local modification of a configuration. `log_ratio` holds the
// prior ratio times the reverse/forward proposal ratio; the caller adds the
// change in target log density. The affected region is the union of the
// upper orthants of `touched` (empty for a base shift, which affects all).
// A compensated base shift lowers every mark by base_delta, so only locations
// that dominate no support point change level.
struct Proposal {
  MoveType type = MoveType::Birth;
  bool skipped = false;  // move impossible from this state (e.g. death on empty)
  MonotonePointConfig candidate;
  double log_ratio = 0.0;
  std::vector<std::array<double, 2>> touched;
  double base_delta = 0.0;
  bool compensated = false;
};

Proposal propose_move(const MonotonePointConfig& config, Rng& rng);

struct StepResult {
  MonotonePointConfig config;
  KernelStats delta;
};

// One reversible-jump Metropolis-Hastings-Green update: draws a move type
// uniformly and accepts against exp(target) x prior.
StepResult rjmcmc_step(const MonotonePointConfig& config,
                       const std::function<double(const MonotonePointConfig&)>& target_logdensity,
                       Rng& rng);

// The lambda(d, g) of the monotone model families.
//   Bivariable: joint(d, g).
//   Additive:   dose(d) + volume(g); only `dose` carries the base level.
struct MonotoneSurface {
  enum class Kind { Bivariable, Additive };
  Kind kind = Kind::Bivariable;
  MonotonePointConfig joint;
  MonotonePointConfig dose;
  MonotonePointConfig volume;

  static MonotoneSurface bivariable(double base, const PriorConfig& prior);
  static MonotoneSurface additive(double base, const PriorConfig& prior);

  double evaluate(double d, double g) const {
    if (kind == Kind::Bivariable) return joint.base_level() + joint.level_above_base(d, g);
    return dose.base_level() + dose.level_above_base(d, 0.0) + volume.base_level() +
           volume.level_above_base(g, 0.0);
  }
  int point_count() const {
    return kind == Kind::Bivariable ? joint.size() : dose.size() + volume.size();
  }
};

// Mean over draws of draw.evaluate(grid_d[a], grid_g[b]). Works for any draw
// type exposing evaluate(double, double).
template <typename Draw>
Eigen::MatrixXd posterior_mean_on_grid(std::span<const Draw> draws, std::span<const double> grid_d,
                                       std::span<const double> grid_g);

// Non-decreasing along both axes within 1e-12.
template <typename Derived>
bool is_monotone_sample(const Eigen::DenseBase<Derived>& values, double tol = 1e-12) {
  for (Eigen::Index i = 0; i < values.rows(); ++i)
    for (Eigen::Index j = 0; j < values.cols(); ++j) {
      if (i > 0 && values(i, j) < values(i - 1, j) - tol) return false;
      if (j > 0 && values(i, j) < values(i, j - 1) - tol) return false;
    }
  return true;
}

}  // namespace ntcp

#include "ntcp/detail/monotone_surface_impl.hpp"
