#pragma once

#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace ntcp {

// Tolerances used by histogram validation and ordering predicates.
struct DvhTolerance {
  double ordering = 1e-12;
  double mass = 1e-9;
  // Non-monotone steps up to this size are repaired by a running minimum.
  double repair = 1e-6;
};

// Equal-width partition of [d_min, d_max] into n_bins dose bins. Bin k
// (1-based) covers [d_min + (k-1) w, d_min + k w).
class DoseGrid {
 public:
  DoseGrid(int n_bins, double d_min, double d_max);

  int n_bins() const { return n_bins_; }
  double d_min() const { return d_min_; }
  double d_max() const { return d_max_; }
  double bin_width() const { return (d_max_ - d_min_) / n_bins_; }
  // Lower edge in Gy of 1-based bin k.
  double lower_edge(int k) const { return d_min_ + (k - 1) * bin_width(); }
  // Dose coordinate on [0, 1] used by the monotone models: (k-1)/(n_bins-1).
  double scaled(int k) const { return static_cast<double>(k - 1) / (n_bins_ - 1); }
  // Inverse of scaled(), on the lower-edge scale (Gy).
  double gy_from_scaled(double s) const { return lower_edge(1) + s * (lower_edge(n_bins_) - lower_edge(1)); }

  bool operator==(const DoseGrid& o) const = default;

 private:
  int n_bins_;
  double d_min_;
  double d_max_;
};

class DifferentialDvh {
 public:
  // Validates b: entries in [0, 1], total mass <= 1 + tol.mass. When the grid
  // starts at 0 Gy, or `strict` is set, the mass must equal 1 within tol.mass.
  DifferentialDvh(DoseGrid grid, Eigen::VectorXd b, bool strict = false, DvhTolerance tol = {});

  const DoseGrid& grid() const { return grid_; }
  const Eigen::VectorXd& b() const { return b_; }
  double mass() const { return b_.sum(); }

 private:
  DoseGrid grid_;
  Eigen::VectorXd b_;
};

class CumulativeDvh {
 public:
  // Validates g: entries in [0, 1] and non-increasing. Increases of at most
  // tol.repair are repaired in place; larger ones throw InvalidHistogram.
  CumulativeDvh(DoseGrid grid, Eigen::VectorXd g, DvhTolerance tol = {});

  const DoseGrid& grid() const { return grid_; }
  const Eigen::VectorXd& g() const { return g_; }
  // Volume fraction at 1-based dose bin k.
  double at(int k) const { return g_(k - 1); }

 private:
  DoseGrid grid_;
  Eigen::VectorXd g_;
};

struct PatientRecord {
  std::string id;
  Eigen::VectorXd covariates;
  CumulativeDvh dvh;
  int outcome = 0;
};

struct Cohort {
  DoseGrid grid;
  std::vector<std::string> covariate_names;
  std::vector<PatientRecord> patients;

  int size() const { return static_cast<int>(patients.size()); }
  int covariate_count() const { return static_cast<int>(covariate_names.size()); }
  // Throws ValidationError unless every patient matches the grid and p.
  void validate() const;
  // Patients at `indices`, in order (duplicates kept).
  Cohort subset(std::span<const int> indices) const;
};

// g_d = sum_{d' >= d} b_{d'}.
CumulativeDvh cumulative_from_differential(const DifferentialDvh& b);

// b_d = g_d - g_{d+1} with g_{D+1} = 0.
DifferentialDvh differential_from_cumulative(const CumulativeDvh& g);

// True iff lo.g_d <= hi.g_d (within tol) for every bin, i.e. the dose of `lo`
// is stochastically no larger than the dose of `hi`.
bool stochastically_dominates(const CumulativeDvh& lo, const CumulativeDvh& hi, double tol = 1e-12);

// Complementary normal CDF evaluated at each bin's lower edge.
CumulativeDvh normal_dvh(double mu, double sigma, const DoseGrid& grid);

CumulativeDvh pointwise_average_dvh(const Cohort& cohort, std::span<const int> subset);

}  // namespace ntcp
