#include "ntcp/monotone_surface.hpp"

#include <cmath>
#include <limits>
#include <string>

#include "ntcp/errors.hpp"

namespace ntcp {
namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

double log_count_prior(const PriorConfig& prior, int k) {
  if (k < 0 || k > prior.max_points) return kNegInf;
  return k * std::log(prior.point_count_prior_mean) - std::lgamma(k + 1.0);
}

double log_exponential(double m, double rate) { return m < 0.0 ? kNegInf : std::log(rate) - rate * m; }

// Birth proposal for a mark at a location whose current level above base is
// `anchor`: an equal mixture of the prior and an exponential step above the
// anchor, so births can both refine and raise the surface.
double log_mark_proposal(double m, double anchor, double rate) {
  const double from_prior = std::exp(log_exponential(m, rate));
  const double from_anchor = m >= anchor ? rate * std::exp(-rate * (m - anchor)) : 0.0;
  return std::log(0.5 * from_prior + 0.5 * from_anchor);
}

double draw_mark(double anchor, double rate, Rng& rng) {
  std::exponential_distribution<double> expo(rate);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  const bool anchored = unif(rng) < 0.5;
  const double step = expo(rng);
  return anchored ? anchor + step : step;
}

double draw_coordinate(double edge, Rng& rng) {
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  if (edge > 0.0 && unif(rng) < edge) return 0.0;
  return unif(rng);
}

std::array<double, 2> draw_location(int dim, double edge, Rng& rng) {
  std::array<double, 2> c{draw_coordinate(edge, rng), 0.0};
  if (dim == 2) c[1] = draw_coordinate(edge, rng);
  return c;
}

double log_location(const SupportPoint& p, int dim, double edge) {
  if (edge <= 0.0) return 0.0;
  double lp = 0.0;
  for (int a = 0; a < dim; ++a) lp += p.coords[a] == 0.0 ? std::log(edge) : std::log1p(-edge);
  return lp;
}

}  // namespace

void PriorConfig::validate() const {
  if (max_points < 1) throw InvalidParameter("prior: max_points must be >= 1");
  if (!(point_count_prior_mean > 0.0) || !(mark_prior_rate > 0.0) || !(base_level_prior_sd > 0.0) ||
      !(proposal_sd_mark > 0.0) || !(proposal_sd_base > 0.0))
    throw InvalidParameter("prior: rates and standard deviations must be > 0");
  if (!(edge_probability >= 0.0 && edge_probability < 1.0))
    throw InvalidParameter("prior: edge_probability must be in [0, 1)");
}

MonotonePointConfig::MonotonePointConfig(int dim, double base_level, PriorConfig prior, bool base_free)
    : dim_(dim), base_level_(base_level), base_free_(base_free), prior_(prior) {
  if (dim != 1 && dim != 2) throw InvalidParameter("MonotonePointConfig: dim must be 1 or 2");
  prior_.validate();
}

double MonotonePointConfig::evaluate(std::span<const double> u) const {
  if (static_cast<int>(u.size()) != dim_)
    throw DomainError("evaluate: expected " + std::to_string(dim_) + " coordinates");
  for (double v : u)
    if (!(v >= 0.0 && v <= 1.0)) throw DomainError("evaluate: coordinate outside [0, 1]");
  return base_level_ + level_above_base(u[0], dim_ == 2 ? u[1] : 0.0);
}

double MonotonePointConfig::evaluate(double d, double g) const {
  if (dim_ == 1) {
    const double u[1] = {d};
    return evaluate(std::span<const double>(u, 1));
  }
  const double u[2] = {d, g};
  return evaluate(std::span<const double>(u, 2));
}

double MonotonePointConfig::log_prior() const {
  double lp = log_count_prior(prior_, size());
  for (const auto& p : points_)
    lp += log_exponential(p.mark, prior_.mark_prior_rate) + log_location(p, dim_, prior_.edge_probability);
  if (base_free_) {
    const double z = base_level_ / prior_.base_level_prior_sd;
    lp += -0.5 * z * z;
  }
  return lp;
}

void MonotonePointConfig::add_point(SupportPoint p) {
  if (p.mark < 0.0) throw InvalidParameter("support point mark must be >= 0");
  for (int a = 0; a < dim_; ++a)
    if (!(p.coords[a] >= 0.0 && p.coords[a] <= 1.0)) throw DomainError("support point outside [0, 1]");
  if (dim_ == 1) p.coords[1] = 0.0;
  points_.push_back(p);
}

void MonotonePointConfig::set_prior(const PriorConfig& prior) {
  prior.validate();
  prior_ = prior;
}

void MonotonePointConfig::remove_point(int index) { points_.erase(points_.begin() + index); }

void MonotonePointConfig::replace_point(int index, SupportPoint p) {
  if (p.mark < 0.0) throw InvalidParameter("support point mark must be >= 0");
  if (dim_ == 1) p.coords[1] = 0.0;
  points_.at(static_cast<std::size_t>(index)) = p;
}

const char* move_name(MoveType m) {
  switch (m) {
    case MoveType::Birth: return "birth";
    case MoveType::Death: return "death";
    case MoveType::Move: return "move";
    case MoveType::MarkShift: return "mark_shift";
    case MoveType::BaseShift: return "base_shift";
  }
  return "unknown";
}

KernelStats& KernelStats::operator+=(const KernelStats& o) {
  for (int i = 0; i < kMoveTypeCount; ++i) {
    proposed[i] += o.proposed[i];
    accepted[i] += o.accepted[i];
    skipped[i] += o.skipped[i];
  }
  numerical_errors += o.numerical_errors;
  return *this;
}

std::int64_t KernelStats::attempted(MoveType m) const {
  const auto i = static_cast<int>(m);
  return proposed[i] - skipped[i];
}

double KernelStats::acceptance_rate(MoveType m) const {
  const auto n = attempted(m);
  return n == 0 ? 0.0 : static_cast<double>(accepted[static_cast<int>(m)]) / static_cast<double>(n);
}

Proposal propose_move(const MonotonePointConfig& config, Rng& rng) {
  std::uniform_int_distribution<int> pick_move(0, kMoveTypeCount - 1);
  std::normal_distribution<double> normal(0.0, 1.0);
  const PriorConfig& prior = config.prior();
  const int k = config.size();

  Proposal prop;
  prop.type = static_cast<MoveType>(pick_move(rng));
  prop.candidate = config;

  switch (prop.type) {
    case MoveType::Birth: {
      if (k >= prior.max_points) {
        prop.skipped = true;
        break;
      }
      SupportPoint p;
      p.coords = draw_location(config.dim(), prior.edge_probability, rng);
      const double anchor = config.level_above_base(p.coords[0], p.coords[1]);
      p.mark = draw_mark(anchor, prior.mark_prior_rate, rng);
      prop.candidate.add_point(p);
      prop.log_ratio = log_count_prior(prior, k + 1) - log_count_prior(prior, k) +
                       log_exponential(p.mark, prior.mark_prior_rate) -
                       log_mark_proposal(p.mark, anchor, prior.mark_prior_rate);
      prop.touched.push_back(p.coords);
      break;
    }
    case MoveType::Death: {
      if (k == 0) {
        prop.skipped = true;
        break;
      }
      std::uniform_int_distribution<int> pick(0, k - 1);
      const int j = pick(rng);
      const SupportPoint p = config.points()[j];
      prop.candidate.remove_point(j);
      const double anchor = prop.candidate.level_above_base(p.coords[0], p.coords[1]);
      prop.log_ratio = log_count_prior(prior, k - 1) - log_count_prior(prior, k) +
                       log_mark_proposal(p.mark, anchor, prior.mark_prior_rate) -
                       log_exponential(p.mark, prior.mark_prior_rate);
      prop.touched.push_back(p.coords);
      break;
    }
    case MoveType::Move: {
      if (k == 0) {
        prop.skipped = true;
        break;
      }
      std::uniform_int_distribution<int> pick(0, k - 1);
      const int j = pick(rng);
      SupportPoint p = config.points()[j];
      prop.touched.push_back(p.coords);
      p.coords = draw_location(config.dim(), prior.edge_probability, rng);
      prop.candidate.replace_point(j, p);
      prop.touched.push_back(p.coords);
      break;
    }
    case MoveType::MarkShift: {
      if (k == 0) {
        prop.skipped = true;
        break;
      }
      std::uniform_int_distribution<int> pick(0, k - 1);
      const int j = pick(rng);
      SupportPoint p = config.points()[j];
      const double old_mark = p.mark;
      p.mark = old_mark * std::exp(prior.proposal_sd_mark * normal(rng));
      prop.candidate.replace_point(j, p);
      // Log-normal walk: q(m|m')/q(m'|m) = m'/m.
      prop.log_ratio = std::log(p.mark) - std::log(old_mark) - prior.mark_prior_rate * (p.mark - old_mark);
      if (!(old_mark > 0.0)) prop.skipped = true;
      prop.touched.push_back(p.coords);
      break;
    }
    case MoveType::BaseShift: {
      if (!config.base_free()) {
        prop.skipped = true;
        break;
      }
      std::uniform_real_distribution<double> unif(0.0, 1.0);
      const double old_base = config.base_level();
      const double new_base = old_base + prior.proposal_sd_base * normal(rng);
      const double delta = new_base - old_base;
      prop.candidate.set_base_level(new_base);
      const double s2 = prior.base_level_prior_sd * prior.base_level_prior_sd;
      prop.log_ratio = -0.5 * (new_base * new_base - old_base * old_base) / s2;
      prop.base_delta = delta;
      // Half of the shifts keep every point level fixed and move only the
      // floor: marks absorb the shift.
      if (k > 0 && unif(rng) < 0.5) {
        prop.compensated = true;
        bool valid = true;
        for (int j = 0; j < k; ++j) {
          SupportPoint p = config.points()[j];
          p.mark = p.mark - delta;
          if (!(p.mark > 0.0)) {
            valid = false;
            break;
          }
          prop.candidate.replace_point(j, p);
        }
        if (!valid) {
          prop.candidate = config;
          prop.log_ratio = -std::numeric_limits<double>::infinity();
          break;
        }
        prop.log_ratio += prior.mark_prior_rate * delta * k;
      }
      break;
    }
  }
  return prop;
}

StepResult rjmcmc_step(const MonotonePointConfig& config,
                       const std::function<double(const MonotonePointConfig&)>& target_logdensity, Rng& rng) {
  StepResult out{config, {}};
  Proposal prop = propose_move(config, rng);
  const auto t = static_cast<int>(prop.type);
  ++out.delta.proposed[t];
  if (prop.skipped) {
    ++out.delta.skipped[t];
    return out;
  }

  const double delta_target = target_logdensity(prop.candidate) - target_logdensity(config);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  const double u = unif(rng);
  if (std::isnan(delta_target)) {
    ++out.delta.numerical_errors;
    return out;
  }
  if (std::log(u) < prop.log_ratio + delta_target) {
    out.config = std::move(prop.candidate);
    ++out.delta.accepted[t];
  }
  return out;
}

MonotoneSurface MonotoneSurface::bivariable(double base, const PriorConfig& prior) {
  MonotoneSurface s;
  s.kind = Kind::Bivariable;
  s.joint = MonotonePointConfig(2, base, prior, true);
  return s;
}

MonotoneSurface MonotoneSurface::additive(double base, const PriorConfig& prior) {
  MonotoneSurface s;
  s.kind = Kind::Additive;
  s.dose = MonotonePointConfig(1, base, prior, true);
  s.volume = MonotonePointConfig(1, 0.0, prior, false);
  return s;
}

}  // namespace ntcp
