#include <algorithm>
#include <cmath>
#include <sstream>
#include <string>

#include "ntcp/errors.hpp"
#include "ntcp/msm.hpp"
#include "ntcp/numeric.hpp"

namespace ntcp {
namespace {

// Replicated rows in structure-of-arrays form; row r = patient * n_bins + (d - 1).
struct FitData {
  int n = 0;
  int n_bins = 0;
  std::vector<int> y;
  std::vector<int> patient;
  std::vector<double> d;
  std::vector<double> g;
  Eigen::MatrixXd x;  // patients x fitted covariates

  std::size_t rows() const { return y.size(); }
};

FitData make_fit_data(const Cohort& cohort, const ModelSpec& spec, const std::vector<int>& cov) {
  FitData fd;
  fd.n = cohort.size();
  fd.n_bins = cohort.grid.n_bins();
  fd.x.resize(fd.n, static_cast<Eigen::Index>(cov.size()));
  for (int i = 0; i < fd.n; ++i) {
    const auto& pt = cohort.patients[static_cast<std::size_t>(i)];
    for (std::size_t j = 0; j < cov.size(); ++j) fd.x(i, static_cast<Eigen::Index>(j)) = pt.covariates(cov[j]);
    for (int d = 1; d <= fd.n_bins; ++d) {
      fd.y.push_back(pt.outcome);
      fd.patient.push_back(i);
      fd.d.push_back(cohort.grid.scaled(d));
      fd.g.push_back(spec.surface_volume(pt.dvh.at(d)));
    }
  }
  return fd;
}

// Proposal scale tuning during burn-in: log-scale step toward a target rate.
struct AdaptiveScale {
  double scale;
  double target;
  std::int64_t window_proposed = 0;
  std::int64_t window_accepted = 0;
  std::int64_t proposed = 0;  // post burn-in
  std::int64_t accepted = 0;

  void record(bool ok, bool burn_in) {
    if (burn_in) {
      ++window_proposed;
      window_accepted += ok ? 1 : 0;
    } else {
      ++proposed;
      accepted += ok ? 1 : 0;
    }
  }
  void adapt() {
    if (window_proposed == 0) return;
    const double rate = static_cast<double>(window_accepted) / static_cast<double>(window_proposed);
    scale *= std::exp(2.0 * (rate - target));
    window_proposed = window_accepted = 0;
  }
  double rate() const { return proposed == 0 ? 0.0 : static_cast<double>(accepted) / static_cast<double>(proposed); }
};

double log_uniform(Rng& rng) {
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  return std::log(unif(rng));
}

void check_rates(FitDiagnostics& diag) {
  auto flag = [&](const std::string& what, double rate) {
    if (rate < 0.02 || rate > 0.95) {
      diag.non_convergence = true;
      std::ostringstream os;
      os << "NonConvergenceWarning: " << what << " acceptance rate " << rate;
      diag.warnings.push_back(os.str());
    }
  };
  for (std::size_t j = 0; j < diag.beta_acceptance.size(); ++j)
    flag("beta[" + std::to_string(j) + "]", diag.beta_acceptance[j]);
  for (int m = 0; m < kMoveTypeCount; ++m) {
    const auto type = static_cast<MoveType>(m);
    if (diag.surface_moves.attempted(type) > 0) flag(move_name(type), diag.surface_moves.acceptance_rate(type));
  }
}

// Linear-family quasi-posterior mode (covariate betas, then t0, t1, t2); used
// to warm-start the monotone chains.
Eigen::VectorXd linear_mode(const FitData& data, const ModelSpec& spec);

// Reversible-jump sampler for the monotone families. Per-row caches hold the
// level above base of each component, the covariate term lives per patient,
// and each move only re-evaluates rows in the upper orthant of the touched
// support points.
class MonotoneSampler {
 public:
  MonotoneSampler(const FitData& data, const ModelSpec& spec)
      : data_(data), spec_(spec), rng_(spec.mcmc.seed), additive_(spec.family == ModelFamily::AdditiveMonotone) {
    const auto rows = data_.rows();
    double ybar = 0.0;
    for (int v : data_.y) ybar += v;
    ybar /= static_cast<double>(rows);
    double base = logit(std::clamp(ybar, 0.01, 0.99));
    beta_ = Eigen::VectorXd::Zero(data_.x.cols());
    // An empty surface takes thousands of sweeps to grow a steep staircase,
    // so start from the linear fit cut into a monotone step function.
    const Eigen::VectorXd start = linear_mode(data_, spec);
    const Eigen::Index p = beta_.size();
    const bool usable = start.allFinite() && start.tail(3).cwiseAbs().maxCoeff() < 50.0 &&
                        (p == 0 || start.head(p).cwiseAbs().maxCoeff() < 50.0);
    double t1 = 0.0;
    double t2 = 0.0;
    if (usable) {
      beta_ = start.head(p);
      base = start(p);
      t1 = std::max(start(p + 1), 0.0);
      t2 = std::max(start(p + 2), 0.0);
    }
    surface_ = additive_ ? MonotoneSurface::additive(base, spec.prior) : MonotoneSurface::bivariable(base, spec.prior);
    const int steps = additive_ ? 8 : 6;
    for (int i = 0; i < steps; ++i)
      for (int j = 0; j < steps; ++j) {
        const double a = static_cast<double>(i) / steps;
        const double b = static_cast<double>(j) / steps;
        if (additive_) {
          if (j == 0 && i > 0 && t1 * a > 1e-6) surface_.dose.add_point({{a, 0.0}, t1 * a});
          if (i == 0 && j > 0 && t2 * b > 1e-6) surface_.volume.add_point({{b, 0.0}, t2 * b});
        } else if (t1 * a + t2 * b > 1e-6) {
          surface_.joint.add_point({{a, b}, t1 * a + t2 * b});
        }
      }
    above_a_.resize(rows);
    above_b_.assign(rows, 0.0);
    for (std::size_t r = 0; r < rows; ++r) {
      if (additive_) {
        above_a_[r] = surface_.dose.level_above_base(data_.d[r], 0.0);
        above_b_[r] = surface_.volume.level_above_base(data_.g[r], 0.0);
      } else {
        above_a_[r] = surface_.joint.level_above_base(data_.d[r], data_.g[r]);
      }
    }
    eta_cov_ = data_.x * beta_;
    ll_.resize(rows);
    for (std::size_t r = 0; r < rows; ++r) ll_[r] = bernoulli_loglik(data_.y[r], eta(r));
    for (Eigen::Index j = 0; j < beta_.size(); ++j) beta_scale_.push_back({0.5, 0.44});
    mark_scale_ = {spec.prior.proposal_sd_mark, 0.3};
    base_scale_ = {spec.prior.proposal_sd_base, 0.3};
  }

  void run(MSMFit& fit) {
    const auto& mc = spec_.mcmc;
    const auto rows = data_.rows();
    const int kept = (mc.iterations - mc.burn_in + mc.thinning - 1) / mc.thinning;
    fit.beta_draws.resize(kept, beta_.size());
    fit.surface_draws.reserve(static_cast<std::size_t>(kept));
    std::vector<double> lambda_sum(rows, 0.0);
    double deviance_sum = 0.0;
    double points_sum = 0.0;
    int s = 0;
    for (int it = 0; it < mc.iterations; ++it) {
      const bool burn = it < mc.burn_in;
      update_beta(burn);
      for (int m = 0; m < mc.moves_per_iteration; ++m) surface_move(burn);
      if (burn && (it + 1) % mc.adapt_interval == 0) adapt();
      if (!burn && (it - mc.burn_in) % mc.thinning == 0) {
        fit.beta_draws.row(s) = beta_.transpose();
        fit.surface_draws.push_back(surface_);
        double ll = 0.0;
        for (std::size_t r = 0; r < rows; ++r) {
          lambda_sum[r] += lambda(r);
          ll += ll_[r];
        }
        deviance_sum += -2.0 * ll;
        points_sum += surface_.point_count();
        ++s;
      }
    }
    FitDiagnostics& diag = fit.diagnostics;
    diag.surface_moves = stats_;
    for (const auto& a : beta_scale_) diag.beta_acceptance.push_back(a.rate());
    diag.mean_point_count = points_sum / kept;
    check_rates(diag);

    fit.beta_mean = fit.beta_draws.colwise().mean().transpose();
    FitMetrics& m = fit.metrics;
    m.deviance_mean = deviance_sum / kept;
    const Eigen::VectorXd cov_mean = data_.x * fit.beta_mean;
    double ll_at_mean = 0.0;
    double sq = 0.0;
    for (std::size_t r = 0; r < rows; ++r) {
      const double e = cov_mean(data_.patient[r]) + lambda_sum[r] / kept;
      ll_at_mean += bernoulli_loglik(data_.y[r], e);
      const double resid = data_.y[r] - expit(e);
      sq += resid * resid;
    }
    m.deviance_at_mean = -2.0 * ll_at_mean;
    m.k_effective = m.deviance_mean - m.deviance_at_mean;
    m.dic = m.deviance_at_mean + 2.0 * m.k_effective;
    m.brier_raw = sq / static_cast<double>(rows);
    m.brier = 100.0 * m.brier_raw;
  }

 private:
  double base() const { return additive_ ? surface_.dose.base_level() : surface_.joint.base_level(); }
  double lambda_with(double b, std::size_t r) const { return additive_ ? (b + above_a_[r]) + above_b_[r] : b + above_a_[r]; }
  double lambda(std::size_t r) const { return lambda_with(base(), r); }
  double eta(std::size_t r) const { return eta_cov_(data_.patient[r]) + lambda(r); }

  void update_beta(bool burn) {
    std::normal_distribution<double> normal(0.0, 1.0);
    const double prior_var = spec_.coefficient_prior_sd * spec_.coefficient_prior_sd;
    const auto rows = data_.rows();
    for (Eigen::Index j = 0; j < beta_.size(); ++j) {
      auto& sc = beta_scale_[static_cast<std::size_t>(j)];
      const double step = sc.scale * normal(rng_);
      const Eigen::VectorXd new_eta_cov = eta_cov_ + step * data_.x.col(j);
      double delta = 0.0;
      for (std::size_t r = 0; r < rows; ++r) {
        buffer_ll_[r] = bernoulli_loglik(data_.y[r], new_eta_cov(data_.patient[r]) + lambda(r));
        delta += buffer_ll_[r] - ll_[r];
      }
      const double nb = beta_(j) + step;
      const double log_prior = -0.5 * (nb * nb - beta_(j) * beta_(j)) / prior_var;
      const bool ok = !std::isnan(delta) && log_uniform(rng_) < delta + log_prior;
      if (ok) {
        beta_(j) = nb;
        eta_cov_ = new_eta_cov;
        ll_.swap(buffer_ll_);
      }
      sc.record(ok, burn);
    }
  }

  void surface_move(bool burn) {
    std::uniform_int_distribution<int> pick_component(0, 1);
    const bool volume_component = additive_ && pick_component(rng_) == 1;
    MonotonePointConfig& config = !additive_ ? surface_.joint : (volume_component ? surface_.volume : surface_.dose);
    std::vector<double>& above = volume_component ? above_b_ : above_a_;

    Proposal prop = propose_move(config, rng_);
    const auto t = static_cast<int>(prop.type);
    ++stats_.proposed[t];
    if (prop.skipped) {
      ++stats_.skipped[t];
      return;
    }
    const auto rows = data_.rows();
    double delta = 0.0;
    affected_.clear();
    if (prop.type == MoveType::BaseShift) {
      const double nb = prop.candidate.base_level();
      for (std::size_t r = 0; r < rows; ++r) {
        if (prop.compensated && above[r] > 0.0) {
          buffer_ll_[r] = ll_[r];
          continue;
        }
        buffer_ll_[r] = bernoulli_loglik(data_.y[r], eta_cov_(data_.patient[r]) + lambda_with(nb, r));
        delta += buffer_ll_[r] - ll_[r];
      }
    } else {
      for (std::size_t r = 0; r < rows; ++r) {
        // Additive components are one-dimensional along their own axis.
        const double u = volume_component ? data_.g[r] : data_.d[r];
        const double v = additive_ ? 0.0 : data_.g[r];
        bool hit = false;
        for (const auto& c : prop.touched)
          if (c[0] <= u && c[1] <= v) {
            hit = true;
            break;
          }
        if (!hit) continue;
        const double level = prop.candidate.level_above_base(u, v);
        const double saved = above[r];
        above[r] = level;
        const double ll_new = bernoulli_loglik(data_.y[r], eta(r));
        above[r] = saved;
        affected_.push_back({r, level, ll_new});
        delta += ll_new - ll_[r];
      }
    }
    if (std::isnan(delta)) {
      ++stats_.numerical_errors;
      return;
    }
    const bool ok = log_uniform(rng_) < prop.log_ratio + delta;
    if (ok) {
      ++stats_.accepted[t];
      if (prop.type == MoveType::BaseShift) {
        ll_.swap(buffer_ll_);
        if (prop.compensated)
          for (double& a : above)
            if (a > 0.0) a = a - prop.base_delta;
      } else {
        for (const auto& a : affected_) {
          above[a.row] = a.level;
          ll_[a.row] = a.ll;
        }
      }
      config = std::move(prop.candidate);
    }
    if (burn) {
      if (prop.type == MoveType::MarkShift) mark_scale_.record(ok, true);
      if (prop.type == MoveType::BaseShift) base_scale_.record(ok, true);
    }
  }

  void adapt() {
    for (auto& a : beta_scale_) a.adapt();
    mark_scale_.adapt();
    base_scale_.adapt();
    PriorConfig p = spec_.prior;
    p.proposal_sd_mark = std::clamp(mark_scale_.scale, 1e-4, 5.0);
    p.proposal_sd_base = std::clamp(base_scale_.scale, 1e-5, 5.0);
    mark_scale_.scale = p.proposal_sd_mark;
    base_scale_.scale = p.proposal_sd_base;
    if (additive_) {
      surface_.dose.set_prior(p);
      surface_.volume.set_prior(p);
    } else {
      surface_.joint.set_prior(p);
    }
  }

  struct Affected {
    std::size_t row;
    double level;
    double ll;
  };

  const FitData& data_;
  const ModelSpec& spec_;
  Rng rng_;
  bool additive_;
  MonotoneSurface surface_;
  std::vector<double> above_a_;  // bivariable: joint; additive: dose component
  std::vector<double> above_b_;  // additive: volume component
  Eigen::VectorXd beta_;
  Eigen::VectorXd eta_cov_;
  std::vector<double> ll_;
  std::vector<double> buffer_ll_ = std::vector<double>(data_.rows());
  std::vector<Affected> affected_;
  std::vector<AdaptiveScale> beta_scale_;
  AdaptiveScale mark_scale_{0.3, 0.3};
  AdaptiveScale base_scale_{0.1, 0.3};
  KernelStats stats_;
};

// Random-walk Metropolis for the parametric families on the joint vector
// (covariate betas, dose-volume coefficients). The chain starts at the
// quasi-posterior mode and proposes from the scaled inverse Hessian there.
class ParametricSampler {
 public:
  ParametricSampler(const FitData& data, const ModelSpec& spec) : data_(data), spec_(spec), rng_(spec.mcmc.seed) {
    const auto rows = static_cast<Eigen::Index>(data_.rows());
    const Eigen::Index p = data_.x.cols();
    k_ = parametric_term_count(spec.family);
    design_.resize(rows, p + k_);
    for (Eigen::Index r = 0; r < rows; ++r) {
      design_.row(r).head(p) = data_.x.row(data_.patient[static_cast<std::size_t>(r)]);
      design_.row(r).tail(k_) =
          parametric_terms(spec.family, data_.d[static_cast<std::size_t>(r)], data_.g[static_cast<std::size_t>(r)])
              .transpose();
    }
  }

  void run(MSMFit& fit) {
    const auto& mc = spec_.mcmc;
    const Eigen::Index dim = design_.cols();
    const Eigen::Index p = data_.x.cols();
    const double prior_prec = 1.0 / (spec_.coefficient_prior_sd * spec_.coefficient_prior_sd);

    Eigen::VectorXd theta = mode(prior_prec);
    Eigen::MatrixXd info = fisher(theta, prior_prec);
    Eigen::LLT<Eigen::MatrixXd> chol(info.inverse());
    if (chol.info() != Eigen::Success) throw NumericalError("parametric fit: proposal covariance not positive definite");
    const Eigen::MatrixXd root = chol.matrixL();
    double scale = 2.38 / std::sqrt(static_cast<double>(dim));
    AdaptiveScale tuner{scale, 0.25};

    double lp = log_post(theta, prior_prec);
    const int kept = (mc.iterations - mc.burn_in + mc.thinning - 1) / mc.thinning;
    fit.beta_draws.resize(kept, p);
    fit.coefficient_draws.resize(kept, k_);
    double deviance_sum = 0.0;
    std::normal_distribution<double> normal(0.0, 1.0);
    int s = 0;
    for (int it = 0; it < mc.iterations; ++it) {
      const bool burn = it < mc.burn_in;
      for (int u = 0; u < mc.parametric_updates_per_iteration; ++u) {
        Eigen::VectorXd z(dim);
        for (Eigen::Index j = 0; j < dim; ++j) z(j) = normal(rng_);
        const Eigen::VectorXd cand = theta + tuner.scale * (root * z);
        const double lp_cand = log_post(cand, prior_prec);
        const bool ok = !std::isnan(lp_cand) && log_uniform(rng_) < lp_cand - lp;
        if (ok) {
          theta = cand;
          lp = lp_cand;
        }
        tuner.record(ok, burn);
      }
      if (burn && (it + 1) % mc.adapt_interval == 0) tuner.adapt();
      if (!burn && (it - mc.burn_in) % mc.thinning == 0) {
        fit.beta_draws.row(s) = theta.head(p).transpose();
        fit.coefficient_draws.row(s) = theta.tail(k_).transpose();
        const Eigen::VectorXd eta = design_ * theta;
        deviance_sum += -2.0 * loglik(eta);
        ++s;
      }
    }
    fit.diagnostics.coefficient_acceptance = tuner.rate();
    if (tuner.rate() < 0.02 || tuner.rate() > 0.95) {
      fit.diagnostics.non_convergence = true;
      fit.diagnostics.warnings.push_back("NonConvergenceWarning: coefficient acceptance rate " +
                                         std::to_string(tuner.rate()));
    }
    fit.beta_mean = fit.beta_draws.colwise().mean().transpose();
    fit.coefficient_mean = fit.coefficient_draws.colwise().mean().transpose();

    FitMetrics& m = fit.metrics;
    m.deviance_mean = deviance_sum / kept;
    // Plug-in at the posterior mean, split as covariate term + dose-volume
    // term to mirror fit_metrics().
    const Eigen::VectorXd cov = data_.x * fit.beta_mean;
    double ll_at_mean = 0.0;
    double sq = 0.0;
    const Eigen::VectorXd surf = design_.rightCols(k_) * fit.coefficient_mean;
    for (std::size_t r = 0; r < data_.rows(); ++r) {
      const double e = cov(data_.patient[r]) + surf(static_cast<Eigen::Index>(r));
      ll_at_mean += bernoulli_loglik(data_.y[r], e);
      const double resid = data_.y[r] - expit(e);
      sq += resid * resid;
    }
    m.deviance_at_mean = -2.0 * ll_at_mean;
    m.k_effective = m.deviance_mean - m.deviance_at_mean;
    m.dic = m.deviance_at_mean + 2.0 * m.k_effective;
    m.brier_raw = sq / static_cast<double>(data_.rows());
    m.brier = 100.0 * m.brier_raw;
  }

 Eigen::VectorXd posterior_mode() const {
    return mode(1.0 / (spec_.coefficient_prior_sd * spec_.coefficient_prior_sd));
  }

 private:
  double loglik(const Eigen::VectorXd& eta) const {
    double ll = 0.0;
    for (std::size_t r = 0; r < data_.rows(); ++r) ll += bernoulli_loglik(data_.y[r], eta(static_cast<Eigen::Index>(r)));
    return ll;
  }
  double log_post(const Eigen::VectorXd& theta, double prior_prec) const {
    return loglik(design_ * theta) - 0.5 * prior_prec * theta.squaredNorm();
  }
  Eigen::MatrixXd fisher(const Eigen::VectorXd& theta, double prior_prec) const {
    const Eigen::VectorXd eta = design_ * theta;
    Eigen::VectorXd w(eta.size());
    for (Eigen::Index r = 0; r < eta.size(); ++r) {
      const double pr = expit(eta(r));
      w(r) = std::max(pr * (1.0 - pr), 1e-12);
    }
    Eigen::MatrixXd info = design_.transpose() * w.asDiagonal() * design_;
    info.diagonal().array() += prior_prec;
    return info;
  }
  // Newton-Raphson on the penalized quasi-log-likelihood.
  Eigen::VectorXd mode(double prior_prec) const {
    Eigen::VectorXd theta = Eigen::VectorXd::Zero(design_.cols());
    double lp = log_post(theta, prior_prec);
    for (int iter = 0; iter < 100; ++iter) {
      const Eigen::VectorXd eta = design_ * theta;
      Eigen::VectorXd resid(eta.size());
      for (Eigen::Index r = 0; r < eta.size(); ++r) resid(r) = data_.y[static_cast<std::size_t>(r)] - expit(eta(r));
      const Eigen::VectorXd grad = design_.transpose() * resid - prior_prec * theta;
      const Eigen::VectorXd step = fisher(theta, prior_prec).ldlt().solve(grad);
      double t = 1.0;
      Eigen::VectorXd next = theta + step;
      double lp_next = log_post(next, prior_prec);
      while (!(lp_next >= lp) && t > 1e-8) {
        t *= 0.5;
        next = theta + t * step;
        lp_next = log_post(next, prior_prec);
      }
      if (!(lp_next >= lp)) break;
      const double change = (next - theta).cwiseAbs().maxCoeff();
      theta = next;
      lp = lp_next;
      if (change < 1e-10) break;
    }
    return theta;
  }

  const FitData& data_;
  const ModelSpec& spec_;
  Rng rng_;
  Eigen::Index k_ = 0;
  Eigen::MatrixXd design_;
};

Eigen::VectorXd linear_mode(const FitData& data, const ModelSpec& spec) {
  ModelSpec linear = spec;
  linear.family = ModelFamily::Linear;
  return ParametricSampler(data, linear).posterior_mode();
}

}  // namespace

MSMFit fit_msm(const Cohort& cohort, const ModelSpec& spec) {
  cohort.validate();
  spec.validate();
  MSMFit fit;
  fit.spec = spec;
  fit.grid = cohort.grid;
  fit.covariate_indices = spec.covariate_indices(cohort);
  const FitData data = make_fit_data(cohort, spec, fit.covariate_indices);

  int events = 0;
  for (int v : data.y) events += v;
  if (events == 0 || events == static_cast<int>(data.rows()))
    fit.diagnostics.warnings.push_back("degenerate outcome: only one outcome class present");

  if (is_monotone(spec.family)) {
    MonotoneSampler sampler(data, spec);
    sampler.run(fit);
  } else {
    ParametricSampler sampler(data, spec);
    sampler.run(fit);
  }
  fit.summarize();
  return fit;
}

}  // namespace ntcp
