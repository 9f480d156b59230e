#include <algorithm>
#include <cctype>
#include <cmath>
#include <random>
#include <string>

#include "ntcp/errors.hpp"
#include "ntcp/numeric.hpp"
#include "ntcp/sim.hpp"

namespace ntcp::sim {

void Dgp::validate() const {
  if (!(a_min < a_max)) throw InvalidParameter("dgp: require a_min < a_max");
  if (!(b_min > 0.0 && b_min < b_max)) throw InvalidParameter("dgp: require 0 < b_min < b_max");
  if (!(p_x1 >= 0.0 && p_x1 <= 1.0)) throw InvalidParameter("dgp: p_x1 must lie in [0, 1]");
  if (!(shape_total > 0.0)) throw InvalidParameter("dgp: shape_total must be > 0");
  for (double v : {gamma0, gamma_mu, gamma_x1, gamma_x2, eta_x1, eta_x2})
    if (!std::isfinite(v)) throw InvalidParameter("dgp: coefficients must be finite");
}

std::vector<std::string> Dgp::covariate_names() const {
  if (has_x2) return {"x1", "x2"};
  return {"x1"};
}

std::pair<double, double> Dgp::shapes(double x1, double x2) const {
  if (shape == Shape::BinaryMixture) {
    const double alpha = x1 == 1.0 ? 2.0 : 4.0 / 3.0;
    return {alpha, 2.0 + 4.0 / 3.0 - alpha};
  }
  const double m = expit(eta_x1 * x1 + eta_x2 * x2);
  return {shape_total * m, shape_total * (1.0 - m)};
}

std::vector<Dgp::Atom> Dgp::covariate_atoms(int hermite_order) const {
  std::vector<Atom> atoms;
  for (int x1 = 0; x1 <= 1; ++x1) {
    const double w1 = x1 == 1 ? p_x1 : 1.0 - p_x1;
    if (w1 == 0.0) continue;
    if (!has_x2) {
      atoms.push_back({static_cast<double>(x1), 0.0, w1});
      continue;
    }
    const auto rule = quadrature::gauss_hermite_normal(hermite_order);
    for (std::size_t k = 0; k < rule.nodes.size(); ++k)
      atoms.push_back({static_cast<double>(x1), rule.nodes[k], w1 * rule.weights[k]});
  }
  return atoms;
}

Dgp Sim1Config::dgp() const {
  Dgp d;
  d.grid = DoseGrid(26, 30.0, 50.0);
  d.gamma0 = gamma0;
  d.gamma_mu = gamma1;
  d.gamma_x1 = gamma2;
  d.a_min = a_min;
  d.a_max = a_max;
  d.b_min = b_min;
  d.b_max = b_max;
  d.p_x1 = p_x;
  d.shape = Dgp::Shape::BinaryMixture;
  return d;
}

const char* scenario_name(Scenario s) {
  switch (s) {
    case Scenario::NoConfounding: return "none";
    case Scenario::Weak: return "weak";
    case Scenario::Strong: return "strong";
  }
  return "unknown";
}

Scenario parse_scenario(const std::string& name) {
  std::string s;
  for (char c : name) s.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
  if (s == "none" || s == "noconfounding") return Scenario::NoConfounding;
  if (s == "weak") return Scenario::Weak;
  if (s == "strong") return Scenario::Strong;
  throw InvalidParameter("unknown scenario '" + name + "'");
}

Dgp Sim2Config::dgp() const {
  Dgp d;
  // 26 bins of width 20/27 whose lower edges sit at 30 + k * 20/27, k = 1..26.
  d.grid = DoseGrid(26, 30.0 + 20.0 / 27.0, 50.0);
  d.has_x2 = true;
  d.shape = Dgp::Shape::BetaRegression;
  switch (scenario) {
    case Scenario::NoConfounding:
      d.gamma0 = -18.0, d.gamma_mu = 0.45, d.gamma_x1 = 0.0, d.gamma_x2 = 0.0;
      break;
    case Scenario::Weak:
      d.gamma0 = -18.0, d.gamma_mu = 0.45, d.gamma_x1 = 0.5, d.gamma_x2 = 0.5;
      break;
    case Scenario::Strong:
      d.gamma0 = -21.0, d.gamma_mu = 0.5, d.gamma_x1 = 1.0, d.gamma_x2 = 3.0;
      break;
  }
  return d;
}

namespace {

double draw_beta(double a, double b, Rng& rng) {
  std::gamma_distribution<double> ga(a, 1.0);
  std::gamma_distribution<double> gb(b, 1.0);
  const double u = ga(rng);
  const double v = gb(rng);
  return u / (u + v);
}

}  // namespace

Latent draw_latent(const Dgp& dgp, Rng& rng) {
  std::bernoulli_distribution bx(dgp.p_x1);
  std::normal_distribution<double> normal(0.0, 1.0);
  Latent l;
  l.x.resize(dgp.covariate_count());
  l.x(0) = bx(rng) ? 1.0 : 0.0;
  if (dgp.has_x2) l.x(1) = normal(rng);
  redraw_dose(dgp, l, rng);
  return l;
}

void redraw_dose(const Dgp& dgp, Latent& l, Rng& rng) {
  std::uniform_real_distribution<double> unif(dgp.b_min, dgp.b_max);
  const auto [alpha, beta] = dgp.shapes(l.x(0), dgp.has_x2 ? l.x(1) : 0.0);
  l.mu = dgp.a_min + (dgp.a_max - dgp.a_min) * draw_beta(alpha, beta, rng);
  l.sigma = unif(rng);
}

SimulatedCohort generate_cohort(const Dgp& dgp, int n, std::uint64_t seed) {
  dgp.validate();
  if (n < 1) throw InvalidParameter("cohort size must be >= 1");
  Rng rng(seed);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  SimulatedCohort out{Cohort{dgp.grid, dgp.covariate_names(), {}}, {}};
  out.cohort.patients.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    Latent l = draw_latent(dgp, rng);
    const double x2 = dgp.has_x2 ? l.x(1) : 0.0;
    const int y = unif(rng) < expit(dgp.outcome_eta(l.mu, l.x(0), x2)) ? 1 : 0;
    out.cohort.patients.push_back({"p" + std::to_string(i + 1), l.x, normal_dvh(l.mu, l.sigma, dgp.grid), y});
    out.latents.push_back(std::move(l));
  }
  return out;
}

SimulatedCohort generate_cohort_sim1(const Sim1Config& cfg) { return generate_cohort(cfg.dgp(), cfg.n, cfg.seed); }

SimulatedCohort generate_cohort_sim2(const Sim2Config& cfg) { return generate_cohort(cfg.dgp(), cfg.n, cfg.seed); }

}  // namespace ntcp::sim
