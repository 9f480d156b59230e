#include "ntcp/io.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "ntcp/errors.hpp"
#include "ntcp/numeric.hpp"

namespace ntcp::io {
namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(trim(cur));
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  out.push_back(trim(cur));
  return out;
}

double parse_double(const std::string& s, const std::string& where) {
  double v = 0.0;
  const char* first = s.data();
  const char* last = s.data() + s.size();
  if (!s.empty() && s[0] == '+') ++first;
  auto [ptr, ec] = std::from_chars(first, last, v);
  if (ec != std::errc() || ptr != last || s.empty())
    throw ValidationError(where + ": cannot parse number '" + s + "'");
  return v;
}

const json& require(const json& j, const char* key, const std::string& where) {
  if (!j.contains(key)) throw ValidationError(where + ": missing key '" + key + "'");
  return j.at(key);
}

template <typename T>
T get_as(const json& j, const std::string& where) {
  try {
    return j.get<T>();
  } catch (const json::exception& e) {
    throw ValidationError(where + ": " + e.what());
  }
}

template <typename T>
void read_opt(const json& j, const char* key, T& target, const std::string& where) {
  if (j.contains(key)) target = get_as<T>(j.at(key), where + "." + key);
}

Eigen::VectorXd covariate_means(const Cohort& cohort) {
  Eigen::VectorXd m = Eigen::VectorXd::Zero(cohort.covariate_count());
  for (const auto& p : cohort.patients) m += p.covariates;
  if (cohort.size() > 0) m /= cohort.size();
  return m;
}

json vector_json(const Eigen::VectorXd& v) {
  json a = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v(i));
  return a;
}

json column_sd(const Eigen::MatrixXd& draws) {
  json a = json::array();
  for (Eigen::Index c = 0; c < draws.cols(); ++c) {
    const double n = static_cast<double>(draws.rows());
    const double mean = draws.col(c).mean();
    const double ss = (draws.col(c).array() - mean).square().sum();
    a.push_back(n > 1 ? std::sqrt(ss / (n - 1)) : 0.0);
  }
  return a;
}

}  // namespace

std::string format_number(double v) {
  if (std::isnan(v)) return "NA";
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  (void)ec;
  return std::string(buf, ptr);
}

std::string format_table_number(double v) {
  if (std::isnan(v)) return "NA";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

Cohort parse_cohort_csv(std::istream& in, const DoseGrid& grid) {
  std::string line;
  if (!std::getline(in, line)) throw ValidationError("cohort CSV: empty input");
  const auto header = split_csv_line(line);
  if (header.empty() || header[0] != "id") throw ValidationError("cohort CSV: first column must be 'id'");
  const auto y_it = std::find(header.begin(), header.end(), "y");
  if (y_it == header.end()) throw ValidationError("cohort CSV: missing 'y' column");
  const int y_col = static_cast<int>(y_it - header.begin());
  const int g_count = static_cast<int>(header.size()) - y_col - 1;
  for (int k = 0; k < g_count; ++k)
    if (header[static_cast<std::size_t>(y_col + 1 + k)] != "g" + std::to_string(k + 1))
      throw ValidationError("cohort CSV: expected column 'g" + std::to_string(k + 1) + "', found '" +
                            header[static_cast<std::size_t>(y_col + 1 + k)] + "'");
  if (g_count != grid.n_bins())
    throw GridMismatch("cohort CSV has " + std::to_string(g_count) + " g columns but the dose grid has " +
                       std::to_string(grid.n_bins()) + " bins");

  Cohort cohort{grid, {}, {}};
  for (int c = 1; c < y_col; ++c) cohort.covariate_names.push_back(header[static_cast<std::size_t>(c)]);
  const int p = y_col - 1;
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    const auto cells = split_csv_line(line);
    const std::string where = "cohort CSV line " + std::to_string(line_no);
    if (cells.size() != header.size())
      throw ValidationError(where + ": expected " + std::to_string(header.size()) + " fields, found " +
                            std::to_string(cells.size()));
    Eigen::VectorXd x(p);
    for (int c = 0; c < p; ++c) x(c) = parse_double(cells[static_cast<std::size_t>(c + 1)], where);
    const double y = parse_double(cells[static_cast<std::size_t>(y_col)], where);
    if (y != 0.0 && y != 1.0) throw ValidationError(where + ": y must be 0 or 1");
    Eigen::VectorXd g(g_count);
    for (int k = 0; k < g_count; ++k) g(k) = parse_double(cells[static_cast<std::size_t>(y_col + 1 + k)], where);
    try {
      cohort.patients.push_back(PatientRecord{cells[0], x, CumulativeDvh(grid, g), static_cast<int>(y)});
    } catch (const ValidationError& e) {
      throw ValidationError(where + " (patient " + cells[0] + "): " + e.what());
    }
  }
  if (cohort.patients.empty()) throw ValidationError("cohort CSV: no patient rows");
  cohort.validate();
  return cohort;
}

Cohort read_cohort_csv(const std::filesystem::path& path, const DoseGrid& grid) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open cohort CSV '" + path.string() + "'");
  return parse_cohort_csv(in, grid);
}

std::string cohort_csv(const Cohort& cohort) {
  std::ostringstream os;
  os << "id";
  for (const auto& n : cohort.covariate_names) os << ',' << n;
  os << ",y";
  for (int k = 1; k <= cohort.grid.n_bins(); ++k) os << ",g" << k;
  os << '\n';
  for (const auto& p : cohort.patients) {
    os << p.id;
    for (Eigen::Index c = 0; c < p.covariates.size(); ++c) os << ',' << format_number(p.covariates(c));
    os << ',' << p.outcome;
    for (Eigen::Index k = 0; k < p.dvh.g().size(); ++k) os << ',' << format_number(p.dvh.g()(k));
    os << '\n';
  }
  return os.str();
}

std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open '" + path.string() + "'");
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write '" + tmp.string() + "'");
    out << text;
    if (!out) throw Error("write failed for '" + tmp.string() + "'");
  }
  std::filesystem::rename(tmp, path);
}

json read_json(const std::filesystem::path& path) {
  const auto text = read_text(path);
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw ValidationError("invalid JSON in '" + path.string() + "': " + e.what());
  }
}

void check_keys(const json& j, const std::vector<std::string>& allowed, const std::string& where) {
  if (!j.is_object()) throw ValidationError(where + ": expected an object");
  for (const auto& [k, v] : j.items())
    if (std::find(allowed.begin(), allowed.end(), k) == allowed.end())
      throw ValidationError(where + ": unknown key '" + k + "'");
}

json to_json(const DoseGrid& grid) {
  return {{"n_bins", grid.n_bins()}, {"d_min", grid.d_min()}, {"d_max", grid.d_max()}};
}

DoseGrid grid_from_json(const json& j) {
  check_keys(j, {"n_bins", "d_min", "d_max"}, "grid");
  const int n = get_as<int>(require(j, "n_bins", "grid"), "grid.n_bins");
  const double lo = get_as<double>(require(j, "d_min", "grid"), "grid.d_min");
  const double hi = get_as<double>(require(j, "d_max", "grid"), "grid.d_max");
  return DoseGrid(n, lo, hi);
}

json to_json(const PriorConfig& p) {
  return {{"max_points", p.max_points},
          {"point_count_prior_mean", p.point_count_prior_mean},
          {"mark_prior_rate", p.mark_prior_rate},
          {"base_level_prior_sd", p.base_level_prior_sd},
          {"proposal_sd_mark", p.proposal_sd_mark},
          {"proposal_sd_base", p.proposal_sd_base},
          {"edge_probability", p.edge_probability}};
}

PriorConfig prior_from_json(const json& j, PriorConfig p) {
  check_keys(j,
             {"max_points", "point_count_prior_mean", "mark_prior_rate", "base_level_prior_sd", "proposal_sd_mark",
              "proposal_sd_base", "edge_probability"},
             "prior");
  read_opt(j, "max_points", p.max_points, "prior");
  read_opt(j, "point_count_prior_mean", p.point_count_prior_mean, "prior");
  read_opt(j, "mark_prior_rate", p.mark_prior_rate, "prior");
  read_opt(j, "base_level_prior_sd", p.base_level_prior_sd, "prior");
  read_opt(j, "proposal_sd_mark", p.proposal_sd_mark, "prior");
  read_opt(j, "proposal_sd_base", p.proposal_sd_base, "prior");
  read_opt(j, "edge_probability", p.edge_probability, "prior");
  p.validate();
  return p;
}

json to_json(const McmcSettings& m) {
  return {{"iterations", m.iterations},
          {"burn_in", m.burn_in},
          {"thinning", m.thinning},
          {"seed", m.seed},
          {"moves_per_iteration", m.moves_per_iteration},
          {"parametric_updates_per_iteration", m.parametric_updates_per_iteration},
          {"adapt_interval", m.adapt_interval}};
}

McmcSettings mcmc_from_json(const json& j, McmcSettings m) {
  check_keys(j,
             {"iterations", "burn_in", "thinning", "seed", "moves_per_iteration", "parametric_updates_per_iteration",
              "adapt_interval"},
             "mcmc");
  read_opt(j, "iterations", m.iterations, "mcmc");
  read_opt(j, "burn_in", m.burn_in, "mcmc");
  read_opt(j, "thinning", m.thinning, "mcmc");
  read_opt(j, "seed", m.seed, "mcmc");
  read_opt(j, "moves_per_iteration", m.moves_per_iteration, "mcmc");
  read_opt(j, "parametric_updates_per_iteration", m.parametric_updates_per_iteration, "mcmc");
  read_opt(j, "adapt_interval", m.adapt_interval, "mcmc");
  return m;
}

json to_json(const ModelSpec& spec, const std::vector<std::string>& names) {
  json j = {{"family", family_name(spec.family)},
            {"mcmc", to_json(spec.mcmc)},
            {"prior", to_json(spec.prior)},
            {"coefficient_prior_sd", spec.coefficient_prior_sd},
            {"volume_warp", spec.volume_warp}};
  if (spec.covariates) {
    json c = json::array();
    for (int i : *spec.covariates) c.push_back(names.at(static_cast<std::size_t>(i)));
    j["covariates"] = c;
  } else {
    j["covariates"] = names;
  }
  return j;
}

ModelSpec model_spec_from_json(const json& j, const std::vector<std::string>& names, ModelSpec spec) {
  check_keys(j, {"family", "covariates", "mcmc", "prior", "coefficient_prior_sd", "volume_warp"}, "model");
  if (j.contains("family")) spec.family = parse_family(get_as<std::string>(j.at("family"), "model.family"));
  if (j.contains("covariates")) {
    std::vector<int> idx;
    for (const auto& name : get_as<std::vector<std::string>>(j.at("covariates"), "model.covariates")) {
      const auto it = std::find(names.begin(), names.end(), name);
      if (it == names.end()) throw ValidationError("model.covariates: no cohort column named '" + name + "'");
      idx.push_back(static_cast<int>(it - names.begin()));
    }
    spec.covariates = idx;
  }
  if (j.contains("mcmc")) spec.mcmc = mcmc_from_json(j.at("mcmc"), spec.mcmc);
  if (j.contains("prior")) spec.prior = prior_from_json(j.at("prior"), spec.prior);
  read_opt(j, "coefficient_prior_sd", spec.coefficient_prior_sd, "model");
  read_opt(j, "volume_warp", spec.volume_warp, "model");
  spec.validate();
  return spec;
}

json to_json(const InterventionSpec& iv) {
  json j = {{"kind", intervention_kind_name(iv.kind)},
            {"d_bin", iv.d_bin},
            {"positivity_threshold", iv.positivity_threshold}};
  if (iv.kind == InterventionSpec::Kind::PointwiseDeterministic) j["g"] = iv.g_value;
  if (iv.kind == InterventionSpec::Kind::TruncateUpper) j["q"] = iv.threshold;
  if (iv.weight_truncation_percentile) j["weight_truncation_percentile"] = *iv.weight_truncation_percentile;
  return j;
}

InterventionSpec intervention_from_json(const json& j) {
  check_keys(j, {"kind", "d_bin", "g", "q", "weight_truncation_percentile", "positivity_threshold"}, "intervention");
  const auto kind = get_as<std::string>(require(j, "kind", "intervention"), "intervention.kind");
  const int d_bin = get_as<int>(require(j, "d_bin", "intervention"), "intervention.d_bin");
  InterventionSpec iv;
  if (kind == "Identity") {
    iv = InterventionSpec::identity(d_bin);
  } else if (kind == "PointwiseDeterministic") {
    iv = InterventionSpec::pointwise(d_bin, get_as<double>(require(j, "g", "intervention"), "intervention.g"));
  } else if (kind == "TruncateUpper") {
    iv = InterventionSpec::truncate_upper(d_bin, get_as<double>(require(j, "q", "intervention"), "intervention.q"));
  } else {
    throw ValidationError("intervention.kind: expected Identity, PointwiseDeterministic or TruncateUpper, got '" +
                          kind + "'");
  }
  if (j.contains("weight_truncation_percentile"))
    iv.weight_truncation_percentile =
        get_as<double>(j.at("weight_truncation_percentile"), "intervention.weight_truncation_percentile");
  read_opt(j, "positivity_threshold", iv.positivity_threshold, "intervention");
  return iv;
}

json to_json(const MonotonePointConfig& c) {
  json pts = json::array();
  for (const auto& p : c.points()) {
    json row = json::array();
    for (int a = 0; a < c.dim(); ++a) row.push_back(p.coords[static_cast<std::size_t>(a)]);
    row.push_back(p.mark);
    pts.push_back(row);
  }
  return {{"dim", c.dim()}, {"base", c.base_level()}, {"points", pts}};
}

MonotonePointConfig point_config_from_json(const json& j, const PriorConfig& prior, bool base_free) {
  const int dim = get_as<int>(require(j, "dim", "draw"), "draw.dim");
  MonotonePointConfig c(dim, get_as<double>(require(j, "base", "draw"), "draw.base"), prior, base_free);
  for (const auto& row : require(j, "points", "draw")) {
    const auto v = get_as<std::vector<double>>(row, "draw.points");
    if (static_cast<int>(v.size()) != dim + 1) throw ValidationError("draw.points: wrong entry length");
    SupportPoint p;
    for (int a = 0; a < dim; ++a) p.coords[static_cast<std::size_t>(a)] = v[static_cast<std::size_t>(a)];
    p.mark = v.back();
    c.add_point(p);
  }
  return c;
}

json to_json(const MonotoneSurface& s) {
  if (s.kind == MonotoneSurface::Kind::Bivariable) return {{"kind", "bivariable"}, {"joint", to_json(s.joint)}};
  return {{"kind", "additive"}, {"dose", to_json(s.dose)}, {"volume", to_json(s.volume)}};
}

MonotoneSurface surface_from_json(const json& j, const PriorConfig& prior) {
  const auto kind = get_as<std::string>(require(j, "kind", "draw.surface"), "draw.surface.kind");
  MonotoneSurface s;
  if (kind == "bivariable") {
    s.kind = MonotoneSurface::Kind::Bivariable;
    s.joint = point_config_from_json(require(j, "joint", "draw.surface"), prior, true);
  } else if (kind == "additive") {
    s.kind = MonotoneSurface::Kind::Additive;
    s.dose = point_config_from_json(require(j, "dose", "draw.surface"), prior, true);
    s.volume = point_config_from_json(require(j, "volume", "draw.surface"), prior, false);
  } else {
    throw ValidationError("draw.surface.kind: unknown '" + kind + "'");
  }
  return s;
}

json fit_summary(const MSMFit& fit, const Cohort& cohort) {
  std::vector<std::string> fitted;
  for (int i : fit.covariate_indices) fitted.push_back(cohort.covariate_names.at(static_cast<std::size_t>(i)));
  json j;
  j["model"] = to_json(fit.spec, cohort.covariate_names);
  j["grid"] = to_json(fit.grid);
  j["n_patients"] = cohort.size();
  j["n_rows"] = cohort.size() * fit.grid.n_bins();
  j["draws"] = fit.draw_count();
  j["beta"] = {{"names", fitted}, {"mean", vector_json(fit.beta_mean)}, {"sd", column_sd(fit.beta_draws)}};
  if (!is_monotone(fit.spec.family))
    j["coefficients"] = {{"mean", vector_json(fit.coefficient_mean)}, {"sd", column_sd(fit.coefficient_draws)}};
  j["metrics"] = {{"brier", fit.metrics.brier},
                  {"deviance_mean", fit.metrics.deviance_mean},
                  {"deviance_at_mean", fit.metrics.deviance_at_mean},
                  {"k_effective", fit.metrics.k_effective},
                  {"dic", fit.metrics.dic}};
  const auto& dg = fit.diagnostics;
  json moves = json::object();
  for (int m = 0; m < kMoveTypeCount; ++m) {
    const auto t = static_cast<MoveType>(m);
    moves[move_name(t)] = {{"attempted", dg.surface_moves.attempted(t)},
                           {"accepted", dg.surface_moves.accepted[static_cast<std::size_t>(m)]},
                           {"rate", dg.surface_moves.acceptance_rate(t)}};
  }
  j["diagnostics"] = {{"surface_moves", moves},
                      {"beta_acceptance", dg.beta_acceptance},
                      {"coefficient_acceptance", dg.coefficient_acceptance},
                      {"mean_point_count", dg.mean_point_count},
                      {"non_convergence", dg.non_convergence},
                      {"warnings", dg.warnings}};
  const double cov = fit.covariate_term(covariate_means(cohort));
  json surface = json::array();
  for (std::size_t a = 0; a < fit.surface_grid_d.size(); ++a)
    for (std::size_t b = 0; b < fit.surface_grid_g.size(); ++b) {
      const double lam = fit.quasi_posterior_mean_surface(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b));
      surface.push_back({fit.grid.gy_from_scaled(fit.surface_grid_d[a]), fit.surface_grid_g[b], lam,
                         expit(cov + lam)});
    }
  j["surface"] = {{"columns", {"d_gy", "volume", "lambda", "ntcp"}}, {"rows", surface}};
  return j;
}

std::string surface_csv(const MSMFit& fit, const Cohort& cohort) {
  const double cov = fit.covariate_term(covariate_means(cohort));
  std::ostringstream os;
  os << "d_gy,volume,lambda,ntcp\n";
  for (std::size_t a = 0; a < fit.surface_grid_d.size(); ++a)
    for (std::size_t b = 0; b < fit.surface_grid_g.size(); ++b) {
      const double lam = fit.quasi_posterior_mean_surface(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b));
      os << format_table_number(fit.grid.gy_from_scaled(fit.surface_grid_d[a])) << ','
         << format_table_number(fit.surface_grid_g[b]) << ',' << format_table_number(lam) << ','
         << format_table_number(expit(cov + lam)) << '\n';
    }
  return os.str();
}

std::string draws_jsonl(const MSMFit& fit) {
  std::string out;
  for (int s = 0; s < fit.draw_count(); ++s) {
    json j;
    j["draw"] = s;
    j["beta"] = vector_json(fit.beta_draws.row(s).transpose());
    if (is_monotone(fit.spec.family))
      j["surface"] = to_json(fit.surface_draws[static_cast<std::size_t>(s)]);
    else
      j["coefficients"] = vector_json(fit.coefficient_draws.row(s).transpose());
    out += j.dump();
    out += '\n';
  }
  return out;
}

MSMFit fit_from_artifacts(const json& summary, const std::string& draws, const Cohort& cohort) {
  MSMFit fit;
  fit.spec = model_spec_from_json(require(summary, "model", "fit summary"), cohort.covariate_names);
  fit.grid = grid_from_json(require(summary, "grid", "fit summary"));
  if (!(fit.grid == cohort.grid)) throw GridMismatch("fit summary grid differs from the cohort grid");
  fit.covariate_indices = fit.spec.covariate_indices(cohort);
  const auto p = static_cast<Eigen::Index>(fit.covariate_indices.size());
  std::vector<json> lines;
  std::istringstream in(draws);
  std::string line;
  while (std::getline(in, line)) {
    if (trim(line).empty()) continue;
    try {
      lines.push_back(json::parse(line));
    } catch (const json::parse_error& e) {
      throw ValidationError(std::string("draws: ") + e.what());
    }
  }
  if (lines.empty()) throw EmptyDraws("draws: no draws found");
  const auto n = static_cast<Eigen::Index>(lines.size());
  fit.beta_draws.resize(n, p);
  const bool mono = is_monotone(fit.spec.family);
  if (!mono) fit.coefficient_draws.resize(n, parametric_term_count(fit.spec.family));
  for (Eigen::Index s = 0; s < n; ++s) {
    const auto& j = lines[static_cast<std::size_t>(s)];
    const auto beta = get_as<std::vector<double>>(require(j, "beta", "draw"), "draw.beta");
    if (static_cast<Eigen::Index>(beta.size()) != p) throw ValidationError("draw.beta: wrong length");
    for (Eigen::Index c = 0; c < p; ++c) fit.beta_draws(s, c) = beta[static_cast<std::size_t>(c)];
    if (mono) {
      fit.surface_draws.push_back(surface_from_json(require(j, "surface", "draw"), fit.spec.prior));
    } else {
      const auto co = get_as<std::vector<double>>(require(j, "coefficients", "draw"), "draw.coefficients");
      if (static_cast<Eigen::Index>(co.size()) != fit.coefficient_draws.cols())
        throw ValidationError("draw.coefficients: wrong length");
      for (Eigen::Index c = 0; c < fit.coefficient_draws.cols(); ++c)
        fit.coefficient_draws(s, c) = co[static_cast<std::size_t>(c)];
    }
  }
  fit.summarize();
  const auto rows = build_replicated_dataset(cohort);
  fit.metrics = fit_metrics(fit, rows);
  return fit;
}

}  // namespace ntcp::io
