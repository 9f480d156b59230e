#include "ntcp/cli.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <limits>
#include <map>
#include <optional>
#include <sstream>

#include <CLI11.hpp>

#include "ntcp/errors.hpp"
#include "ntcp/io.hpp"
#include "ntcp/msm.hpp"
#include "ntcp/numeric.hpp"
#include "ntcp/sim.hpp"

namespace ntcp::cli {
namespace fs = std::filesystem;
using io::json;

namespace {

class PositivityBreach : public Error {
 public:
  using Error::Error;
};

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

struct Flags {
  std::string command;
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::optional<int> workers;
  bool strict_positivity = false;
};

// Output directory bookkeeping: every file goes through write() so the
// manifest can list it.
class RunContext {
 public:
  RunContext(fs::path out, std::string command) : out_(std::move(out)), command_(std::move(command)) {
    fs::create_directories(out_);
    fs::remove(out_ / "manifest.json");
  }
  void write(const std::string& rel, const std::string& text) {
    io::write_text(out_ / rel, text);
    files_[rel] = text;
  }
  void write_json(const std::string& rel, const json& j) { write(rel, j.dump(2) + "\n"); }
  void finish(std::uint64_t seed) {
    json files = json::array();
    for (const auto& [rel, text] : files_)
      files.push_back({{"path", rel}, {"bytes", text.size()}, {"fnv1a64", hex64(fnv1a64(text))}});
    json m = {{"command", command_}, {"seed", seed}, {"files", files}};
    io::write_text(out_ / "manifest.json", m.dump(2) + "\n");
  }
  const fs::path& out() const { return out_; }

 private:
  fs::path out_;
  std::string command_;
  std::map<std::string, std::string> files_;
};

// The config file plus flag overrides, with every default filled in.
struct Settings {
  json raw;
  fs::path base_dir;
  std::uint64_t seed = 1;
  int workers = 0;
  std::string out = "ntcp_out";
  bool strict_positivity = false;

  const json& section(const char* key) const {
    static const json empty = json::object();
    return raw.contains(key) ? raw.at(key) : empty;
  }
  fs::path resolve(const std::string& p) const {
    const fs::path path(p);
    return path.is_absolute() ? path : base_dir / path;
  }
};

Settings load_settings(const Flags& flags) {
  Settings s;
  s.raw = json::object();
  if (!flags.config_path.empty()) {
    s.raw = io::read_json(flags.config_path);
    s.base_dir = fs::path(flags.config_path).parent_path();
  }
  io::check_keys(s.raw,
                 {"input", "grid", "model", "intervention", "weights", "estimate", "bootstrap", "simulate", "export",
                  "seed", "workers", "out"},
                 "config");
  try {
    if (s.raw.contains("seed")) s.seed = s.raw.at("seed").get<std::uint64_t>();
    if (s.raw.contains("workers")) s.workers = s.raw.at("workers").get<int>();
    if (s.raw.contains("out")) s.out = s.raw.at("out").get<std::string>();
    if (s.raw.contains("estimate") && s.raw.at("estimate").contains("strict_positivity"))
      s.strict_positivity = s.raw.at("estimate").at("strict_positivity").get<bool>();
  } catch (const json::exception& e) {
    throw ValidationError(std::string("config: ") + e.what());
  }
  if (flags.seed) s.seed = *flags.seed;
  if (flags.workers) s.workers = *flags.workers;
  if (flags.out) s.out = *flags.out;
  if (flags.strict_positivity) s.strict_positivity = true;
  if (s.workers < 0) throw ValidationError("workers must be >= 0");
  return s;
}

json base_resolved(const Settings& s, const std::string& command) {
  return {{"command", command}, {"seed", s.seed}, {"workers", s.workers}, {"out", s.out}};
}

DoseGrid require_grid(const Settings& s, const std::string& command) {
  if (!s.raw.contains("grid")) throw ValidationError("config: 'grid' is required for " + command);
  return io::grid_from_json(s.raw.at("grid"));
}

std::string require_input(const Settings& s, const std::string& command) {
  if (!s.raw.contains("input") || !s.raw.at("input").is_string())
    throw ValidationError("config: 'input' (cohort CSV path) is required for " + command);
  return s.raw.at("input").get<std::string>();
}

std::vector<int> column_indices(const json& names_json, const std::vector<std::string>& names,
                                const std::string& where) {
  std::vector<int> idx;
  for (const auto& n : names_json) {
    const auto name = n.get<std::string>();
    const auto it = std::find(names.begin(), names.end(), name);
    if (it == names.end()) throw ValidationError(where + ": no cohort column named '" + name + "'");
    idx.push_back(static_cast<int>(it - names.begin()));
  }
  return idx;
}

WeightModelOptions weight_options(const Settings& s, const std::vector<std::string>& names) {
  const json& j = s.section("weights");
  io::check_keys(j, {"covariates", "quantile_bins", "max_discrete_levels"}, "weights");
  WeightModelOptions w;
  try {
    if (j.contains("covariates")) w.covariates = column_indices(j.at("covariates"), names, "weights.covariates");
    if (j.contains("quantile_bins")) w.quantile_bins = j.at("quantile_bins").get<int>();
    if (j.contains("max_discrete_levels")) w.max_discrete_levels = j.at("max_discrete_levels").get<int>();
  } catch (const json::exception& e) {
    throw ValidationError(std::string("weights: ") + e.what());
  }
  if (w.quantile_bins < 1 || w.max_discrete_levels < 1)
    throw ValidationError("weights: quantile_bins and max_discrete_levels must be >= 1");
  return w;
}

json weight_options_json(const WeightModelOptions& w, const std::vector<std::string>& names) {
  json cov = json::array();
  if (w.covariates)
    for (int i : *w.covariates) cov.push_back(names.at(static_cast<std::size_t>(i)));
  else
    cov = names;
  return {{"covariates", cov}, {"quantile_bins", w.quantile_bins}, {"max_discrete_levels", w.max_discrete_levels}};
}

struct Loaded {
  Cohort cohort;
  ModelSpec spec;
};

Loaded load_cohort_and_spec(const Settings& s, const std::string& command, json& resolved) {
  const DoseGrid grid = require_grid(s, command);
  const std::string input = require_input(s, command);
  Loaded l{io::read_cohort_csv(s.resolve(input), grid), {}};
  l.spec = io::model_spec_from_json(s.section("model"), l.cohort.covariate_names);
  l.spec.mcmc.seed = s.seed;
  resolved["input"] = input;
  resolved["grid"] = io::to_json(grid);
  resolved["model"] = io::to_json(l.spec, l.cohort.covariate_names);
  return l;
}

InterventionSpec require_intervention(const Settings& s, const DoseGrid& grid) {
  if (!s.raw.contains("intervention")) throw ValidationError("config: 'intervention' is required");
  auto iv = io::intervention_from_json(s.raw.at("intervention"));
  iv.validate(grid);
  return iv;
}

void report_warnings(const MSMFit& fit, std::ostream& err) {
  for (const auto& w : fit.diagnostics.warnings) err << "warning: " << w << '\n';
}

json estimands_json(const Estimands& e) {
  return {{"ntcp_intervention", e.ntcp_intervention},
          {"ntcp_observed", e.ntcp_observed},
          {"risk_ratio", e.risk_ratio},
          {"max_weight", e.max_weight}};
}

json interval_json(const Interval& i) { return {i.lower, i.upper}; }

int cmd_fit(const Settings& s, std::ostream& out, std::ostream& err) {
  json resolved = base_resolved(s, "fit");
  auto l = load_cohort_and_spec(s, "fit", resolved);
  RunContext ctx(s.out, "fit");
  ctx.write_json("resolved_config.json", resolved);
  const MSMFit fit = fit_msm(l.cohort, l.spec);
  report_warnings(fit, err);
  const json summary = io::fit_summary(fit, l.cohort);
  ctx.write_json("fit_summary.json", summary);
  ctx.write("surface.csv", io::surface_csv(fit, l.cohort));
  ctx.write("draws.jsonl", io::draws_jsonl(fit));
  ctx.write_json("metrics.json", summary.at("metrics"));
  ctx.finish(s.seed);
  out << "fit: " << family_name(fit.spec.family) << ", " << fit.draw_count() << " draws, DIC "
      << io::format_table_number(fit.metrics.dic) << '\n';
  return kOk;
}

int cmd_estimate(const Settings& s, std::ostream& out, std::ostream& err) {
  json resolved = base_resolved(s, "estimate");
  auto l = load_cohort_and_spec(s, "estimate", resolved);
  const auto iv = require_intervention(s, l.cohort.grid);
  const auto wopts = weight_options(s, l.cohort.covariate_names);
  const json& est_cfg = s.section("estimate");
  io::check_keys(est_cfg, {"fit_dir", "pointwise_grid", "strict_positivity"}, "estimate");
  const bool grid_out = est_cfg.value("pointwise_grid", true);
  std::optional<std::string> fit_dir;
  if (est_cfg.contains("fit_dir")) fit_dir = est_cfg.at("fit_dir").get<std::string>();
  resolved["intervention"] = io::to_json(iv);
  resolved["weights"] = weight_options_json(wopts, l.cohort.covariate_names);
  resolved["estimate"] = {{"pointwise_grid", grid_out}, {"strict_positivity", s.strict_positivity}};
  if (fit_dir) resolved["estimate"]["fit_dir"] = *fit_dir;

  RunContext ctx(s.out, "estimate");
  ctx.write_json("resolved_config.json", resolved);
  MSMFit fit;
  if (fit_dir) {
    const fs::path dir = s.resolve(*fit_dir);
    fit = io::fit_from_artifacts(io::read_json(dir / "fit_summary.json"), io::read_text(dir / "draws.jsonl"),
                                 l.cohort);
  } else {
    fit = fit_msm(l.cohort, l.spec);
    report_warnings(fit, err);
  }
  const auto st = stochastic_ntcp(fit, l.cohort, iv, wopts);
  const auto e = compute_estimands(fit, l.cohort, iv, wopts);
  json j;
  j["intervention"] = io::to_json(iv);
  j["ntcp_intervention"] = e.ntcp_intervention;
  j["ntcp_observed"] = e.ntcp_observed;
  j["risk_ratio"] = e.risk_ratio;
  j["weights"] = {{"max_weight", st.max_weight},
                  {"mean_weight", st.mean_weight},
                  {"effective_sample_size", st.effective_sample_size},
                  {"positivity_warning", st.positivity_warning}};
  if (grid_out) {
    const auto grid = pointwise_ntcp_grid(fit, l.cohort, fit.surface_grid_d, fit.surface_grid_g);
    json rows = json::array();
    for (std::size_t a = 0; a < fit.surface_grid_d.size(); ++a)
      for (std::size_t b = 0; b < fit.surface_grid_g.size(); ++b)
        rows.push_back({fit.grid.gy_from_scaled(fit.surface_grid_d[a]), fit.surface_grid_g[b],
                        grid(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b))});
    j["pointwise"] = {{"columns", {"d_gy", "volume", "ntcp"}}, {"rows", rows}};
  }
  ctx.write_json("estimands.json", j);
  if (st.positivity_warning) {
    err << "warning: positivity: max weight " << io::format_table_number(st.max_weight) << " exceeds threshold "
        << io::format_table_number(iv.positivity_threshold) << '\n';
    if (s.strict_positivity) throw PositivityBreach("positivity threshold breached (strict mode)");
  }
  ctx.finish(s.seed);
  out << "estimate: " << intervention_kind_name(iv.kind) << " ntcp " << io::format_table_number(e.ntcp_intervention)
      << ", risk ratio " << io::format_table_number(e.risk_ratio) << '\n';
  return kOk;
}

int cmd_bootstrap(const Settings& s, std::ostream& out, std::ostream&) {
  json resolved = base_resolved(s, "bootstrap");
  auto l = load_cohort_and_spec(s, "bootstrap", resolved);
  const auto iv = require_intervention(s, l.cohort.grid);
  BootstrapOptions opts;
  opts.weights = weight_options(s, l.cohort.covariate_names);
  const json& b = s.section("bootstrap");
  io::check_keys(b, {"n_boot", "ci_level", "max_failure_fraction"}, "bootstrap");
  try {
    opts.n_boot = b.value("n_boot", opts.n_boot);
    opts.ci_level = b.value("ci_level", opts.ci_level);
    opts.max_failure_fraction = b.value("max_failure_fraction", opts.max_failure_fraction);
  } catch (const json::exception& e) {
    throw ValidationError(std::string("bootstrap: ") + e.what());
  }
  if (opts.n_boot < 1) throw ValidationError("bootstrap: n_boot must be >= 1");
  if (!(opts.ci_level > 0.0 && opts.ci_level < 1.0)) throw ValidationError("bootstrap: ci_level must be in (0, 1)");
  opts.seed = s.seed;
  opts.workers = s.workers;
  resolved["intervention"] = io::to_json(iv);
  resolved["weights"] = weight_options_json(opts.weights, l.cohort.covariate_names);
  resolved["bootstrap"] = {
      {"n_boot", opts.n_boot}, {"ci_level", opts.ci_level}, {"max_failure_fraction", opts.max_failure_fraction}};

  RunContext ctx(s.out, "bootstrap");
  ctx.write_json("resolved_config.json", resolved);
  const auto res = clustered_bootstrap(l.cohort, l.spec, iv, opts);
  json j;
  j["intervention"] = io::to_json(iv);
  j["n_boot"] = opts.n_boot;
  j["ci_level"] = opts.ci_level;
  j["failures"] = res.failures;
  j["point"] = estimands_json(res.point);
  j["ci"] = {{"ntcp_intervention", interval_json(res.ci_intervention)},
             {"ntcp_observed", interval_json(res.ci_observed)},
             {"risk_ratio", interval_json(res.ci_risk_ratio)}};
  ctx.write_json("bootstrap.json", j);
  std::ostringstream csv;
  csv << "replicate,ok,ntcp_intervention,ntcp_observed,risk_ratio,max_weight,error\n";
  for (std::size_t r = 0; r < res.replicates.size(); ++r) {
    const auto& rep = res.replicates[r];
    const double nan = std::numeric_limits<double>::quiet_NaN();
    csv << r << ',' << (rep.ok ? 1 : 0) << ',' << io::format_number(rep.ok ? rep.estimands.ntcp_intervention : nan)
        << ',' << io::format_number(rep.ok ? rep.estimands.ntcp_observed : nan) << ','
        << io::format_number(rep.ok ? rep.estimands.risk_ratio : nan) << ','
        << io::format_number(rep.ok ? rep.estimands.max_weight : nan) << ',';
    std::string msg = rep.error;
    std::replace(msg.begin(), msg.end(), ',', ';');
    std::replace(msg.begin(), msg.end(), '\n', ' ');
    csv << msg << '\n';
  }
  ctx.write("replicates.csv", csv.str());
  ctx.finish(s.seed);
  out << "bootstrap: risk ratio " << io::format_table_number(res.point.risk_ratio) << " ["
      << io::format_table_number(res.ci_risk_ratio.lower) << ", " << io::format_table_number(res.ci_risk_ratio.upper)
      << "], " << res.failures << " failed replicates\n";
  return kOk;
}

json dgp_json(const sim::Dgp& d) {
  return {{"grid", io::to_json(d.grid)},
          {"a_min", d.a_min},
          {"a_max", d.a_max},
          {"b_min", d.b_min},
          {"b_max", d.b_max},
          {"gamma0", d.gamma0},
          {"gamma_mu", d.gamma_mu},
          {"gamma_x1", d.gamma_x1},
          {"gamma_x2", d.gamma_x2},
          {"p_x1", d.p_x1},
          {"has_x2", d.has_x2},
          {"shape", d.shape == sim::Dgp::Shape::BinaryMixture ? "binary_mixture" : "beta_regression"},
          {"shape_total", d.shape_total},
          {"eta_x1", d.eta_x1},
          {"eta_x2", d.eta_x2}};
}

json oracle_json(const sim::OracleConfig& o) {
  return {{"abs_tol", o.integration.abs_tol},
          {"rel_tol", o.integration.rel_tol},
          {"max_subdivisions", o.integration.max_subdivisions},
          {"hermite_order", o.hermite_order}};
}

json truth_json(const sim::TruthGrid& t) {
  json values = json::array();
  for (Eigen::Index a = 0; a < t.values.rows(); ++a) {
    json row = json::array();
    for (Eigen::Index b = 0; b < t.values.cols(); ++b) {
      const double v = t.values(a, b);
      if (std::isnan(v))
        row.push_back(nullptr);
      else
        row.push_back(v);
    }
    values.push_back(row);
  }
  return {{"d_scaled", t.grid.d_scaled}, {"g", t.grid.g}, {"values", values}, {"stochastic", t.stochastic}};
}

sim::TruthGrid truth_from_json(const json& j) {
  sim::TruthGrid t;
  t.grid.d_scaled = j.at("d_scaled").get<std::vector<double>>();
  t.grid.g = j.at("g").get<std::vector<double>>();
  t.values.resize(static_cast<Eigen::Index>(t.grid.d_scaled.size()), static_cast<Eigen::Index>(t.grid.g.size()));
  const auto& rows = j.at("values");
  for (Eigen::Index a = 0; a < t.values.rows(); ++a)
    for (Eigen::Index b = 0; b < t.values.cols(); ++b) {
      const auto& v = rows.at(static_cast<std::size_t>(a)).at(static_cast<std::size_t>(b));
      t.values(a, b) = v.is_null() ? std::numeric_limits<double>::quiet_NaN() : v.get<double>();
    }
  t.stochastic = j.at("stochastic").get<double>();
  return t;
}

int cmd_simulate(const Settings& s, std::ostream& out, std::ostream& err) {
  json resolved = base_resolved(s, "simulate");
  const json& c = s.section("simulate");
  io::check_keys(c,
                 {"design", "scenario", "n", "replicates", "families", "adjusted", "d_star", "q", "write_cohorts",
                  "truth_cache_dir", "oracle"},
                 "simulate");
  sim::ExperimentConfig e;
  std::string design = "sim1";
  std::string scenario = "strong";
  bool write_cohorts = false;
  sim::OracleConfig oracle;
  fs::path cache_dir = fs::path(s.out) / "truth_cache";
  std::string cache_dir_str = (fs::path(s.out) / "truth_cache").string();
  try {
    design = c.value("design", design);
    scenario = c.value("scenario", scenario);
    e.n = c.value("n", e.n);
    e.replicates = c.value("replicates", e.replicates);
    if (c.contains("families")) {
      e.families.clear();
      for (const auto& f : c.at("families")) e.families.push_back(parse_family(f.get<std::string>()));
    }
    e.adjusted = c.value("adjusted", e.adjusted);
    e.d_star = c.value("d_star", e.d_star);
    e.q = c.value("q", e.q);
    write_cohorts = c.value("write_cohorts", write_cohorts);
    if (c.contains("truth_cache_dir")) {
      cache_dir_str = c.at("truth_cache_dir").get<std::string>();
      cache_dir = s.resolve(cache_dir_str);
    }
    if (c.contains("oracle")) {
      const json& o = c.at("oracle");
      io::check_keys(o, {"abs_tol", "rel_tol", "max_subdivisions", "hermite_order"}, "simulate.oracle");
      oracle.integration.abs_tol = o.value("abs_tol", oracle.integration.abs_tol);
      oracle.integration.rel_tol = o.value("rel_tol", oracle.integration.rel_tol);
      oracle.integration.max_subdivisions = o.value("max_subdivisions", oracle.integration.max_subdivisions);
      oracle.hermite_order = o.value("hermite_order", oracle.hermite_order);
    }
  } catch (const json::exception& ex) {
    throw ValidationError(std::string("simulate: ") + ex.what());
  }
  if (design == "sim1") {
    e.dgp = sim::Sim1Config{}.dgp();
  } else if (design == "sim2") {
    sim::Sim2Config c2;
    c2.scenario = sim::parse_scenario(scenario);
    e.dgp = c2.dgp();
  } else {
    throw ValidationError("simulate.design: expected sim1 or sim2, got '" + design + "'");
  }
  const auto names = e.dgp.covariate_names();
  const ModelSpec spec = io::model_spec_from_json(s.section("model"), names, [&] {
    ModelSpec base;
    base.mcmc = e.mcmc;
    base.prior = e.prior;
    base.volume_warp = e.volume_warp;
    return base;
  }());
  e.mcmc = spec.mcmc;
  e.mcmc.seed = s.seed;
  e.prior = spec.prior;
  e.volume_warp = spec.volume_warp;
  e.seed = s.seed;
  e.workers = s.workers;
  e.validate();

  json families = json::array();
  for (auto f : e.families) families.push_back(family_name(f));
  json sim_resolved = {{"design", design},     {"n", e.n},         {"replicates", e.replicates},
                       {"families", families}, {"adjusted", e.adjusted}, {"d_star", e.d_star},
                       {"q", e.q},             {"write_cohorts", write_cohorts},
                       {"truth_cache_dir", cache_dir_str}, {"oracle", oracle_json(oracle)}};
  if (design == "sim2") sim_resolved["scenario"] = sim::scenario_name(sim::parse_scenario(scenario));
  resolved["simulate"] = sim_resolved;
  resolved["model"] = {{"mcmc", io::to_json(e.mcmc)},
                       {"prior", io::to_json(e.prior)},
                       {"volume_warp", e.volume_warp}};
  resolved["dgp"] = dgp_json(e.dgp);

  RunContext ctx(s.out, "simulate");
  ctx.write_json("resolved_config.json", resolved);

  const json key = {{"dgp", dgp_json(e.dgp)},
                    {"grid", "bins"},
                    {"d_star", e.d_star},
                    {"q", e.q},
                    {"oracle", oracle_json(oracle)}};
  const std::string key_hash = hex64(fnv1a64(key.dump()));
  const fs::path cache_file = cache_dir / ("truth_" + key_hash + ".json");
  sim::TruthGrid truth;
  bool hit = false;
  if (fs::exists(cache_file)) {
    const json cached = io::read_json(cache_file);
    if (cached.contains("key") && cached.at("key") == key) {
      truth = truth_from_json(cached.at("truth"));
      hit = true;
    }
  }
  if (hit) {
    err << "truth cache hit: " << cache_file.string() << '\n';
  } else {
    err << "truth cache miss: computing oracle truth\n";
    truth = sim::compute_truth(e.dgp, sim::bin_grid(e.dgp.grid), e.d_star, e.q, oracle, s.workers);
    io::write_text(cache_file, json{{"key", key}, {"truth", truth_json(truth)}}.dump() + "\n");
  }

  if (write_cohorts)
    for (int r = 0; r < e.replicates; ++r) {
      const auto cohort = sim::generate_cohort(e.dgp, e.n, derive_seed(e.seed, static_cast<std::uint64_t>(r)));
      ctx.write("cohorts/cohort_" + std::to_string(r) + ".csv", io::cohort_csv(cohort.cohort));
    }

  const auto report = sim::run_experiment(e, truth);
  ctx.write("report.csv", sim::report_csv(report));
  json fam = json::array();
  for (const auto& f : report.families) {
    ctx.write(std::string("grid_") + family_name(f.family) + ".csv", sim::grid_csv(report, f, e.dgp.grid));
    fam.push_back({{"family", family_name(f.family)},
                   {"replicates_ok", f.replicates_ok},
                   {"abs_bias", f.abs_bias},
                   {"mcsd", f.mcsd_avg},
                   {"rmse", f.rmse_avg},
                   {"mce", f.mce_avg},
                   {"stochastic_mean", f.stochastic_mean},
                   {"stochastic_bias", f.stochastic_bias},
                   {"stochastic_mcsd", f.stochastic_mcsd},
                   {"failures", f.failures}});
  }
  ctx.write_json("experiment.json", {{"n", report.n},
                                     {"replicates", report.replicates},
                                     {"truth_cache_key", key_hash},
                                     {"evaluable_cells", truth.evaluable()},
                                     {"true_stochastic_ntcp", truth.stochastic},
                                     {"families", fam}});
  ctx.finish(s.seed);
  out << sim::report_csv(report);
  return kOk;
}

// Iso-level curves of a monotone grid: for each dose, the smallest volume at
// which the value reaches the level, interpolated linearly in volume.
int cmd_export(const Settings& s, std::ostream& out, std::ostream&) {
  json resolved = base_resolved(s, "export-contours");
  const json& c = s.section("export");
  io::check_keys(c, {"source", "value_column", "levels"}, "export");
  if (!c.contains("source")) throw ValidationError("config: 'export.source' is required for export-contours");
  std::string source;
  std::string column = "ntcp";
  std::vector<double> levels{0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9};
  try {
    source = c.at("source").get<std::string>();
    column = c.value("value_column", column);
    if (c.contains("levels")) levels = c.at("levels").get<std::vector<double>>();
  } catch (const json::exception& e) {
    throw ValidationError(std::string("export: ") + e.what());
  }
  resolved["export"] = {{"source", source}, {"value_column", column}, {"levels", levels}};

  std::istringstream in(io::read_text(s.resolve(source)));
  std::string line;
  if (!std::getline(in, line)) throw ValidationError("export: empty source");
  std::vector<std::string> header;
  {
    std::stringstream hs(line);
    std::string cell;
    while (std::getline(hs, cell, ',')) header.push_back(cell);
  }
  auto col = [&](const std::string& name) {
    const auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) throw ValidationError("export: source has no column '" + name + "'");
    return static_cast<std::size_t>(it - header.begin());
  };
  const auto cd = col("d_gy"), cg = col("volume"), cv = col(column);
  std::map<double, std::vector<std::pair<double, double>>> by_dose;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, ',')) cells.push_back(cell);
    if (cells.size() != header.size()) throw ValidationError("export: ragged source row");
    auto num = [](const std::string& t) {
      return t == "NA" ? std::numeric_limits<double>::quiet_NaN() : std::stod(t);
    };
    by_dose[num(cells[cd])].push_back({num(cells[cg]), num(cells[cv])});
  }
  RunContext ctx(s.out, "export-contours");
  ctx.write_json("resolved_config.json", resolved);
  std::ostringstream csv;
  csv << "level,d_gy,volume\n";
  int points = 0;
  for (double level : levels)
    for (auto& [d, col_values] : by_dose) {
      std::sort(col_values.begin(), col_values.end());
      for (std::size_t b = 0; b < col_values.size(); ++b) {
        const auto [g1, v1] = col_values[b];
        if (std::isnan(v1) || v1 < level) continue;
        double g = g1;
        if (b > 0) {
          const auto [g0, v0] = col_values[b - 1];
          if (!std::isnan(v0)) g = g0 + (level - v0) / (v1 - v0) * (g1 - g0);
        }
        csv << io::format_table_number(level) << ',' << io::format_table_number(d) << ','
            << io::format_table_number(g) << '\n';
        ++points;
        break;
      }
    }
  ctx.write("contours.csv", csv.str());
  ctx.finish(s.seed);
  out << "export-contours: " << points << " contour points\n";
  return kOk;
}

}  // namespace

const std::string& config_schema() {
  static const std::string schema =
#include "ntcp_schema.inc"
      ;
  return schema;
}

std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Causal NTCP estimation from dose-volume histogram cohorts", "ntcp"};
  Flags flags;
  bool print_schema = false;
  std::uint64_t seed = 0;
  std::string out_dir;
  int workers = 0;
  auto* seed_opt = app.add_option("--seed", seed, "Random seed (overrides config)");
  auto* out_opt = app.add_option("--out", out_dir, "Output directory (overrides config)");
  auto* workers_opt = app.add_option("--workers", workers, "Worker threads, 0 = available parallelism");
  app.add_option("--config", flags.config_path, "JSON config file");
  app.add_flag("--print-schema", print_schema, "Print the config JSON schema and exit");
  app.add_flag("--strict-positivity", flags.strict_positivity, "Exit 4 when the positivity threshold is breached");
  app.fallthrough();
  for (const char* name : {"fit", "estimate", "bootstrap", "simulate", "export-contours"}) app.add_subcommand(name);
  app.get_subcommand("fit")->description("Fit a marginal structural model to a cohort");
  app.get_subcommand("estimate")->description("Pointwise and stochastic intervention estimands");
  app.get_subcommand("bootstrap")->description("Clustered bootstrap confidence intervals");
  app.get_subcommand("simulate")->description("Simulation study against the oracle truth");
  app.get_subcommand("export-contours")->description("Iso-level contours of a grid CSV");
  app.require_subcommand(0, 1);

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kValidation;
  }
  if (print_schema) {
    out << config_schema();
    return kOk;
  }
  const auto subs = app.get_subcommands();
  if (subs.empty()) {
    err << "error: a subcommand is required (fit, estimate, bootstrap, simulate, export-contours)\n";
    return kValidation;
  }
  flags.command = subs.front()->get_name();
  if (seed_opt->count() > 0) flags.seed = seed;
  if (out_opt->count() > 0) flags.out = out_dir;
  if (workers_opt->count() > 0) flags.workers = workers;

  try {
    const Settings s = load_settings(flags);
    if (flags.command == "fit") return cmd_fit(s, out, err);
    if (flags.command == "estimate") return cmd_estimate(s, out, err);
    if (flags.command == "bootstrap") return cmd_bootstrap(s, out, err);
    if (flags.command == "simulate") return cmd_simulate(s, out, err);
    return cmd_export(s, out, err);
  } catch (const PositivityBreach& e) {
    err << "error: " << e.what() << '\n';
    return kPositivity;
  } catch (const ReplicateFailure& e) {
    err << "error: " << e.what() << '\n';
    return kBootstrapFailure;
  } catch (const ValidationError& e) {
    err << "error: " << e.what() << '\n';
    return kValidation;
  } catch (const json::exception& e) {
    err << "error: config: " << e.what() << '\n';
    return kValidation;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kCompute;
  }
}

}  // namespace ntcp::cli
