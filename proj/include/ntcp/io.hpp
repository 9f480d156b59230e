#pragma once

#include <filesystem>
#include <istream>
#include <string>
#include <vector>

#include <json.hpp>

#include "ntcp/dvh.hpp"
#include "ntcp/monotone_surface.hpp"
#include "ntcp/msm.hpp"

namespace ntcp::io {

using json = nlohmann::json;

// Shortest decimal that round-trips to the same double; "NA" for NaN.
std::string format_number(double v);
// Fixed 10 significant digits, for report tables; "NA" for NaN.
std::string format_table_number(double v);

// Cohort CSV: header `id,<covariates...>,y,g1,...,gD`, one row per patient.
// The number of g columns must equal grid.n_bins().
Cohort parse_cohort_csv(std::istream& in, const DoseGrid& grid);
Cohort read_cohort_csv(const std::filesystem::path& path, const DoseGrid& grid);
std::string cohort_csv(const Cohort& cohort);

std::string read_text(const std::filesystem::path& path);
// Writes via a temporary file in the same directory and renames it.
void write_text(const std::filesystem::path& path, const std::string& text);
json read_json(const std::filesystem::path& path);

json to_json(const DoseGrid& grid);
DoseGrid grid_from_json(const json& j);
json to_json(const PriorConfig& prior);
PriorConfig prior_from_json(const json& j, PriorConfig base = {});
json to_json(const McmcSettings& mcmc);
McmcSettings mcmc_from_json(const json& j, McmcSettings base = {});
// Covariates are written by name; `names` are the cohort covariate columns.
json to_json(const ModelSpec& spec, const std::vector<std::string>& names);
ModelSpec model_spec_from_json(const json& j, const std::vector<std::string>& names, ModelSpec base = {});
json to_json(const InterventionSpec& intervention);
InterventionSpec intervention_from_json(const json& j);

// {"dim": .., "base": .., "points": [[coords..., mark], ...]}
json to_json(const MonotonePointConfig& config);
MonotonePointConfig point_config_from_json(const json& j, const PriorConfig& prior, bool base_free);
json to_json(const MonotoneSurface& surface);
MonotoneSurface surface_from_json(const json& j, const PriorConfig& prior);

// Fit summary: spec, coefficient means and sds, metrics, diagnostics and the
// posterior mean surface with NTCP at the covariate means.
json fit_summary(const MSMFit& fit, const Cohort& cohort);
// Rows `d_gy,volume,lambda,ntcp` over the fit's summary grid.
std::string surface_csv(const MSMFit& fit, const Cohort& cohort);
// One line per retained draw: {"draw", "beta", "surface"|"coefficients"}.
std::string draws_jsonl(const MSMFit& fit);
// Rebuilds a fit from its summary and draw dump.
MSMFit fit_from_artifacts(const json& summary, const std::string& draws, const Cohort& cohort);

// Keys of `j` not in `allowed` raise ValidationError naming `where`.
void check_keys(const json& j, const std::vector<std::string>& allowed, const std::string& where);

}  // namespace ntcp::io
