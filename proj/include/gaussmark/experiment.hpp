#pragma once

#include <cstdint>
#include <json.hpp>
#include <optional>
#include <string>
#include <vector>

#include "gaussmark/stats.hpp"

namespace gaussmark::experiment {

using nlohmann::json;

// Experiment config (JSON, "version": 1). Fields and defaults:
//   master_seed 0, scheme "gaussmark" | "kgw", check "power" | "log_concave" | "robustness",
//   model {...model spec...}, watermark {sigma 0.1 | sigma2, rank_drop 0},
//   kgw {gamma, delta, context_width, hash_seed}, detector {alpha 0.05},
//   prompt [], response_length 64, trials 200, null_trials 200, null_source "uniform",
//   attack null | {kind, locus, fraction}, theory {...check parameters...},
//   record_trials false, sweep {parameter: "watermark.sigma", values: [...]}.
// Throws FormatError on unknown or malformed fields.
json normalize_config(const json& config);

// One normalized config per sweep value (sweep removed). A config without a
// sweep is a single point; an empty value list gives no points.
std::vector<json> expand_sweep(const json& config);

// Hash of a point config without its master seed. Rows are reproducible from
// (config_hash, master_seed): the point's trials run on RngStream(master_seed, config_hash).
std::uint64_t point_hash(const json& point_config);

struct CsvRow {
  std::string config_hash;
  std::string point;
  std::string estimator;
  double value = 0.0;
  std::optional<double> se;
  std::size_t n = 0;
  std::string status;
  std::uint64_t seed = 0;
};

std::string csv_header();
std::string csv_line(const CsvRow& row);
std::string to_csv(const std::vector<CsvRow>& rows);

struct TrialOutcome {
  double p_value = 1.0;
  double psi = 0.0;
  double grad_norm = 0.0;
  bool null_gradient = false;
  std::size_t attack_edits = 0;
};

struct PointResult {
  std::string label;
  json config;
  std::uint64_t config_hash = 0;
  std::vector<TrialOutcome> watermarked;
  std::vector<TrialOutcome> null;
  std::vector<CsvRow> rows;
  json summary;
};

struct ExperimentResult {
  std::vector<PointResult> points;
  std::vector<CsvRow> rows;
  json summary;
};

PointResult run_point(const json& point_config, const std::string& label = "");
ExperimentResult run_experiment(const json& config);
// Reruns the single point of `config` whose hash is `config_hash`; throws InvalidInput if none matches.
PointResult rerun_point(const json& config, std::uint64_t config_hash);

// Runs the named theory check ("all" for every one) at a budget scaled by
// `scale` (1 is the default budget); returns a report with a pass flag per check.
json verify_theory(const std::string& check, double scale, std::uint64_t master_seed);
std::vector<std::string> theory_check_names();

}  // namespace gaussmark::experiment
