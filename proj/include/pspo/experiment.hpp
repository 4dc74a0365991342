#pragma once

#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "pspo/trainer.hpp"

namespace pspo {

// Configuration or usage problems; the CLI maps these to exit code 2.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Shortest decimal form that parses back to the same double (via
// std::to_chars), so artifacts round-trip and reruns are byte-identical.
std::string format_double(double value);

// ===========================================================================
// Experiment configuration
// ===========================================================================

struct ExperimentConfig {
  std::optional<std::string> preset;  // "table1-0.5B" | "table1-1.5B"
  std::string lr_scale = "tabular";   // preset learning-rate flavor;
                                      // "reference" selects the full-scale
                                      // fine-tuning rates unchanged
  std::string taskset_path;           // directory with train.csv / eval.csv
  std::vector<std::uint64_t> seeds;
  std::string output_dir;
  TrainConfig train;

  void validate() const;  // throws ConfigError naming the offending field
};

// Strict parser: unknown keys and wrong types are ConfigErrors that name the
// field. Does not apply presets or validate ranges.
ExperimentConfig parse_experiment_config(const std::string& json_text);
ExperimentConfig load_experiment_config(const std::filesystem::path& path);

// Canonical serialization (fixed key order); parse(serialize(c)) == c.
std::string experiment_config_to_json(const ExperimentConfig& cfg);

// ===========================================================================
// Presets
// ===========================================================================

// One preset grid cell. lr_reference is the learning rate sized for
// full-scale network fine-tuning; lr_tabular is the same value scaled 1000x,
// sized for these exactly-computable logit tables. Both ship so either scale
// can be selected explicitly.
struct PresetCell {
  int iterations = 1;
  double lr_reference = 0.0;
  double lr_tabular = 0.0;
  std::optional<double> epsilon;
  std::optional<double> alpha;
};

const std::vector<std::string>& preset_names();
// Cell for (preset, mode). raw mode borrows the pspo row's learning rate and
// iteration count. Throws ConfigError for unknown preset names.
PresetCell preset_cell(const std::string& preset, Mode mode);

// Overwrites the mode-pinned hyperparameters (iterations_mu, learning_rate,
// and epsilon or alpha where applicable) from the named preset. No-op when
// cfg.preset is empty.
void apply_preset(ExperimentConfig& cfg);

// ===========================================================================
// Artifacts
// ===========================================================================

std::string run_records_to_jsonl(const std::vector<RunRecord>& records);
std::vector<RunRecord> parse_run_records(const std::string& jsonl);

// Portable key/value text: a vocab_size header, then one line per state,
// "prompt_id|t1,t2,...<TAB>logit logit ...". Exact decimal round-trip.
void save_policy(const std::filesystem::path& path,
                 const TabularPolicy& policy);
TabularPolicy load_policy(const std::filesystem::path& path);

// Runs every mode with every configured seed (preset must already be
// applied) and writes into cfg.output_dir:
//   config.json                      resolved config
//   <mode>-seed-<seed>/records.jsonl per-pass log lines
//   <mode>-seed-<seed>/policy.tsv    final policy table
//   summary.tsv                      per-run rows plus per-mode aggregates
struct ExperimentResult {
  ComparisonReport report;
  bool any_diverged = false;
};

ExperimentResult run_experiment(const ExperimentConfig& cfg,
                                const std::vector<Mode>& modes, int workers);

std::string summary_table(const ComparisonReport& report);

// ===========================================================================
// Surrogate-shape dataset
// ===========================================================================

// Per-token surrogate value and d/dr slope on a ratio grid, for advantages
// +1 and -1 under both clip and pspo transforms.
struct SurrogateShapeRow {
  double r = 0.0;
  double clip_pos = 0.0, clip_neg = 0.0;
  double pspo_pos = 0.0, pspo_neg = 0.0;
  double dclip_pos = 0.0, dclip_neg = 0.0;
  double dpspo_pos = 0.0, dpspo_neg = 0.0;
};

std::vector<SurrogateShapeRow> surrogate_shape_dataset(double epsilon,
                                                       double alpha,
                                                       double r_min = 0.0,
                                                       double r_max = 2.0,
                                                       double r_step = 0.01);

std::string surrogate_shape_csv(const std::vector<SurrogateShapeRow>& rows);

}  // namespace pspo
