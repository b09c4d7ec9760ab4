#pragma once

#include <string>

#include "pmdlab/evolution.hpp"
#include "pmdlab/pmd.hpp"

namespace pmdlab {

inline constexpr int kSchemaVersion = 1;

// CSV column order is frozen (see README): iteration, value, q_error_linf,
// update_l1, eq2_lower_bound, eq3_lhs, eq3_rate_term, eq3_discount_term,
// eq3_floor_term, env_steps.
std::string pmd_record_csv(const PmdRunRecord& record);

std::string pmd_record_to_json(const PmdRunRecord& record);
// Throws std::runtime_error on parse errors (with byte offset) and on a
// schema_version mismatch.
PmdRunRecord pmd_record_from_json(const std::string& text);

// Full-precision decimal formatting used by every writer (17 significant
// digits round-trips binary64 exactly).
std::string format_double(double v);

void write_text_file(const std::string& path, const std::string& content);
std::string read_text_file(const std::string& path);

struct ComparisonCurve {
  std::string map_name;
  std::vector<double> x;  // environment steps (or iterations for exact runs)
  std::vector<double> value_mean, value_stderr;
  std::vector<double> q_error_mean, q_error_stderr;
  std::vector<double> update_l1_mean, update_l1_stderr;
  std::vector<double> final_values;  // one per seed
};

struct ComparisonReport {
  std::string env_name;
  int num_seeds = 0;
  std::vector<ComparisonCurve> curves;
};

ComparisonCurve aggregate_runs(const std::string& map_name,
                               const std::vector<PmdRunRecord>& runs);
std::string comparison_to_json(const ComparisonReport& report);
std::string comparison_csv(const ComparisonReport& report);

// Evolve checkpointing: one key-value state file per generation plus a JSON
// manifest carrying the config; both round-trip exactly (hex floats).
struct EvolveCheckpoint {
  EvolveConfig config;
  FitnessSpec spec;
  int generation = 0;
  OpenAiEsState es_state;
  SepCmaState cma_state;
  Eigen::VectorXd best_params;
  double best_fitness = 0.0;
  int best_generation = 0;
  std::vector<double> mean_fitness_history;
  int non_finite_evaluations = 0;
};

void write_checkpoint(const std::string& dir, const EvolveCheckpoint& cp);
EvolveCheckpoint load_latest_checkpoint(const std::string& dir);

}  // namespace pmdlab
