#pragma once

#include <cstdint>
#include <optional>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "sfn/optim.hpp"
#include "sfn/oracle.hpp"
#include "sfn/randeig.hpp"

namespace sfn {

struct InitDistribution {
  enum class Kind { near_zero_gaussian, fixed };
  Kind kind = Kind::near_zero_gaussian;
  double scale = 1.0;  // componentwise std for near_zero_gaussian
  Vector point;        // for fixed

  static InitDistribution gaussian(double scale) { return {Kind::near_zero_gaussian, scale, {}}; }
  static InitDistribution fixed(Vector w) { return {Kind::fixed, 0.0, std::move(w)}; }
};

// w0 for one seed. Every config in an experiment sees the same w0 per seed.
Vector draw_initial_point(const InitDistribution& init, Index d, std::uint64_t seed);

struct LabeledConfig {
  std::string label;
  OptimizerConfig config;
};

std::string default_label(const OptimizerConfig& c);

struct ExperimentSpec {
  ProblemSpec problem;
  std::vector<LabeledConfig> configs;
  Index n_seeds = 10;
  std::uint64_t seed = 0;
  InitDistribution init;
  std::vector<Index> record_spectrum_at;
  Index spectrum_rank = 20;
  std::string out_dir;  // empty: nothing written
  int threads = 1;
};

void to_json(nlohmann::json& j, const ExperimentSpec& s);
void from_json(const nlohmann::json& j, ExperimentSpec& s);

struct RunRecord {
  std::string label;
  Index seed_index = 0;
  RunResult result;
  std::vector<std::pair<Index, LowRankEig>> spectra;
};

struct SummaryRow {
  std::string label;
  double mean_best = 0.0;
  double std_best = 0.0;  // sample standard deviation (n - 1); 0 for a single run
  double min_best = 0.0;
  double mean_work = 0.0;
  Index diverged = 0;
  Index runs = 0;         // runs entering the statistics
  double mean_iters = 0.0;
  bool no_data = false;
};

struct ExperimentResult {
  std::vector<SummaryRow> summary;
  std::vector<RunRecord> runs;  // config-major, seed-minor
};

// Aggregates over the non-diverged runs of each label, in first-seen order.
std::vector<SummaryRow> summarize(const std::vector<RunRecord>& runs);

// Runs every (config, seed) pair; divergence is recorded, never fatal.
// Writes outputs when spec.out_dir is set.
ExperimentResult run_experiment(const ExperimentSpec& spec);

// Full-data randomized eigendecomposition at w.
LowRankEig spectrum_snapshot(const Objective& f, const Vector& w, Index r, std::uint64_t seed);

// Best loss per run over records k >= 1 whose cumulative work is within
// budget; rows without any such record are flagged no_data.
std::vector<SummaryRow> work_normalized_compare(const std::vector<RunRecord>& runs, double budget);

void write_summary_csv(std::ostream& os, const std::vector<SummaryRow>& rows);
void write_compare_csv(std::ostream& os, const std::vector<SummaryRow>& rows);

// summary.csv, spec.json, traces/<label>_seed<i>.jsonl and
// spectra/<label>_seed<i>_k<k>.json under dir.
void write_experiment_outputs(const std::string& dir, const ExperimentSpec& spec,
                              const ExperimentResult& result);

}  // namespace sfn
