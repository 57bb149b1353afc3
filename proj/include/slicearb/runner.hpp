#pragma once

// Experiment runner: loads a JSON config, trains and evaluates either
// algorithm across seeds, and writes reward_curve.csv, satisfaction.csv,
// overhead.csv and summary.json. Seeds may run in parallel; --threads 1
// guarantees byte-identical outputs across runs.

#include <string>
#include <vector>

#include "slicearb/trainer.hpp"

namespace slicearb {

inline constexpr const char* kCodeVersion = "1.0.0";

struct ExperimentConfig {
  ScenarioConfig scenario;
  std::string trace_path;  // empty = synthetic generators
  TrainConfig train;
  GraphSpec graph;
  std::string out_dir = "out";
  int eval_episodes = 50;
  std::vector<std::uint64_t> seeds = {1};
  int threads = 1;

  bool operator==(const ExperimentConfig&) const = default;
};

ExperimentConfig load_experiment_config(const std::string& path);
void validate_experiment_config(const ExperimentConfig& cfg);

struct SeedResult {
  std::uint64_t seed = 0;
  std::vector<double> reward_curve;       // cumulative reward per training episode
  std::vector<double> mean_satisfaction;  // per slice, greedy evaluation
  long long messages_total = 0;
  long long messages_per_step = 0;
  double reduction_pct = 0.0;
  double wall_seconds = 0.0;  // reported via timing.json, never summary.json
};

struct RunSummary {
  ExperimentConfig config;
  std::string version = kCodeVersion;
  std::vector<SeedResult> seeds;
};

// Trains and evaluates every seed, writes all output files into
// config.out_dir (partial outputs are removed on failure).
RunSummary run(const ExperimentConfig& config);

// Evaluation only: loads the checkpoint, skips training.
RunSummary run_eval_only(const ExperimentConfig& config, const std::string& checkpoint_path);

std::string summary_to_json_text(const RunSummary& summary);
RunSummary load_summary(const std::string& path);

struct Comparison {
  struct Row {
    int slice_id = 0;
    std::string traffic;
    int priority = 0;
    double satisfaction_a = 0.0;
    double satisfaction_b = 0.0;
  };
  std::vector<Row> rows;  // satisfaction averaged over seeds
  int above_80_a = 0, above_80_b = 0;
  double min_a = 0.0, min_b = 0.0;
  double mean_a = 0.0, mean_b = 0.0;
  long long messages_a = 0, messages_b = 0;
};

// Side-by-side comparison of two runs over the same scenario and seeds.
Comparison compare(const RunSummary& a, const RunSummary& b);
std::string format_comparison(const Comparison& c);

// Full command-line entry point; returns the process exit code.
int main_cli(int argc, char** argv);

}  // namespace slicearb
