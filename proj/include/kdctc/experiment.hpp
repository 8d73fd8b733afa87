#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "kdctc/config.hpp"
#include "kdctc/evaluate.hpp"
#include "kdctc/manifest.hpp"

namespace kdctc {

// One trained-and-evaluated run, persisted as a single record file.
struct RunResult {
  std::string run_id;
  Method method = Method::kd_ctcnet;
  int percentage = 100;
  std::uint64_t seed = 0;
  real test_accuracy = 0;
  std::vector<real> per_class_accuracy;
  std::vector<std::vector<std::int64_t>> confusion;
  std::vector<std::string> classes;
  std::int64_t n_test = 0;
  KvMap config_snapshot;
};

struct AggregateRow {
  int percentage = 0;
  std::string method;
  real mean_accuracy = 0;
  real std_accuracy = 0;  // sample standard deviation (n-1); 0 when n_seeds == 1
  int n_seeds = 0;
};

std::string make_run_id(Method method, int percentage, std::uint64_t seed);

// One record file per run plus an index rewritten via atomic replacement,
// so partial experiments resume cleanly.
void write_run_result(const RunResult& result, const std::filesystem::path& results_dir);
RunResult read_run_result(const std::filesystem::path& file);
std::vector<RunResult> load_results(const std::filesystem::path& results_dir);

// Groups by (method, percentage); mean and sample std over seeds.
std::vector<AggregateRow> aggregate(const std::vector<RunResult>& results);

struct ExperimentPlan {
  std::filesystem::path dataset_root;
  std::filesystem::path results_dir;
  std::vector<Method> methods;
  std::vector<int> percentages;
  std::vector<std::uint64_t> seeds;
  RunConfig config;
  int subsample_per_class = 0;  // 0 = use the dataset as-is
  std::uint64_t subsample_seed = 0;
};

struct ExperimentOutcome {
  std::vector<RunResult> results;
  std::vector<AggregateRow> aggregates;
  std::vector<std::string> failures;  // "run_id: what went wrong"
};

// The full protocol: one fixed 50/50 split, per-percentage low-data draws,
// one trained model per (method, percentage, seed), all evaluated on the
// same test manifest. Percentages below 100 use every seed; 100% runs once.
// Completed runs found in results_dir are reused, failed runs are recorded
// and excluded from aggregates.
ExperimentOutcome run_experiment(const ExperimentPlan& plan);

}  // namespace kdctc
