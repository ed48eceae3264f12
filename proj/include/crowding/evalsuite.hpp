#pragma once

// Experiment harnesses: per-run reports, seed-aggregated sweep tables
// (annotation removal, lambda, threshold, ablation variants) and their
// CSV / JSON forms.

#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "crowding/dataset.hpp"
#include "crowding/trainer.hpp"

namespace crowding {

// Methods accepted by train_method: crowding, dl-cl, dl-mv and the ablation
// variant names (full is the same as crowding).
TrainResult train_method(const CrowdDataset& ds, std::string_view method, const TrainConfig& cfg);
bool is_known_method(std::string_view method);

using ConfigEcho = std::vector<std::pair<std::string, std::string>>;

struct RunReport {
  std::string method;
  std::uint64_t seed = 0;
  ConfigEcho config;
  std::vector<EpochMetrics> history;
  std::size_t best_epoch = 0;
  double best_validation_accuracy = 0.0;
  double test_accuracy = 0.0;
};

// Checks that epochs are contiguous from 0 and accuracies lie in [0, 1]
// (NaN allowed when a split has no labels).
RunReport make_report(const TrainResult& result, std::uint64_t seed, ConfigEcho config = {});

// One row per epoch.
std::string report_csv(const RunReport& r);
// Summary, config echo and every epoch.
std::string report_json(const RunReport& r);

struct SweepCell {
  double value = 0.0;  // axis value; 0 for the variant axis
  std::string method;
  std::vector<std::uint64_t> seeds;
  std::vector<double> accuracies;  // test accuracy per seed, same order as seeds
  double mean = 0.0;
  double stddev = 0.0;
};

struct SweepTable {
  std::string axis;  // removal, lambda, threshold or variant
  std::vector<SweepCell> cells;

  // Throws std::out_of_range when absent.
  const SweepCell& at(double value, std::string_view method) const;
  std::vector<double> axis_values() const;
  // Means of one method in axis order.
  std::vector<double> column(std::string_view method) const;
};

// One row per cell: axis,value,method,seeds,mean,std,accuracies
// (seeds and accuracies joined with ';').
std::string sweep_csv(const SweepTable& t);
std::string sweep_json(const SweepTable& t);

// ---------------------------------------------------------------- execution

// Worker count from CROWDING_THREADS (a positive integer); hardware
// concurrency when unset. Throws ConfigError on a malformed value.
std::size_t worker_threads();

// Runs fn(0..n-1) on up to `threads` workers. Results must be written to
// index-addressed slots; the first exception by index is rethrown.
void parallel_for(std::size_t n, std::size_t threads, const std::function<void(std::size_t)>& fn);

using DatasetFactory = std::function<CrowdDataset(std::uint64_t seed)>;
DatasetFactory fixed_dataset(CrowdDataset ds);

struct CellTask {
  DatasetFactory data;
  std::uint64_t data_seed = 1;
  double removal = 0.0;  // fraction removed with remove_annotations(seed = cfg.seed)
  std::string method;
  TrainConfig config;
};

std::vector<TrainResult> run_cells(const std::vector<CellTask>& tasks, std::size_t threads);

struct SweepSpec {
  std::string axis = "removal";  // removal, lambda or threshold
  std::vector<double> values = {0.0, 0.2, 0.4, 0.6};
  std::vector<std::string> methods = {"crowding", "dl-cl", "dl-mv"};
  std::vector<std::uint64_t> seeds = {1, 2, 3, 4, 5};
  std::vector<std::string> variants = {"full", "CrowdG", "CrowdInG_U", "CrowdInG_I", "CrowdInG_R"};
};

// For each (value, method, seed): build the seed's dataset, apply the axis
// value (removal fraction, lambda or threshold), train with config.seed =
// seed and record test accuracy.
SweepTable run_sweep(const DatasetFactory& data, const SweepSpec& spec, const TrainConfig& cfg,
                     std::size_t threads);

SweepTable sparsity_sweep(const DatasetFactory& data, const std::vector<double>& fractions,
                          const std::vector<std::string>& methods,
                          const std::vector<std::uint64_t>& seeds, const TrainConfig& cfg,
                          std::size_t threads);

// One variant over seeds; the cell's method is the variant name.
SweepCell run_ablation(const DatasetFactory& data, Variant variant, const TrainConfig& cfg,
                       const std::vector<std::uint64_t>& seeds, std::size_t threads);
SweepTable ablation_table(const DatasetFactory& data, const std::vector<std::string>& variants,
                          const TrainConfig& cfg, const std::vector<std::uint64_t>& seeds,
                          std::size_t threads);

SweepCell aggregate(double value, std::string method, std::vector<std::uint64_t> seeds,
                    std::vector<double> accuracies);

}  // namespace crowding
