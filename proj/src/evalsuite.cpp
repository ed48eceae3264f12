#include "crowding/evalsuite.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <thread>

#include "crowding/errors.hpp"
#include "crowding/metrics.hpp"
#include "json.hpp"

namespace crowding {

namespace {

std::string num(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  (void)ec;
  return std::string(buf, ptr);
}

bool valid_accuracy(double a) { return std::isnan(a) || (a >= 0.0 && a <= 1.0); }

std::string join(const std::vector<std::string>& parts, char sep) {
  std::string out;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    if (i) out += sep;
    out += parts[i];
  }
  return out;
}

nlohmann::ordered_json epoch_json(const EpochMetrics& m) {
  return {{"epoch", m.epoch},
          {"train_accuracy", m.train_accuracy},
          {"validation_accuracy", m.validation_accuracy},
          {"test_accuracy", m.test_accuracy},
          {"validation_nll", m.validation_nll},
          {"value", m.value},
          {"info", m.info},
          {"disc_auc", m.disc_auc},
          {"disc_loss", m.disc_loss},
          {"clamps", m.clamps},
          {"logged", m.logged},
          {"selected", m.selected},
          {"selected_entropy", m.selected_entropy},
          {"logged_entropy", m.logged_entropy},
          {"low_entropy_instances", m.low_entropy_instances},
          {"high_entropy_instances", m.high_entropy_instances},
          {"mu_multiplier", m.mu_multiplier},
          {"mu_generator", m.mu_generator},
          {"mu_classifier", m.mu_classifier},
          {"warnings", m.warnings}};
}

}  // namespace

// ------------------------------------------------------------------ methods

bool is_known_method(std::string_view method) {
  if (method == "crowding" || method == "dl-cl" || method == "dl-mv") return true;
  try {
    parse_variant(method);
    return true;
  } catch (const std::invalid_argument&) {
    return false;
  }
}

TrainResult train_method(const CrowdDataset& ds, std::string_view method, const TrainConfig& cfg) {
  if (method == "dl-cl") return train_dl_cl(ds, cfg);
  if (method == "dl-mv") return train_dl_mv(ds, cfg);
  if (method == "crowding") return train_crowding(ds, cfg);
  TrainConfig c = cfg;
  c.variant = parse_variant(method);
  return train_crowding(ds, c);
}

// ------------------------------------------------------------------- report

RunReport make_report(const TrainResult& result, std::uint64_t seed, ConfigEcho config) {
  for (std::size_t i = 0; i < result.history.size(); ++i) {
    const auto& m = result.history[i];
    if (m.epoch != i) throw std::logic_error("run report: epochs are not contiguous");
    if (!valid_accuracy(m.train_accuracy) || !valid_accuracy(m.validation_accuracy) ||
        !valid_accuracy(m.test_accuracy))
      throw std::logic_error("run report: accuracy outside [0, 1] at epoch " + std::to_string(i));
  }
  return {result.method,         seed,
          std::move(config),     result.history,
          result.best_epoch,     result.best_validation_accuracy,
          result.test_accuracy};
}

std::string report_csv(const RunReport& r) {
  std::string out =
      "epoch,train_accuracy,validation_accuracy,test_accuracy,validation_nll,value,info,"
      "disc_auc,disc_loss,clamps,logged,selected,selected_entropy,logged_entropy,"
      "low_entropy_instances,high_entropy_instances,mu_multiplier,mu_generator,mu_classifier,"
      "warnings\n";
  for (const auto& m : r.history) {
    const std::vector<std::string> f = {
        std::to_string(m.epoch),         num(m.train_accuracy),
        num(m.validation_accuracy),      num(m.test_accuracy),
        num(m.validation_nll),           num(m.value),
        num(m.info),                     num(m.disc_auc),
        num(m.disc_loss),                std::to_string(m.clamps),
        std::to_string(m.logged),        std::to_string(m.selected),
        num(m.selected_entropy),         num(m.logged_entropy),
        std::to_string(m.low_entropy_instances), std::to_string(m.high_entropy_instances),
        num(m.mu_multiplier),            num(m.mu_generator),
        num(m.mu_classifier),            '"' + join(m.warnings, ';') + '"'};
    out += join(f, ',') + '\n';
  }
  return out;
}

std::string report_json(const RunReport& r) {
  nlohmann::ordered_json j;
  j["method"] = r.method;
  j["seed"] = r.seed;
  j["best_epoch"] = r.best_epoch;
  j["best_validation_accuracy"] = r.best_validation_accuracy;
  j["test_accuracy"] = r.test_accuracy;
  nlohmann::ordered_json cfg = nlohmann::ordered_json::object();
  for (const auto& [k, v] : r.config) cfg[k] = v;
  j["config"] = cfg;
  j["epochs"] = nlohmann::ordered_json::array();
  for (const auto& m : r.history) j["epochs"].push_back(epoch_json(m));
  return j.dump(2) + '\n';
}

// -------------------------------------------------------------------- sweep

const SweepCell& SweepTable::at(double value, std::string_view method) const {
  for (const auto& c : cells)
    if (c.value == value && c.method == method) return c;
  throw std::out_of_range("sweep table has no cell (" + num(value) + ", " + std::string(method) +
                          ")");
}

std::vector<double> SweepTable::axis_values() const {
  std::vector<double> v;
  for (const auto& c : cells)
    if (std::find(v.begin(), v.end(), c.value) == v.end()) v.push_back(c.value);
  return v;
}

std::vector<double> SweepTable::column(std::string_view method) const {
  std::vector<double> v;
  for (const auto& c : cells)
    if (c.method == method) v.push_back(c.mean);
  return v;
}

SweepCell aggregate(double value, std::string method, std::vector<std::uint64_t> seeds,
                    std::vector<double> accuracies) {
  if (seeds.size() != accuracies.size())
    throw std::invalid_argument("aggregate: one accuracy per seed expected");
  SweepCell c{value, std::move(method), std::move(seeds), std::move(accuracies), 0.0, 0.0};
  c.mean = mean(c.accuracies);
  c.stddev = stddev(c.accuracies);
  return c;
}

std::string sweep_csv(const SweepTable& t) {
  std::string out = "axis,value,method,seeds,mean,std,accuracies\n";
  for (const auto& c : t.cells) {
    std::vector<std::string> seeds, accs;
    for (auto s : c.seeds) seeds.push_back(std::to_string(s));
    for (double a : c.accuracies) accs.push_back(num(a));
    out += t.axis + ',' + num(c.value) + ',' + c.method + ',' + join(seeds, ';') + ',' +
           num(c.mean) + ',' + num(c.stddev) + ',' + join(accs, ';') + '\n';
  }
  return out;
}

std::string sweep_json(const SweepTable& t) {
  nlohmann::ordered_json j;
  j["axis"] = t.axis;
  j["cells"] = nlohmann::ordered_json::array();
  for (const auto& c : t.cells)
    j["cells"].push_back({{"value", c.value},
                          {"method", c.method},
                          {"seeds", c.seeds},
                          {"accuracies", c.accuracies},
                          {"mean", c.mean},
                          {"std", c.stddev}});
  return j.dump(2) + '\n';
}

// ---------------------------------------------------------------- execution

std::size_t worker_threads() {
  const char* env = std::getenv("CROWDING_THREADS");
  if (!env || !*env) return std::max(1u, std::thread::hardware_concurrency());
  std::size_t n = 0;
  const char* end = env + std::char_traits<char>::length(env);
  auto [ptr, ec] = std::from_chars(env, end, n);
  if (ec != std::errc() || ptr != end || n == 0)
    throw ConfigError("CROWDING_THREADS must be a positive integer, got '" + std::string(env) +
                      "'");
  return n;
}

void parallel_for(std::size_t n, std::size_t threads,
                  const std::function<void(std::size_t)>& fn) {
  std::vector<std::exception_ptr> errors(n);
  const std::size_t workers = std::min(std::max<std::size_t>(threads, 1), n);
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) {
      try {
        fn(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  } else {
    std::mutex mu;
    std::size_t next = 0;
    auto work = [&] {
      while (true) {
        std::size_t i;
        {
          std::lock_guard lock(mu);
          if (next == n) return;
          i = next++;
        }
        try {
          fn(i);
        } catch (...) {
          errors[i] = std::current_exception();
        }
      }
    };
    std::vector<std::jthread> pool;
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(work);
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

DatasetFactory fixed_dataset(CrowdDataset ds) {
  return [ds = std::move(ds)](std::uint64_t) { return ds; };
}

std::vector<TrainResult> run_cells(const std::vector<CellTask>& tasks, std::size_t threads) {
  std::vector<std::optional<TrainResult>> out(tasks.size());
  parallel_for(tasks.size(), threads, [&](std::size_t i) {
    const auto& t = tasks[i];
    CrowdDataset ds = t.data(t.data_seed);
    if (t.removal > 0.0) ds = remove_annotations(ds, t.removal, t.config.seed);
    out[i] = train_method(ds, t.method, t.config);
  });
  std::vector<TrainResult> results;
  results.reserve(out.size());
  for (auto& r : out) results.push_back(std::move(*r));
  return results;
}

SweepTable run_sweep(const DatasetFactory& data, const SweepSpec& spec, const TrainConfig& cfg,
                     std::size_t threads) {
  if (spec.axis != "removal" && spec.axis != "lambda" && spec.axis != "threshold")
    throw std::invalid_argument("sweep axis must be removal, lambda or threshold, got '" +
                                spec.axis + "'");
  for (const auto& m : spec.methods)
    if (!is_known_method(m)) throw std::invalid_argument("unknown method '" + m + "'");
  if (spec.seeds.empty()) throw std::invalid_argument("sweep needs at least one seed");

  std::vector<CellTask> tasks;
  for (double v : spec.values)
    for (const auto& m : spec.methods)
      for (auto seed : spec.seeds) {
        CellTask t{data, seed, 0.0, m, cfg};
        t.config.seed = seed;
        if (spec.axis == "removal") t.removal = v;
        if (spec.axis == "lambda") t.config.lambda = v;
        if (spec.axis == "threshold") t.config.entropy_threshold = v;
        tasks.push_back(std::move(t));
      }
  const auto results = run_cells(tasks, threads);

  SweepTable table{spec.axis, {}};
  std::size_t k = 0;
  for (double v : spec.values)
    for (const auto& m : spec.methods) {
      std::vector<double> acc;
      for (std::size_t s = 0; s < spec.seeds.size(); ++s) acc.push_back(results[k++].test_accuracy);
      table.cells.push_back(aggregate(v, m, spec.seeds, std::move(acc)));
    }
  return table;
}

SweepTable sparsity_sweep(const DatasetFactory& data, const std::vector<double>& fractions,
                          const std::vector<std::string>& methods,
                          const std::vector<std::uint64_t>& seeds, const TrainConfig& cfg,
                          std::size_t threads) {
  SweepSpec spec;
  spec.axis = "removal";
  spec.values = fractions;
  spec.methods = methods;
  spec.seeds = seeds;
  return run_sweep(data, spec, cfg, threads);
}

SweepCell run_ablation(const DatasetFactory& data, Variant variant, const TrainConfig& cfg,
                       const std::vector<std::uint64_t>& seeds, std::size_t threads) {
  const std::string name(variant_name(variant));
  return ablation_table(data, {name}, cfg, seeds, threads).cells.front();
}

SweepTable ablation_table(const DatasetFactory& data, const std::vector<std::string>& variants,
                          const TrainConfig& cfg, const std::vector<std::uint64_t>& seeds,
                          std::size_t threads) {
  std::vector<CellTask> tasks;
  for (const auto& v : variants) {
    TrainConfig c = cfg;
    c.variant = parse_variant(v);
    for (auto seed : seeds) {
      CellTask t{data, seed, 0.0, "crowding", c};
      t.config.seed = seed;
      tasks.push_back(std::move(t));
    }
  }
  const auto results = run_cells(tasks, threads);
  SweepTable table{"variant", {}};
  std::size_t k = 0;
  for (const auto& v : variants) {
    std::vector<double> acc;
    for (std::size_t s = 0; s < seeds.size(); ++s) acc.push_back(results[k++].test_accuracy);
    table.cells.push_back(aggregate(0.0, v, seeds, std::move(acc)));
  }
  return table;
}

}  // namespace crowding
