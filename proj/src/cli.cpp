#include "crowding/cli.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include "CLI11.hpp"
#include "crowding/config.hpp"
#include "crowding/dataset_io.hpp"
#include "crowding/errors.hpp"
#include "crowding/evalsuite.hpp"
#include "crowding/metrics.hpp"
#include "crowding/synth.hpp"
#include "crowding/trainer.hpp"
#include "crowding/version.hpp"
#include "json.hpp"

namespace crowding {

namespace fs = std::filesystem;
using S = ConfigSection;

std::string file_digest(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError(DataError::Kind::Io, "cannot read " + path.string());
  std::uint64_t h = 1469598103934665603ULL;
  char buf[1 << 16];
  while (in) {
    in.read(buf, sizeof buf);
    for (std::streamsize i = 0; i < in.gcount(); ++i) {
      h ^= static_cast<unsigned char>(buf[i]);
      h *= 1099511628211ULL;
    }
  }
  char hex[17];
  std::snprintf(hex, sizeof hex, "%016llx", static_cast<unsigned long long>(h));
  return hex;
}

namespace {

struct Options {
  std::string config;
  std::string data;
  std::string out;
  std::string checkpoint;
  std::string method = "crowding";
  std::optional<std::uint64_t> seed;
};

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary);
  if (!f) throw DataError(DataError::Kind::Io, "cannot write " + path.string());
  f << text;
}

RunConfig resolve(const Options& o, const std::vector<S>& sections) {
  RunConfig cfg = o.config.empty() ? parse_run_config("", sections)
                                   : load_run_config(o.config, sections);
  if (o.seed) cfg.seed = cfg.train.seed = *o.seed;
  return cfg;
}

nlohmann::ordered_json digests(const std::vector<fs::path>& paths) {
  nlohmann::ordered_json j = nlohmann::ordered_json::array();
  for (const auto& p : paths) {
    if (fs::is_directory(p)) {
      std::vector<fs::path> files;
      for (const auto& e : fs::directory_iterator(p))
        if (e.is_regular_file() && e.path().filename() != "manifest.json") files.push_back(e.path());
      std::sort(files.begin(), files.end());
      for (const auto& f : files) j.push_back({{"path", f.string()}, {"fnv1a64", file_digest(f)}});
    } else if (fs::exists(p)) {
      j.push_back({{"path", p.string()}, {"fnv1a64", file_digest(p)}});
    }
  }
  return j;
}

void write_manifest(const fs::path& dir, const std::string& command, const RunConfig& cfg,
                    const std::vector<S>& sections, const std::vector<fs::path>& inputs,
                    const std::vector<fs::path>& outputs, const nlohmann::ordered_json& extra = {}) {
  nlohmann::ordered_json j;
  j["command"] = command;
  j["tool_version"] = kVersion;
  j["seed"] = cfg.seed;
  nlohmann::ordered_json c = nlohmann::ordered_json::object();
  for (const auto& [k, v] : resolved_config(cfg, sections)) c[k] = v;
  j["config"] = c;
  j["inputs"] = digests(inputs);
  j["outputs"] = nlohmann::ordered_json::array();
  for (const auto& p : outputs) j["outputs"].push_back(p.string());
  if (!extra.is_null())
    for (const auto& [k, v] : extra.items()) j[k] = v;
  write_text(dir / "manifest.json", j.dump(2) + '\n');
}

void require_flag(const std::string& value, const char* flag) {
  if (value.empty()) throw ConfigError(std::string("missing required flag ") + flag);
}

fs::path checkpoint_stem(const std::string& arg) {
  const fs::path p(arg);
  return fs::is_directory(p) ? p / "model" : p;
}

NetworkBundle load_bundle(const fs::path& stem) {
  try {
    return load_checkpoint(stem);
  } catch (const std::runtime_error& e) {
    throw DataError(DataError::Kind::Io, e.what());
  }
}

// ------------------------------------------------------------------ commands

int cmd_synth(const Options& o, std::ostream& out) {
  require_flag(o.out, "--out");
  const std::vector<S> sections = {S::Synth};
  const RunConfig cfg = resolve(o, sections);
  const fs::path dir(o.out);
  std::optional<CrowdDataset> generated;
  try {
    generated = synthesize_dataset(cfg.synth, cfg.seed);
  } catch (const DataError& e) {
    if (e.kind() != DataError::Kind::InvalidConfig) throw;
    throw ConfigError(e.what());
  }
  const CrowdDataset& ds = *generated;
  save_dataset(ds, dir);
  std::vector<fs::path> written;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_regular_file() && e.path().filename() != "manifest.json") written.push_back(e.path());
  std::sort(written.begin(), written.end());
  write_manifest(dir, "synth", cfg, sections, o.config.empty() ? std::vector<fs::path>{}
                                                               : std::vector<fs::path>{o.config},
                 written,
                 {{"output_digests", digests(written)}});
  out << "wrote " << ds.num_instances() << " instances, " << ds.annotations().size()
      << " annotations to " << dir.string() << '\n';
  return kExitOk;
}

int cmd_train(const Options& o, std::ostream& out) {
  require_flag(o.data, "--data");
  require_flag(o.out, "--out");
  if (!is_known_method(o.method)) throw ConfigError("unknown method '" + o.method + "'");
  const std::vector<S> sections = {S::Train};
  const RunConfig cfg = resolve(o, sections);
  const fs::path dir(o.out);
  const auto ds = load_dataset_dir(o.data);

  std::vector<fs::path> inputs = {o.data};
  if (!o.config.empty()) inputs.push_back(o.config);
  write_manifest(dir, "train", cfg, sections, inputs,
                 {dir / "model.bin", dir / "model.manifest", dir / "report.csv",
                  dir / "report.json"},
                 {{"method", o.method}});

  const auto result = train_method(ds, o.method, cfg.train);
  save_checkpoint(result.bundle, dir / "model");
  const auto report = make_report(result, cfg.seed, resolved_config(cfg, sections));
  write_text(dir / "report.csv", report_csv(report));
  write_text(dir / "report.json", report_json(report));
  out << result.method << ": best epoch " << result.best_epoch << ", validation accuracy "
      << result.best_validation_accuracy << ", test accuracy " << result.test_accuracy << '\n';
  return kExitOk;
}

int cmd_eval(const Options& o, std::ostream& out) {
  require_flag(o.data, "--data");
  require_flag(o.checkpoint, "--checkpoint");
  const fs::path stem = checkpoint_stem(o.checkpoint);
  const auto bundle = load_bundle(stem);
  const auto ds = load_dataset_dir(o.data);
  if (dims_of(ds).instance_dim != bundle.dims.instance_dim ||
      dims_of(ds).num_classes != bundle.dims.num_classes)
    throw DataError(DataError::Kind::InvalidConfig, "checkpoint does not match the dataset shape");

  nlohmann::ordered_json j;
  j["checkpoint"] = stem.string();
  for (Split s : {Split::Train, Split::Validation, Split::Test}) {
    const std::string name(split_name(s));
    if (ds.indices(s).empty() || !ds.ground_truth()) {
      j[name] = nullptr;
      continue;
    }
    const auto split = labeled_split(ds, s);
    const Tensor p = bundle.classifier.predict(split.x);
    const auto pc = per_class_accuracy(p, split.labels);
    j[name] = {{"accuracy", accuracy(p, split.labels)},
               {"per_class_accuracy", pc.accuracy},
               {"per_class_count", pc.count},
               {"entropy_decile_non_increasing",
                decile_non_increasing_fraction(entropy_accuracy_curve(p, split.labels))}};
  }
  const fs::path report = stem.parent_path() / "report.json";
  if (fs::exists(report) && j["test"].is_object()) {
    std::ifstream in(report);
    const auto r = nlohmann::ordered_json::parse(in);
    const double reported = r["test_accuracy"].get<double>();
    j["report_test_accuracy"] = reported;
    j["matches_report"] = reported == j["test"]["accuracy"].get<double>();
  }
  const std::string text = j.dump(2) + '\n';
  if (!o.out.empty()) write_text(fs::path(o.out) / "metrics.json", text);
  out << text;
  return kExitOk;
}

int cmd_sweep(const Options& o, std::ostream& out, bool ablate) {
  require_flag(o.data, "--data");
  require_flag(o.out, "--out");
  const std::vector<S> sections = {S::Train, S::Sweep};
  const RunConfig cfg = resolve(o, sections);
  const fs::path dir(o.out);
  auto ds = load_dataset_dir(o.data);
  const std::string stem = ablate ? "ablation" : "sweep";
  std::vector<fs::path> inputs = {o.data};
  if (!o.config.empty()) inputs.push_back(o.config);
  write_manifest(dir, ablate ? "ablate" : "sweep", cfg, sections, inputs,
                 {dir / (stem + ".csv"), dir / (stem + ".json")},
                 {{"threads", worker_threads()}});
  const auto data = fixed_dataset(std::move(ds));
  const SweepTable t = ablate
                           ? ablation_table(data, cfg.sweep.variants, cfg.train, cfg.sweep.seeds,
                                            worker_threads())
                           : run_sweep(data, cfg.sweep, cfg.train, worker_threads());
  write_text(dir / (stem + ".csv"), sweep_csv(t));
  write_text(dir / (stem + ".json"), sweep_json(t));
  out << sweep_csv(t);
  return kExitOk;
}

int cmd_augment(const Options& o, std::ostream& out) {
  require_flag(o.data, "--data");
  require_flag(o.checkpoint, "--checkpoint");
  require_flag(o.out, "--out");
  const std::vector<S> sections = {};
  const RunConfig cfg = resolve(o, sections);
  const fs::path dir(o.out);
  const fs::path stem = checkpoint_stem(o.checkpoint);
  const auto bundle = load_bundle(stem);
  const auto ds = load_dataset_dir(o.data);
  write_manifest(dir, "augment", cfg, sections,
                 {o.data, fs::path(stem.string() + ".bin"), fs::path(stem.string() + ".manifest")},
                 {dir / "augmented_annotations.csv"});
  const std::string csv = export_augmented(ds, bundle, cfg.seed);
  write_text(dir / "augmented_annotations.csv", csv);
  out << "wrote " << std::count(csv.begin(), csv.end(), '\n') - 1 << " rows to "
      << (dir / "augmented_annotations.csv").string() << '\n';
  return kExitOk;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Learning from crowds with generative annotation augmentation", "crowding"};
  app.set_version_flag("--version", std::string(kVersion));
  app.require_subcommand(0, 1);
  bool reference = false;
  app.add_flag("--config-reference", reference, "Print the config key reference and exit");

  Options o;
  auto common = [&](CLI::App* sub, bool data, bool config, bool method, bool checkpoint) {
    if (config) sub->add_option("--config", o.config, "key = value config file");
    if (data) sub->add_option("--data", o.data, "Dataset directory");
    sub->add_option("--out", o.out, "Output directory");
    sub->add_option("--seed", o.seed, "Seed (overrides the config)");
    if (method)
      sub->add_option("--method", o.method, "crowding, dl-cl, dl-mv or an ablation variant");
    if (checkpoint)
      sub->add_option("--checkpoint", o.checkpoint, "Run directory or checkpoint stem");
  };
  auto* synth = app.add_subcommand("synth", "Generate a synthetic crowd dataset");
  common(synth, false, true, false, false);
  auto* train = app.add_subcommand("train", "Train one method and write checkpoint and report");
  common(train, true, true, true, false);
  auto* eval = app.add_subcommand("eval", "Evaluate a saved checkpoint on a dataset");
  common(eval, true, false, false, true);
  auto* sweep = app.add_subcommand("sweep", "Removal, lambda or threshold sweep over seeds");
  common(sweep, true, true, false, false);
  auto* ablate = app.add_subcommand("ablate", "Ablation variants over seeds");
  common(ablate, true, true, false, false);
  auto* augment = app.add_subcommand("augment", "Complete the annotation matrix from a checkpoint");
  common(augment, true, false, false, true);

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForVersion&) {
    out << kVersion << '\n';
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << '\n';
    return kExitConfig;
  }

  try {
    if (reference) {
      out << config_reference();
      return kExitOk;
    }
    if (*synth) return cmd_synth(o, out);
    if (*train) return cmd_train(o, out);
    if (*eval) return cmd_eval(o, out);
    if (*sweep) return cmd_sweep(o, out, false);
    if (*ablate) return cmd_sweep(o, out, true);
    if (*augment) return cmd_augment(o, out);
    out << app.help();
    return kExitConfig;
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const DataError& e) {
    err << "data error: " << e.what() << '\n';
    return kExitData;
  } catch (const DivergenceError& e) {
    err << "divergence: " << e.what() << '\n';
    return kExitDivergence;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitFailure;
  }
}

}  // namespace crowding
