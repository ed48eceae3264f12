#include <cstdlib>
#include <fstream>
#include <sstream>

#include "crowding/cli.hpp"
#include "crowding/config.hpp"
#include "crowding/dataset_io.hpp"
#include "crowding/trainer.hpp"
#include "doctest.h"
#include "json.hpp"
#include "temp_dir.hpp"

using namespace crowding;
using crowding::testing::TempDir;
namespace fs = std::filesystem;

namespace {

struct Result {
  int code;
  std::string out;
  std::string err;
};

Result cli(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = run_cli(args, out, err);
  return {code, out.str(), err.str()};
}

void write(const fs::path& p, const std::string& text) { std::ofstream(p) << text; }

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

nlohmann::json read_json(const fs::path& p) { return nlohmann::json::parse(slurp(p)); }

// Short schedules and narrow networks so commands finish in well under a second.
const char* kFastTrain =
    "epochs = 2\npretrain_epochs = 10\ngen_pretrain_epochs = 3\ndisc_pretrain_epochs = 1\n"
    "inner_steps = 2\nclassifier_hidden = 16\ngenerator_hidden1 = 8\ngenerator_hidden2 = 8\n"
    "embed_dim = 4\nclass_embed_dim = 4\naux_hidden1 = 8\naux_hidden2 = 8\nnoise_dim = 2\n";

fs::path make_data(const TempDir& tmp, const std::string& synth_cfg, const std::string& name) {
  write(tmp / (name + ".cfg"), synth_cfg);
  const auto r = cli({"synth", "--config", (tmp / (name + ".cfg")).string(), "--out",
                      (tmp / name).string()});
  REQUIRE(r.code == kExitOk);
  return tmp / name;
}

}  // namespace

TEST_CASE("synth: minimal config gives a loadable dataset") {
  TempDir tmp;
  const auto dir = make_data(tmp, "num_train = 10\nnum_annotators = 2\nnum_classes = 2\n", "d");
  const auto ds = load_dataset_dir(dir);
  CHECK(ds.indices(Split::Train).size() == 10);
  CHECK(ds.num_annotators() == 2);
  CHECK(ds.num_classes() == 2);
  const auto m = read_json(dir / "manifest.json");
  CHECK(m["command"] == "synth");
  CHECK(m["config"]["num_train"] == "10");
  CHECK(m["outputs"].size() == 5);
  for (const auto& d : m["output_digests"])
    CHECK(d["fnv1a64"] == file_digest(d["path"].get<std::string>()));
}

TEST_CASE("synth: same config and seed give byte-identical files") {
  TempDir tmp;
  write(tmp / "s.cfg", "num_train = 40\nnum_annotators = 6\nseed = 9\n");
  REQUIRE(cli({"synth", "--config", (tmp / "s.cfg").string(), "--out", (tmp / "a").string()}).code == 0);
  REQUIRE(cli({"synth", "--config", (tmp / "s.cfg").string(), "--out", (tmp / "b").string()}).code == 0);
  for (const char* f : {"features.csv", "annotations.csv", "truth.csv", "splits.csv", "dataset.cfg"})
    CHECK(slurp(tmp / "a" / f) == slurp(tmp / "b" / f));
  REQUIRE(cli({"synth", "--config", (tmp / "s.cfg").string(), "--out", (tmp / "c").string(),
               "--seed", "10"}).code == 0);
  CHECK(slurp(tmp / "a" / "annotations.csv") != slurp(tmp / "c" / "annotations.csv"));
}

TEST_CASE("synth: music-shaped counts") {
  TempDir tmp;
  const auto dir = make_data(
      tmp, "num_train = 700\nnum_annotators = 44\nannotations_per_instance = 4.2\nnum_classes = 10\n",
      "music");
  const auto ds = load_dataset_dir(dir);
  CHECK(ds.indices(Split::Train).size() == 700);
  CHECK(ds.num_annotators() == 44);
  const double rho = static_cast<double>(ds.annotations().size()) / 700.0;
  CHECK(rho == doctest::Approx(4.2).epsilon(0.06 / 4.2));
}

TEST_CASE("train: report, checkpoint and manifest") {
  TempDir tmp;
  const auto data = make_data(tmp, "num_train = 60\nnum_annotators = 5\nnum_classes = 3\n", "d");
  write(tmp / "t.cfg", kFastTrain);
  const auto r = cli({"train", "--data", data.string(), "--config", (tmp / "t.cfg").string(),
                      "--out", (tmp / "run").string()});
  REQUIRE(r.code == kExitOk);
  for (const char* f : {"manifest.json", "model.bin", "model.manifest", "report.csv", "report.json"})
    CHECK(fs::exists(tmp / "run" / f));
  const auto m = read_json(tmp / "run" / "manifest.json");
  CHECK(m["command"] == "train");
  CHECK(m["method"] == "crowding");
  CHECK(m["config"]["lambda"] == "0.5");
  CHECK(m["config"]["entropy_threshold"] == "0.5");
  CHECK(m["config"]["epochs"] == "2");
  CHECK(m["inputs"].size() >= 5);  // dataset files plus the config
  const auto rep = read_json(tmp / "run" / "report.json");
  CHECK(rep["method"] == "crowding");
  CHECK(rep["epochs"].size() == 3);

  // eval recomputes the reported accuracy from the checkpoint
  const auto e = cli({"eval", "--data", data.string(), "--checkpoint", (tmp / "run").string(),
                      "--out", (tmp / "ev").string()});
  REQUIRE(e.code == kExitOk);
  const auto j = nlohmann::json::parse(e.out);
  CHECK(j["matches_report"] == true);
  CHECK(j["test"]["accuracy"].get<double>() == rep["test_accuracy"].get<double>());
  CHECK(fs::exists(tmp / "ev" / "metrics.json"));
}

TEST_CASE("train: lambda 0 is labelled CrowdG") {
  TempDir tmp;
  const auto data = make_data(tmp, "num_train = 40\nnum_annotators = 4\nnum_classes = 3\n", "d");
  write(tmp / "t.cfg", std::string(kFastTrain) + "lambda = 0\n");
  REQUIRE(cli({"train", "--data", data.string(), "--config", (tmp / "t.cfg").string(), "--out",
               (tmp / "run").string()}).code == kExitOk);
  CHECK(read_json(tmp / "run" / "report.json")["method"] == "CrowdG");
}

TEST_CASE("train: dl-mv on clean labels matches the library run") {
  TempDir tmp;
  const auto data = make_data(
      tmp, "num_train = 80\nnum_annotators = 5\nreliability_min = 1\nreliability_max = 1\n", "d");
  write(tmp / "t.cfg", kFastTrain);
  REQUIRE(cli({"train", "--data", data.string(), "--config", (tmp / "t.cfg").string(), "--out",
               (tmp / "run").string(), "--method", "dl-mv"}).code == kExitOk);
  const auto rep = read_json(tmp / "run" / "report.json");
  CHECK(rep["method"] == "dl-mv");
  const auto cfg = parse_run_config(kFastTrain, {ConfigSection::Train});
  const auto direct = train_dl_mv(load_dataset_dir(data), cfg.train);
  CHECK(rep["test_accuracy"].get<double>() == direct.test_accuracy);
}

TEST_CASE("sweep and ablate tables") {
  TempDir tmp;
  const auto data = make_data(
      tmp, "num_train = 40\nnum_annotators = 5\nnum_classes = 3\nannotations_per_instance = 4\n", "d");
  write(tmp / "s.cfg", std::string(kFastTrain) +
                           "sweep_values = 0, 0.2, 0.4, 0.6\nsweep_methods = crowding, dl-cl, dl-mv\n"
                           "seeds = 1, 2\n");
  const auto r = cli({"sweep", "--data", data.string(), "--config", (tmp / "s.cfg").string(),
                      "--out", (tmp / "sw").string()});
  REQUIRE(r.code == kExitOk);
  const std::string csv = slurp(tmp / "sw" / "sweep.csv");
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 13);
  CHECK(read_json(tmp / "sw" / "sweep.json")["cells"].size() == 12);
  CHECK(read_json(tmp / "sw" / "manifest.json")["command"] == "sweep");

  write(tmp / "a.cfg", std::string(kFastTrain) + "seeds = 1\n");
  REQUIRE(cli({"ablate", "--data", data.string(), "--config", (tmp / "a.cfg").string(), "--out",
               (tmp / "ab").string()}).code == kExitOk);
  const auto j = read_json(tmp / "ab" / "ablation.json");
  REQUIRE(j["cells"].size() == 5);
  const std::vector<std::string> names = {"full", "CrowdG", "CrowdInG_U", "CrowdInG_I", "CrowdInG_R"};
  for (std::size_t i = 0; i < 5; ++i) CHECK(j["cells"][i]["method"] == names[i]);
}

TEST_CASE("augment completes the training grid") {
  TempDir tmp;
  const auto data = make_data(tmp, "num_train = 30\nnum_annotators = 4\nnum_classes = 3\n", "d");
  write(tmp / "t.cfg", kFastTrain);
  REQUIRE(cli({"train", "--data", data.string(), "--config", (tmp / "t.cfg").string(), "--out",
               (tmp / "run").string(), "--method", "dl-cl"}).code == kExitOk);
  REQUIRE(cli({"augment", "--data", data.string(), "--checkpoint", (tmp / "run").string(),
               "--out", (tmp / "aug").string()}).code == kExitOk);
  const std::string csv = slurp(tmp / "aug" / "augmented_annotations.csv");
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 1 + 30 * 4);
}

TEST_CASE("exit codes") {
  TempDir tmp;
  const auto data = make_data(tmp, "num_train = 20\nnum_annotators = 3\n", "d");
  write(tmp / "bad.cfg", "lamda = 1\n");
  auto r = cli({"train", "--data", data.string(), "--config", (tmp / "bad.cfg").string(), "--out",
                (tmp / "x").string()});
  CHECK(r.code == kExitConfig);
  CHECK(r.err.find("lamda") != std::string::npos);

  write(tmp / "bad2.cfg", "num_classes = 1\n");
  CHECK(cli({"synth", "--config", (tmp / "bad2.cfg").string(), "--out", (tmp / "y").string()}).code ==
        kExitConfig);
  CHECK(cli({"train", "--data", data.string(), "--out", (tmp / "z").string(), "--method", "dl-ds"})
            .code == kExitConfig);
  CHECK(cli({"train", "--out", (tmp / "z").string()}).code == kExitConfig);
  CHECK(cli({"frobnicate"}).code == kExitConfig);
  CHECK(cli({"train", "--data", (tmp / "missing").string(), "--out", (tmp / "z").string()}).code ==
        kExitData);
  CHECK(cli({"eval", "--data", data.string(), "--checkpoint", (tmp / "nothing").string()}).code ==
        kExitData);

  write(tmp / "div.cfg", "pretrain_epochs = 2\nlr_pretrain = 1e300\n");
  r = cli({"train", "--data", data.string(), "--config", (tmp / "div.cfg").string(), "--out",
           (tmp / "w").string(), "--method", "dl-cl"});
  CHECK(r.code == kExitDivergence);
  CHECK(r.err.find("epoch") != std::string::npos);

  ::setenv("CROWDING_THREADS", "many", 1);
  write(tmp / "sw.cfg", std::string(kFastTrain) + "seeds = 1\nsweep_values = 0\n");
  CHECK(cli({"sweep", "--data", data.string(), "--config", (tmp / "sw.cfg").string(), "--out",
             (tmp / "v").string()}).code == kExitConfig);
  ::unsetenv("CROWDING_THREADS");
}

TEST_CASE("help, version and the config reference") {
  CHECK(cli({"--help"}).code == kExitOk);
  CHECK(cli({"--version"}).out == "0.1.0\n");
  const auto r = cli({"--config-reference"});
  CHECK(r.code == kExitOk);
  CHECK(r.out.find("`entropy_threshold`") != std::string::npos);
}
