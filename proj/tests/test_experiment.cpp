#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "fedchem/experiment.hpp"
#include "fedchem/nnet.hpp"
#include "fedchem/rng.hpp"

using namespace fedchem;
using nlohmann::json;

namespace {

namespace fs = std::filesystem;

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& tag)
      : path(fs::temp_directory_path() / ("fedchem_exp_" + tag)) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }

  std::string write(const std::string& name, const std::string& content) const {
    const fs::path file = path / name;
    std::ofstream out(file, std::ios::binary);
    out << content;
    return file.string();
  }
  std::string sub(const std::string& name) const { return (path / name).string(); }
};

// 24 molecules over a few scaffold families, enough for a 19/2/3 split.
std::string tiny_table() {
  const char* rows[] = {
      "c1ccccc1",    "Cc1ccccc1",  "CCc1ccccc1", "OCc1ccccc1",  "NCc1ccccc1", "CCCc1ccccc1",
      "C1CCCCC1",    "CC1CCCCC1",  "OC1CCCCC1",  "NC1CCCCC1",   "CCC1CCCCC1", "CCO",
      "CCCO",        "CCN",        "CCC",        "CCOC",        "c1ccncc1",   "Cc1ccncc1",
      "CCc1ccncc1",  "OCc1ccncc1", "c1ccoc1",    "Cc1ccoc1",    "CC=O",       "CCC=O",
  };
  std::string csv = "id,smiles,y\n";
  Rng rng(31);
  int id = 0;
  for (const char* s : rows) {
    csv += "m" + std::to_string(id++) + "," + s + "," + std::to_string(rng.normal()) + "\n";
  }
  return csv;
}

json tiny_run_json(const std::string& csv_path) {
  json j;
  j["dataset"] = {{"path", csv_path}, {"task_columns", json::array({"y"})}};
  j["partition"] = {{"num_clients", 2}, {"alpha", 0.5}};
  j["federation"] = {{"comm_rounds", 3}, {"local_steps", 2}, {"batch_size", 4}};
  j["model"] = {{"mp_layers", 1}, {"edge_hidden", 3}, {"node_dim", 4}, {"head_hidden", 3}};
  j["optimizer"] = {{"lr", 0.002}};
  j["seed"] = 11;
  return j;
}

json minimal_result_doc(const std::string& dataset, const std::string& strategy, double alpha,
                        double best) {
  json doc;
  doc["payload"] = {
      {"dataset", {{"path", dataset}}},
      {"test", {{"metric", "rmse"}, {"best", best}}},
      {"config", {{"strategy", {{"name", strategy}}}, {"partition", {{"alpha", alpha}}}}}};
  doc["meta"] = json::object();
  return doc;
}

}  // namespace

TEST_CASE("parse_run_config: defaults, pinning, and master-seed derivation") {
  json j;
  j["dataset"] = {{"path", "/tmp/data.csv"}};
  RunConfig cfg = parse_run_config(j);
  CHECK(cfg.dataset.path == "/tmp/data.csv");
  CHECK(cfg.dataset.smiles_column == "smiles");
  CHECK(cfg.num_clients == 4);
  CHECK(cfg.alpha == 1.0);
  CHECK_FALSE(cfg.split_seed_pinned);
  CHECK_FALSE(cfg.partition_seed_pinned);
  CHECK_FALSE(cfg.run_seed_pinned);
  CHECK_FALSE(cfg.master_seed.has_value());
  CHECK_FALSE(cfg.grid);
  CHECK(cfg.checkpoint_every == 0);

  j["split"] = {{"seed", 77}};
  j["seed"] = 5;
  cfg = parse_run_config(j);
  CHECK(cfg.split_seed_pinned);
  CHECK(cfg.split.seed == 77);  // pinned seeds survive the master seed
  CHECK(cfg.partition_seed == mix_seed(5, {0x70617274ULL}));
  CHECK(cfg.federation.run_seed == mix_seed(5, {0x72756eULL}));
  CHECK(cfg.master_seed == 5);

  RunConfig manual = parse_run_config(json{{"dataset", {{"path", "x.csv"}}}});
  apply_master_seed(manual, 5);
  CHECK(manual.split.seed == mix_seed(5, {0x73706c6974ULL}));
}

TEST_CASE("parse_run_config rejects invalid settings") {
  const json base{{"dataset", {{"path", "x.csv"}}}};

  json bad = base;
  bad["split"] = {{"ratios", json::array({0.8, 0.2})}};
  CHECK_THROWS_AS(parse_run_config(bad), ConfigError);

  bad = base;
  bad["partition"] = {{"alpha", 0.0}};
  CHECK_THROWS_AS(parse_run_config(bad), ConfigError);

  bad = base;
  bad["federation"] = {{"comm_rounds", 0}};
  CHECK_THROWS_AS(parse_run_config(bad), ConfigError);

  bad = base;
  bad["federation"] = {{"client_fraction", 1.5}};
  CHECK_THROWS_AS(parse_run_config(bad), ConfigError);

  bad = base;
  bad["strategy"] = {{"name", "flit"}, {"power_iterations", 0}};
  CHECK_THROWS_AS(parse_run_config(bad), ConfigError);

  bad = base;
  bad["metric"] = "accuracy";
  CHECK_THROWS_AS(parse_run_config(bad), ConfigError);

  bad = base;
  bad["model"] = {{"mp_layers", 0}};
  CHECK_THROWS_AS(parse_run_config(bad), ConfigError);

  bad = base;
  bad["dataset"] = {{"path", "x.csv"}, {"task_type", "count"}};
  CHECK_THROWS_AS(parse_run_config(bad), ConfigError);

  CHECK_THROWS_AS(parse_run_config(json::object()), json::exception);  // no dataset section
}

TEST_CASE("execution details stay out of the canonical config echo") {
  json j;
  j["dataset"] = {{"path", "x.csv"}};
  j["federation"] = {{"comm_rounds", 2}, {"worker_threads", 1}};
  j["checkpoint_every"] = 0;
  j["seed"] = 9;
  const RunConfig a = parse_run_config(j);

  j["federation"]["worker_threads"] = 7;
  j["checkpoint_every"] = 3;
  const RunConfig b = parse_run_config(j);

  CHECK(run_config_payload(a).dump() == run_config_payload(b).dump());

  // Anything that can change results must show up.
  j["federation"]["comm_rounds"] = 4;
  const RunConfig c = parse_run_config(j);
  CHECK(run_config_payload(a).dump() != run_config_payload(c).dump());
}

TEST_CASE("quantile_type7 linear interpolation") {
  const std::vector<double> four{1.0, 2.0, 3.0, 4.0};
  CHECK(quantile_type7(four, 0.25) == doctest::Approx(1.75).epsilon(1e-15));
  CHECK(quantile_type7(four, 0.5) == doctest::Approx(2.5).epsilon(1e-15));
  CHECK(quantile_type7(four, 0.75) == doctest::Approx(3.25).epsilon(1e-15));
  CHECK(quantile_type7(four, 0.0) == 1.0);
  CHECK(quantile_type7(four, 1.0) == 4.0);

  const std::vector<double> one{7.0};
  CHECK(quantile_type7(one, 0.25) == 7.0);
  CHECK(quantile_type7(one, 0.9) == 7.0);

  const std::vector<double> five{1.0, 2.0, 3.0, 4.0, 10.0};
  CHECK(quantile_type7(five, 0.5) == 3.0);  // odd count: the middle element
}

TEST_CASE("a small experiment writes every artifact and reproduces byte-identically") {
  TempDir dir("e2e");
  const std::string csv = dir.write("tiny.csv", tiny_table());
  const RunConfig cfg = parse_run_config(tiny_run_json(csv));

  const ExperimentOutput first = run_experiment(cfg, dir.sub("out1"));
  const ExperimentOutput second = run_experiment(cfg, dir.sub("out2"));

  CHECK(first.document.at("payload").dump() == second.document.at("payload").dump());
  CHECK(std::isfinite(first.test_metric_best));
  CHECK(std::isfinite(first.test_metric_final));
  CHECK(first.best_round >= 0);
  CHECK(first.best_round < 3);

  for (const char* name : {"results.json", "partition.json", "scaffolds.csv", "rejects.csv",
                           "rounds.csv", "diagnostics.jsonl", "final_model.bin",
                           "best_model.bin"}) {
    CHECK(fs::exists(fs::path(dir.sub("out1")) / name));
  }

  // The on-disk payload matches the returned document.
  std::ifstream in(first.results_path);
  json on_disk;
  in >> on_disk;
  CHECK(on_disk.at("payload").dump() == first.document.at("payload").dump());

  const json& payload = first.document.at("payload");
  CHECK(payload.at("dataset").at("rows") == 24);
  CHECK(payload.at("dataset").at("rejects") == 0);
  CHECK(payload.at("split").at("train") == 19);
  CHECK(payload.at("split").at("valid") == 2);
  CHECK(payload.at("split").at("test") == 3);
  CHECK(payload.at("partition").at("alpha") == 0.5);
  CHECK(payload.at("rounds").size() == 3);
  CHECK(payload.at("test").at("metric") == "rmse");

  // Checkpoints land on the configured cadence and load back.
  json with_ckpt = tiny_run_json(csv);
  with_ckpt["checkpoint_every"] = 2;
  run_experiment(parse_run_config(with_ckpt), dir.sub("out3"));
  CHECK_FALSE(fs::exists(fs::path(dir.sub("out3")) / "round_0000.bin"));
  CHECK(fs::exists(fs::path(dir.sub("out3")) / "round_0001.bin"));
  const LoadedCheckpoint ck = load_checkpoint((fs::path(dir.sub("out3")) / "round_0001.bin").string());
  CHECK(ck.meta.at("round") == 1);
  CHECK(ck.params.values.size() == ck.params.layout->total);
}

TEST_CASE("worker thread count never reaches the results payload") {
  TempDir dir("threads");
  const std::string csv = dir.write("tiny.csv", tiny_table());

  json j = tiny_run_json(csv);
  j["federation"]["worker_threads"] = 1;
  const ExperimentOutput seq = run_experiment(parse_run_config(j), dir.sub("seq"));
  j["federation"]["worker_threads"] = 3;
  const ExperimentOutput par = run_experiment(parse_run_config(j), dir.sub("par"));

  CHECK(seq.document.at("payload").dump() == par.document.at("payload").dump());
}

TEST_CASE("the task head and metric are derived from the data") {
  TempDir dir("derive");
  const std::string path = std::string(FEDCHEM_DATA_DIR) + "/bace_surrogate.csv";

  json j;
  j["dataset"] = {{"path", path},
                  {"task_columns", json::array({"active"})},
                  {"task_type", "binary_multilabel"}};
  j["partition"] = {{"num_clients", 2}, {"alpha", 1.0}};
  j["federation"] = {{"comm_rounds", 2}, {"local_steps", 1}, {"batch_size", 4}};
  j["model"] = {{"mp_layers", 1}, {"edge_hidden", 3}, {"node_dim", 4}, {"head_hidden", 3}};
  j["seed"] = 3;
  const ExperimentOutput out = run_experiment(parse_run_config(j), dir.sub("out"));
  const json& payload = out.document.at("payload");
  CHECK(payload.at("test").at("metric") == "roc_auc");
  CHECK(payload.at("config").at("model").at("task_type") == "binary_multilabel");
  CHECK(payload.at("config").at("model").at("task_count") == 1);
}

TEST_CASE("grid mode sweeps candidates and keeps the winner") {
  TempDir dir("grid");
  const std::string csv = dir.write("tiny.csv", tiny_table());
  json j = tiny_run_json(csv);
  j["strategy"] = {{"name", "focal"}};
  j["grid"] = true;
  const ExperimentOutput out = run_experiment(parse_run_config(j), dir.sub("out"));

  const json& payload = out.document.at("payload");
  REQUIRE(payload.contains("grid_table"));
  const json& table = payload.at("grid_table");
  REQUIRE(table.size() == 3);  // focal sweeps its exponent

  double best_val = 0.0;
  double best_gamma = -1.0;
  for (const json& row : table) {
    const double val = row.at("best_val").get<double>();
    const double gamma = row.at("strategy").at("gamma").get<double>();
    if (best_gamma < 0 || metric_improves(MetricKind::Rmse, val, best_val)) {
      best_val = val;
      best_gamma = gamma;
    }
  }
  CHECK(payload.at("config").at("strategy").at("gamma").get<double>() == best_gamma);
}

TEST_CASE("compare_runs pools by strategy and alpha") {
  TempDir dir("cmp");
  std::vector<std::string> paths;
  const std::string ds = "/data/shared.csv";
  int i = 0;
  for (const double v : {3.0, 1.0, 2.0}) {
    paths.push_back(dir.write("erm" + std::to_string(i++) + ".json",
                              minimal_result_doc(ds, "erm", 0.1, v).dump()));
  }
  for (const double v : {5.0, 4.0}) {
    paths.push_back(dir.write("flit" + std::to_string(i++) + ".json",
                              minimal_result_doc(ds, "flit", 0.1, v).dump()));
  }

  const json cmp = compare_runs(paths);
  CHECK(cmp.at("dataset") == ds);
  CHECK(cmp.at("metric") == "rmse");
  REQUIRE(cmp.at("groups").size() == 2);

  for (const json& g : cmp.at("groups")) {
    if (g.at("strategy") == "erm") {
      CHECK(g.at("alpha") == 0.1);
      CHECK(g.at("n") == 3);
      CHECK(g.at("median") == 2.0);
      CHECK(g.at("q25") == 1.5);
      CHECK(g.at("q75") == 2.5);
      CHECK(g.at("iqr") == 1.0);
      CHECK(g.at("values") == json::array({1.0, 2.0, 3.0}));
    } else {
      CHECK(g.at("strategy") == "flit");
      CHECK(g.at("n") == 2);
      CHECK(g.at("median") == 4.5);
    }
  }
}

TEST_CASE("compare_runs refuses to mix data files") {
  TempDir dir("mix");
  const std::vector<std::string> paths{
      dir.write("a.json", minimal_result_doc("/data/a.csv", "erm", 0.1, 1.0).dump()),
      dir.write("b.json", minimal_result_doc("/data/b.csv", "erm", 0.1, 2.0).dump())};
  CHECK_THROWS_AS(compare_runs(paths), MixedDatasets);
}
