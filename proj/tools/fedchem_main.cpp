#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "fedchem/experiment.hpp"
#include "fedchem/gradcheck.hpp"

namespace {

nlohmann::json read_json_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw fedchem::ConfigError("cannot open config file " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw fedchem::ConfigError("cannot parse " + path + ": " + e.what());
  }
  return j;
}

fedchem::RunConfig load_config(const std::string& path, std::optional<std::uint64_t> seed) {
  fedchem::RunConfig cfg = fedchem::parse_run_config(read_json_file(path));
  if (seed) fedchem::apply_master_seed(cfg, *seed);
  return cfg;
}

void emit(const nlohmann::json& doc, const std::string& out_path) {
  const std::string text = doc.dump(2) + "\n";
  if (out_path.empty()) {
    std::fputs(text.c_str(), stdout);
    return;
  }
  std::ofstream out(out_path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + out_path);
  out << text;
}

int cmd_run(const std::string& config_path, std::optional<std::uint64_t> seed,
            const std::string& out_dir) {
  const fedchem::RunConfig cfg = load_config(config_path, seed);
  const fedchem::ExperimentOutput out = fedchem::run_experiment(cfg, out_dir);
  const nlohmann::json& sel = out.document.at("payload").at("selection");
  std::printf("wrote %s\n", out.results_path.c_str());
  std::printf("best round %d, validation %s, test(best) %s\n", out.best_round,
              sel.at("best_val").dump().c_str(),
              out.document.at("payload").at("test").at("best").dump().c_str());
  return 0;
}

int cmd_partition(const std::string& config_path, std::optional<std::uint64_t> seed,
                  const std::string& out_path) {
  const fedchem::RunConfig cfg = load_config(config_path, seed);
  const fedchem::Dataset ds = fedchem::load_dataset(cfg.dataset);
  const fedchem::SplitIndices split = fedchem::split_dataset(ds.size(), cfg.split);
  const fedchem::ScaffoldGroups groups = fedchem::group_by_scaffold(ds.graphs, split.train);
  const fedchem::ClientPartition part =
      fedchem::make_client_partition(groups, cfg.num_clients, cfg.alpha, cfg.partition_seed);

  nlohmann::json doc{{"alpha", cfg.alpha},
                     {"num_clients", cfg.num_clients},
                     {"seed", cfg.partition_seed},
                     {"heterogeneity", fedchem::heterogeneity_index(part, groups)},
                     {"sizes", part.sizes()},
                     {"scaffold_groups", groups.keys.size()},
                     {"train_rows", split.train.size()}};
  nlohmann::json clients = nlohmann::json::array();
  for (std::size_t l = 0; l < part.assignments.size(); ++l) {
    clients.push_back({{"id", l}, {"rows", part.assignments[l]}});
  }
  doc["clients"] = clients;
  emit(doc, out_path);
  return 0;
}

int cmd_compare(const std::vector<std::string>& inputs, const std::string& out_path) {
  emit(fedchem::compare_runs(inputs), out_path);
  return 0;
}

int cmd_gradcheck(std::uint64_t seed, int cases) {
  const fedchem::GradCheckReport report = fedchem::run_gradient_checks(seed, cases);
  std::fputs(fedchem::format_report(report).c_str(), stdout);
  return report.all_passed ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Deterministic federated trainer for molecular property prediction"};
  app.require_subcommand(1);

  std::string config_path, out_dir = "results", out_path;
  std::optional<std::uint64_t> seed;
  std::vector<std::string> inputs;
  std::uint64_t gc_seed = 42;
  int gc_cases = 20;

  CLI::App* run = app.add_subcommand("run", "Run one federated training experiment");
  run->add_option("--config", config_path, "JSON run configuration")->required();
  run->add_option("--seed", seed, "Master seed; overrides any non-pinned seed");
  run->add_option("--out", out_dir, "Output directory (default: results)");

  CLI::App* partition =
      app.add_subcommand("partition", "Print the client partition for a configuration");
  partition->add_option("--config", config_path, "JSON run configuration")->required();
  partition->add_option("--seed", seed, "Master seed; overrides any non-pinned seed");
  partition->add_option("--out", out_path, "Write JSON here instead of stdout");

  CLI::App* compare = app.add_subcommand("compare", "Pool results.json files and report quartiles");
  compare->add_option("--inputs", inputs, "results.json files")->required()->expected(-1);
  compare->add_option("--out", out_path, "Write JSON here instead of stdout");

  CLI::App* gradcheck =
      app.add_subcommand("gradcheck", "Check analytic gradients against finite differences");
  gradcheck->add_option("--seed", gc_seed, "Base seed for the generated cases");
  gradcheck->add_option("--cases", gc_cases, "Cases per strategy")->check(CLI::PositiveNumber);

  CLI11_PARSE(app, argc, argv);

  try {
    if (run->parsed()) return cmd_run(config_path, seed, out_dir);
    if (partition->parsed()) return cmd_partition(config_path, seed, out_path);
    if (compare->parsed()) return cmd_compare(inputs, out_path);
    if (gradcheck->parsed()) return cmd_gradcheck(gc_seed, gc_cases);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
