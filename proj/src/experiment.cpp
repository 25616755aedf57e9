#include "fedchem/experiment.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

namespace fedchem {

namespace {

constexpr std::uint64_t kTagSplit = 0x73706c6974;   // "split"
constexpr std::uint64_t kTagPartition = 0x70617274; // "part"
constexpr std::uint64_t kTagRun = 0x72756e;         // "run"

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::string csv_escape(const std::string& s) {
  if (s.find_first_of(",\"\n\r") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += "\"\"";
    else out += c;
  }
  out += '"';
  return out;
}

void write_text(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << content;
  if (!out) throw std::runtime_error("write failed: " + path);
}

std::string iso_utc(std::chrono::system_clock::time_point tp) {
  const std::time_t t = std::chrono::system_clock::to_time_t(tp);
  std::tm g{};
  gmtime_r(&t, &g);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &g);
  return buf;
}

std::string task_type_name(TaskType t) {
  return t == TaskType::Regression ? "regression" : "binary_multilabel";
}

TaskType parse_task_type(const std::string& s) {
  if (s == "regression") return TaskType::Regression;
  if (s == "binary_multilabel" || s == "classification") return TaskType::BinaryMultilabel;
  throw ConfigError("unknown task_type '" + s + "'");
}

MetricKind parse_metric(const std::string& s) {
  if (s == "rmse") return MetricKind::Rmse;
  if (s == "mae") return MetricKind::Mae;
  if (s == "auc" || s == "roc_auc") return MetricKind::RocAuc;
  throw ConfigError("unknown metric '" + s + "'");
}

nlohmann::json strategy_payload(const StrategyConfig& s) {
  return nlohmann::json{{"name", strategy_name(s.kind)},
                        {"gamma", s.gamma},
                        {"mu", s.mu},
                        {"lambda", s.lambda},
                        {"vat_weight", s.vat_weight},
                        {"epsilon", s.epsilon},
                        {"xi", s.xi},
                        {"beta", s.beta},
                        {"power_iterations", s.vat_power_iterations},
                        {"delta_in_objective", s.flit_plus_delta_in_objective}};
}

std::vector<StrategyConfig> grid_candidates(const StrategyConfig& base) {
  static constexpr double kGamma[] = {0.5, 1.0, 2.0};
  static constexpr double kLambda[] = {0.01, 0.1, 1.0};
  static constexpr double kMu[] = {0.001, 0.01, 0.1, 1.0, 10.0};
  static constexpr double kVatWeight[] = {0.01, 0.1, 1.0};

  std::vector<StrategyConfig> out;
  switch (base.kind) {
    case StrategyKind::Erm:
      out.push_back(base);
      break;
    case StrategyKind::Prox:
      for (double mu : kMu) {
        StrategyConfig c = base;
        c.mu = mu;
        out.push_back(c);
      }
      break;
    case StrategyKind::Focal:
      for (double g : kGamma) {
        StrategyConfig c = base;
        c.gamma = g;
        out.push_back(c);
      }
      break;
    case StrategyKind::Vat:
      for (double w : kVatWeight) {
        StrategyConfig c = base;
        c.vat_weight = w;
        out.push_back(c);
      }
      break;
    case StrategyKind::Flit:
      for (double g : kGamma) {
        StrategyConfig c = base;
        c.gamma = g;
        out.push_back(c);
      }
      break;
    case StrategyKind::FlitPlus:
      for (double g : kGamma) {
        for (double l : kLambda) {
          StrategyConfig c = base;
          c.gamma = g;
          c.lambda = l;
          out.push_back(c);
        }
      }
      break;
  }
  return out;
}

nlohmann::json metric_or_null(double v) {
  if (std::isnan(v)) return nullptr;
  return v;
}

}  // namespace

RunConfig parse_run_config(const nlohmann::json& j) {
  RunConfig cfg;

  const nlohmann::json& d = j.at("dataset");
  cfg.dataset.path = d.at("path").get<std::string>();
  cfg.dataset.smiles_column = d.value("smiles_column", std::string("smiles"));
  cfg.dataset.task_columns = d.value("task_columns", std::vector<std::string>{});
  cfg.dataset.task_type = parse_task_type(d.value("task_type", std::string("regression")));

  if (j.contains("split")) {
    const nlohmann::json& s = j.at("split");
    if (s.contains("ratios")) {
      const auto r = s.at("ratios").get<std::vector<double>>();
      if (r.size() != 3) throw ConfigError("split.ratios must have 3 entries");
      cfg.split.ratios = {r[0], r[1], r[2]};
    }
    if (s.contains("seed")) {
      cfg.split.seed = s.at("seed").get<std::uint64_t>();
      cfg.split_seed_pinned = true;
    }
  }

  if (j.contains("partition")) {
    const nlohmann::json& p = j.at("partition");
    cfg.num_clients = p.value("num_clients", cfg.num_clients);
    cfg.alpha = p.value("alpha", cfg.alpha);
    if (p.contains("seed")) {
      cfg.partition_seed = p.at("seed").get<std::uint64_t>();
      cfg.partition_seed_pinned = true;
    }
  }
  if (cfg.num_clients == 0) throw ConfigError("partition.num_clients must be >= 1");
  if (!(cfg.alpha > 0.0)) throw ConfigError("partition.alpha must be > 0");

  if (j.contains("federation")) {
    const nlohmann::json& f = j.at("federation");
    cfg.federation.comm_rounds = f.value("comm_rounds", cfg.federation.comm_rounds);
    cfg.federation.local_steps = f.value("local_steps", cfg.federation.local_steps);
    cfg.federation.batch_size = f.value("batch_size", cfg.federation.batch_size);
    cfg.federation.client_fraction = f.value("client_fraction", cfg.federation.client_fraction);
    cfg.federation.worker_threads = f.value("worker_threads", cfg.federation.worker_threads);
    if (f.contains("run_seed")) {
      cfg.federation.run_seed = f.at("run_seed").get<std::uint64_t>();
      cfg.run_seed_pinned = true;
    }
  }
  if (cfg.federation.comm_rounds <= 0) throw ConfigError("federation.comm_rounds must be > 0");
  if (cfg.federation.local_steps < 0) throw ConfigError("federation.local_steps must be >= 0");
  if (cfg.federation.batch_size <= 0) throw ConfigError("federation.batch_size must be > 0");
  if (!(cfg.federation.client_fraction > 0.0) || cfg.federation.client_fraction > 1.0) {
    throw ConfigError("federation.client_fraction must be in (0, 1]");
  }

  if (j.contains("strategy")) {
    const nlohmann::json& s = j.at("strategy");
    StrategyConfig& sc = cfg.federation.strategy;
    sc.kind = parse_strategy(s.value("name", std::string("erm")));
    sc.gamma = s.value("gamma", sc.gamma);
    sc.mu = s.value("mu", sc.mu);
    sc.lambda = s.value("lambda", sc.lambda);
    sc.vat_weight = s.value("vat_weight", sc.vat_weight);
    sc.epsilon = s.value("epsilon", sc.epsilon);
    sc.xi = s.value("xi", sc.xi);
    sc.beta = s.value("beta", sc.beta);
    sc.vat_power_iterations = s.value("power_iterations", sc.vat_power_iterations);
    sc.flit_plus_delta_in_objective = s.value("delta_in_objective", sc.flit_plus_delta_in_objective);
    if (sc.vat_power_iterations < 1) throw ConfigError("strategy.power_iterations must be >= 1");
  }

  if (j.contains("optimizer")) {
    const nlohmann::json& o = j.at("optimizer");
    AdamConfig& a = cfg.federation.adam;
    a.lr = o.value("lr", a.lr);
    a.beta1 = o.value("beta1", a.beta1);
    a.beta2 = o.value("beta2", a.beta2);
    a.eps = o.value("eps", a.eps);
    a.weight_decay = o.value("weight_decay", a.weight_decay);
  }

  if (j.contains("model")) {
    const nlohmann::json& m = j.at("model");
    cfg.model.mp_layers = m.value("mp_layers", cfg.model.mp_layers);
    cfg.model.edge_hidden = m.value("edge_hidden", cfg.model.edge_hidden);
    cfg.model.node_dim = m.value("node_dim", cfg.model.node_dim);
    cfg.model.head_hidden = m.value("head_hidden", cfg.model.head_hidden);
    const std::string readout = m.value("readout", std::string("sum"));
    if (readout == "sum") cfg.model.readout = Readout::Sum;
    else if (readout == "mean") cfg.model.readout = Readout::Mean;
    else throw ConfigError("unknown readout '" + readout + "'");
    if (cfg.model.mp_layers < 1 || cfg.model.edge_hidden < 1 || cfg.model.node_dim < 1 ||
        cfg.model.head_hidden < 1) {
      throw ConfigError("model dimensions must be >= 1");
    }
  }

  if (j.contains("metric")) {
    cfg.val_metric = parse_metric(j.at("metric").get<std::string>());
    cfg.metric_pinned = true;
  }
  cfg.grid = j.value("grid", false);
  cfg.checkpoint_every = j.value("checkpoint_every", 0);

  if (j.contains("seed")) {
    cfg.master_seed = j.at("seed").get<std::uint64_t>();
    apply_master_seed(cfg, *cfg.master_seed);
  }
  return cfg;
}

void apply_master_seed(RunConfig& cfg, std::uint64_t master_seed) {
  cfg.master_seed = master_seed;
  if (!cfg.split_seed_pinned) cfg.split.seed = mix_seed(master_seed, {kTagSplit});
  if (!cfg.partition_seed_pinned) cfg.partition_seed = mix_seed(master_seed, {kTagPartition});
  if (!cfg.run_seed_pinned) cfg.federation.run_seed = mix_seed(master_seed, {kTagRun});
}

nlohmann::json run_config_payload(const RunConfig& cfg) {
  nlohmann::json model_json;
  to_json(model_json, cfg.model);
  return nlohmann::json{
      {"dataset",
       {{"path", cfg.dataset.path},
        {"smiles_column", cfg.dataset.smiles_column},
        {"task_columns", cfg.dataset.task_columns},
        {"task_type", task_type_name(cfg.dataset.task_type)}}},
      {"split", {{"ratios", cfg.split.ratios}, {"seed", cfg.split.seed}}},
      {"partition",
       {{"num_clients", cfg.num_clients}, {"alpha", cfg.alpha}, {"seed", cfg.partition_seed}}},
      {"federation",
       {{"comm_rounds", cfg.federation.comm_rounds},
        {"local_steps", cfg.federation.local_steps},
        {"batch_size", cfg.federation.batch_size},
        {"client_fraction", cfg.federation.client_fraction},
        {"run_seed", cfg.federation.run_seed}}},
      {"strategy", strategy_payload(cfg.federation.strategy)},
      {"optimizer",
       {{"lr", cfg.federation.adam.lr},
        {"beta1", cfg.federation.adam.beta1},
        {"beta2", cfg.federation.adam.beta2},
        {"eps", cfg.federation.adam.eps},
        {"weight_decay", cfg.federation.adam.weight_decay}}},
      {"model", model_json},
      {"metric", metric_name(cfg.val_metric)},
      {"grid", cfg.grid}};
}

double quantile_type7(std::span<const double> sorted, double p) {
  if (sorted.empty()) return std::numeric_limits<double>::quiet_NaN();
  if (sorted.size() == 1) return sorted[0];
  p = std::clamp(p, 0.0, 1.0);
  const double h = p * static_cast<double>(sorted.size() - 1);
  const std::size_t lo = static_cast<std::size_t>(h);
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  const double frac = h - static_cast<double>(lo);
  return sorted[lo] + frac * (sorted[hi] - sorted[lo]);
}

ExperimentOutput run_experiment(const RunConfig& cfg_in, const std::string& out_dir) {
  namespace fs = std::filesystem;
  RunConfig cfg = cfg_in;
  fs::create_directories(out_dir);
  const auto wall_start = std::chrono::system_clock::now();
  const auto tick = std::chrono::steady_clock::now();

  Dataset ds = load_dataset(cfg.dataset);
  if (ds.size() == 0) throw DatasetError("no usable rows in " + cfg.dataset.path);
  cfg.model.task_count = static_cast<int>(ds.task_names.size());
  cfg.model.task_type = ds.task_type;
  cfg.model.node_feat_dim = FeatureSpec{}.node_width();
  cfg.model.edge_feat_dim = FeatureSpec::kEdgeWidth;
  if (!cfg.metric_pinned) {
    cfg.val_metric =
        ds.task_type == TaskType::Regression ? MetricKind::Rmse : MetricKind::RocAuc;
  }

  const SplitIndices split = split_dataset(ds.size(), cfg.split);
  if (split.train.empty()) throw ConfigError("training split is empty");

  const ScaffoldGroups groups = group_by_scaffold(ds.graphs, split.train);
  const ClientPartition part =
      make_client_partition(groups, cfg.num_clients, cfg.alpha, cfg.partition_seed);
  const double hetero = heterogeneity_index(part, groups);

  const std::vector<std::uint8_t> mask_bytes = mask_to_bytes(ds.mask);
  std::vector<ClientData> clients;
  clients.reserve(cfg.num_clients);
  for (std::size_t l = 0; l < cfg.num_clients; ++l) {
    clients.push_back(ClientData{ds.feats, &ds.labels, mask_bytes, part.assignments[l]});
  }
  EvalSlice valid{ds.feats, &ds.labels, &ds.mask, split.valid};
  EvalSlice test{ds.feats, &ds.labels, &ds.mask, split.test};
  const EvalSlice* valid_ptr = split.valid.empty() ? nullptr : &valid;

  FedConfig fed = cfg.federation;
  fed.num_clients = static_cast<int>(cfg.num_clients);

  nlohmann::json grid_table = nlohmann::json::array();
  if (cfg.grid) {
    int best_idx = -1;
    double best_val = 0.0;
    const std::vector<StrategyConfig> candidates = grid_candidates(fed.strategy);
    for (std::size_t i = 0; i < candidates.size(); ++i) {
      FedConfig cand_fed = fed;
      cand_fed.strategy = candidates[i];
      const FederationResult r =
          run_federation(cfg.model, cand_fed, clients, valid_ptr, cfg.val_metric);
      grid_table.push_back({{"strategy", strategy_payload(candidates[i])},
                            {"best_round", r.best_round},
                            {"best_val", metric_or_null(r.best_val_metric)}});
      if (!std::isnan(r.best_val_metric) &&
          (best_idx < 0 || metric_improves(cfg.val_metric, r.best_val_metric, best_val))) {
        best_idx = static_cast<int>(i);
        best_val = r.best_val_metric;
      }
    }
    if (best_idx >= 0) fed.strategy = candidates[static_cast<std::size_t>(best_idx)];
    cfg.federation.strategy = fed.strategy;
  }

  std::string rounds_csv =
      "round,clients,train_loss_before,train_loss_after,val_metric,duration_seconds\n";
  std::string diag_jsonl;
  nlohmann::json rounds_payload = nlohmann::json::array();
  const RoundObserver observer = [&](const RoundRecord& rec, const ParamVector& params) {
    std::string ids;
    for (std::size_t i = 0; i < rec.client_ids.size(); ++i) {
      if (i > 0) ids += ';';
      ids += std::to_string(rec.client_ids[i]);
    }
    rounds_csv += std::to_string(rec.round) + "," + ids + "," + fmt_double(rec.train_loss_before) +
                  "," + fmt_double(rec.train_loss_after) + "," +
                  (rec.has_val ? fmt_double(rec.val_metric) : "") + "," +
                  fmt_double(rec.duration_seconds) + "\n";
    for (const ClientRoundDiag& d : rec.diags) {
      const nlohmann::json line{{"round", d.round},
                                {"client", d.client_id},
                                {"steps", d.steps},
                                {"loss_before", d.loss_before},
                                {"loss_after", d.loss_after},
                                {"mean_omega", d.mean_omega},
                                {"mean_weight", d.mean_weight},
                                {"mean_delta", d.mean_delta},
                                {"vat_radius_max_err", d.vat_radius_max_err}};
      diag_jsonl += line.dump() + "\n";
    }
    rounds_payload.push_back(
        {{"round", rec.round},
         {"clients", rec.client_ids},
         {"train_loss_before", rec.train_loss_before},
         {"train_loss_after", rec.train_loss_after},
         {"val_metric", rec.has_val ? nlohmann::json(rec.val_metric) : nlohmann::json(nullptr)}});
    if (cfg.checkpoint_every > 0 && (rec.round + 1) % cfg.checkpoint_every == 0) {
      char name[32];
      std::snprintf(name, sizeof(name), "round_%04d.bin", rec.round);
      save_checkpoint((fs::path(out_dir) / name).string(), params, cfg.model,
                      {{"round", rec.round}, {"run_seed", fed.run_seed}});
    }
  };

  const FederationResult result =
      run_federation(cfg.model, fed, clients, valid_ptr, cfg.val_metric, observer);

  double test_final = std::numeric_limits<double>::quiet_NaN();
  double test_best = std::numeric_limits<double>::quiet_NaN();
  nlohmann::json test_per_task = nlohmann::json::array();
  if (!split.test.empty()) {
    const MetricReport rep_final =
        evaluate_slice(result.final_params, cfg.model, test, cfg.val_metric);
    const MetricReport rep_best =
        evaluate_slice(result.best_params, cfg.model, test, cfg.val_metric);
    test_final = rep_final.aggregate;
    test_best = rep_best.aggregate;
    for (std::size_t t = 0; t < rep_best.per_task.size(); ++t) {
      test_per_task.push_back({{"task", ds.task_names[t]},
                               {"best", metric_or_null(rep_best.per_task[t])},
                               {"skipped", static_cast<bool>(rep_best.task_skipped[t])}});
    }
  }

  nlohmann::json payload{
      {"config", run_config_payload(cfg)},
      {"dataset",
       {{"path", cfg.dataset.path},
        {"rows", ds.size()},
        {"rejects", ds.rejects.size()},
        {"tasks", ds.task_names},
        {"task_type", task_type_name(ds.task_type)}}},
      {"split",
       {{"train", split.train.size()}, {"valid", split.valid.size()}, {"test", split.test.size()}}},
      {"partition",
       {{"alpha", cfg.alpha},
        {"num_clients", cfg.num_clients},
        {"sizes", part.sizes()},
        {"scaffold_groups", groups.keys.size()},
        {"heterogeneity", hetero}}},
      {"rounds", rounds_payload},
      {"selection",
       {{"best_round", result.best_round}, {"best_val", metric_or_null(result.best_val_metric)}}},
      {"test",
       {{"metric", metric_name(cfg.val_metric)},
        {"final", metric_or_null(test_final)},
        {"best", metric_or_null(test_best)},
        {"per_task", test_per_task}}}};
  if (cfg.grid) payload["grid_table"] = grid_table;

  const auto wall_end = std::chrono::system_clock::now();
  const double wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - tick).count();
  nlohmann::json meta{{"started_at", iso_utc(wall_start)},
                      {"finished_at", iso_utc(wall_end)},
                      {"wall_seconds", wall_seconds},
                      {"worker_threads_configured", cfg.federation.worker_threads},
                      {"worker_threads_effective", resolve_worker_threads(cfg.federation.worker_threads)},
                      {"checkpoint_every", cfg.checkpoint_every},
                      {"out_dir", out_dir}};

  ExperimentOutput out;
  out.document = nlohmann::json{{"payload", payload}, {"meta", meta}};
  out.test_metric_best = test_best;
  out.test_metric_final = test_final;
  out.best_round = result.best_round;
  out.results_path = (fs::path(out_dir) / "results.json").string();

  write_text(out.results_path, out.document.dump(2) + "\n");

  {
    nlohmann::json part_json{{"alpha", cfg.alpha},
                             {"num_clients", cfg.num_clients},
                             {"seed", cfg.partition_seed},
                             {"heterogeneity", hetero},
                             {"sizes", part.sizes()}};
    nlohmann::json clients_json = nlohmann::json::array();
    for (std::size_t l = 0; l < part.assignments.size(); ++l) {
      clients_json.push_back({{"id", l}, {"rows", part.assignments[l]}});
    }
    part_json["clients"] = clients_json;
    nlohmann::json groups_json = nlohmann::json::array();
    for (std::size_t g = 0; g < groups.keys.size(); ++g) {
      groups_json.push_back({{"scaffold", groups.keys[g].hex()},
                             {"size", groups.members[g].size()},
                             {"empty", groups.keys[g].is_empty}});
    }
    part_json["groups"] = groups_json;
    write_text((fs::path(out_dir) / "partition.json").string(), part_json.dump(2) + "\n");
  }

  {
    std::string scaffolds_csv = "row,smiles,scaffold,group\n";
    for (std::size_t row : split.train) {
      const std::size_t g = groups.group_of(row);
      scaffolds_csv += std::to_string(row) + "," + csv_escape(ds.smiles[row]) + "," +
                       groups.keys[g].hex() + "," + std::to_string(g) + "\n";
    }
    write_text((fs::path(out_dir) / "scaffolds.csv").string(), scaffolds_csv);
  }

  {
    std::string rejects_csv = "record,smiles,reason\n";
    for (const RejectedRow& r : ds.rejects) {
      rejects_csv += std::to_string(r.record) + "," + csv_escape(r.smiles) + "," +
                     csv_escape(r.reason) + "\n";
    }
    write_text((fs::path(out_dir) / "rejects.csv").string(), rejects_csv);
  }

  write_text((fs::path(out_dir) / "rounds.csv").string(), rounds_csv);
  write_text((fs::path(out_dir) / "diagnostics.jsonl").string(), diag_jsonl);

  save_checkpoint((fs::path(out_dir) / "final_model.bin").string(), result.final_params, cfg.model,
                  {{"round", fed.comm_rounds - 1}, {"run_seed", fed.run_seed}});
  save_checkpoint((fs::path(out_dir) / "best_model.bin").string(), result.best_params, cfg.model,
                  {{"round", result.best_round},
                   {"run_seed", fed.run_seed},
                   {"val_metric", metric_or_null(result.best_val_metric)}});
  return out;
}

nlohmann::json compare_runs(const std::vector<std::string>& results_paths) {
  if (results_paths.empty()) throw ConfigError("compare: no inputs");

  std::string dataset_path;
  std::string metric;
  std::map<std::pair<std::string, double>, std::vector<double>> groups;

  for (const std::string& path : results_paths) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot open " + path);
    nlohmann::json doc;
    try {
      in >> doc;
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError("cannot parse " + path + ": " + e.what());
    }
    const nlohmann::json& payload = doc.at("payload");
    const std::string ds = payload.at("dataset").at("path").get<std::string>();
    if (dataset_path.empty()) {
      dataset_path = ds;
      metric = payload.at("test").at("metric").get<std::string>();
    } else if (ds != dataset_path) {
      throw MixedDatasets("compare: " + path + " uses '" + ds + "', expected '" + dataset_path +
                          "'");
    }
    const nlohmann::json& best = payload.at("test").at("best");
    if (!best.is_number()) {
      throw ConfigError("compare: " + path + " has no best-round test metric");
    }
    const std::string strategy =
        payload.at("config").at("strategy").at("name").get<std::string>();
    const double alpha = payload.at("config").at("partition").at("alpha").get<double>();
    groups[{strategy, alpha}].push_back(best.get<double>());
  }

  nlohmann::json out{{"dataset", dataset_path}, {"metric", metric}};
  nlohmann::json rows = nlohmann::json::array();
  for (auto& [key, values] : groups) {
    std::sort(values.begin(), values.end());
    const double q25 = quantile_type7(values, 0.25);
    const double q75 = quantile_type7(values, 0.75);
    rows.push_back({{"strategy", key.first},
                    {"alpha", key.second},
                    {"n", values.size()},
                    {"median", quantile_type7(values, 0.5)},
                    {"q25", q25},
                    {"q75", q75},
                    {"iqr", q75 - q25},
                    {"values", values}});
  }
  out["groups"] = rows;
  return out;
}

}  // namespace fedchem
