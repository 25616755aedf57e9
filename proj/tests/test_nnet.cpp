#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <vector>

#include "fedchem/molgraph.hpp"
#include "fedchem/nnet.hpp"
#include "fedchem/rng.hpp"

using namespace fedchem;

namespace {

// Every width 1: each tensor is a scalar, so the whole forward pass can be
// followed by hand.
MpnnConfig scalar_config() {
  MpnnConfig cfg;
  cfg.mp_layers = 1;
  cfg.edge_hidden = 1;
  cfg.node_dim = 1;
  cfg.head_hidden = 1;
  cfg.task_count = 1;
  cfg.node_feat_dim = 1;
  cfg.edge_feat_dim = 1;
  cfg.readout = Readout::Sum;
  cfg.task_type = TaskType::Regression;
  return cfg;
}

ParamVector scalar_params(const MpnnConfig& cfg) {
  ParamVector p = zeros_like_layout(build_layout(cfg));
  p.tensor("mp0.msg.w1")[0] = 0.3;
  p.tensor("mp0.msg.w1")[1] = 0.2;
  p.tensor("mp0.msg.b1")[0] = 0.1;
  p.tensor("mp0.msg.w2")[0] = 0.5;
  p.tensor("mp0.msg.b2")[0] = -0.05;
  p.tensor("mp0.upd.w1")[0] = 0.4;
  p.tensor("mp0.upd.w1")[1] = 0.6;
  p.tensor("mp0.upd.b1")[0] = 0.05;
  p.tensor("mp0.upd.w2")[0] = 0.7;
  p.tensor("mp0.upd.b2")[0] = 0.02;
  p.tensor("head.w1")[0] = 1.1;
  p.tensor("head.b1")[0] = 0.03;
  p.tensor("head.w2")[0] = -0.9;
  p.tensor("head.b2")[0] = 0.15;
  return p;
}

// Two nodes joined by one bond (two directed edge rows).
GraphFeatures scalar_graph() {
  GraphFeatures g;
  g.nodes = Matrix(2, 1);
  g.nodes.at(0, 0) = 0.5;
  g.nodes.at(1, 0) = -1.0;
  g.edge_feats = Matrix(2, 1);
  g.edge_feats.at(0, 0) = 0.25;
  g.edge_feats.at(1, 0) = 0.25;
  g.edge_endpoints = {{0, 1}, {1, 0}};
  return g;
}

MpnnConfig small_config(TaskType task, Readout readout) {
  MpnnConfig cfg;
  cfg.mp_layers = 2;
  cfg.edge_hidden = 3;
  cfg.node_dim = 4;
  cfg.head_hidden = 3;
  cfg.task_count = 2;
  cfg.node_feat_dim = 5;
  cfg.edge_feat_dim = 3;
  cfg.readout = readout;
  cfg.task_type = task;
  return cfg;
}

GraphFeatures random_graph(Rng& rng, std::size_t n, const MpnnConfig& cfg,
                           const std::vector<std::pair<std::size_t, std::size_t>>& bonds) {
  GraphFeatures g;
  g.nodes = Matrix(n, static_cast<std::size_t>(cfg.node_feat_dim));
  for (double& v : g.nodes.data) v = rng.uniform(-1.0, 1.0);
  g.edge_feats = Matrix(2 * bonds.size(), static_cast<std::size_t>(cfg.edge_feat_dim));
  for (const auto& [a, b] : bonds) {
    g.edge_endpoints.emplace_back(a, b);
    g.edge_endpoints.emplace_back(b, a);
  }
  for (std::size_t e = 0; e < g.edge_endpoints.size(); e += 2) {
    for (std::size_t k = 0; k < g.edge_feats.cols; ++k) {
      const double v = rng.uniform(-1.0, 1.0);
      g.edge_feats.at(e, k) = v;
      g.edge_feats.at(e + 1, k) = v;  // both directions describe the same bond
    }
  }
  return g;
}

double loss_of(const ParamVector& params, const MpnnConfig& cfg, const GraphFeatures& g,
               const std::vector<double>& target, const std::vector<std::uint8_t>& mask) {
  const ForwardTrace trace = forward(params, cfg, g);
  return sample_loss(trace.pred, target, mask, cfg.task_type);
}

}  // namespace

TEST_CASE("parameter layout: names, shapes, contiguity") {
  const MpnnConfig cfg = small_config(TaskType::Regression, Readout::Sum);
  const auto layout = build_layout(cfg);

  std::size_t expect_offset = 0;
  for (const TensorDesc& t : layout->tensors) {
    CHECK(t.offset == expect_offset);
    std::size_t size = 1;
    for (std::size_t s : t.shape) size *= s;
    CHECK(t.size == size);
    expect_offset += size;
  }
  CHECK(layout->total == expect_offset);

  CHECK(layout->find("mp0.msg.w1").shape == std::vector<std::size_t>{3, 8});   // eh x (feat+edge)
  CHECK(layout->find("mp1.msg.w1").shape == std::vector<std::size_t>{3, 7});   // eh x (node+edge)
  CHECK(layout->find("mp0.upd.w1").shape == std::vector<std::size_t>{4, 9});   // nd x (feat+node)
  CHECK(layout->find("head.w2").shape == std::vector<std::size_t>{2, 3});      // tasks x hidden
  CHECK_THROWS_AS(layout->find("missing.tensor"), LayoutMismatch);

  CHECK(build_layout(scalar_config())->total == 14);
}

TEST_CASE("init_params draws within +-1/sqrt(fan_in), biases included") {
  const MpnnConfig cfg = small_config(TaskType::Regression, Readout::Sum);
  const ParamVector p = init_params(cfg, 11);
  for (const TensorDesc& t : p.layout->tensors) {
    std::size_t fan_in;
    if (t.shape.size() == 2) {
      fan_in = t.shape[1];
    } else {
      std::string wname = t.name;
      wname[wname.size() - 2] = 'w';
      fan_in = p.layout->find(wname).shape[1];
    }
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    double lo = 1e9, hi = -1e9;
    for (std::size_t i = 0; i < t.size; ++i) {
      const double v = p.values[t.offset + i];
      CHECK(v >= -bound);
      CHECK(v < bound);
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
    if (t.size > 4) CHECK(hi > lo);  // not collapsed to a constant
  }
  const ParamVector q = init_params(cfg, 11);
  CHECK(p.values == q.values);
  const ParamVector r = init_params(cfg, 12);
  CHECK(p.values != r.values);
}

TEST_CASE("hand-traced forward pass, sum readout") {
  const MpnnConfig cfg = scalar_config();
  const ParamVector p = scalar_params(cfg);
  const ForwardTrace trace = forward(p, cfg, scalar_graph());

  // Pre-activation values involve only +,* (bias first, then columns in
  // order): exact equality.
  CHECK(trace.layers[0].z1.at(0, 0) == 0.29999999999999999);   // (0.1 + 0.3*0.5) + 0.2*0.25
  CHECK(trace.layers[0].z1.at(1, 0) == -0.14999999999999997);  // (0.1 + 0.3*-1) + 0.2*0.25
  CHECK(trace.layers[0].msum.at(0, 0) == -0.050000000000000003);  // relu kills edge 1's message
  CHECK(trace.layers[0].msum.at(1, 0) == 0.099999999999999992);
  CHECK(trace.layers[0].z2.at(0, 0) == 0.22);
  CHECK(trace.layers[0].z2.at(1, 0) == -0.29000000000000004);

  // tanh enters here; allow for last-ulp libm differences.
  CHECK(trace.layers[0].v_out.at(0, 0) == doctest::Approx(0.17156264304512017).epsilon(1e-14));
  CHECK(trace.layers[0].v_out.at(1, 0) == doctest::Approx(-0.1774943688687439).epsilon(1e-14));
  CHECK(trace.readout[0] == doctest::Approx(-0.0059317258236237236).epsilon(1e-13));
  CHECK(trace.pred.values[0] == doctest::Approx(0.12887240856538748).epsilon(1e-13));
  CHECK(trace.pred.probs.empty());

  const std::vector<double> target{0.3};
  const std::vector<std::uint8_t> mask{1};
  CHECK(sample_loss(trace.pred, target, mask, TaskType::Regression) ==
        doctest::Approx(0.029284652550211666).epsilon(1e-12));
}

TEST_CASE("hand-traced forward pass, mean readout and classification head") {
  MpnnConfig cfg = scalar_config();
  cfg.readout = Readout::Mean;
  const ForwardTrace mean_trace = forward(scalar_params(cfg), cfg, scalar_graph());
  CHECK(mean_trace.pred.values[0] == doctest::Approx(0.12593620428269373).epsilon(1e-13));

  MpnnConfig cls = scalar_config();
  cls.task_type = TaskType::BinaryMultilabel;
  const ForwardTrace cls_trace = forward(scalar_params(cls), cls, scalar_graph());
  CHECK(cls_trace.pred.values[0] == doctest::Approx(0.12887240856538745).epsilon(1e-13));
  CHECK(cls_trace.pred.probs[0] == doctest::Approx(0.53217358595715458).epsilon(1e-13));

  const std::vector<double> target{1.0};
  const std::vector<std::uint8_t> mask{1};
  CHECK(sample_loss(cls_trace.pred, target, mask, TaskType::BinaryMultilabel) ==
        doctest::Approx(0.63078555346815235).epsilon(1e-12));
}

TEST_CASE("forward rejects malformed inputs") {
  const MpnnConfig cfg = scalar_config();
  const ParamVector p = scalar_params(cfg);

  GraphFeatures empty;
  CHECK_THROWS_AS(forward(p, cfg, empty), ShapeMismatch);

  GraphFeatures wide = scalar_graph();
  wide.nodes = Matrix(2, 3);
  CHECK_THROWS_AS(forward(p, cfg, wide), ShapeMismatch);

  GraphFeatures bad_edges = scalar_graph();
  bad_edges.edge_feats = Matrix(1, 1);  // row count no longer matches endpoints
  CHECK_THROWS_AS(forward(p, cfg, bad_edges), ShapeMismatch);
}

TEST_CASE("backward matches central differences for parameters and inputs") {
  const std::vector<std::pair<std::size_t, std::size_t>> bonds{{0, 1}, {1, 2}, {2, 3}, {0, 3}};
  const std::vector<double> target{0.4, -0.7};
  const std::vector<std::uint8_t> mask{1, 1};
  const std::vector<std::uint8_t> holey_mask{1, 0};

  int checked = 0;
  for (const TaskType task : {TaskType::Regression, TaskType::BinaryMultilabel}) {
    for (const Readout readout : {Readout::Sum, Readout::Mean}) {
      const MpnnConfig cfg = small_config(task, readout);
      Rng rng(314159 + checked);
      const GraphFeatures g = random_graph(rng, 4, cfg, bonds);
      ParamVector params = init_params(cfg, 2024 + static_cast<std::uint64_t>(checked));
      const auto& the_mask = (checked % 2 == 0) ? mask : holey_mask;
      const std::vector<double> the_target =
          task == TaskType::Regression ? target : std::vector<double>{1.0, 0.0};

      const ForwardTrace trace = forward(params, cfg, g);
      std::vector<double> d_out(2, 0.0);
      sample_loss_output_grad(trace.pred, the_target, the_mask, task, 1.0, d_out);
      ParamVector grad = zeros_like_layout(params.layout);
      Matrix input_grad(g.nodes.rows, g.nodes.cols);
      backward(params, cfg, g, trace, d_out, grad, &input_grad);

      const double h = 1e-5;
      for (std::size_t i = 0; i < params.values.size(); ++i) {
        const double keep = params.values[i];
        params.values[i] = keep + h;
        const double up = loss_of(params, cfg, g, the_target, the_mask);
        params.values[i] = keep - h;
        const double dn = loss_of(params, cfg, g, the_target, the_mask);
        params.values[i] = keep;
        const double fd = (up - dn) / (2.0 * h);
        const double err = std::abs(fd - grad.values[i]);
        CHECK(err <= 1e-7 + 1e-4 * std::max(std::abs(fd), std::abs(grad.values[i])));
      }

      GraphFeatures pg = g;
      for (std::size_t i = 0; i < pg.nodes.data.size(); ++i) {
        const double keep = pg.nodes.data[i];
        pg.nodes.data[i] = keep + h;
        const double up = loss_of(params, cfg, pg, the_target, the_mask);
        pg.nodes.data[i] = keep - h;
        const double dn = loss_of(params, cfg, pg, the_target, the_mask);
        pg.nodes.data[i] = keep;
        const double fd = (up - dn) / (2.0 * h);
        const double err = std::abs(fd - input_grad.data[i]);
        CHECK(err <= 1e-7 + 1e-4 * std::max(std::abs(fd), std::abs(input_grad.data[i])));
      }
      ++checked;
    }
  }
  CHECK(checked == 4);
}

TEST_CASE("prediction is invariant under node relabeling") {
  const MpnnConfig cfg = small_config(TaskType::Regression, Readout::Sum);
  Rng rng(99);
  const std::vector<std::pair<std::size_t, std::size_t>> bonds{{0, 1}, {1, 2}, {2, 3}, {1, 3}};
  const GraphFeatures g = random_graph(rng, 4, cfg, bonds);
  const ParamVector params = init_params(cfg, 7);
  const ForwardTrace base = forward(params, cfg, g);

  const std::vector<std::size_t> perm{2, 0, 3, 1};  // new index of old node i
  GraphFeatures pg;
  pg.nodes = Matrix(4, g.nodes.cols);
  for (std::size_t i = 0; i < 4; ++i) {
    for (std::size_t k = 0; k < g.nodes.cols; ++k) pg.nodes.at(perm[i], k) = g.nodes.at(i, k);
  }
  // Reverse the edge row order too: messages must not care.
  for (std::size_t e = g.edge_endpoints.size(); e-- > 0;) {
    pg.edge_endpoints.emplace_back(perm[g.edge_endpoints[e].first],
                                   perm[g.edge_endpoints[e].second]);
  }
  pg.edge_feats = Matrix(g.edge_feats.rows, g.edge_feats.cols);
  for (std::size_t e = 0; e < g.edge_feats.rows; ++e) {
    const std::size_t src = g.edge_feats.rows - 1 - e;
    for (std::size_t k = 0; k < g.edge_feats.cols; ++k) {
      pg.edge_feats.at(e, k) = g.edge_feats.at(src, k);
    }
  }

  const ForwardTrace moved = forward(params, cfg, pg);
  for (std::size_t t = 0; t < base.pred.values.size(); ++t) {
    CHECK(moved.pred.values[t] == doctest::Approx(base.pred.values[t]).epsilon(1e-12));
  }
}

TEST_CASE("sample_loss fixtures and missing-label handling") {
  Prediction pred;
  pred.values = {0.5, -0.2};
  CHECK(sample_loss(pred, {{0.0, 1.0}}, {{1, 1}}, TaskType::Regression) ==
        doctest::Approx(0.845).epsilon(1e-15));
  CHECK(sample_loss(pred, {{0.0, 1.0}}, {{1, 0}}, TaskType::Regression) == 0.25);
  CHECK_THROWS_AS(sample_loss(pred, {{0.0, 1.0}}, {{0, 0}}, TaskType::Regression),
                  AllLabelsMissing);
  CHECK_THROWS_AS(sample_loss(pred, {{0.0}}, {{1}}, TaskType::Regression), ShapeMismatch);

  pred.probs = {0.8, 0.3};
  const double expect = (-std::log(0.8) - std::log(0.7)) / 2.0;
  CHECK(sample_loss(pred, {{1.0, 0.0}}, {{1, 1}}, TaskType::BinaryMultilabel) ==
        doctest::Approx(expect).epsilon(1e-15));

  std::vector<double> d_out(2, 0.0);
  sample_loss_output_grad(pred, {{0.0, 1.0}}, {{1, 0}}, TaskType::Regression, 3.0, d_out);
  CHECK(d_out[0] == doctest::Approx(3.0 * 2.0 * 0.5).epsilon(1e-15));
  CHECK(d_out[1] == 0.0);
  sample_loss_output_grad(pred, {{0.0, 1.0}}, {{1, 0}}, TaskType::Regression, 3.0, d_out);
  CHECK(d_out[0] == doctest::Approx(6.0).epsilon(1e-15));  // accumulates
  CHECK_THROWS_AS(
      sample_loss_output_grad(pred, {{0.0, 1.0}}, {{0, 0}}, TaskType::Regression, 1.0, d_out),
      AllLabelsMissing);
}

TEST_CASE("predict_matrix gathers per-index raw outputs") {
  const MpnnConfig cfg = small_config(TaskType::Regression, Readout::Mean);
  Rng rng(4242);
  std::vector<GraphFeatures> feats;
  feats.push_back(random_graph(rng, 3, cfg, {{0, 1}, {1, 2}}));
  feats.push_back(random_graph(rng, 4, cfg, {{0, 1}, {1, 2}, {2, 3}}));
  feats.push_back(random_graph(rng, 2, cfg, {{0, 1}}));
  const ParamVector params = init_params(cfg, 8);

  const std::vector<std::size_t> idx{2, 0};
  const Matrix out = predict_matrix(params, cfg, feats, idx);
  REQUIRE(out.rows == 2);
  REQUIRE(out.cols == 2);
  for (std::size_t r = 0; r < 2; ++r) {
    const ForwardTrace t = forward(params, cfg, feats[idx[r]]);
    CHECK(out.at(r, 0) == t.pred.values[0]);
    CHECK(out.at(r, 1) == t.pred.values[1]);
  }
}

TEST_CASE("adam_step matches the hand-run update") {
  const MpnnConfig cfg = scalar_config();
  AdamConfig adam;
  adam.lr = 0.1;
  adam.beta1 = 0.9;
  adam.beta2 = 0.999;
  adam.eps = 1e-8;
  adam.weight_decay = 0.0;

  ParamVector theta = zeros_like_layout(build_layout(cfg));
  ParamVector grad = zeros_like_layout(theta.layout);
  for (double& v : theta.values) v = 1.0;
  for (double& v : grad.values) v = 0.5;

  AdamState state;
  adam_step(theta, grad, state, adam);
  CHECK(state.step == 1);
  for (double v : theta.values) CHECK(v == doctest::Approx(0.90000000199999997).epsilon(1e-15));
  adam_step(theta, grad, state, adam);
  CHECK(state.step == 2);
  for (double v : theta.values) CHECK(v == doctest::Approx(0.8000000040000006).epsilon(1e-15));

  // Coupled weight decay shifts the effective gradient.
  AdamConfig decayed = adam;
  decayed.weight_decay = 0.02;
  ParamVector theta2 = zeros_like_layout(theta.layout);
  for (double& v : theta2.values) v = 1.0;
  AdamState state2;
  adam_step(theta2, grad, state2, decayed);
  for (double v : theta2.values) CHECK(v == doctest::Approx(0.90000000192307694).epsilon(1e-15));
  adam_step(theta2, grad, state2, decayed);
  for (double v : theta2.values) CHECK(v == doctest::Approx(0.80001023403681537).epsilon(1e-15));
}

TEST_CASE("adam_step rejects mismatched layouts and reused states") {
  const MpnnConfig a = scalar_config();
  MpnnConfig b = scalar_config();
  b.node_dim = 2;

  ParamVector pa = init_params(a, 1);
  ParamVector ga = zeros_like_layout(pa.layout);
  ParamVector gb = init_params(b, 1);
  AdamState state;
  CHECK_THROWS_AS(adam_step(pa, gb, state, AdamConfig{}), LayoutMismatch);

  adam_step(pa, ga, state, AdamConfig{});  // size the state for layout a
  ParamVector pb = init_params(b, 2);
  ParamVector gb2 = zeros_like_layout(pb.layout);
  CHECK_THROWS_AS(adam_step(pb, gb2, state, AdamConfig{}), LayoutMismatch);
}

TEST_CASE("ensure_all_finite flags NaN and infinity") {
  CHECK_NOTHROW(ensure_all_finite(std::vector<double>{0.0, -1e308, 1e-300}, "ok"));
  CHECK_THROWS_AS(ensure_all_finite(std::vector<double>{0.0, std::nan("")}, "nan"), NumericError);
  CHECK_THROWS_AS(ensure_all_finite(std::vector<double>{1.0 / 0.0}, "inf"), NumericError);
}

TEST_CASE("checkpoint round-trip is bit exact; corruption is detected") {
  namespace fs = std::filesystem;
  const fs::path dir = fs::temp_directory_path() / "fedchem_ckpt_test";
  fs::create_directories(dir);
  const std::string path = (dir / "model.bin").string();

  const MpnnConfig cfg = scalar_config();
  ParamVector params = zeros_like_layout(build_layout(cfg));
  Rng rng(31337);
  for (double& v : params.values) v = rng.normal();
  params.values[0] = 0.1;          // classic non-representable decimal
  params.values[1] = -1.0 / 3.0;
  params.values[2] = 1e-300;

  nlohmann::json meta;
  meta["round"] = 3;
  save_checkpoint(path, params, cfg, meta);

  const LoadedCheckpoint loaded = load_checkpoint(path);
  CHECK(loaded.params.values == params.values);  // bitwise
  CHECK(loaded.config == cfg);
  CHECK(loaded.meta.at("round") == 3);
  CHECK(loaded.params.layout->total == params.layout->total);

  // Corrupt the magic.
  {
    std::fstream f(path, std::ios::binary | std::ios::in | std::ios::out);
    f.seekp(0);
    f.put('X');
  }
  CHECK_THROWS_AS(load_checkpoint(path), CheckpointFormatError);

  // Truncate the payload.
  save_checkpoint(path, params, cfg, meta);
  fs::resize_file(path, 12 + 5 * sizeof(double));
  CHECK_THROWS_AS(load_checkpoint(path), CheckpointFormatError);

  // Trailing garbage.
  save_checkpoint(path, params, cfg, meta);
  {
    std::ofstream f(path, std::ios::binary | std::ios::app);
    f.put('\0');
  }
  CHECK_THROWS_AS(load_checkpoint(path), CheckpointFormatError);

  // Missing sidecar.
  save_checkpoint(path, params, cfg, meta);
  fs::remove(path + ".json");
  CHECK_THROWS_AS(load_checkpoint(path), CheckpointFormatError);

  fs::remove_all(dir);
}

TEST_CASE("model config serializes to JSON and back") {
  MpnnConfig cfg = small_config(TaskType::BinaryMultilabel, Readout::Mean);
  nlohmann::json j = cfg;
  const MpnnConfig back = j.get<MpnnConfig>();
  CHECK(back == cfg);

  nlohmann::json bad = j;
  bad["readout"] = "max";
  CHECK_THROWS_AS(bad.get<MpnnConfig>(), std::invalid_argument);
  nlohmann::json bad2 = j;
  bad2["task_type"] = "ranking";
  CHECK_THROWS_AS(bad2.get<MpnnConfig>(), std::invalid_argument);
}
