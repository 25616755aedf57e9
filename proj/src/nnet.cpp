#include "fedchem/nnet.hpp"

#include <cmath>
#include <cstring>
#include <fstream>

#include "fedchem/rng.hpp"

namespace fedchem {

namespace {

constexpr char kMagic[8] = {'F', 'C', 'H', 'E', 'M', 'P', 'R', 'M'};
constexpr double kProbClamp = 1e-7;

int layer_input_dim(const MpnnConfig& cfg, int layer) {
  return layer == 0 ? cfg.node_feat_dim : cfg.node_dim;
}

// y += W x + b, with W row-major (out_dim x in_dim).
void affine(std::span<const double> w, std::span<const double> b, const double* x,
            std::size_t in_dim, double* y, std::size_t out_dim) {
  for (std::size_t r = 0; r < out_dim; ++r) {
    double acc = b[r];
    const double* wr = w.data() + r * in_dim;
    for (std::size_t c = 0; c < in_dim; ++c) acc += wr[c] * x[c];
    y[r] = acc;
  }
}

// Gradients of an affine layer: accumulates dW += dy x^T, db += dy, and
// writes dx = W^T dy.
void affine_backward(std::span<const double> w, std::span<double> dw, std::span<double> db,
                     const double* x, std::size_t in_dim, const double* dy, std::size_t out_dim,
                     double* dx) {
  for (std::size_t c = 0; c < in_dim; ++c) dx[c] = 0.0;
  for (std::size_t r = 0; r < out_dim; ++r) {
    const double g = dy[r];
    db[r] += g;
    double* dwr = dw.data() + r * in_dim;
    const double* wr = w.data() + r * in_dim;
    for (std::size_t c = 0; c < in_dim; ++c) {
      dwr[c] += g * x[c];
      dx[c] += wr[c] * g;
    }
  }
}

double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

}  // namespace

void to_json(nlohmann::json& j, const MpnnConfig& cfg) {
  j = nlohmann::json{{"mp_layers", cfg.mp_layers},
                     {"edge_hidden", cfg.edge_hidden},
                     {"node_dim", cfg.node_dim},
                     {"head_hidden", cfg.head_hidden},
                     {"readout", cfg.readout == Readout::Sum ? "sum" : "mean"},
                     {"task_count", cfg.task_count},
                     {"task_type", cfg.task_type == TaskType::Regression ? "regression"
                                                                         : "binary_multilabel"},
                     {"node_feat_dim", cfg.node_feat_dim},
                     {"edge_feat_dim", cfg.edge_feat_dim}};
}

void from_json(const nlohmann::json& j, MpnnConfig& cfg) {
  cfg.mp_layers = j.value("mp_layers", cfg.mp_layers);
  cfg.edge_hidden = j.value("edge_hidden", cfg.edge_hidden);
  cfg.node_dim = j.value("node_dim", cfg.node_dim);
  cfg.head_hidden = j.value("head_hidden", cfg.head_hidden);
  const std::string readout = j.value("readout", std::string("sum"));
  if (readout == "sum") {
    cfg.readout = Readout::Sum;
  } else if (readout == "mean") {
    cfg.readout = Readout::Mean;
  } else {
    throw std::invalid_argument("unknown readout '" + readout + "'");
  }
  cfg.task_count = j.value("task_count", cfg.task_count);
  const std::string task = j.value("task_type", std::string("regression"));
  if (task == "regression") {
    cfg.task_type = TaskType::Regression;
  } else if (task == "binary_multilabel") {
    cfg.task_type = TaskType::BinaryMultilabel;
  } else {
    throw std::invalid_argument("unknown task_type '" + task + "'");
  }
  cfg.node_feat_dim = j.value("node_feat_dim", cfg.node_feat_dim);
  cfg.edge_feat_dim = j.value("edge_feat_dim", cfg.edge_feat_dim);
}

const TensorDesc& ParamLayout::find(const std::string& name) const {
  for (const TensorDesc& t : tensors) {
    if (t.name == name) return t;
  }
  throw LayoutMismatch("no tensor named '" + name + "' in layout");
}

std::span<double> ParamVector::tensor(const std::string& name) {
  const TensorDesc& d = layout->find(name);
  return {values.data() + d.offset, d.size};
}

std::span<const double> ParamVector::tensor(const std::string& name) const {
  const TensorDesc& d = layout->find(name);
  return {values.data() + d.offset, d.size};
}

bool ParamVector::same_layout(const ParamVector& other) const {
  if (layout == other.layout) return true;
  return layout && other.layout && *layout == *other.layout;
}

std::shared_ptr<const ParamLayout> build_layout(const MpnnConfig& cfg) {
  auto layout = std::make_shared<ParamLayout>();
  std::size_t offset = 0;
  const auto add = [&](const std::string& name, std::vector<std::size_t> shape) {
    std::size_t size = 1;
    for (std::size_t s : shape) size *= s;
    layout->tensors.push_back({name, std::move(shape), offset, size});
    offset += size;
  };
  const auto eh = static_cast<std::size_t>(cfg.edge_hidden);
  const auto nd = static_cast<std::size_t>(cfg.node_dim);
  const auto de = static_cast<std::size_t>(cfg.edge_feat_dim);
  for (int t = 0; t < cfg.mp_layers; ++t) {
    const auto in = static_cast<std::size_t>(layer_input_dim(cfg, t));
    const std::string p = "mp" + std::to_string(t);
    add(p + ".msg.w1", {eh, in + de});
    add(p + ".msg.b1", {eh});
    add(p + ".msg.w2", {nd, eh});
    add(p + ".msg.b2", {nd});
    add(p + ".upd.w1", {nd, in + nd});
    add(p + ".upd.b1", {nd});
    add(p + ".upd.w2", {nd, nd});
    add(p + ".upd.b2", {nd});
  }
  const auto hh = static_cast<std::size_t>(cfg.head_hidden);
  const auto tc = static_cast<std::size_t>(cfg.task_count);
  add("head.w1", {hh, nd});
  add("head.b1", {hh});
  add("head.w2", {tc, hh});
  add("head.b2", {tc});
  layout->total = offset;
  return layout;
}

ParamVector zeros_like_layout(std::shared_ptr<const ParamLayout> layout) {
  ParamVector out;
  out.values.assign(layout->total, 0.0);
  out.layout = std::move(layout);
  return out;
}

ParamVector init_params(const MpnnConfig& cfg, std::uint64_t seed) {
  ParamVector out = zeros_like_layout(build_layout(cfg));
  Rng rng(seed);
  for (const TensorDesc& t : out.layout->tensors) {
    // fan_in of a weight matrix is its input width; biases inherit the width
    // of the linear they belong to (recorded as the matrix declared just
    // before them, which shares the name prefix).
    std::size_t fan_in;
    if (t.shape.size() == 2) {
      fan_in = t.shape[1];
    } else {
      // Bias: find the matching weight tensor (same prefix, 'b' -> 'w').
      std::string wname = t.name;
      wname[wname.size() - 2] = 'w';
      fan_in = out.layout->find(wname).shape[1];
    }
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    for (std::size_t i = 0; i < t.size; ++i) {
      out.values[t.offset + i] = rng.uniform(-bound, bound);
    }
  }
  return out;
}

ForwardTrace forward(const ParamVector& params, const MpnnConfig& cfg,
                     const GraphFeatures& feats) {
  if (feats.nodes.cols != static_cast<std::size_t>(cfg.node_feat_dim)) {
    throw ShapeMismatch("node feature width does not match model config");
  }
  if (feats.edge_feats.rows != feats.edge_endpoints.size() ||
      (feats.edge_feats.rows > 0 &&
       feats.edge_feats.cols != static_cast<std::size_t>(cfg.edge_feat_dim))) {
    throw ShapeMismatch("edge feature shape does not match model config");
  }
  const std::size_t n = feats.nodes.rows;
  if (n == 0) throw ShapeMismatch("cannot run the model on an empty graph");
  const std::size_t ne = feats.edge_endpoints.size();
  const auto eh = static_cast<std::size_t>(cfg.edge_hidden);
  const auto nd = static_cast<std::size_t>(cfg.node_dim);
  const auto de = static_cast<std::size_t>(cfg.edge_feat_dim);

  ForwardTrace trace;
  trace.layers.resize(cfg.mp_layers);
  std::vector<double> buf;

  const Matrix* v_prev = &feats.nodes;
  for (int t = 0; t < cfg.mp_layers; ++t) {
    const auto in = static_cast<std::size_t>(layer_input_dim(cfg, t));
    const std::string p = "mp" + std::to_string(t);
    const auto w1 = params.tensor(p + ".msg.w1");
    const auto b1 = params.tensor(p + ".msg.b1");
    const auto w2 = params.tensor(p + ".msg.w2");
    const auto b2 = params.tensor(p + ".msg.b2");
    const auto u1 = params.tensor(p + ".upd.w1");
    const auto c1 = params.tensor(p + ".upd.b1");
    const auto u2 = params.tensor(p + ".upd.w2");
    const auto c2 = params.tensor(p + ".upd.b2");

    ForwardTrace::Layer& L = trace.layers[t];
    L.v_in = *v_prev;
    L.z1 = Matrix(ne, eh);
    L.a1 = Matrix(ne, eh);
    L.msum = Matrix(n, nd);
    L.z2 = Matrix(n, nd);
    L.a2 = Matrix(n, nd);
    L.v_out = Matrix(n, nd);

    buf.resize(in + de);
    std::vector<double> msg(nd);
    for (std::size_t e = 0; e < ne; ++e) {
      const auto [src, dst] = feats.edge_endpoints[e];
      std::memcpy(buf.data(), L.v_in.row(src), in * sizeof(double));
      std::memcpy(buf.data() + in, feats.edge_feats.row(e), de * sizeof(double));
      affine(w1, b1, buf.data(), in + de, L.z1.row(e), eh);
      for (std::size_t k = 0; k < eh; ++k) L.a1.at(e, k) = L.z1.at(e, k) > 0.0 ? L.z1.at(e, k) : 0.0;
      affine(w2, b2, L.a1.row(e), eh, msg.data(), nd);
      double* mrow = L.msum.row(dst);
      for (std::size_t k = 0; k < nd; ++k) mrow[k] += msg[k];
    }

    buf.resize(in + nd);
    for (std::size_t i = 0; i < n; ++i) {
      std::memcpy(buf.data(), L.v_in.row(i), in * sizeof(double));
      std::memcpy(buf.data() + in, L.msum.row(i), nd * sizeof(double));
      affine(u1, c1, buf.data(), in + nd, L.z2.row(i), nd);
      for (std::size_t k = 0; k < nd; ++k) L.a2.at(i, k) = std::tanh(L.z2.at(i, k));
      affine(u2, c2, L.a2.row(i), nd, L.v_out.row(i), nd);
    }
    v_prev = &L.v_out;
  }

  trace.readout.assign(nd, 0.0);
  const Matrix& v_final = cfg.mp_layers > 0 ? trace.layers.back().v_out : feats.nodes;
  for (std::size_t i = 0; i < n; ++i) {
    const double* row = v_final.row(i);
    for (std::size_t k = 0; k < nd; ++k) trace.readout[k] += row[k];
  }
  if (cfg.readout == Readout::Mean) {
    for (double& v : trace.readout) v /= static_cast<double>(n);
  }

  const auto hh = static_cast<std::size_t>(cfg.head_hidden);
  const auto tc = static_cast<std::size_t>(cfg.task_count);
  trace.z3.assign(hh, 0.0);
  trace.a3.assign(hh, 0.0);
  affine(params.tensor("head.w1"), params.tensor("head.b1"), trace.readout.data(), nd,
         trace.z3.data(), hh);
  for (std::size_t k = 0; k < hh; ++k) trace.a3[k] = trace.z3[k] > 0.0 ? trace.z3[k] : 0.0;
  trace.pred.values.assign(tc, 0.0);
  affine(params.tensor("head.w2"), params.tensor("head.b2"), trace.a3.data(), hh,
         trace.pred.values.data(), tc);
  if (cfg.task_type == TaskType::BinaryMultilabel) {
    trace.pred.probs.resize(tc);
    for (std::size_t k = 0; k < tc; ++k) {
      trace.pred.probs[k] =
          std::min(1.0 - kProbClamp, std::max(kProbClamp, sigmoid(trace.pred.values[k])));
    }
  }
  ensure_all_finite(trace.pred.values, "model outputs");
  return trace;
}

void backward(const ParamVector& params, const MpnnConfig& cfg, const GraphFeatures& feats,
              const ForwardTrace& trace, std::span<const double> d_out, ParamVector& grad_accum,
              Matrix* input_grad) {
  if (!params.same_layout(grad_accum)) {
    throw LayoutMismatch("gradient accumulator layout differs from parameters");
  }
  const std::size_t n = feats.nodes.rows;
  const std::size_t ne = feats.edge_endpoints.size();
  const auto eh = static_cast<std::size_t>(cfg.edge_hidden);
  const auto nd = static_cast<std::size_t>(cfg.node_dim);
  const auto de = static_cast<std::size_t>(cfg.edge_feat_dim);
  const auto hh = static_cast<std::size_t>(cfg.head_hidden);
  const auto tc = static_cast<std::size_t>(cfg.task_count);
  if (d_out.size() != tc) throw ShapeMismatch("output gradient width differs from task count");

  // Head.
  std::vector<double> da3(hh);
  affine_backward(params.tensor("head.w2"), grad_accum.tensor("head.w2"),
                  grad_accum.tensor("head.b2"), trace.a3.data(), hh, d_out.data(), tc, da3.data());
  std::vector<double> dz3(hh);
  for (std::size_t k = 0; k < hh; ++k) dz3[k] = trace.z3[k] > 0.0 ? da3[k] : 0.0;
  std::vector<double> dh(nd);
  affine_backward(params.tensor("head.w1"), grad_accum.tensor("head.w1"),
                  grad_accum.tensor("head.b1"), trace.readout.data(), nd, dz3.data(), hh,
                  dh.data());

  // Readout.
  Matrix dv(n, nd);
  const double scale = cfg.readout == Readout::Mean ? 1.0 / static_cast<double>(n) : 1.0;
  for (std::size_t i = 0; i < n; ++i) {
    double* row = dv.row(i);
    for (std::size_t k = 0; k < nd; ++k) row[k] = dh[k] * scale;
  }

  // Message-passing layers in reverse.
  std::vector<double> buf, dbuf;
  for (int t = cfg.mp_layers - 1; t >= 0; --t) {
    const auto in = static_cast<std::size_t>(layer_input_dim(cfg, t));
    const std::string p = "mp" + std::to_string(t);
    const auto w1 = params.tensor(p + ".msg.w1");
    const auto w2 = params.tensor(p + ".msg.w2");
    const auto u1 = params.tensor(p + ".upd.w1");
    const auto u2 = params.tensor(p + ".upd.w2");
    auto gw1 = grad_accum.tensor(p + ".msg.w1");
    auto gb1 = grad_accum.tensor(p + ".msg.b1");
    auto gw2 = grad_accum.tensor(p + ".msg.w2");
    auto gb2 = grad_accum.tensor(p + ".msg.b2");
    auto gu1 = grad_accum.tensor(p + ".upd.w1");
    auto gc1 = grad_accum.tensor(p + ".upd.b1");
    auto gu2 = grad_accum.tensor(p + ".upd.w2");
    auto gc2 = grad_accum.tensor(p + ".upd.b2");
    const ForwardTrace::Layer& L = trace.layers[t];

    Matrix dv_in(n, in);
    Matrix dm(n, nd);
    std::vector<double> da2(nd), dz2(nd), dc(in + nd);
    buf.resize(in + nd);
    for (std::size_t i = 0; i < n; ++i) {
      const double* dvout = dv.row(i);
      affine_backward(u2, gu2, gc2, L.a2.row(i), nd, dvout, nd, da2.data());
      for (std::size_t k = 0; k < nd; ++k) {
        const double a = L.a2.at(i, k);
        dz2[k] = da2[k] * (1.0 - a * a);
      }
      std::memcpy(buf.data(), L.v_in.row(i), in * sizeof(double));
      std::memcpy(buf.data() + in, L.msum.row(i), nd * sizeof(double));
      affine_backward(u1, gu1, gc1, buf.data(), in + nd, dz2.data(), nd, dc.data());
      double* dvi = dv_in.row(i);
      for (std::size_t k = 0; k < in; ++k) dvi[k] += dc[k];
      double* dmi = dm.row(i);
      for (std::size_t k = 0; k < nd; ++k) dmi[k] += dc[in + k];
    }

    std::vector<double> da1(eh), dz1(eh), du(in + de);
    buf.resize(in + de);
    for (std::size_t e = 0; e < ne; ++e) {
      const auto [src, dst] = feats.edge_endpoints[e];
      const double* dmsg = dm.row(dst);
      affine_backward(w2, gw2, gb2, L.a1.row(e), eh, dmsg, nd, da1.data());
      for (std::size_t k = 0; k < eh; ++k) dz1[k] = L.z1.at(e, k) > 0.0 ? da1[k] : 0.0;
      std::memcpy(buf.data(), L.v_in.row(src), in * sizeof(double));
      std::memcpy(buf.data() + in, feats.edge_feats.row(e), de * sizeof(double));
      affine_backward(w1, gw1, gb1, buf.data(), in + de, dz1.data(), eh, du.data());
      double* dvs = dv_in.row(src);
      for (std::size_t k = 0; k < in; ++k) dvs[k] += du[k];
      // Edge-feature gradients are dropped: perturbations act on node features.
    }
    dv = std::move(dv_in);
  }

  if (input_grad != nullptr) {
    if (!input_grad->same_shape(feats.nodes)) {
      throw ShapeMismatch("input gradient accumulator shape differs from node features");
    }
    for (std::size_t i = 0; i < dv.data.size(); ++i) input_grad->data[i] += dv.data[i];
  }
}

double sample_loss(const Prediction& pred, std::span<const double> target,
                   std::span<const std::uint8_t> mask, TaskType task_type) {
  const std::size_t tc = pred.values.size();
  if (target.size() != tc || mask.size() != tc) {
    throw ShapeMismatch("target/mask width differs from task count");
  }
  std::size_t present = 0;
  double total = 0.0;
  for (std::size_t t = 0; t < tc; ++t) {
    if (!mask[t]) continue;
    ++present;
    if (task_type == TaskType::Regression) {
      const double d = pred.values[t] - target[t];
      total += d * d;
    } else {
      const double p = pred.probs[t];
      total += -(target[t] * std::log(p) + (1.0 - target[t]) * std::log(1.0 - p));
    }
  }
  if (present == 0) throw AllLabelsMissing("sample has no labeled task");
  return total / static_cast<double>(present);
}

void sample_loss_output_grad(const Prediction& pred, std::span<const double> target,
                             std::span<const std::uint8_t> mask, TaskType task_type, double scale,
                             std::span<double> d_out) {
  const std::size_t tc = pred.values.size();
  if (target.size() != tc || mask.size() != tc || d_out.size() != tc) {
    throw ShapeMismatch("target/mask/grad width differs from task count");
  }
  std::size_t present = 0;
  for (std::size_t t = 0; t < tc; ++t) present += mask[t] ? 1 : 0;
  if (present == 0) throw AllLabelsMissing("sample has no labeled task");
  const double inv = 1.0 / static_cast<double>(present);
  for (std::size_t t = 0; t < tc; ++t) {
    if (!mask[t]) continue;
    if (task_type == TaskType::Regression) {
      d_out[t] += scale * 2.0 * (pred.values[t] - target[t]) * inv;
    } else {
      d_out[t] += scale * (sigmoid(pred.values[t]) - target[t]) * inv;
    }
  }
}

Matrix predict_matrix(const ParamVector& params, const MpnnConfig& cfg,
                      std::span<const GraphFeatures> feats, std::span<const std::size_t> indices) {
  Matrix out(indices.size(), static_cast<std::size_t>(cfg.task_count));
  for (std::size_t r = 0; r < indices.size(); ++r) {
    const ForwardTrace trace = forward(params, cfg, feats[indices[r]]);
    for (std::size_t t = 0; t < out.cols; ++t) out.at(r, t) = trace.pred.values[t];
  }
  return out;
}

void adam_step(ParamVector& params, const ParamVector& grads, AdamState& state,
               const AdamConfig& cfg) {
  if (!params.same_layout(grads)) throw LayoutMismatch("adam_step: layout mismatch");
  const std::size_t n = params.values.size();
  if (state.m.empty()) {
    state.m.assign(n, 0.0);
    state.v.assign(n, 0.0);
  }
  if (state.m.size() != n || state.v.size() != n) {
    throw LayoutMismatch("adam_step: moment buffers sized for a different layout");
  }
  ++state.step;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < n; ++i) {
    const double g = grads.values[i] + cfg.weight_decay * params.values[i];
    state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * g;
    state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * g * g;
    const double mhat = state.m[i] / bc1;
    const double vhat = state.v[i] / bc2;
    params.values[i] -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
  }
}

void ensure_all_finite(std::span<const double> values, const char* context) {
  for (double v : values) {
    if (!std::isfinite(v)) {
      throw NumericError(std::string("non-finite value encountered in ") + context);
    }
  }
}

void save_checkpoint(const std::string& path, const ParamVector& params, const MpnnConfig& cfg,
                     const nlohmann::json& meta) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw CheckpointFormatError("cannot open checkpoint file for writing: " + path);
  out.write(kMagic, sizeof(kMagic));
  const auto count = static_cast<std::uint32_t>(params.values.size());
  unsigned char count_le[4] = {static_cast<unsigned char>(count & 0xff),
                               static_cast<unsigned char>((count >> 8) & 0xff),
                               static_cast<unsigned char>((count >> 16) & 0xff),
                               static_cast<unsigned char>((count >> 24) & 0xff)};
  out.write(reinterpret_cast<const char*>(count_le), 4);
  // Host is little-endian; doubles are written raw in layout order.
  out.write(reinterpret_cast<const char*>(params.values.data()),
            static_cast<std::streamsize>(params.values.size() * sizeof(double)));
  if (!out) throw CheckpointFormatError("short write to checkpoint file: " + path);
  out.close();

  nlohmann::json sidecar;
  sidecar["model"] = cfg;
  sidecar["meta"] = meta;
  nlohmann::json layout = nlohmann::json::array();
  for (const TensorDesc& t : params.layout->tensors) {
    layout.push_back({{"name", t.name}, {"shape", t.shape}});
  }
  sidecar["layout"] = layout;
  std::ofstream side(path + ".json", std::ios::trunc);
  if (!side) throw CheckpointFormatError("cannot open checkpoint sidecar for writing");
  side << sidecar.dump(2) << "\n";
}

LoadedCheckpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointFormatError("cannot open checkpoint file: " + path);
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw CheckpointFormatError("bad checkpoint magic in " + path);
  }
  unsigned char count_le[4];
  in.read(reinterpret_cast<char*>(count_le), 4);
  if (!in) throw CheckpointFormatError("truncated checkpoint header in " + path);
  const std::uint32_t count = static_cast<std::uint32_t>(count_le[0]) |
                              (static_cast<std::uint32_t>(count_le[1]) << 8) |
                              (static_cast<std::uint32_t>(count_le[2]) << 16) |
                              (static_cast<std::uint32_t>(count_le[3]) << 24);
  std::vector<double> values(count);
  in.read(reinterpret_cast<char*>(values.data()),
          static_cast<std::streamsize>(count * sizeof(double)));
  if (!in) throw CheckpointFormatError("truncated checkpoint payload in " + path);
  char extra;
  if (in.read(&extra, 1)) throw CheckpointFormatError("trailing bytes after checkpoint payload");

  std::ifstream side(path + ".json");
  if (!side) throw CheckpointFormatError("missing checkpoint sidecar: " + path + ".json");
  nlohmann::json sidecar;
  try {
    side >> sidecar;
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointFormatError(std::string("unparseable checkpoint sidecar: ") + e.what());
  }

  LoadedCheckpoint out;
  out.config = sidecar.at("model").get<MpnnConfig>();
  out.meta = sidecar.value("meta", nlohmann::json::object());

  auto layout = std::make_shared<ParamLayout>();
  std::size_t offset = 0;
  for (const auto& entry : sidecar.at("layout")) {
    TensorDesc desc;
    desc.name = entry.at("name").get<std::string>();
    desc.shape = entry.at("shape").get<std::vector<std::size_t>>();
    desc.offset = offset;
    desc.size = 1;
    for (std::size_t s : desc.shape) desc.size *= s;
    offset += desc.size;
    layout->tensors.push_back(std::move(desc));
  }
  layout->total = offset;
  if (offset != count) {
    throw CheckpointFormatError("checkpoint sidecar layout does not cover the payload");
  }
  const auto expected = build_layout(out.config);
  if (!(*expected == *layout)) {
    throw CheckpointFormatError("checkpoint layout disagrees with its model config");
  }
  out.params.layout = std::move(layout);
  out.params.values = std::move(values);
  return out;
}

}  // namespace fedchem
