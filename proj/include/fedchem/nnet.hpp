#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "fedchem/molgraph.hpp"
#include "fedchem/tensor.hpp"

namespace fedchem {

struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct LayoutMismatch : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct CheckpointFormatError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct AllLabelsMissing : std::runtime_error {
  using std::runtime_error::runtime_error;
};

enum class Readout { Sum, Mean };
enum class TaskType { Regression, BinaryMultilabel };

struct MpnnConfig {
  int mp_layers = 3;
  int edge_hidden = 16;
  int node_dim = 64;
  int head_hidden = 64;
  Readout readout = Readout::Sum;
  int task_count = 1;
  TaskType task_type = TaskType::Regression;
  int node_feat_dim = FeatureSpec{}.node_width();
  int edge_feat_dim = FeatureSpec::kEdgeWidth;

  bool operator==(const MpnnConfig&) const = default;
};

void to_json(nlohmann::json& j, const MpnnConfig& cfg);
void from_json(const nlohmann::json& j, MpnnConfig& cfg);

struct TensorDesc {
  std::string name;
  std::vector<std::size_t> shape;
  std::size_t offset = 0;
  std::size_t size = 0;

  bool operator==(const TensorDesc&) const = default;
};

struct ParamLayout {
  std::vector<TensorDesc> tensors;
  std::size_t total = 0;

  bool operator==(const ParamLayout&) const = default;
  const TensorDesc& find(const std::string& name) const;
};

/**
 * Flat parameter (or gradient) vector plus its layout. The layout is shared
 * by pointer between copies; equality of layouts is structural.
 */
struct ParamVector {
  std::shared_ptr<const ParamLayout> layout;
  std::vector<double> values;

  std::span<double> tensor(const std::string& name);
  std::span<const double> tensor(const std::string& name) const;
  void set_zero() { values.assign(values.size(), 0.0); }
  bool same_layout(const ParamVector& other) const;
};

std::shared_ptr<const ParamLayout> build_layout(const MpnnConfig& cfg);
ParamVector zeros_like_layout(std::shared_ptr<const ParamLayout> layout);

// Uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)) per tensor, drawn in layout order.
ParamVector init_params(const MpnnConfig& cfg, std::uint64_t seed);

struct Prediction {
  std::vector<double> values;  // raw per-task outputs (regression values / logits)
  std::vector<double> probs;   // classification only: clamped sigmoid of values
};

/**
 * Full activation record of one forward pass; backward() consumes it. One
 * trace per (params, graph) evaluation.
 */
struct ForwardTrace {
  struct Layer {
    Matrix v_in;   // n x in_t
    Matrix z1, a1; // per directed edge, edge_hidden wide
    Matrix msum;   // n x node_dim
    Matrix z2, a2; // n x node_dim (update hidden)
    Matrix v_out;  // n x node_dim
  };
  std::vector<Layer> layers;
  std::vector<double> readout;      // node_dim
  std::vector<double> z3, a3;       // head hidden
  Prediction pred;
};

ForwardTrace forward(const ParamVector& params, const MpnnConfig& cfg,
                     const GraphFeatures& feats);

/**
 * Reverse pass. d_out is the objective gradient w.r.t. raw outputs. Parameter
 * gradients ACCUMULATE into grad_accum (same layout as params); when
 * input_grad is non-null, gradients w.r.t. node features accumulate there
 * (shape n x node_feat_dim). Edge-feature gradients are not produced.
 */
void backward(const ParamVector& params, const MpnnConfig& cfg, const GraphFeatures& feats,
              const ForwardTrace& trace, std::span<const double> d_out, ParamVector& grad_accum,
              Matrix* input_grad = nullptr);

// Mean per-present-task loss of one sample: squared error (regression) or
// binary cross-entropy on clamped probabilities (classification).
double sample_loss(const Prediction& pred, std::span<const double> target,
                   std::span<const std::uint8_t> mask, TaskType task_type);

// Accumulates scale * d(sample_loss)/d(raw output) into d_out.
void sample_loss_output_grad(const Prediction& pred, std::span<const double> target,
                             std::span<const std::uint8_t> mask, TaskType task_type, double scale,
                             std::span<double> d_out);

// Raw model outputs for a set of samples, one row per index.
Matrix predict_matrix(const ParamVector& params, const MpnnConfig& cfg,
                      std::span<const GraphFeatures> feats, std::span<const std::size_t> indices);

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-5;  // coupled L2: added to the gradient before moments
};

struct AdamState {
  std::vector<double> m, v;
  long long step = 0;
};

void adam_step(ParamVector& params, const ParamVector& grads, AdamState& state,
               const AdamConfig& cfg);

void ensure_all_finite(std::span<const double> values, const char* context);

/**
 * Checkpoint I/O. The binary file is 8-byte magic "FCHEMPRM", a little-endian
 * uint32 parameter count, then count little-endian float64 values in layout
 * order. A JSON sidecar at <path>.json records the layout, the model config,
 * and caller metadata.
 */
void save_checkpoint(const std::string& path, const ParamVector& params, const MpnnConfig& cfg,
                     const nlohmann::json& meta = nlohmann::json::object());

struct LoadedCheckpoint {
  ParamVector params;
  MpnnConfig config;
  nlohmann::json meta;
};

LoadedCheckpoint load_checkpoint(const std::string& path);

}  // namespace fedchem
