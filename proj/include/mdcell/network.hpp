#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "mdcell/autodiff.hpp"
#include "mdcell/cells.hpp"
#include "mdcell/ctc.hpp"
#include "mdcell/grid.hpp"

namespace mdcell {

enum class LayerType { MdRecurrent, FeedForwardTanh, Subsample, Output };

struct LayerSpec {
  LayerType type = LayerType::Output;
  CellKind cell = CellKind::LeakyLP;  // MdRecurrent
  int cells = 0;                      // MdRecurrent: cells per scan direction
  int width = 0;                      // FeedForwardTanh
  std::vector<int> block;             // Subsample: factor per dimension
  int labels = 0;                     // Output: label count including the blank

  static LayerSpec md(CellKind cell, int cells_per_direction);
  static LayerSpec feed_forward(int width);
  static LayerSpec subsample(std::vector<int> block);
  static LayerSpec output(int labels);
};

struct NetworkSpec {
  int dims = 2;
  int input_channels = 1;
  std::vector<LayerSpec> layers;
  std::uint64_t seed = 1;
  double init_scale = 1.0;       // feed-forward weights (layer inputs, tanh, output)
  double recurrent_scale = 0.1;  // MD recurrent weights
  double forget_bias = 0.0;

  /// MD(cell, 4/dir) -> subsample 3x2 -> tanh 12 -> MD(cell, 8/dir) -> output.
  static NetworkSpec demo(int labels, CellKind cell = CellKind::LeakyLP);
  /// Three MD layers (2, 10, 20 cells/dir) with subsampling and tanh layers
  /// in between; `cells` names the kind of each MD layer from the bottom up.
  static NetworkSpec hierarchical3(int labels, const std::vector<CellKind>& cells);
};

/// Throws ContractViolation for inconsistent specs.
void validate(const NetworkSpec& spec);

/// Feature width flowing out of each layer, input excluded.
std::vector<int> feature_widths(const NetworkSpec& spec);

/// Shape of the lattice fed to the output layer's collapse step.
LatticeShape final_shape(const NetworkSpec& spec, const LatticeShape& input);

/// ⌈extent / block⌉ per dimension.
LatticeShape subsampled_shape(const LatticeShape& shape, std::span<const int> block);

std::size_t parameter_count(const NetworkSpec& spec);

nlohmann::json to_json(const NetworkSpec& spec);
NetworkSpec spec_from_json(const nlohmann::json& j);

/// Parameter offsets of one layer within Model::params.
struct LayerParams {
  struct Direction {
    int w_in = -1;           // [G*C x F]
    std::vector<int> w_rec;  // D matrices [G*C x C]
    int bias = -1;           // [G*C]
  };
  std::vector<Direction> dirs;  // MdRecurrent
  int w = -1;                   // FeedForwardTanh / Output
  int b = -1;
  int in_features = 0;
  int out_features = 0;
};

struct Model {
  NetworkSpec spec;
  ParamStore params;
  std::vector<LayerParams> layers;
  int epoch = 0;
  double learning_rate = 0.0;
};

/// Weights uniform in [-init_scale, init_scale] (recurrent matrices in
/// [-recurrent_scale, recurrent_scale]) from the spec seed; biases 0 except
/// the forget-gate rows, which get spec.forget_bias.
Model build(const NetworkSpec& spec);

struct Recording {
  Operand input;                // the whole input grid as one node
  std::vector<Operand> logits;  // one row of K per output frame
};

/// Records the forward pass of `image` on `tape`. The tape must have been
/// constructed with &model.params.
Recording record_forward(Tape& tape, const Model& model, const Grid& image);

/// T x K posteriors.
Matrix forward(const Model& model, const Grid& image);

struct SampleGradient {
  double loss = 0.0;
  CtcStatus status = CtcStatus::Ok;
  std::optional<Divergence> divergence;
  Matrix posteriors;
};

/// CTC loss of one sample. Accumulates d loss / d params into `param_grad`
/// (sized like model.params) and, when given, d loss / d input pixels.
SampleGradient loss_and_gradient(Tape& tape, const Model& model, const Grid& image, const LabelSeq& target,
                                 std::span<Real> param_grad, std::vector<Real>* input_grad = nullptr);

struct Example {
  std::string id;
  Grid image;
  LabelSeq target;
};

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0.0;  // mean CTC loss over the epoch (forward-only at epoch 0)
  double val_ler = 0.0;     // micro-averaged
  double val_ler_macro = 0.0;
  std::size_t infeasible = 0;
};

struct TrainOptions {
  double learning_rate = 5e-4;
  int epochs = 30;
  std::uint64_t shuffle_seed = 1;
  std::function<void(const EpochRecord&)> on_epoch;
};

struct TrainLog {
  std::vector<EpochRecord> epochs;  // epoch 0 is the untrained model
  bool diverged = false;
  std::string divergence;
  int best_epoch = 0;
  double best_ler = 0.0;
};

/// Per-sample SGD with full BPTT gradients. On a non-finite value the run
/// stops and the log is marked diverged; `model` then holds the last finite
/// weights. `best` (optional) receives a copy of the best-validation model.
TrainLog train_sgd(Model& model, std::span<const Example> train, std::span<const Example> validation,
                   const TrainOptions& options, Model* best = nullptr);

struct GradCheckResult {
  FdReport params;
  FdReport input;
  double loss = 0.0;
  std::size_t parameter_count = 0;
};

/// Random network MD(kind, 2/dir) -> subsample (2 along the first axis) ->
/// tanh 3 -> output 3 on a random two-channel image of `shape`, target (0,1).
/// Checks the CTC loss gradient with respect to every parameter and every
/// input value against central differences.
GradCheckResult gradient_check(CellKind kind, const LatticeShape& shape, std::uint64_t seed, double step = 1e-6);

CorpusLer evaluate(const Model& model, std::span<const Example> samples);

std::string train_log_csv(const TrainLog& log);

/// One JSON header line followed by the weights as little-endian doubles.
void save_model(const Model& model, std::ostream& out);
Model load_model(std::istream& in);
void save_model(const Model& model, const std::string& path);
Model load_model(const std::string& path);

}  // namespace mdcell
