#pragma once

#include "canf/mixture.hpp"

namespace canf {

enum class Activation { kTanh, kRelu, kLinear };

const char* to_string(Activation a);
Activation activation_from_string(const std::string& s);

struct DenseLayer {
  Matrix weight;  // out x in
  Vector bias;
};

/// Feedforward net: affine layers with a shared hidden activation and a
/// linear output layer. Batched calls take one sample per column.
class Mlp {
 public:
  Mlp() = default;
  Mlp(std::vector<DenseLayer> layers, Activation hidden);

  /// widths = {input, hidden..., output}. Weights are drawn uniformly in
  /// +-1/sqrt(fan_in) and biases start at zero. With zero_output_layer the
  /// last layer is all zeros, so the net initially outputs 0.
  static Mlp create(std::span<const int> widths, Activation hidden, Rng& rng,
                    bool zero_output_layer = false);

  int input_width() const;
  int output_width() const;
  Activation hidden_activation() const { return hidden_; }
  const std::vector<DenseLayer>& layers() const { return layers_; }
  std::vector<DenseLayer>& layers() { return layers_; }

  std::vector<std::span<double>> parameters();
  std::size_t parameter_count() const;

 private:
  std::vector<DenseLayer> layers_;
  Activation hidden_ = Activation::kTanh;
};

/// Activations recorded by a forward pass.
struct MlpTape {
  std::vector<Matrix> inputs;  // input to each layer
  std::vector<Matrix> pre;     // pre-activation of each layer
};

struct MlpGradients {
  std::vector<DenseLayer> layers;
  Matrix input;  // d loss / d input, one column per sample

  std::vector<std::span<const double>> spans() const;
};

Matrix mlp_forward(const Mlp& net, const Matrix& x, MlpTape* tape = nullptr);
Vector mlp_forward(const Mlp& net, const Vector& x, MlpTape* tape = nullptr);

/// Reverse pass over a recorded forward pass. Parameter gradients are summed
/// over the batch columns.
MlpGradients mlp_backward(const Mlp& net, const MlpTape& tape, const Matrix& output_grad);

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

class AdamState {
 public:
  AdamState(std::vector<std::size_t> sizes, AdamConfig config = {});

  /// One bias-corrected Adam update of every parameter block in place.
  void step(std::span<const std::span<double>> params,
            std::span<const std::span<const double>> grads);

  long steps() const { return steps_; }
  const AdamConfig& config() const { return config_; }

 private:
  AdamConfig config_;
  std::vector<std::vector<double>> first_;
  std::vector<std::vector<double>> second_;
  long steps_ = 0;
};

/// Maps raw net outputs to a k-component Gaussian mixture over `output_dim`
/// values with covariance diag(exp(d)) + B B^T, B of rank `rank`.
///
/// Raw layout, per component i: [lambda_i, mu_i (K), d_i (K), B_i (K x r,
/// row-major)], components stacked back to back.
struct MdnHead {
  int components = 1;
  int rank = 0;
  int output_dim = 1;

  int block_width() const { return 1 + 2 * output_dim + output_dim * rank; }
  int raw_width() const { return components * block_width(); }
};

GaussianMixture mdn_mixture(const MdnHead& head, std::span<const double> raw);
GaussianMixture mdn_predict(const Mlp& net, const MdnHead& head, const Vector& x);

/// Negative log-likelihood of `target` under the head's mixture. When `grad`
/// is non-empty it receives d NLL / d raw.
double mdn_nll(const MdnHead& head, std::span<const double> raw,
               std::span<const double> target, std::span<double> grad = {});

struct TrainingCurves {
  std::vector<double> train_loss;
  std::vector<double> validation_loss;
  std::vector<int> validation_epochs;  // epoch of each validation_loss entry
  double initial_validation_loss = 0.0;
  int best_epoch = -1;
};

struct MdnTrainConfig {
  std::vector<int> hidden{40, 40, 40};
  Activation activation = Activation::kRelu;
  int components = 2;
  int rank = 2;
  int epochs = 200;
  int batch = 128;
  double learning_rate = 1e-3;
  int patience = 20;
};

struct MdnModel {
  Mlp net;
  MdnHead head;

  GaussianMixture predict(const Vector& x) const { return mdn_predict(net, head, x); }
};

struct MdnFit {
  MdnModel model;
  TrainingCurves curves;
};

/// Mini-batch Adam on the mean NLL of targets (rows) given inputs (rows).
/// Keeps the parameters with the best validation NLL.
MdnFit train_mdn(const Matrix& train_inputs, const Matrix& train_targets,
                 const Matrix& val_inputs, const Matrix& val_targets,
                 const MdnTrainConfig& config, std::uint64_t seed);

/// Mean NLL over rows.
double mdn_mean_nll(const MdnModel& model, const Matrix& inputs, const Matrix& targets);

void to_json(nlohmann::json& j, const Mlp& net);
Mlp mlp_from_json(const nlohmann::json& j);
void to_json(nlohmann::json& j, const MdnModel& m);
MdnModel mdn_model_from_json(const nlohmann::json& j);

}  // namespace canf
