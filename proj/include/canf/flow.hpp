#pragma once

#include "canf/neural.hpp"

namespace canf {

/// Affine coupling: coordinates with mask 1 pass through and condition the
/// scale/translate nets; the rest become x * exp(s) + t. The raw scale is
/// soft-clamped to s_max * tanh(s / s_max).
struct CouplingLayer {
  std::vector<int> mask;
  Mlp scale;
  Mlp translate;
  double s_max = 5.0;

  std::vector<Eigen::Index> pass_indices() const;
  std::vector<Eigen::Index> transform_indices() const;
};

struct FlowForward {
  Vector z;
  double log_det = 0.0;
};

/// RealNVP stack over a standard normal base. Maps data y to latent z.
class RealNvpFlow {
 public:
  RealNvpFlow() = default;
  explicit RealNvpFlow(std::vector<CouplingLayer> layers);

  /// Alternating even/odd half masks; each coupling net has the given hidden
  /// widths and a zero-initialized output layer, so the flow starts as the
  /// identity.
  static RealNvpFlow create(int dim, int layers, std::span<const int> hidden, Rng& rng,
                            double s_max = 5.0, Activation activation = Activation::kTanh);

  int dim() const { return dim_; }
  const std::vector<CouplingLayer>& layers() const { return layers_; }
  std::vector<CouplingLayer>& layers() { return layers_; }

  FlowForward forward(const Vector& y) const;
  Vector inverse(const Vector& z) const;
  /// Inverse pass that also returns log|det d y / d z| (= -forward log_det).
  FlowForward inverse_with_log_det(const Vector& z) const;
  double log_pdf(const Vector& y) const;

  /// Column-per-sample forms.
  Matrix forward_batch(const Matrix& y, Vector* log_det) const;
  Matrix inverse_batch(const Matrix& z, Vector* log_det = nullptr) const;

  /// Row-per-sample log densities of an n x d matrix.
  Vector log_pdf_rows(const Matrix& points) const;

  /// count x d matrix: standard normal z pushed through the inverse.
  Matrix sample(Eigen::Index count, std::uint64_t seed) const;

  std::vector<std::span<double>> parameters();

 private:
  std::vector<CouplingLayer> layers_;
  int dim_ = 0;
};

/// Standard-normal log density summed over the coordinates of each column.
Vector standard_normal_log_pdf_cols(const Matrix& z);

/// Mean NLL of the columns of `batch`; fills parameter gradients (scale net
/// then translate net for every layer, in parameters() order) when `grads`
/// is non-null.
double flow_nll_and_gradient(const RealNvpFlow& flow, const Matrix& batch,
                             std::vector<MlpGradients>* grads);

struct FlowTrainConfig {
  int layers = 4;
  std::vector<int> hidden{12, 12};
  int epochs = 500;
  int batch = 128;
  double learning_rate = 1e-3;
  int patience = 20;  // in validation checks
  double s_max = 5.0;
  int validation_interval = 1;  // epochs between validation checks
};

struct FlowFit {
  RealNvpFlow flow;
  TrainingCurves curves;
};

/// Adam on the mean NLL of the rows of `train`; keeps the best-validation
/// parameters.
FlowFit train_flow(const Matrix& train, const Matrix& validation,
                   const FlowTrainConfig& config, std::uint64_t seed);

void to_json(nlohmann::json& j, const RealNvpFlow& flow);
RealNvpFlow flow_from_json(const nlohmann::json& j);
void to_json(nlohmann::json& j, const FlowTrainConfig& c);
/// Missing keys keep the values already in `c`.
void from_json(const nlohmann::json& j, FlowTrainConfig& c);

}  // namespace canf
