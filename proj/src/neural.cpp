#include "canf/neural.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace canf {

const char* to_string(Activation a) {
  switch (a) {
    case Activation::kTanh: return "tanh";
    case Activation::kRelu: return "relu";
    case Activation::kLinear: return "linear";
  }
  return "linear";
}

Activation activation_from_string(const std::string& s) {
  if (s == "tanh") return Activation::kTanh;
  if (s == "relu") return Activation::kRelu;
  if (s == "linear") return Activation::kLinear;
  throw Error(ErrorKind::kConfig, "unknown activation '" + s + "'");
}

namespace {

Matrix activate(const Matrix& z, Activation a) {
  switch (a) {
    case Activation::kTanh: return z.array().tanh().matrix();
    case Activation::kRelu: return z.cwiseMax(0.0);
    case Activation::kLinear: return z;
  }
  return z;
}

// Derivative in terms of the pre-activation z and the activation h = act(z).
Matrix activation_derivative(const Matrix& z, const Matrix& h, Activation a) {
  switch (a) {
    case Activation::kTanh: return (1.0 - h.array().square()).matrix();
    case Activation::kRelu: return (z.array() > 0.0).cast<double>().matrix();
    case Activation::kLinear: return Matrix::Ones(z.rows(), z.cols());
  }
  return Matrix::Ones(z.rows(), z.cols());
}

}  // namespace

Mlp::Mlp(std::vector<DenseLayer> layers, Activation hidden)
    : layers_(std::move(layers)), hidden_(hidden) {
  if (layers_.empty()) throw Error(ErrorKind::kShapeMismatch, "mlp needs at least one layer");
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    if (layers_[l].bias.size() != layers_[l].weight.rows())
      throw Error(ErrorKind::kShapeMismatch, "mlp bias does not match weight rows");
    if (l > 0 && layers_[l].weight.cols() != layers_[l - 1].weight.rows())
      throw Error(ErrorKind::kShapeMismatch, "mlp layer shapes do not chain");
  }
}

Mlp Mlp::create(std::span<const int> widths, Activation hidden, Rng& rng,
                bool zero_output_layer) {
  if (widths.size() < 2) throw Error(ErrorKind::kConfig, "mlp needs input and output widths");
  std::vector<DenseLayer> layers;
  for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
    const int in = widths[l];
    const int out = widths[l + 1];
    if (in < 1 || out < 1) throw Error(ErrorKind::kConfig, "mlp widths must be positive");
    DenseLayer layer{Matrix::Zero(out, in), Vector::Zero(out)};
    const bool last = l + 2 == widths.size();
    if (!(last && zero_output_layer)) {
      const double bound = 1.0 / std::sqrt(static_cast<double>(in));
      for (Eigen::Index r = 0; r < out; ++r)
        for (Eigen::Index c = 0; c < in; ++c) layer.weight(r, c) = bound * (2.0 * rng.uniform() - 1.0);
    }
    layers.push_back(std::move(layer));
  }
  return Mlp(std::move(layers), hidden);
}

int Mlp::input_width() const { return static_cast<int>(layers_.front().weight.cols()); }
int Mlp::output_width() const { return static_cast<int>(layers_.back().weight.rows()); }

std::vector<std::span<double>> Mlp::parameters() {
  std::vector<std::span<double>> out;
  for (auto& l : layers_) {
    out.emplace_back(l.weight.data(), static_cast<std::size_t>(l.weight.size()));
    out.emplace_back(l.bias.data(), static_cast<std::size_t>(l.bias.size()));
  }
  return out;
}

std::size_t Mlp::parameter_count() const {
  std::size_t n = 0;
  for (const auto& l : layers_) n += static_cast<std::size_t>(l.weight.size() + l.bias.size());
  return n;
}

std::vector<std::span<const double>> MlpGradients::spans() const {
  std::vector<std::span<const double>> out;
  for (const auto& l : layers) {
    out.emplace_back(l.weight.data(), static_cast<std::size_t>(l.weight.size()));
    out.emplace_back(l.bias.data(), static_cast<std::size_t>(l.bias.size()));
  }
  return out;
}

Matrix mlp_forward(const Mlp& net, const Matrix& x, MlpTape* tape) {
  if (x.rows() != net.input_width())
    throw Error(ErrorKind::kDimensionMismatch,
                "mlp input width " + std::to_string(x.rows()) + " != " +
                    std::to_string(net.input_width()));
  if (tape) {
    tape->inputs.clear();
    tape->pre.clear();
  }
  Matrix a = x;
  const auto& layers = net.layers();
  for (std::size_t l = 0; l < layers.size(); ++l) {
    Matrix z = layers[l].weight * a;
    z.colwise() += layers[l].bias;
    if (tape) tape->inputs.push_back(std::move(a));
    a = l + 1 == layers.size() ? z : activate(z, net.hidden_activation());
    if (tape) tape->pre.push_back(std::move(z));
  }
  return a;
}

Vector mlp_forward(const Mlp& net, const Vector& x, MlpTape* tape) {
  return mlp_forward(net, Matrix(x), tape).col(0);
}

MlpGradients mlp_backward(const Mlp& net, const MlpTape& tape, const Matrix& output_grad) {
  const auto& layers = net.layers();
  if (tape.inputs.size() != layers.size() || tape.pre.size() != layers.size())
    throw Error(ErrorKind::kTapeMismatch, "tape layer count does not match the net");
  for (std::size_t l = 0; l < layers.size(); ++l) {
    if (tape.pre[l].rows() != layers[l].weight.rows() ||
        tape.inputs[l].rows() != layers[l].weight.cols())
      throw Error(ErrorKind::kTapeMismatch, "tape shapes do not match the net");
  }
  if (output_grad.rows() != tape.pre.back().rows() ||
      output_grad.cols() != tape.pre.back().cols())
    throw Error(ErrorKind::kTapeMismatch, "output gradient shape does not match the tape");

  MlpGradients grads;
  grads.layers.resize(layers.size());
  Matrix g = output_grad;
  for (std::size_t l = layers.size(); l-- > 0;) {
    if (l + 1 != layers.size())
      g = g.cwiseProduct(activation_derivative(tape.pre[l], tape.inputs[l + 1], net.hidden_activation()));
    grads.layers[l].weight = g * tape.inputs[l].transpose();
    grads.layers[l].bias = g.rowwise().sum();
    g = layers[l].weight.transpose() * g;
  }
  grads.input = std::move(g);
  return grads;
}

AdamState::AdamState(std::vector<std::size_t> sizes, AdamConfig config) : config_(config) {
  for (auto s : sizes) {
    first_.emplace_back(s, 0.0);
    second_.emplace_back(s, 0.0);
  }
}

void AdamState::step(std::span<const std::span<double>> params,
                     std::span<const std::span<const double>> grads) {
  if (params.size() != first_.size() || grads.size() != first_.size())
    throw Error(ErrorKind::kShapeMismatch, "adam parameter block count mismatch");
  for (std::size_t b = 0; b < params.size(); ++b)
    if (params[b].size() != first_[b].size() || grads[b].size() != first_[b].size())
      throw Error(ErrorKind::kShapeMismatch,
                  "adam block " + std::to_string(b) + " size mismatch");
  ++steps_;
  const double c1 = 1.0 - std::pow(config_.beta1, static_cast<double>(steps_));
  const double c2 = 1.0 - std::pow(config_.beta2, static_cast<double>(steps_));
  for (std::size_t b = 0; b < params.size(); ++b) {
    auto& m = first_[b];
    auto& v = second_[b];
    for (std::size_t i = 0; i < m.size(); ++i) {
      const double g = grads[b][i];
      m[i] = config_.beta1 * m[i] + (1.0 - config_.beta1) * g;
      v[i] = config_.beta2 * v[i] + (1.0 - config_.beta2) * g * g;
      params[b][i] -= config_.learning_rate * (m[i] / c1) / (std::sqrt(v[i] / c2) + config_.epsilon);
    }
  }
}

namespace {

struct HeadComponent {
  double logit;
  Eigen::Map<const Vector> mean;
  Eigen::Map<const Vector> log_diag;
  Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> factor;
};

HeadComponent head_component(const MdnHead& head, std::span<const double> raw, int i) {
  const int k = head.output_dim;
  const double* p = raw.data() + static_cast<std::ptrdiff_t>(i) * head.block_width();
  return HeadComponent{p[0], Eigen::Map<const Vector>(p + 1, k),
                       Eigen::Map<const Vector>(p + 1 + k, k),
                       {p + 1 + 2 * k, k, head.rank}};
}

Matrix head_covariance(const HeadComponent& c) {
  Matrix cov = c.log_diag.array().exp().matrix().asDiagonal();
  if (c.factor.cols() > 0) cov.noalias() += c.factor * c.factor.transpose();
  return cov;
}

void check_head(const MdnHead& head, std::span<const double> raw) {
  if (head.components < 1 || head.rank < 0 || head.output_dim < 1)
    throw Error(ErrorKind::kConfig, "invalid mixture head configuration");
  if (static_cast<int>(raw.size()) != head.raw_width())
    throw Error(ErrorKind::kDimensionMismatch,
                "raw output width " + std::to_string(raw.size()) + " != head width " +
                    std::to_string(head.raw_width()));
}

}  // namespace

GaussianMixture mdn_mixture(const MdnHead& head, std::span<const double> raw) {
  check_head(head, raw);
  std::vector<double> logits;
  std::vector<MultivariateGaussian> comps;
  for (int i = 0; i < head.components; ++i) {
    const auto c = head_component(head, raw, i);
    logits.push_back(c.logit);
    comps.emplace_back(Vector(c.mean), head_covariance(c), JitterPolicy::kAsIs);
  }
  const double norm = log_sum_exp(logits);
  std::vector<double> weights;
  for (double l : logits) weights.push_back(std::exp(l - norm));
  return GaussianMixture(std::move(weights), std::move(comps));
}

GaussianMixture mdn_predict(const Mlp& net, const MdnHead& head, const Vector& x) {
  if (net.output_width() != head.raw_width())
    throw Error(ErrorKind::kDimensionMismatch, "net output width does not match the head");
  const Vector raw = mlp_forward(net, x);
  return mdn_mixture(head, std::span<const double>(raw.data(), static_cast<std::size_t>(raw.size())));
}

double mdn_nll(const MdnHead& head, std::span<const double> raw,
               std::span<const double> target, std::span<double> grad) {
  check_head(head, raw);
  const int k_out = head.output_dim;
  if (static_cast<int>(target.size()) != k_out)
    throw Error(ErrorKind::kDimensionMismatch, "target length does not match the head");
  const Eigen::Map<const Vector> y(target.data(), k_out);
  const auto n_comp = static_cast<std::size_t>(head.components);

  std::vector<double> logits(n_comp), log_joint(n_comp);
  std::vector<Vector> alphas(n_comp);
  std::vector<Matrix> precisions(n_comp);
  for (std::size_t i = 0; i < n_comp; ++i) {
    const auto c = head_component(head, raw, static_cast<int>(i));
    logits[i] = c.logit;
    const Matrix cov = head_covariance(c);
    Eigen::LLT<Matrix> llt(cov);
    if (llt.info() != Eigen::Success)
      throw Error(ErrorKind::kNonFiniteLoss, "mixture head covariance lost definiteness");
    const Vector diff = y - c.mean;
    alphas[i] = llt.solve(diff);
    const double log_det = 2.0 * Matrix(llt.matrixL()).diagonal().array().log().sum();
    log_joint[i] = -0.5 * (diff.dot(alphas[i]) + log_det + k_out * kLog2Pi);
    if (!grad.empty()) precisions[i] = llt.solve(Matrix::Identity(k_out, k_out));
  }
  const double logit_norm = log_sum_exp(logits);
  for (std::size_t i = 0; i < n_comp; ++i) log_joint[i] += logits[i] - logit_norm;
  const double total = log_sum_exp(log_joint);
  if (grad.empty()) return -total;

  if (static_cast<int>(grad.size()) != head.raw_width())
    throw Error(ErrorKind::kDimensionMismatch, "gradient buffer width mismatch");
  for (std::size_t i = 0; i < n_comp; ++i) {
    const auto c = head_component(head, raw, static_cast<int>(i));
    const double resp = std::exp(log_joint[i] - total);
    const double prior = std::exp(logits[i] - logit_norm);
    double* g = grad.data() + static_cast<std::ptrdiff_t>(i) * head.block_width();
    g[0] = prior - resp;
    // d log N / d Sigma = (alpha alpha^T - Sigma^-1) / 2
    const Matrix sens = 0.5 * (alphas[i] * alphas[i].transpose() - precisions[i]);
    for (int a = 0; a < k_out; ++a) {
      g[1 + a] = -resp * alphas[i](a);
      g[1 + k_out + a] = -resp * sens(a, a) * std::exp(c.log_diag(a));
    }
    if (head.rank > 0) {
      const Matrix gb = -resp * 2.0 * sens * c.factor;
      for (int a = 0; a < k_out; ++a)
        for (int b = 0; b < head.rank; ++b) g[1 + 2 * k_out + a * head.rank + b] = gb(a, b);
    }
  }
  return -total;
}

double mdn_mean_nll(const MdnModel& model, const Matrix& inputs, const Matrix& targets) {
  if (inputs.rows() == 0) return 0.0;
  const Matrix raw = mlp_forward(model.net, Matrix(inputs.transpose()));
  double acc = 0.0;
  Vector y;
  for (Eigen::Index i = 0; i < inputs.rows(); ++i) {
    y = targets.row(i).transpose();
    acc += mdn_nll(model.head,
                   std::span<const double>(raw.col(i).data(), static_cast<std::size_t>(raw.rows())),
                   std::span<const double>(y.data(), static_cast<std::size_t>(y.size())));
  }
  return acc / static_cast<double>(inputs.rows());
}

MdnFit train_mdn(const Matrix& train_inputs, const Matrix& train_targets,
                 const Matrix& val_inputs, const Matrix& val_targets,
                 const MdnTrainConfig& config, std::uint64_t seed) {
  if (train_inputs.rows() != train_targets.rows() || val_inputs.rows() != val_targets.rows() ||
      train_inputs.cols() != val_inputs.cols() || train_targets.cols() != val_targets.cols())
    throw Error(ErrorKind::kDimensionMismatch, "train/validation shapes disagree");
  if (train_inputs.rows() == 0) throw Error(ErrorKind::kEmptyData, "train_mdn with no rows");
  Rng rng(seed);
  MdnHead head{config.components, config.rank, static_cast<int>(train_targets.cols())};
  std::vector<int> widths{static_cast<int>(train_inputs.cols())};
  widths.insert(widths.end(), config.hidden.begin(), config.hidden.end());
  widths.push_back(head.raw_width());

  MdnFit fit{MdnModel{Mlp::create(widths, config.activation, rng), head}, {}};
  const bool has_val = val_inputs.rows() > 0;
  const auto& vx = has_val ? val_inputs : train_inputs;
  const auto& vy = has_val ? val_targets : train_targets;
  fit.curves.initial_validation_loss = mdn_mean_nll(fit.model, vx, vy);
  if (config.epochs <= 0) return fit;

  Mlp best = fit.model.net;
  double best_loss = fit.curves.initial_validation_loss;
  std::vector<std::size_t> sizes;
  for (const auto& p : fit.model.net.parameters()) sizes.push_back(p.size());
  AdamState adam(sizes, AdamConfig{config.learning_rate});

  const auto n = static_cast<std::size_t>(train_inputs.rows());
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  const auto batch = static_cast<std::size_t>(std::max(1, config.batch));
  int since_best = 0;
  Matrix xb, yb;
  MlpTape tape;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng.engine());
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < n; start += batch) {
      const std::size_t count = std::min(batch, n - start);
      xb.resize(train_inputs.cols(), static_cast<Eigen::Index>(count));
      yb.resize(train_targets.cols(), static_cast<Eigen::Index>(count));
      for (std::size_t c = 0; c < count; ++c) {
        xb.col(static_cast<Eigen::Index>(c)) = train_inputs.row(static_cast<Eigen::Index>(order[start + c])).transpose();
        yb.col(static_cast<Eigen::Index>(c)) = train_targets.row(static_cast<Eigen::Index>(order[start + c])).transpose();
      }
      const Matrix raw = mlp_forward(fit.model.net, xb, &tape);
      Matrix grad(raw.rows(), raw.cols());
      double loss = 0.0;
      for (Eigen::Index c = 0; c < raw.cols(); ++c) {
        loss += mdn_nll(head, std::span<const double>(raw.col(c).data(), static_cast<std::size_t>(raw.rows())),
                        std::span<const double>(yb.col(c).data(), static_cast<std::size_t>(yb.rows())),
                        std::span<double>(grad.col(c).data(), static_cast<std::size_t>(grad.rows())));
      }
      if (!std::isfinite(loss))
        throw Error(ErrorKind::kNonFiniteLoss, "mixture network loss diverged at epoch " +
                                                   std::to_string(epoch));
      grad /= static_cast<double>(count);
      const auto grads = mlp_backward(fit.model.net, tape, grad);
      const auto params = fit.model.net.parameters();
      const auto gspans = grads.spans();
      adam.step(params, gspans);
      epoch_loss += loss;
    }
    fit.curves.train_loss.push_back(epoch_loss / static_cast<double>(n));
    const double val_loss = mdn_mean_nll(fit.model, vx, vy);
    if (!std::isfinite(val_loss))
      throw Error(ErrorKind::kNonFiniteLoss, "validation loss diverged");
    fit.curves.validation_loss.push_back(val_loss);
    fit.curves.validation_epochs.push_back(epoch);
    if (val_loss < best_loss) {
      best_loss = val_loss;
      best = fit.model.net;
      fit.curves.best_epoch = epoch;
      since_best = 0;
    } else if (++since_best >= config.patience) {
      break;
    }
  }
  fit.model.net = std::move(best);
  return fit;
}

void to_json(nlohmann::json& j, const Mlp& net) {
  nlohmann::json layers = nlohmann::json::array();
  for (const auto& l : net.layers())
    layers.push_back({{"weight", matrix_to_json(l.weight)}, {"bias", vector_to_json(l.bias)}});
  j = nlohmann::json{{"activation", to_string(net.hidden_activation())}, {"layers", layers}};
}

Mlp mlp_from_json(const nlohmann::json& j) {
  std::vector<DenseLayer> layers;
  for (const auto& l : j.at("layers"))
    layers.push_back({matrix_from_json(l.at("weight")), vector_from_json(l.at("bias"))});
  return Mlp(std::move(layers), activation_from_string(j.at("activation").get<std::string>()));
}

void to_json(nlohmann::json& j, const MdnModel& m) {
  j = nlohmann::json{{"net", m.net},
                     {"head",
                      {{"components", m.head.components},
                       {"rank", m.head.rank},
                       {"output_dim", m.head.output_dim}}}};
}

MdnModel mdn_model_from_json(const nlohmann::json& j) {
  const auto& h = j.at("head");
  return MdnModel{mlp_from_json(j.at("net")),
                  MdnHead{h.at("components").get<int>(), h.at("rank").get<int>(),
                          h.at("output_dim").get<int>()}};
}

}  // namespace canf
