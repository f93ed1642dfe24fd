#include "canf/flow.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace canf {

std::vector<Eigen::Index> CouplingLayer::pass_indices() const {
  std::vector<Eigen::Index> idx;
  for (std::size_t i = 0; i < mask.size(); ++i)
    if (mask[i] != 0) idx.push_back(static_cast<Eigen::Index>(i));
  return idx;
}

std::vector<Eigen::Index> CouplingLayer::transform_indices() const {
  std::vector<Eigen::Index> idx;
  for (std::size_t i = 0; i < mask.size(); ++i)
    if (mask[i] == 0) idx.push_back(static_cast<Eigen::Index>(i));
  return idx;
}

RealNvpFlow::RealNvpFlow(std::vector<CouplingLayer> layers) : layers_(std::move(layers)) {
  if (layers_.empty()) return;
  dim_ = static_cast<int>(layers_.front().mask.size());
  for (const auto& l : layers_) {
    if (static_cast<int>(l.mask.size()) != dim_)
      throw Error(ErrorKind::kShapeMismatch, "coupling masks differ in length");
    const auto pass = l.pass_indices().size();
    const auto moved = l.transform_indices().size();
    if (pass == 0 || moved == 0)
      throw Error(ErrorKind::kShapeMismatch, "coupling mask needs both 0 and 1 entries");
    for (const Mlp* net : {&l.scale, &l.translate}) {
      if (net->input_width() != static_cast<int>(pass) ||
          net->output_width() != static_cast<int>(moved))
        throw Error(ErrorKind::kShapeMismatch, "coupling net widths do not match the mask");
    }
    if (!(l.s_max > 0.0)) throw Error(ErrorKind::kConfig, "s_max must be positive");
  }
}

RealNvpFlow RealNvpFlow::create(int dim, int layers, std::span<const int> hidden, Rng& rng,
                                double s_max, Activation activation) {
  if (dim < 2) throw Error(ErrorKind::kConfig, "flow dimension must be at least 2");
  if (layers < 1) throw Error(ErrorKind::kConfig, "flow needs at least one coupling layer");
  std::vector<CouplingLayer> out;
  for (int l = 0; l < layers; ++l) {
    CouplingLayer layer;
    layer.s_max = s_max;
    layer.mask.resize(static_cast<std::size_t>(dim));
    for (int i = 0; i < dim; ++i) layer.mask[static_cast<std::size_t>(i)] = (i % 2) == (l % 2) ? 1 : 0;
    const int pass = static_cast<int>(layer.pass_indices().size());
    std::vector<int> widths{pass};
    widths.insert(widths.end(), hidden.begin(), hidden.end());
    widths.push_back(dim - pass);
    layer.scale = Mlp::create(widths, activation, rng, true);
    layer.translate = Mlp::create(widths, activation, rng, true);
    out.push_back(std::move(layer));
  }
  return RealNvpFlow(std::move(out));
}

namespace {

struct LayerRecord {
  Matrix pass;     // pass-through coordinates (input to nets)
  Matrix moved;    // transformed coordinates before the affine map
  Matrix s_raw;
  Matrix s;        // clamped scale
  MlpTape scale_tape;
  MlpTape translate_tape;
};

void check_input(const Matrix& m, int dim, const char* what) {
  if (m.rows() != dim)
    throw Error(ErrorKind::kDimensionMismatch,
                std::string(what) + " has " + std::to_string(m.rows()) + " coordinates, flow has " +
                    std::to_string(dim));
  if (!m.allFinite()) throw Error(ErrorKind::kNonFiniteInput, std::string(what) + " not finite");
}

Matrix forward_pass(const std::vector<CouplingLayer>& layers, const Matrix& y, Vector* log_det,
                    std::vector<LayerRecord>* records) {
  Matrix x = y;
  Vector ld = Vector::Zero(y.cols());
  if (records) records->resize(layers.size());
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const auto& layer = layers[l];
    const auto pass_idx = layer.pass_indices();
    const auto move_idx = layer.transform_indices();
    Matrix pass = x(pass_idx, Eigen::all);
    Matrix moved = x(move_idx, Eigen::all);
    LayerRecord* rec = records ? &(*records)[l] : nullptr;
    Matrix s_raw = mlp_forward(layer.scale, pass, rec ? &rec->scale_tape : nullptr);
    const Matrix t = mlp_forward(layer.translate, pass, rec ? &rec->translate_tape : nullptr);
    Matrix s = layer.s_max * (s_raw.array() / layer.s_max).tanh();
    x(move_idx, Eigen::all) = (moved.array() * s.array().exp() + t.array()).matrix();
    ld += s.colwise().sum().transpose();
    if (rec) {
      rec->pass = std::move(pass);
      rec->moved = std::move(moved);
      rec->s_raw = std::move(s_raw);
      rec->s = std::move(s);
    }
  }
  if (log_det) *log_det = std::move(ld);
  return x;
}

}  // namespace

Matrix RealNvpFlow::forward_batch(const Matrix& y, Vector* log_det) const {
  check_input(y, dim_, "flow input");
  return forward_pass(layers_, y, log_det, nullptr);
}

Matrix RealNvpFlow::inverse_batch(const Matrix& z, Vector* log_det) const {
  check_input(z, dim_, "flow latent");
  Matrix x = z;
  Vector ld = Vector::Zero(z.cols());
  for (std::size_t l = layers_.size(); l-- > 0;) {
    const auto& layer = layers_[l];
    const auto pass_idx = layer.pass_indices();
    const auto move_idx = layer.transform_indices();
    const Matrix pass = x(pass_idx, Eigen::all);
    const Matrix s_raw = mlp_forward(layer.scale, pass);
    const Matrix t = mlp_forward(layer.translate, pass);
    const Matrix s = layer.s_max * (s_raw.array() / layer.s_max).tanh();
    const Matrix out = x(move_idx, Eigen::all);
    x(move_idx, Eigen::all) = ((out - t).array() * (-s.array()).exp()).matrix();
    ld -= s.colwise().sum().transpose();
  }
  if (log_det) *log_det = std::move(ld);
  return x;
}

FlowForward RealNvpFlow::forward(const Vector& y) const {
  Vector ld;
  const Matrix z = forward_batch(Matrix(y), &ld);
  return {z.col(0), ld(0)};
}

Vector RealNvpFlow::inverse(const Vector& z) const { return inverse_batch(Matrix(z)).col(0); }

FlowForward RealNvpFlow::inverse_with_log_det(const Vector& z) const {
  Vector ld;
  const Matrix y = inverse_batch(Matrix(z), &ld);
  return {y.col(0), ld(0)};
}

Vector standard_normal_log_pdf_cols(const Matrix& z) {
  return (-0.5 * (z.colwise().squaredNorm().array() + static_cast<double>(z.rows()) * kLog2Pi))
      .transpose();
}

double RealNvpFlow::log_pdf(const Vector& y) const {
  const auto f = forward(y);
  return -0.5 * (f.z.squaredNorm() + static_cast<double>(dim_) * kLog2Pi) + f.log_det;
}

Vector RealNvpFlow::log_pdf_rows(const Matrix& points) const {
  Vector ld;
  const Matrix z = forward_batch(points.transpose(), &ld);
  return standard_normal_log_pdf_cols(z) + ld;
}

Matrix RealNvpFlow::sample(Eigen::Index count, std::uint64_t seed) const {
  Rng rng(seed);
  const Matrix z = rng.normal_matrix(count, dim_);
  return inverse_batch(z.transpose()).transpose();
}

std::vector<std::span<double>> RealNvpFlow::parameters() {
  std::vector<std::span<double>> out;
  for (auto& l : layers_) {
    for (auto s : l.scale.parameters()) out.push_back(s);
    for (auto s : l.translate.parameters()) out.push_back(s);
  }
  return out;
}

double flow_nll_and_gradient(const RealNvpFlow& flow, const Matrix& batch,
                             std::vector<MlpGradients>* grads) {
  check_input(batch, flow.dim(), "flow batch");
  const double n = static_cast<double>(batch.cols());
  std::vector<LayerRecord> records;
  Vector log_det;
  const Matrix z = forward_pass(flow.layers(), batch, &log_det, grads ? &records : nullptr);
  const double nll = -(standard_normal_log_pdf_cols(z) + log_det).mean();
  if (!grads) return nll;

  const auto& layers = flow.layers();
  grads->assign(2 * layers.size(), MlpGradients{});
  // loss = mean(0.5|z|^2 - log_det) + const
  Matrix g = z / n;
  const double dlogdet = -1.0 / n;
  for (std::size_t l = layers.size(); l-- > 0;) {
    const auto& layer = layers[l];
    const auto& rec = records[l];
    const auto pass_idx = layer.pass_indices();
    const auto move_idx = layer.transform_indices();
    const Matrix g_out_moved = g(move_idx, Eigen::all);
    const Matrix g_out_pass = g(pass_idx, Eigen::all);
    const Eigen::ArrayXXd scale = rec.s.array().exp();
    const Matrix g_moved = (g_out_moved.array() * scale).matrix();
    const Eigen::ArrayXXd g_s = g_out_moved.array() * rec.moved.array() * scale + dlogdet;
    const Matrix g_s_raw =
        (g_s * (1.0 - (rec.s_raw.array() / layer.s_max).tanh().square())).matrix();
    auto gs = mlp_backward(layer.scale, rec.scale_tape, g_s_raw);
    auto gt = mlp_backward(layer.translate, rec.translate_tape, g_out_moved);
    Matrix next(g.rows(), g.cols());
    next(pass_idx, Eigen::all) = g_out_pass + gs.input + gt.input;
    next(move_idx, Eigen::all) = g_moved;
    g = std::move(next);
    (*grads)[2 * l] = std::move(gs);
    (*grads)[2 * l + 1] = std::move(gt);
  }
  return nll;
}

FlowFit train_flow(const Matrix& train, const Matrix& validation, const FlowTrainConfig& config,
                   std::uint64_t seed) {
  if (train.rows() == 0) throw Error(ErrorKind::kEmptyData, "train_flow with no rows");
  if (validation.rows() > 0 && validation.cols() != train.cols())
    throw Error(ErrorKind::kDimensionMismatch, "train/validation dimension mismatch");
  Rng rng(seed);
  FlowFit fit{RealNvpFlow::create(static_cast<int>(train.cols()), config.layers, config.hidden,
                                  rng, config.s_max),
              {}};
  const Matrix val_cols = validation.rows() > 0 ? Matrix(validation.transpose())
                                                : Matrix(train.transpose());
  auto val_nll = [&](const RealNvpFlow& f) { return flow_nll_and_gradient(f, val_cols, nullptr); };
  fit.curves.initial_validation_loss = val_nll(fit.flow);
  if (config.epochs <= 0) return fit;

  std::vector<std::size_t> sizes;
  for (const auto& p : fit.flow.parameters()) sizes.push_back(p.size());
  AdamState adam(sizes, AdamConfig{config.learning_rate});
  RealNvpFlow best = fit.flow;
  double best_loss = fit.curves.initial_validation_loss;

  const auto n = static_cast<std::size_t>(train.rows());
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  const auto batch = static_cast<std::size_t>(std::max(1, config.batch));
  std::vector<MlpGradients> grads;
  std::vector<std::span<const double>> gspans;
  Matrix xb;
  int since_best = 0;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng.engine());
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < n; start += batch) {
      const std::size_t count = std::min(batch, n - start);
      xb.resize(train.cols(), static_cast<Eigen::Index>(count));
      for (std::size_t c = 0; c < count; ++c)
        xb.col(static_cast<Eigen::Index>(c)) = train.row(static_cast<Eigen::Index>(order[start + c])).transpose();
      const double loss = flow_nll_and_gradient(fit.flow, xb, &grads);
      if (!std::isfinite(loss))
        throw Error(ErrorKind::kNonFiniteLoss,
                    "flow loss diverged at epoch " + std::to_string(epoch));
      gspans.clear();
      for (const auto& g : grads)
        for (auto s : g.spans()) gspans.push_back(s);
      const auto params = fit.flow.parameters();
      adam.step(params, gspans);
      epoch_loss += loss * static_cast<double>(count);
    }
    fit.curves.train_loss.push_back(epoch_loss / static_cast<double>(n));
    const bool last = epoch + 1 == config.epochs;
    if ((epoch + 1) % std::max(1, config.validation_interval) != 0 && !last) continue;
    const double v = val_nll(fit.flow);
    if (!std::isfinite(v)) throw Error(ErrorKind::kNonFiniteLoss, "flow validation loss diverged");
    fit.curves.validation_loss.push_back(v);
    fit.curves.validation_epochs.push_back(epoch);
    if (v < best_loss) {
      best_loss = v;
      best = fit.flow;
      fit.curves.best_epoch = epoch;
      since_best = 0;
    } else if (++since_best >= config.patience) {
      break;
    }
  }
  fit.flow = std::move(best);
  return fit;
}

void to_json(nlohmann::json& j, const RealNvpFlow& flow) {
  nlohmann::json layers = nlohmann::json::array();
  for (const auto& l : flow.layers())
    layers.push_back({{"mask", l.mask}, {"s_max", l.s_max}, {"scale", l.scale},
                      {"translate", l.translate}});
  j = nlohmann::json{{"dim", flow.dim()}, {"layers", std::move(layers)}};
}

RealNvpFlow flow_from_json(const nlohmann::json& j) {
  std::vector<CouplingLayer> layers;
  for (const auto& l : j.at("layers"))
    layers.push_back(CouplingLayer{l.at("mask").get<std::vector<int>>(),
                                   mlp_from_json(l.at("scale")),
                                   mlp_from_json(l.at("translate")),
                                   l.at("s_max").get<double>()});
  return RealNvpFlow(std::move(layers));
}

void to_json(nlohmann::json& j, const FlowTrainConfig& c) {
  j = nlohmann::json{{"layers", c.layers},
                     {"hidden", c.hidden},
                     {"epochs", c.epochs},
                     {"batch", c.batch},
                     {"learning_rate", c.learning_rate},
                     {"patience", c.patience},
                     {"s_max", c.s_max},
                     {"validation_interval", c.validation_interval}};
}

void from_json(const nlohmann::json& j, FlowTrainConfig& c) {
  c.layers = j.value("layers", c.layers);
  c.hidden = j.value("hidden", c.hidden);
  c.epochs = j.value("epochs", c.epochs);
  c.batch = j.value("batch", c.batch);
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.patience = j.value("patience", c.patience);
  c.s_max = j.value("s_max", c.s_max);
  c.validation_interval = j.value("validation_interval", c.validation_interval);
}

}  // namespace canf
