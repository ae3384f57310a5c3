#pragma once

// Deep multilayer perceptron regressor with three scalar heads
// (valence, arousal, dominance), reverse-mode gradients for the multitask
// MSE and CCC objectives, Adam, and minibatch training with early stopping.

#include <Eigen/Dense>

#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include "deepser/error.hpp"
#include "deepser/objectives.hpp"
#include "deepser/random.hpp"

namespace deepser {

using Matrix = Eigen::MatrixXd;

enum class Activation { Relu, Tanh };

inline std::string to_string(Activation a) { return a == Activation::Relu ? "relu" : "tanh"; }
inline Activation parse_activation(std::string_view s) {
  if (s == "relu") return Activation::Relu;
  if (s == "tanh") return Activation::Tanh;
  throw std::invalid_argument("unknown activation '" + std::string(s) + "'");
}

inline constexpr std::size_t kHeads = 3;

/// Affine layer y = x W + b with W stored fan_in x fan_out, b as 1 x fan_out.
struct Dense {
  Matrix weights;
  Matrix bias;

  std::size_t parameter_count() const { return static_cast<std::size_t>(weights.size() + bias.size()); }
};

struct MlpModel {
  std::size_t input_dim = 0;
  std::vector<std::size_t> hidden_sizes;
  Activation activation = Activation::Relu;
  std::vector<Dense> hidden;
  std::array<Dense, kHeads> heads;

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& l : hidden) n += l.parameter_count();
    for (const auto& h : heads) n += h.parameter_count();
    return n;
  }

  /// Every parameter block in a fixed order (layer weights, layer bias, ..., heads).
  std::vector<Matrix*> blocks() {
    std::vector<Matrix*> out;
    for (auto& l : hidden) {
      out.push_back(&l.weights);
      out.push_back(&l.bias);
    }
    for (auto& h : heads) {
      out.push_back(&h.weights);
      out.push_back(&h.bias);
    }
    return out;
  }
  std::vector<const Matrix*> blocks() const {
    std::vector<const Matrix*> out;
    for (const auto* b : const_cast<MlpModel*>(this)->blocks()) out.push_back(b);
    return out;
  }
};

/// Gradients share the model's shape.
using Gradients = MlpModel;

inline const std::vector<std::size_t>& default_hidden_sizes() {
  static const std::vector<std::size_t> sizes{256, 128, 64, 32, 16};
  return sizes;
}

namespace detail {

inline Dense glorot_dense(std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  Dense d;
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  d.weights.resize(static_cast<Eigen::Index>(fan_in), static_cast<Eigen::Index>(fan_out));
  for (Eigen::Index c = 0; c < d.weights.cols(); ++c)
    for (Eigen::Index r = 0; r < d.weights.rows(); ++r) d.weights(r, c) = rng.uniform(-limit, limit);
  d.bias = Matrix::Zero(1, static_cast<Eigen::Index>(fan_out));
  return d;
}

inline Matrix activate(const Matrix& z, Activation a) {
  if (a == Activation::Relu) return z.cwiseMax(0.0);
  return z.array().tanh().matrix();
}

// Derivative of the activation given pre-activation z and output h.
inline Matrix activation_grad(const Matrix& z, const Matrix& h, Activation a) {
  if (a == Activation::Relu) return (z.array() > 0.0).cast<double>().matrix();
  return (1.0 - h.array().square()).matrix();
}

}  // namespace detail

/// Glorot-uniform weights, zero biases.
inline MlpModel init_model(std::size_t input_dim, const std::vector<std::size_t>& hidden_sizes,
                           Activation activation, std::uint64_t seed) {
  if (input_dim == 0) throw std::invalid_argument("init_model: input_dim must be positive");
  if (hidden_sizes.empty()) throw std::invalid_argument("init_model: need at least one hidden layer");
  for (auto s : hidden_sizes)
    if (s == 0) throw std::invalid_argument("init_model: hidden sizes must be positive");
  Rng rng(seed);
  MlpModel m;
  m.input_dim = input_dim;
  m.hidden_sizes = hidden_sizes;
  m.activation = activation;
  std::size_t fan_in = input_dim;
  for (auto s : hidden_sizes) {
    m.hidden.push_back(detail::glorot_dense(fan_in, s, rng));
    fan_in = s;
  }
  for (auto& h : m.heads) h = detail::glorot_dense(fan_in, 1, rng);
  return m;
}

inline Gradients zeros_like(const MlpModel& m) {
  Gradients g = m;
  for (auto* b : g.blocks()) b->setZero();
  return g;
}

struct ForwardCache {
  std::vector<Matrix> pre;   // pre-activations per hidden layer
  std::vector<Matrix> post;  // post[0] = input, post[i + 1] = activation of layer i
  Matrix output;             // rows x 3
};

inline ForwardCache forward_cached(const MlpModel& m, const Matrix& batch) {
  if (static_cast<std::size_t>(batch.cols()) != m.input_dim)
    throw std::invalid_argument("forward: batch has " + std::to_string(batch.cols()) + " columns, model expects " +
                                std::to_string(m.input_dim));
  ForwardCache c;
  c.post.push_back(batch);
  for (const auto& layer : m.hidden) {
    Matrix z = c.post.back() * layer.weights;
    z.rowwise() += layer.bias.row(0);
    c.post.push_back(detail::activate(z, m.activation));
    c.pre.push_back(std::move(z));
  }
  c.output.resize(batch.rows(), static_cast<Eigen::Index>(kHeads));
  for (std::size_t k = 0; k < kHeads; ++k) {
    const auto& h = m.heads[k];
    c.output.col(static_cast<Eigen::Index>(k)) = (c.post.back() * h.weights).col(0).array() + h.bias(0, 0);
  }
  return c;
}

/// Predictions, one row per input row, columns (valence, arousal, dominance).
inline Matrix forward(const MlpModel& m, const Matrix& batch) { return forward_cached(m, batch).output; }

enum class LossKind { MseMultitask, CccMultitask };

inline std::string to_string(LossKind k) { return k == LossKind::MseMultitask ? "mse" : "ccc"; }
inline LossKind parse_loss_kind(std::string_view s) {
  if (s == "mse" || s == "mse_multitask") return LossKind::MseMultitask;
  if (s == "ccc" || s == "ccc_multitask") return LossKind::CccMultitask;
  throw std::invalid_argument("unknown loss '" + std::string(s) + "'");
}

namespace detail {

inline std::span<const double> column(const Matrix& m, Eigen::Index c) {
  return {m.data() + c * m.rows(), static_cast<std::size_t>(m.rows())};
}

}  // namespace detail

/// Total loss of predictions against targets (both rows x 3).
inline double total_loss(LossKind kind, const Matrix& pred, const Matrix& target, const LossWeights& w = {}) {
  if (pred.rows() != target.rows() || pred.cols() != 3 || target.cols() != 3)
    throw std::invalid_argument("total_loss: shape mismatch");
  std::array<double, 3> per{};
  for (Eigen::Index k = 0; k < 3; ++k) {
    const auto p = detail::column(pred, k), t = detail::column(target, k);
    per[static_cast<std::size_t>(k)] = kind == LossKind::MseMultitask ? mse(p, t) : ccc_loss(p, t);
  }
  return kind == LossKind::MseMultitask ? total_mse(per[0], per[1], per[2])
                                        : total_ccc_loss(per[0], per[1], per[2], w);
}

/// d(total loss)/d(pred), rows x 3.
inline Matrix loss_gradient(LossKind kind, const Matrix& pred, const Matrix& target, const LossWeights& w = {}) {
  const auto n = static_cast<double>(pred.rows());
  if (kind == LossKind::MseMultitask) return (2.0 / (3.0 * n)) * (pred - target);

  if (pred.rows() < 2) throw std::invalid_argument("ccc loss needs a minibatch of at least 2 rows");
  if (!w.valid()) throw std::invalid_argument("ccc loss: invalid weights");
  const std::array<double, 3> weight{w.alpha, w.beta, w.dominance()};
  Matrix grad(pred.rows(), 3);
  for (Eigen::Index k = 0; k < 3; ++k) {
    const Moments m = moments(detail::column(pred, k), detail::column(target, k));
    const double gap = m.mean_x - m.mean_y;
    const double num = 2.0 * m.cov;
    const double den = m.var_x + m.var_y + gap * gap;
    if (den == 0.0) {
      grad.col(k).setZero();
      continue;
    }
    // dCCC/dx_i = [2 (y_i - mean_y) den - num (2 (x_i - mean_x) + 2 gap)] / (n den^2)
    const auto x = pred.col(k).array(), y = target.col(k).array();
    const Eigen::ArrayXd dccc =
        (2.0 * (y - m.mean_y) * den - num * (2.0 * (x - m.mean_x) + 2.0 * gap)) / (n * den * den);
    grad.col(k) = (-weight[static_cast<std::size_t>(k)] * dccc).matrix();
  }
  return grad;
}

struct BackwardResult {
  double loss = 0.0;
  Gradients gradients;
};

/// Exact gradients of the configured total loss over one minibatch.
inline BackwardResult backward(const MlpModel& m, const Matrix& batch, const Matrix& targets, LossKind kind,
                               const LossWeights& w = {}) {
  if (targets.rows() != batch.rows() || targets.cols() != 3) throw std::invalid_argument("backward: target shape mismatch");
  if (kind == LossKind::CccMultitask && batch.rows() < 2)
    throw std::invalid_argument("backward: ccc loss undefined for a minibatch of one row");
  const ForwardCache c = forward_cached(m, batch);
  BackwardResult r{total_loss(kind, c.output, targets, w), zeros_like(m)};
  const Matrix d_out = loss_gradient(kind, c.output, targets, w);

  const Matrix& last = c.post.back();
  Matrix d_hidden = Matrix::Zero(last.rows(), last.cols());
  for (std::size_t k = 0; k < kHeads; ++k) {
    const auto dk = d_out.col(static_cast<Eigen::Index>(k));
    r.gradients.heads[k].weights = last.transpose() * dk;
    r.gradients.heads[k].bias(0, 0) = dk.sum();
    d_hidden += dk * m.heads[k].weights.transpose();
  }
  for (std::size_t i = m.hidden.size(); i-- > 0;) {
    const Matrix dz = d_hidden.cwiseProduct(detail::activation_grad(c.pre[i], c.post[i + 1], m.activation));
    r.gradients.hidden[i].weights = c.post[i].transpose() * dz;
    r.gradients.hidden[i].bias = dz.colwise().sum();
    if (i > 0) d_hidden = dz * m.hidden[i].weights.transpose();
  }
  return r;
}

struct AdamState {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::uint64_t step = 0;
  std::vector<Matrix> first;
  std::vector<Matrix> second;

  AdamState() = default;
  explicit AdamState(const MlpModel& m) {
    for (const auto* b : m.blocks()) {
      first.push_back(Matrix::Zero(b->rows(), b->cols()));
      second.push_back(Matrix::Zero(b->rows(), b->cols()));
    }
  }
};

/// One bias-corrected Adam update; rejects non-finite gradients.
inline void adam_step(AdamState& state, MlpModel& m, const Gradients& g, double learning_rate) {
  auto params = m.blocks();
  const auto grads = g.blocks();
  if (state.first.size() != params.size() || grads.size() != params.size())
    throw std::invalid_argument("adam_step: state does not match the model");
  for (const auto* gb : grads)
    if (!gb->allFinite()) throw Error("adam_step: non-finite gradient");
  ++state.step;
  const double correction1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double correction2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    state.first[i] = state.beta1 * state.first[i] + (1.0 - state.beta1) * *grads[i];
    state.second[i] = state.beta2 * state.second[i] + (1.0 - state.beta2) * grads[i]->cwiseProduct(*grads[i]);
    const auto m_hat = state.first[i].array() / correction1;
    const auto v_hat = state.second[i].array() / correction2;
    params[i]->array() -= learning_rate * m_hat / (v_hat.sqrt() + state.epsilon);
  }
}

struct TrainConfig {
  std::size_t batch_size = 200;
  std::size_t max_epochs = 180;
  std::size_t patience = 10;
  double learning_rate = 1e-3;
  LossKind loss = LossKind::MseMultitask;
  LossWeights weights{};
  std::uint64_t seed = 0;

  void validate() const {
    if (batch_size == 0) throw std::invalid_argument("TrainConfig: batch_size must be positive");
    if (patience == 0) throw std::invalid_argument("TrainConfig: patience must be at least 1");
    if (max_epochs == 0) throw std::invalid_argument("TrainConfig: max_epochs must be positive");
    if (!(learning_rate > 0.0)) throw std::invalid_argument("TrainConfig: learning_rate must be positive");
    if (!weights.valid()) throw std::invalid_argument("TrainConfig: need alpha, beta >= 0 and alpha + beta <= 1");
  }
};

struct TrainHistory {
  std::vector<double> train_loss;
  std::vector<double> dev_loss;
  std::size_t best_epoch = 0;  // 0-based
  bool stopped_early = false;

  std::size_t epochs() const { return dev_loss.size(); }
  double best_dev_loss() const { return dev_loss.at(best_epoch); }
};

/// Patience counter on a monitored loss; an epoch improves only if its loss is
/// strictly below the best seen so far.
class EarlyStopping {
 public:
  explicit EarlyStopping(std::size_t patience) : patience_(patience) {}

  /// Records one epoch; returns true when training should stop.
  bool update(double loss) {
    if (loss < best_) {
      best_ = loss;
      best_epoch_ = epoch_;
      waited_ = 0;
    } else {
      ++waited_;
    }
    ++epoch_;
    return waited_ >= patience_;
  }

  bool improved_last() const { return waited_ == 0; }
  std::size_t best_epoch() const { return best_epoch_; }
  double best() const { return best_; }

 private:
  std::size_t patience_;
  std::size_t epoch_ = 0;
  std::size_t best_epoch_ = 0;
  std::size_t waited_ = 0;
  double best_ = std::numeric_limits<double>::infinity();
};

struct TrainResult {
  MlpModel model;
  TrainHistory history;
};

/// Minibatch training; inputs are pre-scaled features and [0, 1] labels.
/// Returns the parameters of the epoch with the lowest dev loss.
inline TrainResult train(MlpModel model, const Matrix& train_x, const Matrix& train_y, const Matrix& dev_x,
                         const Matrix& dev_y, const TrainConfig& cfg) {
  cfg.validate();
  if (train_x.rows() == 0 || dev_x.rows() == 0) throw Error("train: empty training or development set");
  if (train_x.rows() != train_y.rows() || dev_x.rows() != dev_y.rows())
    throw std::invalid_argument("train: feature/label row mismatch");
  const std::size_t min_batch = cfg.loss == LossKind::CccMultitask ? 2 : 1;
  if (static_cast<std::size_t>(train_x.rows()) < min_batch) throw Error("train: too few training rows for the loss");
  if (static_cast<std::size_t>(dev_x.rows()) < min_batch) throw Error("train: too few development rows for the loss");

  Rng rng(cfg.seed);
  AdamState adam(model);
  EarlyStopping stopper(cfg.patience);
  TrainResult best{model, {}};
  TrainHistory& hist = best.history;

  std::vector<Eigen::Index> order(static_cast<std::size_t>(train_x.rows()));
  std::iota(order.begin(), order.end(), Eigen::Index{0});

  for (std::size_t epoch = 0; epoch < cfg.max_epochs; ++epoch) {
    rng.shuffle(std::span<Eigen::Index>(order));
    double loss_sum = 0.0;
    std::size_t rows_seen = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t len = std::min(cfg.batch_size, order.size() - start);
      if (len < min_batch) continue;
      const std::span<const Eigen::Index> idx(order.data() + start, len);
      const Matrix bx = train_x(idx, Eigen::all);
      const Matrix by = train_y(idx, Eigen::all);
      const BackwardResult r = backward(model, bx, by, cfg.loss, cfg.weights);
      if (!std::isfinite(r.loss)) throw Error("train: non-finite loss at epoch " + std::to_string(epoch + 1));
      adam_step(adam, model, r.gradients, cfg.learning_rate);
      loss_sum += r.loss * static_cast<double>(len);
      rows_seen += len;
    }
    const double dev_loss = total_loss(cfg.loss, forward(model, dev_x), dev_y, cfg.weights);
    if (!std::isfinite(dev_loss)) throw Error("train: non-finite dev loss at epoch " + std::to_string(epoch + 1));
    hist.train_loss.push_back(loss_sum / static_cast<double>(std::max<std::size_t>(rows_seen, 1)));
    hist.dev_loss.push_back(dev_loss);

    const bool stop = stopper.update(dev_loss);
    if (stopper.improved_last()) best.model = model;
    if (stop) {
      hist.stopped_early = true;
      break;
    }
  }
  hist.best_epoch = stopper.best_epoch();
  return best;
}

}  // namespace deepser
