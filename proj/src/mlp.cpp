#include "sbthermo/mlp.hpp"

#include <algorithm>
#include <bit>
#include <chrono>
#include <cmath>
#include <numeric>
#include <random>

#include "sbthermo/error.hpp"
#include "sbthermo/parallel.hpp"
#include "sbthermo/rng.hpp"

namespace sbthermo::nn {
namespace {

constexpr std::uint64_t kInitStream = 0x494E4954;     // "INIT"
constexpr std::uint64_t kShuffleStream = 0x53485546;  // "SHUF"
constexpr std::uint64_t kEpochNoiseStream = 0x45504E5A;  // "EPNZ"

void apply_activation(Activation a, Matrix& z) {
  switch (a) {
    case Activation::kLinear: break;
    case Activation::kTanh: z = z.array().tanh(); break;
    case Activation::kReLU: z = z.array().max(0.0); break;
  }
}

// Multiplies `delta` by the activation derivative, expressed through the
// activation output.
void apply_derivative(Activation a, const Matrix& out, Matrix& delta) {
  switch (a) {
    case Activation::kLinear: break;
    case Activation::kTanh: delta.array() *= 1.0 - out.array().square(); break;
    case Activation::kReLU: delta.array() *= (out.array() > 0.0).cast<double>(); break;
  }
}

Activation layer_activation(const MlpModel& model, std::size_t layer) {
  const auto& hidden = model.hidden_activations();
  return layer < hidden.size() ? hidden[layer] : Activation::kLinear;
}

// Activations of every layer for one batch; act[0] is the input.
struct Workspace {
  std::vector<Matrix> act;
  Matrix delta;
  Matrix delta_prev;
};

template <typename Input>
void forward_into(const MlpModel& model, const Input& x, Workspace& ws) {
  const auto& layers = model.layers();
  ws.act.resize(layers.size() + 1);
  ws.act[0] = x;
  for (std::size_t l = 0; l < layers.size(); ++l) {
    Matrix& z = ws.act[l + 1];
    z.noalias() = ws.act[l] * layers[l].weight.transpose();
    z.rowwise() += layers[l].bias.transpose();
    apply_activation(layer_activation(model, l), z);
  }
}

double sign_or_zero(double r) { return r > 0.0 ? 1.0 : (r < 0.0 ? -1.0 : 0.0); }

// Accumulates scale * d(sum of per-record losses)/d(params) into `grads`
// (overwriting it) and returns the summed loss of the rows.
double backward_into(const MlpModel& model, const Matrix& inputs, const Matrix& targets,
                     double scale, Workspace& ws, std::vector<Layer>& grads) {
  forward_into(model, inputs, ws);
  const auto& layers = model.layers();
  const Matrix& pred = ws.act.back();
  const Matrix residual = pred - targets;
  const double loss_sum = residual.cwiseAbs().sum() * 0.5;
  ws.delta = residual.unaryExpr(&sign_or_zero) * (0.5 * scale);

  grads.resize(layers.size());
  for (std::size_t l = layers.size(); l-- > 0;) {
    if (l + 1 < layers.size()) apply_derivative(layer_activation(model, l), ws.act[l + 1], ws.delta);
    grads[l].weight.noalias() = ws.delta.transpose() * ws.act[l];
    grads[l].bias = ws.delta.colwise().sum().transpose();
    if (l > 0) {
      ws.delta_prev.noalias() = ws.delta * layers[l].weight;
      std::swap(ws.delta, ws.delta_prev);
    }
  }
  return loss_sum;
}

Matrix scaled_targets(const dataset::Dataset& data, std::size_t begin, std::size_t end) {
  Matrix y(static_cast<Eigen::Index>(end - begin), 2);
  for (std::size_t i = begin; i < end; ++i) {
    const auto s = data[i].scaled();
    y(static_cast<Eigen::Index>(i - begin), 0) = s.y1;
    y(static_cast<Eigen::Index>(i - begin), 1) = s.y2;
  }
  return y;
}

Matrix feature_matrix(const dataset::Dataset& data, std::size_t begin, std::size_t end) {
  const auto width = static_cast<Eigen::Index>(data.input_dim());
  const auto rows = static_cast<Eigen::Index>(end - begin);
  return Eigen::Map<const Matrix>(data.inputs().data() + begin * data.input_dim(), rows, width);
}

}  // namespace

const char* to_string(Activation a) {
  switch (a) {
    case Activation::kLinear: return "linear";
    case Activation::kTanh: return "tanh";
    case Activation::kReLU: return "relu";
  }
  return "?";
}

Activation activation_from_string(const std::string& name) {
  if (name == "tanh") return Activation::kTanh;
  if (name == "relu") return Activation::kReLU;
  if (name == "linear") return Activation::kLinear;
  fail(ErrorCode::kInvalidInput, "unknown activation '" + name + "'");
}

const char* to_string(LrSchedule s) { return s == LrSchedule::kCosine ? "cosine" : "constant"; }

LrSchedule schedule_from_string(const std::string& name) {
  if (name == "constant") return LrSchedule::kConstant;
  if (name == "cosine") return LrSchedule::kCosine;
  fail(ErrorCode::kInvalidInput, "unknown learning-rate schedule '" + name + "'");
}

bool ModelMetadata::operator==(const ModelMetadata& o) const {
  return sideband_count == o.sideband_count && seed == o.seed && epochs == o.epochs &&
         std::bit_cast<std::uint64_t>(final_loss) == std::bit_cast<std::uint64_t>(o.final_loss) &&
         noise_trials == o.noise_trials && box == o.box && config_json == o.config_json;
}

MlpModel::MlpModel(std::vector<int> dims, std::vector<Activation> hidden)
    : dims_(std::move(dims)), hidden_(std::move(hidden)) {
  if (dims_.size() < 2) fail(ErrorCode::kInvalidInput, "network needs at least two layers of units");
  for (int d : dims_)
    if (d < 1) fail(ErrorCode::kInvalidInput, "layer width must be positive");
  if (hidden_.size() != dims_.size() - 2)
    fail(ErrorCode::kInvalidInput, "need one activation per hidden layer");
  layers_.resize(dims_.size() - 1);
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    layers_[l].weight = Matrix::Zero(dims_[l + 1], dims_[l]);
    layers_[l].bias = Vector::Zero(dims_[l + 1]);
  }
  metadata_.sideband_count = dims_.front() - 1;
}

std::size_t MlpModel::parameter_count() const {
  std::size_t n = 0;
  for (const auto& l : layers_) n += static_cast<std::size_t>(l.weight.size() + l.bias.size());
  return n;
}

void MlpModel::validate() const {
  if (dims_.size() < 2 || layers_.size() != dims_.size() - 1)
    fail(ErrorCode::kInvalidInput, "layer count does not match dimension chain");
  if (hidden_.size() != dims_.size() - 2)
    fail(ErrorCode::kInvalidInput, "activation count does not match hidden layer count");
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    const auto& layer = layers_[l];
    if (layer.weight.rows() != dims_[l + 1] || layer.weight.cols() != dims_[l] ||
        layer.bias.size() != dims_[l + 1])
      fail(ErrorCode::kInvalidInput, "layer " + std::to_string(l) + " has wrong shape");
    if (!layer.weight.allFinite() || !layer.bias.allFinite())
      fail(ErrorCode::kInvalidInput, "layer " + std::to_string(l) + " has non-finite parameters");
  }
}

MlpModel init_model(const Architecture& arch, std::uint64_t seed) {
  if (arch.sideband_count < 1) fail(ErrorCode::kInvalidInput, "Q must be at least 1");
  if (arch.hidden_width < 1) fail(ErrorCode::kInvalidInput, "hidden width must be at least 1");
  std::vector<int> dims{arch.sideband_count + 1};
  for (std::size_t i = 0; i < arch.hidden.size(); ++i) dims.push_back(arch.hidden_width);
  dims.push_back(2);
  MlpModel model(dims, arch.hidden);
  for (std::size_t l = 0; l < model.layers().size(); ++l) {
    auto& w = model.layers()[l].weight;
    const double bound = 1.0 / std::sqrt(static_cast<double>(w.cols()));
    CounterRng rng(derive_key(seed, kInitStream, l));
    for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = bound * (2.0 * rng.uniform() - 1.0);
  }
  model.metadata().seed = seed;
  model.metadata().box.sideband_count = arch.sideband_count;
  return model;
}

MlpModel init_model(int sideband_count, int hidden_width, std::uint64_t seed) {
  Architecture arch;
  arch.sideband_count = sideband_count;
  arch.hidden_width = hidden_width;
  return init_model(arch, seed);
}

Matrix forward_batch(const MlpModel& model, const Matrix& inputs) {
  if (inputs.cols() != model.input_dim())
    fail(ErrorCode::kInvalidInput, "input has " + std::to_string(inputs.cols()) +
                                       " columns, model expects " +
                                       std::to_string(model.input_dim()));
  Workspace ws;
  forward_into(model, inputs, ws);
  return std::move(ws.act.back());
}

std::array<double, 2> forward(const MlpModel& model, std::span<const double> input) {
  if (static_cast<int>(input.size()) != model.input_dim())
    fail(ErrorCode::kInvalidInput, "input has " + std::to_string(input.size()) +
                                       " entries, model expects " +
                                       std::to_string(model.input_dim()));
  if (model.output_dim() != 2) fail(ErrorCode::kInvalidInput, "model must have two outputs");
  const Matrix x = Eigen::Map<const Matrix>(input.data(), 1, model.input_dim());
  const Matrix y = forward_batch(model, x);
  return {y(0, 0), y(0, 1)};
}

double loss(std::array<double, 2> pred, std::array<double, 2> target) {
  return (std::abs(target[0] - pred[0]) + std::abs(target[1] - pred[1])) / 2.0;
}

double batch_loss(const Matrix& pred, const Matrix& target) {
  if (pred.rows() != target.rows() || pred.cols() != target.cols())
    fail(ErrorCode::kInvalidInput, "prediction and target shapes differ");
  if (pred.rows() == 0) return 0.0;
  return (pred - target).cwiseAbs().sum() / (2.0 * static_cast<double>(pred.rows()));
}

Gradients backward(const MlpModel& model, const Matrix& inputs, const Matrix& targets) {
  if (inputs.rows() == 0) fail(ErrorCode::kInvalidInput, "backward needs a non-empty batch");
  if (inputs.cols() != model.input_dim() || targets.cols() != model.output_dim() ||
      targets.rows() != inputs.rows())
    fail(ErrorCode::kInvalidInput, "batch shape does not match model");
  Workspace ws;
  Gradients g;
  const double rows = static_cast<double>(inputs.rows());
  g.loss = backward_into(model, inputs, targets, 1.0 / rows, ws, g.layers) / rows;
  return g;
}

AdamState::AdamState(const MlpModel& model) {
  for (const auto& l : model.layers()) {
    m_.push_back({Matrix::Zero(l.weight.rows(), l.weight.cols()), Vector::Zero(l.bias.size())});
    v_.push_back(m_.back());
  }
}

void AdamState::step(MlpModel& model, const Gradients& grads, const AdamConfig& c,
                     double learning_rate) {
  ++step_;
  const double correction1 = 1.0 - std::pow(c.beta1, static_cast<double>(step_));
  const double correction2 = 1.0 - std::pow(c.beta2, static_cast<double>(step_));
  auto update = [&](auto& param, auto& m, auto& v, const auto& g) {
    m.array() = c.beta1 * m.array() + (1.0 - c.beta1) * g.array();
    v.array() = c.beta2 * v.array() + (1.0 - c.beta2) * g.array().square();
    param.array() -= learning_rate * (m.array() / correction1) /
                     ((v.array() / correction2).sqrt() + c.epsilon);
  };
  auto& layers = model.layers();
  for (std::size_t l = 0; l < layers.size(); ++l) {
    update(layers[l].weight, m_[l].weight, v_[l].weight, grads.layers[l].weight);
    update(layers[l].bias, m_[l].bias, v_[l].bias, grads.layers[l].bias);
  }
}

void TrainConfig::validate() const {
  if (epochs < 0) fail(ErrorCode::kInvalidInput, "epochs must be non-negative");
  if (batch_size < 1) fail(ErrorCode::kInvalidInput, "batch size must be at least 1");
  if (!(adam.learning_rate > 0.0)) fail(ErrorCode::kInvalidInput, "learning rate must be positive");
  if (!(adam.beta1 >= 0.0 && adam.beta1 < 1.0 && adam.beta2 >= 0.0 && adam.beta2 < 1.0))
    fail(ErrorCode::kInvalidInput, "Adam betas must lie in [0, 1)");
  if (!(adam.epsilon > 0.0)) fail(ErrorCode::kInvalidInput, "Adam epsilon must be positive");
  if (!(holdout_fraction >= 0.0 && holdout_fraction < 1.0))
    fail(ErrorCode::kInvalidInput, "holdout fraction must lie in [0, 1)");
  if (!(final_lr_fraction >= 0.0 && final_lr_fraction <= 1.0))
    fail(ErrorCode::kInvalidInput, "final learning-rate fraction must lie in [0, 1]");
}

TrainResult train(MlpModel& model, const dataset::Dataset& data, const TrainConfig& config) {
  config.validate();
  model.validate();
  if (data.sideband_count() != model.sideband_count())
    fail(ErrorCode::kQMismatch, "dataset has Q=" + std::to_string(data.sideband_count()) +
                                    ", model expects Q=" + std::to_string(model.sideband_count()));
  TrainResult result;
  if (config.epochs == 0) return result;

  const std::size_t holdout =
      static_cast<std::size_t>(std::floor(config.holdout_fraction * data.size()));
  const std::size_t n_train = data.size() - holdout;
  if (n_train == 0) fail(ErrorCode::kInvalidInput, "no training records");

  const Matrix clean_x = feature_matrix(data, 0, n_train);
  const Matrix train_y = scaled_targets(data, 0, n_train);
  Matrix holdout_x, holdout_y;
  if (holdout > 0) {
    holdout_x = feature_matrix(data, n_train, data.size());
    holdout_y = scaled_targets(data, n_train, data.size());
  }

  const unsigned workers = resolve_workers(config.workers);
  const std::size_t batch = std::min<std::size_t>(config.batch_size, n_train);
  const std::size_t batches_per_epoch = (n_train + batch - 1) / batch;
  const double total_steps = static_cast<double>(batches_per_epoch) * config.epochs;
  const double base_lr = config.adam.learning_rate;

  AdamState adam(model);
  std::vector<Workspace> ws(workers);
  std::vector<std::vector<Layer>> partial(workers);
  std::vector<double> partial_loss(workers);
  Gradients grads;
  std::vector<std::size_t> order(n_train);
  Matrix epoch_x;
  Matrix bx, by;

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    const Matrix* x = &clean_x;
    if (config.noise_trials > 0) {
      epoch_x = clean_x;
      const std::uint64_t key = derive_key(config.seed, kEpochNoiseStream, epoch);
      const auto q = static_cast<std::size_t>(model.sideband_count());
      parallel_for(n_train, workers, [&](std::size_t i) {
        dataset::apply_projection_noise(
            std::span<double>(epoch_x.row(static_cast<Eigen::Index>(i)).data() + 1, q),
            config.noise_trials, key, i);
      });
      x = &epoch_x;
    }
    std::iota(order.begin(), order.end(), std::size_t{0});
    if (config.shuffle) {
      std::mt19937_64 gen(derive_key(config.seed, kShuffleStream, epoch));
      std::shuffle(order.begin(), order.end(), gen);
    }

    double epoch_loss = 0.0;
    double lr = base_lr;
    for (std::size_t b = 0; b < batches_per_epoch; ++b) {
      const std::size_t begin = b * batch;
      const std::size_t rows = std::min(batch, n_train - begin);
      bx.resize(static_cast<Eigen::Index>(rows), x->cols());
      by.resize(static_cast<Eigen::Index>(rows), 2);
      for (std::size_t r = 0; r < rows; ++r) {
        bx.row(static_cast<Eigen::Index>(r)) = x->row(static_cast<Eigen::Index>(order[begin + r]));
        by.row(static_cast<Eigen::Index>(r)) =
            train_y.row(static_cast<Eigen::Index>(order[begin + r]));
      }
      // Contiguous row chunks per worker, reduced in chunk order.
      const double scale = 1.0 / static_cast<double>(rows);
      const std::size_t chunks = std::min<std::size_t>(workers, rows);
      const std::size_t chunk_rows = (rows + chunks - 1) / chunks;
      parallel_for(chunks, workers, [&](std::size_t c) {
        const auto r0 = static_cast<Eigen::Index>(c * chunk_rows);
        const auto n = static_cast<Eigen::Index>(std::min(rows, (c + 1) * chunk_rows)) - r0;
        if (n <= 0) {
          partial_loss[c] = 0.0;
          partial[c].clear();
          return;
        }
        if (chunks == 1) {
          partial_loss[c] = backward_into(model, bx, by, scale, ws[c], partial[c]);
        } else {
          const Matrix cx = bx.middleRows(r0, n);
          const Matrix cy = by.middleRows(r0, n);
          partial_loss[c] = backward_into(model, cx, cy, scale, ws[c], partial[c]);
        }
      });
      grads.layers = partial[0];
      double batch_loss_sum = partial_loss[0];
      for (std::size_t c = 1; c < chunks; ++c) {
        if (partial[c].empty()) continue;
        for (std::size_t l = 0; l < grads.layers.size(); ++l) {
          grads.layers[l].weight += partial[c][l].weight;
          grads.layers[l].bias += partial[c][l].bias;
        }
        batch_loss_sum += partial_loss[c];
      }
      epoch_loss += batch_loss_sum;

      if (config.schedule == LrSchedule::kCosine) {
        const double progress = static_cast<double>(adam.steps()) / total_steps;
        const double floor = base_lr * config.final_lr_fraction;
        lr = floor + 0.5 * (base_lr - floor) * (1.0 + std::cos(physics::kPi * progress));
      }
      adam.step(model, grads, config.adam, lr);
    }

    EpochStats stats;
    stats.epoch = epoch + 1;
    stats.train_loss = epoch_loss / static_cast<double>(n_train);
    stats.learning_rate = lr;
    result.loss_history.push_back(stats.train_loss);
    if (holdout > 0) {
      stats.holdout_loss = batch_loss(forward_batch(model, holdout_x), holdout_y);
      result.holdout_history.push_back(stats.holdout_loss);
    }
    stats.seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (config.on_epoch) config.on_epoch(stats);
  }

  auto& meta = model.metadata();
  meta.epochs += config.epochs;
  meta.final_loss = result.loss_history.back();
  meta.seed = config.seed;
  meta.noise_trials = config.noise_trials;
  meta.box = data.header().box;
  return result;
}

Estimate clamp_to_box(double nbar, double omega_t, const dataset::ParamBox& box) {
  Estimate e{nbar, omega_t, false};
  if (std::isnan(e.nbar)) {
    e.nbar = box.nbar_min;
    e.clamped = true;
  }
  if (std::isnan(e.omega_t)) {
    e.omega_t = box.omega_t_min;
    e.clamped = true;
  }
  const double n = std::clamp(e.nbar, box.nbar_min, box.nbar_max);
  const double w = std::clamp(e.omega_t, box.omega_t_min, box.omega_t_max);
  if (n != e.nbar || w != e.omega_t) e.clamped = true;
  e.nbar = n;
  e.omega_t = w;
  return e;
}

std::vector<Estimate> predict_batch(const MlpModel& model, const Matrix& inputs) {
  if (inputs.cols() != model.input_dim())
    fail(ErrorCode::kQMismatch, "inputs carry Q=" + std::to_string(inputs.cols() - 1) +
                                    " populations, model expects Q=" +
                                    std::to_string(model.sideband_count()));
  const Matrix y = forward_batch(model, inputs);
  std::vector<Estimate> out(static_cast<std::size_t>(y.rows()));
  for (Eigen::Index i = 0; i < y.rows(); ++i) {
    const auto p = dataset::unscale_targets(y(i, 0), y(i, 1));
    out[static_cast<std::size_t>(i)] = clamp_to_box(p.nbar, p.omega_t, model.metadata().box);
  }
  return out;
}

Estimate predict(const MlpModel& model, double eta, std::span<const double> populations) {
  if (static_cast<int>(populations.size()) != model.sideband_count())
    fail(ErrorCode::kQMismatch, "got " + std::to_string(populations.size()) +
                                    " populations, model expects Q=" +
                                    std::to_string(model.sideband_count()));
  Matrix x(1, model.input_dim());
  x(0, 0) = eta;
  for (std::size_t q = 0; q < populations.size(); ++q)
    x(0, static_cast<Eigen::Index>(q) + 1) = populations[q];
  return predict_batch(model, x).front();
}

}  // namespace sbthermo::nn
