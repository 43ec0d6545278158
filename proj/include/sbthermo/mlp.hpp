#pragma once

// Fully connected regressor from (eta, P_up(1..Q)) to the scaled targets
// (y1, y2). Hidden layers are affine + activation, the output layer is
// affine. Trained with the mean absolute error
//
//   loss = (|y1 - y1_hat| + |y2 - y2_hat|) / 2
//
// and Adam.

#include <Eigen/Core>

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "sbthermo/dataset.hpp"

namespace sbthermo::nn {

inline constexpr std::uint32_t kModelFormatVersion = 1;

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;

enum class Activation : std::uint8_t { kLinear = 0, kTanh = 1, kReLU = 2 };

const char* to_string(Activation a);
Activation activation_from_string(const std::string& name);

struct Layer {
  Matrix weight;  // out x in
  Vector bias;    // out

  bool operator==(const Layer& other) const {
    return weight.rows() == other.weight.rows() && weight.cols() == other.weight.cols() &&
           bias.size() == other.bias.size() && weight == other.weight && bias == other.bias;
  }
};

struct ModelMetadata {
  int sideband_count = 0;
  std::uint64_t seed = 0;
  int epochs = 0;
  double final_loss = std::numeric_limits<double>::quiet_NaN();
  std::uint32_t noise_trials = 0;  // per-epoch readout noise used in training, 0 = clean
  dataset::ParamBox box;           // training box; predictions are clamped to it
  std::string config_json = "{}";  // resolved configuration echo

  bool operator==(const ModelMetadata&) const;
};

struct Architecture {
  int sideband_count = 15;
  int hidden_width = 1024;
  std::vector<Activation> hidden = {Activation::kTanh, Activation::kTanh, Activation::kReLU};
};

class MlpModel {
 public:
  MlpModel() = default;
  MlpModel(std::vector<int> dims, std::vector<Activation> hidden);

  const std::vector<int>& dims() const { return dims_; }
  const std::vector<Activation>& hidden_activations() const { return hidden_; }
  std::vector<Layer>& layers() { return layers_; }
  const std::vector<Layer>& layers() const { return layers_; }
  ModelMetadata& metadata() { return metadata_; }
  const ModelMetadata& metadata() const { return metadata_; }

  int input_dim() const { return dims_.front(); }
  int output_dim() const { return dims_.back(); }
  int sideband_count() const { return input_dim() - 1; }
  std::size_t parameter_count() const;

  // Dimension chain, activation count and parameter finiteness.
  void validate() const;

  bool operator==(const MlpModel&) const = default;

 private:
  std::vector<int> dims_;
  std::vector<Activation> hidden_;
  std::vector<Layer> layers_;
  ModelMetadata metadata_;
};

// Weights ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)), biases zero.
MlpModel init_model(const Architecture& arch, std::uint64_t seed);
MlpModel init_model(int sideband_count, int hidden_width, std::uint64_t seed);

std::array<double, 2> forward(const MlpModel& model, std::span<const double> input);
// Row i of the result is the output for row i of `inputs`.
Matrix forward_batch(const MlpModel& model, const Matrix& inputs);

double loss(std::array<double, 2> pred, std::array<double, 2> target);
double batch_loss(const Matrix& pred, const Matrix& target);

struct Gradients {
  std::vector<Layer> layers;
  double loss = 0.0;  // mean batch loss at the evaluated parameters
};

// Gradient of the mean batch loss w.r.t. every parameter. The subgradient of
// |r| at r = 0 is taken as 0.
Gradients backward(const MlpModel& model, const Matrix& inputs, const Matrix& targets);

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

class AdamState {
 public:
  explicit AdamState(const MlpModel& model);

  // One update; learning_rate overrides config.learning_rate for schedules.
  void step(MlpModel& model, const Gradients& grads, const AdamConfig& config,
            double learning_rate);
  std::int64_t steps() const { return step_; }

 private:
  std::vector<Layer> m_;
  std::vector<Layer> v_;
  std::int64_t step_ = 0;
};

enum class LrSchedule : std::uint8_t { kConstant = 0, kCosine = 1 };

const char* to_string(LrSchedule s);
LrSchedule schedule_from_string(const std::string& name);

struct EpochStats {
  int epoch = 0;
  double train_loss = 0.0;
  double holdout_loss = std::numeric_limits<double>::quiet_NaN();
  double learning_rate = 0.0;
  double seconds = 0.0;
};

struct TrainConfig {
  int epochs = 20;
  int batch_size = 256;
  AdamConfig adam;
  LrSchedule schedule = LrSchedule::kCosine;
  double final_lr_fraction = 0.01;  // cosine floor, as a fraction of the base rate
  std::uint64_t seed = 0;
  bool shuffle = true;
  std::uint32_t noise_trials = 0;  // > 0: fresh binomial readout noise every epoch
  double holdout_fraction = 0.0;   // tail of the dataset kept out of training
  unsigned workers = 1;
  std::function<void(const EpochStats&)> on_epoch;

  void validate() const;
};

struct TrainResult {
  std::vector<double> loss_history;     // mean training loss per epoch
  std::vector<double> holdout_history;  // empty without a holdout
};

// Trains `model` in place. With workers == 1 the outcome is a pure function
// of (model, data, config); with more workers it is deterministic per count.
TrainResult train(MlpModel& model, const dataset::Dataset& data, const TrainConfig& config);

struct Estimate {
  double nbar;
  double omega_t;
  bool clamped;  // output was pulled back into the training box
};

// Forward pass then inverse target scaling, clamped to the model's box.
Estimate predict(const MlpModel& model, double eta, std::span<const double> populations);
// Rows are (eta, P_up(1..Q)).
std::vector<Estimate> predict_batch(const MlpModel& model, const Matrix& inputs);

Estimate clamp_to_box(double nbar, double omega_t, const dataset::ParamBox& box);

void save_model(const MlpModel& model, const std::filesystem::path& path);
MlpModel load_model(const std::filesystem::path& path);

}  // namespace sbthermo::nn
