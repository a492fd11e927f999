#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "flsl/synth.hpp"

namespace flsl {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;

// weights is (fan_out x fan_in); bias has fan_out entries.
struct Layer {
  Matrix weights;
  Vector bias;

  std::size_t parameter_count() const noexcept {
    return static_cast<std::size_t>(weights.size() + bias.size());
  }
};

// A multilayer perceptron [d0, d1, ..., 1] with ReLU hidden layers and a
// sigmoid output. With residual_enabled, a learned projection of the input
// (stored as the last entry of `layers`) is added to the last hidden layer's
// activation.
//
// Gradients use the same type.
class ModelParams {
 public:
  ModelParams() = default;
  ModelParams(std::vector<int> layer_dims, bool residual_enabled);

  const std::vector<int>& layer_dims() const noexcept { return dims_; }
  bool residual_enabled() const noexcept { return residual_; }
  int input_dim() const noexcept { return dims_.front(); }

  // Main chain layers followed by the residual projection, if any.
  std::vector<Layer> layers;

  std::size_t chain_length() const noexcept { return dims_.size() - 1; }
  std::size_t parameter_count() const noexcept;
  bool same_shape(const ModelParams& other) const noexcept;

  // All weights then bias of each layer, in declaration order.
  std::vector<double> flatten() const;

  // Exact (bitwise) equality of shape and values.
  bool operator==(const ModelParams& other) const;

 private:
  std::vector<int> dims_;
  bool residual_ = false;
};

struct TrainConfig {
  double learning_rate = 0.05;
  int batch_size = 32;
  int local_epochs = 1;
  std::uint64_t init_seed = 0;
  std::uint64_t shuffle_seed = 0;
};

void validate(const TrainConfig& cfg);

// Uniform weights in +-sqrt(6 / fan_in), zero biases.
ModelParams init_params(std::span<const int> dims, std::uint64_t seed, bool residual = false);

// P(On) for one feature vector.
double forward(const ModelParams& params, std::span<const double> features);

// P(On) for each row of a (batch x input_dim) matrix.
Vector forward_batch(const ModelParams& params, const Matrix& inputs);

inline constexpr double kProbabilityEpsilon = 1e-12;

double bce_loss(double p, LampState label);

struct Gradient {
  ModelParams grad;
  double mean_loss = 0.0;
};

// Exact gradient of the mean BCE over the rows of `inputs`.
Gradient backward(const ModelParams& params, const Matrix& inputs, std::span<const double> targets);
Gradient backward(const ModelParams& params, std::span<const Sample> batch);
Gradient backward(const ModelParams& params, std::span<const Sample* const> batch);

// params - lr * grad
ModelParams sgd_step(const ModelParams& params, const ModelParams& grad, double lr);
void sgd_step_inplace(ModelParams& params, const ModelParams& grad, double lr);

// p > 0.5 is On; exactly 0.5 is Off.
LampState predict(double probability) noexcept;

// Stacks sample features into a matrix; throws on a width mismatch.
Matrix stack_features(std::span<const Sample* const> batch, int input_dim);

// "FLSL" u16 version, u16 layer count, (u32 rows, u32 cols) per layer,
// then little-endian f64 weights and biases.
inline constexpr std::uint16_t kCheckpointVersion = 1;

std::vector<std::uint8_t> encode_params(const ModelParams& params);
ModelParams decode_params(std::span<const std::uint8_t> bytes);
void save_params(const ModelParams& params, const std::filesystem::path& path);
ModelParams load_params(const std::filesystem::path& path);

// Byte length of the checkpoint for the given layers.
std::size_t checkpoint_size(const ModelParams& params) noexcept;

}  // namespace flsl
