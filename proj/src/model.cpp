#include "flsl/model.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>

#include "flsl/error.hpp"
#include "flsl/rng.hpp"

namespace flsl {

namespace {

void check_dims(std::span<const int> dims, bool residual) {
  if (dims.size() < 2) throw InvalidArgument("model needs at least input and output dims");
  for (int d : dims) {
    if (d <= 0) throw InvalidArgument("model dims must be positive");
  }
  if (dims.back() != 1) throw InvalidArgument("model output dim must be 1");
  if (residual && dims.size() < 3) {
    throw InvalidArgument("residual connection needs at least one hidden layer");
  }
}

}  // namespace

ModelParams::ModelParams(std::vector<int> layer_dims, bool residual_enabled)
    : dims_(std::move(layer_dims)), residual_(residual_enabled) {
  check_dims(dims_, residual_);
  for (std::size_t l = 0; l + 1 < dims_.size(); ++l) {
    layers.push_back({Matrix::Zero(dims_[l + 1], dims_[l]), Vector::Zero(dims_[l + 1])});
  }
  if (residual_) {
    const int hidden = dims_[dims_.size() - 2];
    layers.push_back({Matrix::Zero(hidden, dims_.front()), Vector::Zero(hidden)});
  }
}

std::size_t ModelParams::parameter_count() const noexcept {
  std::size_t n = 0;
  for (const auto& l : layers) n += l.parameter_count();
  return n;
}

bool ModelParams::same_shape(const ModelParams& other) const noexcept {
  if (dims_ != other.dims_ || residual_ != other.residual_ || layers.size() != other.layers.size()) {
    return false;
  }
  for (std::size_t l = 0; l < layers.size(); ++l) {
    if (layers[l].weights.rows() != other.layers[l].weights.rows() ||
        layers[l].weights.cols() != other.layers[l].weights.cols() ||
        layers[l].bias.size() != other.layers[l].bias.size()) {
      return false;
    }
  }
  return true;
}

std::vector<double> ModelParams::flatten() const {
  std::vector<double> out;
  out.reserve(parameter_count());
  for (const auto& l : layers) {
    out.insert(out.end(), l.weights.data(), l.weights.data() + l.weights.size());
    out.insert(out.end(), l.bias.data(), l.bias.data() + l.bias.size());
  }
  return out;
}

bool ModelParams::operator==(const ModelParams& other) const {
  if (!same_shape(other)) return false;
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const auto& a = layers[l];
    const auto& b = other.layers[l];
    if (std::memcmp(a.weights.data(), b.weights.data(), sizeof(double) * a.weights.size()) != 0 ||
        std::memcmp(a.bias.data(), b.bias.data(), sizeof(double) * a.bias.size()) != 0) {
      return false;
    }
  }
  return true;
}

void validate(const TrainConfig& cfg) {
  if (!(cfg.learning_rate >= 0.0) || !std::isfinite(cfg.learning_rate)) {
    throw InvalidArgument("learning_rate must be a finite non-negative number");
  }
  if (cfg.batch_size <= 0) throw InvalidArgument("batch_size must be positive");
  if (cfg.local_epochs < 0) throw InvalidArgument("local_epochs must be non-negative");
}

ModelParams init_params(std::span<const int> dims, std::uint64_t seed, bool residual) {
  ModelParams p(std::vector<int>(dims.begin(), dims.end()), residual);
  Rng rng(seed);
  for (auto& layer : p.layers) {
    const double bound = std::sqrt(6.0 / static_cast<double>(layer.weights.cols()));
    double* w = layer.weights.data();
    for (Eigen::Index k = 0; k < layer.weights.size(); ++k) w[k] = rng.uniform(-bound, bound);
  }
  return p;
}

// ---------------------------------------------------------------------------
// Forward / backward

namespace {

double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

struct Activations {
  std::vector<Matrix> pre;   // pre-activation of each hidden layer
  std::vector<Matrix> post;  // relu(pre[l])
  Matrix top;                // input to the output layer
  Vector logits;
};

void check_input(const ModelParams& params, Eigen::Index cols) {
  if (params.layers.empty()) throw InvalidArgument("model has no layers");
  if (cols != params.input_dim()) {
    throw InvalidArgument("feature length " + std::to_string(cols) + " does not match model input " +
                          std::to_string(params.input_dim()));
  }
}

Activations run_forward(const ModelParams& params, const Matrix& x) {
  check_input(params, x.cols());
  const std::size_t hidden = params.chain_length() - 1;
  Activations a;
  a.pre.reserve(hidden);
  a.post.reserve(hidden + 1);
  const Matrix* current = &x;
  for (std::size_t l = 0; l < hidden; ++l) {
    const auto& layer = params.layers[l];
    Matrix z(x.rows(), layer.weights.rows());
    z.noalias() = *current * layer.weights.transpose();
    z.rowwise() += layer.bias.transpose();
    a.pre.push_back(std::move(z));
    a.post.push_back(a.pre.back().cwiseMax(0.0));
    current = &a.post.back();
  }
  a.top = *current;
  if (params.residual_enabled()) {
    const auto& proj = params.layers.back();
    a.top.noalias() += x * proj.weights.transpose();
    a.top.rowwise() += proj.bias.transpose();
  }
  const auto& out = params.layers[params.chain_length() - 1];
  a.logits = a.top * out.weights.row(0).transpose();
  a.logits.array() += out.bias(0);
  return a;
}

}  // namespace

Vector forward_batch(const ModelParams& params, const Matrix& inputs) {
  Activations a = run_forward(params, inputs);
  Vector p(a.logits.size());
  for (Eigen::Index i = 0; i < p.size(); ++i) p(i) = sigmoid(a.logits(i));
  return p;
}

double forward(const ModelParams& params, std::span<const double> features) {
  Matrix x(1, static_cast<Eigen::Index>(features.size()));
  std::copy(features.begin(), features.end(), x.data());
  return forward_batch(params, x)(0);
}

double bce_loss(double p, LampState label) {
  const double q = std::clamp(p, kProbabilityEpsilon, 1.0 - kProbabilityEpsilon);
  return label == LampState::On ? -std::log(q) : -std::log(1.0 - q);
}

LampState predict(double probability) noexcept {
  return probability > 0.5 ? LampState::On : LampState::Off;
}

Gradient backward(const ModelParams& params, const Matrix& x, std::span<const double> targets) {
  if (x.rows() == 0) throw InvalidArgument("backward needs a non-empty batch");
  if (static_cast<std::size_t>(x.rows()) != targets.size()) {
    throw InvalidArgument("batch rows and targets differ in length");
  }
  Activations a = run_forward(params, x);
  const auto batch = static_cast<double>(x.rows());

  Gradient g{ModelParams(params.layer_dims(), params.residual_enabled()), 0.0};
  // dL/dlogit of the mean BCE is (p - y) / B.
  Vector dlogit(x.rows());
  double loss = 0.0;
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const double p = sigmoid(a.logits(i));
    const double y = targets[static_cast<std::size_t>(i)];
    const double q = std::clamp(p, kProbabilityEpsilon, 1.0 - kProbabilityEpsilon);
    loss += -(y * std::log(q) + (1.0 - y) * std::log(1.0 - q));
    dlogit(i) = (p - y) / batch;
  }
  g.mean_loss = loss / batch;

  const std::size_t out_index = params.chain_length() - 1;
  auto& gout = g.grad.layers[out_index];
  gout.weights.row(0).noalias() = dlogit.transpose() * a.top;
  gout.bias(0) = dlogit.sum();

  // Gradient w.r.t. the output layer's input.
  Matrix dtop = dlogit * params.layers[out_index].weights.row(0);
  if (params.residual_enabled()) {
    auto& gproj = g.grad.layers.back();
    gproj.weights.noalias() = dtop.transpose() * x;
    gproj.bias = dtop.colwise().sum().transpose();
  }

  Matrix dpost = std::move(dtop);
  for (std::size_t l = out_index; l-- > 0;) {
    Matrix dz = (a.pre[l].array() > 0.0).select(dpost, 0.0);
    const Matrix& input = l == 0 ? x : a.post[l - 1];
    g.grad.layers[l].weights.noalias() = dz.transpose() * input;
    g.grad.layers[l].bias = dz.colwise().sum().transpose();
    if (l > 0) dpost.noalias() = dz * params.layers[l].weights;
  }
  return g;
}

Matrix stack_features(std::span<const Sample* const> batch, int input_dim) {
  Matrix x(static_cast<Eigen::Index>(batch.size()), input_dim);
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const auto& f = batch[i]->features();
    if (f.size() != static_cast<std::size_t>(input_dim)) {
      throw InvalidArgument("sample feature length " + std::to_string(f.size()) +
                            " does not match model input " + std::to_string(input_dim));
    }
    std::copy(f.begin(), f.end(), x.row(static_cast<Eigen::Index>(i)).data());
  }
  return x;
}

Gradient backward(const ModelParams& params, std::span<const Sample* const> batch) {
  if (batch.empty()) throw InvalidArgument("backward needs a non-empty batch");
  const Matrix x = stack_features(batch, params.input_dim());
  std::vector<double> y(batch.size());
  for (std::size_t i = 0; i < batch.size(); ++i) y[i] = batch[i]->label == LampState::On ? 1.0 : 0.0;
  return backward(params, x, y);
}

Gradient backward(const ModelParams& params, std::span<const Sample> batch) {
  std::vector<const Sample*> ptrs;
  ptrs.reserve(batch.size());
  for (const auto& s : batch) ptrs.push_back(&s);
  return backward(params, std::span<const Sample* const>(ptrs));
}

void sgd_step_inplace(ModelParams& params, const ModelParams& grad, double lr) {
  if (!params.same_shape(grad)) throw InvalidArgument("gradient shape does not match parameters");
  for (std::size_t l = 0; l < params.layers.size(); ++l) {
    params.layers[l].weights -= lr * grad.layers[l].weights;
    params.layers[l].bias -= lr * grad.layers[l].bias;
  }
}

ModelParams sgd_step(const ModelParams& params, const ModelParams& grad, double lr) {
  ModelParams out = params;
  sgd_step_inplace(out, grad, lr);
  return out;
}

// ---------------------------------------------------------------------------
// Checkpoint

namespace {

constexpr char kMagic[4] = {'F', 'L', 'S', 'L'};

template <typename T>
void put_le(std::vector<std::uint8_t>& out, T value) {
  using U = std::conditional_t<sizeof(T) == 8, std::uint64_t,
                               std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint16_t>>;
  const U bits = std::bit_cast<U>(value);
  for (std::size_t k = 0; k < sizeof(T); ++k) out.push_back(static_cast<std::uint8_t>(bits >> (8 * k)));
}

template <typename T>
T get_le(std::span<const std::uint8_t> bytes, std::size_t& pos) {
  using U = std::conditional_t<sizeof(T) == 8, std::uint64_t,
                               std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint16_t>>;
  if (bytes.size() - pos < sizeof(T)) throw FormatError("checkpoint is truncated");
  U bits = 0;
  for (std::size_t k = 0; k < sizeof(T); ++k) bits |= static_cast<U>(static_cast<U>(bytes[pos + k]) << (8 * k));
  pos += sizeof(T);
  return std::bit_cast<T>(bits);
}

}  // namespace

std::size_t checkpoint_size(const ModelParams& params) noexcept {
  return 8 + 8 * params.layers.size() + 8 * params.parameter_count();
}

std::vector<std::uint8_t> encode_params(const ModelParams& params) {
  std::vector<std::uint8_t> out;
  out.reserve(checkpoint_size(params));
  out.insert(out.end(), std::begin(kMagic), std::end(kMagic));
  put_le<std::uint16_t>(out, kCheckpointVersion);
  put_le<std::uint16_t>(out, static_cast<std::uint16_t>(params.layers.size()));
  for (const auto& l : params.layers) {
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(l.weights.rows()));
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(l.weights.cols()));
  }
  for (const auto& l : params.layers) {
    for (Eigen::Index k = 0; k < l.weights.size(); ++k) put_le<double>(out, l.weights.data()[k]);
    for (Eigen::Index k = 0; k < l.bias.size(); ++k) put_le<double>(out, l.bias(k));
  }
  return out;
}

ModelParams decode_params(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 8 || std::memcmp(bytes.data(), kMagic, 4) != 0) {
    throw FormatError("not a model checkpoint (bad magic)");
  }
  std::size_t pos = 4;
  const auto version = get_le<std::uint16_t>(bytes, pos);
  if (version != kCheckpointVersion) {
    throw FormatError("unsupported checkpoint version " + std::to_string(version));
  }
  const auto count = get_le<std::uint16_t>(bytes, pos);
  if (count == 0) throw FormatError("corrupt checkpoint header: zero layers");
  std::vector<std::pair<std::uint32_t, std::uint32_t>> shapes(count);
  for (auto& [rows, cols] : shapes) {
    rows = get_le<std::uint32_t>(bytes, pos);
    cols = get_le<std::uint32_t>(bytes, pos);
    if (rows == 0 || cols == 0) throw FormatError("corrupt checkpoint header: empty layer");
  }

  // Either every layer continues the chain, or all but the last do and the
  // last is the residual projection (last hidden width x input width).
  const auto chain_dims = [&](std::size_t n) {
    std::vector<int> dims{static_cast<int>(shapes[0].second)};
    for (std::size_t l = 0; l < n; ++l) {
      if (static_cast<int>(shapes[l].second) != dims.back()) return std::vector<int>{};
      dims.push_back(static_cast<int>(shapes[l].first));
    }
    return dims.back() == 1 ? dims : std::vector<int>{};
  };
  std::vector<int> dims = chain_dims(shapes.size());
  bool residual = false;
  if (dims.empty() && shapes.size() >= 3) {
    dims = chain_dims(shapes.size() - 1);
    const auto& proj = shapes.back();
    if (!dims.empty() && static_cast<int>(proj.first) == dims[dims.size() - 2] &&
        static_cast<int>(proj.second) == dims.front()) {
      residual = true;
    } else {
      dims.clear();
    }
  }
  if (dims.empty()) throw FormatError("corrupt checkpoint header: inconsistent layer shapes");

  ModelParams p(dims, residual);
  const std::size_t expected = checkpoint_size(p);
  if (bytes.size() < expected) throw FormatError("checkpoint is truncated");
  if (bytes.size() > expected) throw FormatError("checkpoint has trailing bytes");
  for (auto& layer : p.layers) {
    for (Eigen::Index k = 0; k < layer.weights.size(); ++k) layer.weights.data()[k] = get_le<double>(bytes, pos);
    for (Eigen::Index k = 0; k < layer.bias.size(); ++k) layer.bias(k) = get_le<double>(bytes, pos);
  }
  return p;
}

void save_params(const ModelParams& params, const std::filesystem::path& path) {
  const auto bytes = encode_params(params);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write checkpoint: " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("failed writing checkpoint: " + path.string());
}

ModelParams load_params(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint: " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  try {
    return decode_params(bytes);
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

}  // namespace flsl
