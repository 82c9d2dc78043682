#include "peerlace/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <random>

namespace peerlace {

bool DenseVector::all_finite() const noexcept {
  return std::all_of(values_.begin(), values_.end(), [](double v) { return std::isfinite(v); });
}

double dot(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw ContractViolation("dot: length mismatch");
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
  return acc;
}

double squared_norm(std::span<const double> v) { return dot(v, v); }

double l2_distance(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw ContractViolation("l2_distance: length mismatch");
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    acc += d * d;
  }
  return std::sqrt(acc);
}

DenseVector ModelParams::flatten() const {
  std::vector<double> out(weights.values());
  out.push_back(bias);
  return DenseVector(std::move(out));
}

ModelParams ModelParams::unflatten(const DenseVector& flat) {
  if (flat.size() < 2) throw ContractViolation("unflatten: need at least one weight and a bias");
  std::vector<double> w(flat.begin(), flat.end() - 1);
  return ModelParams{DenseVector(std::move(w)), flat[flat.size() - 1]};
}

LabeledBatch::LabeledBatch(std::size_t dim, std::vector<double> features, std::vector<int> labels)
    : dim_(dim), features_(std::move(features)), labels_(std::move(labels)) {
  if (dim_ == 0) throw ContractViolation("LabeledBatch: dim must be positive");
  if (labels_.empty()) throw ContractViolation("LabeledBatch: at least one row required");
  if (features_.size() != labels_.size() * dim_)
    throw ContractViolation("LabeledBatch: feature matrix does not match rows x dim");
  for (int y : labels_)
    if (y != 0 && y != 1) throw ContractViolation("LabeledBatch: labels must be 0 or 1");
}

LabeledBatch LabeledBatch::slice(std::size_t begin, std::size_t end) const {
  if (begin >= end || end > rows()) throw ContractViolation("LabeledBatch::slice: bad range");
  std::vector<double> f(features_.begin() + static_cast<std::ptrdiff_t>(begin * dim_),
                        features_.begin() + static_cast<std::ptrdiff_t>(end * dim_));
  std::vector<int> l(labels_.begin() + static_cast<std::ptrdiff_t>(begin),
                     labels_.begin() + static_cast<std::ptrdiff_t>(end));
  return LabeledBatch(dim_, std::move(f), std::move(l));
}

void TrainingConfig::validate() const {
  if (!(learning_rate > 0.0)) throw ContractViolation("learning_rate must be positive");
  if (batch_size == 0) throw ContractViolation("batch_size must be positive");
  if (max_epochs == 0) throw ContractViolation("max_epochs must be positive");
  if (convergence_interval == 0) throw ContractViolation("convergence_interval must be >= 1");
  if (!(convergence_tolerance > 0.0)) throw ContractViolation("convergence_tolerance must be positive");
}

double sigmoid(double z) noexcept {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

namespace {

void check_dims(const ModelParams& params, const LabeledBatch& batch) {
  if (params.dim() != batch.dim())
    throw ContractViolation("model dimension " + std::to_string(params.dim()) +
                            " does not match batch dimension " + std::to_string(batch.dim()));
}

// log(1 + e^z) without overflow.
double softplus(double z) noexcept {
  return z > 0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z));
}

}  // namespace

double forward_loss(const ModelParams& params, const LabeledBatch& batch) {
  check_dims(params, batch);
  double total = 0.0;
  for (std::size_t r = 0; r < batch.rows(); ++r) {
    const double z = dot(params.weights.span(), batch.row(r)) + params.bias;
    // -[y log σ(z) + (1-y) log(1-σ(z))] = softplus(z) - y z
    total += softplus(z) - batch.label(r) * z;
  }
  return total / static_cast<double>(batch.rows());
}

DenseVector compute_gradient(const ModelParams& params, const LabeledBatch& batch) {
  check_dims(params, batch);
  const std::size_t dim = batch.dim();
  DenseVector grad(dim + 1);
  for (std::size_t r = 0; r < batch.rows(); ++r) {
    const auto x = batch.row(r);
    const double residual = sigmoid(dot(params.weights.span(), x) + params.bias) - batch.label(r);
    for (std::size_t j = 0; j < dim; ++j) grad[j] += residual * x[j];
    grad[dim] += residual;
  }
  const double n = static_cast<double>(batch.rows());
  for (std::size_t j = 0; j <= dim; ++j) grad[j] /= n;
  return grad;
}

DenseVector sgd_step_flat(const DenseVector& flat_params, const DenseVector& grad,
                          double learning_rate) {
  if (grad.size() != flat_params.size())
    throw ContractViolation("sgd_step: gradient length " + std::to_string(grad.size()) +
                            " does not match parameter length " +
                            std::to_string(flat_params.size()));
  DenseVector out(flat_params.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = flat_params[i] - learning_rate * grad[i];
  return out;
}

ModelParams sgd_step(const ModelParams& params, const DenseVector& grad, double learning_rate) {
  return ModelParams::unflatten(sgd_step_flat(params.flatten(), grad, learning_rate));
}

double accuracy(const ModelParams& params, const LabeledBatch& batch) {
  check_dims(params, batch);
  std::size_t correct = 0;
  for (std::size_t r = 0; r < batch.rows(); ++r) {
    const double z = dot(params.weights.span(), batch.row(r)) + params.bias;
    const int predicted = z >= 0.0 ? 1 : 0;
    if (predicted == batch.label(r)) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(batch.rows());
}

std::pair<std::size_t, std::size_t> partition_range(std::size_t rows, std::size_t n_peers,
                                                    std::size_t rank) {
  if (n_peers == 0) throw ContractViolation("partition: n_peers must be positive");
  if (rank >= n_peers)
    throw ContractViolation("partition: rank " + std::to_string(rank) + " out of range");
  if (rows < n_peers) throw ContractViolation("partition: fewer rows than peers");
  const std::size_t base = rows / n_peers;
  const std::size_t extra = rows % n_peers;
  const std::size_t begin = rank * base + std::min(rank, extra);
  const std::size_t len = base + (rank < extra ? 1 : 0);
  return {begin, begin + len};
}

LabeledBatch partition_dataset(const LabeledBatch& data, std::size_t n_peers, std::size_t rank) {
  const auto [begin, end] = partition_range(data.rows(), n_peers, rank);
  return data.slice(begin, end);
}

std::vector<LabeledBatch> shard(const LabeledBatch& peer_data, std::size_t batch_size) {
  if (batch_size == 0) throw ContractViolation("shard: batch_size must be >= 1");
  std::vector<LabeledBatch> out;
  for (std::size_t begin = 0; begin < peer_data.rows(); begin += batch_size)
    out.push_back(peer_data.slice(begin, std::min(begin + batch_size, peer_data.rows())));
  return out;
}

LabeledBatch make_two_gaussians(const SyntheticSpec& spec, std::uint64_t seed) {
  if (spec.samples == 0 || spec.dim == 0) throw ContractViolation("synthetic data: empty shape");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> noise(0.0, spec.noise_sigma);
  std::bernoulli_distribution coin(0.5);
  std::vector<double> features;
  features.reserve(spec.samples * spec.dim);
  std::vector<int> labels;
  labels.reserve(spec.samples);
  for (std::size_t r = 0; r < spec.samples; ++r) {
    const int y = coin(rng) ? 1 : 0;
    const double centre = y == 1 ? spec.separation : -spec.separation;
    for (std::size_t j = 0; j < spec.dim; ++j) features.push_back(centre + noise(rng));
    labels.push_back(y);
  }
  return LabeledBatch(spec.dim, std::move(features), std::move(labels));
}

}  // namespace peerlace
