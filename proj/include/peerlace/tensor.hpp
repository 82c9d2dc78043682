#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace peerlace {

// Raised when a caller breaks a documented precondition (shape mismatch,
// out-of-range rank, empty input).
class ContractViolation : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Flat vector of doubles. Used for gradients and for flattened model
// parameters (weights followed by bias).
class DenseVector {
 public:
  DenseVector() = default;
  explicit DenseVector(std::size_t len, double fill = 0.0) : values_(len, fill) {}
  explicit DenseVector(std::vector<double> values) : values_(std::move(values)) {}
  DenseVector(std::initializer_list<double> values) : values_(values) {}

  std::size_t size() const noexcept { return values_.size(); }
  bool empty() const noexcept { return values_.empty(); }

  double& operator[](std::size_t i) { return values_[i]; }
  double operator[](std::size_t i) const { return values_[i]; }

  std::span<double> span() noexcept { return values_; }
  std::span<const double> span() const noexcept { return values_; }
  const std::vector<double>& values() const noexcept { return values_; }

  auto begin() const noexcept { return values_.begin(); }
  auto end() const noexcept { return values_.end(); }

  bool all_finite() const noexcept;

  friend bool operator==(const DenseVector&, const DenseVector&) = default;

 private:
  std::vector<double> values_;
};

double dot(std::span<const double> a, std::span<const double> b);
double squared_norm(std::span<const double> v);
double l2_distance(std::span<const double> a, std::span<const double> b);

struct ModelParams {
  DenseVector weights;
  double bias = 0.0;

  std::size_t dim() const noexcept { return weights.size(); }

  // weights ‖ bias, the layout stores and gradients use.
  DenseVector flatten() const;
  static ModelParams unflatten(const DenseVector& flat);

  friend bool operator==(const ModelParams&, const ModelParams&) = default;
};

// Row-major feature matrix with binary labels.
class LabeledBatch {
 public:
  LabeledBatch() = default;
  LabeledBatch(std::size_t dim, std::vector<double> features, std::vector<int> labels);

  std::size_t rows() const noexcept { return labels_.size(); }
  std::size_t dim() const noexcept { return dim_; }
  std::span<const double> row(std::size_t r) const {
    return std::span<const double>(features_).subspan(r * dim_, dim_);
  }
  int label(std::size_t r) const { return labels_[r]; }
  const std::vector<int>& labels() const noexcept { return labels_; }
  const std::vector<double>& features() const noexcept { return features_; }

  // Rows [begin, end).
  LabeledBatch slice(std::size_t begin, std::size_t end) const;

  friend bool operator==(const LabeledBatch&, const LabeledBatch&) = default;

 private:
  std::size_t dim_ = 0;
  std::vector<double> features_;
  std::vector<int> labels_;
};

struct TrainingConfig {
  double learning_rate = 0.5;
  std::size_t batch_size = 32;
  std::size_t max_epochs = 200;
  std::size_t convergence_interval = 10;
  double convergence_tolerance = 1e-9;

  void validate() const;
};

double sigmoid(double z) noexcept;

// Mean binary cross-entropy of sigmoid(w·x + b).
double forward_loss(const ModelParams& params, const LabeledBatch& batch);

// Gradient of forward_loss with respect to (weights ‖ bias); length dim + 1.
DenseVector compute_gradient(const ModelParams& params, const LabeledBatch& batch);

// w' = w - learning_rate * g over the flattened layout.
ModelParams sgd_step(const ModelParams& params, const DenseVector& grad, double learning_rate);

// Same update applied directly to flattened parameters. sgd_step is defined
// in terms of this so both produce identical bits.
DenseVector sgd_step_flat(const DenseVector& flat_params, const DenseVector& grad,
                          double learning_rate);

double accuracy(const ModelParams& params, const LabeledBatch& batch);

// Contiguous slice for `rank`; the first (rows mod n_peers) ranks get one extra row.
LabeledBatch partition_dataset(const LabeledBatch& data, std::size_t n_peers, std::size_t rank);

// Row range [begin, end) that partition_dataset returns for `rank`.
std::pair<std::size_t, std::size_t> partition_range(std::size_t rows, std::size_t n_peers,
                                                    std::size_t rank);

std::vector<LabeledBatch> shard(const LabeledBatch& peer_data, std::size_t batch_size);

struct SyntheticSpec {
  std::size_t samples = 2000;
  std::size_t dim = 8;
  // Per-coordinate offset of each class mean from the origin.
  double separation = 0.75;
  double noise_sigma = 1.0;
};

// Two isotropic Gaussians with means ±separation·1; each row's class is a fair
// coin flip from the seeded generator.
LabeledBatch make_two_gaussians(const SyntheticSpec& spec, std::uint64_t seed);

}  // namespace peerlace
