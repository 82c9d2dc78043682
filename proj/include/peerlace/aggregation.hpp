#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "peerlace/tensor.hpp"

namespace peerlace::aggregation {

enum class RuleKind { Average, MarMed, GeoMed, Meamed, Zeno };

std::string_view to_string(RuleKind kind) noexcept;
RuleKind rule_from_string(std::string_view name);

struct ZenoConfig {
  double rho = 1e-4;
  double learning_rate = 0.5;
  LabeledBatch validation_batch;
};

struct AggregationRule {
  RuleKind kind = RuleKind::Average;
  std::size_t byzantine_bound = 1;
  double geomed_tolerance = 1e-8;
  std::size_t geomed_max_iter = 200;
};

// Coordinate-wise arithmetic mean. Summation runs in input order.
DenseVector average(std::span<const DenseVector> grads);

// Coordinate-wise median; even counts average the two middle order statistics.
DenseVector marmed(std::span<const DenseVector> grads);

// Approximate minimiser of sum_i ||x - g_i|| by Weiszfeld iteration started
// from the mean. Two inputs return their midpoint.
DenseVector geomed(std::span<const DenseVector> grads, double tolerance = 1e-8,
                   std::size_t max_iter = 200);

// Sum of Euclidean distances from x to every input.
double geomed_objective(std::span<const double> x, std::span<const DenseVector> grads);

// Per coordinate: mean of the n - b values closest to the coordinate median
// (ties go to the lower input index).
DenseVector meamed(std::span<const DenseVector> grads, std::size_t b);

// Descent score of one candidate gradient on the validation batch.
double zeno_score(const DenseVector& grad, const ModelParams& params, const ZenoConfig& cfg);

// Averages the n - b highest-scoring gradients (ties go to the lower index).
DenseVector zeno(std::span<const DenseVector> grads, const ModelParams& params,
                 const ZenoConfig& cfg, std::size_t b);

// Dispatches on rule.kind. Zeno requires both params and zeno_cfg.
DenseVector apply(const AggregationRule& rule, std::span<const DenseVector> grads,
                  const ModelParams* params = nullptr, const ZenoConfig* zeno_cfg = nullptr);

}  // namespace peerlace::aggregation
