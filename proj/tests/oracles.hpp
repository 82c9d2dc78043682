#pragma once

// Independent reference computations used only by tests. Nothing here calls
// into the code paths it is used to check.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <random>
#include <utility>
#include <vector>

#include "peerlace/tensor.hpp"

namespace oracle {

using peerlace::DenseVector;
using peerlace::LabeledBatch;
using peerlace::ModelParams;

// Mean cross-entropy written from the textbook form -[y ln p + (1-y) ln(1-p)].
inline double loss(const ModelParams& p, const LabeledBatch& b) {
  double total = 0.0;
  for (std::size_t r = 0; r < b.rows(); ++r) {
    double z = p.bias;
    for (std::size_t j = 0; j < b.dim(); ++j) z += p.weights[j] * b.row(r)[j];
    const double prob = 1.0 / (1.0 + std::exp(-z));
    total += b.label(r) == 1 ? -std::log(prob) : -std::log(1.0 - prob);
  }
  return total / static_cast<double>(b.rows());
}

// Central differences of `loss` over (weights ‖ bias).
inline std::vector<double> finite_difference_gradient(const ModelParams& p, const LabeledBatch& b,
                                                      double h = 1e-6) {
  std::vector<double> out(p.dim() + 1);
  for (std::size_t i = 0; i <= p.dim(); ++i) {
    ModelParams plus = p, minus = p;
    if (i < p.dim()) {
      plus.weights[i] += h;
      minus.weights[i] -= h;
    } else {
      plus.bias += h;
      minus.bias -= h;
    }
    out[i] = (loss(plus, b) - loss(minus, b)) / (2 * h);
  }
  return out;
}

// k-th smallest value (0-based) found by counting, no sorting.
inline double order_statistic(const std::vector<double>& xs, std::size_t k) {
  for (double candidate : xs) {
    std::size_t less = 0, less_equal = 0;
    for (double x : xs) {
      less += x < candidate;
      less_equal += x <= candidate;
    }
    if (less <= k && k < less_equal) return candidate;
  }
  return std::numeric_limits<double>::quiet_NaN();
}

inline double median(const std::vector<double>& xs) {
  const std::size_t n = xs.size();
  if (n % 2 == 1) return order_statistic(xs, n / 2);
  return (order_statistic(xs, n / 2 - 1) + order_statistic(xs, n / 2)) / 2.0;
}

inline DenseVector coordinate_median(const std::vector<DenseVector>& grads) {
  DenseVector out(grads.front().size());
  for (std::size_t j = 0; j < out.size(); ++j) {
    std::vector<double> col;
    for (const auto& g : grads) col.push_back(g[j]);
    out[j] = median(col);
  }
  return out;
}

// Keeps value i when fewer than n - b values beat it, where "beats" means
// strictly closer to the median, or equally close with a lower index.
// Kept values are summed in index order.
inline DenseVector mean_around_median(const std::vector<DenseVector>& grads, std::size_t b) {
  const std::size_t n = grads.size();
  const std::size_t keep = n - b;
  DenseVector out(grads.front().size());
  for (std::size_t j = 0; j < out.size(); ++j) {
    std::vector<double> col;
    for (const auto& g : grads) col.push_back(g[j]);
    const double m = median(col);
    double sum = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      std::size_t beaten_by = 0;
      for (std::size_t k = 0; k < n; ++k) {
        const double dk = std::abs(col[k] - m), di = std::abs(col[i] - m);
        if (dk < di || (dk == di && k < i)) ++beaten_by;
      }
      if (beaten_by < keep) sum += col[i];
    }
    out[j] = sum / static_cast<double>(keep);
  }
  return out;
}

inline double distance_sum(double x, double y, const std::vector<DenseVector>& pts) {
  double total = 0.0;
  for (const auto& p : pts) total += std::hypot(x - p[0], y - p[1]);
  return total;
}

// 2-D geometric median by grid search: evaluate a 41x41 grid over a box,
// recentre on the best node and shrink the box, until the spacing is tiny.
inline std::pair<double, double> grid_geometric_median(const std::vector<DenseVector>& pts) {
  double lo_x = pts[0][0], hi_x = lo_x, lo_y = pts[0][1], hi_y = lo_y;
  for (const auto& p : pts) {
    lo_x = std::min(lo_x, p[0]);
    hi_x = std::max(hi_x, p[0]);
    lo_y = std::min(lo_y, p[1]);
    hi_y = std::max(hi_y, p[1]);
  }
  double cx = (lo_x + hi_x) / 2, cy = (lo_y + hi_y) / 2;
  double half = std::max(hi_x - lo_x, hi_y - lo_y) / 2 + 1e-9;
  constexpr int kSteps = 40;
  while (half > 1e-11) {
    double best = std::numeric_limits<double>::infinity(), bx = cx, by = cy;
    const double step = 2 * half / kSteps;
    for (int i = 0; i <= kSteps; ++i)
      for (int k = 0; k <= kSteps; ++k) {
        const double x = cx - half + i * step, y = cy - half + k * step;
        const double f = distance_sum(x, y, pts);
        if (f < best) {
          best = f;
          bx = x;
          by = y;
        }
      }
    cx = bx;
    cy = by;
    half = 2 * step;
  }
  return {cx, cy};
}

inline LabeledBatch random_batch(std::mt19937_64& rng, std::size_t rows, std::size_t dim) {
  std::normal_distribution<double> n(0.0, 1.0);
  std::bernoulli_distribution coin(0.5);
  std::vector<double> f;
  std::vector<int> y;
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t j = 0; j < dim; ++j) f.push_back(n(rng));
    y.push_back(coin(rng) ? 1 : 0);
  }
  return LabeledBatch(dim, std::move(f), std::move(y));
}

inline ModelParams random_params(std::mt19937_64& rng, std::size_t dim, double scale = 1.0) {
  std::normal_distribution<double> n(0.0, scale);
  DenseVector w(dim);
  for (std::size_t j = 0; j < dim; ++j) w[j] = n(rng);
  return ModelParams{w, n(rng)};
}

inline DenseVector random_vector(std::mt19937_64& rng, std::size_t len, double scale = 1.0) {
  std::normal_distribution<double> n(0.0, scale);
  DenseVector v(len);
  for (std::size_t j = 0; j < len; ++j) v[j] = n(rng);
  return v;
}

inline double relative_error(const std::vector<double>& a, const std::vector<double>& b) {
  double diff = 0.0, ref = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    diff += (a[i] - b[i]) * (a[i] - b[i]);
    ref += b[i] * b[i];
  }
  return std::sqrt(diff) / std::max(std::sqrt(ref), 1e-8);
}

}  // namespace oracle
