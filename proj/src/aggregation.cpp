#include "peerlace/aggregation.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace peerlace::aggregation {

std::string_view to_string(RuleKind kind) noexcept {
  switch (kind) {
    case RuleKind::Average: return "average";
    case RuleKind::MarMed: return "marmed";
    case RuleKind::GeoMed: return "geomed";
    case RuleKind::Meamed: return "meamed";
    case RuleKind::Zeno: return "zeno";
  }
  return "unknown";
}

RuleKind rule_from_string(std::string_view name) {
  for (RuleKind k : {RuleKind::Average, RuleKind::MarMed, RuleKind::GeoMed, RuleKind::Meamed,
                     RuleKind::Zeno})
    if (to_string(k) == name) return k;
  throw ContractViolation("unknown aggregation rule '" + std::string(name) + "'");
}

namespace {

std::size_t check_inputs(std::span<const DenseVector> grads, const char* who) {
  if (grads.empty()) throw ContractViolation(std::string(who) + ": no gradients");
  const std::size_t len = grads.front().size();
  if (len == 0) throw ContractViolation(std::string(who) + ": empty gradient");
  for (const auto& g : grads) {
    if (g.size() != len) throw ContractViolation(std::string(who) + ": length mismatch");
    if (!g.all_finite()) throw ContractViolation(std::string(who) + ": non-finite input");
  }
  return len;
}

void check_bound(std::size_t b, std::size_t n, const char* who) {
  if (b >= n)
    throw ContractViolation(std::string(who) + ": byzantine bound " + std::to_string(b) +
                            " must be below input count " + std::to_string(n));
}

// Mean of grads[i] for the given indices, summed in ascending index order.
DenseVector mean_of(std::span<const DenseVector> grads, std::vector<std::size_t> idx) {
  std::sort(idx.begin(), idx.end());
  DenseVector out(grads.front().size());
  for (std::size_t i : idx)
    for (std::size_t j = 0; j < out.size(); ++j) out[j] += grads[i][j];
  const double n = static_cast<double>(idx.size());
  for (std::size_t j = 0; j < out.size(); ++j) out[j] /= n;
  return out;
}

double median_of(std::vector<double> column) {
  const std::size_t n = column.size();
  std::sort(column.begin(), column.end());
  if (n % 2 == 1) return column[n / 2];
  return (column[n / 2 - 1] + column[n / 2]) / 2.0;
}

}  // namespace

DenseVector average(std::span<const DenseVector> grads) {
  check_inputs(grads, "average");
  std::vector<std::size_t> all(grads.size());
  std::iota(all.begin(), all.end(), std::size_t{0});
  return mean_of(grads, std::move(all));
}

DenseVector marmed(std::span<const DenseVector> grads) {
  const std::size_t len = check_inputs(grads, "marmed");
  DenseVector out(len);
  std::vector<double> column(grads.size());
  for (std::size_t j = 0; j < len; ++j) {
    for (std::size_t i = 0; i < grads.size(); ++i) column[i] = grads[i][j];
    out[j] = median_of(column);
  }
  return out;
}

double geomed_objective(std::span<const double> x, std::span<const DenseVector> grads) {
  double total = 0.0;
  for (const auto& g : grads) total += l2_distance(x, g.span());
  return total;
}

namespace {

// x - H^{-1} grad for the distance-sum objective. H = sum_i (I - u_i u_i^T) / d_i
// is a multiple of the identity minus a rank-n term, so conjugate gradients
// finish in at most n + 1 products. Returns an empty vector if x touches an input.
DenseVector newton_step(const DenseVector& x, std::span<const DenseVector> grads) {
  const std::size_t len = x.size();
  std::vector<DenseVector> units;
  std::vector<double> inv_d;
  DenseVector grad(len);
  for (const auto& g : grads) {
    const double d = l2_distance(x.span(), g.span());
    if (d < 1e-12) return {};
    DenseVector u(len);
    for (std::size_t j = 0; j < len; ++j) {
      u[j] = (x[j] - g[j]) / d;
      grad[j] += u[j];
    }
    units.push_back(std::move(u));
    inv_d.push_back(1.0 / d);
  }
  auto hess = [&](const DenseVector& v) {
    DenseVector out(len);
    for (std::size_t i = 0; i < units.size(); ++i) {
      const double proj = dot(units[i].span(), v.span());
      for (std::size_t j = 0; j < len; ++j) out[j] += inv_d[i] * (v[j] - proj * units[i][j]);
    }
    return out;
  };

  DenseVector sol(len), r = grad, p = grad;
  double rr = squared_norm(r.span());
  const double stop = 1e-30 * std::max(rr, 1e-300);
  for (std::size_t k = 0; k <= units.size() + 1 && rr > stop; ++k) {
    const DenseVector hp = hess(p);
    const double php = dot(p.span(), hp.span());
    if (!(php > 0.0)) break;
    const double alpha = rr / php;
    for (std::size_t j = 0; j < len; ++j) {
      sol[j] += alpha * p[j];
      r[j] -= alpha * hp[j];
    }
    const double rr_next = squared_norm(r.span());
    for (std::size_t j = 0; j < len; ++j) p[j] = r[j] + (rr_next / rr) * p[j];
    rr = rr_next;
  }
  DenseVector out(len);
  for (std::size_t j = 0; j < len; ++j) out[j] = x[j] - sol[j];
  return out.all_finite() ? out : DenseVector{};
}

}  // namespace

DenseVector geomed(std::span<const DenseVector> grads, double tolerance, std::size_t max_iter) {
  const std::size_t len = check_inputs(grads, "geomed");
  if (!(tolerance > 0.0)) throw ContractViolation("geomed: tolerance must be positive");
  if (grads.size() <= 2) return average(grads);

  constexpr double kSingularGuard = 1e-12;
  DenseVector x = average(grads);
  double fx = geomed_objective(x.span(), grads);
  for (std::size_t iter = 0; iter < max_iter; ++iter) {
    // Points closer than the guard count as coincident with x and drop out
    // of the weighted mean.
    DenseVector next(len), pull(len);
    double denom = 0.0;
    std::size_t coincident = 0;
    for (const auto& g : grads) {
      const double d = l2_distance(x.span(), g.span());
      if (d < kSingularGuard) {
        ++coincident;
        continue;
      }
      for (std::size_t j = 0; j < len; ++j) {
        next[j] += g[j] / d;
        pull[j] += (g[j] - x[j]) / d;
      }
      denom += 1.0 / d;
    }
    if (denom == 0.0) break;
    for (std::size_t j = 0; j < len; ++j) next[j] /= denom;
    if (coincident > 0) {
      // x sits on input points. It is optimal when the others pull with
      // total force at most their count; otherwise step off towards the mean.
      const double r = std::sqrt(squared_norm(pull.span()));
      const double c = static_cast<double>(coincident);
      if (r <= c) break;
      for (std::size_t j = 0; j < len; ++j) next[j] = (1.0 - c / r) * next[j] + (c / r) * x[j];
    }
    double f_next = geomed_objective(next.span(), grads);

    // Weiszfeld zigzags when the minimiser sits in a narrow valley next to an
    // input point. A damped Newton step is tried as well; the better one wins.
    if (coincident == 0) {
      DenseVector newton = newton_step(x, grads);
      for (int halvings = 0; halvings < 40 && newton.size() == len; ++halvings) {
        const double f_newton = geomed_objective(newton.span(), grads);
        if (f_newton < f_next) {
          next = std::move(newton);
          f_next = f_newton;
          break;
        }
        for (std::size_t j = 0; j < len; ++j) newton[j] = x[j] + 0.5 * (newton[j] - x[j]);
      }
    }

    if (!(f_next < fx)) break;
    const double step = l2_distance(next.span(), x.span());
    x = std::move(next);
    fx = f_next;
    if (step < tolerance) break;
  }

  // Weiszfeld can stall next to an input point that is not optimal, and the
  // optimum can itself be an input point. Never return worse than the best input.
  double best = geomed_objective(x.span(), grads);
  const DenseVector* best_input = nullptr;
  for (const auto& g : grads) {
    const double obj = geomed_objective(g.span(), grads);
    if (obj < best) {
      best = obj;
      best_input = &g;
    }
  }
  return best_input ? *best_input : x;
}

DenseVector meamed(std::span<const DenseVector> grads, std::size_t b) {
  const std::size_t len = check_inputs(grads, "meamed");
  const std::size_t n = grads.size();
  check_bound(b, n, "meamed");
  if (b == 0) return average(grads);

  const std::size_t keep = n - b;
  DenseVector out(len);
  std::vector<double> column(n);
  std::vector<std::size_t> order(n);
  for (std::size_t j = 0; j < len; ++j) {
    for (std::size_t i = 0; i < n; ++i) column[i] = grads[i][j];
    const double m = median_of(column);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t c) {
      return std::abs(column[a] - m) < std::abs(column[c] - m);
    });
    std::vector<std::size_t> chosen(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(keep));
    std::sort(chosen.begin(), chosen.end());
    double sum = 0.0;
    for (std::size_t i : chosen) sum += column[i];
    out[j] = sum / static_cast<double>(keep);
  }
  return out;
}

double zeno_score(const DenseVector& grad, const ModelParams& params, const ZenoConfig& cfg) {
  const double before = forward_loss(params, cfg.validation_batch);
  const double after = forward_loss(sgd_step(params, grad, cfg.learning_rate), cfg.validation_batch);
  return before - after - cfg.rho * squared_norm(grad.span());
}

DenseVector zeno(std::span<const DenseVector> grads, const ModelParams& params,
                 const ZenoConfig& cfg, std::size_t b) {
  check_inputs(grads, "zeno");
  const std::size_t n = grads.size();
  check_bound(b, n, "zeno");
  if (cfg.validation_batch.rows() == 0) throw ContractViolation("zeno: empty validation batch");
  if (b == 0) return average(grads);

  std::vector<double> scores(n);
  for (std::size_t i = 0; i < n; ++i) scores[i] = zeno_score(grads[i], params, cfg);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t c) { return scores[a] > scores[c]; });
  order.resize(n - b);
  return mean_of(grads, std::move(order));
}

DenseVector apply(const AggregationRule& rule, std::span<const DenseVector> grads,
                  const ModelParams* params, const ZenoConfig* zeno_cfg) {
  // With fewer inputs than b + 1 the bound is clamped so a shrunken network
  // still aggregates.
  const std::size_t b =
      grads.empty() ? 0 : std::min(rule.byzantine_bound, grads.size() - 1);
  switch (rule.kind) {
    case RuleKind::Average: return average(grads);
    case RuleKind::MarMed: return marmed(grads);
    case RuleKind::GeoMed: return geomed(grads, rule.geomed_tolerance, rule.geomed_max_iter);
    case RuleKind::Meamed: return meamed(grads, b);
    case RuleKind::Zeno:
      if (!params || !zeno_cfg) throw ContractViolation("zeno: model and validation config required");
      return zeno(grads, *params, *zeno_cfg, b);
  }
  throw ContractViolation("unknown aggregation rule");
}

}  // namespace peerlace::aggregation
