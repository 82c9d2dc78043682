#include "peerlace/fault_attack.hpp"

namespace peerlace::faults {

std::string_view to_string(FaultTiming t) noexcept {
  return t == FaultTiming::EpochStart ? "epoch_start" : "post_heartbeat";
}

std::string_view to_string(AttackKind k) noexcept {
  switch (k) {
    case AttackKind::None: return "none";
    case AttackKind::SignFlip: return "signflip";
    case AttackKind::GaussianNoise: return "noise";
  }
  return "unknown";
}

DenseVector sign_flip(const DenseVector& g, double epsilon) {
  if (!(epsilon > 0.0)) throw ContractViolation("sign_flip: epsilon must be positive");
  DenseVector out(g.size());
  for (std::size_t i = 0; i < g.size(); ++i) out[i] = -epsilon * g[i];
  return out;
}

DenseVector gaussian_noise(const DenseVector& g, double sigma, std::mt19937_64& rng) {
  if (!(sigma >= 0.0)) throw ContractViolation("gaussian_noise: sigma must be non-negative");
  if (sigma == 0.0) return g;
  std::normal_distribution<double> eta(0.0, sigma);
  DenseVector out(g.size());
  for (std::size_t i = 0; i < g.size(); ++i) out[i] = g[i] + eta(rng);
  return out;
}

DenseVector apply_attack(const AttackSpec& spec, int rank, const DenseVector& local_average,
                         std::mt19937_64& rng) {
  if (!spec.targets(rank)) return local_average;
  switch (spec.kind) {
    case AttackKind::SignFlip: return sign_flip(local_average, spec.epsilon);
    case AttackKind::GaussianNoise: return gaussian_noise(local_average, spec.sigma, rng);
    case AttackKind::None: break;
  }
  return local_average;
}

void validate_schedule(const std::vector<FaultEvent>& schedule, const std::set<int>& initial_ranks) {
  std::set<int> known = initial_ranks;
  for (const auto& e : schedule)
    if (e.kind == FaultKind::JoinPeer) {
      if (known.contains(e.rank))
        throw ContractViolation("join of rank " + std::to_string(e.rank) + " which already exists");
      known.insert(e.rank);
    }
  std::set<int> crashed;
  for (const auto& e : schedule) {
    if (e.at_epoch < 1) throw ContractViolation("fault events start at epoch 1");
    if (e.kind == FaultKind::CrashPeer) {
      if (!known.contains(e.rank))
        throw ContractViolation("crash of unknown rank " + std::to_string(e.rank));
      if (!crashed.insert(e.rank).second)
        throw ContractViolation("rank " + std::to_string(e.rank) + " crashes twice");
    }
  }
}

void validate_attack(const AttackSpec& spec, const std::set<int>& ranks) {
  if (spec.kind == AttackKind::None) return;
  if (spec.kind == AttackKind::SignFlip && !(spec.epsilon > 0.0))
    throw ContractViolation("sign-flip epsilon must be positive");
  if (spec.kind == AttackKind::GaussianNoise && !(spec.sigma >= 0.0))
    throw ContractViolation("noise sigma must be non-negative");
  for (int r : spec.malicious_ranks)
    if (!ranks.contains(r))
      throw ContractViolation("malicious rank " + std::to_string(r) + " is not a peer");
}

std::vector<FaultEvent> crashes_at(const std::vector<FaultEvent>& schedule, std::size_t epoch,
                                   FaultTiming timing) {
  std::vector<FaultEvent> out;
  for (const auto& e : schedule)
    if (e.kind == FaultKind::CrashPeer && e.at_epoch == epoch && e.timing == timing)
      out.push_back(e);
  return out;
}

std::vector<FaultEvent> joins_after(const std::vector<FaultEvent>& schedule, std::size_t epoch) {
  std::vector<FaultEvent> out;
  for (const auto& e : schedule)
    if (e.kind == FaultKind::JoinPeer && e.at_epoch == epoch) out.push_back(e);
  return out;
}

}  // namespace peerlace::faults
