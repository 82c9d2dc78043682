#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "peerlace/tensor.hpp"

namespace peerlace::faults {

enum class FaultKind { CrashPeer, JoinPeer };
enum class FaultTiming { EpochStart, PostHeartbeat };

std::string_view to_string(FaultTiming t) noexcept;

// CrashPeer takes the peer's store down and halts its task at `timing` of
// epoch `at_epoch`. JoinPeer admits `rank` after epoch `at_epoch` completes.
struct FaultEvent {
  FaultKind kind = FaultKind::CrashPeer;
  int rank = 0;
  std::size_t at_epoch = 1;
  FaultTiming timing = FaultTiming::PostHeartbeat;
};

enum class AttackKind { None, SignFlip, GaussianNoise };

std::string_view to_string(AttackKind k) noexcept;

struct AttackSpec {
  AttackKind kind = AttackKind::None;
  double epsilon = 10.0;
  double sigma = 1.0;
  std::set<int> malicious_ranks;

  bool targets(int rank) const { return kind != AttackKind::None && malicious_ranks.contains(rank); }
};

// -epsilon * g
DenseVector sign_flip(const DenseVector& g, double epsilon);

// g + eta with eta_j ~ N(0, sigma^2) drawn from rng.
DenseVector gaussian_noise(const DenseVector& g, double sigma, std::mt19937_64& rng);

// Applies `spec` to a published local average. Identity for non-malicious ranks.
DenseVector apply_attack(const AttackSpec& spec, int rank, const DenseVector& local_average,
                         std::mt19937_64& rng);

// Checks ranks and epochs against the starting membership. Throws
// ContractViolation describing the first problem found.
void validate_schedule(const std::vector<FaultEvent>& schedule, const std::set<int>& initial_ranks);
void validate_attack(const AttackSpec& spec, const std::set<int>& ranks);

// Events of the schedule that fire at (epoch, timing) for crashes, or after
// `epoch` for joins.
std::vector<FaultEvent> crashes_at(const std::vector<FaultEvent>& schedule, std::size_t epoch,
                                   FaultTiming timing);
std::vector<FaultEvent> joins_after(const std::vector<FaultEvent>& schedule, std::size_t epoch);

}  // namespace peerlace::faults
