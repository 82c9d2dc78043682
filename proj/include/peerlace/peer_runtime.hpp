#pragma once

#include <atomic>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <random>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "peerlace/aggregation.hpp"
#include "peerlace/crypto.hpp"
#include "peerlace/fault_attack.hpp"
#include "peerlace/identity.hpp"
#include "peerlace/msgqueue.hpp"
#include "peerlace/scenario.hpp"
#include "peerlace/tensor.hpp"

namespace peerlace::runtime {

using ShardId = std::size_t;
// rank → shard ids owned, ascending.
using ShardOwnership = std::map<int, std::vector<ShardId>>;

struct EpochConfig {
  std::size_t epoch = 1;
  std::size_t parallelism = 1;
  bool convergence_check = false;
  std::set<int> active_ranks;

  friend bool operator==(const EpochConfig&, const EpochConfig&) = default;
};

inline bool convergence_due(std::size_t epoch, std::size_t interval) {
  return interval > 0 && epoch % interval == 0;
}

// Logical clock shared by every peer of a simulation.
class SimClock {
 public:
  std::uint64_t now() const noexcept { return ticks_.load(); }
  void advance(std::uint64_t n = 1) noexcept { ticks_.fetch_add(n); }

 private:
  std::atomic<std::uint64_t> ticks_{0};
};

struct HeartbeatResult {
  std::set<int> active;  // includes self
  std::set<int> newly_inactive;
  std::size_t probes = 0;
};

enum class BarrierStatus { Complete, TimedOut };

struct BarrierResult {
  BarrierStatus status = BarrierStatus::Complete;
  std::set<int> seen;
  std::set<int> missing;
  std::size_t observed_count = 0;
  std::uint64_t waited_ticks = 0;
};

// Waits until the queue holds a completion message from every expected rank
// (count >= expected.size()) or `timeout` ticks pass. `tick` is called once
// per unsatisfied check; it advances the logical clock and, in concurrent
// mode, also yields real time.
BarrierResult sync_barrier(const mq::Queue& queue, const std::set<int>& expected,
                           std::uint64_t timeout, const std::function<void()>& tick);

// Ranks listed as inactive by every list; empty input yields empty output.
std::set<int> consensus_inactive(const std::map<int, std::set<int>>& local_lists);

// Moves every failed peer's shards to the active peers: the failed shards
// (taken in rank order) are cut into |active| contiguous segments assigned in
// ascending rank order, lower ranks absorbing the remainder.
ShardOwnership redistribute(const std::set<int>& failed, const std::set<int>& active,
                            const ShardOwnership& ownership);

// Gives a joining rank a share of the members' shards: each member hands over
// the last floor(own / (members + 1)) of its shards. If that gives nothing,
// the largest holder able to spare one hands over its last shard.
ShardOwnership rebalance_for_join(int new_rank, const ShardOwnership& ownership);

// Validation losses recorded at successive convergence checks. True when the
// change between the last two checks is below the tolerance in magnitude.
bool convergence_check(std::span<const double> loss_history, const TrainingConfig& cfg);

EpochConfig trigger_next_epoch(const EpochConfig& current, int self_rank,
                               const std::set<int>& consensus_result,
                               const std::set<int>& joined, const ShardOwnership& ownership,
                               std::size_t convergence_interval);

// Everything a peer's epoch workflow reads that is shared across peers.
struct SharedContext {
  identity::Network* network = nullptr;
  const std::vector<LabeledBatch>* shards = nullptr;
  aggregation::AggregationRule rule;
  const aggregation::ZenoConfig* zeno = nullptr;
  const LabeledBatch* validation = nullptr;
  TrainingConfig training;
  HeartbeatConfig heartbeat;
  std::uint64_t barrier_timeout = 100;
  faults::AttackSpec attack;
  SimClock* clock = nullptr;
  bool concurrent = false;
};

inline constexpr const char* kModelKey = "model";
inline constexpr const char* kAggregateKey = "aggregate";
inline constexpr const char* kSyncQueue = "sync-queue";
std::string grad_key(std::size_t index);
std::string local_average_key(std::size_t epoch);

// One peer's epoch state machine.
class PeerRuntime {
 public:
  PeerRuntime(identity::PeerNode& node, const SharedContext& ctx, ShardOwnership ownership,
              EpochConfig first_epoch, std::uint64_t attack_seed);

  int rank() const noexcept { return node_.rank(); }
  identity::PeerNode& node() noexcept { return node_; }
  const EpochConfig& epoch_config() const noexcept { return epoch_; }
  const ShardOwnership& ownership() const noexcept { return ownership_; }
  const std::set<int>& inactive_local() const noexcept { return inactive_local_; }
  const std::set<int>& epoch_active() const noexcept { return epoch_active_; }
  std::vector<ShardId> assigned_shards() const;

  bool crashed() const noexcept { return crashed_; }
  void crash();

  // Clears stale completion messages.
  void begin_epoch();
  HeartbeatResult heartbeat_check();
  // Returns the mean training loss over this epoch's shards.
  double compute_phase();
  void local_average_phase();
  BarrierResult wait_for_peers();
  DenseVector aggregate_phase();
  void update_phase();
  // Runs only when the epoch config asks for it; returns true on convergence.
  std::optional<bool> convergence_phase();
  void publish_inactive_list();
  // Fetches every active peer's published list and intersects them.
  std::set<int> consensus_phase();
  void apply_consensus(const std::set<int>& removed);
  void apply_join(int new_rank);
  void advance_epoch(const std::set<int>& removed, const std::set<int>& joined);

  // Unreachable peers noticed while fetching gradients this epoch.
  const std::set<int>& unreachable_during_aggregation() const noexcept { return unreachable_; }
  const BarrierResult& last_barrier() const noexcept { return last_barrier_; }

  DenseVector model_snapshot();

 private:
  PeerStore* store_of(int rank);
  std::string password_of(int rank);

  identity::PeerNode& node_;
  const SharedContext& ctx_;
  ShardOwnership ownership_;
  EpochConfig epoch_;
  std::set<int> epoch_active_;
  std::set<int> inactive_local_;
  std::set<int> unreachable_;
  std::vector<double> validation_losses_;
  BarrierResult last_barrier_;
  std::mt19937_64 attack_rng_;
  bool crashed_ = false;
};

struct EpochRow {
  std::size_t epoch = 0;
  int peer = 0;
  std::size_t active_count = 0;
  double train_loss = 0.0;
  double val_accuracy = 0.0;
  std::uint64_t bytes_in = 0;
  std::uint64_t bytes_out = 0;
  std::vector<std::string> events;
};

struct RunSummary {
  double final_accuracy = 0.0;
  double final_train_loss = 0.0;
  std::size_t epochs_run = 0;
  std::optional<std::size_t> epochs_to_threshold;
  std::optional<std::size_t> detection_epoch;
  std::optional<std::size_t> consensus_epoch;
  std::optional<std::size_t> recovery_epoch;
  std::optional<std::size_t> converged_epoch;
  std::set<int> crashed;
  std::set<int> joined;
  std::map<int, std::size_t> final_parallelism;
  std::size_t join_messages = 0;
};

struct RunMetrics {
  std::string scenario;
  std::string rule;
  std::vector<EpochRow> rows;
  RunSummary summary;
  std::map<int, TransferLedger> ledgers;  // final per-peer snapshots
};

// Per-epoch snapshot for invariant checks.
struct EpochTrace {
  std::size_t epoch = 0;
  std::map<int, std::set<int>> active_sets;
  std::map<int, ShardOwnership> ownership_before;
  std::map<int, BarrierResult> barriers;
  std::map<int, std::size_t> barrier_expected;
  std::map<int, std::set<int>> inactive_lists;
  std::map<int, std::set<int>> consensus;
  std::map<int, DenseVector> models;
  std::map<int, DenseVector> aggregates;
};

// Runs a whole scenario: network bootstrap, model initialisation, epochs with
// fault injection, and metric collection.
class Simulation {
 public:
  explicit Simulation(Scenario scenario);
  ~Simulation();

  RunMetrics run();

  const std::vector<EpochTrace>& trace() const noexcept { return trace_; }
  identity::Network& network() noexcept { return *network_; }
  const std::vector<LabeledBatch>& shards() const noexcept { return shards_; }
  const std::map<int, std::unique_ptr<PeerRuntime>>& peers() const noexcept { return runtimes_; }
  const LabeledBatch& validation() const noexcept { return validation_; }

 private:
  void bootstrap();
  void run_epoch(std::size_t epoch, RunMetrics& metrics, bool& stop);
  void crash(int rank, std::size_t epoch, std::vector<std::string>& events);
  void admit(int rank, std::size_t epoch, RunMetrics& metrics);
  template <class Fn>
  void for_each_live(Fn&& fn);

  Scenario scenario_;
  std::unique_ptr<crypto::CryptoProvider> provider_;
  mq::QueueService queues_;
  std::unique_ptr<identity::Network> network_;
  std::vector<LabeledBatch> shards_;
  LabeledBatch validation_;
  aggregation::ZenoConfig zeno_;
  SimClock clock_;
  SharedContext ctx_;
  std::map<int, std::unique_ptr<PeerRuntime>> runtimes_;
  std::map<int, TransferLedger> ledger_marks_;
  std::vector<EpochTrace> trace_;
  std::set<int> pending_join_events_;
  bool bootstrapped_ = false;
};

RunMetrics run_scenario(const Scenario& scenario);

}  // namespace peerlace::runtime
