#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "peerlace/aggregation.hpp"
#include "peerlace/fault_attack.hpp"
#include "peerlace/peerstore.hpp"
#include "peerlace/tensor.hpp"

namespace peerlace {

// Invalid scenario or command-line configuration.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct HeartbeatConfig {
  std::uint64_t timeout = 5;  // logical ticks per unanswered probe
  std::size_t trials = 3;
};

struct DatasetSpec {
  std::size_t samples = 2000;
  std::size_t dim = 8;
  double separation = 0.75;
  double noise_sigma = 1.0;
  std::size_t validation_samples = 500;
  std::size_t zeno_samples = 64;
  // Defaults to a sub-seed of the run seed.
  std::optional<std::uint64_t> seed;
};

enum class RunMode { Deterministic, Concurrent };

struct Scenario {
  std::string name = "scenario";
  std::size_t n_peers = 4;
  DatasetSpec dataset;
  TrainingConfig training;
  aggregation::AggregationRule rule;
  double zeno_rho = 1e-4;
  faults::AttackSpec attack;
  std::vector<faults::FaultEvent> faults;
  HeartbeatConfig heartbeat;
  std::uint64_t barrier_timeout = 100;
  ByteConvention bytes;
  std::string crypto = "rsa";
  std::uint64_t seed = 1;
  RunMode mode = RunMode::Deterministic;
  bool stop_on_convergence = true;

  // Throws ConfigError.
  void validate() const;
};

// JSON scenario files. Unknown fields are rejected at every level.
Scenario scenario_from_json(const nlohmann::json& j);
nlohmann::json scenario_to_json(const Scenario& s);
Scenario load_scenario(const std::filesystem::path& path);

// Reference scenario for the attack study: 4 peers, rank 3 malicious,
// dim-8 two-Gaussian data with 2000 samples, 200 epochs.
Scenario attack_study_scenario(aggregation::RuleKind rule, faults::AttackKind attack);

}  // namespace peerlace
