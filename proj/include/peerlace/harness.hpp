#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "peerlace/peer_runtime.hpp"
#include "peerlace/scenario.hpp"

namespace peerlace::harness {

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr const char* kCsvHeader =
    "epoch,peer,active_count,train_loss,val_accuracy,bytes_in,bytes_out,event";

enum class Format { Csv, Json };

std::string to_csv(const runtime::RunMetrics& metrics);
nlohmann::json to_json(const runtime::RunMetrics& metrics);
nlohmann::json ledger_to_json(const TransferLedger& ledger);

// Structural check of a metrics document produced by to_json. Returns an
// empty string when valid, otherwise the first problem found.
std::string check_metrics_json(const nlohmann::json& doc);

// Writes metrics.csv or metrics.json into `dir` (created if missing).
// Returns the file written. Throws IoError.
std::filesystem::path emit(const runtime::RunMetrics& metrics, Format format,
                           const std::filesystem::path& dir);

struct PathBytes {
  std::uint64_t external = 0;
  std::uint64_t instore = 0;

  // Fraction of external bytes saved by the in-store path.
  double reduction() const {
    return external == 0 ? 0.0 : 1.0 - static_cast<double>(instore) / static_cast<double>(external);
  }
};

struct StoreComparison {
  std::size_t model_len = 0;
  std::size_t n_grads = 0;
  std::size_t repetitions = 0;
  PathBytes average;  // bytes for one averaging call
  PathBytes update;   // bytes for one model-update call
  bool outputs_identical = true;
  std::size_t mismatches = 0;
};

// Runs both store paths on identical random tensors `repetitions` times.
StoreComparison compare_store_paths(std::size_t model_len, std::size_t n_grads,
                                    std::size_t repetitions, std::uint64_t seed = 1);
nlohmann::json to_json(const StoreComparison& c);

struct ScalingRow {
  std::size_t peers = 0;
  std::size_t batch_size = 0;
  std::size_t min_shards_per_peer = 0;
  std::size_t max_shards_per_peer = 0;
  std::size_t gradients_per_epoch = 0;
  std::size_t rows_per_epoch = 0;
  double mean_bytes_in_per_peer_epoch = 0.0;
  double mean_bytes_out_per_peer_epoch = 0.0;
  double final_accuracy = 0.0;
  std::size_t epochs_run = 0;
};

std::vector<ScalingRow> scaling_study(const std::vector<std::size_t>& peer_counts,
                                      const std::vector<std::size_t>& batch_sizes,
                                      const Scenario& base);
std::string scaling_csv(const std::vector<ScalingRow>& rows);

// Seed precedence: explicit value, then PEERLACE_SEED, then the scenario's own.
void apply_seed_override(Scenario& s, std::optional<std::uint64_t> explicit_seed);

}  // namespace peerlace::harness
