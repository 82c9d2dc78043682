#pragma once

#include <cstdint>
#include <map>
#include <mutex>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "peerlace/tensor.hpp"

namespace peerlace {

class AuthError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class NotFoundError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Raised by every operation on a store that has been taken down.
class StoreUnavailable : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct StoreAddress {
  std::string host;
  std::uint16_t port = 0;

  std::string to_string() const { return host + ":" + std::to_string(port); }
  friend auto operator<=>(const StoreAddress&, const StoreAddress&) = default;
};

struct OpCounters {
  std::uint64_t bytes_in = 0;
  std::uint64_t bytes_out = 0;
  std::uint64_t calls = 0;

  friend bool operator==(const OpCounters&, const OpCounters&) = default;
};

// Bytes moved between a peer's runtime and its store. bytes_in is traffic
// into the store, bytes_out traffic leaving it.
struct TransferLedger {
  std::uint64_t bytes_in = 0;
  std::uint64_t bytes_out = 0;
  std::map<std::string, OpCounters> per_op;

  void record(const std::string& op, std::uint64_t in, std::uint64_t out);
  std::uint64_t total() const noexcept { return bytes_in + bytes_out; }

  friend bool operator==(const TransferLedger&, const TransferLedger&) = default;
};

struct ByteConvention {
  std::uint64_t bytes_per_float = 8;
  std::uint64_t command_overhead = 64;
};

// In-memory tensor store guarded by a password. All operations are
// linearizable; ledger updates happen under the same lock as the data change.
class PeerStore {
 public:
  PeerStore(StoreAddress address, std::string password, ByteConvention bytes = {});

  PeerStore(const PeerStore&) = delete;
  PeerStore& operator=(const PeerStore&) = delete;

  const StoreAddress& address() const noexcept { return address_; }
  const ByteConvention& byte_convention() const noexcept { return bytes_; }

  void put_tensor(std::string_view password, const std::string& key, const DenseVector& v);
  DenseVector get_tensor(std::string_view password, const std::string& key);
  bool contains(std::string_view password, const std::string& key);
  void erase(std::string_view password, const std::string& key);

  // Tensor read by code co-located with the store (no transfer counted).
  DenseVector read_local(std::string_view password, const std::string& key);

  // Opaque byte blobs (keys, records) share the key space with tensors.
  void put_blob(std::string_view password, const std::string& key, std::vector<std::uint8_t> blob);
  std::vector<std::uint8_t> get_blob(std::string_view password, const std::string& key);

  void instore_average(std::string_view password, std::span<const std::string> keys,
                       const std::string& out_key);
  void instore_model_update(std::string_view password, const std::string& model_key,
                            const std::string& grad_key, double learning_rate);

  // Baselines: every operand crosses the store boundary.
  void external_average(std::string_view password, std::span<const std::string> keys,
                        const std::string& out_key);
  void external_model_update(std::string_view password, const std::string& model_key,
                             const std::string& grad_key, double learning_rate);

  TransferLedger ledger_report() const;

  // Reachability probe used by heartbeats. Needs no password.
  bool ping() const;

  // Fault injection.
  void take_down();
  bool is_down() const;

 private:
  void check_access(std::string_view password) const;
  const DenseVector& find(const std::string& key) const;
  std::uint64_t tensor_bytes(const DenseVector& v) const { return bytes_.bytes_per_float * v.size(); }

  StoreAddress address_;
  std::string password_;
  ByteConvention bytes_;

  mutable std::mutex mu_;
  std::map<std::string, DenseVector> tensors_;
  std::map<std::string, std::vector<std::uint8_t>> blobs_;
  TransferLedger ledger_;
  bool down_ = false;
};

}  // namespace peerlace
