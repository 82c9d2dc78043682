#include "peerlace/peerstore.hpp"

#include <openssl/crypto.h>

#include "peerlace/aggregation.hpp"

namespace peerlace {

void TransferLedger::record(const std::string& op, std::uint64_t in, std::uint64_t out) {
  bytes_in += in;
  bytes_out += out;
  auto& c = per_op[op];
  c.bytes_in += in;
  c.bytes_out += out;
  c.calls += 1;
}

PeerStore::PeerStore(StoreAddress address, std::string password, ByteConvention bytes)
    : address_(std::move(address)), password_(std::move(password)), bytes_(bytes) {
  if (password_.empty()) throw ContractViolation("store password must not be empty");
}

void PeerStore::check_access(std::string_view password) const {
  if (down_) throw StoreUnavailable("store " + address_.to_string() + " is unreachable");
  if (password.size() != password_.size() ||
      CRYPTO_memcmp(password.data(), password_.data(), password_.size()) != 0)
    throw AuthError("store " + address_.to_string() + ": authentication failed");
}

const DenseVector& PeerStore::find(const std::string& key) const {
  auto it = tensors_.find(key);
  if (it == tensors_.end())
    throw NotFoundError("store " + address_.to_string() + ": no tensor '" + key + "'");
  return it->second;
}

void PeerStore::put_tensor(std::string_view password, const std::string& key, const DenseVector& v) {
  std::lock_guard lock(mu_);
  check_access(password);
  tensors_[key] = v;
  ledger_.record("put_tensor", tensor_bytes(v), 0);
}

DenseVector PeerStore::get_tensor(std::string_view password, const std::string& key) {
  std::lock_guard lock(mu_);
  check_access(password);
  DenseVector v = find(key);
  ledger_.record("get_tensor", 0, tensor_bytes(v));
  return v;
}

bool PeerStore::contains(std::string_view password, const std::string& key) {
  std::lock_guard lock(mu_);
  check_access(password);
  return tensors_.contains(key) || blobs_.contains(key);
}

void PeerStore::erase(std::string_view password, const std::string& key) {
  std::lock_guard lock(mu_);
  check_access(password);
  tensors_.erase(key);
  blobs_.erase(key);
}

DenseVector PeerStore::read_local(std::string_view password, const std::string& key) {
  std::lock_guard lock(mu_);
  check_access(password);
  DenseVector v = find(key);
  ledger_.record("read_local", 0, 0);
  return v;
}

void PeerStore::put_blob(std::string_view password, const std::string& key,
                         std::vector<std::uint8_t> blob) {
  std::lock_guard lock(mu_);
  check_access(password);
  const auto n = blob.size();
  blobs_[key] = std::move(blob);
  ledger_.record("put_blob", n, 0);
}

std::vector<std::uint8_t> PeerStore::get_blob(std::string_view password, const std::string& key) {
  std::lock_guard lock(mu_);
  check_access(password);
  auto it = blobs_.find(key);
  if (it == blobs_.end())
    throw NotFoundError("store " + address_.to_string() + ": no blob '" + key + "'");
  ledger_.record("get_blob", 0, it->second.size());
  return it->second;
}

void PeerStore::instore_average(std::string_view password, std::span<const std::string> keys,
                                const std::string& out_key) {
  std::lock_guard lock(mu_);
  check_access(password);
  if (keys.empty()) throw ContractViolation("instore_average: no keys");
  std::vector<DenseVector> operands;
  operands.reserve(keys.size());
  for (const auto& k : keys) operands.push_back(find(k));
  DenseVector mean = aggregation::average(operands);
  tensors_[out_key] = std::move(mean);
  ledger_.record("instore_average", bytes_.command_overhead, 0);
}

void PeerStore::instore_model_update(std::string_view password, const std::string& model_key,
                                     const std::string& grad_key, double learning_rate) {
  std::lock_guard lock(mu_);
  check_access(password);
  const DenseVector& grad = find(grad_key);
  DenseVector updated = sgd_step_flat(find(model_key), grad, learning_rate);
  tensors_[model_key] = std::move(updated);
  ledger_.record("instore_model_update", bytes_.command_overhead, 0);
}

void PeerStore::external_average(std::string_view password, std::span<const std::string> keys,
                                 const std::string& out_key) {
  std::lock_guard lock(mu_);
  check_access(password);
  if (keys.empty()) throw ContractViolation("external_average: no keys");
  std::vector<DenseVector> fetched;
  fetched.reserve(keys.size());
  std::uint64_t out = 0;
  for (const auto& k : keys) {
    fetched.push_back(find(k));
    out += tensor_bytes(fetched.back());
  }
  DenseVector mean = aggregation::average(fetched);
  const std::uint64_t in = tensor_bytes(mean);
  tensors_[out_key] = std::move(mean);
  ledger_.record("external_average", in, out);
}

void PeerStore::external_model_update(std::string_view password, const std::string& model_key,
                                      const std::string& grad_key, double learning_rate) {
  std::lock_guard lock(mu_);
  check_access(password);
  const DenseVector model = find(model_key);
  const DenseVector grad = find(grad_key);
  DenseVector updated = sgd_step_flat(model, grad, learning_rate);
  const std::uint64_t out = tensor_bytes(model) + tensor_bytes(grad);
  const std::uint64_t in = tensor_bytes(updated);
  tensors_[model_key] = std::move(updated);
  ledger_.record("external_model_update", in, out);
}

TransferLedger PeerStore::ledger_report() const {
  std::lock_guard lock(mu_);
  return ledger_;
}

bool PeerStore::ping() const {
  std::lock_guard lock(mu_);
  return !down_;
}

void PeerStore::take_down() {
  std::lock_guard lock(mu_);
  down_ = true;
}

bool PeerStore::is_down() const {
  std::lock_guard lock(mu_);
  return down_;
}

}  // namespace peerlace
