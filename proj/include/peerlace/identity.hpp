#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "peerlace/crypto.hpp"
#include "peerlace/msgqueue.hpp"
#include "peerlace/peerstore.hpp"

namespace peerlace::identity {

using crypto::Bytes;

// Join refused outright (for example a rank already held by another key).
class JoinRejected : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// What a peer knows about a trusted neighbour. The store password stays
// encrypted under the holder's own public key.
struct PeerRecord {
  int rank = -1;
  StoreAddress store_address;
  Bytes public_key;
  Bytes encrypted_store_password;
  std::string passwords_queue_name;
  std::string join_queue_name;

  nlohmann::json to_json() const;
};

// Signed broadcast a peer posts into other peers' join queues.
// Wire schema: {rank, public_key, store_host, store_port, passwords_queue,
// join_queue, sig, enc_password?}; binary fields are base64.
struct JoinAnnouncement {
  int sender_rank = -1;
  Bytes public_key;
  StoreAddress store_address;
  std::string passwords_queue_name;
  std::string join_queue_name;
  Bytes signature;
  std::optional<Bytes> encrypted_password;

  // Canonical JSON (sorted keys, compact) of every field except sig and
  // enc_password. This is what gets signed.
  std::string signing_payload() const;
  nlohmann::json to_json() const;
  std::string serialize() const { return to_json().dump(); }
  // Throws std::invalid_argument on schema violations.
  static JoinAnnouncement parse(std::string_view text);
};

// Reply carrying a store password, posted into a peer's passwords queue.
struct PasswordMessage {
  int sender_rank = -1;
  Bytes encrypted_password;
  Bytes signature;

  std::string signing_payload() const;
  std::string serialize() const;
  static PasswordMessage parse(std::string_view text);
};

struct PeerConfig {
  int rank = 0;
  std::uint64_t seed = 0;
  ByteConvention bytes;
  // Fault hook: the peer's announcements carry a broken signature.
  bool corrupt_signature = false;
};

// Network reachability: address → store.
class StoreDirectory {
 public:
  void add(std::shared_ptr<PeerStore> store);
  std::shared_ptr<PeerStore> find(const StoreAddress& address) const;

 private:
  mutable std::mutex mu_;
  std::map<StoreAddress, std::shared_ptr<PeerStore>> stores_;
};

// Identity side of one peer: keys, its private store and its trusted set.
class PeerNode {
 public:
  PeerNode(const PeerConfig& cfg, const crypto::CryptoProvider& provider);

  int rank() const noexcept { return rank_; }
  const crypto::KeyPair& keys() const noexcept { return keys_; }
  const std::string& join_queue_name() const noexcept { return join_queue_; }
  const std::string& passwords_queue_name() const noexcept { return passwords_queue_; }
  PeerStore& store() noexcept { return *store_; }
  const std::shared_ptr<PeerStore>& store_ptr() const noexcept { return store_; }
  const std::map<int, PeerRecord>& trusted() const noexcept { return trusted_; }
  bool trusts(int rank) const { return trusted_.contains(rank); }

  // Own store credential. Never write it to any output.
  const std::string& own_password() const noexcept { return password_; }

  // Decrypts a trusted peer's store password (cached after first use).
  std::string password_for(int rank);

  JoinAnnouncement make_announcement(const crypto::CryptoProvider& provider) const;
  PasswordMessage make_password_message(const crypto::CryptoProvider& provider,
                                        const Bytes& recipient_public_key) const;

  void add_trusted(PeerRecord record);
  void forget(int rank);

 private:
  friend class Network;
  Bytes unwrap_private_key() const;

  int rank_;
  crypto::KmsKey kms_;
  crypto::KeyPair keys_;
  std::string password_;
  std::shared_ptr<PeerStore> store_;
  std::string join_queue_;
  std::string passwords_queue_;
  bool corrupt_signature_;
  const crypto::CryptoProvider* provider_;
  std::map<int, PeerRecord> trusted_;
  mutable std::mutex cache_mu_;
  std::map<int, std::string> password_cache_;
};

struct InitReport {
  std::set<int> accepted;
  std::set<int> rejected;
};

struct JoinReport {
  bool accepted = false;
  bool already_member = false;
  std::set<int> validated_by;
  std::size_t messages_exchanged = 0;
  std::uint64_t elapsed_us = 0;
};

// Peers that completed a membership protocol, plus the shared queue service
// and store directory they talk through.
class Network {
 public:
  Network(const crypto::CryptoProvider& provider, mq::QueueService& queues)
      : provider_(&provider), queues_(&queues) {}

  const crypto::CryptoProvider& provider() const noexcept { return *provider_; }
  mq::QueueService& queues() noexcept { return *queues_; }
  StoreDirectory& directory() noexcept { return directory_; }

  std::map<int, std::unique_ptr<PeerNode>>& peers() noexcept { return peers_; }
  const std::map<int, std::unique_ptr<PeerNode>>& peers() const noexcept { return peers_; }
  PeerNode& peer(int rank);

  // Every peer trusts every other peer and nobody else.
  bool fully_meshed() const;

 private:
  friend InitReport init_network(Network&, const std::vector<PeerConfig>&);
  friend JoinReport join_network(Network&, const PeerConfig&);

  const crypto::CryptoProvider* provider_;
  mq::QueueService* queues_;
  StoreDirectory directory_;
  std::map<int, std::unique_ptr<PeerNode>> peers_;
};

// Bootstraps n >= 2 peers: key generation, signed announcements, mutual
// verification and encrypted password exchange. Peers whose announcement
// fails verification are left out of the network and listed in `rejected`.
InitReport init_network(Network& net, const std::vector<PeerConfig>& configs);

// Admits one new peer into an existing network. Members whose store is down
// take no part. A validation failure leaves every trusted set unchanged. Re-announcing an existing member with the same
// key is a no-op; a rank held by a different key throws JoinRejected.
JoinReport join_network(Network& net, const PeerConfig& cfg);

std::string join_queue_for(int rank);
std::string passwords_queue_for(int rank);
StoreAddress store_address_for(int rank);

}  // namespace peerlace::identity
