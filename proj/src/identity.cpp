#include "peerlace/identity.hpp"

#include <openssl/crypto.h>

#include <algorithm>
#include <chrono>

namespace peerlace::identity {

using nlohmann::json;

namespace {

constexpr const char* kPublicKeyBlob = "identity:public_key";
constexpr const char* kWrappedKeyBlob = "identity:private_key_wrapped";

std::string hex(std::span<const std::uint8_t> bytes) {
  static constexpr char digits[] = "0123456789abcdef";
  std::string out;
  for (auto b : bytes) {
    out.push_back(digits[b >> 4]);
    out.push_back(digits[b & 0x0f]);
  }
  return out;
}

const json& require(const json& j, const char* key) {
  auto it = j.find(key);
  if (it == j.end()) throw std::invalid_argument(std::string("missing field '") + key + "'");
  return *it;
}

void reject_unknown(const json& j, std::initializer_list<const char*> allowed) {
  for (const auto& [k, _] : j.items())
    if (std::none_of(allowed.begin(), allowed.end(), [&](const char* a) { return k == a; }))
      throw std::invalid_argument("unknown field '" + k + "'");
}

Bytes flip_last_byte(Bytes sig) {
  if (!sig.empty()) sig.back() ^= 0x01;
  return sig;
}

}  // namespace

std::string join_queue_for(int rank) { return "join-requests-" + std::to_string(rank); }
std::string passwords_queue_for(int rank) { return "db-passwords-" + std::to_string(rank); }
StoreAddress store_address_for(int rank) {
  return StoreAddress{"10.0.0." + std::to_string(rank + 1), 6379};
}

json PeerRecord::to_json() const {
  return json{{"rank", rank},
              {"store_host", store_address.host},
              {"store_port", store_address.port},
              {"public_key", crypto::base64_encode(public_key)},
              {"enc_password", crypto::base64_encode(encrypted_store_password)},
              {"passwords_queue", passwords_queue_name},
              {"join_queue", join_queue_name}};
}

std::string JoinAnnouncement::signing_payload() const {
  json j{{"rank", sender_rank},
         {"public_key", crypto::base64_encode(public_key)},
         {"store_host", store_address.host},
         {"store_port", store_address.port},
         {"passwords_queue", passwords_queue_name},
         {"join_queue", join_queue_name}};
  return j.dump();
}

json JoinAnnouncement::to_json() const {
  json j = json::parse(signing_payload());
  j["sig"] = crypto::base64_encode(signature);
  if (encrypted_password) j["enc_password"] = crypto::base64_encode(*encrypted_password);
  return j;
}

JoinAnnouncement JoinAnnouncement::parse(std::string_view text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw std::invalid_argument(std::string("announcement is not JSON: ") + e.what());
  }
  if (!j.is_object()) throw std::invalid_argument("announcement must be a JSON object");
  reject_unknown(j, {"rank", "public_key", "store_host", "store_port", "passwords_queue",
                     "join_queue", "sig", "enc_password"});
  JoinAnnouncement a;
  try {
    a.sender_rank = require(j, "rank").get<int>();
    a.public_key = crypto::base64_decode(require(j, "public_key").get<std::string>());
    a.store_address.host = require(j, "store_host").get<std::string>();
    a.store_address.port = require(j, "store_port").get<std::uint16_t>();
    a.passwords_queue_name = require(j, "passwords_queue").get<std::string>();
    a.join_queue_name = require(j, "join_queue").get<std::string>();
    a.signature = crypto::base64_decode(require(j, "sig").get<std::string>());
    if (j.contains("enc_password"))
      a.encrypted_password = crypto::base64_decode(j["enc_password"].get<std::string>());
  } catch (const json::exception& e) {
    throw std::invalid_argument(std::string("announcement field has wrong type: ") + e.what());
  } catch (const crypto::IntegrityError& e) {
    throw std::invalid_argument(std::string("announcement field is not base64: ") + e.what());
  }
  return a;
}

std::string PasswordMessage::signing_payload() const {
  return json{{"rank", sender_rank}, {"enc_password", crypto::base64_encode(encrypted_password)}}
      .dump();
}

std::string PasswordMessage::serialize() const {
  json j = json::parse(signing_payload());
  j["sig"] = crypto::base64_encode(signature);
  return j.dump();
}

PasswordMessage PasswordMessage::parse(std::string_view text) {
  try {
    const json j = json::parse(text);
    reject_unknown(j, {"rank", "enc_password", "sig"});
    PasswordMessage m;
    m.sender_rank = require(j, "rank").get<int>();
    m.encrypted_password = crypto::base64_decode(require(j, "enc_password").get<std::string>());
    m.signature = crypto::base64_decode(require(j, "sig").get<std::string>());
    return m;
  } catch (const json::exception& e) {
    throw std::invalid_argument(std::string("malformed password message: ") + e.what());
  } catch (const crypto::IntegrityError& e) {
    throw std::invalid_argument(std::string("malformed password message: ") + e.what());
  }
}

void StoreDirectory::add(std::shared_ptr<PeerStore> store) {
  std::lock_guard lock(mu_);
  stores_[store->address()] = std::move(store);
}

std::shared_ptr<PeerStore> StoreDirectory::find(const StoreAddress& address) const {
  std::lock_guard lock(mu_);
  auto it = stores_.find(address);
  return it == stores_.end() ? nullptr : it->second;
}

PeerNode::PeerNode(const PeerConfig& cfg, const crypto::CryptoProvider& provider)
    : rank_(cfg.rank),
      kms_(crypto::KmsKey::generate("kms-key-" + std::to_string(cfg.rank),
                                    crypto::derive_seed(cfg.seed, "kms"))),
      keys_(crypto::generate_keypair(provider, kms_, crypto::derive_seed(cfg.seed, "keypair"))),
      password_(hex(crypto::seeded_bytes(crypto::derive_seed(cfg.seed, "store-password"), 16))),
      store_(std::make_shared<PeerStore>(store_address_for(cfg.rank), password_, cfg.bytes)),
      join_queue_(join_queue_for(cfg.rank)),
      passwords_queue_(passwords_queue_for(cfg.rank)),
      corrupt_signature_(cfg.corrupt_signature),
      provider_(&provider) {
  if (cfg.rank < 0) throw ContractViolation("peer rank must be non-negative");
  store_->put_blob(password_, kPublicKeyBlob, keys_.public_key);
  store_->put_blob(password_, kWrappedKeyBlob, keys_.private_key_wrapped);
}

Bytes PeerNode::unwrap_private_key() const {
  const Bytes wrapped = store_->get_blob(password_, kWrappedKeyBlob);
  return crypto::kms_unwrap(kms_, wrapped);
}

std::string PeerNode::password_for(int rank) {
  {
    std::lock_guard lock(cache_mu_);
    if (auto it = password_cache_.find(rank); it != password_cache_.end()) return it->second;
  }
  auto rec = trusted_.find(rank);
  if (rec == trusted_.end())
    throw NotFoundError("peer " + std::to_string(rank_) + " does not trust rank " +
                        std::to_string(rank));
  Bytes priv = unwrap_private_key();
  const Bytes plain = provider_->decrypt(priv, rec->second.encrypted_store_password);
  OPENSSL_cleanse(priv.data(), priv.size());
  std::string pw = crypto::to_string(plain);
  std::lock_guard lock(cache_mu_);
  password_cache_[rank] = pw;
  return pw;
}

JoinAnnouncement PeerNode::make_announcement(const crypto::CryptoProvider& provider) const {
  JoinAnnouncement a;
  a.sender_rank = rank_;
  a.public_key = keys_.public_key;
  a.store_address = store_->address();
  a.passwords_queue_name = passwords_queue_;
  a.join_queue_name = join_queue_;
  Bytes priv = unwrap_private_key();
  a.signature = provider.sign(priv, crypto::to_bytes(a.signing_payload()));
  OPENSSL_cleanse(priv.data(), priv.size());
  if (corrupt_signature_) a.signature = flip_last_byte(std::move(a.signature));
  return a;
}

PasswordMessage PeerNode::make_password_message(const crypto::CryptoProvider& provider,
                                                const Bytes& recipient_public_key) const {
  PasswordMessage m;
  m.sender_rank = rank_;
  m.encrypted_password = provider.encrypt_for(recipient_public_key, crypto::to_bytes(password_));
  Bytes priv = unwrap_private_key();
  m.signature = provider.sign(priv, crypto::to_bytes(m.signing_payload()));
  OPENSSL_cleanse(priv.data(), priv.size());
  if (corrupt_signature_) m.signature = flip_last_byte(std::move(m.signature));
  return m;
}

void PeerNode::add_trusted(PeerRecord record) {
  const int r = record.rank;
  const std::string blob = record.to_json().dump();
  store_->put_blob(password_, "peer:" + std::to_string(r), crypto::to_bytes(blob));
  trusted_[r] = std::move(record);
  std::lock_guard lock(cache_mu_);
  password_cache_.erase(r);
}

void PeerNode::forget(int rank) {
  trusted_.erase(rank);
  store_->erase(password_, "peer:" + std::to_string(rank));
  std::lock_guard lock(cache_mu_);
  password_cache_.erase(rank);
}

PeerNode& Network::peer(int rank) {
  auto it = peers_.find(rank);
  if (it == peers_.end()) throw NotFoundError("no peer with rank " + std::to_string(rank));
  return *it->second;
}

bool Network::fully_meshed() const {
  for (const auto& [r, node] : peers_) {
    if (node->trusted().size() != peers_.size() - 1) return false;
    for (const auto& [other, _] : peers_)
      if (other != r && !node->trusts(other)) return false;
  }
  return true;
}

namespace {

// Drains a queue, deleting every message it returns.
std::vector<mq::QueueMessage> drain(mq::Queue& q) {
  std::vector<mq::QueueMessage> out;
  while (q.count() > 0) {
    for (auto& m : q.receive(16)) {
      q.remove(m.id);
      out.push_back(std::move(m));
    }
  }
  return out;
}

std::optional<JoinAnnouncement> verified_announcement(const crypto::CryptoProvider& provider,
                                                      const mq::QueueMessage& msg) {
  try {
    auto a = JoinAnnouncement::parse(msg.payload);
    if (a.sender_rank != msg.sender_rank) return std::nullopt;
    if (!provider.verify(a.public_key, crypto::to_bytes(a.signing_payload()), a.signature))
      return std::nullopt;
    return a;
  } catch (const std::invalid_argument&) {
    return std::nullopt;
  }
}

PeerRecord record_from(const JoinAnnouncement& a, Bytes encrypted_password) {
  return PeerRecord{a.sender_rank,          a.store_address,        a.public_key,
                    std::move(encrypted_password), a.passwords_queue_name, a.join_queue_name};
}

}  // namespace

InitReport init_network(Network& net, const std::vector<PeerConfig>& configs) {
  if (configs.size() < 2) throw ContractViolation("init_network needs at least two peers");
  std::set<int> ranks;
  for (const auto& c : configs)
    if (!ranks.insert(c.rank).second)
      throw ContractViolation("duplicate rank " + std::to_string(c.rank));
  if (!net.peers_.empty()) throw ContractViolation("init_network on a non-empty network");

  const auto& provider = net.provider();
  auto& queues = net.queues();

  // Key generation; private keys are wrapped before they reach the store.
  std::map<int, std::unique_ptr<PeerNode>> nodes;
  for (const auto& c : configs) nodes.emplace(c.rank, std::make_unique<PeerNode>(c, provider));

  // Each peer posts a signed announcement into every other join queue.
  for (const auto& [r, node] : nodes) {
    const std::string payload = node->make_announcement(provider).serialize();
    for (const auto& [other, _] : nodes)
      if (other != r) queues.queue(join_queue_for(other)).send(r, payload);
  }

  // Verification.
  InitReport report;
  std::map<int, std::map<int, JoinAnnouncement>> verified;  // verifier → sender → announcement
  for (const auto& [r, node] : nodes) {
    for (const auto& msg : drain(queues.queue(node->join_queue_name()))) {
      if (auto a = verified_announcement(provider, msg))
        verified[r].emplace(a->sender_rank, std::move(*a));
      else
        report.rejected.insert(msg.sender_rank);
    }
  }

  // Verified announcers receive the verifier's password, encrypted to them.
  for (const auto& [r, node] : nodes)
    for (const auto& [sender, a] : verified[r])
      queues.queue(a.passwords_queue_name)
          .send(r, node->make_password_message(provider, a.public_key).serialize());

  // A password is accepted only from a peer whose announcement this peer verified.
  for (const auto& [r, node] : nodes) {
    for (const auto& msg : drain(queues.queue(node->passwords_queue_name()))) {
      auto it = verified[r].find(msg.sender_rank);
      if (it == verified[r].end()) continue;
      PasswordMessage pm;
      try {
        pm = PasswordMessage::parse(msg.payload);
      } catch (const std::invalid_argument&) {
        report.rejected.insert(msg.sender_rank);
        continue;
      }
      if (pm.sender_rank != msg.sender_rank ||
          !provider.verify(it->second.public_key, crypto::to_bytes(pm.signing_payload()),
                           pm.signature)) {
        report.rejected.insert(msg.sender_rank);
        continue;
      }
      node->add_trusted(record_from(it->second, std::move(pm.encrypted_password)));
    }
  }

  // Rejected peers are dropped from everyone's view.
  for (auto& [r, node] : nodes) {
    if (report.rejected.contains(r)) continue;
    for (int bad : report.rejected) node->forget(bad);
  }
  for (auto& [r, node] : nodes) {
    if (report.rejected.contains(r)) continue;
    report.accepted.insert(r);
    net.directory_.add(node->store_ptr());
    net.peers_.emplace(r, std::move(node));
  }
  return report;
}

JoinReport join_network(Network& net, const PeerConfig& cfg) {
  const auto started = std::chrono::steady_clock::now();
  const auto& provider = net.provider();
  auto& queues = net.queues();
  JoinReport report;

  auto candidate = std::make_unique<PeerNode>(cfg, provider);
  if (auto it = net.peers_.find(cfg.rank); it != net.peers_.end()) {
    if (it->second->keys().public_key == candidate->keys().public_key) {
      report.accepted = true;
      report.already_member = true;
      return report;
    }
    throw JoinRejected("rank " + std::to_string(cfg.rank) + " is already held by another peer");
  }
  if (net.peers_.empty()) throw ContractViolation("join_network needs an initialised network");

  // Admin provisioning: the joiner knows each member's join queue, key and rank.
  struct Provisioned {
    std::string join_queue;
    Bytes public_key;
  };
  // Members whose store is down cannot take part; they are left for the
  // heartbeat and consensus to remove.
  std::map<int, Provisioned> provisioned;
  for (const auto& [r, node] : net.peers_)
    if (!node->store_ptr()->is_down())
      provisioned[r] = Provisioned{node->join_queue_name(), node->keys().public_key};
  if (provisioned.empty()) throw ContractViolation("join_network: no reachable members");

  // Broadcast, each copy carrying the joiner's password encrypted for its recipient.
  const JoinAnnouncement base = candidate->make_announcement(provider);
  for (const auto& [r, p] : provisioned) {
    JoinAnnouncement a = base;
    a.encrypted_password =
        provider.encrypt_for(p.public_key, crypto::to_bytes(candidate->own_password()));
    queues.queue(p.join_queue).send(cfg.rank, a.serialize());
    ++report.messages_exchanged;
  }

  // Members validate. All must accept before anyone records the joiner.
  std::map<int, JoinAnnouncement> accepted_by;
  for (const auto& [r, node] : net.peers_) {
    if (!provisioned.contains(r)) continue;
    for (const auto& msg : drain(queues.queue(node->join_queue_name()))) {
      if (msg.sender_rank != cfg.rank) continue;
      auto a = verified_announcement(provider, msg);
      if (a && a->encrypted_password) accepted_by.emplace(r, std::move(*a));
    }
  }
  if (accepted_by.size() != provisioned.size()) {
    report.elapsed_us = static_cast<std::uint64_t>(
        std::chrono::duration_cast<std::chrono::microseconds>(std::chrono::steady_clock::now() -
                                                              started)
            .count());
    return report;
  }

  // Members reply with their own signed, encrypted passwords and record the joiner.
  for (auto& [r, a] : accepted_by) {
    PeerNode& member = *net.peers_.at(r);
    queues.queue(a.passwords_queue_name)
        .send(r, member.make_password_message(provider, a.public_key).serialize());
    ++report.messages_exchanged;
    member.add_trusted(record_from(a, *a.encrypted_password));
    report.validated_by.insert(r);
  }

  // Joiner validates replies against the provisioned keys.
  for (const auto& msg : drain(queues.queue(candidate->passwords_queue_name()))) {
    auto p = provisioned.find(msg.sender_rank);
    if (p == provisioned.end()) continue;
    PasswordMessage pm;
    try {
      pm = PasswordMessage::parse(msg.payload);
    } catch (const std::invalid_argument&) {
      continue;
    }
    if (!provider.verify(p->second.public_key, crypto::to_bytes(pm.signing_payload()), pm.signature))
      continue;
    const PeerNode& member = *net.peers_.at(msg.sender_rank);
    candidate->add_trusted(PeerRecord{msg.sender_rank, member.store_ptr()->address(),
                                      p->second.public_key, std::move(pm.encrypted_password),
                                      member.passwords_queue_name(), p->second.join_queue});
  }

  report.accepted = true;
  net.directory_.add(candidate->store_ptr());
  net.peers_.emplace(cfg.rank, std::move(candidate));
  report.elapsed_us = static_cast<std::uint64_t>(
      std::chrono::duration_cast<std::chrono::microseconds>(std::chrono::steady_clock::now() -
                                                            started)
          .count());
  return report;
}

}  // namespace peerlace::identity
