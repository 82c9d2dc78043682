#include "peerlace/msgqueue.hpp"

#include <algorithm>

#include "peerlace/peerstore.hpp"
#include "peerlace/tensor.hpp"

namespace peerlace::mq {

MessageId Queue::send(int sender_rank, std::string payload, std::uint64_t enqueue_time) {
  std::lock_guard lock(mu_);
  const MessageId id = next_id_++;
  messages_.push_back(QueueMessage{id, sender_rank, std::move(payload), enqueue_time});
  return id;
}

std::vector<QueueMessage> Queue::receive(std::size_t max) const {
  if (max == 0) throw ContractViolation("receive: max must be >= 1");
  std::lock_guard lock(mu_);
  const auto n = std::min(max, messages_.size());
  return {messages_.begin(), messages_.begin() + static_cast<std::ptrdiff_t>(n)};
}

void Queue::remove(MessageId id) {
  std::lock_guard lock(mu_);
  auto it = std::find_if(messages_.begin(), messages_.end(),
                         [id](const QueueMessage& m) { return m.id == id; });
  if (it == messages_.end())
    throw NotFoundError("queue " + name_ + ": no message " + std::to_string(id));
  messages_.erase(it);
}

std::size_t Queue::count() const {
  std::lock_guard lock(mu_);
  return messages_.size();
}

void Queue::purge() {
  std::lock_guard lock(mu_);
  messages_.clear();
}

Queue& QueueService::queue(const std::string& name) {
  std::lock_guard lock(mu_);
  auto& slot = queues_[name];
  if (!slot) slot = std::make_unique<Queue>(name);
  return *slot;
}

bool QueueService::exists(const std::string& name) const {
  std::lock_guard lock(mu_);
  return queues_.contains(name);
}

}  // namespace peerlace::mq
