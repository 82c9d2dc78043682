#pragma once

#include <cstdint>
#include <deque>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <vector>

namespace peerlace::mq {

using MessageId = std::uint64_t;

struct QueueMessage {
  MessageId id = 0;
  int sender_rank = -1;
  std::string payload;
  std::uint64_t enqueue_time = 0;
};

// FIFO queue with explicit deletion. receive() peeks; nothing is ever
// redelivered or hidden.
class Queue {
 public:
  explicit Queue(std::string name) : name_(std::move(name)) {}

  const std::string& name() const noexcept { return name_; }

  MessageId send(int sender_rank, std::string payload, std::uint64_t enqueue_time = 0);
  std::vector<QueueMessage> receive(std::size_t max) const;
  // Throws NotFoundError for an unknown or already-deleted id.
  void remove(MessageId id);
  std::size_t count() const;
  void purge();

 private:
  std::string name_;
  mutable std::mutex mu_;
  std::deque<QueueMessage> messages_;
  MessageId next_id_ = 1;
};

// Registry of named queues; queues are created on first use.
class QueueService {
 public:
  Queue& queue(const std::string& name);
  bool exists(const std::string& name) const;

 private:
  mutable std::mutex mu_;
  std::map<std::string, std::unique_ptr<Queue>> queues_;
};

}  // namespace peerlace::mq
