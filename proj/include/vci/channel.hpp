#pragma once

// Bounded FIFO between one producer and one consumer. push blocks while the
// buffer is full; pop blocks while it is empty.

#include <condition_variable>
#include <mutex>
#include <optional>
#include <vector>

#include "vci/error.hpp"

namespace vci {

template <typename T>
class BoundedChannel {
 public:
  explicit BoundedChannel(std::size_t capacity) : ring_(capacity ? capacity : 1) {}

  /// Throws ChannelPoisoned when the consumer gave up, ChannelClosed after close().
  void push(const T& value) {
    std::unique_lock lock(mutex_);
    not_full_.wait(lock, [&] { return count_ < ring_.size() || closed_ || poisoned_; });
    if (poisoned_) throw Error(ErrorCode::ChannelPoisoned, "consumer failed");
    if (closed_) throw Error(ErrorCode::ChannelClosed, "push after close");
    ring_[(head_ + count_) % ring_.size()] = value;
    ++count_;
    not_empty_.notify_one();
  }

  /// Empty optional once the channel is closed and drained.
  std::optional<T> pop() {
    std::unique_lock lock(mutex_);
    not_empty_.wait(lock, [&] { return count_ > 0 || closed_ || poisoned_; });
    if (poisoned_) throw Error(ErrorCode::ChannelPoisoned, "channel poisoned");
    if (count_ == 0) return std::nullopt;
    T value = ring_[head_];
    head_ = (head_ + 1) % ring_.size();
    --count_;
    not_full_.notify_one();
    return value;
  }

  void close() {
    std::lock_guard lock(mutex_);
    closed_ = true;
    not_empty_.notify_all();
    not_full_.notify_all();
  }

  void poison() {
    std::lock_guard lock(mutex_);
    poisoned_ = true;
    not_empty_.notify_all();
    not_full_.notify_all();
  }

  std::size_t capacity() const { return ring_.size(); }
  std::size_t size() const {
    std::lock_guard lock(mutex_);
    return count_;
  }

 private:
  mutable std::mutex mutex_;
  std::condition_variable not_full_;
  std::condition_variable not_empty_;
  std::vector<T> ring_;
  std::size_t head_ = 0;
  std::size_t count_ = 0;
  bool closed_ = false;
  bool poisoned_ = false;
};

}  // namespace vci
