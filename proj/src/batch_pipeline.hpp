#pragma once

#include <condition_variable>
#include <deque>
#include <exception>
#include <functional>
#include <mutex>
#include <thread>

#include "cigar/hashrec.hpp"

namespace cigar::detail {

// Single-producer bounded batch queue. The producer owns the sampling RNG and
// generates batches strictly in sequence, so training consumes the same batch
// stream whether the sampler runs inline or on its own thread.
class BatchPipeline {
 public:
  BatchPipeline(std::function<TripletBatch()> sampler, uint64_t total_batches, bool async)
      : sampler_(std::move(sampler)), total_(total_batches) {
    if (async) {
      thread_ = std::thread([this] { produce(); });
      running_ = true;
    }
  }

  ~BatchPipeline() {
    {
      std::lock_guard lock(mu_);
      stop_ = true;
    }
    cv_.notify_all();
    if (running_) thread_.join();
  }

  TripletBatch next() {
    if (!running_) return sampler_();
    std::unique_lock lock(mu_);
    cv_.wait(lock, [this] { return !queue_.empty() || error_ != nullptr; });
    if (error_ && queue_.empty()) std::rethrow_exception(error_);
    TripletBatch batch = std::move(queue_.front());
    queue_.pop_front();
    cv_.notify_all();
    return batch;
  }

 private:
  void produce() {
    try {
      for (uint64_t b = 0; b < total_; ++b) {
        TripletBatch batch = sampler_();
        std::unique_lock lock(mu_);
        cv_.wait(lock, [this] { return queue_.size() < kCapacity || stop_; });
        if (stop_) return;
        queue_.push_back(std::move(batch));
        cv_.notify_all();
      }
    } catch (...) {
      std::lock_guard lock(mu_);
      error_ = std::current_exception();
      cv_.notify_all();
    }
  }

  static constexpr size_t kCapacity = 4;

  std::function<TripletBatch()> sampler_;
  uint64_t total_;
  bool running_ = false;
  std::thread thread_;
  std::mutex mu_;
  std::condition_variable cv_;
  std::deque<TripletBatch> queue_;
  std::exception_ptr error_;
  bool stop_ = false;
};

}  // namespace cigar::detail
