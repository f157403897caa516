#pragma once

#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <mutex>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace smrnet {

// Error taxonomy. The CLI maps these onto its exit-code contract:
// usage/config -> 2, runtime/numeric/io -> 3, corruption -> 4.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A NaN/Inf surfaced in a forward or backward pass. Carries the op name.
class NumericError : public std::runtime_error {
 public:
  explicit NumericError(const std::string& op, const std::string& what)
      : std::runtime_error("numeric error in op '" + op + "': " + what), op_(op) {}
  const std::string& op() const { return op_; }

 private:
  std::string op_;
};

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline void check_arg(bool cond, const std::string& msg) {
  if (!cond) throw std::invalid_argument(msg);
}

// FNV-1a, 64-bit. Used for manifest digests and checkpoint checksums.
inline uint64_t fnv1a64(const void* data, size_t n, uint64_t h = 0xcbf29ce484222325ull) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ull;
  }
  return h;
}

inline std::string hex64(uint64_t v) {
  char buf[19];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

// SMRNET_THREADS caps any parallelism; unset or <1 means serial.
inline int thread_cap() {
  const char* s = std::getenv("SMRNET_THREADS");
  if (!s) return 1;
  int v = std::atoi(s);
  return v < 1 ? 1 : v;
}

// Runs fn(0..n-1), chunked over at most thread_cap() threads. Work items must
// be independent; results keyed by index stay identical at any thread count.
inline void parallel_for(int64_t n, const std::function<void(int64_t)>& fn) {
  int threads = thread_cap();
  if (threads <= 1 || n <= 1) {
    for (int64_t i = 0; i < n; ++i) fn(i);
    return;
  }
  if (threads > n) threads = static_cast<int>(n);
  std::vector<std::thread> pool;
  pool.reserve(threads);
  std::exception_ptr first_error;
  std::mutex err_mx;
  for (int t = 0; t < threads; ++t) {
    pool.emplace_back([&, t]() {
      try {
        for (int64_t i = t; i < n; i += threads) fn(i);
      } catch (...) {
        std::lock_guard<std::mutex> lk(err_mx);
        if (!first_error) first_error = std::current_exception();
      }
    });
  }
  for (auto& th : pool) th.join();
  if (first_error) std::rethrow_exception(first_error);
}

}  // namespace smrnet
