#pragma once

#include <algorithm>
#include <atomic>
#include <cstdint>
#include <exception>
#include <functional>
#include <mutex>
#include <random>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace dmgn {

// Error taxonomy. The CLI maps these onto distinct exit codes
// (config=1, io=2, numeric=3); library code throws, never exits.
class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& msg) : std::runtime_error("config error: " + msg) {}
};

class IoError : public std::runtime_error {
 public:
  explicit IoError(const std::string& msg) : std::runtime_error("io error: " + msg) {}
};

class NumericFault : public std::runtime_error {
 public:
  explicit NumericFault(const std::string& msg) : std::runtime_error("numeric fault: " + msg) {}
};

class ShapeError : public std::invalid_argument {
 public:
  explicit ShapeError(const std::string& msg) : std::invalid_argument("shape error: " + msg) {}
};

// Deterministic uniform draws straight from mt19937 output words, so results
// do not depend on the standard library's distribution implementations.
class Rng {
 public:
  explicit Rng(uint64_t seed) : engine_(static_cast<std::mt19937::result_type>(seed)) {}

  // Uniform in [0, 1) with 24 bits of mantissa.
  double uniform() { return static_cast<double>(engine_() >> 8) * (1.0 / 16777216.0); }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [lo, hi] inclusive.
  int uniform_int(int lo, int hi) {
    return lo + static_cast<int>(uniform() * static_cast<double>(hi - lo + 1));
  }

  std::mt19937& engine() { return engine_; }

 private:
  std::mt19937 engine_;
};

// FNV-1a, used for corpus checksums and config fingerprints.
inline uint64_t fnv1a(const void* bytes, size_t n, uint64_t h = 1469598103934665603ull) {
  const auto* p = static_cast<const unsigned char*>(bytes);
  for (size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 1099511628211ull;
  }
  return h;
}

inline uint64_t fnv1a(const std::string& s, uint64_t h = 1469598103934665603ull) {
  return fnv1a(s.data(), s.size(), h);
}

// Runs fn(i) for i in [0, n) on up to `workers` threads. Work items must be
// independent; callers that need determinism combine results in index order.
// The first exception thrown by any item is rethrown after all threads join.
inline void parallel_for(int n, int workers, const std::function<void(int)>& fn) {
  if (workers <= 0) workers = static_cast<int>(std::thread::hardware_concurrency());
  if (workers < 1) workers = 1;
  if (workers == 1 || n <= 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  std::atomic<int> next{0};
  std::atomic<bool> failed{false};
  std::exception_ptr error;
  std::mutex error_mu;
  int count = std::min(workers, n);
  pool.reserve(static_cast<size_t>(count));
  for (int t = 0; t < count; ++t) {
    pool.emplace_back([&]() {
      for (;;) {
        int i = next.fetch_add(1);
        if (i >= n || failed.load()) return;
        try {
          fn(i);
        } catch (...) {
          std::lock_guard<std::mutex> lock(error_mu);
          if (!error) error = std::current_exception();
          failed.store(true);
          return;
        }
      }
    });
  }
  for (auto& th : pool) th.join();
  if (error) std::rethrow_exception(error);
}

}  // namespace dmgn
