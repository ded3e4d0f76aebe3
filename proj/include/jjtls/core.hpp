#pragma once
// Shared error types, physical constants and seeding helpers.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace jjtls {

/// Bad input: malformed files, out-of-range arguments, violated preconditions.
/// The CLI maps this to exit code 1.
class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A numerical procedure could not produce a result (no resonance found,
/// calibration failure, non-convergence). The CLI maps this to exit code 2.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace constants {
// CODATA 2018, 10 significant digits.
inline constexpr double hbar = 1.054571817e-34;       // J s
inline constexpr double k_B = 1.380649000e-23;        // J / K
inline constexpr double flux_quantum = 2.067833848e-15;  // Wb
inline constexpr double pi = 3.14159265358979323846;
}  // namespace constants

inline void require(bool cond, const std::string& what) {
  if (!cond) throw ValidationError(what);
}

inline bool all_finite(std::span<const double> xs) {
  for (double x : xs)
    if (!std::isfinite(x)) return false;
  return true;
}

/// splitmix64 finalizer; used to derive independent stream seeds from a root
/// seed plus a (stage, index) counter.
inline std::uint64_t mix_seed(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t root, std::uint64_t stage,
                                 std::uint64_t index = 0) {
  return mix_seed(mix_seed(mix_seed(root) ^ stage) ^ index);
}

using Rng = std::mt19937_64;

/// Global worker count for ensemble loops. Results never depend on it because
/// every work item seeds its own generator from its index.
inline unsigned& worker_threads() {
  static unsigned n = 1;
  return n;
}

template <class Fn>
void parallel_for(std::size_t count, Fn&& fn) {
  const unsigned nt = std::max(1u, worker_threads());
  if (nt == 1 || count < 2) {
    for (std::size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  for (unsigned t = 0; t < nt; ++t) {
    pool.emplace_back([&, t] {
      for (std::size_t i = t; i < count; i += nt) fn(i);
    });
  }
  for (auto& th : pool) th.join();
}

inline double median(std::vector<double> v) {
  require(!v.empty(), "median of empty sequence");
  const std::size_t mid = v.size() / 2;
  std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid), v.end());
  double hi = v[mid];
  if (v.size() % 2 == 1) return hi;
  double lo = *std::max_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid));
  return 0.5 * (lo + hi);
}

inline double mean(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x;
  return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

}  // namespace jjtls
