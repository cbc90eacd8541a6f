#pragma once

#include <cstddef>
#include <cstdint>
#include <limits>
#include <numeric>
#include <span>
#include <algorithm>
#include <unordered_map>
#include <vector>

#include "odtk/core.hpp"

namespace odtk {

// Counter-based generator: the i-th output (i = 1, 2, ...) of a stream keyed by
// `key` is mix64(key + i * 0x9E3779B97F4A7C15), with mix64 the SplitMix64
// finalizer. This is SplitMix64 exactly, so any language can reproduce a draw
// from (key, i) alone.
//
// Bounded integers use rejection on the top of the 64-bit range:
//   limit = 2^64 - (2^64 mod n); redraw while x >= limit; return x mod n.
//
// Distinct-index sampling is a partial Fisher-Yates shuffle of [0, n): for
// i = 0..k-1, j = i + uniform(n - i), swap(slot[i], slot[j]); the sample is
// slot[0..k) sorted ascending.

inline constexpr std::uint64_t kGoldenGamma = 0x9E3779B97F4A7C15ULL;

constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

class CounterRng {
public:
  explicit constexpr CounterRng(std::uint64_t key) noexcept : key_(key) {}

  /// Independent stream for sub-task `stream` (e.g. one Monte-Carlo trial).
  static constexpr CounterRng stream(std::uint64_t seed,
                                     std::uint64_t stream) noexcept {
    return CounterRng(mix64(seed ^ mix64(stream + kGoldenGamma)));
  }

  constexpr std::uint64_t next() noexcept {
    ++counter_;
    return mix64(key_ + counter_ * kGoldenGamma);
  }

  /// Uniform integer in [0, n), n >= 1.
  constexpr std::uint64_t uniform(std::uint64_t n) noexcept {
    const std::uint64_t rem = (std::numeric_limits<std::uint64_t>::max() % n + 1) % n;
    const std::uint64_t limit = rem == 0 ? 0 : std::numeric_limits<std::uint64_t>::max() - rem + 1;
    for (;;) {
      const std::uint64_t x = next();
      if (limit == 0 || x < limit)
        return x % n;
    }
  }

  /// Uniform double in [0, 1) from the top 53 bits.
  constexpr double uniform01() noexcept {
    return static_cast<double>(next() >> 11) * 0x1.0p-53;
  }

  constexpr std::uint64_t counter() const noexcept { return counter_; }

private:
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

/// k distinct indices from [0, n), sorted. Sparse partial Fisher-Yates: the
/// swap table only records displaced slots, so cost is O(k) for any n.
inline IndexSet sample_distinct(std::size_t k, std::size_t n, CounterRng &rng) {
  require(k <= n, ErrorKind::InvalidArgument,
          "cannot draw " + std::to_string(k) + " distinct indices from " +
              std::to_string(n));
  std::unordered_map<std::size_t, std::size_t> displaced;
  displaced.reserve(2 * k);
  auto slot = [&](std::size_t i) {
    auto it = displaced.find(i);
    return it == displaced.end() ? i : it->second;
  };
  IndexSet out(k);
  for (std::size_t i = 0; i < k; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(rng.uniform(n - i));
    const std::size_t vi = slot(i);
    const std::size_t vj = slot(j);
    out[i] = vj;
    displaced[j] = vi;
    displaced[i] = vj;
  }
  std::sort(out.begin(), out.end());
  return out;
}

/// Same draws as sample_distinct over a fixed population, reusing a dense
/// permutation that is restored after every call. Output is unsorted.
class DistinctSampler {
public:
  explicit DistinctSampler(std::size_t n) : slots_(n) {
    std::iota(slots_.begin(), slots_.end(), std::size_t{0});
  }

  std::span<const std::size_t> draw(std::size_t k, CounterRng &rng) {
    require(k <= slots_.size(), ErrorKind::InvalidArgument, "sample larger than population");
    swaps_.clear();
    const std::size_t n = slots_.size();
    for (std::size_t i = 0; i < k; ++i) {
      const std::size_t j = i + static_cast<std::size_t>(rng.uniform(n - i));
      std::swap(slots_[i], slots_[j]);
      swaps_.push_back(j);
    }
    out_.assign(slots_.begin(), slots_.begin() + static_cast<std::ptrdiff_t>(k));
    for (std::size_t i = k; i-- > 0;) std::swap(slots_[i], slots_[swaps_[i]]);
    return out_;
  }

private:
  std::vector<std::size_t> slots_;
  std::vector<std::size_t> swaps_;
  std::vector<std::size_t> out_;
};

} // namespace odtk
