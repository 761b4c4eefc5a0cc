#pragma once

// Signed Monte Carlo accumulation with deterministic, chunk-independent
// random streams.
//
// Samples are grouped into fixed blocks of kBlockSize. Block b of stream s
// under seed x draws from an mt19937_64 seeded with seed_seq{x, s, b}, and
// block partial sums are reduced in block order. Results therefore do not
// depend on the number of threads or chunks.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <exception>
#include <mutex>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

namespace hs {

using Rng = std::mt19937_64;

inline constexpr std::uint64_t kBlockSize = 1024;

struct BreakdownEntry {
  std::string label;
  double value = 0.0;
  double std_error = 0.0;
  std::uint64_t n_samples = 0;
  std::uint64_t n_rejected = 0;
};

struct Estimate {
  double value = 0.0;
  double std_error = 0.0;
  std::uint64_t n_samples = 0;
  std::uint64_t n_rejected = 0;
  std::uint64_t envelope_violations = 0;
  std::uint64_t seed = 0;
  // Relative standard error of the shared normalization constant.
  double norm_rel_error = 0.0;
  std::vector<BreakdownEntry> breakdown;

  // Sampling error with the normalization error folded in.
  double total_error() const { return std::hypot(std_error, value * norm_rel_error); }
};

struct SampleOutcome {
  double value = 0.0;
  bool rejected = false;
  bool envelope_violation = false;
};

struct Accumulator {
  double sum = 0.0;
  double sum_sq = 0.0;
  std::uint64_t n = 0;
  std::uint64_t rejected = 0;
  std::uint64_t envelope = 0;

  void add(const SampleOutcome& s) {
    ++n;
    if (s.rejected) ++rejected;
    if (s.envelope_violation) ++envelope;
    sum += s.value;
    sum_sq += s.value * s.value;
  }
  void merge(const Accumulator& o) {
    sum += o.sum;
    sum_sq += o.sum_sq;
    n += o.n;
    rejected += o.rejected;
    envelope += o.envelope;
  }
  double mean() const { return n ? sum / static_cast<double>(n) : 0.0; }
  double std_error() const {
    if (n < 2) return 0.0;
    const double dn = static_cast<double>(n);
    const double var = std::max(sum_sq - sum * sum / dn, 0.0) / (dn - 1.0);
    return std::sqrt(var / dn);
  }
  Estimate finish(std::uint64_t seed) const {
    Estimate e;
    e.value = mean();
    e.std_error = std_error();
    e.n_samples = n;
    e.n_rejected = rejected;
    e.envelope_violations = envelope;
    e.seed = seed;
    return e;
  }
};

struct SamplingPlan {
  std::uint64_t samples = 0;
  std::uint64_t seed = 0;
  std::uint64_t stream = 0;
  int threads = 1;
  // Work units handed to threads; 0 picks one per 16 blocks.
  std::uint64_t chunks = 0;
};

inline Rng block_rng(std::uint64_t seed, std::uint64_t stream, std::uint64_t block) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32),
                    static_cast<std::uint32_t>(block), static_cast<std::uint32_t>(block >> 32)};
  return Rng(seq);
}

// FNV-1a, for stable stream identifiers derived from labels.
inline std::uint64_t stream_id(std::string_view label, std::uint64_t salt = 0) {
  std::uint64_t h = 1469598103934665603ULL ^ salt;
  for (unsigned char c : label) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

// fn(Rng&) -> SampleOutcome, called once per sample.
template <class F>
Accumulator run_samples(const SamplingPlan& plan, F&& fn) {
  const std::uint64_t blocks = (plan.samples + kBlockSize - 1) / kBlockSize;
  std::vector<Accumulator> partial(blocks);
  if (blocks == 0) return {};
  std::uint64_t chunks = plan.chunks ? plan.chunks : (blocks + 15) / 16;
  chunks = std::clamp<std::uint64_t>(chunks, 1, blocks);
  const std::uint64_t per_chunk = (blocks + chunks - 1) / chunks;

  auto run_block = [&](std::uint64_t b) {
    Rng rng = block_rng(plan.seed, plan.stream, b);
    const std::uint64_t lo = b * kBlockSize;
    const std::uint64_t hi = std::min(plan.samples, lo + kBlockSize);
    Accumulator acc;
    for (std::uint64_t s = lo; s < hi; ++s) acc.add(fn(rng));
    partial[b] = acc;
  };

  std::atomic<std::uint64_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto worker = [&] {
    while (true) {
      const std::uint64_t c = next.fetch_add(1);
      if (c >= chunks) return;
      try {
        for (std::uint64_t b = c * per_chunk; b < std::min(blocks, (c + 1) * per_chunk); ++b) run_block(b);
      } catch (...) {
        std::lock_guard lock(failure_mutex);
        if (!failure) failure = std::current_exception();
        next = chunks;
        return;
      }
    }
  };
  const int threads = std::max(1, plan.threads);
  if (threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int i = 0; i < threads; ++i) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }
  if (failure) std::rethrow_exception(failure);
  Accumulator total;
  for (const auto& p : partial) total.merge(p);
  return total;
}

// Sum of c_i * e_i with independent errors combined in quadrature.
Estimate combine(std::span<const Estimate> parts, std::span<const double> coefficients);

// |a - b| / sqrt(se_a^2 + se_b^2); 0 when both errors vanish and a == b.
double z_score(const Estimate& a, const Estimate& b);

}  // namespace hs
