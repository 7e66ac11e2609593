#pragma once

#include <atomic>
#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>
#include <functional>

namespace pgvi {

inline constexpr const char* version_string = "0.1.0";

// Error taxonomy: parse problems (formulas, documents, command lines), data
// validation problems, and numerical failures map onto distinct exit codes
// in the CLI front end.
struct FormulaError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct NumericalError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ConvergenceError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

using Rng = std::mt19937_64;

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

// Seeded generator for an independent stream. Streams derived from the same
// seed with distinct ids are used for chunked draw generation so results do
// not depend on the number of worker threads.
inline Rng make_rng(std::uint64_t seed, std::uint64_t stream = 0) {
  return Rng(splitmix64(seed ^ splitmix64(stream)));
}

inline double logistic(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// ln cosh(x) without overflow for large |x|.
inline double log_cosh(double x) {
  const double a = std::abs(x);
  return a + std::log1p(std::exp(-2.0 * a)) - std::log(2.0);
}

// FNV-1a 64-bit digest; used to fingerprint input files in run manifests.
inline std::uint64_t fnv1a(const void* data, std::size_t len,
                           std::uint64_t h = 0xcbf29ce484222325ull) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < len; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ull;
  }
  return h;
}

// Runs fn(first, last) over [0, n) split into fixed-size chunks. The chunk
// grid depends only on n and chunk, never on the thread count, so chunked
// RNG streams stay deterministic.
inline void parallel_chunks(std::size_t n, std::size_t chunk, unsigned threads,
                            const std::function<void(std::size_t, std::size_t, std::size_t)>& fn) {
  if (chunk == 0) chunk = 1;
  const std::size_t nchunks = (n + chunk - 1) / chunk;
  if (threads <= 1 || nchunks <= 1) {
    for (std::size_t c = 0; c < nchunks; ++c)
      fn(c, c * chunk, std::min(n, (c + 1) * chunk));
    return;
  }
  std::vector<std::thread> pool;
  std::atomic_size_t next{0};
  const unsigned nt = std::min<std::size_t>(threads, nchunks);
  pool.reserve(nt);
  for (unsigned t = 0; t < nt; ++t) {
    pool.emplace_back([&] {
      for (;;) {
        const std::size_t c = next.fetch_add(1);
        if (c >= nchunks) return;
        fn(c, c * chunk, std::min(n, (c + 1) * chunk));
      }
    });
  }
  for (auto& th : pool) th.join();
}

}  // namespace pgvi
