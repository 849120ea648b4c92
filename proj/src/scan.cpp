#include "compfit/scan.hpp"

#include <algorithm>
#include <array>
#include <chrono>
#include <limits>
#include <stdexcept>

#include "compfit/parallel.hpp"

namespace compfit {
namespace {

constexpr std::size_t kLanes = 8;
// Tree levels with fewer independent compositions than this run inline.
constexpr std::size_t kMinParallelLevel = 2048;

void check_lengths(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) {
    throw std::invalid_argument("linear recurrence: length mismatch between multipliers (" +
                                std::to_string(a.size()) + ") and inputs (" +
                                std::to_string(b.size()) + ")");
  }
}

struct BlockRange {
  std::size_t begin;
  std::size_t end;
};

// Reduces blocks [first, last) of equal length `len` starting at `begin`,
// interleaving kLanes independent chains so the multiply-add latency of one
// chain is hidden behind the others.
void reduce_blocks(const double* a, const double* b, std::size_t len, std::size_t n,
                   std::size_t first, std::size_t last, AffineElem* out) {
  std::size_t blk = first;
  for (; blk + kLanes <= last && (blk + kLanes) * len <= n; blk += kLanes) {
    std::array<double, kLanes> acc_a;
    std::array<double, kLanes> acc_b;
    std::array<const double*, kLanes> pa;
    std::array<const double*, kLanes> pb;
    for (std::size_t l = 0; l < kLanes; ++l) {
      acc_a[l] = 1.0;
      acc_b[l] = 0.0;
      pa[l] = a + (blk + l) * len;
      pb[l] = b + (blk + l) * len;
    }
    for (std::size_t t = 0; t < len; ++t) {
      for (std::size_t l = 0; l < kLanes; ++l) {
        const double m = pa[l][t];
        acc_b[l] = pb[l][t] + m * acc_b[l];
        acc_a[l] = m * acc_a[l];
      }
    }
    for (std::size_t l = 0; l < kLanes; ++l) out[blk + l] = {acc_a[l], acc_b[l]};
  }
  for (; blk < last; ++blk) {
    const std::size_t begin = blk * len;
    const std::size_t end = std::min(n, begin + len);
    AffineElem acc;
    for (std::size_t i = begin; i < end; ++i) {
      acc.b = b[i] + a[i] * acc.b;
      acc.a = a[i] * acc.a;
    }
    out[blk] = acc;
  }
}

// Re-runs the recurrence inside blocks [first, last) from their carried-in
// states.
void rescan_blocks(const double* a, const double* b, std::size_t len, std::size_t n,
                   std::size_t first, std::size_t last, const double* carry, double* y) {
  std::size_t blk = first;
  for (; blk + kLanes <= last && (blk + kLanes) * len <= n; blk += kLanes) {
    std::array<double, kLanes> state;
    std::array<const double*, kLanes> pa;
    std::array<const double*, kLanes> pb;
    std::array<double*, kLanes> py;
    for (std::size_t l = 0; l < kLanes; ++l) {
      state[l] = carry[blk + l];
      pa[l] = a + (blk + l) * len;
      pb[l] = b + (blk + l) * len;
      py[l] = y + (blk + l) * len;
    }
    for (std::size_t t = 0; t < len; ++t) {
      for (std::size_t l = 0; l < kLanes; ++l) {
        state[l] = pb[l][t] + pa[l][t] * state[l];
        py[l][t] = state[l];
      }
    }
  }
  for (; blk < last; ++blk) {
    const std::size_t begin = blk * len;
    const std::size_t end = std::min(n, begin + len);
    double state = carry[blk];
    for (std::size_t i = begin; i < end; ++i) {
      state = b[i] + a[i] * state;
      y[i] = state;
    }
  }
}

template <typename Fn>
void run_level(std::size_t count, int threads, Fn&& fn) {
  if (count < kMinParallelLevel) {
    for (std::size_t i = 0; i < count; ++i) fn(i);
  } else {
    parallel_for(count, threads, fn);
  }
}

// In-place exclusive Blelloch scan; tree.size() must be a power of two.
// Returns the number of tree levels walked (upsweep plus downsweep).
std::size_t blelloch_exclusive(std::vector<AffineElem>& tree, int threads) {
  const std::size_t m = tree.size();
  std::size_t levels = 0;
  for (std::size_t stride = 1; stride < m; stride *= 2) {
    const std::size_t pairs = m / (2 * stride);
    run_level(pairs, threads, [&](std::size_t p) {
      const std::size_t right = (2 * p + 2) * stride - 1;
      const std::size_t left = right - stride;
      tree[right] = affine_compose(tree[left], tree[right]);
    });
    ++levels;
  }
  tree[m - 1] = AffineElem{};
  for (std::size_t stride = m / 2; stride >= 1; stride /= 2) {
    const std::size_t pairs = m / (2 * stride);
    run_level(pairs, threads, [&](std::size_t p) {
      const std::size_t right = (2 * p + 2) * stride - 1;
      const std::size_t left = right - stride;
      const AffineElem prefix = tree[right];
      tree[right] = affine_compose(prefix, tree[left]);
      tree[left] = prefix;
    });
    ++levels;
  }
  return levels;
}

std::vector<BlockRange> split_blocks(std::size_t blocks, int threads) {
  const std::size_t workers =
      std::clamp<std::size_t>(static_cast<std::size_t>(std::max(threads, 1)), 1, blocks);
  std::vector<BlockRange> ranges;
  ranges.reserve(workers);
  for (std::size_t w = 0; w < workers; ++w) {
    ranges.push_back({blocks * w / workers, blocks * (w + 1) / workers});
  }
  return ranges;
}

}  // namespace

std::vector<double> linrec_sequential(std::span<const double> a, std::span<const double> b,
                                      double y_init) {
  check_lengths(a, b);
  std::vector<double> y(a.size());
  double state = y_init;
  for (std::size_t n = 0; n < a.size(); ++n) {
    state = b[n] + a[n] * state;
    y[n] = state;
  }
  return y;
}

std::vector<double> linrec_scan(std::span<const double> a, std::span<const double> b,
                                double y_init, const ScanOptions& options) {
  check_lengths(a, b);
  const auto start = std::chrono::steady_clock::now();
  const std::size_t n = a.size();
  ScanStats local;
  local.length = n;

  std::vector<double> y;
  if (n < std::max<std::size_t>(options.parallel_threshold, 1)) {
    y = linrec_sequential(a, b, y_init);
    local.used_sequential_fallback = true;
    local.blocks = n == 0 ? 0 : 1;
    local.phases = n == 0 ? 0 : 1;
  } else {
    const std::size_t len = std::max<std::size_t>(options.block_len, 1);
    const std::size_t blocks = (n + len - 1) / len;
    std::size_t padded = 1;
    while (padded < blocks) padded *= 2;
    const auto ranges = split_blocks(blocks, options.threads);

    // Upsweep, leaf level: one aggregate per block.
    std::vector<AffineElem> tree(padded);
    parallel_for(ranges.size(), options.threads, [&](std::size_t w) {
      reduce_blocks(a.data(), b.data(), len, n, ranges[w].begin, ranges[w].end, tree.data());
    });
    // Tree levels over block aggregates; padding entries stay identity.
    const std::size_t tree_levels = blelloch_exclusive(tree, options.threads);

    // Downsweep, leaf level.
    std::vector<double> carry(blocks);
    for (std::size_t k = 0; k < blocks; ++k) carry[k] = tree[k].apply(y_init);
    y.resize(n);
    parallel_for(ranges.size(), options.threads, [&](std::size_t w) {
      rescan_blocks(a.data(), b.data(), len, n, ranges[w].begin, ranges[w].end, carry.data(),
                    y.data());
    });
    local.blocks = blocks;
    local.phases = tree_levels + 2;
  }
  local.seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  if (options.stats != nullptr) *options.stats = local;
  return y;
}

std::vector<double> linrec_reversed(std::span<const double> a, std::span<const double> b,
                                    double y_init, const ScanOptions& options) {
  check_lengths(a, b);
  const std::size_t n = a.size();
  if (n < std::max<std::size_t>(options.parallel_threshold, 1)) {
    std::vector<double> y(n);
    if (n == 0) return y;
    double state = b[n - 1] + y_init;
    y[n - 1] = state;
    for (std::size_t k = n - 1; k-- > 0;) {
      state = b[k] + a[k + 1] * state;
      y[k] = state;
    }
    if (options.stats != nullptr) {
      *options.stats = ScanStats{n, 1, 1, true, 0.0};
    }
    return y;
  }
  std::vector<double> ra(n);
  std::vector<double> rb(n);
  ra[0] = 1.0;
  for (std::size_t k = 0; k < n; ++k) {
    rb[k] = b[n - 1 - k];
    if (k > 0) ra[k] = a[n - k];
  }
  auto y = linrec_scan(ra, rb, y_init, options);
  std::reverse(y.begin(), y.end());
  return y;
}

std::vector<double> LinrecEngine::forward(std::span<const double> a, std::span<const double> b,
                                          double y_init) const {
  if (method == LinrecMethod::Sequential) return linrec_sequential(a, b, y_init);
  return linrec_scan(a, b, y_init, options);
}

std::vector<double> LinrecEngine::reversed(std::span<const double> a,
                                           std::span<const double> b, double y_init) const {
  if (method == LinrecMethod::Sequential) {
    ScanOptions seq = options;
    seq.parallel_threshold = std::numeric_limits<std::size_t>::max();
    seq.stats = nullptr;
    return linrec_reversed(a, b, y_init, seq);
  }
  return linrec_reversed(a, b, y_init, options);
}

}  // namespace compfit
