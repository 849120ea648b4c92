#pragma once

// First-order linear recurrences y[n] = b[n] + a[n] * y[n-1], evaluated either
// by a plain sequential loop or by a work-efficient associative scan over
// affine maps.

#include <cstddef>
#include <span>
#include <vector>

namespace compfit {

/// The affine map y -> a*y + b. Composition of these maps is associative,
/// which is what makes the recurrence scannable.
struct AffineElem {
  double a = 1.0;
  double b = 0.0;

  double apply(double y) const { return b + a * y; }
  friend bool operator==(const AffineElem&, const AffineElem&) = default;
};

/// Map that applies `first` and then `second`.
inline AffineElem affine_compose(const AffineElem& first, const AffineElem& second) {
  return {second.a * first.a, second.a * first.b + second.b};
}

/// Counters filled in by linrec_scan when a ScanOptions::stats sink is set.
struct ScanStats {
  std::size_t length = 0;
  std::size_t blocks = 0;
  /// Number of dependent parallel phases (local reduce, tree levels, local
  /// re-scan). Grows as O(log n).
  std::size_t phases = 0;
  bool used_sequential_fallback = false;
  double seconds = 0.0;
};

struct ScanOptions {
  int threads = 1;
  /// Inputs shorter than this are evaluated sequentially.
  std::size_t parallel_threshold = 4096;
  /// Elements per leaf block of the scan tree. Not a power of two: lanes that
  /// walk power-of-two strides alias in L1.
  std::size_t block_len = 520;
  ScanStats* stats = nullptr;
};

/// y[n] = b[n] + a[n] * y[n-1] with y[-1] = y_init.
std::vector<double> linrec_sequential(std::span<const double> a, std::span<const double> b,
                                      double y_init);

/// Same result as linrec_sequential (to rounding) computed with a two-phase
/// upsweep/downsweep scan over AffineElem. Leaf blocks are reduced and
/// re-scanned locally; block aggregates go through a Blelloch tree.
std::vector<double> linrec_scan(std::span<const double> a, std::span<const double> b,
                                double y_init, const ScanOptions& options = {});

/// Reversed-time recurrence y[n] = b[n] + a[n+1] * y[n+1] for n < N-1 and
/// y[N-1] = b[N-1] + y_init. The multiplier sequence keeps forward-time
/// indexing, so a[0] is never read. y_init is the already-weighted carry
/// entering at the tail (zero for a chunk with nothing after it).
std::vector<double> linrec_reversed(std::span<const double> a, std::span<const double> b,
                                    double y_init, const ScanOptions& options = {});

/// Selects the evaluation route for every recurrence in the differentiation
/// code. Sequential is the reference; Scan defers to linrec_scan, which itself
/// falls back to the sequential loop on short inputs.
enum class LinrecMethod { Sequential, Scan };

struct LinrecEngine {
  LinrecMethod method = LinrecMethod::Scan;
  ScanOptions options{};

  std::vector<double> forward(std::span<const double> a, std::span<const double> b,
                              double y_init = 0.0) const;
  std::vector<double> reversed(std::span<const double> a, std::span<const double> b,
                               double y_init = 0.0) const;
};

}  // namespace compfit
