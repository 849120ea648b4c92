#pragma once

#include <span>
#include <vector>

#include "compfit/scan.hpp"
#include "compfit/signal_io.hpp"

namespace compfit {

/// Pole of the pre-emphasis filter (1 - z^-1) / (1 - 0.995 z^-1).
inline constexpr double kPreemphasisPole = 0.995;

/// w[n] = x[n] - x[n-1] + 0.995 w[n-1], zero initial state.
std::vector<double> preemphasize(std::span<const double> x, const LinrecEngine& engine = {});

/// Transpose of preemphasize: for any u, v,
/// <u, preemphasize(v)> == <preemphasize_adjoint(u), v>.
std::vector<double> preemphasize_adjoint(std::span<const double> c,
                                         const LinrecEngine& engine = {});

AudioBuffer preemphasis(const AudioBuffer& x);

/// Error-to-signal ratio (y - y_hat)'(y - y_hat) / y'y on raw samples. Throws
/// std::invalid_argument on length mismatch or a zero-energy reference.
double esr(std::span<const double> y, std::span<const double> y_hat);
double esr(const AudioBuffer& y, const AudioBuffer& y_hat);

/// ESR after pre-emphasising both signals; this is the evaluation ESR.
double esr_preemphasized(std::span<const double> y, std::span<const double> y_hat);

struct LdrOptions {
  double short_window = 0.05;  // seconds
  double long_window = 3.0;    // seconds

  void validate() const;
};

/// Loudness dynamic range in dB. RMS envelopes are exponential moving
/// averages of y^2 with coefficient exp(-T/window), floored at kLevelFloor^2,
/// both started at the mean power of the first long_window seconds. Those
/// seconds are skipped as envelope settling, unless that would leave nothing
/// to average (then the start is the mean power of the whole signal).
double ldr(const AudioBuffer& y, const LdrOptions& options = {});

/// LDR(y_hat) - LDR(y); positive when y_hat is less compressed than y.
double delta_ldr(const AudioBuffer& y, const AudioBuffer& y_hat, const LdrOptions& options = {});

}  // namespace compfit
