#include "compfit/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "compfit/compressor.hpp"

namespace compfit {

std::vector<double> preemphasize(std::span<const double> x, const LinrecEngine& engine) {
  std::vector<double> diff(x.size());
  for (std::size_t n = 0; n < x.size(); ++n) diff[n] = x[n] - (n > 0 ? x[n - 1] : 0.0);
  const std::vector<double> pole(x.size(), kPreemphasisPole);
  return engine.forward(pole, diff, 0.0);
}

std::vector<double> preemphasize_adjoint(std::span<const double> c, const LinrecEngine& engine) {
  const std::vector<double> pole(c.size(), kPreemphasisPole);
  const std::vector<double> q = engine.reversed(pole, c, 0.0);
  std::vector<double> out(c.size());
  for (std::size_t n = 0; n < c.size(); ++n) out[n] = q[n] - (n + 1 < c.size() ? q[n + 1] : 0.0);
  return out;
}

AudioBuffer preemphasis(const AudioBuffer& x) {
  return AudioBuffer(preemphasize(x.samples()), x.sample_rate());
}

double esr(std::span<const double> y, std::span<const double> y_hat) {
  if (y.size() != y_hat.size()) throw std::invalid_argument("esr: length mismatch");
  double err = 0.0;
  double energy = 0.0;
  for (std::size_t n = 0; n < y.size(); ++n) {
    const double d = y[n] - y_hat[n];
    err += d * d;
    energy += y[n] * y[n];
  }
  if (!(energy > 0.0)) throw std::invalid_argument("esr: zero-energy reference");
  return err / energy;
}

double esr(const AudioBuffer& y, const AudioBuffer& y_hat) {
  return esr(y.samples(), y_hat.samples());
}

double esr_preemphasized(std::span<const double> y, std::span<const double> y_hat) {
  if (y.size() != y_hat.size()) throw std::invalid_argument("esr: length mismatch");
  return esr(preemphasize(y), preemphasize(y_hat));
}

void LdrOptions::validate() const {
  if (!(short_window > 0.0 && short_window < long_window)) {
    throw std::invalid_argument("LDR windows need 0 < short_window < long_window");
  }
}

double ldr(const AudioBuffer& y, const LdrOptions& options) {
  options.validate();
  const double period = 1.0 / y.sample_rate();
  const double a_short = std::exp(-period / options.short_window);
  const double a_long = std::exp(-period / options.long_window);
  const double floor = kLevelFloor * kLevelFloor;

  const std::size_t n_samples = y.size();
  auto skip = static_cast<std::size_t>(std::llround(options.long_window * y.sample_rate()));
  if (skip >= n_samples) skip = 0;

  // Both envelopes start from the mean power of the settling region so that
  // a stationary signal reads as stationary once it is skipped.
  const std::size_t head = skip > 0 ? skip : n_samples;
  double start = 0.0;
  for (std::size_t n = 0; n < head; ++n) start += y[n] * y[n];
  start /= static_cast<double>(head);
  double env_short = start;
  double env_long = start;
  double sum_sq = 0.0;
  for (std::size_t n = 0; n < n_samples; ++n) {
    const double p = y[n] * y[n];
    env_short = a_short * env_short + (1.0 - a_short) * p;
    env_long = a_long * env_long + (1.0 - a_long) * p;
    if (n < skip) continue;
    // 10 log10(sqrt(s) / sqrt(l)) = 5 log10(s / l)
    const double ratio_db =
        5.0 * std::log10(std::max(env_short, floor) / std::max(env_long, floor));
    sum_sq += ratio_db * ratio_db;
  }
  return std::sqrt(sum_sq / static_cast<double>(n_samples - skip));
}

double delta_ldr(const AudioBuffer& y, const AudioBuffer& y_hat, const LdrOptions& options) {
  return ldr(y_hat, options) - ldr(y, options);
}

}  // namespace compfit
