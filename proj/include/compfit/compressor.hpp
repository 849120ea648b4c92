#pragma once

// Five-parameter feed-forward compressor: hard-knee gain computer followed by
// attack/release ballistics and a make-up gain.

#include <Eigen/Core>
#include <cstdint>
#include <span>
#include <vector>

#include "compfit/signal_io.hpp"

namespace compfit {

using Vec5 = Eigen::Matrix<double, 5, 1>;
using Mat5 = Eigen::Matrix<double, 5, 5>;

/// Floor applied to |x| before taking the level in dB (about -140 dBFS).
inline constexpr double kLevelFloor = 1e-7;
/// ln(10)/20: d/d(dB) of a linear gain 10^(dB/20), divided by the gain.
inline constexpr double kNeperPerDb = 0.11512925464970228420;

/// 10^(db/20).
double db_to_gain(double db);

/// Coordinates of the optimiser vector, in storage order.
enum ParamIndex : int { kCt = 0, kMakeup = 1, kRatio = 2, kAttack = 3, kRelease = 4 };

/// Unconstrained optimiser variables. Threshold and make-up are in dB and map
/// through unchanged; the other three go through a scaled sigmoid.
struct ThetaRaw {
  double ct_db = 0.0;
  double makeup_db = 0.0;
  double ratio_raw = 0.0;
  double alpha_at_raw = 0.0;
  double alpha_rt_raw = 0.0;

  Vec5 vector() const;
  static ThetaRaw from_vector(const Vec5& v);
  bool finite() const;
  friend bool operator==(const ThetaRaw&, const ThetaRaw&) = default;
};

struct Interval {
  double lo = 0.0;
  double hi = 0.0;
  friend bool operator==(const Interval&, const Interval&) = default;
};

/// Ranges of the bounded parameters. Smoothing-coefficient bounds follow from
/// the time bounds at the working sample rate (longer time, smaller alpha).
struct ParamBounds {
  Interval ratio{1.0, 20.0};
  Interval attack_ms{0.1, 100.0};
  Interval release_ms{10.0, 1000.0};

  /// Throws std::invalid_argument unless lo < hi, ratio.lo >= 1, times > 0.
  void validate() const;
  Interval alpha_attack(int sample_rate) const;
  Interval alpha_release(int sample_rate) const;
  friend bool operator==(const ParamBounds&, const ParamBounds&) = default;
};

/// alpha = 1 - exp(-2200 T / t) with T = 1/fs in seconds and t in ms.
double time_to_alpha(double time_ms, int sample_rate);
/// Inverse of time_to_alpha.
double alpha_to_time(double alpha, int sample_rate);

/// Human-readable parameter set. alpha_at/alpha_rt are the smoothing
/// coefficients matching attack_ms/release_ms at the stored rate.
struct CompressorParams {
  double ct_db = -36.0;
  double ratio = 4.0;
  double attack_ms = 1.0;
  double release_ms = 200.0;
  double makeup_db = 0.0;
  double alpha_at = 0.0;
  double alpha_rt = 0.0;

  /// Builds a consistent parameter set from times.
  static CompressorParams from_times(double ct_db, double ratio, double attack_ms,
                                     double release_ms, double makeup_db, int sample_rate);
  friend bool operator==(const CompressorParams&, const CompressorParams&) = default;
};

/// Initial values used when nothing else is specified.
CompressorParams default_initial_params(int sample_rate);

double sigmoid(double u);
double logit(double p);

CompressorParams constrain(const ThetaRaw& theta, const ParamBounds& bounds, int sample_rate);

/// Inverse of constrain. Bounded values must lie strictly inside their range,
/// otherwise std::domain_error.
ThetaRaw unconstrain(const CompressorParams& params, const ParamBounds& bounds, int sample_rate);

/// Per-sample intermediates of the forward pass, kept for differentiation.
struct ForwardTrace {
  std::vector<double> level_db;
  std::vector<double> g_hat;
  std::vector<std::uint8_t> zeta;  // 1 = attack phase
  std::vector<double> beta;
  std::vector<double> g_tilde;
  std::vector<double> g;
  double g_init = 1.0;

  std::size_t size() const { return g.size(); }
  /// g[n-1], with g[-1] = g_init.
  double g_prev(std::size_t n) const { return n == 0 ? g_init : g[n - 1]; }
};

/// 20 log10(max(|x|, kLevelFloor)).
std::vector<double> level_db(std::span<const double> x);

/// Hard-knee static curve: 10^(min(0, (1 - 1/R)(CT - L)) / 20) per sample.
std::vector<double> gain_computer(std::span<const double> x, double ct_db, double ratio);

/// Attack/release smoothing of the target gain. Fills every trace field
/// except level_db. A tie g_hat[n] == g[n-1] takes the release branch.
ForwardTrace ballistics(std::span<const double> g_hat, double alpha_at, double alpha_rt,
                        double g_init = 1.0);

/// Output samples x[n] g[n] 10^(makeup/20); `trace`, when given, receives the
/// intermediates.
std::vector<double> compress_samples(std::span<const double> x, const CompressorParams& params,
                                     double g_init = 1.0, ForwardTrace* trace = nullptr);

struct Compressed {
  AudioBuffer output;
  ForwardTrace trace;
};

Compressed compress(const AudioBuffer& x, const CompressorParams& params, double g_init = 1.0);
Compressed compress(const AudioBuffer& x, const ThetaRaw& theta, const ParamBounds& bounds,
                    double g_init = 1.0);

}  // namespace compfit
