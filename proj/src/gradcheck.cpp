#include "compfit/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>

namespace compfit {
namespace {

struct Pattern {
  std::vector<std::uint8_t> zeta;
  std::vector<std::uint8_t> active;

  bool operator==(const Pattern&) const = default;
};

Pattern pattern(std::span<const double> x, const ThetaRaw& theta, const ParamBounds& bounds,
                int sample_rate) {
  const CompressorParams p = constrain(theta, bounds, sample_rate);
  ForwardTrace trace;
  compress_samples(x, p, 1.0, &trace);
  Pattern out{trace.zeta, std::vector<std::uint8_t>(x.size())};
  const double slope = 1.0 - 1.0 / p.ratio;
  for (std::size_t n = 0; n < x.size(); ++n) {
    out.active[n] = slope * (p.ct_db - trace.level_db[n]) < 0.0 ? 1 : 0;
  }
  return out;
}

long double sigmoid_ld(long double u) { return 1.0L / (1.0L + std::exp(-u)); }

// Straight branch-form loss in extended precision, used as the reference for
// central differences so that their rounding noise stays far below the
// tolerance even for near-zero gradient components.
long double reference_loss(std::span<const double> x, std::span<const double> y,
                           const Vec5& theta, const ParamBounds& bounds, int sample_rate,
                           bool preemphasis) {
  const long double ln10_20 = std::log(10.0L) / 20.0L;
  auto alpha = [&](double ms) {
    return -std::expm1(-2200.0L / (static_cast<long double>(sample_rate) * ms));
  };
  const long double ct = theta[kCt];
  const long double ratio =
      bounds.ratio.lo + (bounds.ratio.hi - bounds.ratio.lo) * sigmoid_ld(theta[kRatio]);
  const long double at_lo = alpha(bounds.attack_ms.hi), at_hi = alpha(bounds.attack_ms.lo);
  const long double rt_lo = alpha(bounds.release_ms.hi), rt_hi = alpha(bounds.release_ms.lo);
  const long double a_at = at_lo + (at_hi - at_lo) * sigmoid_ld(theta[kAttack]);
  const long double a_rt = rt_lo + (rt_hi - rt_lo) * sigmoid_ld(theta[kRelease]);
  const long double makeup = std::exp(ln10_20 * theta[kMakeup]);

  long double g = 1.0L;
  long double prev_out = 0.0L, prev_y = 0.0L, w_out = 0.0L, w_y = 0.0L, acc = 0.0L;
  for (std::size_t n = 0; n < x.size(); ++n) {
    const long double level =
        20.0L * std::log10(std::max<long double>(std::abs(x[n]), kLevelFloor));
    const long double red = std::min(0.0L, (1.0L - 1.0L / ratio) * (ct - level));
    const long double gh = std::exp(ln10_20 * red);
    const long double a = gh < g ? a_at : a_rt;
    g = a * gh + (1.0L - a) * g;
    long double out = x[n] * g * makeup;
    long double ref = y[n];
    if (preemphasis) {
      w_out = out - prev_out + 0.995L * w_out;
      w_y = ref - prev_y + 0.995L * w_y;
      prev_out = out;
      prev_y = ref;
      out = w_out;
      ref = w_y;
    }
    acc += (out - ref) * (out - ref);
  }
  return acc;
}

}  // namespace

double relative_error(double a, double b) {
  const double scale = std::max(std::abs(a), std::abs(b));
  return scale == 0.0 ? 0.0 : std::abs(a - b) / scale;
}

GradCheckResult gradient_check(const GradCheckOptions& options) {
  if (options.samples < 2 || options.draws < 1 || !(options.step > 0.0)) {
    throw std::invalid_argument("grad-check needs samples >= 2, draws >= 1, step > 0");
  }
  GradCheckResult result;
  const ParamBounds bounds;
  const int sr = options.sample_rate;
  std::mt19937_64 rng(options.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> uniform(0.0, 1.0);
  const int max_attempts = 20 * options.draws;

  for (int attempt = 0; static_cast<int>(result.draws.size()) < options.draws; ++attempt) {
    if (attempt >= max_attempts) {
      throw std::runtime_error("grad-check: too many non-smooth draws");
    }
    // Signal: noise under a piecewise level envelope spanning about 40 dB.
    std::vector<double> x(options.samples);
    double level_db = -30.0;
    const std::size_t hold = std::max<std::size_t>(options.samples / 8, 1);
    for (std::size_t n = 0; n < x.size(); ++n) {
      if (n % hold == 0) level_db = -45.0 + 40.0 * uniform(rng);
      x[n] = std::pow(10.0, level_db / 20.0) * normal(rng);
    }
    ThetaRaw theta{-40.0 + 30.0 * uniform(rng), -6.0 + 12.0 * uniform(rng), normal(rng),
                   normal(rng), normal(rng)};
    ThetaRaw other{theta.ct_db + 3.0 * normal(rng), theta.makeup_db + normal(rng),
                   theta.ratio_raw + normal(rng), theta.alpha_at_raw + normal(rng),
                   theta.alpha_rt_raw + normal(rng)};
    std::vector<double> y = compress_samples(x, constrain(other, bounds, sr));
    for (double& v : y) v += 1e-3 * normal(rng);

    const Pattern base = pattern(x, theta, bounds, sr);
    bool smooth = true;
    for (int i = 0; i < 5 && smooth; ++i) {
      for (double sign : {-1.0, 1.0}) {
        Vec5 v = theta.vector();
        v[i] += sign * options.step;
        if (!(pattern(x, ThetaRaw::from_vector(v), bounds, sr) == base)) smooth = false;
      }
    }
    if (!smooth) {
      ++result.rejected_nonsmooth;
      continue;
    }

    const AudioBuffer xb(x, sr);
    const AudioBuffer yb(y, sr);
    LossOptions lo;
    lo.preemphasis = options.preemphasis;
    const LossProblem problem(xb, yb, plan_chunks(x.size(), sr, 1e9, 0.0), bounds, lo);
    GradCheckDraw draw;
    draw.theta = theta;
    draw.analytic = problem.gradient(theta);
    for (int i = 0; i < 5; ++i) {
      Vec5 plus = theta.vector();
      Vec5 minus = theta.vector();
      plus[i] += options.step;
      minus[i] -= options.step;
      const long double diff =
          reference_loss(x, y, plus, bounds, sr, options.preemphasis) -
          reference_loss(x, y, minus, bounds, sr, options.preemphasis);
      draw.numeric[i] = static_cast<double>(diff / (2.0L * options.step));
      draw.max_rel_error =
          std::max(draw.max_rel_error, relative_error(draw.analytic[i], draw.numeric[i]));
    }
    result.max_rel_error = std::max(result.max_rel_error, draw.max_rel_error);
    result.draws.push_back(draw);
  }
  result.passed = result.max_rel_error < options.tolerance;
  return result;
}

}  // namespace compfit
