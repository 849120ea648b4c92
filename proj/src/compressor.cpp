#include "compfit/compressor.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace compfit {
namespace {

double map_interval(const Interval& range, double u) {
  return range.lo + (range.hi - range.lo) * sigmoid(u);
}

double unmap_interval(const Interval& range, double value, const char* name) {
  if (!(value > range.lo && value < range.hi)) {
    throw std::domain_error(std::string(name) + " = " + std::to_string(value) +
                            " is not strictly inside (" + std::to_string(range.lo) + ", " +
                            std::to_string(range.hi) + ")");
  }
  return logit((value - range.lo) / (range.hi - range.lo));
}

}  // namespace

Vec5 ThetaRaw::vector() const {
  Vec5 v;
  v << ct_db, makeup_db, ratio_raw, alpha_at_raw, alpha_rt_raw;
  return v;
}

ThetaRaw ThetaRaw::from_vector(const Vec5& v) {
  return {v[kCt], v[kMakeup], v[kRatio], v[kAttack], v[kRelease]};
}

bool ThetaRaw::finite() const { return vector().allFinite(); }

void ParamBounds::validate() const {
  auto check = [](const Interval& r, const char* name) {
    if (!(r.lo < r.hi)) throw std::invalid_argument(std::string(name) + " bounds need lo < hi");
  };
  check(ratio, "ratio");
  check(attack_ms, "attack");
  check(release_ms, "release");
  if (ratio.lo < 1.0) throw std::invalid_argument("ratio lower bound must be >= 1");
  if (!(attack_ms.lo > 0.0) || !(release_ms.lo > 0.0)) {
    throw std::invalid_argument("time bounds must be positive");
  }
}

Interval ParamBounds::alpha_attack(int sample_rate) const {
  return {time_to_alpha(attack_ms.hi, sample_rate), time_to_alpha(attack_ms.lo, sample_rate)};
}

Interval ParamBounds::alpha_release(int sample_rate) const {
  return {time_to_alpha(release_ms.hi, sample_rate), time_to_alpha(release_ms.lo, sample_rate)};
}

double time_to_alpha(double time_ms, int sample_rate) {
  return -std::expm1(-2200.0 / (static_cast<double>(sample_rate) * time_ms));
}

double alpha_to_time(double alpha, int sample_rate) {
  return -2200.0 / (static_cast<double>(sample_rate) * std::log1p(-alpha));
}

CompressorParams CompressorParams::from_times(double ct_db, double ratio, double attack_ms,
                                              double release_ms, double makeup_db,
                                              int sample_rate) {
  return {ct_db,     ratio,
          attack_ms, release_ms,
          makeup_db, time_to_alpha(attack_ms, sample_rate),
          time_to_alpha(release_ms, sample_rate)};
}

CompressorParams default_initial_params(int sample_rate) {
  return CompressorParams::from_times(-36.0, 4.0, 1.0, 200.0, 0.0, sample_rate);
}

double sigmoid(double u) {
  if (u >= 0.0) return 1.0 / (1.0 + std::exp(-u));
  const double e = std::exp(u);
  return e / (1.0 + e);
}

double logit(double p) { return std::log(p / (1.0 - p)); }

CompressorParams constrain(const ThetaRaw& theta, const ParamBounds& bounds, int sample_rate) {
  CompressorParams p;
  p.ct_db = theta.ct_db;
  p.makeup_db = theta.makeup_db;
  p.ratio = map_interval(bounds.ratio, theta.ratio_raw);
  p.alpha_at = map_interval(bounds.alpha_attack(sample_rate), theta.alpha_at_raw);
  p.alpha_rt = map_interval(bounds.alpha_release(sample_rate), theta.alpha_rt_raw);
  p.attack_ms = alpha_to_time(p.alpha_at, sample_rate);
  p.release_ms = alpha_to_time(p.alpha_rt, sample_rate);
  return p;
}

ThetaRaw unconstrain(const CompressorParams& params, const ParamBounds& bounds, int sample_rate) {
  ThetaRaw t;
  t.ct_db = params.ct_db;
  t.makeup_db = params.makeup_db;
  t.ratio_raw = unmap_interval(bounds.ratio, params.ratio, "ratio");
  t.alpha_at_raw = unmap_interval(bounds.alpha_attack(sample_rate), params.alpha_at, "alpha_at");
  t.alpha_rt_raw = unmap_interval(bounds.alpha_release(sample_rate), params.alpha_rt, "alpha_rt");
  return t;
}

std::vector<double> level_db(std::span<const double> x) {
  std::vector<double> level(x.size());
  for (std::size_t n = 0; n < x.size(); ++n) {
    level[n] = 20.0 * std::log10(std::max(std::abs(x[n]), kLevelFloor));
  }
  return level;
}

std::vector<double> gain_computer(std::span<const double> x, double ct_db, double ratio) {
  const double slope = 1.0 - 1.0 / ratio;
  std::vector<double> g_hat = level_db(x);
  for (double& v : g_hat) {
    const double reduction_db = std::min(0.0, slope * (ct_db - v));
    v = std::exp(kNeperPerDb * reduction_db);
  }
  return g_hat;
}

ForwardTrace ballistics(std::span<const double> g_hat, double alpha_at, double alpha_rt,
                        double g_init) {
  const std::size_t n_samples = g_hat.size();
  ForwardTrace tr;
  tr.g_init = g_init;
  tr.g_hat.assign(g_hat.begin(), g_hat.end());
  tr.zeta.resize(n_samples);
  tr.beta.resize(n_samples);
  tr.g_tilde.resize(n_samples);
  tr.g.resize(n_samples);
  const double beta_at = 1.0 - alpha_at;
  const double beta_rt = 1.0 - alpha_rt;
  double prev = g_init;
  for (std::size_t n = 0; n < n_samples; ++n) {
    const bool attack = g_hat[n] < prev;
    const double alpha = attack ? alpha_at : alpha_rt;
    tr.zeta[n] = attack ? 1 : 0;
    tr.beta[n] = attack ? beta_at : beta_rt;
    tr.g_tilde[n] = alpha * g_hat[n];
    prev = tr.g_tilde[n] + tr.beta[n] * prev;
    tr.g[n] = prev;
  }
  return tr;
}

double db_to_gain(double db) { return std::pow(10.0, db / 20.0); }

std::vector<double> compress_samples(std::span<const double> x, const CompressorParams& params,
                                     double g_init, ForwardTrace* trace) {
  ForwardTrace tr =
      ballistics(gain_computer(x, params.ct_db, params.ratio), params.alpha_at, params.alpha_rt,
                 g_init);
  const double makeup = db_to_gain(params.makeup_db);
  std::vector<double> y(x.size());
  for (std::size_t n = 0; n < x.size(); ++n) y[n] = x[n] * tr.g[n] * makeup;
  if (trace != nullptr) {
    tr.level_db = level_db(x);
    *trace = std::move(tr);
  }
  return y;
}

Compressed compress(const AudioBuffer& x, const CompressorParams& params, double g_init) {
  ForwardTrace trace;
  auto y = compress_samples(x.samples(), params, g_init, &trace);
  return {AudioBuffer(std::move(y), x.sample_rate()), std::move(trace)};
}

Compressed compress(const AudioBuffer& x, const ThetaRaw& theta, const ParamBounds& bounds,
                    double g_init) {
  return compress(x, constrain(theta, bounds, x.sample_rate()), g_init);
}

}  // namespace compfit
