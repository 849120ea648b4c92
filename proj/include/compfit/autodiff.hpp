#pragma once

// Hand-written first- and second-order differentiation of the squared-error
// loss through the compressor.
//
// The ballistics recursion g[n] = g~[n] + beta[n] g[n-1] is the only part with
// memory. Its reverse-mode adjoint is the same one-pole filter run in reversed
// time with multiplier beta[n+1]; its forward-mode tangent is the same filter
// in forward time. Second-order passes reuse that structure: the adjoint of
// the reversed filter runs forward in time, and the tangent of the reversed
// filter runs in reversed time with one extra input term. Every recursion goes
// through LinrecEngine, so the scan route is used wherever it pays off.
//
// The attack/release indicator zeta is treated as constant, |x| and the
// threshold clamp take zero sub-gradients at their kinks.

#include <span>
#include <string>
#include <vector>

#include "compfit/compressor.hpp"
#include "compfit/scan.hpp"
#include "compfit/signal_io.hpp"

namespace compfit {

using Gradient = Vec5;

struct Hessian {
  Mat5 matrix = Mat5::Zero();
  bool symmetrized = false;

  /// (H + H') / 2.
  Hessian symmetrize() const;
  /// max |H - H'| / max |H| (0 for the zero matrix).
  double relative_asymmetry() const;
};

enum class HessianStrategy { RevRev, FwdRev, RevFwd, FwdFwd };

inline constexpr HessianStrategy kAllStrategies[] = {
    HessianStrategy::RevRev, HessianStrategy::FwdRev, HessianStrategy::RevFwd,
    HessianStrategy::FwdFwd};

std::string to_string(HessianStrategy strategy);
/// Accepts rev-rev, fwd-rev, rev-fwd, fwd-fwd.
HessianStrategy parse_strategy(const std::string& name);

/// Constrained parameters at a raw point plus first and second derivatives of
/// the sigmoid maps.
struct ModelPoint {
  ThetaRaw theta;
  CompressorParams params;
  double makeup_gain = 1.0;
  double ratio_d1 = 0.0;
  double ratio_d2 = 0.0;
  double attack_d1 = 0.0;
  double attack_d2 = 0.0;
  double release_d1 = 0.0;
  double release_d2 = 0.0;

  static ModelPoint at(const ThetaRaw& theta, const ParamBounds& bounds, int sample_rate);
};

/// Reverse mode through the compressor: the gradient of <v, y_hat> w.r.t. the
/// raw parameters, given the forward trace for input x at `point`.
Gradient vjp_compressor(const ForwardTrace& trace, std::span<const double> x,
                        const ModelPoint& point, std::span<const double> v,
                        const LinrecEngine& engine = {});

/// Forward mode through the compressor: d y_hat along dtheta.
std::vector<double> jvp_compressor(const ForwardTrace& trace, std::span<const double> x,
                                   const ModelPoint& point, const Vec5& dtheta,
                                   const LinrecEngine& engine = {});

/// Loss and all derivative passes for one chunk. The forward pass and the
/// first-order backward pass are run once at construction.
class ChunkDerivatives {
 public:
  /// `target` is the (pre-emphasised, if enabled) reference over the whole
  /// chunk; samples before eval_offset are warm-up and excluded from the loss.
  ChunkDerivatives(std::span<const double> x, std::span<const double> target,
                   std::size_t eval_offset, bool preemphasis, const ModelPoint& point,
                   const LinrecEngine& engine = {});

  double loss() const { return loss_; }
  const Gradient& gradient() const { return gradient_; }
  const ForwardTrace& trace() const { return trace_; }
  const std::vector<double>& output() const { return y_hat_; }
  /// dL/dy_hat.
  const std::vector<double>& output_cotangent() const { return v_; }
  /// Total adjoint of the smoothed gain g[n].
  const std::vector<double>& gain_adjoint() const { return adj_g_; }

  /// Reverse-over-reverse: u' H.
  Vec5 vjp_backward(const Vec5& u) const;
  /// Forward-over-reverse: H dtheta.
  Vec5 jvp_backward(const Vec5& dtheta) const;
  /// Reverse-over-forward: gradient of <grad L, dtheta> where the inner
  /// directional derivative is taken in forward mode. Equals H dtheta.
  Vec5 vjp_forward(const Vec5& dtheta) const;
  /// Forward-over-forward: d1' H d2.
  double second_directional(const Vec5& d1, const Vec5& d2) const;

  /// All five rows/columns by the chosen composition; not symmetrized.
  Mat5 hessian(HessianStrategy strategy) const;

 private:
  struct Tangent {
    std::vector<double> g_hat;
    std::vector<double> beta;
    std::vector<double> g;
    std::vector<double> y_hat;
  };

  Tangent forward_tangent(const Vec5& d) const;
  std::vector<double> filter_output(std::span<const double> signal) const;
  std::vector<double> filter_output_adjoint(std::span<const double> cot) const;
  double beta_d1(std::size_t n) const;
  double beta_d2(std::size_t n) const;
  int beta_index(std::size_t n) const { return trace_.zeta[n] ? kAttack : kRelease; }

  std::span<const double> x_;
  std::size_t eval_offset_;
  bool preemphasis_;
  ModelPoint point_;
  LinrecEngine engine_;

  ForwardTrace trace_;
  std::vector<double> y_hat_;
  std::vector<double> residual_;  // masked, filtered error
  std::vector<double> v_;         // dL/dy_hat
  std::vector<double> adj_g_;     // total adjoint of g[n]
  // d g_hat / d(ct, ratio_raw) and second derivatives.
  std::vector<double> dgh_ct_, dgh_r_, d2gh_cc_, d2gh_cr_, d2gh_rr_;
  double loss_ = 0.0;
  Gradient gradient_ = Gradient::Zero();
};

struct LossOptions {
  bool preemphasis = true;
  int threads = 1;
  LinrecEngine engine{};
};

/// Squared error between the compressor output and a target, summed over the
/// evaluation regions of a chunk plan. Chunks are processed independently
/// (fresh ballistics and filter state) and reduced in chunk order.
class LossProblem {
 public:
  LossProblem(const AudioBuffer& x, const AudioBuffer& y, ChunkPlan plan, ParamBounds bounds,
              LossOptions options = {});

  int sample_rate() const { return sample_rate_; }
  const ParamBounds& bounds() const { return bounds_; }
  const ChunkPlan& plan() const { return plan_; }
  const LossOptions& options() const { return options_; }

  double loss(const ThetaRaw& theta) const;
  Gradient gradient(const ThetaRaw& theta) const;
  Hessian hessian(const ThetaRaw& theta, HessianStrategy strategy, bool symmetrize = true) const;

  struct Evaluation {
    double loss = 0.0;
    Gradient gradient = Gradient::Zero();
    Hessian hessian;
  };
  Evaluation evaluate(const ThetaRaw& theta, HessianStrategy strategy) const;

 private:
  template <typename PerChunk, typename Result>
  Result reduce(const PerChunk& fn, Result zero) const;

  std::vector<double> x_;
  int sample_rate_;
  ChunkPlan plan_;
  ParamBounds bounds_;
  LossOptions options_;
  std::vector<std::vector<double>> targets_;  // per chunk, filtered when enabled
};

}  // namespace compfit
