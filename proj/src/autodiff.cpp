#include "compfit/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "compfit/metrics.hpp"
#include "compfit/parallel.hpp"

namespace compfit {
namespace {

constexpr double kC = kNeperPerDb;

// First derivatives of g_hat[n] w.r.t. (ct, ratio_raw); zero where the
// threshold clamp is active.
struct GainSlopes {
  std::vector<double> ct;
  std::vector<double> ratio;
};

struct CurveTerms {
  double slope;   // 1 - 1/R
  double slope1;  // d slope / d ratio_raw
  double slope2;  // d^2 slope / d ratio_raw^2
};

CurveTerms curve_terms(const ModelPoint& p) {
  const double r = p.params.ratio;
  return {1.0 - 1.0 / r, p.ratio_d1 / (r * r),
          p.ratio_d2 / (r * r) - 2.0 * p.ratio_d1 * p.ratio_d1 / (r * r * r)};
}

GainSlopes gain_slopes(const ForwardTrace& trace, const ModelPoint& p) {
  const CurveTerms k = curve_terms(p);
  const std::size_t n_samples = trace.size();
  GainSlopes s{std::vector<double>(n_samples, 0.0), std::vector<double>(n_samples, 0.0)};
  for (std::size_t n = 0; n < n_samples; ++n) {
    const double d = p.params.ct_db - trace.level_db[n];
    if (!(k.slope * d < 0.0)) continue;
    const double scale = kC * trace.g_hat[n];
    s.ct[n] = scale * k.slope;
    s.ratio[n] = scale * d * k.slope1;
  }
  return s;
}

void check_trace(const ForwardTrace& trace, std::size_t n_x, std::size_t n_other) {
  if (trace.size() != n_x || trace.level_db.size() != n_x || n_other != n_x) {
    throw std::invalid_argument("trace/input mismatch: trace has " +
                                std::to_string(trace.size()) + " samples, input " +
                                std::to_string(n_x) + ", other operand " +
                                std::to_string(n_other));
  }
}

double beta_slope(const ForwardTrace& trace, const ModelPoint& p, std::size_t n) {
  return trace.zeta[n] ? -p.attack_d1 : -p.release_d1;
}

}  // namespace

Hessian Hessian::symmetrize() const {
  Hessian out;
  out.matrix = 0.5 * (matrix + matrix.transpose());
  out.symmetrized = true;
  return out;
}

double Hessian::relative_asymmetry() const {
  const double scale = matrix.cwiseAbs().maxCoeff();
  if (scale == 0.0) return 0.0;
  return (matrix - matrix.transpose()).cwiseAbs().maxCoeff() / scale;
}

std::string to_string(HessianStrategy strategy) {
  switch (strategy) {
    case HessianStrategy::RevRev: return "rev-rev";
    case HessianStrategy::FwdRev: return "fwd-rev";
    case HessianStrategy::RevFwd: return "rev-fwd";
    case HessianStrategy::FwdFwd: return "fwd-fwd";
  }
  return "unknown";
}

HessianStrategy parse_strategy(const std::string& name) {
  for (HessianStrategy s : kAllStrategies) {
    if (to_string(s) == name) return s;
  }
  throw std::invalid_argument("unknown Hessian strategy '" + name +
                              "' (expected rev-rev, fwd-rev, rev-fwd or fwd-fwd)");
}

ModelPoint ModelPoint::at(const ThetaRaw& theta, const ParamBounds& bounds, int sample_rate) {
  ModelPoint p;
  p.theta = theta;
  p.params = constrain(theta, bounds, sample_rate);
  p.makeup_gain = db_to_gain(theta.makeup_db);
  auto slopes = [](const Interval& range, double u, double& d1, double& d2) {
    const double s = sigmoid(u);
    d1 = (range.hi - range.lo) * s * (1.0 - s);
    d2 = d1 * (1.0 - 2.0 * s);
  };
  slopes(bounds.ratio, theta.ratio_raw, p.ratio_d1, p.ratio_d2);
  slopes(bounds.alpha_attack(sample_rate), theta.alpha_at_raw, p.attack_d1, p.attack_d2);
  slopes(bounds.alpha_release(sample_rate), theta.alpha_rt_raw, p.release_d1, p.release_d2);
  return p;
}

Gradient vjp_compressor(const ForwardTrace& trace, std::span<const double> x,
                        const ModelPoint& point, std::span<const double> v,
                        const LinrecEngine& engine) {
  check_trace(trace, x.size(), v.size());
  const std::size_t n_samples = x.size();
  const double gain = point.makeup_gain;
  std::vector<double> adj_out(n_samples);
  for (std::size_t n = 0; n < n_samples; ++n) adj_out[n] = v[n] * x[n] * gain;
  const std::vector<double> adj_g = engine.reversed(trace.beta, adj_out, 0.0);
  const GainSlopes slopes = gain_slopes(trace, point);

  Gradient grad = Gradient::Zero();
  for (std::size_t n = 0; n < n_samples; ++n) {
    const double adj_g_hat = adj_g[n] * (1.0 - trace.beta[n]);
    const double adj_beta = adj_g[n] * (trace.g_prev(n) - trace.g_hat[n]);
    grad[kCt] += adj_g_hat * slopes.ct[n];
    grad[kRatio] += adj_g_hat * slopes.ratio[n];
    grad[trace.zeta[n] ? kAttack : kRelease] += beta_slope(trace, point, n) * adj_beta;
    grad[kMakeup] += kC * v[n] * x[n] * trace.g[n] * gain;
  }
  return grad;
}

std::vector<double> jvp_compressor(const ForwardTrace& trace, std::span<const double> x,
                                   const ModelPoint& point, const Vec5& dtheta,
                                   const LinrecEngine& engine) {
  check_trace(trace, x.size(), x.size());
  const std::size_t n_samples = x.size();
  const GainSlopes slopes = gain_slopes(trace, point);
  std::vector<double> input(n_samples);
  for (std::size_t n = 0; n < n_samples; ++n) {
    const double g_hat_dot = slopes.ct[n] * dtheta[kCt] + slopes.ratio[n] * dtheta[kRatio];
    const int k = trace.zeta[n] ? kAttack : kRelease;
    const double beta_dot = beta_slope(trace, point, n) * dtheta[k];
    input[n] = (1.0 - trace.beta[n]) * g_hat_dot +
               beta_dot * (trace.g_prev(n) - trace.g_hat[n]);
  }
  const std::vector<double> g_dot = engine.forward(trace.beta, input, 0.0);
  const double gain = point.makeup_gain;
  const double gain_dot = kC * gain * dtheta[kMakeup];
  std::vector<double> out(n_samples);
  for (std::size_t n = 0; n < n_samples; ++n) {
    out[n] = x[n] * (g_dot[n] * gain + trace.g[n] * gain_dot);
  }
  return out;
}

// ---------------------------------------------------------------------------

ChunkDerivatives::ChunkDerivatives(std::span<const double> x, std::span<const double> target,
                                   std::size_t eval_offset, bool preemphasis,
                                   const ModelPoint& point, const LinrecEngine& engine)
    : x_(x), eval_offset_(eval_offset), preemphasis_(preemphasis), point_(point),
      engine_(engine) {
  if (target.size() != x.size()) {
    throw std::invalid_argument("chunk target length differs from input length");
  }
  const std::size_t n_samples = x.size();
  y_hat_ = compress_samples(x, point.params, 1.0, &trace_);

  const std::vector<double> filtered = filter_output(y_hat_);
  residual_.assign(n_samples, 0.0);
  for (std::size_t n = eval_offset_; n < n_samples; ++n) {
    residual_[n] = filtered[n] - target[n];
    loss_ += residual_[n] * residual_[n];
  }
  std::vector<double> twice(n_samples);
  for (std::size_t n = 0; n < n_samples; ++n) twice[n] = 2.0 * residual_[n];
  v_ = filter_output_adjoint(twice);

  std::vector<double> adj_out(n_samples);
  for (std::size_t n = 0; n < n_samples; ++n) adj_out[n] = v_[n] * x_[n] * point_.makeup_gain;
  adj_g_ = engine_.reversed(trace_.beta, adj_out, 0.0);

  const CurveTerms k = curve_terms(point_);
  dgh_ct_.assign(n_samples, 0.0);
  dgh_r_.assign(n_samples, 0.0);
  d2gh_cc_.assign(n_samples, 0.0);
  d2gh_cr_.assign(n_samples, 0.0);
  d2gh_rr_.assign(n_samples, 0.0);
  for (std::size_t n = 0; n < n_samples; ++n) {
    const double d = point_.params.ct_db - trace_.level_db[n];
    if (!(k.slope * d < 0.0)) continue;
    const double scale = kC * trace_.g_hat[n];
    const double du_c = k.slope;
    const double du_r = d * k.slope1;
    dgh_ct_[n] = scale * du_c;
    dgh_r_[n] = scale * du_r;
    d2gh_cc_[n] = scale * kC * du_c * du_c;
    d2gh_cr_[n] = scale * (kC * du_c * du_r + k.slope1);
    d2gh_rr_[n] = scale * (kC * du_r * du_r + d * k.slope2);
  }

  for (std::size_t n = 0; n < n_samples; ++n) {
    const double adj_g_hat = adj_g_[n] * (1.0 - trace_.beta[n]);
    const double adj_beta = adj_g_[n] * (trace_.g_prev(n) - trace_.g_hat[n]);
    gradient_[kCt] += adj_g_hat * dgh_ct_[n];
    gradient_[kRatio] += adj_g_hat * dgh_r_[n];
    gradient_[beta_index(n)] += beta_d1(n) * adj_beta;
    gradient_[kMakeup] += kC * v_[n] * y_hat_[n];
  }
}

double ChunkDerivatives::beta_d1(std::size_t n) const {
  return trace_.zeta[n] ? -point_.attack_d1 : -point_.release_d1;
}

double ChunkDerivatives::beta_d2(std::size_t n) const {
  return trace_.zeta[n] ? -point_.attack_d2 : -point_.release_d2;
}

std::vector<double> ChunkDerivatives::filter_output(std::span<const double> signal) const {
  if (preemphasis_) return preemphasize(signal, engine_);
  return {signal.begin(), signal.end()};
}

std::vector<double> ChunkDerivatives::filter_output_adjoint(std::span<const double> cot) const {
  if (preemphasis_) return preemphasize_adjoint(cot, engine_);
  return {cot.begin(), cot.end()};
}

ChunkDerivatives::Tangent ChunkDerivatives::forward_tangent(const Vec5& d) const {
  const std::size_t n_samples = x_.size();
  Tangent t;
  t.g_hat.resize(n_samples);
  t.beta.resize(n_samples);
  std::vector<double> input(n_samples);
  for (std::size_t n = 0; n < n_samples; ++n) {
    t.g_hat[n] = dgh_ct_[n] * d[kCt] + dgh_r_[n] * d[kRatio];
    t.beta[n] = beta_d1(n) * d[beta_index(n)];
    input[n] = (1.0 - trace_.beta[n]) * t.g_hat[n] +
               t.beta[n] * (trace_.g_prev(n) - trace_.g_hat[n]);
  }
  t.g = engine_.forward(trace_.beta, input, 0.0);
  const double gain = point_.makeup_gain;
  const double gain_dot = kC * gain * d[kMakeup];
  t.y_hat.resize(n_samples);
  for (std::size_t n = 0; n < n_samples; ++n) {
    t.y_hat[n] = x_[n] * (t.g[n] * gain + trace_.g[n] * gain_dot);
  }
  return t;
}

Vec5 ChunkDerivatives::jvp_backward(const Vec5& dtheta) const {
  const std::size_t n_samples = x_.size();
  const double gain = point_.makeup_gain;
  const Tangent t = forward_tangent(dtheta);

  std::vector<double> filtered = filter_output(t.y_hat);
  for (std::size_t n = 0; n < n_samples; ++n) {
    filtered[n] = n < eval_offset_ ? 0.0 : 2.0 * filtered[n];
  }
  const std::vector<double> v_dot = filter_output_adjoint(filtered);

  // Tangent of the reversed-time adjoint filter: same multiplier, input
  // gains the beta-tangent term.
  std::vector<double> input(n_samples);
  for (std::size_t n = 0; n < n_samples; ++n) {
    const double adj_out_dot =
        v_dot[n] * x_[n] * gain + v_[n] * x_[n] * kC * gain * dtheta[kMakeup];
    input[n] = adj_out_dot + (n + 1 < n_samples ? t.beta[n + 1] * adj_g_[n + 1] : 0.0);
  }
  const std::vector<double> adj_g_dot = engine_.reversed(trace_.beta, input, 0.0);

  Vec5 out = Vec5::Zero();
  for (std::size_t n = 0; n < n_samples; ++n) {
    const double gp = trace_.g_prev(n);
    const double gp_dot = n > 0 ? t.g[n - 1] : 0.0;
    const double adj_g_hat = adj_g_[n] * (1.0 - trace_.beta[n]);
    const double adj_beta = adj_g_[n] * (gp - trace_.g_hat[n]);
    const double adj_beta_dot =
        adj_g_dot[n] * (gp - trace_.g_hat[n]) + adj_g_[n] * (gp_dot - t.g_hat[n]);
    const double adj_g_hat_dot = adj_g_dot[n] * (1.0 - trace_.beta[n]) - adj_g_[n] * t.beta[n];
    out[kCt] += adj_g_hat_dot * dgh_ct_[n] +
                adj_g_hat * (d2gh_cc_[n] * dtheta[kCt] + d2gh_cr_[n] * dtheta[kRatio]);
    out[kRatio] += adj_g_hat_dot * dgh_r_[n] +
                   adj_g_hat * (d2gh_cr_[n] * dtheta[kCt] + d2gh_rr_[n] * dtheta[kRatio]);
    const int k = beta_index(n);
    out[k] += beta_d1(n) * adj_beta_dot + beta_d2(n) * dtheta[k] * adj_beta;
    out[kMakeup] += kC * (v_dot[n] * y_hat_[n] + v_[n] * t.y_hat[n]);
  }
  return out;
}

Vec5 ChunkDerivatives::vjp_backward(const Vec5& u) const {
  const std::size_t n_samples = x_.size();
  const double gain = point_.makeup_gain;
  Vec5 out = Vec5::Zero();

  // Cotangents arriving from the gradient outputs.
  std::vector<double> adj2_v(n_samples);
  std::vector<double> adj2_y(n_samples);
  std::vector<double> adj2_a(n_samples);
  std::vector<double> adj2_g(n_samples, 0.0);
  std::vector<double> adj2_gh(n_samples);
  std::vector<double> adj2_beta(n_samples);
  for (std::size_t n = 0; n < n_samples; ++n) {
    const int k = beta_index(n);
    const double gp = trace_.g_prev(n);
    const double adj_g_hat = adj_g_[n] * (1.0 - trace_.beta[n]);
    const double adj_beta = adj_g_[n] * (gp - trace_.g_hat[n]);
    const double adj2_g_hat_bar = u[kCt] * dgh_ct_[n] + u[kRatio] * dgh_r_[n];
    const double adj2_beta_bar = beta_d1(n) * u[k];

    out[kCt] += adj_g_hat * (d2gh_cc_[n] * u[kCt] + d2gh_cr_[n] * u[kRatio]);
    out[kRatio] += adj_g_hat * (d2gh_cr_[n] * u[kCt] + d2gh_rr_[n] * u[kRatio]);
    out[k] += beta_d2(n) * u[k] * adj_beta;

    adj2_v[n] = kC * u[kMakeup] * y_hat_[n];
    adj2_y[n] = kC * u[kMakeup] * v_[n];
    adj2_a[n] = adj2_g_hat_bar * (1.0 - trace_.beta[n]) + adj2_beta_bar * (gp - trace_.g_hat[n]);
    adj2_beta[n] = -adj2_g_hat_bar * adj_g_[n];
    adj2_gh[n] = -adj2_beta_bar * adj_g_[n];
    if (n > 0) adj2_g[n - 1] += adj2_beta_bar * adj_g_[n];
  }

  // The adjoint state ran in reversed time; its adjoint runs forward.
  const std::vector<double> adj2_out = engine_.forward(trace_.beta, adj2_a, 0.0);
  double adj2_gain = 0.0;
  for (std::size_t n = 0; n < n_samples; ++n) {
    if (n > 0) adj2_beta[n] += adj2_out[n - 1] * adj_g_[n];
    adj2_v[n] += adj2_out[n] * x_[n] * gain;
    adj2_gain += adj2_out[n] * v_[n] * x_[n];
  }

  std::vector<double> adj2_res = filter_output(adj2_v);
  for (std::size_t n = 0; n < n_samples; ++n) {
    adj2_res[n] = n < eval_offset_ ? 0.0 : 2.0 * adj2_res[n];
  }
  const std::vector<double> from_loss = filter_output_adjoint(adj2_res);
  for (std::size_t n = 0; n < n_samples; ++n) {
    adj2_y[n] += from_loss[n];
    adj2_g[n] += adj2_y[n] * x_[n] * gain;
    adj2_gain += adj2_y[n] * x_[n] * trace_.g[n];
  }
  out[kMakeup] += adj2_gain * kC * gain;

  const std::vector<double> adj2_g_total = engine_.reversed(trace_.beta, adj2_g, 0.0);
  for (std::size_t n = 0; n < n_samples; ++n) {
    const double gh_total =
        adj2_gh[n] + adj2_g_total[n] * (1.0 - trace_.beta[n]);
    const double beta_total =
        adj2_beta[n] + adj2_g_total[n] * (trace_.g_prev(n) - trace_.g_hat[n]);
    out[kCt] += gh_total * dgh_ct_[n];
    out[kRatio] += gh_total * dgh_r_[n];
    out[beta_index(n)] += beta_total * beta_d1(n);
  }
  return out;
}

Vec5 ChunkDerivatives::vjp_forward(const Vec5& dtheta) const {
  const std::size_t n_samples = x_.size();
  const double gain = point_.makeup_gain;
  const Tangent t = forward_tangent(dtheta);

  // phi = sum 2 e . e_dot: the cotangent of y_hat_dot is v, that of y_hat
  // comes from the filtered tangent.
  std::vector<double> filtered = filter_output(t.y_hat);
  for (std::size_t n = 0; n < n_samples; ++n) {
    filtered[n] = n < eval_offset_ ? 0.0 : 2.0 * filtered[n];
  }
  const std::vector<double> adj_y = filter_output_adjoint(filtered);

  // The tangent recursion g_dot = q + beta g_dot[n-1], adjoined with the
  // cotangent v x G, is exactly the first-order adjoint state adj_g_.
  const std::vector<double>& adj_q = adj_g_;

  Vec5 out = Vec5::Zero();
  std::vector<double> adj_g(n_samples, 0.0);
  std::vector<double> adj_gh(n_samples);
  std::vector<double> adj_beta(n_samples);
  double adj_gain = 0.0;
  const double gain_dot_unit = kC * dtheta[kMakeup];
  for (std::size_t n = 0; n < n_samples; ++n) {
    const int k = beta_index(n);
    const double gp = trace_.g_prev(n);
    adj_gain += v_[n] * x_[n] * (t.g[n] + trace_.g[n] * gain_dot_unit);
    adj_g[n] += v_[n] * x_[n] * gain * gain_dot_unit;

    const double adj_g_hat_dot = adj_q[n] * (1.0 - trace_.beta[n]);
    const double adj_beta_dot = adj_q[n] * (gp - trace_.g_hat[n]);
    adj_beta[n] = -adj_q[n] * t.g_hat[n];
    adj_gh[n] = -adj_q[n] * t.beta[n];
    if (n > 0) {
      adj_beta[n] += adj_q[n] * t.g[n - 1];
      adj_g[n - 1] += adj_q[n] * t.beta[n];
    }
    out[kCt] += adj_g_hat_dot * (d2gh_cc_[n] * dtheta[kCt] + d2gh_cr_[n] * dtheta[kRatio]);
    out[kRatio] += adj_g_hat_dot * (d2gh_cr_[n] * dtheta[kCt] + d2gh_rr_[n] * dtheta[kRatio]);
    out[k] += adj_beta_dot * beta_d2(n) * dtheta[k];

    adj_g[n] += adj_y[n] * x_[n] * gain;
    adj_gain += adj_y[n] * x_[n] * trace_.g[n];
  }
  out[kMakeup] += adj_gain * kC * gain;

  const std::vector<double> adj_g_total = engine_.reversed(trace_.beta, adj_g, 0.0);
  for (std::size_t n = 0; n < n_samples; ++n) {
    const double gh_total = adj_gh[n] + adj_g_total[n] * (1.0 - trace_.beta[n]);
    const double beta_total =
        adj_beta[n] + adj_g_total[n] * (trace_.g_prev(n) - trace_.g_hat[n]);
    out[kCt] += gh_total * dgh_ct_[n];
    out[kRatio] += gh_total * dgh_r_[n];
    out[beta_index(n)] += beta_total * beta_d1(n);
  }
  return out;
}

double ChunkDerivatives::second_directional(const Vec5& d1, const Vec5& d2) const {
  const std::size_t n_samples = x_.size();
  const Tangent t1 = forward_tangent(d1);
  const Tangent t2 = forward_tangent(d2);

  std::vector<double> input(n_samples);
  for (std::size_t n = 0; n < n_samples; ++n) {
    const int k = beta_index(n);
    const double gh_dd = d2gh_cc_[n] * d1[kCt] * d2[kCt] +
                         d2gh_cr_[n] * (d1[kCt] * d2[kRatio] + d1[kRatio] * d2[kCt]) +
                         d2gh_rr_[n] * d1[kRatio] * d2[kRatio];
    const double beta_dd = beta_d2(n) * d1[k] * d2[k];
    const double gp1 = n > 0 ? t1.g[n - 1] : 0.0;
    const double gp2 = n > 0 ? t2.g[n - 1] : 0.0;
    input[n] = (1.0 - trace_.beta[n]) * gh_dd +
               beta_dd * (trace_.g_prev(n) - trace_.g_hat[n]) - t1.beta[n] * t2.g_hat[n] -
               t2.beta[n] * t1.g_hat[n] + t1.beta[n] * gp2 + t2.beta[n] * gp1;
  }
  const std::vector<double> g_dd = engine_.forward(trace_.beta, input, 0.0);

  const double gain = point_.makeup_gain;
  const double gain1 = kC * gain * d1[kMakeup];
  const double gain2 = kC * gain * d2[kMakeup];
  const double gain12 = kC * kC * gain * d1[kMakeup] * d2[kMakeup];
  std::vector<double> y_dd(n_samples);
  for (std::size_t n = 0; n < n_samples; ++n) {
    y_dd[n] = x_[n] * (g_dd[n] * gain + t1.g[n] * gain2 + t2.g[n] * gain1 +
                       trace_.g[n] * gain12);
  }
  const std::vector<double> e1 = filter_output(t1.y_hat);
  const std::vector<double> e2 = filter_output(t2.y_hat);
  const std::vector<double> e12 = filter_output(y_dd);
  double acc = 0.0;
  for (std::size_t n = eval_offset_; n < n_samples; ++n) {
    acc += 2.0 * (e1[n] * e2[n] + residual_[n] * e12[n]);
  }
  return acc;
}

Mat5 ChunkDerivatives::hessian(HessianStrategy strategy) const {
  Mat5 h = Mat5::Zero();
  for (int i = 0; i < 5; ++i) {
    const Vec5 basis = Vec5::Unit(i);
    switch (strategy) {
      case HessianStrategy::RevRev:
        h.row(i) = vjp_backward(basis).transpose();
        break;
      case HessianStrategy::FwdRev:
        h.col(i) = jvp_backward(basis);
        break;
      case HessianStrategy::RevFwd:
        h.col(i) = vjp_forward(basis);
        break;
      case HessianStrategy::FwdFwd:
        for (int j = 0; j <= i; ++j) {
          h(i, j) = h(j, i) = second_directional(basis, Vec5::Unit(j));
        }
        break;
    }
  }
  return h;
}

// ---------------------------------------------------------------------------

LossProblem::LossProblem(const AudioBuffer& x, const AudioBuffer& y, ChunkPlan plan,
                         ParamBounds bounds, LossOptions options)
    : x_(x.vector()), sample_rate_(x.sample_rate()), plan_(std::move(plan)),
      bounds_(bounds), options_(options) {
  pair_validate(x, y);
  bounds_.validate();
  if (plan_.n_samples != x.size()) {
    throw std::invalid_argument("chunk plan does not match the signal length");
  }
  if (plan_.count() > 1 && options_.threads > 1) options_.engine.options.threads = 1;
  targets_.reserve(plan_.count());
  for (const Chunk& c : plan_.chunks()) {
    std::span<const double> seg = y.samples().subspan(c.begin, c.size());
    targets_.push_back(options_.preemphasis ? preemphasize(seg, options_.engine)
                                            : std::vector<double>(seg.begin(), seg.end()));
  }
}

template <typename PerChunk, typename Result>
Result LossProblem::reduce(const PerChunk& fn, Result zero) const {
  std::vector<Result> parts(plan_.count(), zero);
  parallel_for(plan_.count(), options_.threads, [&](std::size_t i) { parts[i] = fn(i); });
  Result total = zero;
  for (const Result& p : parts) total = total + p;
  return total;
}

double LossProblem::loss(const ThetaRaw& theta) const {
  const CompressorParams params = constrain(theta, bounds_, sample_rate_);
  return reduce(
      [&](std::size_t i) {
        const Chunk c = plan_.chunk(i);
        std::span<const double> seg(x_.data() + c.begin, c.size());
        std::vector<double> out = compress_samples(seg, params);
        if (options_.preemphasis) out = preemphasize(out, options_.engine);
        double acc = 0.0;
        for (std::size_t n = c.eval_offset(); n < out.size(); ++n) {
          const double d = out[n] - targets_[i][n];
          acc += d * d;
        }
        return acc;
      },
      0.0);
}

Gradient LossProblem::gradient(const ThetaRaw& theta) const {
  const ModelPoint point = ModelPoint::at(theta, bounds_, sample_rate_);
  return reduce(
      [&](std::size_t i) -> Gradient {
        const Chunk c = plan_.chunk(i);
        std::span<const double> seg(x_.data() + c.begin, c.size());
        return ChunkDerivatives(seg, targets_[i], c.eval_offset(), options_.preemphasis, point,
                                options_.engine)
            .gradient();
      },
      Gradient(Gradient::Zero()));
}

Hessian LossProblem::hessian(const ThetaRaw& theta, HessianStrategy strategy,
                             bool symmetrize) const {
  const ModelPoint point = ModelPoint::at(theta, bounds_, sample_rate_);
  Hessian h;
  h.matrix = reduce(
      [&](std::size_t i) -> Mat5 {
        const Chunk c = plan_.chunk(i);
        std::span<const double> seg(x_.data() + c.begin, c.size());
        return ChunkDerivatives(seg, targets_[i], c.eval_offset(), options_.preemphasis, point,
                                options_.engine)
            .hessian(strategy);
      },
      Mat5(Mat5::Zero()));
  return symmetrize ? h.symmetrize() : h;
}

LossProblem::Evaluation LossProblem::evaluate(const ThetaRaw& theta,
                                              HessianStrategy strategy) const {
  const ModelPoint point = ModelPoint::at(theta, bounds_, sample_rate_);
  struct Part {
    double loss = 0.0;
    Gradient gradient = Gradient::Zero();
    Mat5 hessian = Mat5::Zero();
    Part operator+(const Part& o) const {
      return {loss + o.loss, gradient + o.gradient, hessian + o.hessian};
    }
  };
  const Part total = reduce(
      [&](std::size_t i) {
        const Chunk c = plan_.chunk(i);
        std::span<const double> seg(x_.data() + c.begin, c.size());
        const ChunkDerivatives d(seg, targets_[i], c.eval_offset(), options_.preemphasis, point,
                                 options_.engine);
        return Part{d.loss(), d.gradient(), d.hessian(strategy)};
      },
      Part{});
  Evaluation ev;
  ev.loss = total.loss;
  ev.gradient = total.gradient;
  ev.hessian = Hessian{total.hessian, false}.symmetrize();
  return ev;
}

}  // namespace compfit
