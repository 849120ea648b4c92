#include <doctest.h>

#include <Eigen/Eigenvalues>
#include <cmath>
#include <random>

#include "compfit/autodiff.hpp"
#include "compfit/metrics.hpp"

using namespace compfit;

namespace {

constexpr int kRate = 44100;

std::vector<double> enveloped_noise(std::uint64_t seed, std::size_t n) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd(0.0, 1.0);
  std::uniform_real_distribution<double> u(-50.0, -8.0);
  std::vector<double> x(n);
  double amp = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (i % 125 == 0) amp = std::pow(10.0, u(rng) / 20.0);
    x[i] = amp * nd(rng);
  }
  return x;
}

ThetaRaw random_theta(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::normal_distribution<double> nd(0.0, 1.0);
  return {-40.0 + 25.0 * u(rng), -6.0 + 12.0 * u(rng), nd(rng), nd(rng), nd(rng)};
}

// Branch-form compressor output in extended precision.
std::vector<long double> reference_output(const std::vector<double>& x, const Vec5& th,
                                          const ParamBounds& b) {
  auto sig = [](long double u) { return 1.0L / (1.0L + std::exp(-u)); };
  auto alpha = [](double ms) { return -std::expm1(-2200.0L / (kRate * static_cast<long double>(ms))); };
  const long double c = std::log(10.0L) / 20.0L;
  const long double ratio = b.ratio.lo + (b.ratio.hi - b.ratio.lo) * sig(th[kRatio]);
  const long double at_lo = alpha(b.attack_ms.hi), at_hi = alpha(b.attack_ms.lo);
  const long double rt_lo = alpha(b.release_ms.hi), rt_hi = alpha(b.release_ms.lo);
  const long double a_at = at_lo + (at_hi - at_lo) * sig(th[kAttack]);
  const long double a_rt = rt_lo + (rt_hi - rt_lo) * sig(th[kRelease]);
  std::vector<long double> out(x.size());
  long double g = 1.0L;
  for (std::size_t n = 0; n < x.size(); ++n) {
    const long double lvl = 20.0L * std::log10(std::max<long double>(std::abs(x[n]), 1e-7L));
    const long double gh = std::exp(c * std::min(0.0L, (1.0L - 1.0L / ratio) * (th[kCt] - lvl)));
    const long double a = gh < g ? a_at : a_rt;
    g = a * gh + (1.0L - a) * g;
    out[n] = x[n] * g * std::exp(c * th[kMakeup]);
  }
  return out;
}

std::vector<std::uint8_t> zeta_pattern(const std::vector<double>& x, const Vec5& th,
                                       const ParamBounds& b) {
  ForwardTrace t;
  compress_samples(x, constrain(ThetaRaw::from_vector(th), b, kRate), 1.0, &t);
  return t.zeta;
}

struct Fixture {
  std::vector<double> x;
  ThetaRaw theta;
  ModelPoint point;
  ForwardTrace trace;
};

Fixture make_fixture(std::uint64_t seed, std::size_t n) {
  std::mt19937_64 rng(seed);
  Fixture f;
  f.x = enveloped_noise(seed + 1000, n);
  f.theta = random_theta(rng);
  f.point = ModelPoint::at(f.theta, ParamBounds{}, kRate);
  compress_samples(f.x, f.point.params, 1.0, &f.trace);
  return f;
}

double dot(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

LossProblem single_chunk(const std::vector<double>& x, const std::vector<double>& y,
                         bool preemph = true) {
  LossOptions lo;
  lo.preemphasis = preemph;
  return LossProblem(AudioBuffer(x, kRate), AudioBuffer(y, kRate),
                     plan_chunks(x.size(), kRate, 1e9, 0.0), ParamBounds{}, lo);
}

double max_abs(const Mat5& m) { return m.cwiseAbs().maxCoeff(); }

}  // namespace

TEST_CASE("loss examples") {
  const auto x = enveloped_noise(1, 3000);
  std::mt19937_64 rng(1);
  const ThetaRaw theta = random_theta(rng);
  const auto y = compress_samples(x, constrain(theta, ParamBounds{}, kRate));

  SUBCASE("exact match is zero, perturbations are positive") {
    const LossProblem p = single_chunk(x, y);
    CHECK(p.loss(theta) == 0.0);
    std::normal_distribution<double> nd(0.0, 1e-3);
    for (int i = 0; i < 10; ++i) {
      Vec5 v = theta.vector();
      for (int k = 0; k < 5; ++k) v[k] += nd(rng);
      CHECK(p.loss(ThetaRaw::from_vector(v)) > 0.0);
    }
  }
  SUBCASE("constant offset without pre-emphasis over chunked regions") {
    // Threshold above the signal: chunk restarts cannot change the output.
    ThetaRaw idle = theta;
    idle.ct_db = 10.0;
    const auto y_idle = compress_samples(x, constrain(idle, ParamBounds{}, kRate));
    const double c = 0.01;
    std::vector<double> shifted(y_idle);
    for (double& v : shifted) v -= c;
    LossOptions lo;
    lo.preemphasis = false;
    const LossProblem p(AudioBuffer(x, kRate), AudioBuffer(shifted, kRate),
                        plan_chunks(x.size(), kRate, 0.02, 0.005), ParamBounds{}, lo);
    REQUIRE(p.plan().count() > 1);
    CHECK(p.loss(idle) == doctest::Approx(3000 * c * c).epsilon(1e-12));
  }
  SUBCASE("chunked loss is the sum of independent chunk losses") {
    std::vector<double> target(y);
    std::normal_distribution<double> nd(0.0, 1e-3);
    for (double& v : target) v += nd(rng);
    const ChunkPlan plan = plan_chunks(x.size(), kRate, 0.03, 0.01);
    const LossProblem p(AudioBuffer(x, kRate), AudioBuffer(target, kRate), plan, ParamBounds{});
    const ThetaRaw other = random_theta(rng);
    const CompressorParams q = constrain(other, ParamBounds{}, kRate);
    double expect = 0.0;
    for (const Chunk& c : plan.chunks()) {
      const std::vector<double> xc(x.begin() + c.begin, x.begin() + c.end);
      const std::vector<double> tc(target.begin() + c.begin, target.begin() + c.end);
      const auto out = preemphasize(compress_samples(xc, q));
      const auto ref = preemphasize(tc);
      for (std::size_t n = c.eval_offset(); n < xc.size(); ++n) {
        expect += (out[n] - ref[n]) * (out[n] - ref[n]);
      }
    }
    CHECK(p.loss(other) == doctest::Approx(expect).epsilon(1e-12));
  }
}

TEST_CASE("vjp/jvp basic identities") {
  const Fixture f = make_fixture(3, 2000);
  CHECK(vjp_compressor(f.trace, f.x, f.point, std::vector<double>(f.x.size(), 0.0)) ==
        Gradient::Zero());
  for (double v : jvp_compressor(f.trace, f.x, f.point, Vec5::Zero())) CHECK(v == 0.0);
  CHECK_THROWS_AS(vjp_compressor(f.trace, std::vector<double>(f.x.size() - 1, 0.1), f.point,
                                 std::vector<double>(f.x.size() - 1, 0.0)),
                  std::invalid_argument);
}

TEST_CASE("single-sample hand derivative") {
  const std::vector<double> x{0.5};
  const ThetaRaw theta{-30.0, 2.0, 0.3, -0.2, 0.1};
  const ModelPoint pt = ModelPoint::at(theta, ParamBounds{}, kRate);
  ForwardTrace t;
  const auto y = compress_samples(x, pt.params, 1.0, &t);
  REQUIRE(t.zeta[0] == 1);
  const double v = 0.7;
  const double c = std::log(10.0) / 20.0;
  const double gain = std::pow(10.0, theta.makeup_db / 20.0);
  const double adj_ghat = v * x[0] * gain * (1.0 - t.beta[0]);
  const Gradient g = vjp_compressor(t, x, pt, std::vector<double>{v});
  const double slope = 1.0 - 1.0 / pt.params.ratio;
  CHECK(g[kCt] == doctest::Approx(adj_ghat * t.g_hat[0] * c * slope).epsilon(1e-13));
  CHECK(g[kMakeup] == doctest::Approx(v * y[0] * c).epsilon(1e-13));
  // d alpha_at: g = g0 - alpha (g0 - g_hat), beta = 1 - alpha.
  CHECK(g[kAttack] ==
        doctest::Approx(v * x[0] * gain * (t.g_hat[0] - 1.0) * pt.attack_d1).epsilon(1e-13));
  CHECK(g[kRelease] == 0.0);
}

TEST_CASE("transpose identity <v, J dtheta> = <J'v, dtheta>") {
  std::mt19937_64 rng(5);
  std::normal_distribution<double> nd(0.0, 1.0);
  for (std::uint64_t s = 0; s < 20; ++s) {
    const Fixture f = make_fixture(100 + s, 3000);
    std::vector<double> v(f.x.size());
    for (double& e : v) e = nd(rng);
    Vec5 d;
    for (int k = 0; k < 5; ++k) d[k] = nd(rng);
    const double lhs = dot(v, jvp_compressor(f.trace, f.x, f.point, d));
    const double rhs = vjp_compressor(f.trace, f.x, f.point, v).dot(d);
    CHECK(std::abs(lhs - rhs) <= 1e-10 * std::max(std::abs(lhs), 1e-300));
  }
}

TEST_CASE("jvp matches central differences of the output") {
  const ParamBounds b;
  std::mt19937_64 rng(6);
  std::normal_distribution<double> nd(0.0, 1.0);
  const double h = 1e-6;
  int checked = 0;
  for (std::uint64_t s = 0; checked < 8 && s < 100; ++s) {
    const Fixture f = make_fixture(200 + s, 1000);
    Vec5 d;
    for (int k = 0; k < 5; ++k) d[k] = nd(rng);
    const Vec5 th = f.theta.vector();
    const auto base = zeta_pattern(f.x, th, b);
    if (zeta_pattern(f.x, th + h * d, b) != base || zeta_pattern(f.x, th - h * d, b) != base) {
      continue;
    }
    const auto plus = reference_output(f.x, th + h * d, b);
    const auto minus = reference_output(f.x, th - h * d, b);
    const auto tangent = jvp_compressor(f.trace, f.x, f.point, d);
    double worst = 0.0;
    for (std::size_t n = 0; n < f.x.size(); ++n) {
      const double fd = static_cast<double>((plus[n] - minus[n]) / (2.0L * h));
      const double scale = std::max(std::abs(fd), std::abs(tangent[n]));
      if (scale > 0.0) worst = std::max(worst, std::abs(fd - tangent[n]) / scale);
    }
    CHECK(worst < 1e-5);
    ++checked;
  }
  CHECK(checked == 8);
}

TEST_CASE("gain adjoint equals the unrolled reversed filter bit for bit") {
  for (std::size_t n : {1u, 2u, 17u, 64u}) {
    for (bool preemph : {false, true}) {
      const Fixture f = make_fixture(300 + n, n);
      std::vector<double> y(f.x.size());
      std::mt19937_64 rng(n);
      std::normal_distribution<double> nd(0.0, 0.01);
      for (double& v : y) v = nd(rng);
      const std::vector<double> target = preemph ? preemphasize(y) : y;
      const ChunkDerivatives cd(f.x, target, 0, preemph, f.point);
      const auto& v = cd.output_cotangent();
      const auto& beta = cd.trace().beta;
      std::vector<double> adj(n);
      for (std::size_t k = n; k-- > 0;) {
        const double s = v[k] * f.x[k] * f.point.makeup_gain;
        adj[k] = k + 1 < n ? s + beta[k + 1] * adj[k + 1] : s;
      }
      CHECK(cd.gain_adjoint() == adj);
    }
  }
}

TEST_CASE("Hessian strategies agree with each other and with gradient differences") {
  for (std::uint64_t s = 0; s < 5; ++s) {
    std::mt19937_64 rng(400 + s);
    const auto x = enveloped_noise(500 + s, 1500);
    const ThetaRaw theta = random_theta(rng);
    const ThetaRaw truth = random_theta(rng);
    const auto y = compress_samples(x, constrain(truth, ParamBounds{}, kRate));
    const LossProblem p = single_chunk(x, y);

    std::vector<Mat5> hs;
    for (HessianStrategy st : kAllStrategies) {
      const Hessian raw = p.hessian(theta, st, false);
      CHECK(raw.relative_asymmetry() < 1e-8);
      const Hessian sym = raw.symmetrize();
      CHECK(sym.symmetrized);
      CHECK((sym.matrix - sym.matrix.transpose()).cwiseAbs().maxCoeff() == 0.0);
      hs.push_back(sym.matrix);
    }
    const double scale = max_abs(hs[0]);
    for (std::size_t i = 0; i < hs.size(); ++i) {
      for (std::size_t j = i + 1; j < hs.size(); ++j) {
        CHECK(max_abs(hs[i] - hs[j]) / scale < 1e-8);
      }
    }
    Mat5 fd;
    const double h = 1e-6;
    for (int i = 0; i < 5; ++i) {
      Vec5 a = theta.vector(), b = theta.vector();
      a[i] += h;
      b[i] -= h;
      fd.col(i) = (p.gradient(ThetaRaw::from_vector(a)) - p.gradient(ThetaRaw::from_vector(b))) /
                  (2.0 * h);
    }
    CHECK(max_abs(hs[1] - fd) / scale < 1e-5);
  }
}

TEST_CASE("second-order passes are consistent") {
  const auto x = enveloped_noise(9, 1200);
  std::mt19937_64 rng(9);
  const ThetaRaw theta = random_theta(rng);
  const auto y = compress_samples(x, constrain(random_theta(rng), ParamBounds{}, kRate));
  const auto target = preemphasize(y);
  const ModelPoint pt = ModelPoint::at(theta, ParamBounds{}, kRate);
  const ChunkDerivatives cd(x, target, 0, true, pt);
  CHECK(cd.vjp_backward(Vec5::Zero()) == Vec5::Zero());
  CHECK(cd.jvp_backward(Vec5::Zero()) == Vec5::Zero());
  const Mat5 h = cd.hessian(HessianStrategy::FwdRev);
  const double scale = max_abs(h);
  for (int i = 0; i < 5; ++i) {
    const Vec5 e = Vec5::Unit(i);
    // Column i via forward-over-reverse vs row i via reverse-over-reverse.
    CHECK((cd.jvp_backward(e) - cd.vjp_backward(e)).cwiseAbs().maxCoeff() / scale < 1e-9);
    CHECK((cd.vjp_forward(e) - cd.jvp_backward(e)).cwiseAbs().maxCoeff() / scale < 1e-9);
  }
  std::normal_distribution<double> nd(0.0, 1.0);
  Vec5 d1, d2;
  for (int k = 0; k < 5; ++k) {
    d1[k] = nd(rng);
    d2[k] = nd(rng);
  }
  CHECK(std::abs(cd.second_directional(d1, d2) - d1.dot(h * d2)) / (scale * d1.norm() * d2.norm()) <
        1e-9);
}

TEST_CASE("inactive compressor: zero ballistics rows and closed-form makeup curvature") {
  auto x = enveloped_noise(12, 2000);
  double peak = 0.0;
  for (double v : x) peak = std::max(peak, std::abs(v));
  const ThetaRaw theta{20.0 * std::log10(peak) + 1.0, 1.5, 0.2, 0.4, -0.3};
  std::vector<double> y(x.size());
  std::mt19937_64 rng(12);
  std::normal_distribution<double> nd(0.0, 1e-3);
  for (std::size_t n = 0; n < x.size(); ++n) y[n] = 0.9 * x[n] + nd(rng);
  const LossProblem p = single_chunk(x, y, false);
  const Gradient g = p.gradient(theta);
  CHECK(g[kAttack] == 0.0);
  CHECK(g[kRelease] == 0.0);
  for (HessianStrategy st : kAllStrategies) {
    const Mat5 h = p.hessian(theta, st).matrix;
    for (int k = 0; k < 5; ++k) {
      CHECK(h(kAttack, k) == 0.0);
      CHECK(h(kRelease, k) == 0.0);
    }
    const double c = std::log(10.0) / 20.0;
    const double gain = std::pow(10.0, theta.makeup_db / 20.0);
    double expect = 0.0;
    for (std::size_t n = 0; n < x.size(); ++n) {
      const double out = x[n] * gain;
      expect += 2.0 * c * c * (out * out + (out - y[n]) * out);
    }
    CHECK(h(kMakeup, kMakeup) == doctest::Approx(expect).epsilon(1e-11));
  }
}

TEST_CASE("Hessian is positive semi-definite at an exact minimum") {
  for (std::uint64_t s = 0; s < 5; ++s) {
    std::mt19937_64 rng(600 + s);
    const auto x = enveloped_noise(700 + s, 4000);
    const ThetaRaw truth = random_theta(rng);
    const auto y = compress_samples(x, constrain(truth, ParamBounds{}, kRate));
    const LossProblem p = single_chunk(x, y);
    const Mat5 h = p.hessian(truth, HessianStrategy::FwdRev).matrix;
    const Eigen::SelfAdjointEigenSolver<Mat5> eig(h);
    CHECK(eig.eigenvalues().minCoeff() >= -1e-10 * h.norm());
    CHECK(p.gradient(truth).cwiseAbs().maxCoeff() == 0.0);
  }
}

TEST_CASE("results do not depend on recurrence route or thread count") {
  const auto x = enveloped_noise(13, 30000);
  std::mt19937_64 rng(13);
  const ThetaRaw theta = random_theta(rng);
  const auto y = compress_samples(x, constrain(random_theta(rng), ParamBounds{}, kRate));
  const ChunkPlan plan = plan_chunks(x.size(), kRate, 0.25, 0.05);
  LossOptions par;
  par.threads = 3;
  LossOptions seq;
  seq.engine.method = LinrecMethod::Sequential;
  const AudioBuffer xb(x, kRate), yb(y, kRate);
  const LossProblem a(xb, yb, plan, ParamBounds{});
  const LossProblem b(xb, yb, plan, ParamBounds{}, par);
  const LossProblem c(xb, yb, plan, ParamBounds{}, seq);
  const auto ea = a.evaluate(theta, HessianStrategy::FwdRev);
  const auto eb = b.evaluate(theta, HessianStrategy::FwdRev);
  const auto ec = c.evaluate(theta, HessianStrategy::FwdRev);
  CHECK(ea.loss == eb.loss);
  CHECK(ea.gradient == eb.gradient);
  CHECK(ea.hessian.matrix == eb.hessian.matrix);
  CHECK(std::abs(ea.loss - ec.loss) <= 1e-12 * ea.loss);
  CHECK((ea.gradient - ec.gradient).cwiseAbs().maxCoeff() <=
        1e-9 * ea.gradient.cwiseAbs().maxCoeff());
}

TEST_CASE("strategy names") {
  for (HessianStrategy s : kAllStrategies) CHECK(parse_strategy(to_string(s)) == s);
  CHECK(to_string(HessianStrategy::FwdRev) == "fwd-rev");
  CHECK_THROWS_AS(parse_strategy("fwd"), std::invalid_argument);
}
