// End-to-end acceptance run: one PASS/FAIL line per criterion. Exit status is
// non-zero when any criterion fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <map>
#include <random>
#include <string>
#include <thread>
#include <vector>

#include "compfit/autodiff.hpp"
#include "compfit/gradcheck.hpp"
#include "compfit/metrics.hpp"
#include "compfit/optimizer.hpp"
#include "compfit/param_map.hpp"
#include "compfit/scan.hpp"
#include "compfit/synth_corpus.hpp"

using namespace compfit;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

int failures = 0;
std::map<int, std::string> lines;  // printed in criterion order at the end

void report(int id, const char* name, bool ok, const std::string& detail) {
  lines[id] = std::string(ok ? "PASS" : "FAIL") + " criterion " + std::to_string(id) + " (" +
              name + "): " + detail;
  if (!ok) ++failures;
}

std::string num(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.3g", v);
  return buf;
}

// Every accepted step of every fit in this run, for the descent criterion.
struct StepAudit {
  int fits = 0;
  int steps = 0;
  int armijo_violations = 0;
  int increases = 0;

  void add(const FitResult& r, double alpha) {
    ++fits;
    for (const StepRecord& s : r.steps) {
      ++steps;
      if (!(s.loss_after <= s.loss_before - alpha * s.tau * s.directional_derivative)) {
        ++armijo_violations;
      }
    }
    for (std::size_t i = 1; i < r.loss_trajectory.size(); ++i) {
      if (r.loss_trajectory[i] > r.loss_trajectory[i - 1]) ++increases;
    }
  }
};
StepAudit audit;

// ---------------------------------------------------------------------------

void gradient_correctness() {
  GradCheckOptions o;
  o.seed = 7;
  o.samples = 1000;
  o.draws = 50;
  o.step = 1e-6;
  o.tolerance = 1e-6;
  const auto t0 = Clock::now();
  const GradCheckResult r = gradient_check(o);
  const double t = seconds_since(t0);
  report(1, "gradient vs central differences", r.passed && t < 10.0 && r.draws.size() == 50,
         "draws=" + std::to_string(r.draws.size()) + " max_rel_error=" + num(r.max_rel_error) +
             " (< 1e-6) time=" + num(t) + "s (< 10s)");
}

// ---------------------------------------------------------------------------

std::vector<double> enveloped_noise(std::mt19937_64& rng, std::size_t n) {
  std::normal_distribution<double> nd(0.0, 1.0);
  std::uniform_real_distribution<double> u(-50.0, -6.0);
  std::vector<double> x(n);
  double amp = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (i % 250 == 0) amp = std::pow(10.0, u(rng) / 20.0);
    x[i] = amp * nd(rng);
  }
  return x;
}

// Kink pattern of the model at theta: attack/release choice and whether the
// static curve is clamped. Differences are only meaningful inside one pattern.
std::vector<std::uint8_t> kinks(const std::vector<double>& x, const ThetaRaw& theta, int sr) {
  const CompressorParams p = constrain(theta, ParamBounds{}, sr);
  ForwardTrace t;
  compress_samples(x, p, 1.0, &t);
  std::vector<std::uint8_t> k(t.zeta);
  for (std::size_t n = 0; n < x.size(); ++n) {
    k.push_back((1.0 - 1.0 / p.ratio) * (p.ct_db - t.level_db[n]) < 0.0);
  }
  return k;
}

void hessian_equivalence() {
  const int sr = 44100;
  const double h = 1e-6;
  double worst_pair = 0.0, worst_fd = 0.0;
  int instances = 0;
  std::mt19937_64 rng(2);
  std::normal_distribution<double> nd(0.0, 1.0);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  while (instances < 10) {
    const auto x = enveloped_noise(rng, 4000);
    const ThetaRaw theta{-40.0 + 25.0 * u(rng), -6.0 + 12.0 * u(rng), nd(rng), nd(rng), nd(rng)};
    const ThetaRaw other{theta.ct_db + 3.0 * nd(rng), theta.makeup_db + nd(rng),
                         theta.ratio_raw + nd(rng), theta.alpha_at_raw + nd(rng),
                         theta.alpha_rt_raw + nd(rng)};
    auto y = compress_samples(x, constrain(other, ParamBounds{}, sr));
    for (double& v : y) v += 1e-3 * nd(rng);

    const auto base = kinks(x, theta, sr);
    bool smooth = true;
    for (int i = 0; i < 5 && smooth; ++i) {
      for (double s : {-h, h}) {
        Vec5 v = theta.vector();
        v[i] += s;
        smooth = smooth && kinks(x, ThetaRaw::from_vector(v), sr) == base;
      }
    }
    if (!smooth) continue;
    ++instances;

    const LossProblem p(AudioBuffer(x, sr), AudioBuffer(y, sr),
                        plan_chunks(x.size(), sr, 12.0, 1.0), ParamBounds{});
    std::vector<Mat5> hs;
    for (HessianStrategy st : kAllStrategies) hs.push_back(p.hessian(theta, st).matrix);
    const double scale = hs[0].cwiseAbs().maxCoeff();
    Mat5 fd;
    for (int i = 0; i < 5; ++i) {
      Vec5 a = theta.vector(), b = theta.vector();
      a[i] += h;
      b[i] -= h;
      fd.col(i) = (p.gradient(ThetaRaw::from_vector(a)) - p.gradient(ThetaRaw::from_vector(b))) /
                  (2.0 * h);
    }
    for (std::size_t i = 0; i < hs.size(); ++i) {
      worst_fd = std::max(worst_fd, (hs[i] - fd).cwiseAbs().maxCoeff() / scale);
      for (std::size_t j = i + 1; j < hs.size(); ++j) {
        worst_pair = std::max(worst_pair, (hs[i] - hs[j]).cwiseAbs().maxCoeff() / scale);
      }
    }
  }
  report(2, "Hessian strategy equivalence", worst_pair < 1e-8 && worst_fd < 1e-5,
         "instances=10 max_pairwise=" + num(worst_pair) + " (< 1e-8) max_vs_fd=" +
             num(worst_fd) + " (< 1e-5), relative to max|H|");
}

// ---------------------------------------------------------------------------

void scan_equivalence() {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> ua(-1.0, 1.0);
  std::uniform_real_distribution<double> log_len(0.0, 5.0);
  ScanOptions opt;
  opt.threads = 4;
  opt.parallel_threshold = 1;  // exercise the tree even on short inputs
  double worst = 0.0;
  std::size_t longest = 0;
  std::vector<double> a, b;
  for (int i = 0; i < 10000; ++i) {
    const auto n = static_cast<std::size_t>(std::pow(10.0, log_len(rng)));
    longest = std::max(longest, n);
    a.resize(n);
    b.resize(n);
    for (auto& v : a) v = ua(rng);
    for (auto& v : b) v = ua(rng);
    const double y0 = ua(rng);
    const auto s = linrec_sequential(a, b, y0);
    const auto p = linrec_scan(a, b, y0, opt);
    for (std::size_t k = 0; k < n; ++k) worst = std::max(worst, std::abs(s[k] - p[k]));
  }

  const std::size_t n = std::size_t{1} << 20;
  a.resize(n);
  b.resize(n);
  for (auto& v : a) v = 0.999 * ua(rng);
  for (auto& v : b) v = ua(rng);
  ScanOptions big;
  big.threads = 4;
  auto best_of = [](const std::function<void()>& f) {
    double best = 1e9;
    for (int k = 0; k < 15; ++k) {
      const auto t0 = Clock::now();
      f();
      best = std::min(best, seconds_since(t0));
    }
    return best;
  };
  volatile double sink = 0.0;
  const double t_seq = best_of([&] { sink = linrec_sequential(a, b, 0.5).back(); });
  const double t_scan = best_of([&] { sink = linrec_scan(a, b, 0.5, big).back(); });
  const double speedup = t_seq / t_scan;
  report(3, "scan vs sequential recurrence", worst < 1e-12 && speedup > 1.0,
         "instances=10000 longest=" + std::to_string(longest) + " max_abs_dev=" + num(worst) +
             " (< 1e-12) speedup=" + num(speedup) + " at n=" + std::to_string(n) +
             " workers=4 cores=" + std::to_string(std::thread::hardware_concurrency()));
}

// ---------------------------------------------------------------------------

double rel_dev(double got, double want) {
  return std::abs(got - want) / std::max(std::abs(want), 1.0);
}

double param_dev(const CompressorParams& got, const CompressorParams& want) {
  return std::max({rel_dev(got.ct_db, want.ct_db), rel_dev(got.ratio, want.ratio),
                   rel_dev(got.attack_ms, want.attack_ms),
                   rel_dev(got.release_ms, want.release_ms),
                   rel_dev(got.makeup_db, want.makeup_db)});
}

void parameter_recovery() {
  const int sr = 16000;
  const double duration = 6.0;
  const ParamBounds bounds;
  const auto t0 = Clock::now();
  std::vector<int> iters;
  int failed = 0;
  double worst_loss = 0.0, worst_dev = 0.0;
  std::string failures_detail;
  for (int k = 0; k < 20; ++k) {
    std::mt19937_64 rng(4000 + k);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::normal_distribution<double> perturb(0.0, 0.5);  // variance 0.25
    const CompressorParams truth = CompressorParams::from_times(
        -40.0 + 25.0 * u(rng), 1.5 + 10.0 * u(rng), 0.3 + 20.0 * u(rng),
        30.0 + 400.0 * u(rng), -3.0 + 9.0 * u(rng), sr);
    const AudioBuffer x(make_stimulus(Stimulus::Mixed, duration, sr, 4000 + k), sr);
    const AudioBuffer y = compress(x, truth).output;
    Vec5 init = unconstrain(truth, bounds, sr).vector();
    for (int i = 0; i < 5; ++i) init[i] += perturb(rng);

    const FitResult r = fit(x, y, ThetaRaw::from_vector(init));
    audit.add(r, NROptions{}.armijo_alpha);
    const double dev = param_dev(r.params, truth);
    iters.push_back(r.iters);
    worst_loss = std::max(worst_loss, r.final_loss());
    worst_dev = std::max(worst_dev, dev);
    if (!(r.final_loss() < 1e-12 && dev <= 1e-4 && r.iters <= 20)) {
      ++failed;
      failures_detail += " draw" + std::to_string(k) + "(iters=" + std::to_string(r.iters) +
                         " status=" + to_string(r.status) + ")";
    }
  }
  const double t = seconds_since(t0);
  std::vector<int> sorted = iters;
  std::sort(sorted.begin(), sorted.end());
  const double median = 0.5 * (sorted[9] + sorted[10]);
  std::string list;
  for (int i : iters) list += (list.empty() ? "" : ",") + std::to_string(i);
  report(4, "synthetic parameter recovery", failed == 0 && median <= 10.0 && t < 120.0,
         "draws=20 failed=" + std::to_string(failed) + failures_detail + " iters=[" + list +
             "] median=" + num(median) + " (<= 10) max_final_loss=" + num(worst_loss) +
             " max_param_dev=" + num(worst_dev) + " time=" + num(t) + "s (< 120s)");
}

// ---------------------------------------------------------------------------

void warm_start_benefit() {
  CorpusSpec spec = default_corpus_spec();
  spec.seed = 6;
  spec.sample_rate = 16000;
  spec.duration = 6.0;
  spec.labels = {60, 65, 70, 75, 80};
  const auto pairs = generate_pairs(spec);
  std::vector<LabeledPair> chain_order(pairs.rbegin(), pairs.rend());  // heaviest first
  // The command-line tool's default initial point.
  const ThetaRaw init = unconstrain(
      CompressorParams::from_times(-36.0, 4.0, 1.0, 200.0, 0.0, spec.sample_rate), spec.bounds,
      spec.sample_rate);

  const auto chain = fit_chain(chain_order, init);
  int chain_iters = 0;
  std::string chain_list;
  int chain_converged = 0;
  bool chain_ok = true;
  for (const ChainEntry& e : chain) {
    if (!e.result) {
      chain_ok = false;
      continue;
    }
    audit.add(*e.result, NROptions{}.armijo_alpha);
    chain_iters += e.result->iters;
    chain_converged += e.result->status == FitStatus::Converged;
    chain_list += (chain_list.empty() ? "" : ",") + std::to_string(e.result->iters);
  }
  // Fits that stop at max_iters count with the cap, which can only shrink
  // the cold total.
  int cold_iters = 0, cold_converged = 0;
  std::string cold_list;
  for (const LabeledPair& p : chain_order) {
    const FitResult r = fit(p.x, p.y, init);
    audit.add(r, NROptions{}.armijo_alpha);
    cold_iters += r.iters;
    cold_converged += r.status == FitStatus::Converged;
    cold_list += (cold_list.empty() ? "" : ",") + std::to_string(r.iters);
  }
  report(6, "warm-start chain benefit", chain_ok && chain_iters < cold_iters,
         "labels=80..60 chain_iters=" + std::to_string(chain_iters) + " [" + chain_list +
             "] converged=" + std::to_string(chain_converged) + "/5 cold_iters=" +
             std::to_string(cold_iters) + " [" + cold_list +
             "] converged=" + std::to_string(cold_converged) + "/5");
}

void descent_invariants() {
  report(5, "Armijo and monotone loss", audit.armijo_violations == 0 && audit.increases == 0,
         "fits=" + std::to_string(audit.fits) + " accepted_steps=" + std::to_string(audit.steps) +
             " armijo_violations=" + std::to_string(audit.armijo_violations) +
             " loss_increases=" + std::to_string(audit.increases));
}

// ---------------------------------------------------------------------------

void metric_identities() {
  std::mt19937_64 rng(7);
  std::normal_distribution<double> nd(0.0, 0.2);
  const int sr = 16000;
  std::vector<double> y(sr * 7), z(sr * 7);
  for (std::size_t n = 0; n < y.size(); ++n) {
    y[n] = nd(rng) * (n / 4000 % 2 == 0 ? 1.0 : 0.1);
    z[n] = nd(rng);
  }
  const bool esr_same = esr(y, y) == 0.0;
  const bool esr_zero = esr(y, std::vector<double>(y.size(), 0.0)) == 1.0;
  const AudioBuffer yb(y, sr), zb(z, sr);
  const double d1 = delta_ldr(yb, zb), d2 = delta_ldr(zb, yb);
  const bool antisym = d1 == -d2 && d1 != 0.0;
  std::vector<double> impulse(64, 0.0);
  impulse[0] = 1.0;
  const auto w = preemphasize(impulse);
  double worst = std::abs(w[0] - 1.0);
  for (std::size_t k = 1; k < 64; ++k) {
    worst = std::max(worst, std::abs(w[k] + 0.005 * std::pow(0.995, static_cast<double>(k - 1))));
  }
  report(7, "metric identities", esr_same && esr_zero && antisym && worst <= 1e-15,
         std::string("esr(y,y)=0:") + (esr_same ? "yes" : "no") +
             " esr(y,0)=1:" + (esr_zero ? "yes" : "no") + " delta_ldr=" + num(d1) +
             " antisymmetric:" + (antisym ? "yes" : "no") + " preemph_impulse_64_max_err=" +
             num(worst) + " (<= 1e-15)");
}

// ---------------------------------------------------------------------------

void interpolation_protocol() {
  CorpusSpec spec = default_corpus_spec();
  spec.seed = 8;
  spec.sample_rate = 16000;
  spec.duration = 6.0;
  spec.labels.clear();
  for (int l = 40; l <= 100; l += 5) spec.labels.push_back(l);
  const auto corpus = generate_pairs(spec);
  const ParameterMap full = ground_truth_map(spec);

  std::vector<double> held_out;
  for (double l = 45; l <= 95; l += 10) held_out.push_back(l);
  const InterpEvalResult dense = interp_eval(full, spec.mode, held_out, corpus);

  // Leave-out check: rows must come from the map without the held-out labels.
  ParameterMap reduced = full;
  std::erase_if(reduced.entries, [&](const MapEntry& e) {
    return std::find(held_out.begin(), held_out.end(), e.label) != held_out.end();
  });
  bool leave_out = dense.rows.size() == 2 * held_out.size();
  for (const InterpEvalRow& row : dense.rows) {
    leave_out = leave_out && row.params == interpolate(reduced, spec.mode, row.label, row.method);
  }

  bool knots_exact = true;
  for (const MapEntry& e : reduced.entries) {
    for (InterpMethod m : {InterpMethod::Linear, InterpMethod::CubicSpline}) {
      knots_exact = knots_exact && interpolate(reduced, spec.mode, e.label, m) == e.params;
      knots_exact = knots_exact &&
                    render(reduced, spec.mode, e.label, corpus.front().x) ==
                        compress(corpus.front().x, e.params).output;
    }
  }

  // Half the knot density: 40, 60, 80, 100.
  ParameterMap sparse = reduced;
  std::erase_if(sparse.entries, [](const MapEntry& e) {
    return static_cast<int>(e.label) % 20 != 0;
  });
  const InterpEvalResult coarse = interp_eval(sparse, spec.mode, held_out, corpus);
  const bool denser_better = dense.mean_linear < coarse.mean_linear;
  report(8, "interpolation protocol",
         leave_out && knots_exact && denser_better,
         std::string("held_out=45..95 leave_out:") + (leave_out ? "yes" : "no") +
             " knots_exact:" + (knots_exact ? "yes" : "no") + " mean_esr_linear 7 knots=" +
             num(dense.mean_linear) + " vs 4 knots=" + num(coarse.mean_linear) +
             " (spline " + num(dense.mean_spline) + " vs " + num(coarse.mean_spline) + ")");
}

}  // namespace

int main() {
  const auto t0 = Clock::now();
  const std::vector<std::function<void()>> steps{
      gradient_correctness, hessian_equivalence, scan_equivalence, parameter_recovery,
      warm_start_benefit,   descent_invariants,  metric_identities, interpolation_protocol};
  for (const auto& step : steps) {
    try {
      step();
    } catch (const std::exception& e) {
      std::printf("FAIL unexpected exception: %s\n", e.what());
      ++failures;
    }
  }
  for (const auto& [id, line] : lines) std::printf("%s\n", line.c_str());
  std::printf("acceptance: %d failure(s), %.1f s\n", failures, seconds_since(t0));
  return failures == 0 ? 0 : 1;
}
