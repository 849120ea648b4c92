// compfit: command-line front end.
//
// Every subcommand prints key=value lines on stdout. Exit status: 0 success,
// 1 runtime failure, 2 usage error.

#include <sys/resource.h>
#include <sys/wait.h>
#include <unistd.h>

#include <CLI11.hpp>
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "compfit/autodiff.hpp"
#include "compfit/compressor.hpp"
#include "compfit/gradcheck.hpp"
#include "compfit/metrics.hpp"
#include "compfit/optimizer.hpp"
#include "compfit/parallel.hpp"
#include "compfit/param_map.hpp"
#include "compfit/signal_io.hpp"
#include "compfit/synth_corpus.hpp"
#include "compfit/textfmt.hpp"

namespace fs = std::filesystem;
using namespace compfit;

namespace {

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

const std::vector<std::string> kStrategyNames = {"rev-rev", "fwd-rev", "rev-fwd", "fwd-fwd"};

void kv(const std::string& key, const std::string& value) {
  std::cout << key << '=' << value << '\n';
}
void kv(const std::string& key, double value) { kv(key, format_real(value)); }
void kv(const std::string& key, long long value) { kv(key, std::to_string(value)); }
void kv(const std::string& key, int value) { kv(key, std::to_string(value)); }

std::ofstream open_csv(const fs::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  return out;
}

std::vector<double> parse_list(const std::string& text, const std::string& flag) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      out.push_back(std::stod(item, &used));
      if (used != item.size()) throw std::invalid_argument("trailing");
    } catch (const std::exception&) {
      throw UsageError(flag + ": not a number list: '" + text + "'");
    }
  }
  return out;
}

// Options shared by the fitting subcommands.
struct FitFlags {
  double chunk_sec = 12.0;
  double overlap_sec = 1.0;
  bool no_preemph = false;
  int threads = default_thread_count();
  std::string strategy = "fwd-rev";
  double armijo = 1e-4;
  int max_iters = 50;
  double grad_tol = 1e-9;
  double min_step = 0x1p-30;
  int max_retries = 10;
  std::uint64_t seed = 0;
  double init_ct = -36.0, init_ratio = 4.0, init_attack = 1.0, init_release = 200.0,
         init_makeup = 0.0;
  double ratio_min = 1.0, ratio_max = 20.0;
  double attack_min = 0.1, attack_max = 100.0;
  double release_min = 10.0, release_max = 1000.0;

  void add(CLI::App* app) {
    app->add_option("--chunk-sec", chunk_sec, "Chunk length in seconds")->capture_default_str();
    app->add_option("--overlap-sec", overlap_sec, "Warm-up overlap in seconds")
        ->capture_default_str();
    app->add_flag("--no-preemph", no_preemph, "Disable pre-emphasis in the loss");
    app->add_option("--threads", threads, "Worker threads")->capture_default_str()
        ->check(CLI::PositiveNumber);
    app->add_option("--strategy", strategy, "Hessian strategy")
        ->check(CLI::IsMember(kStrategyNames))
        ->capture_default_str();
    app->add_option("--armijo", armijo, "Armijo constant")->capture_default_str();
    app->add_option("--max-iters", max_iters, "Newton iteration limit")->capture_default_str();
    app->add_option("--grad-tol", grad_tol, "Stop when |grad|_inf falls below")
        ->capture_default_str();
    app->add_option("--min-step", min_step, "Smallest line-search step")->capture_default_str();
    app->add_option("--max-retries", max_retries, "Orthogonal escape attempts per iteration")
        ->capture_default_str();
    app->add_option("--seed", seed, "Seed for escape directions")->capture_default_str();
    app->add_option("--init-ct", init_ct, "Initial threshold (dB)")->capture_default_str();
    app->add_option("--init-ratio", init_ratio, "Initial ratio")->capture_default_str();
    app->add_option("--init-attack", init_attack, "Initial attack (ms)")->capture_default_str();
    app->add_option("--init-release", init_release, "Initial release (ms)")
        ->capture_default_str();
    app->add_option("--init-makeup", init_makeup, "Initial make-up gain (dB)")
        ->capture_default_str();
    app->add_option("--ratio-min", ratio_min)->capture_default_str();
    app->add_option("--ratio-max", ratio_max)->capture_default_str();
    app->add_option("--attack-min", attack_min, "ms")->capture_default_str();
    app->add_option("--attack-max", attack_max, "ms")->capture_default_str();
    app->add_option("--release-min", release_min, "ms")->capture_default_str();
    app->add_option("--release-max", release_max, "ms")->capture_default_str();
  }

  ParamBounds bounds() const {
    ParamBounds b;
    b.ratio = {ratio_min, ratio_max};
    b.attack_ms = {attack_min, attack_max};
    b.release_ms = {release_min, release_max};
    return b;
  }

  // Everything checkable without touching files.
  FitConfig config() const {
    FitConfig c;
    c.chunk_sec = chunk_sec;
    c.overlap_sec = overlap_sec;
    c.bounds = bounds();
    c.loss.preemphasis = !no_preemph;
    c.loss.threads = threads;
    c.nr.armijo_alpha = armijo;
    c.nr.max_iters = max_iters;
    c.nr.grad_tol = grad_tol;
    c.nr.min_step = min_step;
    c.nr.max_curvature_retries = max_retries;
    c.nr.rng_seed = seed;
    c.nr.strategy = parse_strategy(strategy);
    try {
      c.bounds.validate();
      c.nr.validate();
      if (!(chunk_sec > 0.0) || !(overlap_sec >= 0.0) || !(overlap_sec < chunk_sec)) {
        throw std::invalid_argument("need chunk-sec > overlap-sec >= 0");
      }
    } catch (const std::invalid_argument& e) {
      throw UsageError(e.what());
    }
    return c;
  }

  ThetaRaw init(const ParamBounds& b, int sample_rate) const {
    return unconstrain(CompressorParams::from_times(init_ct, init_ratio, init_attack,
                                                    init_release, init_makeup, sample_rate),
                       b, sample_rate);
  }

  void check_init() const {
    auto inside = [](double v, double lo, double hi) { return v > lo && v < hi; };
    if (!inside(init_ratio, ratio_min, ratio_max) ||
        !inside(init_attack, attack_min, attack_max) ||
        !inside(init_release, release_min, release_max)) {
      throw UsageError("initial ratio/attack/release must lie strictly inside the bounds");
    }
  }
};

void print_params(const CompressorParams& p) {
  kv("ct_db", p.ct_db);
  kv("ratio", p.ratio);
  kv("attack_ms", p.attack_ms);
  kv("release_ms", p.release_ms);
  kv("makeup_db", p.makeup_db);
}

double fit_esr(const AudioBuffer& x, const AudioBuffer& y, const CompressorParams& p) {
  return esr_preemphasized(y.samples(), compress(x, p).output.samples());
}

void write_trajectory_csv(std::ostream& out, const FitResult& r, const std::string& prefix) {
  for (const StepRecord& s : r.steps) {
    out << prefix << s.iteration << ',' << format_real(s.loss_before) << ','
        << format_real(s.loss_after) << ',' << format_real(s.grad_norm) << ','
        << format_real(s.tau) << ',' << to_string(s.curvature) << ',' << s.escapes << '\n';
  }
}

// ---------------------------------------------------------------------------

struct FitCmd {
  std::string input, target, out, mode = "compressor", csv;
  double label = 0.0;
  bool append = false;
  FitFlags flags;

  void add(CLI::App& root) {
    CLI::App* app = root.add_subcommand("fit", "Fit the compressor to one input/target pair");
    app->add_option("--input", input, "Input WAV")->required();
    app->add_option("--target", target, "Target WAV")->required();
    app->add_option("--out", out, "Parameter map to write");
    app->add_option("--label", label, "Device setting of this pair")->capture_default_str();
    app->add_option("--mode", mode, "Map mode tag")->capture_default_str();
    app->add_flag("--append", append, "Merge into an existing map instead of replacing it");
    app->add_option("--csv", csv, "Per-iteration trajectory CSV");
    flags.add(app);
    app->callback([this] { run(); });
  }

  void run() {
    const FitConfig config = flags.config();
    flags.check_init();
    const AudioBuffer x = load_wav(input);
    const AudioBuffer y = load_wav(target);
    pair_validate(x, y);
    const FitResult r = fit(x, y, flags.init(config.bounds, x.sample_rate()), config);
    const double esr_value = fit_esr(x, y, r.params);
    kv("status", to_string(r.status));
    kv("iters", r.iters);
    kv("final_loss", r.final_loss());
    kv("grad_norm", r.grad_norm);
    kv("curvature_retries", r.curvature_retries);
    print_params(r.params);
    kv("fit_esr", esr_value);
    if (!csv.empty()) {
      std::ofstream f = open_csv(csv);
      f << "iteration,loss_before,loss_after,grad_norm,tau,curvature,escapes\n";
      write_trajectory_csv(f, r, "");
    }
    if (!out.empty()) {
      ParameterMap map;
      if (append && fs::exists(out)) map = load_map(out);
      map.sample_rate = x.sample_rate();
      map.bounds = config.bounds;
      std::erase_if(map.entries,
                    [&](const MapEntry& e) { return e.mode == mode && e.label == label; });
      map.entries.push_back({label, mode, r.params, r.final_loss(), esr_value});
      map.normalize();
      save_map(out, map);
      kv("map", out);
    }
  }
};

struct FitChainCmd {
  std::string manifest, out, mode = "compressor", csv, order = "desc";
  std::vector<std::string> pairs;
  FitFlags flags;

  void add(CLI::App& root) {
    CLI::App* app = root.add_subcommand(
        "fit-chain", "Fit a sequence of device settings, each warm-started from the last");
    app->add_option("--manifest", manifest, "Corpus manifest");
    app->add_option("--pair", pairs, "LABEL:X.wav:Y.wav (repeatable)");
    app->add_option("--order", order, "Fit order by label")
        ->check(CLI::IsMember({"desc", "asc", "given"}))
        ->capture_default_str();
    app->add_option("--out", out, "Parameter map to write");
    app->add_option("--mode", mode, "Map mode tag")->capture_default_str();
    app->add_option("--csv", csv, "Per-entry summary CSV");
    flags.add(app);
    app->callback([this] { run(); });
  }

  void run() {
    const FitConfig config = flags.config();
    flags.check_init();
    if (manifest.empty() == pairs.empty()) {
      throw UsageError("give exactly one of --manifest or --pair");
    }
    struct PairSpec {
      double label;
      std::string x, y;
    };
    std::vector<PairSpec> specs;
    for (const std::string& p : pairs) {
      const auto a = p.find(':');
      const auto b = p.find(':', a == std::string::npos ? a : a + 1);
      if (a == std::string::npos || b == std::string::npos) {
        throw UsageError("--pair expects LABEL:X.wav:Y.wav, got '" + p + "'");
      }
      specs.push_back({parse_list(p.substr(0, a), "--pair").at(0), p.substr(a + 1, b - a - 1),
                       p.substr(b + 1)});
    }

    std::vector<LabeledPair> corpus;
    if (!manifest.empty()) {
      corpus = load_corpus(manifest);
    } else {
      for (const PairSpec& s : specs) corpus.push_back({s.label, load_wav(s.x), load_wav(s.y)});
    }
    if (order == "desc") {
      std::stable_sort(corpus.begin(), corpus.end(),
                       [](const auto& a, const auto& b) { return a.label > b.label; });
    } else if (order == "asc") {
      std::stable_sort(corpus.begin(), corpus.end(),
                       [](const auto& a, const auto& b) { return a.label < b.label; });
    }
    const int sr = corpus.front().x.sample_rate();
    for (const LabeledPair& p : corpus) {
      if (p.x.sample_rate() != sr) throw std::runtime_error("pairs use different sample rates");
    }

    const std::vector<ChainEntry> chain = fit_chain(corpus, flags.init(config.bounds, sr), config);
    ParameterMap map;
    map.sample_rate = sr;
    map.bounds = config.bounds;
    std::ofstream csv_out;
    if (!csv.empty()) {
      csv_out = open_csv(csv);
      csv_out << "label,status,iters,final_loss,grad_norm,ct_db,ratio,attack_ms,release_ms,"
                 "makeup_db,fit_esr\n";
    }
    int failed = 0;
    long long total_iters = 0;
    for (std::size_t i = 0; i < chain.size(); ++i) {
      const ChainEntry& e = chain[i];
      std::ostringstream line;
      line << "entry=" << i << " label=" << format_real(e.label);
      if (!e.result) {
        ++failed;
        line << " status=error error=\"" << e.error << '"';
        std::cout << line.str() << '\n';
        continue;
      }
      const FitResult& r = *e.result;
      const double esr_value = fit_esr(corpus[i].x, corpus[i].y, r.params);
      total_iters += r.iters;
      if (r.status != FitStatus::Converged) ++failed;
      line << " status=" << to_string(r.status) << " iters=" << r.iters
           << " final_loss=" << format_real(r.final_loss())
           << " grad_norm=" << format_real(r.grad_norm) << " fit_esr=" << format_real(esr_value);
      std::cout << line.str() << '\n';
      map.entries.push_back({e.label, mode, r.params, r.final_loss(), esr_value});
      if (csv_out.is_open()) {
        csv_out << format_real(e.label) << ',' << to_string(r.status) << ',' << r.iters << ','
                << format_real(r.final_loss()) << ',' << format_real(r.grad_norm) << ','
                << format_real(r.params.ct_db) << ',' << format_real(r.params.ratio) << ','
                << format_real(r.params.attack_ms) << ',' << format_real(r.params.release_ms)
                << ',' << format_real(r.params.makeup_db) << ',' << format_real(esr_value)
                << '\n';
      }
    }
    kv("entries", static_cast<long long>(chain.size()));
    kv("failed", failed);
    kv("total_iters", total_iters);
    if (!out.empty()) {
      map.normalize();
      save_map(out, map);
      kv("map", out);
    }
  }
};

struct RenderCmd {
  std::string map_path, mode = "compressor", input, out, method, format = "float32";
  double label = 0.0;

  void add(CLI::App& root) {
    CLI::App* app = root.add_subcommand("render", "Process audio with interpolated settings");
    app->add_option("--map", map_path, "Parameter map")->required();
    app->add_option("--label", label, "Device setting")->required();
    app->add_option("--mode", mode)->capture_default_str();
    app->add_option("--input", input, "Input WAV")->required();
    app->add_option("--out", out, "Output WAV")->required();
    app->add_option("--method", method, "Override the map's interpolation")
        ->check(CLI::IsMember({"linear", "spline"}));
    app->add_option("--format", format, "Output sample format")
        ->check(CLI::IsMember({"pcm16", "pcm24", "float32", "float64"}))
        ->capture_default_str();
    app->callback([this] { run(); });
  }

  void run() {
    ParameterMap map = load_map(map_path);
    if (!method.empty()) map.interp = parse_interp_method(method);
    const AudioBuffer x = load_wav(input);
    const CompressorParams p = interpolate(map, mode, label);
    save_wav(out, render(map, mode, label, x), parse_sample_format(format));
    print_params(p);
    kv("output", out);
  }
};

struct MetricsCmd {
  std::string reference, estimate, csv;
  LdrOptions ldr_options;

  void add(CLI::App& root) {
    CLI::App* app = root.add_subcommand("metrics", "ESR and loudness dynamic range");
    app->add_option("--reference", reference, "Reference WAV (y)")->required();
    app->add_option("--estimate", estimate, "Estimate WAV (y_hat)")->required();
    app->add_option("--short-window", ldr_options.short_window, "seconds")
        ->capture_default_str();
    app->add_option("--long-window", ldr_options.long_window, "seconds")->capture_default_str();
    app->add_option("--csv", csv, "Append a result row to this CSV");
    app->callback([this] { run(); });
  }

  void run() {
    try {
      ldr_options.validate();
    } catch (const std::invalid_argument& e) {
      throw UsageError(e.what());
    }
    const AudioBuffer y = load_wav(reference);
    const AudioBuffer y_hat = load_wav(estimate);
    pair_validate(y, y_hat);
    const double esr_pre = esr_preemphasized(y.samples(), y_hat.samples());
    const double esr_raw = esr(y, y_hat);
    const double ldr_ref = ldr(y, ldr_options);
    const double ldr_est = ldr(y_hat, ldr_options);
    kv("esr", esr_pre);
    kv("esr_raw", esr_raw);
    kv("ldr_reference", ldr_ref);
    kv("ldr_estimate", ldr_est);
    kv("delta_ldr", ldr_est - ldr_ref);
    if (!csv.empty()) {
      const bool fresh = !fs::exists(csv);
      std::ofstream f(csv, std::ios::app);
      if (!f) throw std::runtime_error("cannot write " + csv);
      if (fresh) f << "reference,estimate,esr,esr_raw,ldr_reference,ldr_estimate,delta_ldr\n";
      f << reference << ',' << estimate << ',' << format_real(esr_pre) << ','
        << format_real(esr_raw) << ',' << format_real(ldr_ref) << ',' << format_real(ldr_est)
        << ',' << format_real(ldr_est - ldr_ref) << '\n';
    }
  }
};

struct GradCheckCmd {
  GradCheckOptions options;
  bool no_preemph = false;

  void add(CLI::App& root) {
    CLI::App* app = root.add_subcommand("grad-check", "Analytic gradient vs central differences");
    app->add_option("--seed", options.seed)->capture_default_str();
    app->add_option("--samples", options.samples, "Signal length")->capture_default_str()
        ->check(CLI::Range(2, 100000000));
    app->add_option("--draws", options.draws, "Number of random (theta, signal) draws")
        ->capture_default_str()
        ->check(CLI::PositiveNumber);
    app->add_option("--step", options.step, "Difference step")->capture_default_str()
        ->check(CLI::PositiveNumber);
    app->add_option("--tol", options.tolerance, "Pass threshold on relative error")
        ->capture_default_str();
    app->add_flag("--no-preemph", no_preemph);
    app->callback([this] { run(); });
  }

  void run() {
    options.preemphasis = !no_preemph;
    const GradCheckResult r = gradient_check(options);
    kv("draws", static_cast<long long>(r.draws.size()));
    kv("rejected_nonsmooth", r.rejected_nonsmooth);
    kv("max_rel_error", r.max_rel_error);
    kv("tolerance", options.tolerance);
    kv("result", r.passed ? "PASS" : "FAIL");
    if (!r.passed) throw std::runtime_error("gradient check failed");
  }
};

struct HessianBenchCmd {
  std::string strategy = "all", csv;
  double seconds = 12.0;
  int sample_rate = 44100;
  std::uint64_t seed = 0;
  int repeats = 1;
  int threads = 1;

  void add(CLI::App& root) {
    CLI::App* app = root.add_subcommand(
        "hessian-bench", "Time the Hessian strategies on one synthetic chunk");
    std::vector<std::string> names = kStrategyNames;
    names.push_back("all");
    app->add_option("--strategy", strategy)->check(CLI::IsMember(names))->capture_default_str();
    app->add_option("--seconds", seconds, "Signal length")->capture_default_str()
        ->check(CLI::PositiveNumber);
    app->add_option("--sample-rate", sample_rate)->capture_default_str()
        ->check(CLI::PositiveNumber);
    app->add_option("--seed", seed)->capture_default_str();
    app->add_option("--repeats", repeats, "Timed repetitions (best is reported)")
        ->capture_default_str()
        ->check(CLI::PositiveNumber);
    app->add_option("--threads", threads, "Threads inside the scan engine")
        ->capture_default_str()
        ->check(CLI::PositiveNumber);
    app->add_option("--csv", csv);
    app->callback([this] { run(); });
  }

  struct Measurement {
    double best_ms = 0.0;
    long peak_rss_kb = 0;
    Mat5 hessian = Mat5::Zero();
  };

  // Each strategy runs in a child process so that its peak RSS is its own.
  Measurement measure(const AudioBuffer& x, const AudioBuffer& y, const ThetaRaw& theta,
                      HessianStrategy s) const {
    int fds[2];
    if (pipe(fds) != 0) throw std::runtime_error("pipe failed");
    const pid_t pid = fork();
    if (pid < 0) throw std::runtime_error("fork failed");
    if (pid == 0) {
      close(fds[0]);
      Measurement m;
      LossOptions lo;
      lo.engine.options.threads = threads;
      const ChunkPlan plan = plan_chunks(x.size(), x.sample_rate(), seconds + 1.0, 0.0);
      const LossProblem problem(x, y, plan, ParamBounds{}, lo);
      m.best_ms = HUGE_VAL;
      for (int r = 0; r < repeats; ++r) {
        const auto t0 = std::chrono::steady_clock::now();
        m.hessian = problem.hessian(theta, s, false).matrix;
        const double ms =
            std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0)
                .count();
        m.best_ms = std::min(m.best_ms, ms);
      }
      rusage usage{};
      getrusage(RUSAGE_SELF, &usage);
      m.peak_rss_kb = usage.ru_maxrss;
      const ssize_t n = write(fds[1], &m, sizeof m);
      _exit(n == static_cast<ssize_t>(sizeof m) ? 0 : 1);
    }
    close(fds[1]);
    Measurement m;
    std::size_t got = 0;
    auto* bytes = reinterpret_cast<char*>(&m);
    while (got < sizeof m) {
      const ssize_t n = read(fds[0], bytes + got, sizeof m - got);
      if (n <= 0) break;
      got += static_cast<std::size_t>(n);
    }
    close(fds[0]);
    int status = 0;
    waitpid(pid, &status, 0);
    if (got != sizeof m || !WIFEXITED(status) || WEXITSTATUS(status) != 0) {
      throw std::runtime_error("benchmark worker for " + to_string(s) + " failed");
    }
    return m;
  }

  void run() {
    const int sr = sample_rate;
    const auto n = static_cast<std::size_t>(std::llround(seconds * sr));
    const std::vector<double> stim = make_stimulus(Stimulus::Mixed, seconds, sr, seed);
    const AudioBuffer x(stim, sr);
    const ParamBounds bounds;
    const CompressorParams target = CompressorParams::from_times(-30, 5, 5, 120, 2, sr);
    const AudioBuffer y = compress(x, target).output;
    const ThetaRaw theta =
        unconstrain(CompressorParams::from_times(-34, 3.5, 2, 200, 0.5, sr), bounds, sr);

    std::vector<HessianStrategy> chosen;
    if (strategy == "all") {
      chosen.assign(std::begin(kAllStrategies), std::end(kAllStrategies));
    } else {
      chosen.push_back(parse_strategy(strategy));
    }
    kv("samples", static_cast<long long>(n));
    std::vector<Measurement> results;
    std::ofstream csv_out;
    if (!csv.empty()) {
      csv_out = open_csv(csv);
      csv_out << "strategy,time_ms,peak_rss_kb\n";
    }
    for (HessianStrategy s : chosen) {
      results.push_back(measure(x, y, theta, s));
      const Measurement& m = results.back();
      std::cout << "strategy=" << to_string(s) << " time_ms=" << format_real(m.best_ms)
                << " peak_rss_kb=" << m.peak_rss_kb << '\n';
      if (csv_out.is_open()) {
        csv_out << to_string(s) << ',' << format_real(m.best_ms) << ',' << m.peak_rss_kb << '\n';
      }
    }
    double max_dev = 0.0;
    for (const Measurement& a : results) {
      for (const Measurement& b : results) {
        const double scale = std::max(a.hessian.cwiseAbs().maxCoeff(), 1e-300);
        max_dev = std::max(max_dev, (a.hessian - b.hessian).cwiseAbs().maxCoeff() / scale);
      }
    }
    kv("max_cross_deviation", max_dev);
  }
};

struct InterpEvalCmd {
  std::string map_path, manifest, mode = "compressor", held_out, csv;

  void add(CLI::App& root) {
    CLI::App* app = root.add_subcommand(
        "interp-eval", "Leave-out interpolation test against a corpus");
    app->add_option("--map", map_path, "Parameter map")->required();
    app->add_option("--manifest", manifest, "Corpus manifest with ground-truth pairs")
        ->required();
    app->add_option("--mode", mode)->capture_default_str();
    app->add_option("--held-out", held_out,
                    "Comma-separated labels to hold out (default: every other map label)");
    app->add_option("--csv", csv, "Per-label table");
    app->callback([this] { run(); });
  }

  void run() {
    std::vector<double> labels;
    if (!held_out.empty()) labels = parse_list(held_out, "--held-out");
    const ParameterMap map = load_map(map_path);
    const std::vector<LabeledPair> corpus = load_corpus(manifest);
    if (held_out.empty()) {
      const std::vector<MapEntry> entries = map.mode_entries(mode);
      for (std::size_t i = 1; i + 1 < entries.size(); i += 2) labels.push_back(entries[i].label);
    }
    const InterpEvalResult r = interp_eval(map, mode, labels, corpus);
    std::ofstream csv_out;
    if (!csv.empty()) {
      csv_out = open_csv(csv);
      csv_out << "label,method,esr,ct_db,ratio,attack_ms,release_ms,makeup_db\n";
    }
    for (const InterpEvalRow& row : r.rows) {
      std::cout << "label=" << format_real(row.label) << " method=" << to_string(row.method)
                << " esr=" << format_real(row.esr) << '\n';
      if (csv_out.is_open()) {
        csv_out << format_real(row.label) << ',' << to_string(row.method) << ','
                << format_real(row.esr) << ',' << format_real(row.params.ct_db) << ','
                << format_real(row.params.ratio) << ',' << format_real(row.params.attack_ms)
                << ',' << format_real(row.params.release_ms) << ','
                << format_real(row.params.makeup_db) << '\n';
      }
    }
    kv("held_out", static_cast<long long>(labels.size()));
    kv("mean_esr_linear", r.mean_linear);
    kv("mean_esr_spline", r.mean_spline);
  }
};

struct GenCorpusCmd {
  CorpusSpec spec = default_corpus_spec();
  std::string out, labels, stimulus = "mixed", format = "float64";
  std::vector<std::string> knots;
  int threads = default_thread_count();

  void add(CLI::App& root) {
    CLI::App* app = root.add_subcommand("gen-corpus", "Write a synthetic paired corpus");
    app->add_option("--out", out, "Output directory")->required();
    app->add_option("--seed", spec.seed)->capture_default_str();
    app->add_option("--duration", spec.duration, "Seconds per file")->capture_default_str();
    app->add_option("--sample-rate", spec.sample_rate)->capture_default_str()
        ->check(CLI::PositiveNumber);
    app->add_option("--labels", labels, "Comma-separated labels (default 40,50,...,100)");
    app->add_option("--stimulus", stimulus)
        ->check(CLI::IsMember({"noise-bursts", "am-tone", "step-envelope", "mixed"}))
        ->capture_default_str();
    app->add_option("--format", format, "WAV sample format")
        ->check(CLI::IsMember({"pcm16", "pcm24", "float32", "float64"}))
        ->capture_default_str();
    app->add_option("--mode", spec.mode)->capture_default_str();
    app->add_option("--knot", knots,
                    "LABEL:CT_DB:RATIO:ATTACK_MS:RELEASE_MS:MAKEUP_DB (repeatable; "
                    "replaces the default curve)");
    app->add_option("--threads", threads)->capture_default_str()->check(CLI::PositiveNumber);
    app->callback([this] { run(); });
  }

  void run() {
    if (!labels.empty()) spec.labels = parse_list(labels, "--labels");
    spec.stimulus = parse_stimulus(stimulus);
    spec.format = parse_sample_format(format);
    if (!knots.empty()) {
      spec.theta_curve.clear();
      for (std::string k : knots) {
        std::replace(k.begin(), k.end(), ':', ',');
        const std::vector<double> v = parse_list(k, "--knot");
        if (v.size() != 6) throw UsageError("--knot needs six ':'-separated numbers");
        spec.theta_curve.push_back({v[0], v[1], v[2], v[3], v[4], v[5]});
      }
    }
    try {
      spec.validate();
    } catch (const std::invalid_argument& e) {
      throw UsageError(e.what());
    }
    const CorpusManifest m = generate(spec, out, threads);
    kv("entries", static_cast<long long>(m.items.size()));
    kv("manifest", (fs::path(out) / "manifest.txt").string());
  }
};

struct ExportCsvCmd {
  std::string map_path, out;

  void add(CLI::App& root) {
    CLI::App* app = root.add_subcommand("export-csv", "Write a parameter map as CSV");
    app->add_option("--map", map_path, "Parameter map")->required();
    app->add_option("--out", out, "CSV file")->required();
    app->callback([this] { run(); });
  }

  void run() {
    const ParameterMap map = load_map(map_path);
    export_csv(out, map);
    kv("rows", static_cast<long long>(map.entries.size()));
    kv("csv", out);
  }
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Fit and apply a differentiable feed-forward compressor"};
  app.require_subcommand(1);
  FitCmd fit_cmd;
  FitChainCmd chain_cmd;
  RenderCmd render_cmd;
  MetricsCmd metrics_cmd;
  GradCheckCmd grad_cmd;
  HessianBenchCmd bench_cmd;
  InterpEvalCmd interp_cmd;
  GenCorpusCmd gen_cmd;
  ExportCsvCmd export_cmd;
  fit_cmd.add(app);
  chain_cmd.add(app);
  render_cmd.add(app);
  metrics_cmd.add(app);
  grad_cmd.add(app);
  bench_cmd.add(app);
  interp_cmd.add(app);
  gen_cmd.add(app);
  export_cmd.add(app);

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
