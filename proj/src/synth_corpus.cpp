#include "compfit/synth_corpus.hpp"

#include <algorithm>
#include <cmath>
#include <charconv>
#include <fstream>
#include <numbers>
#include <random>
#include <stdexcept>

#include "compfit/metrics.hpp"
#include "compfit/parallel.hpp"
#include "compfit/textfmt.hpp"

namespace compfit {
namespace {

constexpr const char* kCorpusFormat = "compfit-corpus";
constexpr long long kCorpusVersion = 1;

std::uint64_t sub_seed(std::uint64_t seed, std::uint64_t k) {
  // splitmix64 step
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (k + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

double db_to_amp(double db) { return std::pow(10.0, db / 20.0); }

// Gaussian noise scaled so that the level sits near `db` (peaks about 3 sigma).
struct NoiseSource {
  std::mt19937_64 rng;
  std::normal_distribution<double> normal{0.0, 1.0};
  double sample(double db) { return db_to_amp(db) / 3.0 * normal(rng); }
};

void noise_bursts(std::vector<double>& out, std::size_t begin, std::size_t end, int sr,
                  std::mt19937_64& rng) {
  NoiseSource noise{std::mt19937_64(rng())};
  std::uniform_real_distribution<double> level(-60.0, -3.0);
  std::uniform_real_distribution<double> burst(0.08, 0.4);
  std::uniform_real_distribution<double> gap(0.02, 0.2);
  std::size_t n = begin;
  while (n < end) {
    const auto on = static_cast<std::size_t>(burst(rng) * sr);
    const double db = level(rng);
    for (std::size_t k = 0; k < on && n < end; ++k, ++n) out[n] = noise.sample(db);
    const auto off = static_cast<std::size_t>(gap(rng) * sr);
    for (std::size_t k = 0; k < off && n < end; ++k, ++n) out[n] = noise.sample(-70.0);
  }
}

void am_tone(std::vector<double>& out, std::size_t begin, std::size_t end, int sr,
             std::mt19937_64& rng) {
  std::uniform_real_distribution<double> carrier(80.0, 2000.0);
  std::uniform_real_distribution<double> rate(0.5, 3.0);
  std::uniform_real_distribution<double> phase(0.0, 2.0 * std::numbers::pi);
  const double fc = carrier(rng);
  const double fm = rate(rng);
  const double phi_c = phase(rng);
  const double phi_m = phase(rng);
  for (std::size_t n = begin; n < end; ++n) {
    const double t = static_cast<double>(n - begin) / sr;
    const double db = -32.0 + 28.0 * std::sin(2.0 * std::numbers::pi * fm * t + phi_m);
    out[n] = db_to_amp(db) * std::sin(2.0 * std::numbers::pi * fc * t + phi_c);
  }
}

void step_envelope(std::vector<double>& out, std::size_t begin, std::size_t end, int sr,
                   std::mt19937_64& rng) {
  NoiseSource noise{std::mt19937_64(rng())};
  std::uniform_real_distribution<double> low(-60.0, -35.0);
  std::uniform_real_distribution<double> high(-25.0, -3.0);
  std::uniform_real_distribution<double> hold(0.15, 0.5);
  bool loud = std::bernoulli_distribution(0.5)(rng);
  std::size_t n = begin;
  while (n < end) {
    const double db = loud ? high(rng) : low(rng);
    const auto len = static_cast<std::size_t>(hold(rng) * sr);
    for (std::size_t k = 0; k < len && n < end; ++k, ++n) out[n] = noise.sample(db);
    loud = !loud;
  }
}

}  // namespace

std::string to_string(Stimulus stimulus) {
  switch (stimulus) {
    case Stimulus::NoiseBursts: return "noise-bursts";
    case Stimulus::AmTone: return "am-tone";
    case Stimulus::StepEnvelope: return "step-envelope";
    case Stimulus::Mixed: return "mixed";
  }
  return "unknown";
}

Stimulus parse_stimulus(const std::string& name) {
  for (Stimulus s : {Stimulus::NoiseBursts, Stimulus::AmTone, Stimulus::StepEnvelope,
                     Stimulus::Mixed}) {
    if (to_string(s) == name) return s;
  }
  throw std::invalid_argument("unknown stimulus '" + name +
                              "' (expected noise-bursts, am-tone, step-envelope or mixed)");
}

void CorpusSpec::validate() const {
  if (sample_rate <= 0) throw std::invalid_argument("sample rate must be positive");
  if (!(duration >= 2.0 * LdrOptions{}.long_window)) {
    throw std::invalid_argument("duration must be at least " +
                                format_real(2.0 * LdrOptions{}.long_window) + " s");
  }
  if (labels.empty()) throw std::invalid_argument("corpus needs at least one label");
  for (std::size_t i = 1; i < labels.size(); ++i) {
    if (!(labels[i] > labels[i - 1])) {
      throw std::invalid_argument("labels must be sorted and distinct");
    }
  }
  if (theta_curve.empty()) throw std::invalid_argument("theta curve needs at least one knot");
  for (std::size_t i = 1; i < theta_curve.size(); ++i) {
    if (!(theta_curve[i].label > theta_curve[i - 1].label)) {
      throw std::invalid_argument("curve knots must be sorted by label");
    }
  }
  if (theta_curve.size() > 1 &&
      (labels.front() < theta_curve.front().label || labels.back() > theta_curve.back().label)) {
    throw std::invalid_argument("labels must lie within the curve's knot range");
  }
  bounds.validate();
  for (const CurveKnot& k : theta_curve) {
    if (k.ratio < bounds.ratio.lo || k.ratio > bounds.ratio.hi ||
        k.attack_ms < bounds.attack_ms.lo || k.attack_ms > bounds.attack_ms.hi ||
        k.release_ms < bounds.release_ms.lo || k.release_ms > bounds.release_ms.hi) {
      throw std::invalid_argument("curve knot at label " + format_real(k.label) +
                                  " is outside the bounds");
    }
  }
  if (mode.empty()) throw std::invalid_argument("mode name must not be empty");
}

CorpusSpec default_corpus_spec() {
  CorpusSpec spec;
  spec.labels = {40, 50, 60, 70, 80, 90, 100};
  spec.theta_curve = {
      {40.0, -18.0, 2.5, 8.0, 250.0, 1.0},
      {70.0, -28.0, 4.5, 3.0, 150.0, 3.0},
      {100.0, -40.0, 8.0, 1.0, 80.0, 6.0},
  };
  return spec;
}

std::vector<double> make_stimulus(Stimulus stimulus, double duration, int sample_rate,
                                  std::uint64_t seed) {
  if (!(duration > 0.0) || sample_rate <= 0) {
    throw std::invalid_argument("stimulus needs positive duration and rate");
  }
  const auto n = static_cast<std::size_t>(std::llround(duration * sample_rate));
  std::vector<double> out(n, 0.0);
  std::mt19937_64 rng(seed);
  switch (stimulus) {
    case Stimulus::NoiseBursts: noise_bursts(out, 0, n, sample_rate, rng); break;
    case Stimulus::AmTone: am_tone(out, 0, n, sample_rate, rng); break;
    case Stimulus::StepEnvelope: step_envelope(out, 0, n, sample_rate, rng); break;
    case Stimulus::Mixed: {
      std::uniform_int_distribution<int> pick(0, 2);
      std::uniform_real_distribution<double> seg(0.6, 1.5);
      std::size_t begin = 0;
      while (begin < n) {
        const std::size_t end =
            std::min(n, begin + static_cast<std::size_t>(seg(rng) * sample_rate));
        switch (pick(rng)) {
          case 0: noise_bursts(out, begin, end, sample_rate, rng); break;
          case 1: am_tone(out, begin, end, sample_rate, rng); break;
          default: step_envelope(out, begin, end, sample_rate, rng); break;
        }
        begin = end;
      }
      break;
    }
  }
  for (double& v : out) v = std::clamp(v, -1.0, 1.0);
  return out;
}

CompressorParams theta_star(const CorpusSpec& spec, double label) {
  if (spec.theta_curve.size() == 1) {
    const CurveKnot& k = spec.theta_curve.front();
    return CompressorParams::from_times(k.ct_db, k.ratio, k.attack_ms, k.release_ms,
                                        k.makeup_db, spec.sample_rate);
  }
  ParameterMap curve;
  curve.sample_rate = spec.sample_rate;
  curve.bounds = spec.bounds;
  curve.interp = InterpMethod::CubicSpline;
  for (const CurveKnot& k : spec.theta_curve) {
    MapEntry e;
    e.label = k.label;
    e.mode = spec.mode;
    e.params = CompressorParams::from_times(k.ct_db, k.ratio, k.attack_ms, k.release_ms,
                                            k.makeup_db, spec.sample_rate);
    curve.entries.push_back(e);
  }
  curve.normalize();
  return interpolate(curve, spec.mode, label);
}

std::vector<LabeledPair> generate_pairs(const CorpusSpec& spec, int threads) {
  spec.validate();
  std::vector<std::optional<LabeledPair>> slots(spec.labels.size());
  parallel_for(spec.labels.size(), threads, [&](std::size_t k) {
    const AudioBuffer x = quantize(
        AudioBuffer(make_stimulus(spec.stimulus, spec.duration, spec.sample_rate,
                                  sub_seed(spec.seed, k)),
                    spec.sample_rate),
        spec.format);
    AudioBuffer y = quantize(compress(x, theta_star(spec, spec.labels[k])).output, spec.format);
    slots[k] = LabeledPair{spec.labels[k], x, std::move(y)};
  });
  std::vector<LabeledPair> out;
  out.reserve(slots.size());
  for (auto& s : slots) out.push_back(std::move(*s));
  return out;
}

CorpusManifest generate(const CorpusSpec& spec, const std::filesystem::path& out_dir,
                        int threads) {
  const std::vector<LabeledPair> pairs = generate_pairs(spec, threads);
  std::filesystem::create_directories(out_dir);
  CorpusManifest manifest;
  manifest.spec = spec;
  for (const LabeledPair& p : pairs) {
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof buf, p.label);
    const std::string dir = "label_" + std::string(buf, res.ptr);
    std::filesystem::create_directories(out_dir / dir);
    CorpusItem item;
    item.label = p.label;
    item.x_path = dir + "/x.wav";
    item.y_path = dir + "/y.wav";
    item.params = theta_star(spec, p.label);
    save_wav(out_dir / item.x_path, p.x, spec.format);
    save_wav(out_dir / item.y_path, p.y, spec.format);
    manifest.items.push_back(item);
  }
  std::ofstream out(out_dir / "manifest.txt");
  if (!out) throw std::runtime_error("cannot write " + (out_dir / "manifest.txt").string());
  write_manifest(out, manifest);
  return manifest;
}

void write_manifest(std::ostream& out, const CorpusManifest& manifest) {
  const CorpusSpec& s = manifest.spec;
  TextWriter w(out);
  w.comment("synthetic corpus manifest")
      .field("format", std::string(kCorpusFormat))
      .field("version", kCorpusVersion)
      .field("seed", std::to_string(s.seed))
      .field("duration", s.duration)
      .field("sample_rate", static_cast<long long>(s.sample_rate))
      .field("stimulus", to_string(s.stimulus))
      .field("mode", s.mode)
      .field("sample_format", to_string(s.format))
      .field("ratio_lo", s.bounds.ratio.lo)
      .field("ratio_hi", s.bounds.ratio.hi)
      .field("attack_ms_lo", s.bounds.attack_ms.lo)
      .field("attack_ms_hi", s.bounds.attack_ms.hi)
      .field("release_ms_lo", s.bounds.release_ms.lo)
      .field("release_ms_hi", s.bounds.release_ms.hi)
      .field("knots", static_cast<long long>(s.theta_curve.size()))
      .field("entries", static_cast<long long>(manifest.items.size()));
  for (const CurveKnot& k : s.theta_curve) {
    w.section("knot")
        .field("label", k.label)
        .field("ct_db", k.ct_db)
        .field("ratio", k.ratio)
        .field("attack_ms", k.attack_ms)
        .field("release_ms", k.release_ms)
        .field("makeup_db", k.makeup_db);
  }
  for (const CorpusItem& item : manifest.items) {
    w.section("entry")
        .field("label", item.label)
        .field("x", item.x_path)
        .field("y", item.y_path)
        .field("ct_db", item.params.ct_db)
        .field("ratio", item.params.ratio)
        .field("attack_ms", item.params.attack_ms)
        .field("release_ms", item.params.release_ms)
        .field("makeup_db", item.params.makeup_db)
        .field("alpha_at", item.params.alpha_at)
        .field("alpha_rt", item.params.alpha_rt);
  }
  w.end();
}

CorpusManifest read_manifest(std::istream& in, const std::string& source) {
  const TextDocument doc = parse_text(in, source);
  FieldReader h(doc.header, source);
  expect_format(h, kCorpusFormat, kCorpusVersion);
  CorpusManifest m;
  CorpusSpec& s = m.spec;
  const std::string seed = h.text("seed");
  try {
    std::size_t used = 0;
    s.seed = std::stoull(seed, &used);
    if (used != seed.size()) throw std::invalid_argument("trailing characters");
  } catch (const std::exception&) {
    h.fail("seed", "not an unsigned integer: '" + seed + "'");
  }
  s.duration = h.real("duration");
  s.sample_rate = static_cast<int>(h.integer("sample_rate"));
  try {
    s.stimulus = parse_stimulus(h.text("stimulus"));
  } catch (const std::invalid_argument& e) {
    h.fail("stimulus", e.what());
  }
  s.mode = h.text("mode");
  try {
    s.format = parse_sample_format(h.text("sample_format"));
  } catch (const std::invalid_argument& e) {
    h.fail("sample_format", e.what());
  }
  s.bounds.ratio = {h.real("ratio_lo"), h.real("ratio_hi")};
  s.bounds.attack_ms = {h.real("attack_ms_lo"), h.real("attack_ms_hi")};
  s.bounds.release_ms = {h.real("release_ms_lo"), h.real("release_ms_hi")};
  const long long n_knots = h.integer("knots");
  const long long n_entries = h.integer("entries");
  h.finish();

  for (const TextSection& sec : doc.sections) {
    FieldReader r(sec, source);
    if (sec.name == "knot") {
      CurveKnot k;
      k.label = r.real("label");
      k.ct_db = r.real("ct_db");
      k.ratio = r.real("ratio");
      k.attack_ms = r.real("attack_ms");
      k.release_ms = r.real("release_ms");
      k.makeup_db = r.real("makeup_db");
      r.finish();
      s.theta_curve.push_back(k);
    } else if (sec.name == "entry") {
      CorpusItem item;
      item.label = r.real("label");
      item.x_path = r.text("x");
      item.y_path = r.text("y");
      item.params.ct_db = r.real("ct_db");
      item.params.ratio = r.real("ratio");
      item.params.attack_ms = r.real("attack_ms");
      item.params.release_ms = r.real("release_ms");
      item.params.makeup_db = r.real("makeup_db");
      item.params.alpha_at = r.real("alpha_at");
      item.params.alpha_rt = r.real("alpha_rt");
      r.finish();
      s.labels.push_back(item.label);
      m.items.push_back(item);
    } else {
      throw FormatError(source, sec.line, "", "unexpected section [" + sec.name + "]");
    }
  }
  if (n_knots != static_cast<long long>(s.theta_curve.size())) {
    throw FormatError(source, 0, "knots", "count does not match the [knot] sections");
  }
  if (n_entries != static_cast<long long>(m.items.size())) {
    throw FormatError(source, 0, "entries", "count does not match the [entry] sections");
  }
  return m;
}

CorpusManifest load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return read_manifest(in, path.string());
}

std::vector<LabeledPair> load_corpus(const std::filesystem::path& manifest_path) {
  const CorpusManifest m = load_manifest(manifest_path);
  const std::filesystem::path dir = manifest_path.parent_path();
  std::vector<LabeledPair> out;
  for (const CorpusItem& item : m.items) {
    AudioBuffer x = load_wav(dir / item.x_path);
    AudioBuffer y = load_wav(dir / item.y_path);
    pair_validate(x, y);
    out.push_back({item.label, std::move(x), std::move(y)});
  }
  std::stable_sort(out.begin(), out.end(),
                   [](const LabeledPair& a, const LabeledPair& b) { return a.label < b.label; });
  return out;
}

ParameterMap ground_truth_map(const CorpusSpec& spec) {
  ParameterMap map;
  map.sample_rate = spec.sample_rate;
  map.bounds = spec.bounds;
  for (double label : spec.labels) {
    MapEntry e;
    e.label = label;
    e.mode = spec.mode;
    e.params = theta_star(spec, label);
    e.fit_loss = 0.0;
    e.fit_esr = 0.0;
    map.entries.push_back(e);
  }
  map.normalize();
  return map;
}

}  // namespace compfit
