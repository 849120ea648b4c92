#pragma once

// Synthetic paired corpora: seeded program material compressed by the model
// itself under a known parameter curve theta*(label).

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "compfit/compressor.hpp"
#include "compfit/optimizer.hpp"
#include "compfit/param_map.hpp"
#include "compfit/signal_io.hpp"

namespace compfit {

enum class Stimulus { NoiseBursts, AmTone, StepEnvelope, Mixed };
std::string to_string(Stimulus stimulus);
/// noise-bursts, am-tone, step-envelope, mixed.
Stimulus parse_stimulus(const std::string& name);

/// One knot of theta*(label). Between knots each parameter follows a natural
/// cubic spline in the same representation spaces as the parameter map.
struct CurveKnot {
  double label = 0.0;
  double ct_db = -30.0;
  double ratio = 4.0;
  double attack_ms = 5.0;
  double release_ms = 100.0;
  double makeup_db = 0.0;
};

struct CorpusSpec {
  std::uint64_t seed = 0;
  double duration = 8.0;  // seconds
  int sample_rate = 44100;
  std::vector<double> labels;
  std::vector<CurveKnot> theta_curve;
  Stimulus stimulus = Stimulus::Mixed;
  std::string mode = "compressor";
  SampleFormat format = SampleFormat::Float64;
  ParamBounds bounds{};

  /// duration >= 2 * default LDR long window, sorted distinct labels inside
  /// the curve's label range, curve knots inside bounds.
  void validate() const;
};

/// Peak-reduction style defaults: labels 40..100 in steps of 10 and a smooth
/// curve from light to heavy compression.
CorpusSpec default_corpus_spec();

/// Deterministic program material in [-1, 1]. Every stimulus sweeps its level
/// across roughly -60..0 dBFS in both directions.
std::vector<double> make_stimulus(Stimulus stimulus, double duration, int sample_rate,
                                  std::uint64_t seed);

/// theta*(label) from the curve knots (a single knot gives a constant curve).
CompressorParams theta_star(const CorpusSpec& spec, double label);

/// Stimulus for the k-th label, quantised to the corpus sample format, and
/// its compressed target (also quantised). Labels are generated in parallel.
std::vector<LabeledPair> generate_pairs(const CorpusSpec& spec, int threads = 1);

struct CorpusItem {
  double label = 0.0;
  std::string x_path;  // relative to the manifest directory
  std::string y_path;
  CompressorParams params;
};

struct CorpusManifest {
  CorpusSpec spec;
  std::vector<CorpusItem> items;
};

/// Writes <out_dir>/label_<label>/{x,y}.wav and <out_dir>/manifest.txt.
CorpusManifest generate(const CorpusSpec& spec, const std::filesystem::path& out_dir,
                        int threads = 1);

void write_manifest(std::ostream& out, const CorpusManifest& manifest);
CorpusManifest read_manifest(std::istream& in, const std::string& source = "<manifest>");
CorpusManifest load_manifest(const std::filesystem::path& path);
/// Loads the manifest and every pair it lists, in label order.
std::vector<LabeledPair> load_corpus(const std::filesystem::path& manifest_path);

/// Map holding theta* at each corpus label (fit_loss/fit_esr set to 0).
ParameterMap ground_truth_map(const CorpusSpec& spec);

}  // namespace compfit
