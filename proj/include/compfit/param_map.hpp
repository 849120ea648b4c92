#pragma once

// Fitted parameters per device setting, interpolation between settings, and
// the map file format.
//
// Each parameter is interpolated in its own representation space: threshold
// and make-up in dB, attack and release in log(ms), ratio linearly.

#include <filesystem>
#include <iosfwd>
#include <limits>
#include <string>
#include <vector>

#include "compfit/compressor.hpp"
#include "compfit/optimizer.hpp"
#include "compfit/signal_io.hpp"

namespace compfit {

enum class InterpMethod { Linear, CubicSpline };
std::string to_string(InterpMethod method);
/// "linear" or "spline".
InterpMethod parse_interp_method(const std::string& name);

struct MapEntry {
  double label = 0.0;
  std::string mode = "compressor";
  CompressorParams params;
  double fit_loss = std::numeric_limits<double>::quiet_NaN();
  double fit_esr = std::numeric_limits<double>::quiet_NaN();

  friend bool operator==(const MapEntry& a, const MapEntry& b);
};

struct ParameterMap {
  int sample_rate = 44100;
  ParamBounds bounds{};
  std::vector<MapEntry> entries;
  InterpMethod interp = InterpMethod::Linear;

  /// Sorts by (mode, label); throws std::invalid_argument on duplicate labels
  /// within a mode, empty mode names or out-of-range parameters.
  void normalize();
  std::vector<std::string> modes() const;
  /// Entries of one mode in label order.
  std::vector<MapEntry> mode_entries(const std::string& mode) const;

  friend bool operator==(const ParameterMap& a, const ParameterMap& b);
};

/// Natural cubic spline through (x_i, y_i), x strictly increasing, n >= 2.
class NaturalCubicSpline {
 public:
  NaturalCubicSpline(std::vector<double> x, std::vector<double> y);
  double operator()(double t) const;
  /// Second derivative of the piece to the left (side < 0) or right of t.
  double second_derivative(double t, int side) const;

 private:
  std::size_t piece(double t, int side) const;
  std::vector<double> x_, y_, m_;  // m_: second derivatives at the knots
};

/// Piecewise-linear interpolation, x strictly increasing, n >= 2.
double linear_interp(const std::vector<double>& x, const std::vector<double>& y, double t);

/// Parameters at `label`. Exact stored values at knots, even for a
/// single-entry mode. Throws std::out_of_range outside the stored labels and
/// std::invalid_argument for an unknown mode, or for fewer than two entries
/// when the label is not a knot. Interpolated ratio and times are
/// clamped to the map bounds (a spline can overshoot).
CompressorParams interpolate(const ParameterMap& map, const std::string& mode, double label);
CompressorParams interpolate(const ParameterMap& map, const std::string& mode, double label,
                             InterpMethod method);

AudioBuffer render(const ParameterMap& map, const std::string& mode, double label,
                   const AudioBuffer& x);

struct InterpEvalRow {
  double label = 0.0;
  InterpMethod method = InterpMethod::Linear;
  CompressorParams params;
  double esr = 0.0;  // pre-emphasised ESR against the corpus target
};

struct InterpEvalResult {
  std::vector<InterpEvalRow> rows;
  double mean_linear = 0.0;
  double mean_spline = 0.0;
};

/// Leave-out evaluation: held-out labels are removed from the map's mode,
/// the rest are interpolated with both methods, rendered from the corpus
/// input and scored against the corpus target.
InterpEvalResult interp_eval(const ParameterMap& map, const std::string& mode,
                             const std::vector<double>& held_out,
                             const std::vector<LabeledPair>& corpus);

void write_map(std::ostream& out, const ParameterMap& map);
ParameterMap read_map(std::istream& in, const std::string& source = "<map>");
void save_map(const std::filesystem::path& path, const ParameterMap& map);
ParameterMap load_map(const std::filesystem::path& path);

/// Columns: label,mode,ct_db,ratio,attack_ms,release_ms,makeup_db,fit_loss,fit_esr.
void write_csv(std::ostream& out, const ParameterMap& map);
void export_csv(const std::filesystem::path& path, const ParameterMap& map);

}  // namespace compfit
