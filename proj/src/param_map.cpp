#include "compfit/param_map.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

#include "compfit/metrics.hpp"
#include "compfit/textfmt.hpp"

namespace compfit {
namespace {

constexpr const char* kMapFormat = "compfit-map";
constexpr long long kMapVersion = 1;

bool same_real(double a, double b) { return a == b || (std::isnan(a) && std::isnan(b)); }

bool inside(const Interval& r, double v) { return v >= r.lo && v <= r.hi; }

void check_knots(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size()) throw std::invalid_argument("knot x/y sizes differ");
  if (x.size() < 2) throw std::invalid_argument("interpolation needs at least two knots");
  for (std::size_t i = 1; i < x.size(); ++i) {
    if (!(x[i] > x[i - 1])) throw std::invalid_argument("knots must be strictly increasing");
  }
}

}  // namespace

std::string to_string(InterpMethod method) {
  return method == InterpMethod::Linear ? "linear" : "spline";
}

InterpMethod parse_interp_method(const std::string& name) {
  if (name == "linear") return InterpMethod::Linear;
  if (name == "spline") return InterpMethod::CubicSpline;
  throw std::invalid_argument("unknown interpolation method '" + name +
                              "' (expected linear or spline)");
}

bool operator==(const MapEntry& a, const MapEntry& b) {
  return a.label == b.label && a.mode == b.mode && a.params == b.params &&
         same_real(a.fit_loss, b.fit_loss) && same_real(a.fit_esr, b.fit_esr);
}

bool operator==(const ParameterMap& a, const ParameterMap& b) {
  return a.sample_rate == b.sample_rate && a.bounds == b.bounds && a.interp == b.interp &&
         a.entries == b.entries;
}

void ParameterMap::normalize() {
  if (sample_rate <= 0) throw std::invalid_argument("map sample rate must be positive");
  bounds.validate();
  for (const MapEntry& e : entries) {
    if (e.mode.empty() || e.mode.find_first_of(" \t=[]#") != std::string::npos) {
      throw std::invalid_argument("bad mode name '" + e.mode + "'");
    }
    const CompressorParams& p = e.params;
    if (!std::isfinite(e.label) || !std::isfinite(p.ct_db) || !std::isfinite(p.makeup_db) ||
        !inside(bounds.ratio, p.ratio) || !inside(bounds.attack_ms, p.attack_ms) ||
        !inside(bounds.release_ms, p.release_ms)) {
      std::ostringstream msg;
      msg << "entry label=" << e.label << " mode=" << e.mode << " is outside the map bounds";
      throw std::invalid_argument(msg.str());
    }
  }
  std::stable_sort(entries.begin(), entries.end(), [](const MapEntry& a, const MapEntry& b) {
    return a.mode != b.mode ? a.mode < b.mode : a.label < b.label;
  });
  for (std::size_t i = 1; i < entries.size(); ++i) {
    if (entries[i].mode == entries[i - 1].mode && entries[i].label == entries[i - 1].label) {
      throw std::invalid_argument("duplicate label " + format_real(entries[i].label) +
                                  " in mode " + entries[i].mode);
    }
  }
}

std::vector<std::string> ParameterMap::modes() const {
  std::set<std::string> names;
  for (const MapEntry& e : entries) names.insert(e.mode);
  return {names.begin(), names.end()};
}

std::vector<MapEntry> ParameterMap::mode_entries(const std::string& mode) const {
  std::vector<MapEntry> out;
  for (const MapEntry& e : entries) {
    if (e.mode == mode) out.push_back(e);
  }
  std::stable_sort(out.begin(), out.end(),
                   [](const MapEntry& a, const MapEntry& b) { return a.label < b.label; });
  return out;
}

// ---------------------------------------------------------------------------

NaturalCubicSpline::NaturalCubicSpline(std::vector<double> x, std::vector<double> y)
    : x_(std::move(x)), y_(std::move(y)) {
  check_knots(x_, y_);
  const std::size_t n = x_.size();
  m_.assign(n, 0.0);
  if (n < 3) return;
  // Tridiagonal system for the interior second derivatives (Thomas algorithm).
  const std::size_t k = n - 2;
  std::vector<double> diag(k), upper(k), rhs(k);
  for (std::size_t i = 0; i < k; ++i) {
    const double h0 = x_[i + 1] - x_[i];
    const double h1 = x_[i + 2] - x_[i + 1];
    diag[i] = (h0 + h1) / 3.0;
    upper[i] = h1 / 6.0;
    rhs[i] = (y_[i + 2] - y_[i + 1]) / h1 - (y_[i + 1] - y_[i]) / h0;
  }
  for (std::size_t i = 1; i < k; ++i) {
    const double lower = (x_[i + 1] - x_[i]) / 6.0;
    const double w = lower / diag[i - 1];
    diag[i] -= w * upper[i - 1];
    rhs[i] -= w * rhs[i - 1];
  }
  m_[k] = rhs[k - 1] / diag[k - 1];
  for (std::size_t i = k - 1; i-- > 0;) {
    m_[i + 1] = (rhs[i] - upper[i] * m_[i + 2]) / diag[i];
  }
}

std::size_t NaturalCubicSpline::piece(double t, int side) const {
  if (t < x_.front() || t > x_.back()) throw std::out_of_range("spline evaluated outside knots");
  auto it = side < 0 ? std::lower_bound(x_.begin(), x_.end(), t)
                     : std::upper_bound(x_.begin(), x_.end(), t);
  std::size_t i = static_cast<std::size_t>(it - x_.begin());
  i = i == 0 ? 0 : i - 1;
  return std::min(i, x_.size() - 2);
}

double NaturalCubicSpline::operator()(double t) const {
  const std::size_t i = piece(t, 1);
  const double h = x_[i + 1] - x_[i];
  const double a = (x_[i + 1] - t) / h;
  const double b = (t - x_[i]) / h;
  return a * y_[i] + b * y_[i + 1] +
         ((a * a * a - a) * m_[i] + (b * b * b - b) * m_[i + 1]) * h * h / 6.0;
}

double NaturalCubicSpline::second_derivative(double t, int side) const {
  const std::size_t i = piece(t, side);
  const double h = x_[i + 1] - x_[i];
  const double a = (x_[i + 1] - t) / h;
  const double b = (t - x_[i]) / h;
  return a * m_[i] + b * m_[i + 1];
}

double linear_interp(const std::vector<double>& x, const std::vector<double>& y, double t) {
  check_knots(x, y);
  if (t < x.front() || t > x.back()) throw std::out_of_range("linear interpolation outside knots");
  std::size_t i = static_cast<std::size_t>(std::upper_bound(x.begin(), x.end(), t) - x.begin());
  i = std::min(i == 0 ? 0 : i - 1, x.size() - 2);
  const double w = (t - x[i]) / (x[i + 1] - x[i]);
  return y[i] + w * (y[i + 1] - y[i]);
}

CompressorParams interpolate(const ParameterMap& map, const std::string& mode, double label) {
  return interpolate(map, mode, label, map.interp);
}

CompressorParams interpolate(const ParameterMap& map, const std::string& mode, double label,
                             InterpMethod method) {
  const std::vector<MapEntry> knots = map.mode_entries(mode);
  if (knots.empty()) throw std::invalid_argument("unknown mode '" + mode + "'");
  for (const MapEntry& e : knots) {
    if (e.label == label) return e.params;
  }
  if (knots.size() < 2) {
    throw std::invalid_argument("mode '" + mode + "' needs at least two entries to interpolate");
  }
  if (!(label >= knots.front().label && label <= knots.back().label)) {
    std::ostringstream msg;
    msg << "label " << label << " outside [" << knots.front().label << ", "
        << knots.back().label << "] for mode '" << mode << "'";
    throw std::out_of_range(msg.str());
  }

  std::vector<double> labels;
  std::vector<std::vector<double>> columns(5);
  for (const MapEntry& e : knots) {
    labels.push_back(e.label);
    columns[0].push_back(e.params.ct_db);
    columns[1].push_back(e.params.ratio);
    columns[2].push_back(std::log(e.params.attack_ms));
    columns[3].push_back(std::log(e.params.release_ms));
    columns[4].push_back(e.params.makeup_db);
  }
  double v[5];
  for (int k = 0; k < 5; ++k) {
    v[k] = method == InterpMethod::Linear ? linear_interp(labels, columns[k], label)
                                          : NaturalCubicSpline(labels, columns[k])(label);
  }
  const ParamBounds& b = map.bounds;
  return CompressorParams::from_times(v[0], std::clamp(v[1], b.ratio.lo, b.ratio.hi),
                                      std::clamp(std::exp(v[2]), b.attack_ms.lo, b.attack_ms.hi),
                                      std::clamp(std::exp(v[3]), b.release_ms.lo, b.release_ms.hi),
                                      v[4], map.sample_rate);
}

AudioBuffer render(const ParameterMap& map, const std::string& mode, double label,
                   const AudioBuffer& x) {
  if (x.sample_rate() != map.sample_rate) {
    throw std::invalid_argument("input rate " + std::to_string(x.sample_rate()) +
                                " Hz differs from the map rate " +
                                std::to_string(map.sample_rate) + " Hz");
  }
  return compress(x, interpolate(map, mode, label)).output;
}

InterpEvalResult interp_eval(const ParameterMap& map, const std::string& mode,
                             const std::vector<double>& held_out,
                             const std::vector<LabeledPair>& corpus) {
  InterpEvalResult out;
  if (held_out.empty()) return out;
  ParameterMap reduced = map;
  std::erase_if(reduced.entries, [&](const MapEntry& e) {
    return e.mode == mode && std::find(held_out.begin(), held_out.end(), e.label) != held_out.end();
  });
  if (reduced.mode_entries(mode).size() < 2) {
    throw std::invalid_argument("fewer than two knots remain after holding out labels");
  }
  std::size_t n_linear = 0, n_spline = 0;
  for (double label : held_out) {
    const auto pair = std::find_if(corpus.begin(), corpus.end(),
                                   [&](const LabeledPair& p) { return p.label == label; });
    if (pair == corpus.end()) {
      throw std::invalid_argument("held-out label " + format_real(label) + " not in corpus");
    }
    for (InterpMethod method : {InterpMethod::Linear, InterpMethod::CubicSpline}) {
      reduced.interp = method;
      InterpEvalRow row;
      row.label = label;
      row.method = method;
      row.params = interpolate(reduced, mode, label, method);
      const AudioBuffer y_hat = render(reduced, mode, label, pair->x);
      row.esr = esr_preemphasized(pair->y.samples(), y_hat.samples());
      if (method == InterpMethod::Linear) {
        out.mean_linear += row.esr;
        ++n_linear;
      } else {
        out.mean_spline += row.esr;
        ++n_spline;
      }
      out.rows.push_back(row);
    }
  }
  out.mean_linear /= static_cast<double>(n_linear);
  out.mean_spline /= static_cast<double>(n_spline);
  return out;
}

// ---------------------------------------------------------------------------

void write_map(std::ostream& out, const ParameterMap& map) {
  TextWriter w(out);
  w.comment("compressor parameter map")
      .field("format", std::string(kMapFormat))
      .field("version", kMapVersion)
      .field("sample_rate", static_cast<long long>(map.sample_rate))
      .field("interp", to_string(map.interp))
      .field("ratio_lo", map.bounds.ratio.lo)
      .field("ratio_hi", map.bounds.ratio.hi)
      .field("attack_ms_lo", map.bounds.attack_ms.lo)
      .field("attack_ms_hi", map.bounds.attack_ms.hi)
      .field("release_ms_lo", map.bounds.release_ms.lo)
      .field("release_ms_hi", map.bounds.release_ms.hi)
      .field("entries", static_cast<long long>(map.entries.size()));
  for (const MapEntry& e : map.entries) {
    w.section("entry")
        .field("label", e.label)
        .field("mode", e.mode)
        .field("ct_db", e.params.ct_db)
        .field("ratio", e.params.ratio)
        .field("attack_ms", e.params.attack_ms)
        .field("release_ms", e.params.release_ms)
        .field("makeup_db", e.params.makeup_db)
        .field("alpha_at", e.params.alpha_at)
        .field("alpha_rt", e.params.alpha_rt)
        .field("fit_loss", e.fit_loss)
        .field("fit_esr", e.fit_esr);
  }
  w.end();
}

ParameterMap read_map(std::istream& in, const std::string& source) {
  const TextDocument doc = parse_text(in, source);
  FieldReader header(doc.header, source);
  expect_format(header, kMapFormat, kMapVersion);
  ParameterMap map;
  map.sample_rate = static_cast<int>(header.integer("sample_rate"));
  try {
    map.interp = parse_interp_method(header.text("interp"));
  } catch (const std::invalid_argument& e) {
    header.fail("interp", e.what());
  }
  map.bounds.ratio = {header.real("ratio_lo"), header.real("ratio_hi")};
  map.bounds.attack_ms = {header.real("attack_ms_lo"), header.real("attack_ms_hi")};
  map.bounds.release_ms = {header.real("release_ms_lo"), header.real("release_ms_hi")};
  const long long count = header.integer("entries");
  header.finish();

  for (const TextSection& s : doc.sections) {
    if (s.name != "entry") {
      throw FormatError(source, s.line, "", "unexpected section [" + s.name + "]");
    }
    FieldReader r(s, source);
    MapEntry e;
    e.label = r.real("label");
    e.mode = r.text("mode");
    e.params.ct_db = r.real("ct_db");
    e.params.ratio = r.real("ratio");
    e.params.attack_ms = r.real("attack_ms");
    e.params.release_ms = r.real("release_ms");
    e.params.makeup_db = r.real("makeup_db");
    e.params.alpha_at = r.real("alpha_at");
    e.params.alpha_rt = r.real("alpha_rt");
    e.fit_loss = r.real("fit_loss");
    e.fit_esr = r.real("fit_esr");
    r.finish();
    map.entries.push_back(std::move(e));
  }
  if (count != static_cast<long long>(map.entries.size())) {
    throw FormatError(source, doc.header.line, "entries",
                      "header declares " + std::to_string(count) + " entries, file has " +
                          std::to_string(map.entries.size()));
  }
  try {
    map.normalize();
  } catch (const std::invalid_argument& e) {
    throw FormatError(source, 0, "", e.what());
  }
  return map;
}

void save_map(const std::filesystem::path& path, const ParameterMap& map) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  write_map(out, map);
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

ParameterMap load_map(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return read_map(in, path.string());
}

void write_csv(std::ostream& out, const ParameterMap& map) {
  out << "label,mode,ct_db,ratio,attack_ms,release_ms,makeup_db,fit_loss,fit_esr\n";
  for (const MapEntry& e : map.entries) {
    out << format_real(e.label) << ',' << e.mode << ',' << format_real(e.params.ct_db) << ','
        << format_real(e.params.ratio) << ',' << format_real(e.params.attack_ms) << ','
        << format_real(e.params.release_ms) << ',' << format_real(e.params.makeup_db) << ','
        << format_real(e.fit_loss) << ',' << format_real(e.fit_esr) << '\n';
  }
}

void export_csv(const std::filesystem::path& path, const ParameterMap& map) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  write_csv(out, map);
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

}  // namespace compfit
