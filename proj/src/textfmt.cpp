#include "compfit/textfmt.hpp"

#include <cctype>
#include <charconv>
#include <cmath>
#include <istream>
#include <ostream>

namespace compfit {
namespace {

std::string trim(const std::string& s) {
  const auto begin = s.find_first_not_of(" \t\r");
  if (begin == std::string::npos) return {};
  const auto end = s.find_last_not_of(" \t\r");
  return s.substr(begin, end - begin + 1);
}

bool valid_key(const std::string& key) {
  if (key.empty()) return false;
  for (char c : key) {
    if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '_')) return false;
  }
  return true;
}

}  // namespace

FormatError::FormatError(const std::string& source, int line, const std::string& field,
                         const std::string& message)
    : std::runtime_error(source + ":" + std::to_string(line) +
                         (field.empty() ? "" : ": field '" + field + "'") + ": " + message),
      line_(line), field_(field) {}

TextDocument parse_text(std::istream& in, const std::string& source) {
  TextDocument doc;
  doc.source = source;
  TextSection* current = &doc.header;
  bool ended = false;
  int line_no = 0;
  std::string raw;
  while (std::getline(in, raw)) {
    ++line_no;
    const std::string line = trim(raw);
    if (line.empty() || line[0] == '#') continue;
    if (ended) throw FormatError(source, line_no, "", "content after [end]");
    if (line.front() == '[') {
      if (line.back() != ']') throw FormatError(source, line_no, "", "unterminated section header");
      const std::string name = trim(line.substr(1, line.size() - 2));
      if (!valid_key(name)) throw FormatError(source, line_no, "", "bad section name");
      if (name == "end") {
        ended = true;
        continue;
      }
      doc.sections.push_back({name, line_no, {}});
      current = &doc.sections.back();
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw FormatError(source, line_no, "", "expected 'key = value'");
    }
    TextField f{trim(line.substr(0, eq)), trim(line.substr(eq + 1)), line_no};
    if (!valid_key(f.key)) throw FormatError(source, line_no, f.key, "bad key");
    for (const TextField& other : current->fields) {
      if (other.key == f.key) throw FormatError(source, line_no, f.key, "duplicate field");
    }
    current->fields.push_back(std::move(f));
  }
  if (!ended) throw FormatError(source, line_no, "", "truncated file: missing [end]");
  return doc;
}

std::string format_real(double value) {
  if (std::isnan(value)) return "nan";
  if (std::isinf(value)) return value > 0 ? "inf" : "-inf";
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, value, std::chars_format::general, 17);
  return std::string(buf, res.ptr);
}

FieldReader::FieldReader(const TextSection& section, const std::string& source)
    : section_(section), source_(source) {}

bool FieldReader::has(const std::string& key) const {
  for (const TextField& f : section_.fields) {
    if (f.key == key) return true;
  }
  return false;
}

void FieldReader::fail(const std::string& key, const std::string& message) const {
  int line = section_.line;
  for (const TextField& f : section_.fields) {
    if (f.key == key) line = f.line;
  }
  throw FormatError(source_, line, key, message);
}

const TextField& FieldReader::find(const std::string& key) {
  for (const TextField& f : section_.fields) {
    if (f.key == key) {
      used_.insert(key);
      return f;
    }
  }
  const std::string where = section_.name.empty() ? "header" : "[" + section_.name + "]";
  throw FormatError(source_, section_.line, key, "missing in " + where);
}

std::string FieldReader::text(const std::string& key) { return find(key).value; }

double FieldReader::real(const std::string& key) {
  const TextField& f = find(key);
  if (f.value == "nan") return std::nan("");
  if (f.value == "inf") return HUGE_VAL;
  if (f.value == "-inf") return -HUGE_VAL;
  double v = 0.0;
  const char* end = f.value.data() + f.value.size();
  const auto [ptr, ec] = std::from_chars(f.value.data(), end, v);
  if (ec != std::errc() || ptr != end) {
    throw FormatError(source_, f.line, key, "not a number: '" + f.value + "'");
  }
  return v;
}

long long FieldReader::integer(const std::string& key) {
  const TextField& f = find(key);
  long long v = 0;
  const char* end = f.value.data() + f.value.size();
  const auto [ptr, ec] = std::from_chars(f.value.data(), end, v);
  if (ec != std::errc() || ptr != end) {
    throw FormatError(source_, f.line, key, "not an integer: '" + f.value + "'");
  }
  return v;
}

void FieldReader::finish() const {
  for (const TextField& f : section_.fields) {
    if (!used_.contains(f.key)) throw FormatError(source_, f.line, f.key, "unknown field");
  }
}

void expect_format(FieldReader& header, const std::string& format, long long version) {
  const std::string got = header.text("format");
  if (got != format) header.fail("format", "expected '" + format + "', got '" + got + "'");
  const long long v = header.integer("version");
  if (v != version) {
    header.fail("version", "unsupported version " + std::to_string(v) + " (expected " +
                               std::to_string(version) + ")");
  }
}

TextWriter& TextWriter::comment(const std::string& text) {
  out_ << "# " << text << '\n';
  return *this;
}

TextWriter& TextWriter::field(const std::string& key, const std::string& value) {
  out_ << key << " = " << value << '\n';
  return *this;
}

TextWriter& TextWriter::field(const std::string& key, double value) {
  return field(key, format_real(value));
}

TextWriter& TextWriter::field(const std::string& key, long long value) {
  return field(key, std::to_string(value));
}

TextWriter& TextWriter::section(const std::string& name) {
  out_ << "\n[" << name << "]\n";
  return *this;
}

void TextWriter::end() { out_ << "\n[end]\n"; }

}  // namespace compfit
