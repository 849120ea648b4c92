#pragma once

// Line-oriented key = value text used by parameter maps and corpus manifests.
//
//   # comment
//   format = compfit-map
//   version = 1
//   key = value
//   [entry]
//   key = value
//   [end]
//
// Keys before the first section form the header. The file must finish with an
// [end] section so that truncation is detected. Reals are written with 17
// significant digits and read back exactly.

#include <iosfwd>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

namespace compfit {

class FormatError : public std::runtime_error {
 public:
  FormatError(const std::string& source, int line, const std::string& field,
              const std::string& message);
  int line() const { return line_; }
  const std::string& field() const { return field_; }

 private:
  int line_;
  std::string field_;
};

struct TextField {
  std::string key;
  std::string value;
  int line = 0;
};

struct TextSection {
  std::string name;  // empty for the header
  int line = 0;
  std::vector<TextField> fields;
};

struct TextDocument {
  std::string source;
  TextSection header;
  std::vector<TextSection> sections;  // excluding [end]
};

TextDocument parse_text(std::istream& in, const std::string& source);

/// 17 significant digits; inf/nan spelled as such.
std::string format_real(double value);

/// Typed, strict access to one section. finish() rejects any key that was not
/// read.
class FieldReader {
 public:
  FieldReader(const TextSection& section, const std::string& source);

  std::string text(const std::string& key);
  double real(const std::string& key);
  long long integer(const std::string& key);
  bool has(const std::string& key) const;
  void finish() const;
  [[noreturn]] void fail(const std::string& key, const std::string& message) const;

 private:
  const TextField& find(const std::string& key);

  const TextSection& section_;
  const std::string& source_;
  std::set<std::string> used_;
};

/// Checks `format` and `version` in the header (and consumes them).
void expect_format(FieldReader& header, const std::string& format, long long version);

class TextWriter {
 public:
  explicit TextWriter(std::ostream& out) : out_(out) {}
  TextWriter& comment(const std::string& text);
  TextWriter& field(const std::string& key, const std::string& value);
  TextWriter& field(const std::string& key, double value);
  TextWriter& field(const std::string& key, long long value);
  TextWriter& section(const std::string& name);
  void end();

 private:
  std::ostream& out_;
};

}  // namespace compfit
