#pragma once

#include <istream>
#include <string>
#include <string_view>
#include <vector>

#include "emharness/errors.hpp"

namespace emh::csv {

using Row = std::vector<std::string>;

/// RFC 4180 reader: quoted fields may contain separators, doubled quotes
/// and line breaks. Accepts both LF and CRLF line endings.
class Reader {
 public:
  explicit Reader(std::istream& in, char sep = ',') : in_(in), sep_(sep) {}

  /// Reads the next record. Returns false at end of input.
  bool next(Row& row) {
    row.clear();
    int c = in_.get();
    if (c == EOF) return false;
    ++line_;
    record_line_ = line_;
    std::string field;
    bool quoted = false;
    bool field_started = false;
    while (true) {
      if (c == EOF) {
        if (quoted) throw IngestionError("unterminated quoted field starting on line " + std::to_string(record_line_));
        row.push_back(std::move(field));
        return true;
      }
      char ch = static_cast<char>(c);
      if (quoted) {
        if (ch == '"') {
          if (in_.peek() == '"') {
            field += '"';
            in_.get();
          } else {
            quoted = false;
          }
        } else {
          if (ch == '\n') ++line_;
          field += ch;
        }
      } else if (ch == '"' && !field_started) {
        quoted = true;
        field_started = true;
      } else if (ch == sep_) {
        row.push_back(std::move(field));
        field.clear();
        field_started = false;
      } else if (ch == '\r' && in_.peek() == '\n') {
        // swallowed, LF ends the record
      } else if (ch == '\n') {
        row.push_back(std::move(field));
        return true;
      } else {
        field += ch;
        field_started = true;
      }
      c = in_.get();
    }
  }

  /// Physical line on which the last record returned by next() started.
  std::size_t line() const { return record_line_; }

 private:
  std::istream& in_;
  char sep_;
  std::size_t line_ = 0;
  std::size_t record_line_ = 0;
};

inline std::string quote(std::string_view field, char sep = ',') {
  bool needs = field.find_first_of(std::string{sep, '"', '\n', '\r'}) != std::string_view::npos ||
               (!field.empty() && (field.front() == ' ' || field.back() == ' '));
  if (!needs) return std::string(field);
  std::string out = "\"";
  for (char c : field) {
    if (c == '"') out += '"';
    out += c;
  }
  out += '"';
  return out;
}

inline std::string join(const Row& row, char sep = ',') {
  std::string out;
  for (std::size_t i = 0; i < row.size(); ++i) {
    if (i) out += sep;
    out += quote(row[i], sep);
  }
  return out;
}

}  // namespace emh::csv
