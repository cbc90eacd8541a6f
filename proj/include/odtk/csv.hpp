#pragma once

#include <cstddef>
#include <initializer_list>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <fmt/format.h>

#include "odtk/core.hpp"

namespace odtk::csv {

inline std::string quote(std::string_view field) {
  if (field.find_first_of(",\"\n\r") == std::string_view::npos)
    return std::string(field);
  std::string out = "\"";
  for (char c : field) {
    if (c == '"') out += '"';
    out += c;
  }
  out += '"';
  return out;
}

/// Shortest representation that round-trips; empty for a missing value.
inline std::string num(double v) { return fmt::format("{}", v); }
inline std::string num(std::optional<double> v) { return v ? num(*v) : std::string(); }

class Writer {
public:
  explicit Writer(std::initializer_list<std::string_view> header) {
    row(std::vector<std::string>(header.begin(), header.end()));
  }

  Writer &row(const std::vector<std::string> &fields) {
    for (std::size_t i = 0; i < fields.size(); ++i) {
      if (i) out_ += ',';
      out_ += quote(fields[i]);
    }
    out_ += '\n';
    return *this;
  }

  const std::string &str() const noexcept { return out_; }

private:
  std::string out_;
};

/// Parsed CSV: header plus rows, addressed by column name.
struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  std::size_t column(std::string_view name) const {
    for (std::size_t i = 0; i < header.size(); ++i)
      if (header[i] == name) return i;
    throw Error(ErrorKind::MalformedReport, fmt::format("missing column '{}'", name));
  }

  double number(std::size_t r, std::size_t c) const {
    const std::string &s = rows[r][c];
    try {
      std::size_t used = 0;
      const double v = std::stod(s, &used);
      if (used == s.size()) return v;
    } catch (const std::exception &) {
    }
    throw Error(ErrorKind::MalformedReport,
                fmt::format("row {} column '{}': not a number: '{}'", r + 1, header[c], s));
  }
};

inline Table parse(std::string_view text) {
  Table t;
  std::vector<std::string> record;
  std::string field;
  bool quoted = false, any = false;
  auto end_record = [&] {
    record.push_back(std::move(field));
    field.clear();
    if (t.header.empty())
      t.header = std::move(record);
    else
      t.rows.push_back(std::move(record));
    record.clear();
    any = false;
  };
  for (std::size_t i = 0; i < text.size(); ++i) {
    const char c = text[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < text.size() && text[i + 1] == '"') {
          field += '"';
          ++i;
        } else {
          quoted = false;
        }
      } else {
        field += c;
      }
      continue;
    }
    if (c == '"') {
      quoted = true;
      any = true;
    } else if (c == ',') {
      record.push_back(std::move(field));
      field.clear();
      any = true;
    } else if (c == '\n') {
      end_record();
    } else if (c != '\r') {
      field += c;
      any = true;
    }
  }
  if (quoted)
    throw Error(ErrorKind::MalformedReport, "unterminated quoted field");
  if (any || !field.empty()) end_record();
  if (t.header.empty())
    throw Error(ErrorKind::MalformedReport, "empty CSV");
  for (std::size_t r = 0; r < t.rows.size(); ++r)
    if (t.rows[r].size() != t.header.size())
      throw Error(ErrorKind::MalformedReport,
                  fmt::format("row {} has {} fields, header has {}", r + 1,
                              t.rows[r].size(), t.header.size()));
  return t;
}

} // namespace odtk::csv
