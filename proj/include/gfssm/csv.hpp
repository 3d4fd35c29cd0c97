#pragma once

#include <cstdio>
#include <ostream>
#include <string>
#include <vector>

namespace gfssm {

// Minimal CSV writer with RFC-4180-style quoting: fields containing commas,
// quotes, or newlines are quoted and embedded quotes doubled. Numeric
// formatting uses %.17g so emitted doubles round-trip exactly.
class CsvWriter {
 public:
  explicit CsvWriter(std::ostream& os) : os_(os) {}

  void row(const std::vector<std::string>& fields) {
    for (std::size_t i = 0; i < fields.size(); ++i) {
      if (i > 0) os_ << ',';
      os_ << escape(fields[i]);
    }
    os_ << '\n';
  }

  static std::string field(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
  }

  static std::string field(long long v) { return std::to_string(v); }
  static std::string field(int v) { return std::to_string(v); }
  static std::string field(unsigned long long v) { return std::to_string(v); }

 private:
  static std::string escape(const std::string& s) {
    bool needs_quote = false;
    for (char c : s) {
      if (c == ',' || c == '"' || c == '\n' || c == '\r') {
        needs_quote = true;
        break;
      }
    }
    if (!needs_quote) return s;
    std::string out = "\"";
    for (char c : s) {
      if (c == '"') out += "\"\"";
      else out += c;
    }
    out += '"';
    return out;
  }

  std::ostream& os_;
};

}  // namespace gfssm
