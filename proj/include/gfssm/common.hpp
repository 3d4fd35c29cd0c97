#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace gfssm {

// Validation failure: a field has the wrong length or shape. The message
// names the offending field.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// A field holds a value that is structurally fine but not permitted by the
// operation (e.g. nonzero boundary taps where history is not representable).
class ValueError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// NaN or Inf, either in an input field or produced mid-scan. step() is the
// scan step at which the value appeared, or -1 for input validation.
class NumericError : public std::domain_error {
 public:
  explicit NumericError(const std::string& what, int step = -1)
      : std::domain_error(what), step_(step) {}
  int step() const noexcept { return step_; }

 private:
  int step_;
};

// Materialized-form request above the configured sequence-length cap.
class SizeLimitError : public std::length_error {
 public:
  using std::length_error::length_error;
};

// Bad experiment configuration (maps to CLI exit code 2).
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

template <typename Real>
bool all_finite(const std::vector<Real>& v) {
  for (Real e : v) {
    if (!std::isfinite(e)) return false;
  }
  return true;
}

// Checks a sequence-of-vectors field: outer length `seq_len`, every inner
// vector of length `dim`, all entries finite. `name` is used verbatim in the
// error message.
template <typename Real>
void check_vector_sequence(const std::string& name,
                           const std::vector<std::vector<Real>>& seq,
                           int seq_len, int dim) {
  if (static_cast<int>(seq.size()) != seq_len) {
    throw ShapeError(name + ": length " + std::to_string(seq.size()) +
                     ", expected " + std::to_string(seq_len));
  }
  for (int t = 0; t < seq_len; ++t) {
    if (static_cast<int>(seq[t].size()) != dim) {
      throw ShapeError(name + "[" + std::to_string(t) + "]: length " +
                       std::to_string(seq[t].size()) + ", expected " +
                       std::to_string(dim));
    }
    if (!all_finite(seq[t])) {
      throw NumericError(name + "[" + std::to_string(t) + "]: non-finite value");
    }
  }
}

// Fixed ascending-index dot product. All contractions in this project go
// through plain loops like this one so repeated runs are bit-identical.
template <typename Real>
Real dot(const std::vector<Real>& a, const std::vector<Real>& b) {
  Real acc = Real(0);
  for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
  return acc;
}

}  // namespace gfssm
