#pragma once

#include <string>
#include <vector>

#include "gfssm/common.hpp"
#include "gfssm/matrix.hpp"

namespace gfssm {

inline constexpr int kDefaultMatrixFormCap = 8192;

/// One scalar-decay SSD problem instance with explicit per-step parameters.
///
/// The recurrence is
///   h_t = decay[t] * h_{t-1} + B[t] x[t]^T
///   y_t = C[t]^T h_t
/// with h of shape state_dim x head_dim. Multi-head models are independent
/// instances of this type.
template <typename Real>
struct SsdInstance {
  int seq_len = 0;    // T
  int state_dim = 0;  // N
  int head_dim = 0;   // P

  std::vector<Real> decay;            // a_t, length seq_len
  std::vector<std::vector<Real>> B;   // seq_len x state_dim
  std::vector<std::vector<Real>> C;   // seq_len x state_dim
  std::vector<std::vector<Real>> x;   // seq_len x head_dim

  // Streaming chunks may be empty; everything else requires seq_len >= 1.
  void validate(bool allow_empty = false) const {
    if (seq_len < (allow_empty ? 0 : 1)) {
      throw ShapeError("SsdInstance.seq_len: " + std::to_string(seq_len) +
                       (allow_empty ? ", expected >= 0" : ", expected >= 1"));
    }
    if (state_dim < 1) {
      throw ShapeError("SsdInstance.state_dim: " + std::to_string(state_dim) +
                       ", expected >= 1");
    }
    if (head_dim < 1) {
      throw ShapeError("SsdInstance.head_dim: " + std::to_string(head_dim) +
                       ", expected >= 1");
    }
    if (static_cast<int>(decay.size()) != seq_len) {
      throw ShapeError("SsdInstance.decay: length " +
                       std::to_string(decay.size()) + ", expected " +
                       std::to_string(seq_len));
    }
    if (!all_finite(decay)) {
      throw NumericError("SsdInstance.decay: non-finite value");
    }
    check_vector_sequence("SsdInstance.B", B, seq_len, state_dim);
    check_vector_sequence("SsdInstance.C", C, seq_len, state_dim);
    check_vector_sequence("SsdInstance.x", x, seq_len, head_dim);
  }
};

template <typename Real>
struct SsdScanResult {
  std::vector<std::vector<Real>> y;  // seq_len x head_dim
  Matrix<Real> h_final;              // state after the last step
};

/// Sequential left-to-right scan. The per-step state update and the output
/// contraction both run in fixed ascending order, so results are
/// bit-reproducible across runs.
template <typename Real>
SsdScanResult<Real> ssd_scan_recurrent(const SsdInstance<Real>& inst,
                                       const Matrix<Real>& h0) {
  inst.validate();
  if (h0.rows() != inst.state_dim || h0.cols() != inst.head_dim) {
    throw ShapeError("ssd_scan_recurrent.h0: " + std::to_string(h0.rows()) +
                     "x" + std::to_string(h0.cols()) + ", expected " +
                     std::to_string(inst.state_dim) + "x" +
                     std::to_string(inst.head_dim));
  }
  if (!h0.is_finite()) {
    throw NumericError("ssd_scan_recurrent.h0: non-finite value");
  }

  const int N = inst.state_dim;
  const int P = inst.head_dim;
  Matrix<Real> h = h0;
  SsdScanResult<Real> out;
  out.y.assign(inst.seq_len, std::vector<Real>(P, Real(0)));

  for (int t = 0; t < inst.seq_len; ++t) {
    const Real a = inst.decay[t];
    const std::vector<Real>& bt = inst.B[t];
    const std::vector<Real>& xt = inst.x[t];
    for (int n = 0; n < N; ++n) {
      for (int p = 0; p < P; ++p) {
        h(n, p) = a * h(n, p) + bt[n] * xt[p];
      }
    }
    const std::vector<Real>& ct = inst.C[t];
    std::vector<Real>& yt = out.y[t];
    for (int n = 0; n < N; ++n) {
      for (int p = 0; p < P; ++p) {
        yt[p] += ct[n] * h(n, p);
      }
    }
  }
  out.h_final = std::move(h);
  return out;
}

/// Lower-triangular cumulative-decay mask: L[t][s] = prod_{tau=s+1..t} a_tau,
/// unit diagonal, exact zeros above the diagonal. Every lower-triangular
/// submatrix with contiguous index ranges has rank <= 1.
template <typename Real>
Matrix<Real> build_L_plain(const std::vector<Real>& decay) {
  const int T = static_cast<int>(decay.size());
  if (T < 1) throw ShapeError("build_L_plain.decay: empty sequence");
  if (!all_finite(decay)) {
    throw NumericError("build_L_plain.decay: non-finite value");
  }

  Matrix<Real> L(T, T, Real(0));
  for (int t = 0; t < T; ++t) L(t, t) = Real(1);
  // Row recurrence L[t][s] = a_t * L[t-1][s] keeps factor order ascending.
  for (int t = 1; t < T; ++t) {
    for (int s = 0; s < t; ++s) {
      L(t, s) = decay[t] * L(t - 1, s);
    }
  }
  return L;
}

/// O(T^2) materialized form: M[t][s] = L[t][s] * (C_t . B_s), y = M x.
/// This is the equivalence oracle for the scan, not a fast path; `cap` bounds
/// the T x T allocation.
template <typename Real>
std::vector<std::vector<Real>> ssd_matrix_form(
    const SsdInstance<Real>& inst, int cap = kDefaultMatrixFormCap) {
  inst.validate();
  if (inst.seq_len > cap) {
    throw SizeLimitError("ssd_matrix_form: seq_len " +
                         std::to_string(inst.seq_len) + " exceeds cap " +
                         std::to_string(cap));
  }

  const int T = inst.seq_len;
  const int P = inst.head_dim;
  const Matrix<Real> L = build_L_plain(inst.decay);

  Matrix<Real> M(T, T, Real(0));
  for (int t = 0; t < T; ++t) {
    for (int s = 0; s <= t; ++s) {
      M(t, s) = L(t, s) * dot(inst.C[t], inst.B[s]);
    }
  }

  std::vector<std::vector<Real>> y(T, std::vector<Real>(P, Real(0)));
  for (int t = 0; t < T; ++t) {
    for (int s = 0; s <= t; ++s) {
      const Real m = M(t, s);
      for (int p = 0; p < P; ++p) {
        y[t][p] += m * inst.x[s][p];
      }
    }
  }
  return y;
}

// Casts an instance to single precision entry by entry; used by the
// precision-divergence experiments to build matched parameter sets.
template <typename Real>
SsdInstance<float> to_single(const SsdInstance<Real>& inst) {
  SsdInstance<float> out;
  out.seq_len = inst.seq_len;
  out.state_dim = inst.state_dim;
  out.head_dim = inst.head_dim;
  out.decay.assign(inst.decay.begin(), inst.decay.end());
  auto cast_seq = [](const std::vector<std::vector<Real>>& src) {
    std::vector<std::vector<float>> dst(src.size());
    for (std::size_t i = 0; i < src.size(); ++i) {
      dst[i].assign(src[i].begin(), src[i].end());
    }
    return dst;
  };
  out.B = cast_seq(inst.B);
  out.C = cast_seq(inst.C);
  out.x = cast_seq(inst.x);
  return out;
}

}  // namespace gfssm
