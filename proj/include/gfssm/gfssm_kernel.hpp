#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "gfssm/common.hpp"
#include "gfssm/matrix.hpp"
#include "gfssm/ssd_core.hpp"

namespace gfssm {

/// Learnable FIR taps. taps[j] weights the input term j steps back; the
/// default initialization [1, 0, ..., 0] makes the filter an identity so a
/// fresh model starts exactly at the plain-SSD behaviour. A documented
/// alternative is uniform 1/n.
template <typename Real>
struct FirCoefficients {
  std::vector<Real> taps;

  int order() const noexcept { return static_cast<int>(taps.size()); }

  static FirCoefficients identity_init(int order) {
    FirCoefficients f;
    f.taps.assign(order, Real(0));
    f.taps[0] = Real(1);
    return f;
  }

  static FirCoefficients uniform_init(int order) {
    FirCoefficients f;
    f.taps.assign(order, Real(1) / Real(order));
    return f;
  }
};

// Group count and FIR order are independent knobs; n = Q is the common
// configuration but nothing below requires it.
struct GroupConfig {
  int group_count = 4;  // Q
  int fir_order = 4;    // n
};

/// Q interleaved hidden states; group i is updated only at steps t with
/// (t + schedule offset) mod Q == i.
template <typename Real>
struct GroupedHiddenState {
  std::vector<Matrix<Real>> groups;

  static GroupedHiddenState zeros(int group_count, int state_dim,
                                  int head_dim) {
    GroupedHiddenState s;
    s.groups.assign(group_count, Matrix<Real>(state_dim, head_dim));
    return s;
  }

  void validate(int group_count, int state_dim, int head_dim,
                const std::string& name) const {
    if (static_cast<int>(groups.size()) != group_count) {
      throw ShapeError(name + ": " + std::to_string(groups.size()) +
                       " groups, expected " + std::to_string(group_count));
    }
    for (std::size_t i = 0; i < groups.size(); ++i) {
      if (groups[i].rows() != state_dim || groups[i].cols() != head_dim) {
        throw ShapeError(name + "[" + std::to_string(i) + "]: " +
                         std::to_string(groups[i].rows()) + "x" +
                         std::to_string(groups[i].cols()) + ", expected " +
                         std::to_string(state_dim) + "x" +
                         std::to_string(head_dim));
      }
      if (!groups[i].is_finite()) {
        throw NumericError(name + "[" + std::to_string(i) + "]: non-finite value");
      }
    }
  }
};

/// A grouped FIR instance: base SSD parameters plus group/filter
/// configuration and the boundary tap values.
///
/// prompt_taps[m-1] stands in for the product B_{-m} x_{-m}^T at negative
/// index -m (most recent history first). The bare kernel uses all-zero taps;
/// streaming continuation supplies cached ones.
template <typename Real>
struct GfssmInstance {
  SsdInstance<Real> base;
  GroupConfig cfg;
  FirCoefficients<Real> fir;
  std::vector<Matrix<Real>> prompt_taps;  // fir_order - 1 entries

  void validate(bool allow_empty = false) const {
    base.validate(allow_empty);
    if (cfg.group_count < 1) {
      throw ShapeError("GfssmInstance.cfg.group_count: " +
                       std::to_string(cfg.group_count) + ", expected >= 1");
    }
    if (cfg.fir_order < 1) {
      throw ShapeError("GfssmInstance.cfg.fir_order: " +
                       std::to_string(cfg.fir_order) + ", expected >= 1");
    }
    if (fir.order() != cfg.fir_order) {
      throw ShapeError("GfssmInstance.fir.taps: length " +
                       std::to_string(fir.order()) + ", expected " +
                       std::to_string(cfg.fir_order));
    }
    if (!all_finite(fir.taps)) {
      throw NumericError("GfssmInstance.fir.taps: non-finite value");
    }
    if (static_cast<int>(prompt_taps.size()) != cfg.fir_order - 1) {
      throw ShapeError("GfssmInstance.prompt_taps: length " +
                       std::to_string(prompt_taps.size()) + ", expected " +
                       std::to_string(cfg.fir_order - 1));
    }
    for (std::size_t m = 0; m < prompt_taps.size(); ++m) {
      if (prompt_taps[m].rows() != base.state_dim ||
          prompt_taps[m].cols() != base.head_dim) {
        throw ShapeError("GfssmInstance.prompt_taps[" + std::to_string(m) +
                         "]: " + std::to_string(prompt_taps[m].rows()) + "x" +
                         std::to_string(prompt_taps[m].cols()) + ", expected " +
                         std::to_string(base.state_dim) + "x" +
                         std::to_string(base.head_dim));
      }
      if (!prompt_taps[m].is_finite()) {
        throw NumericError("GfssmInstance.prompt_taps[" + std::to_string(m) +
                           "]: non-finite value");
      }
    }
  }

  bool prompt_taps_zero() const {
    for (const Matrix<Real>& m : prompt_taps) {
      if (!m.is_zero()) return false;
    }
    return true;
  }
};

// Optional scan instrumentation. When passed, non-finite intermediates are
// recorded instead of thrown, and the per-step group schedule can be captured.
struct ScanDiagnostics {
  int first_nonfinite_step = -1;
  std::vector<int>* updated_groups = nullptr;
};

namespace detail {

template <typename Real>
std::vector<Matrix<Real>> input_products(const SsdInstance<Real>& base) {
  std::vector<Matrix<Real>> bx(base.seq_len,
                               Matrix<Real>(base.state_dim, base.head_dim));
  for (int t = 0; t < base.seq_len; ++t) {
    for (int n = 0; n < base.state_dim; ++n) {
      for (int p = 0; p < base.head_dim; ++p) {
        bx[t](n, p) = base.B[t][n] * base.x[t][p];
      }
    }
  }
  return bx;
}

// Resolves the input-product term at local index `idx`; negative indices read
// the boundary taps (index -m -> taps[m-1]).
template <typename Real>
const Matrix<Real>& product_at(const std::vector<Matrix<Real>>& bx,
                               const std::vector<Matrix<Real>>& taps,
                               int idx) {
  return idx >= 0 ? bx[idx] : taps[-idx - 1];
}

}  // namespace detail

/// Filtered input sequence: s_t = sum_j taps[j] * (B_{t-j} x_{t-j}^T), with
/// negative indices resolved from prompt_taps. The filter reaches back at
/// most fir_order - 1 steps, exactly the stored tap count.
template <typename Real>
std::vector<Matrix<Real>> fir_filter(const GfssmInstance<Real>& inst) {
  inst.validate();
  const std::vector<Matrix<Real>> bx = detail::input_products(inst.base);
  const int T = inst.base.seq_len;
  const int n = inst.cfg.fir_order;

  std::vector<Matrix<Real>> s(T,
                              Matrix<Real>(inst.base.state_dim, inst.base.head_dim));
  for (int t = 0; t < T; ++t) {
    for (int j = 0; j < n; ++j) {
      const Matrix<Real>& term =
          detail::product_at(bx, inst.prompt_taps, t - j);
      const Real k = inst.fir.taps[j];
      for (std::size_t i = 0; i < s[t].flat().size(); ++i) {
        s[t].flat()[i] += k * term.flat()[i];
      }
    }
  }
  return s;
}

template <typename Real>
struct GroupedScanResult {
  std::vector<std::vector<Real>> y;   // seq_len x head_dim
  GroupedHiddenState<Real> h_final;
};

/// The grouped recurrence. At step t only group (t + t_offset) mod Q is
/// updated, as h^i <- a_t h^i + s_t; all groups contribute to the output
/// through y_t = C_t^T sum_i h^i.
///
/// t_offset is the global index of the instance's first step, so the group
/// schedule stays aligned across chunk boundaries. The group sum is
/// recomputed from scratch each step (ascending i) rather than maintained
/// incrementally; determinism requires the fixed summation order.
template <typename Real>
GroupedScanResult<Real> grouped_scan(const GfssmInstance<Real>& inst,
                                     const GroupedHiddenState<Real>& h_init,
                                     std::int64_t t_offset = 0,
                                     ScanDiagnostics* diag = nullptr) {
  inst.validate(/*allow_empty=*/true);
  h_init.validate(inst.cfg.group_count, inst.base.state_dim,
                  inst.base.head_dim, "grouped_scan.h_init");
  if (t_offset < 0) {
    throw ShapeError("grouped_scan.t_offset: " + std::to_string(t_offset) +
                     ", expected >= 0");
  }

  const int T = inst.base.seq_len;
  const int N = inst.base.state_dim;
  const int P = inst.base.head_dim;
  const int Q = inst.cfg.group_count;
  const std::vector<Matrix<Real>> s = fir_filter(inst);

  GroupedScanResult<Real> out;
  out.h_final = h_init;
  out.y.assign(T, std::vector<Real>(P, Real(0)));
  std::vector<Matrix<Real>>& h = out.h_final.groups;
  Matrix<Real> h_sum(N, P);

  for (int t = 0; t < T; ++t) {
    const int g = static_cast<int>((t_offset + t) % Q);
    if (diag != nullptr && diag->updated_groups != nullptr) {
      diag->updated_groups->push_back(g);
    }

    const Real a = inst.base.decay[t];
    Matrix<Real>& hg = h[g];
    for (std::size_t i = 0; i < hg.flat().size(); ++i) {
      hg.flat()[i] = a * hg.flat()[i] + s[t].flat()[i];
    }

    h_sum = h[0];
    for (int i = 1; i < Q; ++i) {
      for (std::size_t e = 0; e < h_sum.flat().size(); ++e) {
        h_sum.flat()[e] += h[i].flat()[e];
      }
    }

    const std::vector<Real>& ct = inst.base.C[t];
    std::vector<Real>& yt = out.y[t];
    for (int n = 0; n < N; ++n) {
      for (int p = 0; p < P; ++p) {
        yt[p] += ct[n] * h_sum(n, p);
      }
    }

    const bool finite = hg.is_finite() && all_finite(yt);
    if (!finite) {
      if (diag != nullptr) {
        if (diag->first_nonfinite_step < 0) diag->first_nonfinite_step = t;
      } else {
        throw NumericError(
            "grouped_scan: non-finite state or output at step " +
                std::to_string(t),
            t);
      }
    }
  }
  return out;
}

/// Per-tap decay mask, generalized to a schedule offset and to `neg_cols`
/// extra columns for inputs that precede the instance (column c stands for
/// local index c - neg_cols).
///
/// Entry [t][s] is the decay product accumulated by input s entering through
/// tap j: the input is deposited into group (s + j + t_offset) mod Q at step
/// s + j and then multiplied by a_tau at every later step tau on which that
/// group updates, up to t. Deposits scheduled before step 0 belong to cached
/// state, not to this matrix, so those entries are zero.
template <typename Real>
Matrix<Real> build_L_group_ext(const std::vector<Real>& decay, int Q, int j,
                               std::int64_t t_offset, int neg_cols) {
  const int T = static_cast<int>(decay.size());
  if (Q < 1) throw ShapeError("build_L_group_ext.Q: expected >= 1");
  if (j < 0) throw ShapeError("build_L_group_ext.j: expected >= 0");
  if (neg_cols < 0) throw ShapeError("build_L_group_ext.neg_cols: expected >= 0");
  if (!all_finite(decay)) {
    throw NumericError("build_L_group_ext.decay: non-finite value");
  }

  Matrix<Real> L(T, neg_cols + T, Real(0));
  for (int c = 0; c < neg_cols + T; ++c) {
    const int s = c - neg_cols;
    const int deposit = s + j;
    if (deposit < 0 || deposit >= T) continue;
    const int group = static_cast<int>((t_offset + deposit) % Q);
    Real prod = Real(1);
    L(deposit, c) = prod;
    for (int t = deposit + 1; t < T; ++t) {
      if (static_cast<int>((t_offset + t) % Q) == group) {
        prod = prod * decay[t];
      }
      L(t, c) = prod;
    }
  }
  return L;
}

/// Tap-j decay mask: L_j[t][s] = prod of a_tau over tau in (s+j, t] with
/// tau = (s+j) mod Q, for t >= s+j, else zero. L_0 with Q = 1 is the plain
/// cumulative-decay mask.
template <typename Real>
Matrix<Real> build_L_group(const std::vector<Real>& decay, int Q, int j) {
  if (static_cast<int>(decay.size()) < 1) {
    throw ShapeError("build_L_group.decay: empty sequence");
  }
  return build_L_group_ext(decay, Q, j, 0, 0);
}

/// Combined mask L = sum_j taps[j] * L_j, accumulated column by column with
/// one running product per tap (equivalent to summing the per-tap masks, but
/// in a single pass). The closed form of each L_j is a reconstruction from
/// the recurrence; the grouped scan is its ground truth, and the two are held
/// together by the cross-form equivalence tests.
template <typename Real>
Matrix<Real> build_L_gfssm(const std::vector<Real>& decay,
                           const GroupConfig& cfg,
                           const FirCoefficients<Real>& fir) {
  if (static_cast<int>(decay.size()) < 1) {
    throw ShapeError("build_L_gfssm.decay: empty sequence");
  }
  if (cfg.group_count < 1) {
    throw ShapeError("build_L_gfssm.group_count: expected >= 1");
  }
  if (fir.order() != cfg.fir_order || fir.order() < 1) {
    throw ShapeError("build_L_gfssm.fir: tap count " +
                     std::to_string(fir.order()) + ", expected " +
                     std::to_string(cfg.fir_order));
  }
  if (!all_finite(decay)) {
    throw NumericError("build_L_gfssm.decay: non-finite value");
  }

  const int T = static_cast<int>(decay.size());
  const int Q = cfg.group_count;
  const int n = fir.order();
  Matrix<Real> L(T, T, Real(0));
  std::vector<Real> prod(n);
  for (int c = 0; c < T; ++c) {
    // Tap j deposits at row c + j and then follows group (c + j) mod Q.
    for (int t = c; t < T; ++t) {
      for (int j = 0; j < n; ++j) {
        const int deposit = c + j;
        if (deposit > t) break;
        if (deposit == t) {
          prod[j] = Real(1);
        } else if (t % Q == deposit % Q) {
          prod[j] = prod[j] * decay[t];
        }
      }
      Real acc = Real(0);
      for (int j = 0; j < n && c + j <= t; ++j) acc += fir.taps[j] * prod[j];
      L(t, c) = acc;
    }
  }
  return L;
}

/// O(T^2) materialized form of the grouped kernel, y = (L o C^T B) x with the
/// combined mask. Requires all-zero prompt_taps; history that predates the
/// instance is only representable in the streaming formulation.
template <typename Real>
std::vector<std::vector<Real>> gfssm_matrix_form(
    const GfssmInstance<Real>& inst, int cap = kDefaultMatrixFormCap) {
  inst.validate();
  if (!inst.prompt_taps_zero()) {
    throw ValueError(
        "gfssm_matrix_form: prompt_taps must be all zero; nonzero history "
        "requires the streaming continuation form");
  }
  if (inst.base.seq_len > cap) {
    throw SizeLimitError("gfssm_matrix_form: seq_len " +
                         std::to_string(inst.base.seq_len) + " exceeds cap " +
                         std::to_string(cap));
  }

  const int T = inst.base.seq_len;
  const int P = inst.base.head_dim;
  const Matrix<Real> L = build_L_gfssm(inst.base.decay, inst.cfg, inst.fir);

  std::vector<std::vector<Real>> y(T, std::vector<Real>(P, Real(0)));
  for (int t = 0; t < T; ++t) {
    for (int s = 0; s <= t; ++s) {
      const Real m = L(t, s) * dot(inst.base.C[t], inst.base.B[s]);
      for (int p = 0; p < P; ++p) {
        y[t][p] += m * inst.base.x[s][p];
      }
    }
  }
  return y;
}

template <typename Real>
GfssmInstance<float> to_single(const GfssmInstance<Real>& inst) {
  GfssmInstance<float> out;
  out.base = to_single(inst.base);
  out.cfg = inst.cfg;
  out.fir.taps.assign(inst.fir.taps.begin(), inst.fir.taps.end());
  out.prompt_taps.reserve(inst.prompt_taps.size());
  for (const Matrix<Real>& m : inst.prompt_taps) {
    out.prompt_taps.push_back(to_single(m));
  }
  return out;
}

}  // namespace gfssm
