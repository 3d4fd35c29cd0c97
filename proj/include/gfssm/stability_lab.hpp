#pragma once

#include <cfloat>
#include <cmath>
#include <cstdint>
#include <vector>

#include "gfssm/common.hpp"
#include "gfssm/gfssm_kernel.hpp"
#include "gfssm/ssd_core.hpp"

namespace gfssm {

/// Entry statistics of one decay-mask variant, accumulated in log space so
/// the profiler keeps working in regimes where the products themselves would
/// underflow or overflow.
///
/// max_product_length is the longest chain of decay multiplications any
/// single state accumulates across a scan of length T: every factor index in
/// 1..T-1 hits the plain state (chain T-1), while grouping splits those
/// indices into residue classes and the longest class has ceil((T-1)/Q)
/// members.
struct LVariantStats {
  double log10_min_nonzero = 0.0;
  double log10_max = 0.0;
  double log10_dynamic_range = 0.0;
  long long max_product_length = 0;
  long long zero_entries = 0;
};

struct ProductProfile {
  int seq_len = 0;
  int group_count = 0;
  LVariantStats plain;
  LVariantStats grouped;
};

namespace detail {

// Profiles the tap-0 mask for the given modulus: entry (t, s) is the product
// of a_tau over tau in (s, t] with tau = s (mod modulus); modulus 1 gives the
// plain mask. Zero factors zero the entry; such entries are excluded from the
// min statistic and counted instead.
inline LVariantStats profile_mask(const std::vector<double>& decay,
                                  int modulus) {
  const int T = static_cast<int>(decay.size());
  LVariantStats stats;
  double log_min = 0.0;  // diagonal entries are 1 -> log10 = 0
  double log_max = 0.0;
  long long zeros = 0;

  for (int s = 0; s < T; ++s) {
    double log_acc = 0.0;
    int zero_factors = 0;
    for (int t = s; t < T; ++t) {
      if (t > s && (t % modulus) == (s % modulus)) {
        if (decay[t] == 0.0) {
          ++zero_factors;
        } else {
          log_acc += std::log10(std::fabs(decay[t]));
        }
      }
      if (zero_factors > 0) {
        ++zeros;
      } else {
        if (log_acc < log_min) log_min = log_acc;
        if (log_acc > log_max) log_max = log_acc;
      }
    }
  }

  stats.log10_min_nonzero = log_min;
  stats.log10_max = log_max;
  stats.log10_dynamic_range = log_max - log_min;
  stats.zero_entries = zeros;

  // Longest decay chain: the most populous residue class among indices
  // 1..T-1.
  std::vector<long long> class_count(modulus, 0);
  for (int tau = 1; tau < T; ++tau) ++class_count[tau % modulus];
  long long longest = 0;
  for (long long c : class_count) {
    if (c > longest) longest = c;
  }
  stats.max_product_length = longest;
  return stats;
}

}  // namespace detail

/// Profiles the plain mask against the grouped tap-0 mask (identity taps) for
/// the same decay sequence.
inline ProductProfile product_profile(const std::vector<double>& decay, int Q) {
  const int T = static_cast<int>(decay.size());
  if (T < 2) throw ShapeError("product_profile: seq_len must be >= 2");
  if (Q < 1) throw ShapeError("product_profile: group count must be >= 1");
  if (!all_finite(decay)) {
    throw NumericError("product_profile.decay: non-finite value");
  }

  ProductProfile out;
  out.seq_len = T;
  out.group_count = Q;
  out.plain = detail::profile_mask(decay, 1);
  out.grouped = detail::profile_mask(decay, Q);
  return out;
}

/// Output divergence between a single-precision and a double-precision run of
/// the same scan. A non-finite value in either run is a recorded finding, not
/// an error; max statistics cover the steps before the first non-finite one.
struct DivergenceTrace {
  double max_abs = 0.0;
  double max_rel = 0.0;
  std::vector<double> per_step_abs;
  std::vector<double> per_step_rel;
  int fp32_nonfinite_step = -1;
  int fp64_nonfinite_step = -1;
};

struct DivergenceReport {
  DivergenceTrace plain;    // scalar-decay scan on the base instance
  DivergenceTrace grouped;  // grouped scan on the full instance
};

namespace detail {

inline DivergenceTrace compare_outputs(
    const std::vector<std::vector<double>>& y64,
    const std::vector<std::vector<float>>& y32) {
  DivergenceTrace trace;
  const int T = static_cast<int>(y64.size());
  trace.per_step_abs.assign(T, 0.0);
  trace.per_step_rel.assign(T, 0.0);

  for (int t = 0; t < T; ++t) {
    double abs_t = 0.0;
    double denom_t = 0.0;
    bool finite32 = true;
    bool finite64 = true;
    for (std::size_t p = 0; p < y64[t].size(); ++p) {
      const double lo = static_cast<double>(y32[t][p]);
      const double hi = y64[t][p];
      if (!std::isfinite(lo)) finite32 = false;
      if (!std::isfinite(hi)) finite64 = false;
      const double d = std::fabs(hi - lo);
      if (d > abs_t || std::isnan(d)) abs_t = d;
      const double m = std::fabs(hi);
      if (m > denom_t) denom_t = m;
    }
    const double rel_t =
        abs_t == 0.0 ? 0.0 : abs_t / (denom_t > DBL_MIN ? denom_t : DBL_MIN);
    trace.per_step_abs[t] = abs_t;
    trace.per_step_rel[t] = rel_t;
    if (!finite32 && trace.fp32_nonfinite_step < 0) trace.fp32_nonfinite_step = t;
    if (!finite64 && trace.fp64_nonfinite_step < 0) trace.fp64_nonfinite_step = t;
    if (finite32 && finite64 && trace.fp32_nonfinite_step < 0 &&
        trace.fp64_nonfinite_step < 0) {
      if (abs_t > trace.max_abs) trace.max_abs = abs_t;
      if (rel_t > trace.max_rel) trace.max_rel = rel_t;
    }
  }
  return trace;
}

}  // namespace detail

/// Runs the plain and grouped scans once entirely in double and once entirely
/// in single precision (entrywise-cast parameters) and reports the output
/// divergence of each variant.
inline DivergenceReport precision_divergence(const GfssmInstance<double>& inst) {
  inst.validate();
  DivergenceReport report;

  const GfssmInstance<float> inst32 = to_single(inst);

  {
    const auto r64 = ssd_scan_recurrent(
        inst.base, Matrix<double>(inst.base.state_dim, inst.base.head_dim));
    const auto r32 = ssd_scan_recurrent(
        inst32.base, Matrix<float>(inst.base.state_dim, inst.base.head_dim));
    report.plain = detail::compare_outputs(r64.y, r32.y);
  }

  {
    ScanDiagnostics diag64;
    ScanDiagnostics diag32;
    const auto r64 = grouped_scan(
        inst,
        GroupedHiddenState<double>::zeros(inst.cfg.group_count,
                                          inst.base.state_dim,
                                          inst.base.head_dim),
        0, &diag64);
    const auto r32 = grouped_scan(
        inst32,
        GroupedHiddenState<float>::zeros(inst.cfg.group_count,
                                         inst.base.state_dim,
                                         inst.base.head_dim),
        0, &diag32);
    report.grouped = detail::compare_outputs(r64.y, r32.y);
  }
  return report;
}

}  // namespace gfssm
