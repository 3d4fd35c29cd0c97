#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "gfssm/gfssm_kernel.hpp"
#include "gfssm/instance_gen.hpp"
#include "gfssm/rng.hpp"

namespace gfssm {

struct BenchPoint {
  std::string path;  // "scan" or "matrix"
  int seq_len = 0;
  long long reps = 0;
  double sec_per_call = 0.0;
};

struct BenchResult {
  std::vector<BenchPoint> points;
  double scan_exponent = 0.0;
  double matrix_exponent = 0.0;
};

namespace detail {

// Repeats fn until the sample lasts at least min_sec, then takes the best of
// three samples. The checksum keeps the calls observable.
template <typename Fn>
BenchPoint time_path(const std::string& name, int seq_len, Fn&& fn,
                     double min_sec = 0.05) {
  using clock = std::chrono::steady_clock;
  volatile double sink = 0.0;

  long long reps = 1;
  for (;;) {
    const auto begin = clock::now();
    for (long long r = 0; r < reps; ++r) sink = sink + fn();
    const double sec = std::chrono::duration<double>(clock::now() - begin).count();
    if (sec >= min_sec || reps > (1LL << 30)) break;
    reps = sec <= 0.0 ? reps * 8
                      : static_cast<long long>(reps * (min_sec / sec) + 1);
  }

  double best = 0.0;
  for (int sample = 0; sample < 3; ++sample) {
    const auto begin = clock::now();
    for (long long r = 0; r < reps; ++r) sink = sink + fn();
    const double sec = std::chrono::duration<double>(clock::now() - begin).count();
    const double per_call = sec / static_cast<double>(reps);
    if (sample == 0 || per_call < best) best = per_call;
  }
  (void)sink;
  return BenchPoint{name, seq_len, reps, best};
}

inline double fit_exponent(const std::vector<BenchPoint>& points,
                           const std::string& path) {
  std::vector<double> xs, ys;
  for (const BenchPoint& p : points) {
    if (p.path != path) continue;
    xs.push_back(std::log(static_cast<double>(p.seq_len)));
    ys.push_back(std::log(p.sec_per_call));
  }
  const std::size_t m = xs.size();
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    mx += xs[i];
    my += ys[i];
  }
  mx /= static_cast<double>(m);
  my /= static_cast<double>(m);
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    num += (xs[i] - mx) * (ys[i] - my);
    den += (xs[i] - mx) * (xs[i] - mx);
  }
  return num / den;
}

}  // namespace detail

/// Wall-time comparison of the linear scan against the quadratic
/// materialized form across sequence lengths, with log-log slope fits.
inline BenchResult run_bench(const std::vector<int>& seq_lens, int Q, int n,
                             int N, int P, std::uint64_t seed) {
  if (seq_lens.size() < 2) {
    throw ConfigError("run_bench: need at least two sequence lengths");
  }
  BenchResult result;
  for (std::size_t i = 0; i < seq_lens.size(); ++i) {
    const int T = seq_lens[i];
    if (T < 1) throw ConfigError("run_bench: seq_len must be >= 1");
    Rng rng(seed + i);
    InstanceDims d;
    d.seq_len = T;
    d.state_dim = N;
    d.head_dim = P;
    d.group_count = Q;
    d.fir_order = n;
    const GfssmInstance<double> inst = make_random_instance(rng, d);
    const auto h0 = GroupedHiddenState<double>::zeros(Q, N, P);

    result.points.push_back(detail::time_path("scan", T, [&]() {
      const auto r = grouped_scan(inst, h0);
      return r.y.back()[0];
    }));
    result.points.push_back(detail::time_path("matrix", T, [&]() {
      const auto y = gfssm_matrix_form(inst);
      return y.back()[0];
    }));
  }
  result.scan_exponent = detail::fit_exponent(result.points, "scan");
  result.matrix_exponent = detail::fit_exponent(result.points, "matrix");
  return result;
}

}  // namespace gfssm
