#pragma once

#include <bit>
#include <cstdint>
#include <fstream>
#include <istream>
#include <ostream>
#include <string>
#include <vector>

#include "gfssm/common.hpp"
#include "gfssm/gfssm_kernel.hpp"
#include "gfssm/matrix.hpp"

namespace gfssm {

/// Q learnable stand-in tokens for the positions before the real sequence,
/// together with the input projections used at those positions. They warm up
/// the group states and provide the FIR boundary history for the first real
/// steps.
template <typename Real>
struct PromptBank {
  std::vector<std::vector<Real>> prompts;   // Q x head_dim
  std::vector<std::vector<Real>> prompt_B;  // Q x state_dim

  static PromptBank zeros(int group_count, int state_dim, int head_dim) {
    PromptBank b;
    b.prompts.assign(group_count, std::vector<Real>(head_dim, Real(0)));
    b.prompt_B.assign(group_count, std::vector<Real>(state_dim, Real(0)));
    return b;
  }

  void validate(int group_count, int state_dim, int head_dim) const {
    check_vector_sequence("PromptBank.prompts", prompts, group_count, head_dim);
    check_vector_sequence("PromptBank.prompt_B", prompt_B, group_count,
                          state_dim);
  }
};

/// Everything needed to continue a sequence exactly: the grouped states at
/// the boundary, the trailing fir_order - 1 input products for taps that
/// cross it, and the global index of the next step (which fixes the group
/// schedule).
template <typename Real>
struct ChunkCache {
  GroupedHiddenState<Real> h_cached;
  std::vector<Matrix<Real>> tap_cache;  // [m-1] = B x^T at global step t_offset - m
  std::int64_t t_offset = 0;
};

/// T x Q carry matrix: entries[t][i] is the decay product that propagates
/// cached group-i state into step t. Row t multiplies group i by a_tau for
/// every tau <= t on which group i updates; groups not yet touched carry
/// weight 1 (the empty product).
template <typename Real>
struct PropagationMatrix {
  Matrix<Real> entries;
};

template <typename Real>
PropagationMatrix<Real> build_P(const std::vector<Real>& decay, int Q,
                                std::int64_t t_offset = 0) {
  const int T = static_cast<int>(decay.size());
  if (T < 1) throw ShapeError("build_P.decay: empty sequence");
  if (Q < 1) throw ShapeError("build_P.Q: expected >= 1");
  if (t_offset < 0) throw ShapeError("build_P.t_offset: expected >= 0");
  if (!all_finite(decay)) throw NumericError("build_P.decay: non-finite value");

  PropagationMatrix<Real> out;
  out.entries = Matrix<Real>(T, Q, Real(0));
  std::vector<Real> running(Q, Real(1));
  for (int t = 0; t < T; ++t) {
    const int g = static_cast<int>((t_offset + t) % Q);
    running[g] = running[g] * decay[t];
    for (int i = 0; i < Q; ++i) out.entries(t, i) = running[i];
  }
  return out;
}

template <typename Real>
struct StreamStep {
  std::vector<std::vector<Real>> y;  // outputs for the real positions only
  ChunkCache<Real> cache;
};

namespace detail {

// Trailing input products after a chunk: new tap m covers global index
// next_offset - m, read from the chunk when that index falls inside it and
// from the previous cache otherwise (short chunks).
template <typename Real>
std::vector<Matrix<Real>> collect_taps(const SsdInstance<Real>& chunk,
                                       const std::vector<Matrix<Real>>& old_taps,
                                       int fir_order, int state_dim,
                                       int head_dim) {
  std::vector<Matrix<Real>> taps;
  taps.reserve(fir_order - 1);
  for (int m = 1; m <= fir_order - 1; ++m) {
    const int idx = chunk.seq_len - m;
    if (idx >= 0) {
      Matrix<Real> prod(state_dim, head_dim);
      for (int n = 0; n < state_dim; ++n) {
        for (int p = 0; p < head_dim; ++p) {
          prod(n, p) = chunk.B[idx][n] * chunk.x[idx][p];
        }
      }
      taps.push_back(std::move(prod));
    } else if (static_cast<std::size_t>(-idx - 1) < old_taps.size()) {
      taps.push_back(old_taps[-idx - 1]);
    } else {
      taps.emplace_back(state_dim, head_dim);  // before any recorded history
    }
  }
  return taps;
}

}  // namespace detail

/// Fresh start: run the grouped scan over the prompt-extended sequence
/// [prompts; x] from all-zero states. Prompt positions use unit decay (their
/// factors only ever multiply zero states) and zero output projections; their
/// outputs are computed and discarded. Returns outputs for the real positions
/// and a cache positioned after the last real step.
///
/// The chunk may be empty, in which case only the prompts are absorbed.
template <typename Real>
StreamStep<Real> init_fresh(const PromptBank<Real>& bank,
                            const GfssmInstance<Real>& inst) {
  inst.validate(/*allow_empty=*/true);
  const int Q = inst.cfg.group_count;
  const int N = inst.base.state_dim;
  const int P = inst.base.head_dim;
  const int n = inst.cfg.fir_order;
  bank.validate(Q, N, P);
  if (!inst.prompt_taps_zero()) {
    throw ValueError("init_fresh: prompt_taps must be all zero; a fresh "
                     "sequence has no history before the prompts");
  }

  GfssmInstance<Real> ext;
  ext.cfg = inst.cfg;
  ext.fir = inst.fir;
  ext.prompt_taps.assign(n - 1, Matrix<Real>(N, P));
  ext.base.seq_len = Q + inst.base.seq_len;
  ext.base.state_dim = N;
  ext.base.head_dim = P;
  ext.base.decay.assign(Q, Real(1));
  ext.base.decay.insert(ext.base.decay.end(), inst.base.decay.begin(),
                        inst.base.decay.end());
  ext.base.B = bank.prompt_B;
  ext.base.B.insert(ext.base.B.end(), inst.base.B.begin(), inst.base.B.end());
  ext.base.x = bank.prompts;
  ext.base.x.insert(ext.base.x.end(), inst.base.x.begin(), inst.base.x.end());
  ext.base.C.assign(Q, std::vector<Real>(N, Real(0)));
  ext.base.C.insert(ext.base.C.end(), inst.base.C.begin(), inst.base.C.end());

  // Extended position e maps to global step e - Q, so group e mod Q keeps
  // real step t on group t mod Q.
  GroupedScanResult<Real> scan =
      grouped_scan(ext, GroupedHiddenState<Real>::zeros(Q, N, P));

  StreamStep<Real> out;
  out.y.assign(scan.y.begin() + Q, scan.y.end());
  out.cache.h_cached = std::move(scan.h_final);
  out.cache.tap_cache = detail::collect_taps(ext.base, {}, n, N, P);
  out.cache.t_offset = inst.base.seq_len;
  return out;
}

/// Exact continuation: seed the grouped scan with the cached states, resolve
/// boundary FIR taps from the cached products, and keep the global group
/// schedule via the cached offset. The chunk's own prompt_taps must be zero
/// (the cache owns the history).
template <typename Real>
StreamStep<Real> continue_chunk(const ChunkCache<Real>& cache,
                                const GfssmInstance<Real>& chunk) {
  chunk.validate(/*allow_empty=*/true);
  const int Q = chunk.cfg.group_count;
  const int N = chunk.base.state_dim;
  const int P = chunk.base.head_dim;
  const int n = chunk.cfg.fir_order;
  cache.h_cached.validate(Q, N, P, "continue_chunk.cache.h_cached");
  if (static_cast<int>(cache.tap_cache.size()) != n - 1) {
    throw ShapeError("continue_chunk.cache.tap_cache: length " +
                     std::to_string(cache.tap_cache.size()) + ", expected " +
                     std::to_string(n - 1));
  }
  if (cache.t_offset < 0) {
    throw ShapeError("continue_chunk.cache.t_offset: " +
                     std::to_string(cache.t_offset) + ", expected >= 0");
  }
  if (!chunk.prompt_taps_zero()) {
    throw ValueError("continue_chunk: chunk.prompt_taps must be all zero; "
                     "boundary history comes from the cache");
  }

  GfssmInstance<Real> seeded = chunk;
  seeded.prompt_taps = cache.tap_cache;
  GroupedScanResult<Real> scan =
      grouped_scan(seeded, cache.h_cached, cache.t_offset);

  StreamStep<Real> out;
  out.y = std::move(scan.y);
  out.cache.h_cached = std::move(scan.h_final);
  out.cache.tap_cache =
      detail::collect_taps(chunk.base, cache.tap_cache, n, N, P);
  out.cache.t_offset = cache.t_offset + chunk.base.seq_len;
  return out;
}

/// Materialized form of the continuation, kept alongside the seeded scan as
/// its cross-check:
///   y_t = C_t^T ( sum_i P[t][i] h_cached^i
///                 + sum_j k_j sum_s Lj~[t][s] (B x^T)_s )
/// where Lj~ extends the tap mask to the fir_order - 1 cached columns.
template <typename Real>
std::vector<std::vector<Real>> continue_chunk_matrix(
    const ChunkCache<Real>& cache, const GfssmInstance<Real>& chunk,
    int cap = kDefaultMatrixFormCap) {
  chunk.validate(/*allow_empty=*/true);
  const int T = chunk.base.seq_len;
  const int Q = chunk.cfg.group_count;
  const int N = chunk.base.state_dim;
  const int P = chunk.base.head_dim;
  const int n = chunk.cfg.fir_order;
  cache.h_cached.validate(Q, N, P, "continue_chunk_matrix.cache.h_cached");
  if (static_cast<int>(cache.tap_cache.size()) != n - 1) {
    throw ShapeError("continue_chunk_matrix.cache.tap_cache: length " +
                     std::to_string(cache.tap_cache.size()) + ", expected " +
                     std::to_string(n - 1));
  }
  if (T > cap) {
    throw SizeLimitError("continue_chunk_matrix: seq_len " +
                         std::to_string(T) + " exceeds cap " +
                         std::to_string(cap));
  }

  std::vector<std::vector<Real>> y(T, std::vector<Real>(P, Real(0)));
  if (T == 0) return y;

  // Carried-state term.
  const PropagationMatrix<Real> prop =
      build_P(chunk.base.decay, Q, cache.t_offset);
  Matrix<Real> carry(N, P);
  for (int t = 0; t < T; ++t) {
    for (std::size_t e = 0; e < carry.flat().size(); ++e) carry.flat()[e] = Real(0);
    for (int i = 0; i < Q; ++i) {
      const Real w = prop.entries(t, i);
      const Matrix<Real>& hi = cache.h_cached.groups[i];
      for (std::size_t e = 0; e < carry.flat().size(); ++e) {
        carry.flat()[e] += w * hi.flat()[e];
      }
    }
    for (int nn = 0; nn < N; ++nn) {
      for (int p = 0; p < P; ++p) {
        y[t][p] += chunk.base.C[t][nn] * carry(nn, p);
      }
    }
  }

  // Causal term over chunk inputs plus the cached boundary columns.
  const std::vector<Matrix<Real>> bx = detail::input_products(chunk.base);
  const int neg = n - 1;
  for (int j = 0; j < n; ++j) {
    const Matrix<Real> Lj = build_L_group_ext(chunk.base.decay, Q, j,
                                              cache.t_offset, neg);
    const Real k = chunk.fir.taps[j];
    for (int t = 0; t < T; ++t) {
      for (int c = 0; c < neg + T; ++c) {
        const Real w = k * Lj(t, c);
        if (w == Real(0)) continue;
        const Matrix<Real>& prod =
            detail::product_at(bx, cache.tap_cache, c - neg);
        for (int nn = 0; nn < N; ++nn) {
          for (int p = 0; p < P; ++p) {
            y[t][p] += w * (chunk.base.C[t][nn] * prod(nn, p));
          }
        }
      }
    }
  }
  return y;
}

/// Chunked driver: init_fresh on the first chunk, continue_chunk on the rest.
/// Output is positionally identical to monolithic processing of the
/// prompt-extended sequence.
template <typename Real>
std::vector<std::vector<Real>> stream(const GfssmInstance<Real>& full,
                                      const PromptBank<Real>& bank,
                                      int chunk_size) {
  full.validate(/*allow_empty=*/true);
  if (chunk_size < 1) {
    throw ShapeError("stream.chunk_size: " + std::to_string(chunk_size) +
                     ", expected >= 1");
  }

  auto slice = [&full](int begin, int end) {
    GfssmInstance<Real> c;
    c.cfg = full.cfg;
    c.fir = full.fir;
    c.prompt_taps.assign(full.cfg.fir_order - 1,
                         Matrix<Real>(full.base.state_dim, full.base.head_dim));
    c.base.seq_len = end - begin;
    c.base.state_dim = full.base.state_dim;
    c.base.head_dim = full.base.head_dim;
    c.base.decay.assign(full.base.decay.begin() + begin,
                        full.base.decay.begin() + end);
    c.base.B.assign(full.base.B.begin() + begin, full.base.B.begin() + end);
    c.base.C.assign(full.base.C.begin() + begin, full.base.C.begin() + end);
    c.base.x.assign(full.base.x.begin() + begin, full.base.x.begin() + end);
    return c;
  };

  const int T = full.base.seq_len;
  std::vector<std::vector<Real>> y;
  y.reserve(T);

  const int first_end = std::min(chunk_size, T);
  StreamStep<Real> step = init_fresh(bank, slice(0, first_end));
  y.insert(y.end(), step.y.begin(), step.y.end());
  for (int begin = first_end; begin < T; begin += chunk_size) {
    const int end = std::min(begin + chunk_size, T);
    step = continue_chunk(step.cache, slice(begin, end));
    y.insert(y.end(), step.y.begin(), step.y.end());
  }
  return y;
}

// ---------------------------------------------------------------------------
// Cache serialization. Flat binary layout, little-endian:
//   int64 Q, int64 N, int64 P, int64 n, int64 t_offset
//   Q * N * P doubles, row-major, groups in order      (h_cached)
//   (n-1) * N * P doubles, row-major, taps in order    (tap_cache)
// Payloads are stored as doubles regardless of the in-memory precision;
// float -> double -> float round-trips bit-exactly.
// ---------------------------------------------------------------------------

namespace detail {

inline void write_le64(std::ostream& os, std::uint64_t v) {
  unsigned char buf[8];
  for (int i = 0; i < 8; ++i) buf[i] = static_cast<unsigned char>(v >> (8 * i));
  os.write(reinterpret_cast<const char*>(buf), 8);
}

inline std::uint64_t read_le64(std::istream& is) {
  unsigned char buf[8];
  is.read(reinterpret_cast<char*>(buf), 8);
  if (!is) throw ConfigError("cache file: truncated header or payload");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(buf[i]) << (8 * i);
  return v;
}

inline void write_f64(std::ostream& os, double v) {
  write_le64(os, std::bit_cast<std::uint64_t>(v));
}

inline double read_f64(std::istream& is) {
  return std::bit_cast<double>(read_le64(is));
}

}  // namespace detail

template <typename Real>
void save_cache(const ChunkCache<Real>& cache, std::ostream& os) {
  const int Q = static_cast<int>(cache.h_cached.groups.size());
  if (Q < 1) throw ShapeError("save_cache: empty cache");
  const int N = cache.h_cached.groups[0].rows();
  const int P = cache.h_cached.groups[0].cols();
  const int n = static_cast<int>(cache.tap_cache.size()) + 1;

  detail::write_le64(os, static_cast<std::uint64_t>(Q));
  detail::write_le64(os, static_cast<std::uint64_t>(N));
  detail::write_le64(os, static_cast<std::uint64_t>(P));
  detail::write_le64(os, static_cast<std::uint64_t>(n));
  detail::write_le64(os, static_cast<std::uint64_t>(cache.t_offset));
  for (const Matrix<Real>& g : cache.h_cached.groups) {
    for (Real v : g.flat()) detail::write_f64(os, static_cast<double>(v));
  }
  for (const Matrix<Real>& tap : cache.tap_cache) {
    for (Real v : tap.flat()) detail::write_f64(os, static_cast<double>(v));
  }
  if (!os) throw ConfigError("save_cache: write failure");
}

template <typename Real>
ChunkCache<Real> load_cache(std::istream& is) {
  const auto Q = static_cast<std::int64_t>(detail::read_le64(is));
  const auto N = static_cast<std::int64_t>(detail::read_le64(is));
  const auto P = static_cast<std::int64_t>(detail::read_le64(is));
  const auto n = static_cast<std::int64_t>(detail::read_le64(is));
  const auto t_offset = static_cast<std::int64_t>(detail::read_le64(is));
  if (Q < 1 || N < 1 || P < 1 || n < 1 || t_offset < 0) {
    throw ConfigError("cache file: invalid header");
  }

  ChunkCache<Real> cache;
  cache.t_offset = t_offset;
  cache.h_cached.groups.assign(static_cast<std::size_t>(Q),
                               Matrix<Real>(static_cast<int>(N),
                                            static_cast<int>(P)));
  for (Matrix<Real>& g : cache.h_cached.groups) {
    for (Real& v : g.flat()) v = static_cast<Real>(detail::read_f64(is));
  }
  cache.tap_cache.assign(static_cast<std::size_t>(n - 1),
                         Matrix<Real>(static_cast<int>(N),
                                      static_cast<int>(P)));
  for (Matrix<Real>& tap : cache.tap_cache) {
    for (Real& v : tap.flat()) v = static_cast<Real>(detail::read_f64(is));
  }
  return cache;
}

template <typename Real>
void save_cache_file(const ChunkCache<Real>& cache, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw ConfigError("save_cache_file: cannot open " + path);
  save_cache(cache, os);
}

template <typename Real>
ChunkCache<Real> load_cache_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ConfigError("load_cache_file: cannot open " + path);
  return load_cache<Real>(is);
}

}  // namespace gfssm
