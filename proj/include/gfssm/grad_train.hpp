#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "gfssm/common.hpp"
#include "gfssm/gfssm_kernel.hpp"
#include "gfssm/matrix.hpp"
#include "gfssm/sink_streaming.hpp"
#include "gfssm/ssd_core.hpp"

namespace gfssm {

/// Gradients of sum_t <upstream_t, y_t> with respect to every layer
/// parameter. Shapes mirror the forward parameters.
template <typename Real>
struct LayerGradients {
  std::vector<Real> decay;                  // T
  std::vector<std::vector<Real>> B;         // T x N
  std::vector<std::vector<Real>> C;         // T x N
  std::vector<std::vector<Real>> x;         // T x P
  std::vector<Real> taps;                   // n
  std::vector<std::vector<Real>> prompts;   // Q x P
  std::vector<std::vector<Real>> prompt_B;  // Q x N
};

/// Objective the backward pass differentiates: sum_t <upstream_t, y_t> with
/// y from the prompt-extended forward pass (init_fresh).
template <typename Real>
Real forward_objective(const GfssmInstance<Real>& inst,
                       const PromptBank<Real>& bank,
                       const std::vector<std::vector<Real>>& upstream) {
  StreamStep<Real> step = init_fresh(bank, inst);
  Real acc = Real(0);
  for (int t = 0; t < inst.base.seq_len; ++t) {
    for (int p = 0; p < inst.base.head_dim; ++p) {
      acc += upstream[t][p] * step.y[t][p];
    }
  }
  return acc;
}

/// Exact reverse-mode gradients, computed by a backward scan that mirrors the
/// forward group schedule over the prompt-extended sequence. Prompt positions
/// use unit decay, which is not a parameter, so no gradient is emitted for
/// it; all other inputs of the forward pass get one.
template <typename Real>
LayerGradients<Real> gfssm_backward(
    const GfssmInstance<Real>& inst, const PromptBank<Real>& bank,
    const std::vector<std::vector<Real>>& upstream) {
  inst.validate();
  const int T = inst.base.seq_len;
  const int N = inst.base.state_dim;
  const int P = inst.base.head_dim;
  const int Q = inst.cfg.group_count;
  const int n = inst.cfg.fir_order;
  bank.validate(Q, N, P);
  check_vector_sequence("gfssm_backward.upstream", upstream, T, P);
  if (!inst.prompt_taps_zero()) {
    throw ValueError("gfssm_backward: prompt_taps must be all zero; the "
                     "differentiated forward pass is the fresh one");
  }

  const int E = Q + T;

  // Extended parameter views: position e < Q is prompt e, else real e - Q.
  auto decay_at = [&](int e) -> Real {
    return e < Q ? Real(1) : inst.base.decay[e - Q];
  };

  std::vector<Matrix<Real>> bx(E, Matrix<Real>(N, P));
  for (int e = 0; e < E; ++e) {
    const std::vector<Real>& be = e < Q ? bank.prompt_B[e] : inst.base.B[e - Q];
    const std::vector<Real>& xe = e < Q ? bank.prompts[e] : inst.base.x[e - Q];
    for (int nn = 0; nn < N; ++nn) {
      for (int p = 0; p < P; ++p) bx[e](nn, p) = be[nn] * xe[p];
    }
  }

  std::vector<Matrix<Real>> s(E, Matrix<Real>(N, P));
  for (int e = 0; e < E; ++e) {
    for (int j = 0; j < n; ++j) {
      const int idx = e - j;
      if (idx < 0) break;
      const Real k = inst.fir.taps[j];
      for (std::size_t i = 0; i < s[e].flat().size(); ++i) {
        s[e].flat()[i] += k * bx[idx].flat()[i];
      }
    }
  }

  // Forward scan, recording the updating group's state before each step so
  // the backward walk can restore it.
  std::vector<Matrix<Real>> state(Q, Matrix<Real>(N, P));
  std::vector<Matrix<Real>> prev(E, Matrix<Real>(N, P));
  for (int e = 0; e < E; ++e) {
    const int g = e % Q;
    prev[e] = state[g];
    const Real a = decay_at(e);
    for (std::size_t i = 0; i < state[g].flat().size(); ++i) {
      state[g].flat()[i] = a * state[g].flat()[i] + s[e].flat()[i];
    }
  }

  LayerGradients<Real> grads;
  grads.decay.assign(T, Real(0));
  grads.B.assign(T, std::vector<Real>(N, Real(0)));
  grads.C.assign(T, std::vector<Real>(N, Real(0)));
  grads.x.assign(T, std::vector<Real>(P, Real(0)));
  grads.taps.assign(n, Real(0));
  grads.prompts.assign(Q, std::vector<Real>(P, Real(0)));
  grads.prompt_B.assign(Q, std::vector<Real>(N, Real(0)));

  std::vector<Matrix<Real>> adj(Q, Matrix<Real>(N, P));  // d objective / d h_e^i
  std::vector<Matrix<Real>> gbx(E, Matrix<Real>(N, P));
  Matrix<Real> h_sum(N, P);
  Matrix<Real> gs(N, P);

  for (int e = E - 1; e >= 0; --e) {
    const int g = e % Q;
    if (e >= Q) {
      const int t = e - Q;
      const std::vector<Real>& u = upstream[t];
      const std::vector<Real>& ct = inst.base.C[t];

      h_sum = state[0];
      for (int i = 1; i < Q; ++i) {
        for (std::size_t idx = 0; idx < h_sum.flat().size(); ++idx) {
          h_sum.flat()[idx] += state[i].flat()[idx];
        }
      }
      for (int nn = 0; nn < N; ++nn) {
        for (int p = 0; p < P; ++p) {
          grads.C[t][nn] += h_sum(nn, p) * u[p];
        }
      }
      // y_e depends on every group through the state sum.
      for (int i = 0; i < Q; ++i) {
        for (int nn = 0; nn < N; ++nn) {
          for (int p = 0; p < P; ++p) {
            adj[i](nn, p) += ct[nn] * u[p];
          }
        }
      }
    }

    if (e >= Q) {
      grads.decay[e - Q] = frobenius_dot(adj[g], prev[e]);
    }

    gs = adj[g];
    for (int j = 0; j < n; ++j) {
      const int idx = e - j;
      if (idx < 0) break;
      grads.taps[j] += frobenius_dot(gs, bx[idx]);
      const Real k = inst.fir.taps[j];
      for (std::size_t i = 0; i < gbx[idx].flat().size(); ++i) {
        gbx[idx].flat()[i] += k * gs.flat()[i];
      }
    }

    const Real a = decay_at(e);
    for (std::size_t i = 0; i < adj[g].flat().size(); ++i) {
      adj[g].flat()[i] *= a;
    }
    state[g] = prev[e];
  }

  for (int e = 0; e < E; ++e) {
    const std::vector<Real>& be = e < Q ? bank.prompt_B[e] : inst.base.B[e - Q];
    const std::vector<Real>& xe = e < Q ? bank.prompts[e] : inst.base.x[e - Q];
    std::vector<Real>& gb = e < Q ? grads.prompt_B[e] : grads.B[e - Q];
    std::vector<Real>& gx = e < Q ? grads.prompts[e] : grads.x[e - Q];
    for (int nn = 0; nn < N; ++nn) {
      for (int p = 0; p < P; ++p) {
        gb[nn] += gbx[e](nn, p) * xe[p];
        gx[p] += be[nn] * gbx[e](nn, p);
      }
    }
  }
  return grads;
}

template <typename Real>
struct SsdGradients {
  std::vector<Real> decay;           // T
  std::vector<std::vector<Real>> B;  // T x N
  std::vector<std::vector<Real>> C;  // T x N
  std::vector<std::vector<Real>> x;  // T x P
};

/// Reverse pass of the plain scalar-decay scan (h0 = 0), written directly in
/// ssd terms. Kept separate from gfssm_backward on purpose: the
/// reduction-consistency tests compare the two implementations.
template <typename Real>
SsdGradients<Real> ssd_backward(const SsdInstance<Real>& inst,
                                const std::vector<std::vector<Real>>& upstream) {
  inst.validate();
  const int T = inst.seq_len;
  const int N = inst.state_dim;
  const int P = inst.head_dim;
  check_vector_sequence("ssd_backward.upstream", upstream, T, P);

  std::vector<Matrix<Real>> h(T + 1, Matrix<Real>(N, P));  // h[t+1] = state after step t
  for (int t = 0; t < T; ++t) {
    const Real a = inst.decay[t];
    for (int nn = 0; nn < N; ++nn) {
      for (int p = 0; p < P; ++p) {
        h[t + 1](nn, p) = a * h[t](nn, p) + inst.B[t][nn] * inst.x[t][p];
      }
    }
  }

  SsdGradients<Real> grads;
  grads.decay.assign(T, Real(0));
  grads.B.assign(T, std::vector<Real>(N, Real(0)));
  grads.C.assign(T, std::vector<Real>(N, Real(0)));
  grads.x.assign(T, std::vector<Real>(P, Real(0)));

  Matrix<Real> gh(N, P);
  for (int t = T - 1; t >= 0; --t) {
    const std::vector<Real>& u = upstream[t];
    for (int nn = 0; nn < N; ++nn) {
      for (int p = 0; p < P; ++p) {
        gh(nn, p) += inst.C[t][nn] * u[p];
        grads.C[t][nn] += h[t + 1](nn, p) * u[p];
      }
    }
    grads.decay[t] = frobenius_dot(gh, h[t]);
    for (int nn = 0; nn < N; ++nn) {
      for (int p = 0; p < P; ++p) {
        grads.B[t][nn] += gh(nn, p) * inst.x[t][p];
        grads.x[t][p] += inst.B[t][nn] * gh(nn, p);
      }
    }
    const Real a = inst.decay[t];
    for (std::size_t i = 0; i < gh.flat().size(); ++i) gh.flat()[i] *= a;
  }
  return grads;
}

// One parameter block of the layer; coordinates are enumerated in the same
// order by flatten_block and finite_diff_grad.
enum class ParamBlock { Decay, InProj, OutProj, Input, Taps, Prompts, PromptB };

template <typename Real>
std::vector<Real> flatten_block(const LayerGradients<Real>& g, ParamBlock block) {
  auto flat_seq = [](const std::vector<std::vector<Real>>& seq) {
    std::vector<Real> out;
    for (const auto& v : seq) out.insert(out.end(), v.begin(), v.end());
    return out;
  };
  switch (block) {
    case ParamBlock::Decay: return g.decay;
    case ParamBlock::InProj: return flat_seq(g.B);
    case ParamBlock::OutProj: return flat_seq(g.C);
    case ParamBlock::Input: return flat_seq(g.x);
    case ParamBlock::Taps: return g.taps;
    case ParamBlock::Prompts: return flat_seq(g.prompts);
    case ParamBlock::PromptB: return flat_seq(g.prompt_B);
  }
  throw ConfigError("flatten_block: unknown block");
}

namespace detail {

template <typename Real>
std::vector<Real*> block_coords(GfssmInstance<Real>& inst,
                                PromptBank<Real>& bank, ParamBlock block) {
  std::vector<Real*> ptrs;
  auto collect = [&ptrs](std::vector<std::vector<Real>>& seq) {
    for (auto& v : seq) {
      for (Real& e : v) ptrs.push_back(&e);
    }
  };
  switch (block) {
    case ParamBlock::Decay:
      for (Real& e : inst.base.decay) ptrs.push_back(&e);
      break;
    case ParamBlock::InProj: collect(inst.base.B); break;
    case ParamBlock::OutProj: collect(inst.base.C); break;
    case ParamBlock::Input: collect(inst.base.x); break;
    case ParamBlock::Taps:
      for (Real& e : inst.fir.taps) ptrs.push_back(&e);
      break;
    case ParamBlock::Prompts: collect(bank.prompts); break;
    case ParamBlock::PromptB: collect(bank.prompt_B); break;
  }
  return ptrs;
}

}  // namespace detail

/// (f(theta + eps) - f(theta - eps)) / (2 eps); exact for quadratics up to
/// rounding.
template <typename Real, typename F>
Real central_difference(F&& f, Real theta, Real eps) {
  return (f(theta + eps) - f(theta - eps)) / (Real(2) * eps);
}

/// Central finite differences of forward_objective over one parameter block,
/// one scalar coordinate at a time.
template <typename Real>
std::vector<Real> finite_diff_grad(ParamBlock block,
                                   const GfssmInstance<Real>& inst,
                                   const PromptBank<Real>& bank,
                                   const std::vector<std::vector<Real>>& upstream,
                                   Real eps) {
  if (!(eps > Real(0))) {
    throw ConfigError("finite_diff_grad: eps must be > 0");
  }
  GfssmInstance<Real> work_inst = inst;
  PromptBank<Real> work_bank = bank;
  std::vector<Real*> coords =
      detail::block_coords(work_inst, work_bank, block);

  std::vector<Real> grad(coords.size(), Real(0));
  for (std::size_t i = 0; i < coords.size(); ++i) {
    const Real saved = *coords[i];
    grad[i] = central_difference(
        [&](Real v) {
          *coords[i] = v;
          return forward_objective(work_inst, work_bank, upstream);
        },
        saved, eps);
    *coords[i] = saved;
  }
  return grad;
}

// ---------------------------------------------------------------------------
// Toy synthetic tasks and the training loop (implemented in train.cpp).
// ---------------------------------------------------------------------------

/// Synthetic sequence tasks with seed-fixed structure. Token conventions:
/// 0 is the noise token, 1..vocab-2 are data tokens, vocab-1 is the query
/// marker used by selective copy.
///
/// selective_copy: four data tokens sit at seed-fixed positions in the body;
/// the last four positions carry the query marker and the model must emit the
/// data tokens there in order. delayed_recall: a single data token at a
/// seed-fixed position must be reproduced seq_len/2 steps later.
struct ToyTask {
  enum class Kind { SelectiveCopy, DelayedRecall };
  Kind kind = Kind::SelectiveCopy;
  int vocab = 8;
  int seq_len = 32;
  std::uint64_t seed = 1;
};

struct TrainConfig {
  int steps = 2000;
  double lr = 0.5;
  double clip_norm = 1.0;  // <= 0 disables gradient clipping
  int group_count = 4;
  int fir_order = 4;
  int state_dim = 8;
  int embed_dim = 12;
  int dataset_size = 32;
  std::uint64_t seed = 1;
};

struct TrainStats {
  std::vector<double> loss;       // one entry per step
  std::vector<double> grad_norm;  // pre-clip global norm per step
  double initial_loss = 0.0;
  double final_loss = 0.0;
  double eval_accuracy = 0.0;
  bool diverged = false;
  int diverged_step = -1;
};

/// Full-batch gradient descent on embedding -> grouped layer -> linear
/// readout, softmax cross-entropy at the task's designated positions.
/// Deterministic given the seeds: identical seeds give bit-identical curves.
/// Decay scalars are trained through a logistic reparameterization, keeping
/// them in (0, 1).
TrainStats train_toy(const ToyTask& task, const TrainConfig& cfg);

}  // namespace gfssm
