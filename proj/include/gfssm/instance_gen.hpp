#pragma once

#include <cstdint>
#include <vector>

#include "gfssm/gfssm_kernel.hpp"
#include "gfssm/rng.hpp"
#include "gfssm/sink_streaming.hpp"

namespace gfssm {

struct InstanceDims {
  int seq_len = 8;
  int state_dim = 4;
  int head_dim = 2;
  int group_count = 4;
  int fir_order = 4;
};

// Random instance with decay in (0, 1] and all other entries in [-1, 1].
// Draw order is part of the reproducibility contract: decay[t] for t
// ascending, then B[t][*], C[t][*], x[t][*] (t-major), then the FIR taps.
// prompt_taps are zero.
inline GfssmInstance<double> make_random_instance(Rng& rng,
                                                  const InstanceDims& d) {
  GfssmInstance<double> inst;
  inst.cfg.group_count = d.group_count;
  inst.cfg.fir_order = d.fir_order;
  inst.base.seq_len = d.seq_len;
  inst.base.state_dim = d.state_dim;
  inst.base.head_dim = d.head_dim;

  inst.base.decay.resize(d.seq_len);
  for (double& a : inst.base.decay) a = rng.uniform_pos01();

  auto fill_seq = [&rng](std::vector<std::vector<double>>& seq, int len,
                         int dim) {
    seq.assign(len, std::vector<double>(dim));
    for (auto& v : seq) {
      for (double& e : v) e = rng.uniform(-1.0, 1.0);
    }
  };
  fill_seq(inst.base.B, d.seq_len, d.state_dim);
  fill_seq(inst.base.C, d.seq_len, d.state_dim);
  fill_seq(inst.base.x, d.seq_len, d.head_dim);

  inst.fir.taps.resize(d.fir_order);
  for (double& k : inst.fir.taps) k = rng.uniform(-1.0, 1.0);

  inst.prompt_taps.assign(d.fir_order - 1,
                          Matrix<double>(d.state_dim, d.head_dim));
  return inst;
}

// Random prompt bank, entries in [-1, 1]; prompts first (q-major), then
// prompt_B.
inline PromptBank<double> make_random_bank(Rng& rng, int group_count,
                                           int state_dim, int head_dim) {
  PromptBank<double> bank;
  bank.prompts.assign(group_count, std::vector<double>(head_dim));
  for (auto& v : bank.prompts) {
    for (double& e : v) e = rng.uniform(-1.0, 1.0);
  }
  bank.prompt_B.assign(group_count, std::vector<double>(state_dim));
  for (auto& v : bank.prompt_B) {
    for (double& e : v) e = rng.uniform(-1.0, 1.0);
  }
  return bank;
}

inline std::vector<std::vector<double>> make_random_upstream(Rng& rng,
                                                             int seq_len,
                                                             int head_dim) {
  std::vector<std::vector<double>> u(seq_len, std::vector<double>(head_dim));
  for (auto& v : u) {
    for (double& e : v) e = rng.uniform(-1.0, 1.0);
  }
  return u;
}

}  // namespace gfssm
