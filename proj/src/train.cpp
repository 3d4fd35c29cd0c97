#include "gfssm/grad_train.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

#include "gfssm/rng.hpp"

namespace gfssm {
namespace {

double sigmoid(double v) {
  if (v >= 0.0) {
    const double z = std::exp(-v);
    return 1.0 / (1.0 + z);
  }
  const double z = std::exp(v);
  return z / (1.0 + z);
}

double logit(double p) { return std::log(p / (1.0 - p)); }

constexpr int kCopyMarkers = 4;
constexpr std::uint64_t kEvalSeedSalt = 0xda3e39cb94b95bdbULL;

// Seed-fixed positions: where data tokens appear and where the loss applies.
// Output position q must reproduce the data token at data_positions[q].
struct TaskLayout {
  std::vector<int> data_positions;
  std::vector<int> output_positions;
};

TaskLayout make_layout(const ToyTask& task) {
  if (task.vocab < 4) {
    throw ConfigError("ToyTask.vocab: expected >= 4 (noise, data, query)");
  }
  TaskLayout layout;
  Rng rng(task.seed);
  if (task.kind == ToyTask::Kind::SelectiveCopy) {
    const int body = task.seq_len - kCopyMarkers;
    if (body <= kCopyMarkers) {
      throw ConfigError("ToyTask.seq_len: too short for selective copy");
    }
    while (static_cast<int>(layout.data_positions.size()) < kCopyMarkers) {
      const int pos = static_cast<int>(rng.uniform_int(body));
      if (std::find(layout.data_positions.begin(), layout.data_positions.end(),
                    pos) == layout.data_positions.end()) {
        layout.data_positions.push_back(pos);
      }
    }
    std::sort(layout.data_positions.begin(), layout.data_positions.end());
    for (int q = 0; q < kCopyMarkers; ++q) {
      layout.output_positions.push_back(body + q);
    }
  } else {
    const int delay = task.seq_len / 2;
    if (delay < 1 || task.seq_len - delay < 1) {
      throw ConfigError("ToyTask.seq_len: too short for delayed recall");
    }
    const int pos = static_cast<int>(rng.uniform_int(task.seq_len - delay));
    layout.data_positions.push_back(pos);
    layout.output_positions.push_back(pos + delay);
  }
  return layout;
}

struct TaskSample {
  std::vector<int> tokens;
  std::vector<int> targets;  // -1 where the loss is masked out
};

TaskSample draw_sample(const ToyTask& task, const TaskLayout& layout,
                       Rng& rng) {
  TaskSample sample;
  sample.tokens.assign(task.seq_len, 0);
  sample.targets.assign(task.seq_len, -1);
  const int data_tokens = task.vocab - 2;
  for (std::size_t q = 0; q < layout.data_positions.size(); ++q) {
    const int tok = 1 + static_cast<int>(rng.uniform_int(data_tokens));
    sample.tokens[layout.data_positions[q]] = tok;
    sample.targets[layout.output_positions[q]] = tok;
  }
  if (task.kind == ToyTask::Kind::SelectiveCopy) {
    for (int pos : layout.output_positions) {
      sample.tokens[pos] = task.vocab - 1;  // query marker
    }
  }
  return sample;
}

struct Model {
  int seq_len, state_dim, embed_dim, group_count, fir_order, vocab;
  std::vector<double> alpha;                  // decay = sigmoid(alpha)
  std::vector<std::vector<double>> B, C;      // seq_len x state_dim
  std::vector<double> taps;                   // fir_order
  std::vector<std::vector<double>> prompts;   // group_count x embed_dim
  std::vector<std::vector<double>> prompt_B;  // group_count x state_dim
  std::vector<std::vector<double>> embed;     // vocab x embed_dim
  std::vector<std::vector<double>> readout;   // vocab x embed_dim
  std::vector<double> bias;                   // vocab

  static Model init(const ToyTask& task, const TrainConfig& cfg) {
    Model m;
    m.seq_len = task.seq_len;
    m.state_dim = cfg.state_dim;
    m.embed_dim = cfg.embed_dim;
    m.group_count = cfg.group_count;
    m.fir_order = cfg.fir_order;
    m.vocab = task.vocab;

    Rng rng(cfg.seed);
    auto fill = [&rng](std::vector<std::vector<double>>& seq, int len, int dim,
                       double range) {
      seq.assign(len, std::vector<double>(dim));
      for (auto& v : seq) {
        for (double& e : v) e = rng.uniform(-range, range);
      }
    };
    fill(m.embed, m.vocab, m.embed_dim, 0.5);
    fill(m.readout, m.vocab, m.embed_dim, 0.5);
    m.bias.assign(m.vocab, 0.0);
    fill(m.B, m.seq_len, m.state_dim, 0.5);
    fill(m.C, m.seq_len, m.state_dim, 0.5);
    m.alpha.assign(m.seq_len, logit(0.9));
    m.taps.assign(m.fir_order, 0.0);
    m.taps[0] = 1.0;  // exact plain-scan start
    fill(m.prompts, m.group_count, m.embed_dim, 0.1);
    fill(m.prompt_B, m.group_count, m.state_dim, 0.1);
    return m;
  }

  GfssmInstance<double> instance(const std::vector<int>& tokens) const {
    GfssmInstance<double> inst;
    inst.cfg.group_count = group_count;
    inst.cfg.fir_order = fir_order;
    inst.base.seq_len = seq_len;
    inst.base.state_dim = state_dim;
    inst.base.head_dim = embed_dim;
    inst.base.decay.resize(seq_len);
    for (int t = 0; t < seq_len; ++t) inst.base.decay[t] = sigmoid(alpha[t]);
    inst.base.B = B;
    inst.base.C = C;
    inst.base.x.resize(seq_len);
    for (int t = 0; t < seq_len; ++t) inst.base.x[t] = embed[tokens[t]];
    inst.fir.taps = taps;
    inst.prompt_taps.assign(fir_order - 1,
                            Matrix<double>(state_dim, embed_dim));
    return inst;
  }

  PromptBank<double> bank() const {
    PromptBank<double> b;
    b.prompts = prompts;
    b.prompt_B = prompt_B;
    return b;
  }
};

struct ModelGrads {
  std::vector<double> alpha;
  std::vector<std::vector<double>> B, C;
  std::vector<double> taps;
  std::vector<std::vector<double>> prompts, prompt_B;
  std::vector<std::vector<double>> embed, readout;
  std::vector<double> bias;

  static ModelGrads zeros(const Model& m) {
    ModelGrads g;
    g.alpha.assign(m.seq_len, 0.0);
    g.B.assign(m.seq_len, std::vector<double>(m.state_dim, 0.0));
    g.C.assign(m.seq_len, std::vector<double>(m.state_dim, 0.0));
    g.taps.assign(m.fir_order, 0.0);
    g.prompts.assign(m.group_count, std::vector<double>(m.embed_dim, 0.0));
    g.prompt_B.assign(m.group_count, std::vector<double>(m.state_dim, 0.0));
    g.embed.assign(m.vocab, std::vector<double>(m.embed_dim, 0.0));
    g.readout.assign(m.vocab, std::vector<double>(m.embed_dim, 0.0));
    g.bias.assign(m.vocab, 0.0);
    return g;
  }

  // Fixed enumeration order so the norm is reproducible.
  double squared_norm() const {
    double acc = 0.0;
    auto add_vec = [&acc](const std::vector<double>& v) {
      for (double e : v) acc += e * e;
    };
    auto add_seq = [&add_vec](const std::vector<std::vector<double>>& seq) {
      for (const auto& v : seq) add_vec(v);
    };
    add_vec(alpha);
    add_seq(B);
    add_seq(C);
    add_vec(taps);
    add_seq(prompts);
    add_seq(prompt_B);
    add_seq(embed);
    add_seq(readout);
    add_vec(bias);
    return acc;
  }

  void scale(double s) {
    auto scale_vec = [s](std::vector<double>& v) {
      for (double& e : v) e *= s;
    };
    auto scale_seq = [&scale_vec](std::vector<std::vector<double>>& seq) {
      for (auto& v : seq) scale_vec(v);
    };
    scale_vec(alpha);
    scale_seq(B);
    scale_seq(C);
    scale_vec(taps);
    scale_seq(prompts);
    scale_seq(prompt_B);
    scale_seq(embed);
    scale_seq(readout);
    scale_vec(bias);
  }
};

void apply_update(Model& m, const ModelGrads& g, double lr) {
  auto upd_vec = [lr](std::vector<double>& p, const std::vector<double>& gv) {
    for (std::size_t i = 0; i < p.size(); ++i) p[i] -= lr * gv[i];
  };
  auto upd_seq = [&upd_vec](std::vector<std::vector<double>>& p,
                            const std::vector<std::vector<double>>& gs) {
    for (std::size_t i = 0; i < p.size(); ++i) upd_vec(p[i], gs[i]);
  };
  upd_vec(m.alpha, g.alpha);
  upd_seq(m.B, g.B);
  upd_seq(m.C, g.C);
  upd_vec(m.taps, g.taps);
  upd_seq(m.prompts, g.prompts);
  upd_seq(m.prompt_B, g.prompt_B);
  upd_seq(m.embed, g.embed);
  upd_seq(m.readout, g.readout);
  upd_vec(m.bias, g.bias);
}

// Cross-entropy and gradients for one sample. `grads` may be null (loss-only
// evaluation); `inv_count` scales this sample's contribution so the
// accumulated result is the dataset mean.
double sample_loss(const Model& m, const TaskSample& sample, double inv_count,
                   ModelGrads* grads, int* correct, int* total) {
  const GfssmInstance<double> inst = m.instance(sample.tokens);
  const PromptBank<double> bank = m.bank();
  const StreamStep<double> fwd = init_fresh(bank, inst);

  double loss = 0.0;
  std::vector<std::vector<double>> upstream(
      m.seq_len, std::vector<double>(m.embed_dim, 0.0));
  bool any_masked = false;

  for (int t = 0; t < m.seq_len; ++t) {
    const int target = sample.targets[t];
    if (target < 0) continue;
    any_masked = true;

    std::vector<double> logits(m.vocab, 0.0);
    for (int v = 0; v < m.vocab; ++v) {
      logits[v] = m.bias[v] + dot(m.readout[v], fwd.y[t]);
    }
    double max_logit = logits[0];
    for (double l : logits) max_logit = std::max(max_logit, l);
    double z = 0.0;
    for (double l : logits) z += std::exp(l - max_logit);
    const double log_z = std::log(z) + max_logit;
    loss += (log_z - logits[target]) * inv_count;

    if (total != nullptr) {
      int argmax = 0;
      for (int v = 1; v < m.vocab; ++v) {
        if (logits[v] > logits[argmax]) argmax = v;
      }
      ++*total;
      if (argmax == target) ++*correct;
    }

    if (grads != nullptr) {
      for (int v = 0; v < m.vocab; ++v) {
        const double p = std::exp(logits[v] - log_z);
        const double dz = (p - (v == target ? 1.0 : 0.0)) * inv_count;
        grads->bias[v] += dz;
        for (int e = 0; e < m.embed_dim; ++e) {
          grads->readout[v][e] += dz * fwd.y[t][e];
          upstream[t][e] += dz * m.readout[v][e];
        }
      }
    }
  }

  if (grads != nullptr && any_masked) {
    const LayerGradients<double> lg = gfssm_backward(inst, bank, upstream);
    for (int t = 0; t < m.seq_len; ++t) {
      const double a = inst.base.decay[t];
      grads->alpha[t] += lg.decay[t] * a * (1.0 - a);
      for (int nn = 0; nn < m.state_dim; ++nn) {
        grads->B[t][nn] += lg.B[t][nn];
        grads->C[t][nn] += lg.C[t][nn];
      }
      for (int e = 0; e < m.embed_dim; ++e) {
        grads->embed[sample.tokens[t]][e] += lg.x[t][e];
      }
    }
    for (int j = 0; j < m.fir_order; ++j) grads->taps[j] += lg.taps[j];
    for (int q = 0; q < m.group_count; ++q) {
      for (int e = 0; e < m.embed_dim; ++e) {
        grads->prompts[q][e] += lg.prompts[q][e];
      }
      for (int nn = 0; nn < m.state_dim; ++nn) {
        grads->prompt_B[q][nn] += lg.prompt_B[q][nn];
      }
    }
  }
  return loss;
}

int masked_count(const TaskSample& s) {
  int c = 0;
  for (int t : s.targets) {
    if (t >= 0) ++c;
  }
  return c;
}

}  // namespace

TrainStats train_toy(const ToyTask& task, const TrainConfig& cfg) {
  if (cfg.steps < 1) throw ConfigError("TrainConfig.steps: expected >= 1");
  if (cfg.lr < 0.0) throw ConfigError("TrainConfig.lr: expected >= 0");
  if (cfg.dataset_size < 1) {
    throw ConfigError("TrainConfig.dataset_size: expected >= 1");
  }

  const TaskLayout layout = make_layout(task);
  Model model = Model::init(task, cfg);

  Rng data_rng(task.seed);
  std::vector<TaskSample> dataset;
  dataset.reserve(cfg.dataset_size);
  for (int i = 0; i < cfg.dataset_size; ++i) {
    dataset.push_back(draw_sample(task, layout, data_rng));
  }
  int total_masked = 0;
  for (const TaskSample& s : dataset) total_masked += masked_count(s);
  const double inv_count = 1.0 / static_cast<double>(total_masked);

  TrainStats stats;
  stats.loss.reserve(cfg.steps);
  stats.grad_norm.reserve(cfg.steps);

  for (int step = 0; step < cfg.steps; ++step) {
    ModelGrads grads = ModelGrads::zeros(model);
    double loss = 0.0;
    for (const TaskSample& s : dataset) {
      loss += sample_loss(model, s, inv_count, &grads, nullptr, nullptr);
    }
    const double norm = std::sqrt(grads.squared_norm());

    stats.loss.push_back(loss);
    stats.grad_norm.push_back(norm);
    if (!std::isfinite(loss) || !std::isfinite(norm)) {
      stats.diverged = true;
      stats.diverged_step = step;
      break;
    }

    if (cfg.clip_norm > 0.0 && norm > cfg.clip_norm) {
      grads.scale(cfg.clip_norm / norm);
    }
    apply_update(model, grads, cfg.lr);
  }

  stats.initial_loss = stats.loss.empty() ? 0.0 : stats.loss.front();

  if (!stats.diverged) {
    double final_loss = 0.0;
    for (const TaskSample& s : dataset) {
      final_loss += sample_loss(model, s, inv_count, nullptr, nullptr, nullptr);
    }
    stats.final_loss = final_loss;

    Rng eval_rng(task.seed ^ kEvalSeedSalt);
    int correct = 0;
    int total = 0;
    for (int i = 0; i < 256; ++i) {
      const TaskSample s = draw_sample(task, layout, eval_rng);
      sample_loss(model, s, 1.0, nullptr, &correct, &total);
    }
    stats.eval_accuracy =
        total > 0 ? static_cast<double>(correct) / total : 0.0;
  } else {
    stats.final_loss = stats.loss.back();
  }
  return stats;
}

}  // namespace gfssm
