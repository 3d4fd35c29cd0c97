#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "gfssm/grad_train.hpp"
#include "gfssm/instance_gen.hpp"
#include "gfssm/rng.hpp"

using namespace gfssm;

namespace {

constexpr ParamBlock kAllBlocks[] = {
    ParamBlock::Decay,  ParamBlock::InProj,  ParamBlock::OutProj,
    ParamBlock::Input,  ParamBlock::Taps,    ParamBlock::Prompts,
    ParamBlock::PromptB};

// Relative error with an absolute fallback when both sides are tiny.
double grad_error(double analytic, double numeric) {
  const double aa = std::fabs(analytic);
  const double an = std::fabs(numeric);
  if (aa < 1e-8 && an < 1e-8) return std::fabs(analytic - numeric);
  return std::fabs(analytic - numeric) / std::max(aa, an);
}

double max_block_error(const GfssmInstance<double>& inst,
                       const PromptBank<double>& bank,
                       const std::vector<std::vector<double>>& upstream,
                       double eps = 1e-5) {
  const LayerGradients<double> grads = gfssm_backward(inst, bank, upstream);
  double worst = 0.0;
  for (ParamBlock block : kAllBlocks) {
    const auto analytic = flatten_block(grads, block);
    const auto numeric = finite_diff_grad(block, inst, bank, upstream, eps);
    REQUIRE(analytic.size() == numeric.size());
    for (std::size_t i = 0; i < analytic.size(); ++i) {
      worst = std::max(worst, grad_error(analytic[i], numeric[i]));
    }
  }
  return worst;
}

GfssmInstance<double> random_instance(Rng& rng, int T, int Q, int n, int N = 4,
                                      int P = 2) {
  InstanceDims d;
  d.seq_len = T;
  d.state_dim = N;
  d.head_dim = P;
  d.group_count = Q;
  d.fir_order = n;
  return make_random_instance(rng, d);
}

}  // namespace

TEST_CASE("central difference: exact on a quadratic") {
  const double d =
      central_difference([](double v) { return v * v; }, 3.0, 1e-5);
  CHECK(d == doctest::Approx(6.0).epsilon(1e-9));
}

TEST_CASE("finite differences: exact on a coordinate the objective is linear in") {
  Rng rng(163);
  const auto inst = random_instance(rng, 6, 2, 2);
  const auto bank = make_random_bank(rng, 2, 4, 2);
  const auto upstream = make_random_upstream(rng, 6, 2);

  // The objective is linear in each input coordinate, so central differences
  // agree with the analytic gradient to rounding.
  const auto analytic =
      flatten_block(gfssm_backward(inst, bank, upstream), ParamBlock::Input);
  const auto numeric =
      finite_diff_grad(ParamBlock::Input, inst, bank, upstream, 1e-5);
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    CHECK(analytic[i] == doctest::Approx(numeric[i]).epsilon(1e-9));
  }
}

TEST_CASE("backward: zero upstream gives exactly zero gradients") {
  Rng rng(167);
  const auto inst = random_instance(rng, 8, 4, 4);
  const auto bank = make_random_bank(rng, 4, 4, 2);
  const std::vector<std::vector<double>> upstream(8,
                                                  std::vector<double>(2, 0.0));

  const auto grads = gfssm_backward(inst, bank, upstream);
  for (ParamBlock block : kAllBlocks) {
    for (double g : flatten_block(grads, block)) CHECK(g == 0.0);
  }
}

TEST_CASE("backward: zero inputs and prompts kill the tap gradients") {
  Rng rng(173);
  GfssmInstance<double> inst = random_instance(rng, 8, 4, 4);
  for (auto& v : inst.base.x) v.assign(2, 0.0);
  const auto bank = PromptBank<double>::zeros(4, 4, 2);
  const auto upstream = make_random_upstream(rng, 8, 2);

  const auto grads = gfssm_backward(inst, bank, upstream);
  for (double g : grads.taps) CHECK(g == 0.0);
}

TEST_CASE("backward matches central finite differences on random instances") {
  Rng rng(20240802);
  double worst = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    const int T = 2 + static_cast<int>(rng.uniform_int(15));   // <= 16
    const int Q = 1 + static_cast<int>(rng.uniform_int(4));    // <= 4
    const int n = 1 + static_cast<int>(rng.uniform_int(4));    // <= 4
    const auto inst = random_instance(rng, T, Q, n);
    const auto bank = make_random_bank(rng, Q, 4, 2);
    const auto upstream = make_random_upstream(rng, T, 2);
    worst = std::max(worst, max_block_error(inst, bank, upstream));
  }
  CHECK(worst < 1e-5);
}

TEST_CASE("backward at Q=1, n=1, identity tap equals the plain-scan backward") {
  Rng rng(179);
  GfssmInstance<double> inst = random_instance(rng, 12, 1, 1);
  inst.fir.taps = {1.0};
  const auto bank = PromptBank<double>::zeros(1, 4, 2);
  const auto upstream = make_random_upstream(rng, 12, 2);

  const auto grouped = gfssm_backward(inst, bank, upstream);
  const auto plain = ssd_backward(inst.base, upstream);

  for (int t = 0; t < 12; ++t) {
    CHECK(grouped.decay[t] == doctest::Approx(plain.decay[t]).epsilon(1e-12));
    for (int nn = 0; nn < 4; ++nn) {
      CHECK(grouped.B[t][nn] == doctest::Approx(plain.B[t][nn]).epsilon(1e-12));
      CHECK(grouped.C[t][nn] == doctest::Approx(plain.C[t][nn]).epsilon(1e-12));
    }
    for (int p = 0; p < 2; ++p) {
      CHECK(grouped.x[t][p] == doctest::Approx(plain.x[t][p]).epsilon(1e-12));
    }
  }
}

TEST_CASE("ssd_backward itself passes a finite-difference spot check") {
  Rng rng(181);
  InstanceDims d;
  d.seq_len = 7;
  d.group_count = 1;
  d.fir_order = 1;
  const SsdInstance<double> inst = make_random_instance(rng, d).base;
  const auto upstream = make_random_upstream(rng, 7, 2);
  const auto grads = ssd_backward(inst, upstream);

  auto objective = [&upstream](const SsdInstance<double>& probe) {
    const auto r = ssd_scan_recurrent(
        probe, Matrix<double>(probe.state_dim, probe.head_dim));
    double acc = 0.0;
    for (std::size_t t = 0; t < r.y.size(); ++t) {
      for (std::size_t p = 0; p < r.y[t].size(); ++p) {
        acc += upstream[t][p] * r.y[t][p];
      }
    }
    return acc;
  };

  for (int t = 0; t < 7; ++t) {
    SsdInstance<double> probe = inst;
    const double fd = central_difference(
        [&](double v) {
          probe.decay[t] = v;
          return objective(probe);
        },
        inst.decay[t], 1e-5);
    CHECK(grad_error(grads.decay[t], fd) < 1e-6);
  }
}

TEST_CASE("backward: shape mismatches are rejected") {
  Rng rng(191);
  const auto inst = random_instance(rng, 6, 2, 2);
  const auto bank = make_random_bank(rng, 2, 4, 2);
  auto upstream = make_random_upstream(rng, 6, 2);

  SUBCASE("upstream too short") {
    upstream.pop_back();
    CHECK_THROWS_AS(gfssm_backward(inst, bank, upstream), ShapeError);
  }
  SUBCASE("upstream row too wide") {
    upstream[3].push_back(0.0);
    CHECK_THROWS_AS(gfssm_backward(inst, bank, upstream), ShapeError);
  }
  SUBCASE("bank sized for the wrong group count") {
    const auto bad = make_random_bank(rng, 3, 4, 2);
    CHECK_THROWS_AS(gfssm_backward(inst, bad, upstream), ShapeError);
  }
}

TEST_CASE("train_toy: identical seeds give bit-identical curves") {
  ToyTask task;
  task.kind = ToyTask::Kind::DelayedRecall;
  task.seq_len = 16;
  task.seed = 9;
  TrainConfig cfg;
  cfg.steps = 5;
  cfg.dataset_size = 6;
  cfg.state_dim = 4;
  cfg.embed_dim = 6;
  cfg.seed = 3;

  const auto a = train_toy(task, cfg);
  const auto b = train_toy(task, cfg);
  REQUIRE(a.loss.size() == b.loss.size());
  for (std::size_t i = 0; i < a.loss.size(); ++i) {
    CHECK(a.loss[i] == b.loss[i]);
    CHECK(a.grad_norm[i] == b.grad_norm[i]);
  }
}

TEST_CASE("train_toy: zero learning rate freezes the loss curve") {
  ToyTask task;
  task.kind = ToyTask::Kind::SelectiveCopy;
  task.seq_len = 16;
  task.seed = 4;
  TrainConfig cfg;
  cfg.steps = 4;
  cfg.lr = 0.0;
  cfg.dataset_size = 6;
  cfg.state_dim = 4;
  cfg.embed_dim = 6;

  const auto stats = train_toy(task, cfg);
  for (double l : stats.loss) CHECK(l == stats.loss.front());
  CHECK(stats.final_loss == stats.loss.front());
}

TEST_CASE("train_toy: short selective-copy run already reduces the loss") {
  ToyTask task;
  task.seq_len = 24;
  task.seed = 11;
  TrainConfig cfg;
  cfg.steps = 60;
  cfg.dataset_size = 16;
  cfg.seed = 5;

  const auto stats = train_toy(task, cfg);
  CHECK_FALSE(stats.diverged);
  CHECK(stats.final_loss < stats.initial_loss);
}

TEST_CASE("train_toy: plain-scan configuration runs to completion") {
  ToyTask task;
  task.seq_len = 16;
  task.seed = 12;
  TrainConfig cfg;
  cfg.steps = 10;
  cfg.group_count = 1;
  cfg.fir_order = 1;
  cfg.dataset_size = 6;
  cfg.state_dim = 4;
  cfg.embed_dim = 6;

  const auto stats = train_toy(task, cfg);
  CHECK_FALSE(stats.diverged);
  CHECK(stats.loss.size() == 10);
}

TEST_CASE("train_toy: an exploding run is reported, not propagated") {
  ToyTask task;
  task.seq_len = 16;
  task.seed = 13;
  TrainConfig cfg;
  cfg.steps = 20;
  cfg.lr = 1e12;
  cfg.clip_norm = 0.0;  // disable clipping so the blow-up is immediate
  cfg.dataset_size = 4;
  cfg.state_dim = 4;
  cfg.embed_dim = 6;

  const auto stats = train_toy(task, cfg);
  CHECK(stats.diverged);
  CHECK(stats.diverged_step >= 0);
  CHECK(stats.loss.size() ==
        static_cast<std::size_t>(stats.diverged_step + 1));
}

TEST_CASE("train_toy: invalid configurations are rejected") {
  ToyTask task;
  TrainConfig cfg;
  SUBCASE("nonpositive steps") {
    cfg.steps = 0;
    CHECK_THROWS_AS(train_toy(task, cfg), ConfigError);
  }
  SUBCASE("negative lr") {
    cfg.lr = -0.1;
    CHECK_THROWS_AS(train_toy(task, cfg), ConfigError);
  }
  SUBCASE("vocab too small") {
    task.vocab = 2;
    CHECK_THROWS_AS(train_toy(task, cfg), ConfigError);
  }
  SUBCASE("sequence too short for the copy markers") {
    task.seq_len = 7;
    CHECK_THROWS_AS(train_toy(task, cfg), ConfigError);
  }
}
