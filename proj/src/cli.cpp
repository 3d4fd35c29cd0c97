#include "gfssm/cli.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <atomic>
#include <cmath>
#include <cstdio>
#include <exception>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "gfssm/bench.hpp"
#include "gfssm/csv.hpp"
#include "gfssm/gfssm_kernel.hpp"
#include "gfssm/grad_train.hpp"
#include "gfssm/instance_gen.hpp"
#include "gfssm/rng.hpp"
#include "gfssm/sink_streaming.hpp"
#include "gfssm/ssd_core.hpp"
#include "gfssm/stability_lab.hpp"

namespace gfssm {
namespace {

constexpr int kExitOk = 0;
constexpr int kExitViolation = 1;
constexpr int kExitConfig = 2;

// "-" selects stdout.
class OutputTarget {
 public:
  explicit OutputTarget(const std::string& path) {
    if (path == "-") {
      os_ = &std::cout;
    } else {
      file_.open(path);
      if (!file_) throw ConfigError("cannot open output file: " + path);
      os_ = &file_;
    }
  }
  std::ostream& stream() { return *os_; }

 private:
  std::ofstream file_;
  std::ostream* os_ = nullptr;
};

// Work-stealing across independent indices; slot-indexed results keep the
// output order deterministic regardless of scheduling.
template <typename Fn>
void parallel_for(int count, int jobs, Fn&& fn) {
  const int workers = std::min(jobs, count);
  if (workers <= 1) {
    for (int i = 0; i < count; ++i) fn(i);
    return;
  }
  std::atomic<int> next{0};
  std::vector<std::exception_ptr> errors(workers);
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (int w = 0; w < workers; ++w) {
    pool.emplace_back([&, w]() {
      try {
        for (int i = next++; i < count; i = next++) fn(i);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& th : pool) th.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

template <typename Real>
double max_abs_diff(const std::vector<std::vector<Real>>& a,
                    const std::vector<std::vector<Real>>& b) {
  double m = 0.0;
  for (std::size_t t = 0; t < a.size(); ++t) {
    for (std::size_t p = 0; p < a[t].size(); ++p) {
      const double d = std::fabs(static_cast<double>(a[t][p]) -
                                 static_cast<double>(b[t][p]));
      if (d > m || std::isnan(d)) m = d;
    }
  }
  return m;
}

// Compact %g formatting for identifier-like numeric columns (a_spec).
std::string compact(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%g", v);
  return buf;
}

struct CommonOpts {
  std::uint64_t seed = 42;
  std::string precision = "double";
  std::string out = "-";
  int jobs = 1;
  std::string config;
};

void add_common(CLI::App* cmd, CommonOpts& opts, bool with_precision = true,
                bool with_jobs = true) {
  cmd->add_option("--seed", opts.seed, "Master seed; all randomness derives from it");
  cmd->add_option("--out", opts.out, "CSV output path, '-' for stdout")
      ->capture_default_str();
  if (with_precision) {
    cmd->add_option("--precision", opts.precision,
                    "Arithmetic precision for the checked paths")
        ->check(CLI::IsMember({"single", "double"}))
        ->envname("GFSSM_PRECISION")
        ->capture_default_str();
  }
  if (with_jobs) {
    cmd->add_option("--jobs", opts.jobs,
                    "Parallelism across independent instances")
        ->check(CLI::Range(1, 1024));
  }
  cmd->add_option("--config", opts.config,
                  "Flat key = value config file; explicit flags win");
}

std::string trim(const std::string& s) {
  std::size_t b = s.find_first_not_of(" \t\r");
  std::size_t e = s.find_last_not_of(" \t\r");
  if (b == std::string::npos) return "";
  return s.substr(b, e - b + 1);
}

// Flat `key = value` config: each key maps to the flag --key of the parsed
// subcommand. File values apply only where no explicit flag was given, so
// flags merge over the file.
std::vector<std::string> merge_config_args(std::vector<std::string> args) {
  std::string path;
  for (std::size_t i = 0; i + 1 < args.size(); ++i) {
    if (args[i] == "--config") path = args[i + 1];
  }
  for (const std::string& a : args) {
    if (a.rfind("--config=", 0) == 0) path = a.substr(9);
  }
  if (path.empty()) return args;

  std::ifstream file(path);
  if (!file) throw ConfigError("cannot open config file: " + path);
  std::string line;
  int lineno = 0;
  while (std::getline(file, line)) {
    ++lineno;
    const std::string stripped = trim(line);
    if (stripped.empty() || stripped[0] == '#') continue;
    const std::size_t eq = stripped.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("config file " + path + ":" + std::to_string(lineno) +
                        ": expected key = value");
    }
    const std::string key = trim(stripped.substr(0, eq));
    const std::string value = trim(stripped.substr(eq + 1));
    if (key.empty()) {
      throw ConfigError("config file " + path + ":" + std::to_string(lineno) +
                        ": empty key");
    }
    const std::string flag = "--" + key;
    bool given = false;
    for (const std::string& a : args) {
      if (a == flag || a.rfind(flag + "=", 0) == 0) {
        given = true;
        break;
      }
    }
    if (!given) {
      args.push_back(flag);
      args.push_back(value);
    }
  }
  return args;
}

double default_tol(const std::string& precision, double requested) {
  if (requested > 0.0) return requested;
  return precision == "single" ? 1e-4 : 1e-12;
}

// ---------------------------------------------------------------------------
// equiv-check
// ---------------------------------------------------------------------------

struct EquivOpts {
  int T = 32, N = 8, P = 4, Q = 4, n = 4;
  int runs = 100;
  double tol = -1.0;
};

struct EquivRow {
  int T, N, P;
  double err_ssd = 0.0;
  double err_gfssm = 0.0;
};

template <typename Real>
EquivRow equiv_one(std::uint64_t seed, const EquivOpts& o) {
  Rng rng(seed);
  InstanceDims d;
  d.seq_len = 1 + static_cast<int>(rng.uniform_int(o.T));
  d.state_dim = 1 + static_cast<int>(rng.uniform_int(o.N));
  d.head_dim = 1 + static_cast<int>(rng.uniform_int(o.P));
  d.group_count = o.Q;
  d.fir_order = o.n;
  const GfssmInstance<double> inst64 = make_random_instance(rng, d);

  GfssmInstance<Real> inst;
  if constexpr (std::is_same_v<Real, float>) {
    inst = to_single(inst64);
  } else {
    inst = inst64;
  }

  EquivRow row{d.seq_len, d.state_dim, d.head_dim, 0.0, 0.0};
  {
    const auto scan = ssd_scan_recurrent(
        inst.base, Matrix<Real>(d.state_dim, d.head_dim));
    const auto mat = ssd_matrix_form(inst.base);
    row.err_ssd = max_abs_diff(scan.y, mat);
  }
  {
    const auto h0 = GroupedHiddenState<Real>::zeros(o.Q, d.state_dim, d.head_dim);
    const auto scan = grouped_scan(inst, h0);
    const auto mat = gfssm_matrix_form(inst);
    row.err_gfssm = max_abs_diff(scan.y, mat);

    if (o.Q == 1 && o.n == 1) {
      // Reduction path: identity tap must reproduce the plain scan.
      GfssmInstance<Real> reduced = inst;
      reduced.fir.taps[0] = Real(1);
      const auto gscan = grouped_scan(reduced, h0);
      const auto pscan = ssd_scan_recurrent(
          reduced.base, Matrix<Real>(d.state_dim, d.head_dim));
      row.err_gfssm = std::max(row.err_gfssm, max_abs_diff(gscan.y, pscan.y));
    }
  }
  return row;
}

int run_equiv_check(const EquivOpts& o, const CommonOpts& c) {
  if (o.runs < 1) throw ConfigError("equiv-check: --runs must be >= 1");
  const double tol = default_tol(c.precision, o.tol);
  const bool single = c.precision == "single";

  std::vector<EquivRow> rows(o.runs);
  parallel_for(o.runs, c.jobs, [&](int i) {
    rows[i] = single ? equiv_one<float>(c.seed + i, o)
                     : equiv_one<double>(c.seed + i, o);
  });

  OutputTarget out(c.out);
  CsvWriter csv(out.stream());
  csv.row({"instance", "T", "N", "P", "Q", "n", "max_err_ssd", "max_err_gfssm",
           "pass"});
  double worst = 0.0;
  for (int i = 0; i < o.runs; ++i) {
    const EquivRow& r = rows[i];
    const double err = std::max(r.err_ssd, r.err_gfssm);
    worst = std::max(worst, err);
    csv.row({CsvWriter::field(i), CsvWriter::field(r.T), CsvWriter::field(r.N),
             CsvWriter::field(r.P), CsvWriter::field(o.Q), CsvWriter::field(o.n),
             CsvWriter::field(r.err_ssd), CsvWriter::field(r.err_gfssm),
             err <= tol ? "1" : "0"});
  }
  std::cerr << "equiv-check: " << o.runs << " instances, max error " << worst
            << " (tolerance " << tol << ")\n";
  return worst <= tol ? kExitOk : kExitViolation;
}

// ---------------------------------------------------------------------------
// stability
// ---------------------------------------------------------------------------

struct StabilityOpts {
  std::vector<int> T = {256, 1024};
  std::vector<double> a = {0.9, 0.99, 0.999};
  std::vector<int> Q = {1, 4};
  int n = 4;
  int N = 1, P = 1;
  bool explosive = false;
};

struct StabilityRow {
  int T, Q;
  double a;
  LVariantStats stats;
  double max_abs_div, max_rel_div;
};

int run_stability(const StabilityOpts& o, const CommonOpts& c) {
  for (double a : o.a) {
    if (!(a > 0.0)) throw ConfigError("stability: decay values must be > 0");
    if (a > 1.0 && !o.explosive) {
      throw ConfigError("stability: decay > 1 requires --explosive");
    }
  }
  for (int T : o.T) {
    if (T < 2) throw ConfigError("stability: --T entries must be >= 2");
    if (o.explosive && T > 4096) {
      throw ConfigError("stability: explosive sweeps are capped at T = 4096");
    }
  }
  if (o.T.empty() || o.a.empty() || o.Q.empty()) {
    throw ConfigError("stability: empty sweep list");
  }

  struct Point {
    double a;
    int T, Q;
  };
  std::vector<Point> points;
  for (double a : o.a) {
    for (int T : o.T) {
      for (int Q : o.Q) points.push_back({a, T, Q});
    }
  }

  std::vector<StabilityRow> rows(points.size());
  parallel_for(static_cast<int>(points.size()), c.jobs, [&](int i) {
    const Point& pt = points[i];
    Rng rng(c.seed + i);

    GfssmInstance<double> inst;
    inst.cfg.group_count = pt.Q;
    inst.cfg.fir_order = o.n;
    inst.fir = FirCoefficients<double>::identity_init(o.n);
    inst.base.seq_len = pt.T;
    inst.base.state_dim = o.N;
    inst.base.head_dim = o.P;
    inst.base.decay.assign(pt.T, pt.a);
    auto fill = [&rng](std::vector<std::vector<double>>& seq, int len, int dim) {
      seq.assign(len, std::vector<double>(dim));
      for (auto& v : seq) {
        for (double& e : v) e = rng.uniform(-1.0, 1.0);
      }
    };
    fill(inst.base.B, pt.T, o.N);
    fill(inst.base.C, pt.T, o.N);
    fill(inst.base.x, pt.T, o.P);
    inst.prompt_taps.assign(o.n - 1, Matrix<double>(o.N, o.P));

    const ProductProfile profile = product_profile(inst.base.decay, pt.Q);
    const DivergenceReport div = precision_divergence(inst);

    StabilityRow& row = rows[i];
    row.T = pt.T;
    row.Q = pt.Q;
    row.a = pt.a;
    if (pt.Q == 1) {
      row.stats = profile.plain;
      row.max_abs_div = div.plain.max_abs;
      row.max_rel_div = div.plain.max_rel;
    } else {
      row.stats = profile.grouped;
      row.max_abs_div = div.grouped.max_abs;
      row.max_rel_div = div.grouped.max_rel;
    }
  });

  OutputTarget out(c.out);
  CsvWriter csv(out.stream());
  csv.row({"T", "Q", "n", "a_spec", "variant", "precision", "min_nonzero",
           "max_entry", "log10_range", "max_abs_div", "max_rel_div"});
  for (const StabilityRow& r : rows) {
    csv.row({CsvWriter::field(r.T), CsvWriter::field(r.Q), CsvWriter::field(o.n),
             compact(r.a), r.Q == 1 ? "plain" : "grouped", "single",
             CsvWriter::field(std::pow(10.0, r.stats.log10_min_nonzero)),
             CsvWriter::field(std::pow(10.0, r.stats.log10_max)),
             CsvWriter::field(r.stats.log10_dynamic_range),
             CsvWriter::field(r.max_abs_div), CsvWriter::field(r.max_rel_div)});
  }
  std::cerr << "stability: " << rows.size() << " sweep points\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------
// grad-check
// ---------------------------------------------------------------------------

struct GradOpts {
  int runs = 20;
  int T = 12, N = 4, P = 2, Q = 4, n = 4;
  double eps = 1e-5;
  double tol = 1e-5;
};

double grad_error(double analytic, double numeric) {
  const double aa = std::fabs(analytic);
  const double an = std::fabs(numeric);
  if (aa < 1e-8 && an < 1e-8) return std::fabs(analytic - numeric);
  return std::fabs(analytic - numeric) / std::max(aa, an);
}

int run_grad_check(const GradOpts& o, const CommonOpts& c) {
  if (o.runs < 1) throw ConfigError("grad-check: --runs must be >= 1");
  if (!(o.eps > 0.0)) throw ConfigError("grad-check: --eps must be > 0");
  if (o.T < 2) throw ConfigError("grad-check: --T must be >= 2");

  constexpr ParamBlock kBlocks[] = {
      ParamBlock::Decay,  ParamBlock::InProj,  ParamBlock::OutProj,
      ParamBlock::Input,  ParamBlock::Taps,    ParamBlock::Prompts,
      ParamBlock::PromptB};

  struct Row {
    int T;
    double err;
  };
  std::vector<Row> rows(o.runs);
  parallel_for(o.runs, c.jobs, [&](int i) {
    Rng rng(c.seed + i);
    InstanceDims d;
    d.seq_len = 2 + static_cast<int>(rng.uniform_int(o.T - 1));
    d.state_dim = o.N;
    d.head_dim = o.P;
    d.group_count = o.Q;
    d.fir_order = o.n;
    const GfssmInstance<double> inst = make_random_instance(rng, d);
    const PromptBank<double> bank = make_random_bank(rng, o.Q, o.N, o.P);
    const auto upstream = make_random_upstream(rng, d.seq_len, o.P);

    const LayerGradients<double> grads = gfssm_backward(inst, bank, upstream);
    double worst = 0.0;
    for (ParamBlock block : kBlocks) {
      const auto analytic = flatten_block(grads, block);
      const auto numeric = finite_diff_grad(block, inst, bank, upstream, o.eps);
      for (std::size_t k = 0; k < analytic.size(); ++k) {
        worst = std::max(worst, grad_error(analytic[k], numeric[k]));
      }
    }
    rows[i] = {d.seq_len, worst};
  });

  OutputTarget out(c.out);
  CsvWriter csv(out.stream());
  csv.row({"run", "T", "N", "P", "Q", "n", "max_rel_err", "pass"});
  double worst = 0.0;
  for (int i = 0; i < o.runs; ++i) {
    worst = std::max(worst, rows[i].err);
    csv.row({CsvWriter::field(i), CsvWriter::field(rows[i].T),
             CsvWriter::field(o.N), CsvWriter::field(o.P), CsvWriter::field(o.Q),
             CsvWriter::field(o.n), CsvWriter::field(rows[i].err),
             rows[i].err < o.tol ? "1" : "0"});
  }
  std::cerr << "grad-check: max relative error " << worst << " over " << o.runs
            << " instances (tolerance " << o.tol << ")\n";
  return worst < o.tol ? kExitOk : kExitViolation;
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

struct TrainOpts {
  std::string task = "selective_copy";
  int vocab = 8;
  int T = 32;
  int Q = 4, n = 4;
  int steps = 2000;
  double lr = 0.5;
  double clip = 1.0;
  int state_dim = 8;
  int embed_dim = 12;
  int dataset = 32;
  std::string metrics = "";
};

int run_train(const TrainOpts& o, const CommonOpts& c) {
  ToyTask task;
  task.kind = o.task == "selective_copy" ? ToyTask::Kind::SelectiveCopy
                                         : ToyTask::Kind::DelayedRecall;
  task.vocab = o.vocab;
  task.seq_len = o.T;
  task.seed = c.seed;

  TrainConfig cfg;
  cfg.steps = o.steps;
  cfg.lr = o.lr;
  cfg.clip_norm = o.clip;
  cfg.group_count = o.Q;
  cfg.fir_order = o.n;
  cfg.state_dim = o.state_dim;
  cfg.embed_dim = o.embed_dim;
  cfg.dataset_size = o.dataset;
  cfg.seed = c.seed;

  const TrainStats stats = train_toy(task, cfg);

  {
    OutputTarget out(c.out);
    CsvWriter csv(out.stream());
    csv.row({"step", "loss", "grad_norm"});
    for (std::size_t s = 0; s < stats.loss.size(); ++s) {
      csv.row({CsvWriter::field(static_cast<long long>(s)),
               CsvWriter::field(stats.loss[s]),
               CsvWriter::field(stats.grad_norm[s])});
    }
  }

  nlohmann::ordered_json metrics;
  metrics["schema_version"] = 1;
  metrics["task"] = o.task;
  metrics["vocab"] = o.vocab;
  metrics["T"] = o.T;
  metrics["Q"] = o.Q;
  metrics["n"] = o.n;
  metrics["steps"] = o.steps;
  metrics["lr"] = o.lr;
  metrics["seed"] = c.seed;
  metrics["initial_loss"] = stats.initial_loss;
  metrics["final_loss"] = stats.final_loss;
  metrics["loss_ratio"] =
      stats.initial_loss != 0.0 ? stats.final_loss / stats.initial_loss : 0.0;
  metrics["eval_accuracy"] = stats.eval_accuracy;
  metrics["diverged"] = stats.diverged;
  metrics["diverged_step"] = stats.diverged_step;

  if (o.metrics.empty() || o.metrics == "-") {
    std::cout << metrics.dump(2) << "\n";
  } else {
    std::ofstream mf(o.metrics);
    if (!mf) throw ConfigError("cannot open metrics file: " + o.metrics);
    mf << metrics.dump(2) << "\n";
  }

  if (stats.diverged) {
    std::cerr << "train: diverged (non-finite loss) at step "
              << stats.diverged_step << "\n";
    return kExitViolation;
  }
  std::cerr << "train: loss " << stats.initial_loss << " -> "
            << stats.final_loss << ", eval accuracy " << stats.eval_accuracy
            << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------
// stream-check
// ---------------------------------------------------------------------------

struct StreamOpts {
  int T = 96;
  std::vector<int> chunk = {16};
  int Q = 4, n = 4, N = 4, P = 2;
  double tol = -1.0;
};

template <typename Real>
std::vector<double> stream_errors(const GfssmInstance<Real>& inst,
                                  const PromptBank<Real>& bank,
                                  const std::vector<int>& chunks) {
  const auto mono = init_fresh(bank, inst);
  std::vector<double> errs;
  errs.reserve(chunks.size());
  for (int chunk : chunks) {
    const auto streamed = stream(inst, bank, chunk);
    errs.push_back(max_abs_diff(streamed, mono.y));
  }
  return errs;
}

int run_stream_check(const StreamOpts& o, const CommonOpts& c) {
  if (o.T < 1) throw ConfigError("stream-check: --T must be >= 1");
  for (int chunk : o.chunk) {
    if (chunk < 1) throw ConfigError("stream-check: chunk sizes must be >= 1");
  }
  const double tol = default_tol(c.precision, o.tol);

  Rng rng(c.seed);
  InstanceDims d;
  d.seq_len = o.T;
  d.state_dim = o.N;
  d.head_dim = o.P;
  d.group_count = o.Q;
  d.fir_order = o.n;
  const GfssmInstance<double> inst64 = make_random_instance(rng, d);
  const PromptBank<double> bank64 = make_random_bank(rng, o.Q, o.N, o.P);

  std::vector<double> errs;
  if (c.precision == "single") {
    const GfssmInstance<float> inst = to_single(inst64);
    PromptBank<float> bank;
    for (const auto& v : bank64.prompts) {
      bank.prompts.emplace_back(v.begin(), v.end());
    }
    for (const auto& v : bank64.prompt_B) {
      bank.prompt_B.emplace_back(v.begin(), v.end());
    }
    errs = stream_errors(inst, bank, o.chunk);
  } else {
    errs = stream_errors(inst64, bank64, o.chunk);
  }

  OutputTarget out(c.out);
  CsvWriter csv(out.stream());
  csv.row({"chunk", "T", "Q", "n", "N", "P", "max_abs_err", "pass"});
  double worst = 0.0;
  for (std::size_t i = 0; i < o.chunk.size(); ++i) {
    worst = std::max(worst, errs[i]);
    csv.row({CsvWriter::field(o.chunk[i]), CsvWriter::field(o.T),
             CsvWriter::field(o.Q), CsvWriter::field(o.n), CsvWriter::field(o.N),
             CsvWriter::field(o.P), CsvWriter::field(errs[i]),
             errs[i] <= tol ? "1" : "0"});
  }
  std::cerr << "stream-check: max divergence " << worst << " (tolerance " << tol
            << ")\n";
  return worst <= tol ? kExitOk : kExitViolation;
}

// ---------------------------------------------------------------------------
// bench
// ---------------------------------------------------------------------------

struct BenchOpts {
  std::vector<int> T = {64, 256, 1024};
  int Q = 4, n = 4, N = 16, P = 8;
};

int run_bench_cmd(const BenchOpts& o, const CommonOpts& c) {
  const BenchResult result = run_bench(o.T, o.Q, o.n, o.N, o.P, c.seed);

  OutputTarget out(c.out);
  CsvWriter csv(out.stream());
  csv.row({"path", "T", "reps", "sec_per_call"});
  for (const BenchPoint& p : result.points) {
    csv.row({p.path, CsvWriter::field(p.seq_len), CsvWriter::field(p.reps),
             CsvWriter::field(p.sec_per_call)});
  }
  std::cerr << "bench: scan exponent " << result.scan_exponent
            << ", matrix exponent " << result.matrix_exponent << "\n";
  return kExitOk;
}

}  // namespace

int run_cli(std::vector<std::string> args) {
  CLI::App app{"Grouped FIR state-space scan laboratory"};
  app.require_subcommand(1);

  EquivOpts equiv;
  CommonOpts equiv_common;
  CLI::App* equiv_cmd = app.add_subcommand(
      "equiv-check", "Cross-form equivalence of scan and materialized paths");
  equiv_cmd->add_option("--T", equiv.T, "Max sequence length")->check(CLI::Range(1, 8192));
  equiv_cmd->add_option("--N", equiv.N, "Max state dimension")->check(CLI::Range(1, 512));
  equiv_cmd->add_option("--P", equiv.P, "Max head dimension")->check(CLI::Range(1, 512));
  equiv_cmd->add_option("--Q", equiv.Q, "Group count")->check(CLI::Range(1, 512));
  equiv_cmd->add_option("--n", equiv.n, "FIR order")->check(CLI::Range(1, 64));
  equiv_cmd->add_option("--runs", equiv.runs, "Instances to check");
  equiv_cmd->add_option("--tol", equiv.tol, "Tolerance (default by precision)");
  add_common(equiv_cmd, equiv_common);

  StabilityOpts stab;
  CommonOpts stab_common;
  CLI::App* stab_cmd = app.add_subcommand(
      "stability", "Dynamic-range profile and fp32-vs-fp64 divergence sweep");
  stab_cmd->add_option("--T", stab.T, "Sequence lengths")->delimiter(',');
  stab_cmd->add_option("--a", stab.a, "Uniform decay values")->delimiter(',');
  stab_cmd->add_option("--Q", stab.Q, "Group counts")->delimiter(',');
  stab_cmd->add_option("--n", stab.n, "FIR order")->check(CLI::Range(1, 64));
  stab_cmd->add_option("--N", stab.N, "State dimension")->check(CLI::Range(1, 512));
  stab_cmd->add_option("--P", stab.P, "Head dimension")->check(CLI::Range(1, 512));
  stab_cmd->add_flag("--explosive", stab.explosive,
                     "Permit decay > 1 (sequence length capped)");
  add_common(stab_cmd, stab_common, /*with_precision=*/false);

  GradOpts grad;
  CommonOpts grad_common;
  CLI::App* grad_cmd = app.add_subcommand(
      "grad-check", "Analytic backward pass vs central finite differences");
  grad_cmd->add_option("--runs", grad.runs, "Instances to check");
  grad_cmd->add_option("--T", grad.T, "Max sequence length")->check(CLI::Range(2, 256));
  grad_cmd->add_option("--N", grad.N, "State dimension")->check(CLI::Range(1, 64));
  grad_cmd->add_option("--P", grad.P, "Head dimension")->check(CLI::Range(1, 64));
  grad_cmd->add_option("--Q", grad.Q, "Group count")->check(CLI::Range(1, 64));
  grad_cmd->add_option("--n", grad.n, "FIR order")->check(CLI::Range(1, 16));
  grad_cmd->add_option("--eps", grad.eps, "Finite-difference step");
  grad_cmd->add_option("--tol", grad.tol, "Max relative error accepted");
  add_common(grad_cmd, grad_common, /*with_precision=*/false);

  TrainOpts train;
  CommonOpts train_common;
  CLI::App* train_cmd = app.add_subcommand(
      "train", "Toy-task training with the hand-derived backward pass");
  train_cmd->add_option("--task", train.task, "Synthetic task")
      ->check(CLI::IsMember({"selective_copy", "delayed_recall"}));
  train_cmd->add_option("--vocab", train.vocab, "Vocabulary size")->check(CLI::Range(4, 4096));
  train_cmd->add_option("--T", train.T, "Sequence length")->check(CLI::Range(2, 4096));
  train_cmd->add_option("--Q", train.Q, "Group count")->check(CLI::Range(1, 64));
  train_cmd->add_option("--n", train.n, "FIR order")->check(CLI::Range(1, 16));
  train_cmd->add_option("--steps", train.steps, "Gradient steps");
  train_cmd->add_option("--lr", train.lr, "Learning rate");
  train_cmd->add_option("--clip", train.clip, "Gradient-norm clip, <= 0 disables");
  train_cmd->add_option("--state-dim", train.state_dim, "State dimension");
  train_cmd->add_option("--embed-dim", train.embed_dim, "Embedding dimension");
  train_cmd->add_option("--dataset", train.dataset, "Fixed training set size");
  train_cmd->add_option("--metrics", train.metrics,
                        "JSON metrics path, '-' or empty for stdout");
  add_common(train_cmd, train_common, /*with_precision=*/false,
             /*with_jobs=*/false);

  StreamOpts stream_opts;
  CommonOpts stream_common;
  CLI::App* stream_cmd = app.add_subcommand(
      "stream-check", "Chunked streaming vs monolithic processing");
  stream_cmd->add_option("--T", stream_opts.T, "Sequence length")->check(CLI::Range(1, 8192));
  stream_cmd->add_option("--chunk", stream_opts.chunk, "Chunk sizes")->delimiter(',');
  stream_cmd->add_option("--Q", stream_opts.Q, "Group count")->check(CLI::Range(1, 64));
  stream_cmd->add_option("--n", stream_opts.n, "FIR order")->check(CLI::Range(1, 16));
  stream_cmd->add_option("--N", stream_opts.N, "State dimension")->check(CLI::Range(1, 512));
  stream_cmd->add_option("--P", stream_opts.P, "Head dimension")->check(CLI::Range(1, 512));
  stream_cmd->add_option("--tol", stream_opts.tol, "Tolerance (default by precision)");
  add_common(stream_cmd, stream_common, /*with_precision=*/true,
             /*with_jobs=*/false);

  BenchOpts bench;
  CommonOpts bench_common;
  CLI::App* bench_cmd = app.add_subcommand(
      "bench", "Scan vs materialized-form wall time across sequence lengths");
  bench_cmd->add_option("--T", bench.T, "Sequence lengths")->delimiter(',');
  bench_cmd->add_option("--Q", bench.Q, "Group count")->check(CLI::Range(1, 64));
  bench_cmd->add_option("--n", bench.n, "FIR order")->check(CLI::Range(1, 16));
  bench_cmd->add_option("--N", bench.N, "State dimension")->check(CLI::Range(1, 512));
  bench_cmd->add_option("--P", bench.P, "Head dimension")->check(CLI::Range(1, 512));
  add_common(bench_cmd, bench_common, /*with_precision=*/false,
             /*with_jobs=*/false);

  try {
    args = merge_config_args(std::move(args));
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitConfig;
  }

  std::vector<const char*> argv;
  argv.reserve(args.size() + 1);
  argv.push_back("gfssm");
  for (const std::string& a : args) argv.push_back(a.c_str());

  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitConfig;
  }

  try {
    if (equiv_cmd->parsed()) return run_equiv_check(equiv, equiv_common);
    if (stab_cmd->parsed()) return run_stability(stab, stab_common);
    if (grad_cmd->parsed()) return run_grad_check(grad, grad_common);
    if (train_cmd->parsed()) return run_train(train, train_common);
    if (stream_cmd->parsed()) return run_stream_check(stream_opts, stream_common);
    if (bench_cmd->parsed()) return run_bench_cmd(bench, bench_common);
  } catch (const std::invalid_argument& e) {  // ConfigError, ShapeError, ...
    std::cerr << "error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitConfig;
  }
  return kExitConfig;
}

}  // namespace gfssm
