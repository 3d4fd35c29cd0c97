#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "gfssm/gfssm_kernel.hpp"
#include "gfssm/instance_gen.hpp"
#include "gfssm/rng.hpp"
#include "gfssm/ssd_core.hpp"

using namespace gfssm;

namespace {

// Independent entry rule for the tap-j mask: input s deposits into group
// (s+j) mod Q at step s+j and is then multiplied by a_tau at each later step
// of that group. Evaluated by explicit enumeration of tau.
double oracle_L_entry(const std::vector<double>& a, int Q, int j, int t, int s) {
  const int deposit = s + j;
  if (t < deposit || deposit < 0) return 0.0;
  const int group = deposit % Q;
  double prod = 1.0;
  for (int tau = deposit + 1; tau <= t; ++tau) {
    if (tau % Q == group) prod *= a[tau];
  }
  return prod;
}

// Independent output oracle for zero history: sums every (tap, source) path
// without either production code path.
std::vector<std::vector<double>> oracle_gfssm(const GfssmInstance<double>& inst) {
  const int T = inst.base.seq_len;
  const int P = inst.base.head_dim;
  std::vector<std::vector<double>> y(T, std::vector<double>(P, 0.0));
  for (int t = 0; t < T; ++t) {
    for (int j = 0; j < inst.cfg.fir_order; ++j) {
      for (int s = 0; s <= t; ++s) {
        const double l =
            oracle_L_entry(inst.base.decay, inst.cfg.group_count, j, t, s);
        if (l == 0.0) continue;
        const double w = inst.fir.taps[j] * l * dot(inst.base.C[t], inst.base.B[s]);
        for (int p = 0; p < P; ++p) y[t][p] += w * inst.base.x[s][p];
      }
    }
  }
  return y;
}

double max_abs_diff(const std::vector<std::vector<double>>& a,
                    const std::vector<std::vector<double>>& b) {
  double m = 0.0;
  REQUIRE(a.size() == b.size());
  for (std::size_t t = 0; t < a.size(); ++t) {
    for (std::size_t p = 0; p < a[t].size(); ++p) {
      m = std::max(m, std::fabs(a[t][p] - b[t][p]));
    }
  }
  return m;
}

GroupedHiddenState<double> zero_state(const GfssmInstance<double>& inst) {
  return GroupedHiddenState<double>::zeros(
      inst.cfg.group_count, inst.base.state_dim, inst.base.head_dim);
}

}  // namespace

TEST_CASE("fir_filter: identity taps reproduce the input products exactly") {
  Rng rng(41);
  InstanceDims d;
  d.seq_len = 6;
  d.group_count = 4;
  d.fir_order = 4;
  GfssmInstance<double> inst = make_random_instance(rng, d);
  inst.fir = FirCoefficients<double>::identity_init(4);

  const auto s = fir_filter(inst);
  for (int t = 0; t < 6; ++t) {
    for (int n = 0; n < d.state_dim; ++n) {
      for (int p = 0; p < d.head_dim; ++p) {
        CHECK(s[t](n, p) == inst.base.B[t][n] * inst.base.x[t][p]);
      }
    }
  }
}

TEST_CASE("fir_filter: a pure delay tap shifts the products by one step") {
  Rng rng(43);
  InstanceDims d;
  d.seq_len = 5;
  GfssmInstance<double> inst = make_random_instance(rng, d);
  inst.fir.taps = {0.0, 1.0, 0.0, 0.0};

  const auto s = fir_filter(inst);
  for (int n = 0; n < d.state_dim; ++n) {
    for (int p = 0; p < d.head_dim; ++p) {
      CHECK(s[0](n, p) == 0.0);
      for (int t = 1; t < 5; ++t) {
        CHECK(s[t](n, p) == inst.base.B[t - 1][n] * inst.base.x[t - 1][p]);
      }
    }
  }
}

TEST_CASE("fir_filter: random taps match a direct convolution sum") {
  Rng rng(47);
  InstanceDims d;
  d.seq_len = 8;
  const GfssmInstance<double> inst = make_random_instance(rng, d);

  const auto s = fir_filter(inst);
  for (int t = 0; t < 8; ++t) {
    for (int n = 0; n < d.state_dim; ++n) {
      for (int p = 0; p < d.head_dim; ++p) {
        double expect = 0.0;
        for (int j = 0; j < 4; ++j) {
          if (t - j < 0) continue;  // zero taps in this instance
          expect += inst.fir.taps[j] * inst.base.B[t - j][n] * inst.base.x[t - j][p];
        }
        CHECK(s[t](n, p) == doctest::Approx(expect).epsilon(1e-14));
      }
    }
  }
}

TEST_CASE("fir_filter: negative indices read the recorded history taps") {
  Rng rng(53);
  InstanceDims d;
  d.seq_len = 2;
  GfssmInstance<double> inst = make_random_instance(rng, d);
  for (int m = 1; m <= 3; ++m) {
    for (auto& v : inst.prompt_taps[m - 1].flat()) v = 10.0 * m;
  }
  inst.fir.taps = {0.0, 0.0, 0.0, 1.0};  // only tap 3 active

  const auto s = fir_filter(inst);
  // t=0 reads index -3 -> taps[2]; t=1 reads index -2 -> taps[1]
  CHECK(s[0](0, 0) == 30.0);
  CHECK(s[1](0, 0) == 20.0);
}

TEST_CASE("grouped_scan: Q=1, n=1, identity tap reduces to the plain scan") {
  Rng rng(59);
  InstanceDims d;
  d.seq_len = 16;
  d.group_count = 1;
  d.fir_order = 1;
  GfssmInstance<double> inst = make_random_instance(rng, d);
  inst.fir.taps = {1.0};

  const auto grouped = grouped_scan(inst, zero_state(inst));
  const auto plain = ssd_scan_recurrent(
      inst.base, Matrix<double>(d.state_dim, d.head_dim));
  CHECK(max_abs_diff(grouped.y, plain.y) <= 1e-15);
  for (int n = 0; n < d.state_dim; ++n) {
    for (int p = 0; p < d.head_dim; ++p) {
      CHECK(grouped.h_final.groups[0](n, p) ==
            doctest::Approx(plain.h_final(n, p)).epsilon(1e-15));
    }
  }
}

TEST_CASE("grouped_scan: two groups under unit decay still give prefix sums") {
  GfssmInstance<double> inst;
  inst.cfg.group_count = 2;
  inst.cfg.fir_order = 1;
  inst.fir.taps = {1.0};
  inst.base.seq_len = 6;
  inst.base.state_dim = 1;
  inst.base.head_dim = 1;
  inst.base.decay.assign(6, 1.0);
  inst.base.B.assign(6, {1.0});
  inst.base.C.assign(6, {1.0});
  inst.base.x = {{0.5}, {1.0}, {-0.25}, {2.0}, {0.125}, {-1.0}};

  const auto r = grouped_scan(inst, zero_state(inst));
  double acc = 0.0;
  for (int t = 0; t < 6; ++t) {
    acc += inst.base.x[t][0];
    CHECK(r.y[t][0] == acc);
  }
  // The split itself is visible in the final states: group 0 holds the even
  // steps, group 1 the odd ones.
  CHECK(r.h_final.groups[0](0, 0) == 0.5 - 0.25 + 0.125);
  CHECK(r.h_final.groups[1](0, 0) == 1.0 + 2.0 - 1.0);
}

TEST_CASE("grouped_scan matches the matrix form and the path-sum oracle") {
  Rng rng(61);
  InstanceDims d;
  d.seq_len = 16;
  const GfssmInstance<double> inst = make_random_instance(rng, d);

  const auto scan = grouped_scan(inst, zero_state(inst));
  const auto mat = gfssm_matrix_form(inst);
  const auto oracle = oracle_gfssm(inst);
  CHECK(max_abs_diff(scan.y, mat) <= 1e-12);
  CHECK(max_abs_diff(scan.y, oracle) <= 1e-12);
}

TEST_CASE("build_L_group: reductions and hand-enumerated entries") {
  Rng rng(67);
  std::vector<double> a(6);
  for (double& v : a) v = rng.uniform_pos01();

  SUBCASE("tap 0 with one group is the plain mask") {
    const auto L0 = build_L_group(a, 1, 0);
    const auto Lp = build_L_plain(a);
    for (int t = 0; t < 6; ++t) {
      for (int s = 0; s < 6; ++s) {
        CHECK(L0(t, s) == Lp(t, s));
      }
    }
  }

  SUBCASE("tap 0, two groups, explicit small entries") {
    const std::vector<double> a4(a.begin(), a.begin() + 4);
    const auto L = build_L_group(a4, 2, 0);
    // s=0 deposits into group 0; only tau=2 in (0,3] matches the group.
    CHECK(L(3, 0) == a4[2]);
    // s=1 deposits into group 1; only tau=3 matches.
    CHECK(L(3, 1) == a4[3]);
    CHECK(L(2, 0) == a4[2]);
    CHECK(L(1, 0) == 1.0);
    CHECK(L(0, 0) == 1.0);
    CHECK(L(0, 1) == 0.0);  // strictly upper
  }

  SUBCASE("tap j is a column shift of tap 0") {
    for (int Q : {1, 2, 3}) {
      const auto L0 = build_L_group(a, Q, 0);
      for (int j : {1, 2}) {
        const auto Lj = build_L_group(a, Q, j);
        for (int t = 0; t < 6; ++t) {
          for (int s = 0; s + j <= t; ++s) {
            CHECK(Lj(t, s) == L0(t, s + j));
          }
          for (int s = t - j + 1; s < 6; ++s) {
            if (s >= 0) CHECK(Lj(t, s) == 0.0);
          }
        }
      }
    }
  }

  SUBCASE("entries match the enumeration oracle") {
    for (int Q : {1, 2, 4}) {
      for (int j : {0, 1, 3}) {
        const auto L = build_L_group(a, Q, j);
        for (int t = 0; t < 6; ++t) {
          for (int s = 0; s < 6; ++s) {
            CHECK(L(t, s) ==
                  doctest::Approx(oracle_L_entry(a, Q, j, t, s)).epsilon(1e-15));
          }
        }
      }
    }
  }
}

TEST_CASE("build_L_gfssm: trivial reductions") {
  Rng rng(71);
  std::vector<double> a(7);
  for (double& v : a) v = rng.uniform_pos01();

  SUBCASE("one group, identity tap equals the plain mask") {
    GroupConfig cfg{1, 1};
    const auto L = build_L_gfssm(a, cfg, FirCoefficients<double>::identity_init(1));
    const auto Lp = build_L_plain(a);
    for (int t = 0; t < 7; ++t) {
      for (int s = 0; s < 7; ++s) CHECK(L(t, s) == Lp(t, s));
    }
  }

  SUBCASE("all-zero taps give the zero matrix") {
    GroupConfig cfg{4, 4};
    FirCoefficients<double> fir;
    fir.taps.assign(4, 0.0);
    const auto L = build_L_gfssm(a, cfg, fir);
    for (double v : L.flat()) CHECK(v == 0.0);
  }
}

TEST_CASE("gfssm_matrix_form: single step weights the input by k0 (C.B)") {
  Rng rng(73);
  InstanceDims d;
  d.seq_len = 1;
  const GfssmInstance<double> inst = make_random_instance(rng, d);
  const auto y = gfssm_matrix_form(inst);
  const double w = inst.fir.taps[0] * dot(inst.base.C[0], inst.base.B[0]);
  for (int p = 0; p < d.head_dim; ++p) {
    CHECK(y[0][p] == doctest::Approx(w * inst.base.x[0][p]).epsilon(1e-15));
  }
}

TEST_CASE("gfssm_matrix_form: Q=1 identity tap equals the plain matrix form") {
  Rng rng(79);
  InstanceDims d;
  d.seq_len = 12;
  d.group_count = 1;
  d.fir_order = 1;
  GfssmInstance<double> inst = make_random_instance(rng, d);
  inst.fir.taps = {1.0};
  const auto y = gfssm_matrix_form(inst);
  const auto yp = ssd_matrix_form(inst.base);
  CHECK(max_abs_diff(y, yp) <= 1e-15);
}

TEST_CASE("property: cross-form equivalence over the configuration grid") {
  Rng rng(20240801);
  for (int Q : {1, 2, 4, 8}) {
    for (int n : {1, 2, 4}) {
      for (int trial = 0; trial < 4; ++trial) {
        InstanceDims d;
        d.seq_len = 1 + static_cast<int>(rng.uniform_int(64));
        d.state_dim = 1 + static_cast<int>(rng.uniform_int(6));
        d.head_dim = 1 + static_cast<int>(rng.uniform_int(4));
        d.group_count = Q;
        d.fir_order = n;
        const GfssmInstance<double> inst = make_random_instance(rng, d);
        const auto scan = grouped_scan(inst, zero_state(inst));
        const auto mat = gfssm_matrix_form(inst);
        CHECK(max_abs_diff(scan.y, mat) <= 1e-12);
      }
    }
  }
}

TEST_CASE("property: larger scan output T=32 matches matrix form") {
  Rng rng(83);
  InstanceDims d;
  d.seq_len = 32;
  const GfssmInstance<double> inst = make_random_instance(rng, d);
  const auto scan = grouped_scan(inst, zero_state(inst));
  const auto mat = gfssm_matrix_form(inst);
  CHECK(max_abs_diff(scan.y, mat) <= 1e-12);
}

TEST_CASE("property: factor counts follow floor((t-s-j)/Q)") {
  // With every decay value equal to 2, an entry of 2^c witnesses exactly c
  // factors.
  const int T = 23;
  std::vector<double> a(T, 2.0);
  for (int Q : {1, 2, 4, 5}) {
    for (int j : {0, 1, 3}) {
      const auto L = build_L_group(a, Q, j);
      for (int t = 0; t < T; ++t) {
        for (int s = 0; s + j <= t && s < T; ++s) {
          const int count = static_cast<int>(std::lround(std::log2(L(t, s))));
          CHECK(count == (t - s - j) / Q);
          CHECK(L(t, s) == std::exp2(static_cast<double>(count)));
        }
      }
    }
  }
}

TEST_CASE("property: grouping never shrinks mask entries for decay in (0,1]") {
  Rng rng(89);
  std::vector<double> a(24);
  for (double& v : a) v = rng.uniform_pos01();
  for (int Q : {2, 4, 8}) {
    GroupConfig cfg{Q, 1};
    const auto Lg = build_L_gfssm(a, cfg, FirCoefficients<double>::identity_init(1));
    const auto Lp = build_L_plain(a);
    for (int t = 0; t < 24; ++t) {
      for (int s = 0; s <= t; ++s) {
        CHECK(Lg(t, s) >= Lp(t, s) - 1e-15);
      }
    }
  }
}

TEST_CASE("property: without the filter, a column only sees its own group") {
  Rng rng(97);
  std::vector<double> a(16);
  for (double& v : a) v = rng.uniform_pos01();
  const int Q = 4;
  const auto L = build_L_group(a, Q, 0);

  // Perturb decay values outside column s's residue class; the column must
  // not move.
  for (int s = 0; s < 16; ++s) {
    std::vector<double> perturbed = a;
    for (int tau = 0; tau < 16; ++tau) {
      if (tau % Q != s % Q) perturbed[tau] = rng.uniform_pos01();
    }
    const auto Lp = build_L_group(perturbed, Q, 0);
    for (int t = 0; t < 16; ++t) {
      CHECK(Lp(t, s) == L(t, s));
    }
  }
}

TEST_CASE("errors: grouped kernel validation") {
  Rng rng(101);
  InstanceDims d;
  const GfssmInstance<double> good = make_random_instance(rng, d);

  SUBCASE("wrong group count in the initial state") {
    auto h = GroupedHiddenState<double>::zeros(3, d.state_dim, d.head_dim);
    CHECK_THROWS_AS(grouped_scan(good, h), ShapeError);
  }
  SUBCASE("tap count must match the filter order") {
    GfssmInstance<double> inst = good;
    inst.fir.taps.pop_back();
    CHECK_THROWS_WITH_AS(
        grouped_scan(inst, GroupedHiddenState<double>::zeros(
                               d.group_count, d.state_dim, d.head_dim)),
        doctest::Contains("fir.taps"), ShapeError);
  }
  SUBCASE("missing history taps") {
    GfssmInstance<double> inst = good;
    inst.prompt_taps.pop_back();
    CHECK_THROWS_WITH_AS(
        grouped_scan(inst, GroupedHiddenState<double>::zeros(
                               d.group_count, d.state_dim, d.head_dim)),
        doctest::Contains("prompt_taps"), ShapeError);
  }
  SUBCASE("matrix form rejects nonzero history") {
    GfssmInstance<double> inst = good;
    inst.prompt_taps[0](0, 0) = 1.0;
    CHECK_THROWS_AS(gfssm_matrix_form(inst), ValueError);
  }
  SUBCASE("matrix form size cap") {
    CHECK_THROWS_AS(gfssm_matrix_form(good, /*cap=*/4), SizeLimitError);
  }
  SUBCASE("non-finite intermediates carry the step index") {
    GfssmInstance<double> inst = good;
    for (auto& v : inst.base.x) v.assign(d.head_dim, 1e308);
    for (auto& v : inst.base.B) v.assign(d.state_dim, 1e308);
    try {
      grouped_scan(inst, GroupedHiddenState<double>::zeros(
                             d.group_count, d.state_dim, d.head_dim));
      FAIL("expected NumericError");
    } catch (const NumericError& e) {
      CHECK(e.step() == 0);
    }
    // With diagnostics attached the scan records instead of throwing.
    ScanDiagnostics diag;
    const auto r = grouped_scan(
        inst,
        GroupedHiddenState<double>::zeros(d.group_count, d.state_dim,
                                          d.head_dim),
        0, &diag);
    CHECK(diag.first_nonfinite_step == 0);
    CHECK(r.y.size() == static_cast<std::size_t>(d.seq_len));
  }
}
