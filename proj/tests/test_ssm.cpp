// Copyright (c) 2026 demmamba authors
// SPDX-License-Identifier: Apache-2.0

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "demmamba/grad_check.hpp"
#include "demmamba/ssm.hpp"
#include "demmamba/ssm_autograd.hpp"
#include "test_util.hpp"

using namespace demmamba;
using namespace demmamba::ssm;
using test::max_abs_diff;

namespace {

template <typename T>
SSMParams<T> scalar_system(T a, T b, T c, T d, T dt) {
  SSMParams<T> p;
  p.channels = 1;
  p.state_size = 1;
  p.A = {a};
  p.B = {b};
  p.Cc = {c};
  p.D = {d};
  p.dt = {dt};
  return p;
}

template <typename T>
SSMParams<T> random_stable(Rng& rng, std::int64_t C, std::int64_t N) {
  SSMParams<T> p;
  p.channels = C;
  p.state_size = N;
  p.A.resize(static_cast<std::size_t>(C * N));
  p.B.resize(p.A.size());
  p.Cc.resize(p.A.size());
  p.D.resize(static_cast<std::size_t>(C));
  p.dt.resize(static_cast<std::size_t>(C));
  for (auto& v : p.A) v = static_cast<T>(rng.uniform(-3.0, -0.1));
  for (auto& v : p.B) v = static_cast<T>(rng.uniform(-1.0, 1.0));
  for (auto& v : p.Cc) v = static_cast<T>(rng.uniform(-1.0, 1.0));
  for (auto& v : p.D) v = static_cast<T>(rng.uniform(-1.0, 1.0));
  for (auto& v : p.dt) v = static_cast<T>(rng.uniform(0.05, 0.8));
  return p;
}

template <typename T>
std::vector<T> random_input(Rng& rng, std::int64_t L, std::int64_t C) {
  std::vector<T> x(static_cast<std::size_t>(L * C));
  for (auto& v : x) v = static_cast<T>(rng.uniform(-1.0, 1.0));
  return x;
}

// Random per-step parameters for selective scans.
template <typename T>
SSMParams<T> random_selective(Rng& rng, std::int64_t L, std::int64_t C, std::int64_t N) {
  SSMParams<T> p;
  p.channels = C;
  p.state_size = N;
  p.selective = true;
  p.seq_len = L;
  p.A.resize(static_cast<std::size_t>(C * N));
  for (auto& v : p.A) v = static_cast<T>(rng.uniform(-3.0, -0.1));
  p.B.resize(static_cast<std::size_t>(L * C * N));
  p.Cc.resize(p.B.size());
  for (auto& v : p.B) v = static_cast<T>(rng.uniform(-1.0, 1.0));
  for (auto& v : p.Cc) v = static_cast<T>(rng.uniform(-1.0, 1.0));
  p.D.resize(static_cast<std::size_t>(C));
  for (auto& v : p.D) v = static_cast<T>(rng.uniform(-1.0, 1.0));
  p.dt.resize(static_cast<std::size_t>(L * C));
  for (auto& v : p.dt) v = static_cast<T>(rng.uniform(0.05, 0.5));
  return p;
}

}  // namespace

TEST_CASE("zoh matches hand evaluation") {
  auto p = scalar_system<double>(-1.0, 1.0, 1.0, 0.0, 0.1);
  auto d = zoh_discretize(p);
  CHECK(d.A[0] == doctest::Approx(0.9048374180359595).epsilon(1e-12));
  CHECK(d.B[0] == doctest::Approx(0.09516258196404048).epsilon(1e-12));
  CHECK(d.discretized);
}

TEST_CASE("zoh zero-A limit and domain checks") {
  auto p = scalar_system<double>(0.0, 2.0, 1.0, 0.0, 0.5);
  auto d = zoh_discretize(p);
  CHECK(d.A[0] == doctest::Approx(1.0));
  CHECK(d.B[0] == doctest::Approx(1.0));

  auto bad = scalar_system<double>(-1.0, 1.0, 1.0, 0.0, 0.0);
  CHECK_THROWS_AS((void)zoh_discretize(bad), DomainError);
}

TEST_CASE("scan_recurrent unrolls by hand") {
  auto p = scalar_system<double>(0.0, 0.0, 1.0, 0.0, 1.0);
  p.discretized = true;
  p.A = {0.5};
  p.B = {1.0};
  std::vector<double> x = {1.0, 0.0, 0.0};
  auto r = scan_recurrent(p, x, 3);
  CHECK(r.y[0] == doctest::Approx(1.0));
  CHECK(r.y[1] == doctest::Approx(0.5));
  CHECK(r.y[2] == doctest::Approx(0.25));

  // pure skip path
  p.A = {0.0};
  p.B = {0.0};
  p.D = {1.0};
  auto skip = scan_recurrent(p, x, 3);
  CHECK(max_abs_diff(skip.y, x) == 0.0);

  // single step: y1 = C*B*x1 + D*x1
  p.A = {0.7};
  p.B = {0.3};
  p.Cc = {2.0};
  p.D = {0.1};
  std::vector<double> x1 = {4.0};
  auto one = scan_recurrent(p, x1, 1);
  CHECK(one.y[0] == doctest::Approx(2.0 * 0.3 * 4.0 + 0.1 * 4.0));
}

TEST_CASE("kernel_conv expands the structured kernel") {
  SSMParams<double> p = scalar_system<double>(0.0, 1.0, 1.0, 0.0, 1.0);
  p.discretized = true;
  p.A = {0.5};
  std::vector<double> impulse = {1.0, 0.0, 0.0};
  auto r = kernel_conv(p, impulse, 3);
  CHECK(r.y[0] == doctest::Approx(1.0));
  CHECK(r.y[1] == doctest::Approx(0.5));
  CHECK(r.y[2] == doctest::Approx(0.25));

  auto rec = scan_recurrent(p, impulse, 3);
  CHECK(max_abs_diff(r.y, rec.y) <= 1e-12);

  p.Cc = {0.0};
  p.D = {0.25};
  std::vector<double> x = {2.0, -4.0, 8.0};
  auto skip = kernel_conv(p, x, 3);
  CHECK(skip.y[0] == doctest::Approx(0.5));
  CHECK(skip.y[1] == doctest::Approx(-1.0));
  CHECK(skip.y[2] == doctest::Approx(2.0));
}

TEST_CASE("recurrent and kernel forms agree on random stable systems") {
  Rng rng(41);
  double worst64 = 0.0;
  float worst32 = 0.0;
  for (int trial = 0; trial < 40; ++trial) {
    std::int64_t C = 1 + rng.uniform_int(8);
    std::int64_t N = 1 + rng.uniform_int(8);
    std::int64_t L = 1 + rng.uniform_int(64);
    auto p = random_stable<double>(rng, C, N);
    auto x = random_input<double>(rng, L, C);
    auto d = zoh_discretize(p);
    auto a = scan_recurrent(d, x, L);
    auto b = kernel_conv(d, x, L);
    worst64 = std::max(worst64, max_abs_diff(a.y, b.y));

    SSMParams<float> pf;
    pf.channels = C;
    pf.state_size = N;
    pf.A.assign(p.A.begin(), p.A.end());
    pf.B.assign(p.B.begin(), p.B.end());
    pf.Cc.assign(p.Cc.begin(), p.Cc.end());
    pf.D.assign(p.D.begin(), p.D.end());
    pf.dt.assign(p.dt.begin(), p.dt.end());
    std::vector<float> xf(x.begin(), x.end());
    auto df = zoh_discretize(pf);
    auto af = scan_recurrent(df, xf, L);
    auto bf = kernel_conv(df, xf, L);
    worst32 = std::max(worst32, static_cast<float>(max_abs_diff(af.y, bf.y)));
  }
  CHECK(worst64 <= 1e-10);
  CHECK(worst32 <= 1e-5);
}

TEST_CASE("selective scan with constant parameters reduces to the LTI scan") {
  Rng rng(43);
  std::int64_t C = 3, N = 4, L = 24;
  auto lti = random_stable<double>(rng, C, N);
  auto x = random_input<double>(rng, L, C);

  SSMParams<double> sel;
  sel.channels = C;
  sel.state_size = N;
  sel.selective = true;
  sel.seq_len = L;
  sel.A = lti.A;
  sel.D = lti.D;
  sel.B.resize(static_cast<std::size_t>(L * C * N));
  sel.Cc.resize(sel.B.size());
  sel.dt.resize(static_cast<std::size_t>(L * C));
  for (std::int64_t l = 0; l < L; ++l) {
    std::copy(lti.B.begin(), lti.B.end(), sel.B.begin() + l * C * N);
    std::copy(lti.Cc.begin(), lti.Cc.end(), sel.Cc.begin() + l * C * N);
    std::copy(lti.dt.begin(), lti.dt.end(), sel.dt.begin() + l * C);
  }
  auto got = selective_scan(sel, x);
  auto want = scan_recurrent(zoh_discretize(lti), x, L);
  CHECK(max_abs_diff(got.y, want.y) <= 1e-6);
}

TEST_CASE("selective scan matches an independent scalar-loop oracle") {
  Rng rng(47);
  std::int64_t L = 8, C = 2, N = 4;
  auto p = random_selective<double>(rng, L, C, N);
  auto x = random_input<double>(rng, L, C);
  auto got = selective_scan(p, x);

  for (std::int64_t c = 0; c < C; ++c) {
    std::vector<double> h(static_cast<std::size_t>(N), 0.0);
    for (std::int64_t l = 0; l < L; ++l) {
      double dt = p.dt[static_cast<std::size_t>(l * C + c)];
      double xv = x[static_cast<std::size_t>(l * C + c)];
      double y = p.D[static_cast<std::size_t>(c)] * xv;
      for (std::int64_t n = 0; n < N; ++n) {
        double a = p.A[static_cast<std::size_t>(c * N + n)];
        double ab = std::exp(dt * a);
        double bb = (ab - 1.0) / a * p.B[static_cast<std::size_t>((l * C + c) * N + n)];
        h[static_cast<std::size_t>(n)] = ab * h[static_cast<std::size_t>(n)] + bb * xv;
        y += p.Cc[static_cast<std::size_t>((l * C + c) * N + n)] * h[static_cast<std::size_t>(n)];
      }
      CHECK(std::fabs(got.y[static_cast<std::size_t>(l * C + c)] - y) <= 1e-5);
    }
  }
}

TEST_CASE("silent input with zero skip stays zero") {
  Rng rng(53);
  auto p = random_selective<double>(rng, 12, 2, 3);
  std::fill(p.D.begin(), p.D.end(), 0.0);
  std::vector<double> x(static_cast<std::size_t>(12 * 2), 0.0);
  auto r = selective_scan(p, x);
  for (double v : r.y) CHECK(v == 0.0);
}

TEST_CASE("parallel scan equals the sequential scan") {
  Rng rng(59);
  SUBCASE("L=1 trivially") {
    auto p = random_selective<double>(rng, 1, 2, 3);
    auto x = random_input<double>(rng, 1, 2);
    CHECK(max_abs_diff(parallel_scan(p, x).y, selective_scan(p, x).y) == 0.0);
  }
  SUBCASE("random lengths including non-powers of two") {
    for (std::int64_t L : {5, 7, 64, 100}) {
      auto p = random_selective<double>(rng, L, 3, 4);
      auto x = random_input<double>(rng, L, 3);
      CHECK(max_abs_diff(parallel_scan(p, x).y, selective_scan(p, x).y) <= 1e-6);
    }
  }
  SUBCASE("prefix sums as the degenerate case") {
    std::int64_t L = 10;
    SSMParams<double> p;
    p.channels = 1;
    p.state_size = 1;
    p.selective = true;
    p.seq_len = L;
    p.A.assign(1, 0.0);  // A_bar = 1, B_bar = dt*B = 1
    p.B.assign(static_cast<std::size_t>(L), 1.0);
    p.Cc.assign(static_cast<std::size_t>(L), 1.0);
    p.D = {0.0};
    p.dt.assign(static_cast<std::size_t>(L), 1.0);
    std::vector<double> ones(static_cast<std::size_t>(L), 1.0);
    auto r = parallel_scan(p, ones);
    for (std::int64_t l = 0; l < L; ++l) {
      CHECK(r.y[static_cast<std::size_t>(l)] == doctest::Approx(static_cast<double>(l + 1)));
    }
  }
}

TEST_CASE("ode oracle baseline behaviors") {
  SUBCASE("zero input gives zero output") {
    auto p = scalar_system<double>(-1.0, 1.0, 1.0, 0.0, 0.5);
    std::vector<double> x(8, 0.0);
    auto r = lti_ode_oracle(p, x, 8, 0.5, 32);
    for (double v : r.y) CHECK(v == 0.0);
  }
  SUBCASE("step input approaches the ODE fixed point") {
    auto p = scalar_system<double>(-1.0, 1.0, 1.0, 0.0, 1.0);
    std::vector<double> x(30, 1.0);
    auto r = lti_ode_oracle(p, x, 30, 1.0, 64);
    CHECK(r.y.back() == doctest::Approx(1.0).epsilon(1e-9));  // -c*b/a
  }
  SUBCASE("divergent system raises overflow") {
    auto p = scalar_system<double>(800.0, 1.0, 1.0, 0.0, 1.0);
    std::vector<double> x(4, 1.0);
    CHECK_THROWS_AS((void)lti_ode_oracle(p, x, 4, 1.0, 64), OverflowError);
  }
}

TEST_CASE("zoh scan tracks the ODE oracle and improves with substeps") {
  Rng rng(61);
  for (int trial = 0; trial < 10; ++trial) {
    auto p = scalar_system<double>(rng.uniform(-5.0, -0.5), rng.uniform(-1.0, 1.0),
                                   rng.uniform(-1.0, 1.0), rng.uniform(-0.5, 0.5),
                                   rng.uniform(0.5, 1.5));
    std::int64_t L = 12;
    auto x = random_input<double>(rng, L, 1);
    auto zoh = scan_recurrent(zoh_discretize(p), x, L);

    auto rel = [&](std::int64_t substeps) {
      auto ode = lti_ode_oracle(p, x, L, p.dt[0], substeps);
      double num = 0.0, den = 0.0;
      for (std::size_t i = 0; i < zoh.y.size(); ++i) {
        num = std::max(num, std::fabs(zoh.y[i] - ode.y[i]));
        den = std::max(den, std::fabs(zoh.y[i]));
      }
      return num / std::max(den, 1e-12);
    };
    double e64 = rel(64);
    CHECK(e64 <= 1e-3);
    CHECK(rel(256) <= e64 + 1e-15);
  }
}

TEST_CASE("stable systems respect the geometric output bound over long scans") {
  Rng rng(67);
  std::int64_t L = 4096, C = 2, N = 4;
  auto p = random_stable<double>(rng, C, N);
  auto x = random_input<double>(rng, L, C);
  auto d = zoh_discretize(p);
  auto r = scan_recurrent(d, x, L);

  double xmax = 0.0;
  for (double v : x) xmax = std::max(xmax, std::fabs(v));
  for (std::int64_t c = 0; c < C; ++c) {
    double bound = std::fabs(p.D[static_cast<std::size_t>(c)]);
    for (std::int64_t n = 0; n < N; ++n) {
      std::size_t i = static_cast<std::size_t>(c * N + n);
      bound += std::fabs(d.Cc[i]) * std::fabs(d.B[i]) / (1.0 - std::fabs(d.A[i]));
    }
    bound *= xmax;
    for (std::int64_t l = 0; l < L; ++l) {
      CHECK(std::fabs(r.y[static_cast<std::size_t>(l * C + c)]) <= bound + 1e-9);
    }
  }
}

TEST_CASE("differentiable scan op reproduces the kernel scan") {
  Rng rng(73);
  std::int64_t B = 2, C = 3, N = 4, L = 9;
  auto x = test::random_tensor<double>({B, C, L}, rng);
  auto dt = test::random_tensor<double>({B, C, L}, rng, 0.05, 0.4);
  auto bs = test::random_tensor<double>({B, N, L}, rng);
  auto cs = test::random_tensor<double>({B, N, L}, rng);
  auto a = test::random_tensor<double>({C, N}, rng, -3.0, -0.2);
  auto d = test::random_tensor<double>({C}, rng);
  auto y = selective_scan_op(x, dt, bs, cs, a, d);

  for (std::int64_t b = 0; b < B; ++b) {
    SSMParams<double> p;
    p.channels = C;
    p.state_size = N;
    p.selective = true;
    p.seq_len = L;
    p.A = a.vec();
    p.D = d.vec();
    p.B.resize(static_cast<std::size_t>(L * C * N));
    p.Cc.resize(p.B.size());
    p.dt.resize(static_cast<std::size_t>(L * C));
    std::vector<double> xin(static_cast<std::size_t>(L * C));
    for (std::int64_t l = 0; l < L; ++l) {
      for (std::int64_t c = 0; c < C; ++c) {
        p.dt[static_cast<std::size_t>(l * C + c)] = dt.data()[(b * C + c) * L + l];
        xin[static_cast<std::size_t>(l * C + c)] = x.data()[(b * C + c) * L + l];
        for (std::int64_t n = 0; n < N; ++n) {
          p.B[static_cast<std::size_t>((l * C + c) * N + n)] = bs.data()[(b * N + n) * L + l];
          p.Cc[static_cast<std::size_t>((l * C + c) * N + n)] = cs.data()[(b * N + n) * L + l];
        }
      }
    }
    auto want = selective_scan(p, xin);
    for (std::int64_t l = 0; l < L; ++l) {
      for (std::int64_t c = 0; c < C; ++c) {
        CHECK(y.data()[(b * C + c) * L + l] ==
              doctest::Approx(want.y[static_cast<std::size_t>(l * C + c)]).epsilon(1e-12));
      }
    }
  }
}

TEST_CASE("differentiable scan op passes finite-difference checks on every input") {
  Rng rng(79);
  std::int64_t B = 2, C = 2, N = 3, L = 6;
  auto x = test::random_tensor<double>({B, C, L}, rng, -1.0, 1.0, true);
  auto dt = test::random_tensor<double>({B, C, L}, rng, 0.05, 0.4, true);
  auto bs = test::random_tensor<double>({B, N, L}, rng, -1.0, 1.0, true);
  auto cs = test::random_tensor<double>({B, N, L}, rng, -1.0, 1.0, true);
  auto a = test::random_tensor<double>({C, N}, rng, -3.0, -0.2, true);
  auto d = test::random_tensor<double>({C}, rng, -1.0, 1.0, true);

  std::vector<double> w(static_cast<std::size_t>(B * C * L));
  for (std::size_t i = 0; i < w.size(); ++i) w[i] = 0.2 + 0.1 * static_cast<double>(i % 5);
  auto wt = Tensor<double>::from_data(std::move(w), {B, C, L});

  Rng coord_rng(83);
  double err = grad_check_leaves(
      [&] { return sum(mul(selective_scan_op(x, dt, bs, cs, a, d), wt)); },
      {x, dt, bs, cs, a, d}, 1e-5, coord_rng, 0);
  CHECK(err <= 1e-6);
}

TEST_CASE("mode misuse raises usage errors") {
  Rng rng(71);
  auto sel = random_selective<double>(rng, 4, 1, 2);
  std::vector<double> x(4, 0.5);
  CHECK_THROWS_AS((void)kernel_conv(sel, x, 4), UsageError);
  CHECK_THROWS_AS((void)scan_recurrent(sel, x, 4), UsageError);
  CHECK_THROWS_AS((void)zoh_discretize(sel), UsageError);

  auto lti = scalar_system<double>(-1.0, 1.0, 1.0, 0.0, 0.1);
  auto d = zoh_discretize(lti);
  CHECK_THROWS_AS((void)zoh_discretize(d), UsageError);
  std::vector<double> bad(3, 0.0);
  CHECK_THROWS_AS((void)scan_recurrent(d, bad, 4), DimensionError);
}
