#include "difflab/analytic.hpp"
#include "difflab/reparam.hpp"
#include "difflab/schedule.hpp"

#include <catch2/catch_amalgamated.hpp>

#include <cmath>

using namespace difflab;

TEST_CASE("VP reparam matches the closed-form per-step coefficients", "[reparam]") {
  // Oracle: k_t = sqrt(1 - beta_t), w_t = sqrt(beta_t) for the VP family.
  const auto s = build_schedule(SchedulerSpec::vp(2, 0.1, 0.2));
  const auto rc = compute_reparam(s);
  CHECK_THAT(rc.k[1], Catch::Matchers::WithinAbs(std::sqrt(0.9), 1e-12));
  CHECK_THAT(rc.k[2], Catch::Matchers::WithinAbs(std::sqrt(0.8), 1e-12));
  CHECK_THAT(rc.w[1], Catch::Matchers::WithinAbs(std::sqrt(0.1), 1e-12));
  CHECK_THAT(rc.w[2], Catch::Matchers::WithinAbs(std::sqrt(0.2), 1e-12));
  CHECK_THAT(rc.k[1], Catch::Matchers::WithinAbs(0.948683, 1e-6));
  CHECK_THAT(rc.k[2], Catch::Matchers::WithinAbs(0.894427, 1e-6));
  CHECK_THAT(rc.w[1], Catch::Matchers::WithinAbs(0.316228, 1e-6));
  CHECK_THAT(rc.w[2], Catch::Matchers::WithinAbs(0.447214, 1e-6));
}

TEST_CASE("VE reparam has unit k and incremental sigma", "[reparam]") {
  const auto s = build_schedule(SchedulerSpec::ve(2, 1.0, 2.0));
  const auto rc = compute_reparam(s);
  CHECK_THAT(rc.k[1], Catch::Matchers::WithinAbs(1.0, 1e-12));
  CHECK_THAT(rc.k[2], Catch::Matchers::WithinAbs(1.0, 1e-12));
  CHECK_THAT(rc.w[1], Catch::Matchers::WithinAbs(1.0, 1e-12));
  CHECK_THAT(rc.w[2], Catch::Matchers::WithinAbs(std::sqrt(3.0), 1e-12));
  CHECK_THAT(rc.w[2], Catch::Matchers::WithinAbs(1.732051, 1e-6));
}

TEST_CASE("t=1 coefficients collapse to the schedule heads", "[reparam]") {
  for (const auto& s : {build_schedule(SchedulerSpec::vp(7, 0.01, 0.3)),
                        build_schedule(SchedulerSpec::ve(7, 0.1, 3.0))}) {
    const auto rc = compute_reparam(s);
    CHECK_THAT(rc.k[1], Catch::Matchers::WithinAbs(s.alpha_hat[1], 1e-15));
    CHECK_THAT(rc.w[1], Catch::Matchers::WithinAbs(s.beta_hat[1], 1e-15));
    CHECK_THAT(rc.h[1], Catch::Matchers::WithinAbs(s.rho_hat[1], 1e-15));
  }
}

TEST_CASE("telescoping identities hold for every t", "[reparam]") {
  const auto check = [](const DiscreteSchedule& s) {
    const auto rc = compute_reparam(s);
    double k_prod = 1.0;
    for (int t = 1; t <= s.T; ++t) {
      k_prod *= rc.k[t];
      CHECK_THAT(k_prod, Catch::Matchers::WithinAbs(s.alpha_hat[t], 1e-9));
      CHECK_THAT(rc.k[t] * rc.k[t] * s.beta_hat[t - 1] * s.beta_hat[t - 1] +
                     rc.w[t] * rc.w[t],
                 Catch::Matchers::WithinAbs(s.beta_hat[t] * s.beta_hat[t], 1e-9));
      CHECK_THAT(rc.k[t] * s.rho_hat[t - 1] + rc.h[t],
                 Catch::Matchers::WithinAbs(s.rho_hat[t], 1e-9));
    }
  };
  check(build_schedule(SchedulerSpec::vp(100, 1e-3, 0.2)));
  check(build_schedule(SchedulerSpec::ve(100, 1e-2, 10.0)));
}

TEST_CASE("VP OneMinusAlpha h_t restates the correction recursion", "[reparam]") {
  const auto s = build_schedule(SchedulerSpec::vp(60, 1e-3, 0.25));
  const auto rc = compute_reparam(s);
  for (int t = 1; t <= s.T; ++t) {
    const double expect =
        (1.0 - s.alpha_hat[t]) - rc.k[t] * (1.0 - s.alpha_hat[t - 1]);
    CHECK_THAT(rc.h[t], Catch::Matchers::WithinAbs(expect, 1e-9));
  }
}

TEST_CASE("incremental and brute-force coefficients agree", "[reparam]") {
  Rng rng(4242);
  for (int trial = 0; trial < 10; ++trial) {
    const int T = rng.uniform_int(1, 60);
    DiscreteSchedule s;
    if (trial % 2 == 0) {
      const double b0 = 0.001 + 0.01 * rng.uniform();
      const double b1 = b0 + 0.3 * rng.uniform();
      s = build_schedule(SchedulerSpec::vp(T, b0, b1));
    } else {
      const double lo = 0.01 + rng.uniform();
      s = build_schedule(SchedulerSpec::ve(T, lo, lo * (2.0 + 8.0 * rng.uniform())));
    }
    const auto fast = compute_reparam(s);
    const auto brute = brute_reparam(s);
    for (int t = 1; t <= T; ++t) {
      CHECK_THAT(fast.k[t], Catch::Matchers::WithinAbs(brute.k[t], 1e-9));
      CHECK_THAT(fast.w[t], Catch::Matchers::WithinAbs(brute.w[t], 1e-9));
      CHECK_THAT(fast.h[t], Catch::Matchers::WithinAbs(brute.h[t], 1e-9));
    }
  }
}

TEST_CASE("simulated per-step chain reproduces the closed form", "[reparam][slow]") {
  const auto s = build_schedule(SchedulerSpec::vp(10, 0.02, 0.3));
  const auto rc = compute_reparam(s);
  const double x0 = 0.4, r = 1.0;
  const int n = 100000;
  Rng rng(7);
  double sum = 0, sum2 = 0;
  for (int i = 0; i < n; ++i) {
    double x = x0;
    for (int t = 1; t <= s.T; ++t) x = rc.k[t] * x + rc.h[t] * r + rc.w[t] * rng.normal();
    sum += x;
    sum2 += x * x;
  }
  const double mean = sum / n;
  const double stdev = std::sqrt(sum2 / n - mean * mean);
  const double expect_mean = s.alpha_hat[s.T] * x0 + s.rho_hat[s.T] * r;
  CHECK(std::abs(mean - expect_mean) < 4.0 * s.beta_hat[s.T] / std::sqrt(double(n)));
  CHECK(std::abs(stdev - s.beta_hat[s.T]) < 4.0 * s.beta_hat[s.T] / std::sqrt(2.0 * n));
}
