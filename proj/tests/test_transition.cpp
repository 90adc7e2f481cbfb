#include "difflab/reparam.hpp"
#include "difflab/schedule.hpp"
#include "difflab/transition.hpp"

#include <catch2/catch_amalgamated.hpp>

#include <cmath>

using namespace difflab;

namespace {

TransitionCoeffs vp_t2_coeffs() {
  const auto s = build_schedule(SchedulerSpec::vp(2, 0.1, 0.2));
  return compute_transition(s, compute_reparam(s));
}

}  // namespace

TEST_CASE("posterior coefficients at t=2 match direct evaluation", "[transition]") {
  const auto tc = vp_t2_coeffs();
  CHECK_THAT(tc.a[2], Catch::Matchers::WithinAbs(0.319438, 1e-6));
  CHECK_THAT(tc.b[2], Catch::Matchers::WithinAbs(0.677631, 1e-6));
  CHECK_THAT(tc.s[2], Catch::Matchers::WithinAbs(0.472877, 1e-5));
  CHECK_THAT(tc.c[2], Catch::Matchers::WithinAbs(0.002931, 1e-6));
  CHECK_THAT(tc.H[2], Catch::Matchers::WithinAbs(-0.118036, 1e-5));
  CHECK_THAT(tc.G[2] * tc.G[2], Catch::Matchers::WithinAbs(0.422581, 1e-5));
}

TEST_CASE("t=1 posterior collapses onto x_0", "[transition]") {
  for (const auto& s : {build_schedule(SchedulerSpec::vp(5, 0.02, 0.3)),
                        build_schedule(SchedulerSpec::ve(5, 0.2, 4.0))}) {
    const auto tc = compute_transition(s, compute_reparam(s));
    CHECK_THAT(tc.a[1], Catch::Matchers::WithinAbs(0.0, 1e-15));
    CHECK_THAT(tc.b[1], Catch::Matchers::WithinAbs(1.0, 1e-12));
    CHECK_THAT(tc.c[1], Catch::Matchers::WithinAbs(0.0, 1e-15));
  }
}

TEST_CASE("posterior consistency identities", "[transition]") {
  const auto check = [](const DiscreteSchedule& s) {
    const auto tc = compute_transition(s, compute_reparam(s));
    for (int t = 1; t <= s.T; ++t) {
      CHECK_THAT(tc.a[t] * s.alpha_hat[t] + tc.b[t],
                 Catch::Matchers::WithinAbs(s.alpha_hat[t - 1], 1e-9));
      CHECK_THAT(tc.a[t] * s.rho_hat[t] + tc.c[t],
                 Catch::Matchers::WithinAbs(s.rho_hat[t - 1], 1e-9));
    }
  };
  check(build_schedule(SchedulerSpec::vp(100, 1e-3, 0.2)));
  check(build_schedule(SchedulerSpec::ve(100, 1e-2, 10.0)));
  check(build_schedule(SchedulerSpec::vp(64, 0.01, 0.1, CorrectionKind::ConstantOne)));
}

TEST_CASE("noiseless posterior mean reconstructs the previous latent", "[transition]") {
  const auto s = build_schedule(SchedulerSpec::vp(40, 1e-3, 0.25));
  const auto tc = compute_transition(s, compute_reparam(s));
  const double x0 = 0.3, r = 0.9;
  for (int t = 1; t <= s.T; ++t) {
    const double x_t = s.alpha_hat[t] * x0 + s.rho_hat[t] * r;
    const double rebuilt = tc.a[t] * x_t + tc.b[t] * x0 + tc.c[t] * r;
    const double expect = s.alpha_hat[t - 1] * x0 + s.rho_hat[t - 1] * r;
    CHECK_THAT(rebuilt, Catch::Matchers::WithinAbs(expect, 1e-9));
  }
}

TEST_CASE("s, G relation: s = G sqrt(beta_hat)", "[transition]") {
  const auto s = build_schedule(SchedulerSpec::vp(30, 0.01, 0.3));
  const auto tc = compute_transition(s, compute_reparam(s));
  for (int t = 1; t <= s.T; ++t) {
    CHECK_THAT(tc.s[t], Catch::Matchers::WithinAbs(tc.G[t] * std::sqrt(s.beta_hat[t]), 1e-12));
    CHECK_THAT(tc.s[t],
               Catch::Matchers::WithinAbs(std::sqrt(tc.b[t] / s.alpha_hat[t]) * s.beta_hat[t],
                                          1e-12));
  }
}

TEST_CASE("correction coefficient follows 2H/((1+zeta)G^2)", "[transition]") {
  const auto tc = vp_t2_coeffs();
  CHECK_THAT(correction_coefficient(tc, 2, 1.0),
             Catch::Matchers::WithinAbs(-0.279322, 1e-5));
  CHECK_THAT(correction_coefficient(tc, 2, 0.0),
             Catch::Matchers::WithinAbs(-0.558644, 1e-5));
  CHECK_THROWS_AS(correction_coefficient(tc, 0, 0.5), std::invalid_argument);
  CHECK_THROWS_AS(correction_coefficient(tc, 3, 0.5), std::invalid_argument);
}

TEST_CASE("zeta=0 and zeta=1 corrections differ by exactly 2x", "[transition]") {
  const auto s = build_schedule(SchedulerSpec::vp(80, 1e-3, 0.2));
  const auto tc = compute_transition(s, compute_reparam(s));
  for (int t = 1; t <= s.T; ++t) {
    const double c0 = correction_coefficient(tc, t, 0.0);
    const double c1 = correction_coefficient(tc, t, 1.0);
    CHECK_THAT(c0, Catch::Matchers::WithinAbs(2.0 * c1, 1e-12));
  }
}

TEST_CASE("zero correction schedule makes H vanish", "[transition]") {
  // With rho_hat identically zero the trigger coefficient collapses.
  SchedulerSpec spec = SchedulerSpec::vp(6, 0.02, 0.2, CorrectionKind::CustomTable);
  spec.custom_rho = Vec::Zero(7);
  const auto s = build_schedule(spec);
  const auto tc = compute_transition(s, compute_reparam(s));
  for (int t = 1; t <= s.T; ++t) {
    CHECK_THAT(tc.H[t], Catch::Matchers::WithinAbs(0.0, 1e-12));
    CHECK(correction_coefficient(tc, t, 0.0) == 0.0);
    CHECK(correction_coefficient(tc, t, 1.0) == 0.0);
  }
}
