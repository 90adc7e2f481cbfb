#include "difflab/denoiser.hpp"

#include <catch2/catch_amalgamated.hpp>

#include <cmath>

using namespace difflab;

namespace {

DenoiserArch small_arch(int data_dim = 2, int cond_dim = 0) {
  DenoiserArch a;
  a.data_dim = data_dim;
  a.hidden = {16, 16};
  a.cond_dim = cond_dim;
  a.time_scale = 10;
  return a;
}

}  // namespace

TEST_CASE("init is deterministic in the seed", "[denoiser]") {
  const Denoiser a(123, small_arch());
  const Denoiser b(123, small_arch());
  const Denoiser c(124, small_arch());
  CHECK(a.params() == b.params());
  CHECK(a.params() != c.params());
}

TEST_CASE("forward output shape matches data shape", "[denoiser]") {
  const Denoiser m(1, small_arch(2));
  const Vec out = m.forward(Vec::Ones(2), 3);
  CHECK(out.size() == 2);

  const Denoiser img(1, small_arch(64));
  CHECK(img.forward(Vec::Zero(64), 5).size() == 64);
}

TEST_CASE("forward is deterministic and batch agrees with single", "[denoiser]") {
  const Denoiser m(7, small_arch(3));
  Rng rng(5);
  const Mat X = rng.normal_mat(4, 3);
  const Mat batch = m.forward_rows(X, 2);
  for (int i = 0; i < 4; ++i) {
    const Vec single = m.forward(X.row(i).transpose(), 2);
    CHECK_THAT((batch.row(i).transpose() - single).norm(),
               Catch::Matchers::WithinAbs(0.0, 1e-13));
  }
  CHECK(m.forward(X.row(0).transpose(), 2) == m.forward(X.row(0).transpose(), 2));
}

TEST_CASE("conditioning arity is enforced", "[denoiser]") {
  const Denoiser uncond(1, small_arch(2, 0));
  const Denoiser cond(1, small_arch(2, 4));
  const Vec x = Vec::Zero(2);
  const Vec c = Vec::Zero(4);
  CHECK_THROWS_AS(uncond.forward(x, 1, &c), std::invalid_argument);
  CHECK_THROWS_AS(cond.forward(x, 1), std::invalid_argument);
  CHECK_NOTHROW(cond.forward(x, 1, &c));
}

TEST_CASE("backward matches central finite differences", "[denoiser]") {
  // Probe loss: L(theta) = ||eps_theta(x, t) - y||^2 / d.
  Denoiser m(11, small_arch(3));
  Rng rng(42);
  const Vec x = rng.normal_vec(3);
  const Vec y = rng.normal_vec(3);
  const int t = 4;

  auto loss_at = [&](void) {
    const Vec pred = m.forward(x, t);
    return (pred - y).squaredNorm() / 3.0;
  };

  Denoiser::Cache cache;
  const Vec pred = m.forward(x, t, nullptr, &cache);
  Vec grad = Vec::Zero(m.param_count());
  m.backward(cache, (2.0 / 3.0) * (pred - y), grad);

  const double h = 1e-5;
  for (int probe = 0; probe < 20; ++probe) {
    const int idx = rng.uniform_int(0, m.param_count() - 1);
    const double saved = m.params()[idx];
    m.mutable_params()[idx] = saved + h;
    const double lp = loss_at();
    m.mutable_params()[idx] = saved - h;
    const double lm = loss_at();
    m.mutable_params()[idx] = saved;
    const double fd = (lp - lm) / (2.0 * h);
    const double rel =
        std::abs(fd - grad[idx]) / std::max({std::abs(fd), std::abs(grad[idx]), 1e-8});
    CHECK(rel < 1e-4);
  }
}

TEST_CASE("quadratic probe gradient is 2 theta", "[denoiser]") {
  // Feed the parameter vector itself through a sum-of-squares loss; backward
  // machinery is bypassed, this pins the optimizer contract instead.
  Denoiser m(3, small_arch());
  OptimState opt(m.param_count(), 1e-3);
  const Vec theta0 = m.params();
  const Vec grad = 2.0 * theta0;  // d/dtheta ||theta||^2
  optimizer_step(m, opt, grad);
  CHECK(m.params() != theta0);

  // Zero gradient with zero moments leaves parameters unchanged.
  Denoiser m2(3, small_arch());
  OptimState opt2(m2.param_count(), 1e-3);
  const Vec before = m2.params();
  optimizer_step(m2, opt2, Vec::Zero(m2.param_count()));
  CHECK(m2.params() == before);
}

TEST_CASE("non-finite gradients abort the step", "[denoiser]") {
  Denoiser m(3, small_arch());
  OptimState opt(m.param_count());
  Vec bad = Vec::Zero(m.param_count());
  bad[0] = std::nan("");
  CHECK_THROWS_AS(optimizer_step(m, opt, bad), NumericError);
}
