// Specificity and utility metrics: MSE against a target, MSE-threshold
// attack-success rate, single-scale SSIM for tiny images, and a Frechet
// distance between Gaussian fits of raw samples (utility proxy).
#pragma once

#include "difflab/common.hpp"

#include <algorithm>
#include <cmath>
#include <optional>
#include <string>

namespace difflab {

inline double sample_mse(const Vec& a, const Vec& b) {
  require(a.size() == b.size(), "mse: shape mismatch");
  return (a - b).squaredNorm() / double(a.size());
}

// Mean over samples of the per-sample elementwise-mean squared error.
inline double mse(const Mat& samples, const Vec& target) {
  require(samples.rows() > 0, "mse: empty sample set");
  require(samples.cols() == target.size(), "mse: shape mismatch");
  double acc = 0.0;
  for (Eigen::Index i = 0; i < samples.rows(); ++i)
    acc += (samples.row(i).transpose() - target).squaredNorm() / double(target.size());
  return acc / double(samples.rows());
}

// Fraction of samples with per-sample MSE below phi.
inline double mse_threshold(const Mat& samples, const Vec& target, double phi) {
  require(samples.rows() > 0, "mse_threshold: empty sample set");
  require(phi > 0.0, "mse_threshold: phi must be positive");
  int hits = 0;
  for (Eigen::Index i = 0; i < samples.rows(); ++i)
    if ((samples.row(i).transpose() - target).squaredNorm() / double(target.size()) < phi)
      ++hits;
  return double(hits) / double(samples.rows());
}

// Single-scale SSIM with a uniform sliding window sized for tiny images
// (window = min(8, side)); data_range defaults to 2 for data in [-1, 1].
inline double ssim(const Vec& a, const Vec& b, int width, int height,
                   double data_range = 2.0) {
  require(a.size() == b.size(), "ssim: shape mismatch");
  require(width * height == a.size(), "ssim: dims do not match image size");
  const int win = std::min(8, std::min(width, height));
  const double c1 = (0.01 * data_range) * (0.01 * data_range);
  const double c2 = (0.03 * data_range) * (0.03 * data_range);
  const double n_win = double(win * win);

  double acc = 0.0;
  int count = 0;
  for (int r0 = 0; r0 + win <= height; ++r0) {
    for (int c0 = 0; c0 + win <= width; ++c0) {
      double sa = 0, sb = 0, saa = 0, sbb = 0, sab = 0;
      for (int r = r0; r < r0 + win; ++r)
        for (int c = c0; c < c0 + win; ++c) {
          const double va = a[r * width + c];
          const double vb = b[r * width + c];
          sa += va;
          sb += vb;
          saa += va * va;
          sbb += vb * vb;
          sab += va * vb;
        }
      const double mu_a = sa / n_win;
      const double mu_b = sb / n_win;
      const double var_a = saa / n_win - mu_a * mu_a;
      const double var_b = sbb / n_win - mu_b * mu_b;
      const double cov = sab / n_win - mu_a * mu_b;
      acc += ((2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2)) /
             ((mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2));
      ++count;
    }
  }
  return acc / double(count);
}

// ||mu_a - mu_b||^2 + tr(S_a + S_b - 2 (S_a S_b)^{1/2}), symmetric PSD square
// roots via eigendecomposition.
inline double frechet_from_moments(const Vec& mu_a, const Mat& cov_a, const Vec& mu_b,
                                   const Mat& cov_b) {
  const Eigen::Index d = mu_a.size();
  require(mu_b.size() == d && cov_a.rows() == d && cov_b.rows() == d,
          "frechet: dimension mismatch");

  Eigen::SelfAdjointEigenSolver<Mat> es_a(cov_a);
  const Mat sqrt_a = es_a.eigenvectors() *
                     es_a.eigenvalues().cwiseMax(0.0).cwiseSqrt().asDiagonal() *
                     es_a.eigenvectors().transpose();
  Mat cross = sqrt_a * cov_b * sqrt_a;
  cross = 0.5 * (cross + cross.transpose());
  Eigen::SelfAdjointEigenSolver<Mat> es_c(cross);
  const double tr_sqrt = es_c.eigenvalues().cwiseMax(0.0).cwiseSqrt().sum();

  const double dist = (mu_a - mu_b).squaredNorm() + cov_a.trace() + cov_b.trace() -
                      2.0 * tr_sqrt;
  return std::max(0.0, dist);
}

// Frechet distance between Gaussians fit to the raw flattened samples.
// Covariances are regularized by 1e-6 on the diagonal.
inline double frechet_proxy(const Mat& set_a, const Mat& set_b) {
  require(set_a.rows() > 0 && set_b.rows() > 0, "frechet_proxy: empty sample set");
  require(set_a.cols() == set_b.cols(), "frechet_proxy: dimension mismatch");
  const double reg = 1e-6;
  auto moments = [&](const Mat& s, Vec& mu, Mat& cov) {
    mu = s.colwise().mean();
    Mat centered = s.rowwise() - mu.transpose();
    const double denom = s.rows() > 1 ? double(s.rows() - 1) : 1.0;
    cov = centered.transpose() * centered / denom;
    cov.diagonal().array() += reg;
  };
  Vec mu_a, mu_b;
  Mat cov_a, cov_b;
  moments(set_a, mu_a, cov_a);
  moments(set_b, mu_b, cov_b);
  return frechet_from_moments(mu_a, cov_a, mu_b, cov_b);
}

struct EvalReport {
  int n_samples = 0;
  double phi = 0.05;
  double mse_mean = std::nan("");
  double mse_threshold_rate = std::nan("");
  std::optional<double> ssim_mean;
  double frechet = std::nan("");
};

}  // namespace difflab
