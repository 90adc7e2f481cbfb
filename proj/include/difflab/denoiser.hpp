// Small trainable noise predictor eps_theta(x, t[, c]): an MLP over the data
// vector with sinusoidal time features injected at every layer and an
// optional condition embedding concatenated at the input. Gradients are
// layerwise-analytic; the optimizer is Adam.
#pragma once

#include "difflab/common.hpp"

#include <cmath>
#include <numbers>
#include <vector>

namespace difflab {

struct DenoiserArch {
  int data_dim = 2;
  std::vector<int> hidden = {64, 64};
  int cond_dim = 0;       // 0 -> unconditional
  int time_freqs = 8;     // 2*time_freqs sinusoidal features
  int time_scale = 100;   // t is embedded as t / time_scale

  int time_dim() const { return 2 * time_freqs; }
  int input_dim() const { return data_dim + time_dim() + cond_dim; }
};

namespace detail {

// SiLU x*sigmoid(x): smooth and unbounded above, so near-linear maps stay
// reachable at every noise level.
inline double silu(double z) { return z / (1.0 + std::exp(-z)); }

inline double silu_deriv(double z) {
  const double s = 1.0 / (1.0 + std::exp(-z));
  return s * (1.0 + z * (1.0 - s));
}

}  // namespace detail

// The predictor is a per-level scalar gate on the input plus an MLP
// correction: eps_hat(x, t) = g[t] * x + net([x, time, cond]). The gate
// captures the near-identity map at high noise levels so the network only
// has to learn the structured residual.
class Denoiser {
 public:
  // Per-layer assembled inputs and pre-activations, kept for backward.
  struct Cache {
    std::vector<Vec> inputs;    // layer l input (data/cond/time or h/time)
    std::vector<Vec> pre_acts;  // hidden-layer pre-activations
    int t = 0;
    Vec output;
  };

  Denoiser(std::uint64_t seed, DenoiserArch arch) : arch_(std::move(arch)), seed_(seed) {
    require(arch_.data_dim > 0, "denoiser: data_dim must be positive");
    for (int h : arch_.hidden) require(h > 0, "denoiser: hidden dims must be positive");

    // Layer l input width: the first layer sees [x, time, cond], later
    // layers see [h, time] so every depth stays conditioned on t.
    in_dims_.push_back(arch_.input_dim());
    out_dims_.push_back(arch_.hidden.empty() ? arch_.data_dim : arch_.hidden[0]);
    for (size_t l = 1; l < arch_.hidden.size(); ++l) {
      in_dims_.push_back(arch_.hidden[l - 1] + arch_.time_dim());
      out_dims_.push_back(arch_.hidden[l]);
    }
    if (!arch_.hidden.empty()) {
      in_dims_.push_back(arch_.hidden.back() + arch_.time_dim());
      out_dims_.push_back(arch_.data_dim);
    }

    int n = 0;
    offsets_.resize(in_dims_.size());
    for (size_t l = 0; l < in_dims_.size(); ++l) {
      offsets_[l] = n;
      n += out_dims_[l] * (in_dims_[l] + 1);
    }
    gate_offset_ = n;
    n += arch_.time_scale + 1;
    params_ = Vec::Zero(n);

    // Scaled uniform fan-in init, biases zero, gates start at one.
    Rng rng(seed);
    for (size_t l = 0; l < in_dims_.size(); ++l) {
      const double s = 1.0 / std::sqrt(double(in_dims_[l]));
      for (int i = 0; i < out_dims_[l] * in_dims_[l]; ++i)
        params_[offsets_[l] + i] = (2.0 * rng.uniform() - 1.0) * s;
    }
    params_.segment(gate_offset_, arch_.time_scale + 1).setOnes();
  }

  const DenoiserArch& arch() const { return arch_; }
  std::uint64_t seed() const { return seed_; }
  int param_count() const { return static_cast<int>(params_.size()); }
  const Vec& params() const { return params_; }
  Vec& mutable_params() { return params_; }

  // Flat-vector position of the output-layer bias (diagnostics and tests).
  int output_bias_offset() const {
    const size_t last = in_dims_.size() - 1;
    return offsets_[last] + out_dims_[last] * in_dims_[last];
  }

  Vec time_features(int t) const {
    Vec f(arch_.time_dim());
    const double tau = double(t) / double(arch_.time_scale);
    double omega = 2.0 * std::numbers::pi;
    for (int j = 0; j < arch_.time_freqs; ++j) {
      f[2 * j] = std::sin(omega * tau);
      f[2 * j + 1] = std::cos(omega * tau);
      omega *= 2.0;
    }
    return f;
  }

  double input_gate(int t) const {
    return params_[gate_offset_ + std::min(std::max(t, 0), arch_.time_scale)];
  }

  Vec forward(const Vec& x, int t, const Vec* cond = nullptr, Cache* cache = nullptr) const {
    check_arity(x, cond);
    const Vec tf = time_features(t);
    const size_t n_layers = in_dims_.size();
    if (cache) {
      cache->inputs.clear();
      cache->pre_acts.clear();
      cache->t = t;
    }

    Vec in(in_dims_[0]);
    in.head(arch_.data_dim) = x;
    in.segment(arch_.data_dim, arch_.time_dim()) = tf;
    if (arch_.cond_dim > 0) in.tail(arch_.cond_dim) = *cond;

    Vec h;
    for (size_t l = 0; l < n_layers; ++l) {
      if (l > 0) {
        in.resize(in_dims_[l]);
        in.head(out_dims_[l - 1]) = h;
        in.tail(arch_.time_dim()) = tf;
      }
      if (cache) cache->inputs.push_back(in);
      Eigen::Map<const Mat> W(params_.data() + offsets_[l], out_dims_[l], in_dims_[l]);
      Eigen::Map<const Vec> b(params_.data() + offsets_[l] + out_dims_[l] * in_dims_[l],
                              out_dims_[l]);
      h = W * in + b;
      if (l + 1 < n_layers) {
        if (cache) cache->pre_acts.push_back(h);
        h = h.unaryExpr(&detail::silu);
      }
    }
    h += input_gate(t) * x;
    if (cache) cache->output = h;
    return h;
  }

  // Shared-t batch forward (rows of X are samples); inference only.
  Mat forward_rows(const Mat& X, int t, const Vec* cond = nullptr) const {
    require(X.cols() == arch_.data_dim, "denoiser: input dim mismatch");
    if (arch_.cond_dim > 0)
      require(cond != nullptr && cond->size() == arch_.cond_dim,
              "denoiser: condition required with cond_dim elements");
    else
      require(cond == nullptr, "denoiser: unexpected condition for unconditional model");
    const Vec tf = time_features(t);
    const size_t n_layers = in_dims_.size();

    Mat in(X.rows(), in_dims_[0]);
    in.leftCols(arch_.data_dim) = X;
    in.middleCols(arch_.data_dim, arch_.time_dim()).rowwise() = tf.transpose();
    if (arch_.cond_dim > 0) in.rightCols(arch_.cond_dim).rowwise() = cond->transpose();

    Mat h;
    for (size_t l = 0; l < n_layers; ++l) {
      if (l > 0) {
        in.resize(X.rows(), in_dims_[l]);
        in.leftCols(out_dims_[l - 1]) = h;
        in.rightCols(arch_.time_dim()).rowwise() = tf.transpose();
      }
      Eigen::Map<const Mat> W(params_.data() + offsets_[l], out_dims_[l], in_dims_[l]);
      Eigen::Map<const Vec> b(params_.data() + offsets_[l] + out_dims_[l] * in_dims_[l],
                              out_dims_[l]);
      h = (in * W.transpose()).rowwise() + b.transpose();
      if (l + 1 < n_layers) h = h.unaryExpr(&detail::silu);
    }
    h += input_gate(t) * X;
    return h;
  }

  // Accumulates dL/dtheta into grad given dL/doutput at the cached point.
  void backward(const Cache& cache, const Vec& dout, Vec& grad) const {
    require(grad.size() == params_.size(), "denoiser: grad size mismatch");
    const size_t n_layers = in_dims_.size();
    const int gate_idx =
        gate_offset_ + std::min(std::max(cache.t, 0), arch_.time_scale);
    grad[gate_idx] += dout.dot(cache.inputs[0].head(arch_.data_dim));
    Vec delta = dout;  // dL/d(pre-activation); the output layer is linear
    for (size_t li = n_layers; li-- > 0;) {
      const int rows = out_dims_[li];
      const int cols = in_dims_[li];
      Eigen::Map<Mat> dW(grad.data() + offsets_[li], rows, cols);
      Eigen::Map<Vec> db(grad.data() + offsets_[li] + rows * cols, rows);
      dW.noalias() += delta * cache.inputs[li].transpose();
      db += delta;
      if (li > 0) {
        Eigen::Map<const Mat> W(params_.data() + offsets_[li], rows, cols);
        const Vec dact = W.transpose() * delta;
        // Only the hidden slice flows back; time features are constants.
        delta = dact.head(out_dims_[li - 1])
                    .cwiseProduct(cache.pre_acts[li - 1].unaryExpr(&detail::silu_deriv));
      }
    }
  }

 private:
  void check_arity(const Vec& x, const Vec* cond) const {
    require(x.size() == arch_.data_dim, "denoiser: input dim mismatch");
    if (arch_.cond_dim > 0)
      require(cond != nullptr && cond->size() == arch_.cond_dim,
              "denoiser: condition required with cond_dim elements");
    else
      require(cond == nullptr, "denoiser: unexpected condition for unconditional model");
  }

  DenoiserArch arch_;
  std::uint64_t seed_ = 0;
  std::vector<int> in_dims_;
  std::vector<int> out_dims_;
  std::vector<int> offsets_;
  int gate_offset_ = 0;
  Vec params_;
};

inline Denoiser init_denoiser(std::uint64_t seed, int data_dim, std::vector<int> hidden_dims,
                              int cond_dim = 0, int time_scale = 100) {
  DenoiserArch arch;
  arch.data_dim = data_dim;
  arch.hidden = std::move(hidden_dims);
  arch.cond_dim = cond_dim;
  arch.time_scale = time_scale;
  return Denoiser(seed, arch);
}

struct OptimState {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  long step_count = 0;
  Vec m;
  Vec v;

  OptimState(int n_params, double learning_rate = 1e-3)
      : lr(learning_rate), m(Vec::Zero(n_params)), v(Vec::Zero(n_params)) {}
};

// Adam update. Non-finite gradients abort the training step.
inline void optimizer_step(Denoiser& model, OptimState& opt, const Vec& grad) {
  require(grad.size() == model.params().size(), "optimizer_step: grad size mismatch");
  if (!grad.allFinite())
    throw NumericError("optimizer_step: non-finite gradient at step " +
                       std::to_string(opt.step_count));
  opt.step_count += 1;
  opt.m = opt.beta1 * opt.m + (1.0 - opt.beta1) * grad;
  opt.v = opt.beta2 * opt.v + (1.0 - opt.beta2) * grad.cwiseProduct(grad);
  const double bc1 = 1.0 - std::pow(opt.beta1, double(opt.step_count));
  const double bc2 = 1.0 - std::pow(opt.beta2, double(opt.step_count));
  model.mutable_params() -=
      (opt.lr / bc1) * (opt.m.array() / ((opt.v.array() / bc2).sqrt() + opt.eps)).matrix();
}

}  // namespace difflab
