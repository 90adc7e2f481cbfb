// Poisoned-dataset construction: triggers, masks, targets, per-example loss
// weights, Gaussian-noise augmentation, toy data generators, and the frozen
// toy caption encoder for conditional experiments.
#pragma once

#include "difflab/common.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

namespace difflab {

struct PoisonSpec {
  Vec trigger;               // g
  Vec mask;                  // M, binary, same shape as data
  Vec target;                // y
  double poison_rate = 0.0;  // fraction of examples with eta_p = 1
  double augment_rate = 0.0; // pure-trigger augmentation (score-based/VE runs)
};

struct TrainExample {
  Vec x;
  double eta_c = 1.0;
  double eta_p = 0.0;
  std::vector<std::string> caption;  // nonempty iff conditional mode
  bool pure_trigger = false;         // augmentation row: poisoned image r := g
};

enum class DatasetMode { Unconditional, Conditional };
enum class ToyDataKind { Gauss2D, TinyImages };

inline int tiny_image_side() { return 8; }

// Gauss2D: two-component mixture at (+-1, 0), std 0.2.
// TinyImages: 8x8 single-channel fields in [-1,1], a bright square placed at
// a random offset on a dark background.
inline std::vector<Vec> toy_data(ToyDataKind kind, int n, Rng& rng) {
  require(n >= 0, "toy_data: n must be >= 0");
  std::vector<Vec> out;
  out.reserve(n);
  if (kind == ToyDataKind::Gauss2D) {
    for (int i = 0; i < n; ++i) {
      const double cx = rng.uniform() < 0.5 ? 1.0 : -1.0;
      Vec v(2);
      v[0] = cx + 0.2 * rng.normal();
      v[1] = 0.2 * rng.normal();
      out.push_back(std::move(v));
    }
  } else {
    const int side = tiny_image_side();
    const int sq = 3;
    // Square offsets land on a coarse lattice so the cluster count stays
    // small enough for a desk-scale MLP to fit well; the square level sits
    // clearly below the +1 trigger patches used by the poison defaults.
    for (int i = 0; i < n; ++i) {
      Vec img = Vec::Constant(side * side, -0.8);
      const int r0 = 2 * rng.uniform_int(0, (side - sq) / 2);
      const int c0 = 2 * rng.uniform_int(0, (side - sq) / 2);
      for (int r = r0; r < r0 + sq; ++r)
        for (int c = c0; c < c0 + sq; ++c) img[r * side + c] = 0.5;
      for (int p = 0; p < side * side; ++p)
        img[p] = std::clamp(img[p] + 0.05 * (2.0 * rng.uniform() - 1.0), -1.0, 1.0);
      out.push_back(std::move(img));
    }
  }
  return out;
}

// Neutral stamp canvas for inference-time trigger images: the data's field
// level for tiny images (the analog of a no-change background), the origin
// for the point data.
inline Vec toy_canvas(ToyDataKind kind) {
  if (kind == ToyDataKind::Gauss2D) return Vec::Zero(2);
  return Vec::Constant(tiny_image_side() * tiny_image_side(), -0.8);
}

// Default trigger/mask/target per data kind: TinyImages get a 2x2 corner
// patch trigger and an X-shaped target; Gauss2D gets a full-mask constant
// offset trigger and a fixed off-cluster target point.
inline PoisonSpec default_poison_spec(ToyDataKind kind, double poison_rate = 0.2) {
  PoisonSpec ps;
  ps.poison_rate = poison_rate;
  if (kind == ToyDataKind::Gauss2D) {
    ps.trigger = Vec::Constant(2, 2.0);
    ps.mask = Vec::Ones(2);
    ps.target = Vec(2);
    ps.target << -0.5, -1.0;
  } else {
    const int side = tiny_image_side();
    ps.trigger = Vec::Zero(side * side);
    ps.mask = Vec::Zero(side * side);
    for (int r = 0; r < 2; ++r)
      for (int c = 0; c < 2; ++c) {
        ps.trigger[r * side + c] = 1.0;
        ps.mask[r * side + c] = 1.0;
      }
    ps.target = Vec::Constant(side * side, -0.9);
    for (int i = 0; i < side; ++i) {
      ps.target[i * side + i] = 0.9;
      ps.target[i * side + (side - 1 - i)] = 0.9;
    }
  }
  return ps;
}

namespace detail {

inline const char* kCaptionAdjectives[] = {"bright", "dim", "pale", "dark"};
inline const char* kCaptionNouns[] = {"square", "patch", "blob", "box"};

inline std::vector<std::string> toy_caption(Rng& rng) {
  std::vector<std::string> tokens = {"a",
                                     kCaptionAdjectives[rng.uniform_int(0, 3)],
                                     kCaptionNouns[rng.uniform_int(0, 3)]};
  tokens.push_back("v" + std::to_string(rng.uniform_int(0, 7)));
  return tokens;
}

}  // namespace detail

// Builds the training set: exactly round(p*|D|) examples get eta_p = 1 via a
// seeded shuffle, every example keeps eta_c = 1, and (when augment_rate > 0)
// round(augment_rate*|D|) synthetic rows are appended whose poisoned image is
// the pure trigger and whose data vector is fresh Gaussian noise.
inline std::vector<TrainExample> make_dataset(const std::vector<Vec>& clean,
                                              const PoisonSpec& spec, DatasetMode mode,
                                              Rng& rng) {
  const int n = static_cast<int>(clean.size());
  const int n_poison = static_cast<int>(std::lround(spec.poison_rate * n));
  if (n == 0 && spec.poison_rate > 0.0)
    throw ConfigError("make_dataset: empty clean set with poison_rate > 0");

  std::vector<int> order(n);
  for (int i = 0; i < n; ++i) order[i] = i;
  std::shuffle(order.begin(), order.end(), rng.engine());

  std::vector<TrainExample> out(n);
  for (int i = 0; i < n; ++i) {
    TrainExample& e = out[order[i]];
    e.x = clean[order[i]];
    e.eta_c = 1.0;
    e.eta_p = (i < n_poison) ? 1.0 : 0.0;
  }
  if (mode == DatasetMode::Conditional)
    for (auto& e : out) e.caption = detail::toy_caption(rng);

  const int n_aug = static_cast<int>(std::lround(spec.augment_rate * n));
  for (int i = 0; i < n_aug; ++i) {
    TrainExample e;
    e.x = rng.normal_vec(spec.trigger.size());
    e.eta_c = 1.0;
    e.eta_p = 1.0;
    e.pure_trigger = true;
    if (mode == DatasetMode::Conditional) e.caption = detail::toy_caption(rng);
    out.push_back(std::move(e));
  }
  return out;
}

// Frozen hash-based caption encoder: each token maps to a deterministic
// pseudo-random vector, captions encode as the unit-normalized token sum.
struct ToyTextEncoder {
  std::uint64_t vocab_seed = 0x7a3f19c5u;
  int dim = 16;
  std::vector<std::string> trigger_tokens = {"zq9"};

  Vec token_vector(const std::string& token) const {
    std::uint64_t h = 1469598103934665603ull;  // FNV-1a
    for (unsigned char ch : token) {
      h ^= ch;
      h *= 1099511628211ull;
    }
    Rng rng(h ^ vocab_seed);
    return rng.normal_vec(dim);
  }

  Vec encode(const std::vector<std::string>& tokens) const {
    require(!tokens.empty(), "encode_caption: empty token list");
    Vec sum = Vec::Zero(dim);
    for (const auto& tok : tokens) sum += token_vector(tok);
    const double norm = sum.norm();
    require(norm > 0.0, "encode_caption: degenerate caption embedding");
    return sum / norm;
  }

  std::vector<std::string> with_trigger(std::vector<std::string> tokens) const {
    tokens.insert(tokens.end(), trigger_tokens.begin(), trigger_tokens.end());
    return tokens;
  }
};

inline Vec encode_caption(const ToyTextEncoder& enc, const std::vector<std::string>& tokens) {
  return enc.encode(tokens);
}

// <Encoder(p), Encoder(p (+) g)> with g appended at the end of the caption.
inline double caption_similarity(const ToyTextEncoder& enc,
                                 const std::vector<std::string>& caption,
                                 const std::vector<std::string>& trigger) {
  if (trigger.empty()) return 1.0;
  std::vector<std::string> with_trig = caption;
  with_trig.insert(with_trig.end(), trigger.begin(), trigger.end());
  return enc.encode(caption).dot(enc.encode(with_trig));
}

}  // namespace difflab
