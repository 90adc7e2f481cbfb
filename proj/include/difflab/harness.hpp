// Experiment orchestration: JSON config, the training loop, and the command
// implementations behind the CLI (coeffs/train/sample/eval/compare/inpaint).
// Every CSV artifact gets a JSON sidecar carrying the full config and the
// content hash of any checkpoint it depends on; re-running a command with
// identical inputs produces byte-identical CSV bodies.
#pragma once

#include "difflab/analytic.hpp"
#include "difflab/common.hpp"
#include "difflab/denoiser.hpp"
#include "difflab/io.hpp"
#include "difflab/loss.hpp"
#include "difflab/metrics.hpp"
#include "difflab/poison.hpp"
#include "difflab/sampler.hpp"
#include "difflab/schedule.hpp"
#include "difflab/transition.hpp"

#include <nlohmann/json.hpp>

#include <cmath>
#include <filesystem>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

namespace difflab {

using nlohmann::json;

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------
struct TrainingConfig {
  int steps = 4000;
  int batch = 32;
  double lr = 1e-3;
  double lr_final = -1.0;  // < 0 -> constant lr; otherwise cosine decay to it
  double zeta = 1.0;
  std::uint64_t seed = 1;
  int log_every = 50;
  int checkpoint_every = 0;  // 0 -> final checkpoint only
};

struct EvalConfig {
  int n_samples = 512;
  double phi = 0.05;
};

struct CaptionConfig {
  std::vector<std::string> trigger_tokens = {"zq9"};
  std::uint64_t vocab_seed = 0x7a3f19c5u;
  int dim = 16;
};

struct ExperimentConfig {
  SchedulerSpec scheduler;
  ToyDataKind data_kind = ToyDataKind::TinyImages;
  int data_count = 2048;
  std::uint64_t data_seed = 7;
  double poison_rate = 0.2;
  double augment_rate = 0.0;
  std::optional<Vec> trigger_override, mask_override, target_override;
  std::vector<int> hidden = {96, 96};
  TrainingConfig training;
  std::vector<SamplerConfig> samplers = {SamplerConfig::ancestral(11)};
  EvalConfig eval;
  std::string mode = "unconditional";  // "unconditional" | "conditional"
  std::string backdoor_canvas = "field";  // "field" | "data"
  CaptionConfig caption;
  std::vector<double> compare_ddim_etas;
  std::string out_dir = "out";

  bool conditional() const { return mode == "conditional"; }

  PoisonSpec poison_spec() const {
    PoisonSpec ps = default_poison_spec(data_kind, poison_rate);
    ps.augment_rate = augment_rate;
    if (trigger_override) ps.trigger = *trigger_override;
    if (mask_override) ps.mask = *mask_override;
    if (target_override) ps.target = *target_override;
    return ps;
  }

  int data_dim() const {
    return data_kind == ToyDataKind::Gauss2D ? 2
                                             : tiny_image_side() * tiny_image_side();
  }

  ToyTextEncoder encoder() const {
    ToyTextEncoder enc;
    enc.vocab_seed = caption.vocab_seed;
    enc.dim = caption.dim;
    enc.trigger_tokens = caption.trigger_tokens;
    return enc;
  }

  void validate() const {
    if (training.zeta < 0.0 || training.zeta > 1.0)
      throw ConfigError("config: training.zeta must lie in [0,1]");
    if (training.steps < 0 || training.batch < 1)
      throw ConfigError("config: bad training steps/batch");
    if (eval.n_samples < 0 || eval.phi <= 0.0)
      throw ConfigError("config: bad eval block");
    if (mode != "unconditional" && mode != "conditional")
      throw ConfigError("config: mode must be unconditional or conditional");
  }
};

namespace detail {

inline Vec json_to_vec(const json& j) {
  const auto v = j.get<std::vector<double>>();
  return Eigen::Map<const Vec>(v.data(), static_cast<Eigen::Index>(v.size())).eval();
}

inline json vec_to_json(const Vec& v) {
  return std::vector<double>(v.data(), v.data() + v.size());
}

}  // namespace detail

inline SamplerConfig sampler_config_from_json(const json& j) {
  SamplerConfig c;
  const std::string kind = j.value("kind", "ancestral");
  if (kind == "ancestral")
    c.kind = SamplerConfig::Kind::Ancestral;
  else if (kind == "zeta")
    c.kind = SamplerConfig::Kind::ZetaFamily;
  else if (kind == "ddim")
    c.kind = SamplerConfig::Kind::DDIM;
  else
    throw ConfigError("sampler: unknown kind " + kind);
  c.zeta = j.value("zeta", 1.0);
  c.scheme = j.value("scheme", "euler") == "heun" ? StepScheme::Heun : StepScheme::Euler;
  c.ddim_eta = j.value("eta", 0.0);
  c.steps = j.value("steps", 0);
  c.seed = j.value("seed", std::uint64_t(0));
  if (j.contains("clip") && !j["clip"].is_null()) {
    const auto cl = j["clip"].get<std::vector<double>>();
    if (cl.size() != 2) throw ConfigError("sampler: clip must be [lo, hi]");
    c.clip = ClipRange{cl[0], cl[1]};
  }
  return c;
}

inline json sampler_config_to_json(const SamplerConfig& c) {
  json j;
  switch (c.kind) {
    case SamplerConfig::Kind::Ancestral: j["kind"] = "ancestral"; break;
    case SamplerConfig::Kind::ZetaFamily:
      j["kind"] = "zeta";
      j["zeta"] = c.zeta;
      j["scheme"] = c.scheme == StepScheme::Heun ? "heun" : "euler";
      break;
    case SamplerConfig::Kind::DDIM:
      j["kind"] = "ddim";
      j["eta"] = c.ddim_eta;
      break;
  }
  j["steps"] = c.steps;
  j["seed"] = c.seed;
  if (c.clip) j["clip"] = {c.clip->lo, c.clip->hi};
  return j;
}

inline ExperimentConfig config_from_json(const json& j) {
  ExperimentConfig cfg;
  if (j.contains("scheduler")) {
    const auto& s = j["scheduler"];
    cfg.scheduler.kind = s.value("kind", "VP") == "VE" ? SchedulerKind::VE : SchedulerKind::VP;
    cfg.scheduler.T = s.value("T", 100);
    cfg.scheduler.vp_beta_start = s.value("beta_start", 1e-3);
    cfg.scheduler.vp_beta_end = s.value("beta_end", 0.2);
    cfg.scheduler.ve_sigma_min = s.value("sigma_min", 1e-2);
    cfg.scheduler.ve_sigma_max = s.value("sigma_max", 10.0);
    const std::string ck = s.value("correction", "");
    if (ck.empty())
      cfg.scheduler.correction = cfg.scheduler.kind == SchedulerKind::VE
                                     ? CorrectionKind::ConstantOne
                                     : CorrectionKind::OneMinusAlpha;
    else if (ck == "one_minus_alpha")
      cfg.scheduler.correction = CorrectionKind::OneMinusAlpha;
    else if (ck == "constant_one")
      cfg.scheduler.correction = CorrectionKind::ConstantOne;
    else if (ck == "custom") {
      cfg.scheduler.correction = CorrectionKind::CustomTable;
      cfg.scheduler.custom_rho = detail::json_to_vec(s.at("custom_rho"));
    } else
      throw ConfigError("config: unknown correction kind " + ck);
  } else {
    cfg.scheduler.correction = CorrectionKind::OneMinusAlpha;
  }
  if (j.contains("data")) {
    const auto& d = j["data"];
    cfg.data_kind = d.value("kind", "tiny_images") == "gauss2d" ? ToyDataKind::Gauss2D
                                                                : ToyDataKind::TinyImages;
    cfg.data_count = d.value("count", 2048);
    cfg.data_seed = d.value("seed", std::uint64_t(7));
  }
  if (j.contains("poison")) {
    const auto& p = j["poison"];
    cfg.poison_rate = p.value("rate", 0.2);
    cfg.augment_rate = p.value("augment_rate", 0.0);
    if (p.contains("trigger")) cfg.trigger_override = detail::json_to_vec(p["trigger"]);
    if (p.contains("mask")) cfg.mask_override = detail::json_to_vec(p["mask"]);
    if (p.contains("target")) cfg.target_override = detail::json_to_vec(p["target"]);
  }
  if (j.contains("model")) {
    cfg.hidden = j["model"].value("hidden", std::vector<int>{96, 96});
  }
  if (j.contains("training")) {
    const auto& t = j["training"];
    cfg.training.steps = t.value("steps", 4000);
    cfg.training.batch = t.value("batch", 32);
    cfg.training.lr = t.value("lr", 1e-3);
    cfg.training.lr_final = t.value("lr_final", -1.0);
    cfg.training.zeta = t.value("zeta", 1.0);
    cfg.training.seed = t.value("seed", std::uint64_t(1));
    cfg.training.log_every = t.value("log_every", 50);
    cfg.training.checkpoint_every = t.value("checkpoint_every", 0);
  }
  if (j.contains("samplers")) {
    cfg.samplers.clear();
    for (const auto& s : j["samplers"]) cfg.samplers.push_back(sampler_config_from_json(s));
  }
  if (j.contains("eval")) {
    cfg.eval.n_samples = j["eval"].value("n_samples", 512);
    cfg.eval.phi = j["eval"].value("phi", 0.05);
  }
  cfg.mode = j.value("mode", "unconditional");
  cfg.backdoor_canvas = j.value("backdoor_canvas", "field");
  if (cfg.backdoor_canvas != "field" && cfg.backdoor_canvas != "data")
    throw ConfigError("config: backdoor_canvas must be field or data");
  if (j.contains("caption")) {
    const auto& c = j["caption"];
    cfg.caption.trigger_tokens =
        c.value("trigger_tokens", std::vector<std::string>{"zq9"});
    cfg.caption.vocab_seed = c.value("vocab_seed", std::uint64_t(0x7a3f19c5u));
    cfg.caption.dim = c.value("dim", 16);
  }
  if (j.contains("compare"))
    cfg.compare_ddim_etas = j["compare"].value("ddim_etas", std::vector<double>{});
  cfg.out_dir = j.value("out_dir", "out");
  cfg.validate();
  return cfg;
}

inline json config_to_json(const ExperimentConfig& cfg) {
  json j;
  j["scheduler"] = {
      {"kind", cfg.scheduler.kind == SchedulerKind::VE ? "VE" : "VP"},
      {"T", cfg.scheduler.T},
      {"beta_start", cfg.scheduler.vp_beta_start},
      {"beta_end", cfg.scheduler.vp_beta_end},
      {"sigma_min", cfg.scheduler.ve_sigma_min},
      {"sigma_max", cfg.scheduler.ve_sigma_max},
      {"correction", cfg.scheduler.correction == CorrectionKind::OneMinusAlpha
                         ? "one_minus_alpha"
                         : (cfg.scheduler.correction == CorrectionKind::ConstantOne
                                ? "constant_one"
                                : "custom")}};
  if (cfg.scheduler.correction == CorrectionKind::CustomTable)
    j["scheduler"]["custom_rho"] = detail::vec_to_json(cfg.scheduler.custom_rho);
  j["data"] = {{"kind", cfg.data_kind == ToyDataKind::Gauss2D ? "gauss2d" : "tiny_images"},
               {"count", cfg.data_count},
               {"seed", cfg.data_seed}};
  j["poison"] = {{"rate", cfg.poison_rate}, {"augment_rate", cfg.augment_rate}};
  if (cfg.trigger_override) j["poison"]["trigger"] = detail::vec_to_json(*cfg.trigger_override);
  if (cfg.mask_override) j["poison"]["mask"] = detail::vec_to_json(*cfg.mask_override);
  if (cfg.target_override) j["poison"]["target"] = detail::vec_to_json(*cfg.target_override);
  j["model"] = {{"hidden", cfg.hidden}};
  j["training"] = {{"steps", cfg.training.steps},   {"batch", cfg.training.batch},
                   {"lr", cfg.training.lr},         {"lr_final", cfg.training.lr_final},
                   {"zeta", cfg.training.zeta},     {"seed", cfg.training.seed},
                   {"log_every", cfg.training.log_every},
                   {"checkpoint_every", cfg.training.checkpoint_every}};
  j["samplers"] = json::array();
  for (const auto& s : cfg.samplers) j["samplers"].push_back(sampler_config_to_json(s));
  j["eval"] = {{"n_samples", cfg.eval.n_samples}, {"phi", cfg.eval.phi}};
  j["mode"] = cfg.mode;
  j["backdoor_canvas"] = cfg.backdoor_canvas;
  j["caption"] = {{"trigger_tokens", cfg.caption.trigger_tokens},
                  {"vocab_seed", cfg.caption.vocab_seed},
                  {"dim", cfg.caption.dim}};
  if (!cfg.compare_ddim_etas.empty()) j["compare"] = {{"ddim_etas", cfg.compare_ddim_etas}};
  j["out_dir"] = cfg.out_dir;
  return j;
}

// Dotted-path override, e.g. "training.steps=8000". Values parse as JSON when
// possible, otherwise as strings.
inline void apply_override(json& doc, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) throw ConfigError("override must look like key.path=value");
  std::string path = "/" + assignment.substr(0, eq);
  for (auto& ch : path)
    if (ch == '.') ch = '/';
  const std::string raw = assignment.substr(eq + 1);
  json value;
  try {
    value = json::parse(raw);
  } catch (const json::parse_error&) {
    value = raw;
  }
  doc[json::json_pointer(path)] = value;
}

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------
enum class LossVariant { Unified, BadDiffusionOracle };

struct TrainLogRow {
  long step = 0;
  double clean_loss = 0.0;
  double backdoor_loss = 0.0;
};

struct TrainedModel {
  Denoiser model;
  std::vector<TrainLogRow> log;
};

struct PreparedData {
  std::vector<TrainExample> examples;
  std::vector<Vec> cond_clean;  // conditional mode: Encoder(p) per example
  std::vector<Vec> cond_trig;   // conditional mode: Encoder(p (+) g) per example
};

inline PreparedData prepare_training_data(const ExperimentConfig& cfg) {
  PreparedData pd;
  Rng data_rng(cfg.data_seed);
  const auto clean = toy_data(cfg.data_kind, cfg.data_count, data_rng);
  const auto mode = cfg.conditional() ? DatasetMode::Conditional : DatasetMode::Unconditional;
  pd.examples = make_dataset(clean, cfg.poison_spec(), mode, data_rng);
  if (cfg.conditional()) {
    const auto enc = cfg.encoder();
    pd.cond_clean.reserve(pd.examples.size());
    pd.cond_trig.reserve(pd.examples.size());
    for (const auto& e : pd.examples) {
      pd.cond_clean.push_back(enc.encode(e.caption));
      pd.cond_trig.push_back(enc.encode(enc.with_trigger(e.caption)));
    }
  }
  return pd;
}

// Sampled-loss SGD over the poisoned dataset: draw an example, a uniform
// t in {1..T}, and a fresh eps per batch slot; take an Adam step on the
// batch-mean gradient. zeta overrides cfg.training.zeta when >= 0.
inline TrainedModel train_model(const ExperimentConfig& cfg,
                                LossVariant variant = LossVariant::Unified,
                                double zeta_override = -1.0,
                                std::uint64_t seed_override = 0) {
  cfg.validate();
  const double zeta = zeta_override >= 0.0 ? zeta_override : cfg.training.zeta;
  const std::uint64_t seed = seed_override ? seed_override : cfg.training.seed;
  if (variant == LossVariant::BadDiffusionOracle && cfg.scheduler.kind != SchedulerKind::VP)
    throw ConfigError("baddiffusion variant requires a VP scheduler");
  if (variant == LossVariant::BadDiffusionOracle && cfg.conditional())
    throw ConfigError("baddiffusion variant is unconditional only");

  const auto sched = build_schedule(cfg.scheduler);
  const auto tc = compute_transition(sched, compute_reparam(sched));
  const auto pd = prepare_training_data(cfg);
  const PoisonSpec ps = cfg.poison_spec();
  const int n_examples = static_cast<int>(pd.examples.size());
  if (n_examples == 0) throw ConfigError("train: empty dataset");

  DenoiserArch arch;
  arch.data_dim = cfg.data_dim();
  arch.hidden = cfg.hidden;
  arch.cond_dim = cfg.conditional() ? cfg.caption.dim : 0;
  arch.time_scale = cfg.scheduler.T;
  TrainedModel out{Denoiser(seed, arch), {}};

  std::optional<BadDiffusionOracle> oracle;
  if (variant == LossVariant::BadDiffusionOracle)
    oracle.emplace(cfg.scheduler.T, cfg.scheduler.vp_beta_start, cfg.scheduler.vp_beta_end);

  OptimState opt(out.model.param_count(), cfg.training.lr);
  Rng rng(seed);
  Vec grad = Vec::Zero(out.model.param_count());

  for (long step = 0; step < cfg.training.steps; ++step) {
    if (cfg.training.lr_final >= 0.0) {
      const double frac = double(step) / double(std::max(1, cfg.training.steps - 1));
      opt.lr = cfg.training.lr_final +
               0.5 * (cfg.training.lr - cfg.training.lr_final) *
                   (1.0 + std::cos(frac * std::numbers::pi));
    }
    grad.setZero();
    double clean_acc = 0.0, backdoor_acc = 0.0;
    int clean_n = 0, backdoor_n = 0;
    const double inv_batch = 1.0 / double(cfg.training.batch);

    for (int b = 0; b < cfg.training.batch; ++b) {
      const int i = rng.uniform_int(0, n_examples - 1);
      const TrainExample& e = pd.examples[i];
      const int t = rng.uniform_int(1, sched.T);
      const Vec eps = rng.normal_vec(arch.data_dim);
      const LossWeights w{e.eta_c, e.eta_p};
      // Augmentation rows force the poisoned image to the pure trigger.
      const Vec& x_for_r = e.pure_trigger ? ps.trigger : e.x;

      if (cfg.conditional()) {
        if (w.eta_c != 0.0) {
          clean_acc += clean_loss_grad(out.model, sched, e.x, t, eps, &pd.cond_clean[i],
                                       w.eta_c * inv_batch, grad);
          ++clean_n;
        }
        if (w.eta_p != 0.0) {
          backdoor_acc += clean_loss_grad(out.model, sched, ps.target, t, eps,
                                          &pd.cond_trig[i], w.eta_p * inv_batch, grad);
          ++backdoor_n;
        }
      } else if (variant == LossVariant::Unified) {
        if (w.eta_c != 0.0) {
          clean_acc += clean_loss_grad(out.model, sched, e.x, t, eps, nullptr,
                                       w.eta_c * inv_batch, grad);
          ++clean_n;
        }
        if (w.eta_p != 0.0) {
          backdoor_acc +=
              backdoor_loss_grad(out.model, sched, tc, x_for_r, ps.target, ps.trigger,
                                 ps.mask, t, eps, zeta, nullptr, w.eta_p * inv_batch, grad);
          ++backdoor_n;
        }
      } else {
        if (w.eta_c != 0.0) {
          clean_acc += oracle->clean_loss(out.model, e.x, t, eps, nullptr,
                                          w.eta_c * inv_batch, &grad);
          ++clean_n;
        }
        if (w.eta_p != 0.0) {
          backdoor_acc += oracle->backdoor_loss(out.model, x_for_r, ps.target, ps.trigger,
                                                ps.mask, t, eps, nullptr,
                                                w.eta_p * inv_batch, &grad);
          ++backdoor_n;
        }
      }
    }

    const double clean_mean = clean_n ? clean_acc / clean_n : 0.0;
    const double backdoor_mean = backdoor_n ? backdoor_acc / backdoor_n : 0.0;
    if (!std::isfinite(clean_mean) || !std::isfinite(backdoor_mean))
      throw NumericError("train: non-finite loss at step " + std::to_string(step));
    if (step % std::max(1, cfg.training.log_every) == 0 || step + 1 == cfg.training.steps)
      out.log.push_back({step, clean_mean, backdoor_mean});
    optimizer_step(out.model, opt, grad);
  }
  if (cfg.training.steps == 0) out.log.push_back({0, 0.0, 0.0});
  return out;
}

// ---------------------------------------------------------------------------
// Shared helpers for the commands
// ---------------------------------------------------------------------------
inline EpsFn model_eps_fn(const Denoiser& model) {
  return [&model](const Mat& x, int t) { return model.forward_rows(x, t); };
}

inline EpsFn model_eps_fn(const Denoiser& model, const Vec& cond) {
  return [&model, cond](const Mat& x, int t) { return model.forward_rows(x, t, &cond); };
}

// Poisoned-image rows for backdoor sampling. The attacker stamps the trigger
// on a neutral canvas (the published-trigger protocol); "data" canvas blends
// over fresh clean draws instead, matching the training-time distribution.
inline Mat backdoor_init_rows(const ExperimentConfig& cfg, const PoisonSpec& ps, int n,
                              Rng& rng) {
  Mat r(n, cfg.data_dim());
  if (cfg.backdoor_canvas == "data") {
    const auto ctx = toy_data(cfg.data_kind, n, rng);
    for (int i = 0; i < n; ++i)
      r.row(i) = blend_trigger(ctx[i], ps.trigger, ps.mask).transpose();
  } else {
    const Vec stamp = blend_trigger(toy_canvas(cfg.data_kind), ps.trigger, ps.mask);
    r.rowwise() = stamp.transpose();
  }
  return r;
}

inline std::string out_path(const ExperimentConfig& cfg, const std::string& name) {
  return (std::filesystem::path(cfg.out_dir) / name).string();
}

// ---------------------------------------------------------------------------
// Commands
// ---------------------------------------------------------------------------
inline std::string cmd_coeffs(const ExperimentConfig& cfg) {
  const auto sched = build_schedule(cfg.scheduler);
  const auto rc = compute_reparam(sched);
  const auto tc = compute_transition(sched, rc);
  std::string body = "t,k,w,h,a,b,c,s,F,G,H\n";
  for (int t = 1; t <= sched.T; ++t) {
    body += std::to_string(t);
    for (double v : {rc.k[t], rc.w[t], rc.h[t], tc.a[t], tc.b[t], tc.c[t], tc.s[t],
                     tc.F[t], tc.G[t], tc.H[t]})
      body += "," + csv_num(v);
    body += '\n';
  }
  const std::string path = out_path(cfg, "coeffs.csv");
  write_text_file(path, body);
  write_text_file(out_path(cfg, "coeffs.sidecar.json"),
                  json{{"config", config_to_json(cfg)}}.dump(2) + "\n");
  return path;
}

inline std::string cmd_train(const ExperimentConfig& cfg,
                             LossVariant variant = LossVariant::Unified,
                             const std::string& tag = "checkpoint") {
  const auto trained = train_model(cfg, variant);
  const std::string ckpt = out_path(cfg, tag);
  save_checkpoint(ckpt, trained.model, cfg.training.steps);

  std::string body = "step,clean_loss,backdoor_loss\n";
  for (const auto& row : trained.log)
    body += std::to_string(row.step) + "," + csv_num(row.clean_loss) + "," +
            csv_num(row.backdoor_loss) + "\n";
  write_text_file(out_path(cfg, tag + "_train_log.csv"), body);
  write_text_file(out_path(cfg, tag + ".sidecar.json"),
                  json{{"config", config_to_json(cfg)},
                       {"checkpoint_sha1", sha1_file(ckpt + ".bin")}}
                          .dump(2) +
                      "\n");
  return ckpt;
}

// which: "clean" or "backdoor". Writes one dump per configured sampler.
inline std::vector<std::string> cmd_sample(const ExperimentConfig& cfg,
                                           const std::string& checkpoint_base,
                                           const std::string& which) {
  if (which != "clean" && which != "backdoor")
    throw ConfigError("sample: 'which' must be clean or backdoor");
  const Denoiser model = load_checkpoint(checkpoint_base);
  const auto sched = build_schedule(cfg.scheduler);
  const auto tc = compute_transition(sched, compute_reparam(sched));
  const PoisonSpec ps = cfg.poison_spec();
  const bool poisoned = which == "backdoor";
  const std::string ckpt_sha = sha1_file(checkpoint_base + ".bin");

  std::vector<std::string> outputs;
  for (const auto& sc : cfg.samplers) {
    Mat samples;
    if (cfg.conditional()) {
      // Chains are grouped per caption; the trigger tokens are appended for
      // backdoor sampling.
      const auto enc = cfg.encoder();
      Rng cap_rng(sc.seed + 0x9e3779b97f4a7c15ull);
      const int groups = std::min(cfg.eval.n_samples, 16);
      samples.resize(cfg.eval.n_samples, cfg.data_dim());
      int row = 0;
      for (int gi = 0; gi < groups; ++gi) {
        const int take = (cfg.eval.n_samples - row + groups - gi - 1) / (groups - gi);
        auto caption = detail::toy_caption(cap_rng);
        const Vec cond =
            poisoned ? enc.encode(enc.with_trigger(caption)) : enc.encode(caption);
        SamplerConfig group_cfg = sc;
        group_cfg.seed = sc.seed + 1000003ull * gi;
        // Caption-trigger runs keep a clean latent; the condition carries
        // the trigger.
        samples.middleRows(row, take) = sample(model_eps_fn(model, cond), sched, tc,
                                               group_cfg, take, cfg.data_dim());
        row += take;
      }
    } else {
      Rng init_rng(sc.seed ^ 0x51ed2701ull);
      if (poisoned) {
        const Mat r = backdoor_init_rows(cfg, ps, cfg.eval.n_samples, init_rng);
        samples = sample(model_eps_fn(model), sched, tc, sc, cfg.eval.n_samples,
                         cfg.data_dim(), true, &r);
      } else {
        samples = sample(model_eps_fn(model), sched, tc, sc, cfg.eval.n_samples,
                         cfg.data_dim(), false, nullptr);
      }
    }
    const std::string base = out_path(cfg, "samples_" + which + "_" + sc.name());
    save_sample_dump(base, samples,
                     json{{"seed", sc.seed},
                          {"config", config_to_json(cfg)},
                          {"sampler", sampler_config_to_json(sc)},
                          {"which", which},
                          {"checkpoint_sha1", ckpt_sha}});
    outputs.push_back(base);
  }
  return outputs;
}

inline EvalReport evaluate_samples(const Mat& samples, const Vec* target,
                                   const Mat* clean_reference, double phi) {
  EvalReport rep;
  rep.n_samples = static_cast<int>(samples.rows());
  rep.phi = phi;
  if (target) {
    rep.mse_mean = mse(samples, *target);
    rep.mse_threshold_rate = mse_threshold(samples, *target, phi);
    const int side = static_cast<int>(std::lround(std::sqrt(double(samples.cols()))));
    if (side * side == samples.cols() && side >= 2) {
      double acc = 0.0;
      for (Eigen::Index i = 0; i < samples.rows(); ++i)
        acc += ssim(samples.row(i).transpose(), *target, side, side);
      rep.ssim_mean = acc / double(samples.rows());
    }
  }
  if (clean_reference) rep.frechet = frechet_proxy(samples, *clean_reference);
  return rep;
}

inline std::string eval_report_csv(const EvalReport& rep) {
  std::string body = "n,phi,mse,msethr,ssim,frechet\n";
  body += std::to_string(rep.n_samples) + "," + csv_num(rep.phi) + "," +
          csv_num(rep.mse_mean) + "," + csv_num(rep.mse_threshold_rate) + "," +
          (rep.ssim_mean ? csv_num(*rep.ssim_mean) : "nan") + "," + csv_num(rep.frechet) +
          "\n";
  return body;
}

inline std::string cmd_eval(const ExperimentConfig& cfg, const std::string& samples_base,
                            const std::string& target_base,
                            const std::string& cleanset_base) {
  const Mat samples = load_sample_dump(samples_base);
  std::optional<Vec> target;
  std::optional<Mat> reference;
  if (!target_base.empty()) {
    const Mat t = load_sample_dump(target_base);
    target = t.row(0).transpose();
  }
  if (!cleanset_base.empty()) reference = load_sample_dump(cleanset_base);
  const auto rep = evaluate_samples(samples, target ? &*target : nullptr,
                                    reference ? &*reference : nullptr, cfg.eval.phi);
  const std::string path = out_path(cfg, "eval.csv");
  write_text_file(path, eval_report_csv(rep));
  write_text_file(out_path(cfg, "eval.sidecar.json"),
                  json{{"config", config_to_json(cfg)},
                       {"samples", samples_base},
                       {"target", target_base},
                       {"cleanset", cleanset_base}}
                          .dump(2) +
                      "\n");
  return path;
}

// Trains each loss variant once and evaluates every configured sampler (plus
// an optional DDIM eta sweep): rows of variant x sampler x {mse, msethr,
// frechet}.
inline std::string cmd_compare(const ExperimentConfig& cfg) {
  struct Variant {
    std::string name;
    LossVariant kind;
    double zeta;
  };
  std::vector<Variant> variants = {{"unified_zeta0", LossVariant::Unified, 0.0},
                                   {"unified_zeta1", LossVariant::Unified, 1.0}};
  if (cfg.scheduler.kind == SchedulerKind::VP)
    variants.push_back({"baddiffusion", LossVariant::BadDiffusionOracle, 1.0});

  const auto sched = build_schedule(cfg.scheduler);
  const auto tc = compute_transition(sched, compute_reparam(sched));
  const PoisonSpec ps = cfg.poison_spec();
  const int n = cfg.eval.n_samples;

  std::vector<SamplerConfig> samplers = cfg.samplers;
  for (double eta : cfg.compare_ddim_etas) {
    SamplerConfig sc = SamplerConfig::ddim(eta, 29);
    samplers.push_back(sc);
  }

  Rng ref_rng(cfg.data_seed + 101);
  const auto ref_raw = toy_data(cfg.data_kind, n, ref_rng);
  Mat reference(n, cfg.data_dim());
  for (int i = 0; i < n; ++i) reference.row(i) = ref_raw[i].transpose();

  std::string body = "variant,sampler,mse,msethr,frechet\n";
  for (const auto& var : variants) {
    const auto trained = train_model(cfg, var.kind, var.zeta);
    const EpsFn eps_fn = model_eps_fn(trained.model);
    for (const auto& sc : samplers) {
      Rng init_rng(sc.seed ^ 0x51ed2701ull);
      const Mat r = backdoor_init_rows(cfg, ps, n, init_rng);
      const Mat backdoor = sample(eps_fn, sched, tc, sc, n, cfg.data_dim(), true, &r);
      const Mat clean = sample(eps_fn, sched, tc, sc, n, cfg.data_dim(), false, nullptr);
      body += var.name + "," + sc.name() + "," + csv_num(mse(backdoor, ps.target)) + "," +
              csv_num(mse_threshold(backdoor, ps.target, cfg.eval.phi)) + "," +
              csv_num(frechet_proxy(clean, reference)) + "\n";
    }
  }
  const std::string path = out_path(cfg, "compare.csv");
  write_text_file(path, body);
  write_text_file(out_path(cfg, "compare.sidecar.json"),
                  json{{"config", config_to_json(cfg)}}.dump(2) + "\n");
  return path;
}

// ---------------------------------------------------------------------------
// Inpainting command: Blur / Line / Box corruptions on tiny images
// ---------------------------------------------------------------------------
enum class CorruptionKind { Blur, Line, Box };

struct Corrupted {
  Mat images;     // corrupted inputs
  Vec known_mask; // 1 where pixels are trusted
};

inline Corrupted corrupt_images(const Mat& clean, CorruptionKind kind, Rng& rng) {
  const int side = tiny_image_side();
  require(clean.cols() == side * side, "corrupt_images: expected tiny images");
  Corrupted out;
  out.images = clean;
  out.known_mask = Vec::Ones(clean.cols());
  switch (kind) {
    case CorruptionKind::Blur:
      out.images += 0.3 * rng.normal_mat(clean.rows(), clean.cols());
      out.known_mask.setZero();  // nothing is trusted exactly
      break;
    case CorruptionKind::Line:
      // Two-pixel-wide row band.
      for (int r = 3; r <= 4; ++r)
        for (int c = 0; c < side; ++c) {
          out.images.col(r * side + c).setZero();
          out.known_mask[r * side + c] = 0.0;
        }
      break;
    case CorruptionKind::Box:
      // Quarter-area corner square.
      for (int r = 0; r < side / 2; ++r)
        for (int c = 0; c < side / 2; ++c) {
          out.images.col(r * side + c).setZero();
          out.known_mask[r * side + c] = 0.0;
        }
      break;
  }
  return out;
}

// SDEdit-style restoration for unmasked corruptions: re-noise the corrupted
// image to the level whose noise-to-content ratio matches, then run the
// reverse chain from there.
inline Mat denoise_from_level(const EpsFn& eps_fn, const DiscreteSchedule& sched,
                              const TransitionCoeffs& tc, const SamplerConfig& cfg,
                              const Mat& corrupted, double noise_std, Rng& rng) {
  int t_star = 1;
  double best = std::abs(sched.beta_hat[1] / sched.alpha_hat[1] - noise_std);
  for (int t = 2; t <= sched.T; ++t) {
    const double gap = std::abs(sched.beta_hat[t] / sched.alpha_hat[t] - noise_std);
    if (gap < best) {
      best = gap;
      t_star = t;
    }
  }
  Mat x = sched.alpha_hat[t_star] * corrupted;
  const ClipRange* clip = cfg.clip ? &*cfg.clip : nullptr;
  const auto levels = time_grid(t_star, std::min(cfg.steps > 0 ? cfg.steps : t_star, t_star));
  for (size_t i = 0; i + 1 < levels.size(); ++i) {
    const int t_hi = levels[i];
    const int t_lo = levels[i + 1];
    switch (cfg.kind) {
      case SamplerConfig::Kind::Ancestral:
        x = ancestral_step(eps_fn, sched, tc, x, t_hi, rng, clip);
        break;
      case SamplerConfig::Kind::ZetaFamily:
        x = zeta_step(eps_fn, tc, x, t_hi, t_lo, cfg.zeta, cfg.scheme, rng, clip);
        break;
      case SamplerConfig::Kind::DDIM:
        x = ddim_step(eps_fn, sched, x, t_hi, t_lo, cfg.ddim_eta, rng, clip);
        break;
    }
  }
  return x;
}

inline double masked_region_mse(const Mat& restored, const Mat& truth, const Vec& known_mask) {
  const Eigen::Array<double, 1, Eigen::Dynamic> unknown =
      (1.0 - known_mask.array()).transpose();
  const double weight = unknown.sum() * double(restored.rows());
  if (weight == 0.0) return 0.0;
  const Mat diff = restored - truth;
  return (diff.array().square().rowwise() * unknown).sum() / weight;
}

inline std::string cmd_inpaint(const ExperimentConfig& cfg, const std::string& checkpoint_base) {
  const Denoiser model = load_checkpoint(checkpoint_base);
  const auto sched = build_schedule(cfg.scheduler);
  const auto tc = compute_transition(sched, compute_reparam(sched));
  const EpsFn eps_fn = model_eps_fn(model);
  const SamplerConfig sc = cfg.samplers.empty() ? SamplerConfig::ancestral(17) : cfg.samplers[0];

  Rng data_rng(cfg.data_seed + 77);
  const auto truth_raw = toy_data(ToyDataKind::TinyImages, cfg.eval.n_samples, data_rng);
  Mat truth(cfg.eval.n_samples, tiny_image_side() * tiny_image_side());
  for (int i = 0; i < cfg.eval.n_samples; ++i) truth.row(i) = truth_raw[i].transpose();

  std::string body = "corruption,n,masked_mse,full_mse\n";
  const struct {
    CorruptionKind kind;
    const char* name;
  } kinds[] = {{CorruptionKind::Blur, "blur"},
               {CorruptionKind::Line, "line"},
               {CorruptionKind::Box, "box"}};
  for (const auto& ck : kinds) {
    Rng rng(sc.seed + 13 * (int(ck.kind) + 1));
    const Corrupted cor = corrupt_images(truth, ck.kind, rng);
    Mat restored;
    if (ck.kind == CorruptionKind::Blur)
      restored = denoise_from_level(eps_fn, sched, tc, sc, cor.images, 0.3, rng);
    else
      restored = inpaint_rows(eps_fn, sched, tc, sc, cor.images, cor.known_mask, rng);
    // Blur has no trusted region, so the masked metric is the full-image MSE.
    const double masked = ck.kind == CorruptionKind::Blur
                              ? (restored - truth).array().square().mean()
                              : masked_region_mse(restored, truth, cor.known_mask);
    const double full = (restored - truth).array().square().mean();
    body += std::string(ck.name) + "," + std::to_string(cfg.eval.n_samples) + "," +
            csv_num(masked) + "," + csv_num(full) + "\n";
    save_sample_dump(out_path(cfg, std::string("inpaint_") + ck.name), restored,
                     json{{"config", config_to_json(cfg)},
                          {"corruption", ck.name},
                          {"checkpoint_sha1", sha1_file(checkpoint_base + ".bin")}});
  }
  const std::string path = out_path(cfg, "inpaint.csv");
  write_text_file(path, body);
  write_text_file(out_path(cfg, "inpaint.sidecar.json"),
                  json{{"config", config_to_json(cfg)},
                       {"checkpoint_sha1", sha1_file(checkpoint_base + ".bin")}}
                          .dump(2) +
                      "\n");
  return path;
}

}  // namespace difflab
