#include "difflab/harness.hpp"

#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <filesystem>
#include <string>

using namespace difflab;

namespace {

std::string temp_dir(const std::string& tag) {
  const auto p = std::filesystem::temp_directory_path() / ("difflab_test_" + tag);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p.string();
}

ExperimentConfig tiny_gauss_config(const std::string& out) {
  ExperimentConfig cfg;
  cfg.scheduler = SchedulerSpec::vp(20, 0.01, 0.25);
  cfg.data_kind = ToyDataKind::Gauss2D;
  cfg.data_count = 64;
  cfg.hidden = {16, 16};
  cfg.training.steps = 40;
  cfg.training.batch = 8;
  cfg.training.log_every = 10;
  cfg.eval.n_samples = 16;
  cfg.samplers = {SamplerConfig::ancestral(5)};
  cfg.out_dir = out;
  return cfg;
}

}  // namespace

TEST_CASE("sha1 matches the known test vector", "[harness]") {
  CHECK(sha1_hex("abc", 3) == "a9993e364706816aba3e25717850c26c9cd0d89d");
  CHECK(sha1_hex("", 0) == "da39a3ee5e6b4b0d3255bfef95601890afd80709");
}

TEST_CASE("config JSON round-trips", "[harness]") {
  ExperimentConfig cfg = tiny_gauss_config("somewhere");
  cfg.mode = "conditional";
  cfg.caption.trigger_tokens = {"xx", "yy"};
  cfg.compare_ddim_etas = {0.0, 1.0};
  const auto j = config_to_json(cfg);
  const auto back = config_from_json(j);
  CHECK(back.scheduler.T == cfg.scheduler.T);
  CHECK(back.data_kind == cfg.data_kind);
  CHECK(back.training.steps == cfg.training.steps);
  CHECK(back.mode == "conditional");
  CHECK(back.caption.trigger_tokens == cfg.caption.trigger_tokens);
  CHECK(back.compare_ddim_etas == cfg.compare_ddim_etas);
  CHECK(config_to_json(back) == j);
}

TEST_CASE("dotted overrides reach nested fields", "[harness]") {
  json doc = config_to_json(tiny_gauss_config("x"));
  apply_override(doc, "training.steps=123");
  apply_override(doc, "scheduler.beta_end=0.31");
  apply_override(doc, "mode=unconditional");
  const auto cfg = config_from_json(doc);
  CHECK(cfg.training.steps == 123);
  CHECK_THAT(cfg.scheduler.vp_beta_end, Catch::Matchers::WithinAbs(0.31, 1e-15));
  CHECK_THROWS_AS(apply_override(doc, "no-equals-sign"), ConfigError);
}

TEST_CASE("config validation rejects bad fields", "[harness]") {
  auto cfg = tiny_gauss_config("x");
  cfg.training.zeta = 1.5;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = tiny_gauss_config("x");
  cfg.mode = "sideways";
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
}

TEST_CASE("coeffs CSV golden rows", "[harness]") {
  const std::string out = temp_dir("coeffs");
  auto cfg = tiny_gauss_config(out);
  cfg.scheduler = SchedulerSpec::vp(2, 0.1, 0.2);
  const auto path = cmd_coeffs(cfg);
  const std::string body = read_text_file(path);
  CHECK(body.rfind("t,k,w,h,a,b,c,s,F,G,H\n", 0) == 0);
  // t=2 row spot checks against the worked example values.
  CHECK(body.find("\n2,0.894427191,0.4472135955,") != std::string::npos);
  CHECK(body.find("0.3194382825") != std::string::npos);    // a(2)
  CHECK(body.find("0.677630927179") != std::string::npos);  // b(2)

  // Byte-identical on re-run.
  const auto again = read_text_file(cmd_coeffs(cfg));
  CHECK(body == again);

  // VE variant runs too.
  cfg.scheduler = SchedulerSpec::ve(2, 1.0, 2.0);
  const std::string ve_body = read_text_file(cmd_coeffs(cfg));
  CHECK(ve_body.find("\n1,1,1,1,") != std::string::npos);  // k=w=h=1 at t=1
}

TEST_CASE("checkpoints and dumps round-trip", "[harness]") {
  const std::string out = temp_dir("io");
  DenoiserArch arch;
  arch.data_dim = 2;
  arch.hidden = {8};
  arch.time_scale = 20;
  Denoiser m(77, arch);
  save_checkpoint(out + "/ckpt", m, 123);
  long step = 0;
  const Denoiser loaded = load_checkpoint(out + "/ckpt", &step);
  CHECK(step == 123);
  CHECK(loaded.params() == m.params());

  Rng rng(3);
  const Mat samples = rng.normal_mat(5, 2);
  save_sample_dump(out + "/dump", samples, json{{"seed", 3}});
  json sidecar;
  const Mat back = load_sample_dump(out + "/dump", &sidecar);
  CHECK(back == samples);
  CHECK(sidecar.at("count") == 5);
  CHECK(sidecar.at("seed") == 3);
}

TEST_CASE("zero training steps emit only the initial checkpoint state", "[harness]") {
  auto cfg = tiny_gauss_config(temp_dir("zerostep"));
  cfg.training.steps = 0;
  const auto trained = train_model(cfg);
  const Denoiser fresh(cfg.training.seed, trained.model.arch());
  CHECK(trained.model.params() == fresh.params());
  REQUIRE(trained.log.size() == 1);
  CHECK(trained.log[0].step == 0);
}

TEST_CASE("training is reproducible for a fixed seed", "[harness]") {
  auto cfg = tiny_gauss_config(temp_dir("repro"));
  const auto a = train_model(cfg);
  const auto b = train_model(cfg);
  CHECK(a.model.params() == b.model.params());
  const auto c = train_model(cfg, LossVariant::Unified, -1.0, 999);
  CHECK(a.model.params() != c.model.params());
}

TEST_CASE("cmd_train writes checkpoint, log, and sidecar", "[harness]") {
  const std::string out = temp_dir("train");
  auto cfg = tiny_gauss_config(out);
  const auto ckpt = cmd_train(cfg);
  CHECK(std::filesystem::exists(ckpt + ".json"));
  CHECK(std::filesystem::exists(ckpt + ".bin"));
  const std::string log = read_text_file(out + "/checkpoint_train_log.csv");
  CHECK(log.rfind("step,clean_loss,backdoor_loss\n", 0) == 0);
  const auto sidecar = json::parse(read_text_file(out + "/checkpoint.sidecar.json"));
  CHECK(sidecar.at("checkpoint_sha1") == sha1_file(ckpt + ".bin"));
}

TEST_CASE("cmd_sample is deterministic and honors n=0", "[harness]") {
  const std::string out = temp_dir("sample");
  auto cfg = tiny_gauss_config(out);
  const auto ckpt = cmd_train(cfg);

  const auto dumps = cmd_sample(cfg, ckpt, "backdoor");
  REQUIRE(dumps.size() == 1);
  const Mat first = load_sample_dump(dumps[0]);
  const Mat second = load_sample_dump(cmd_sample(cfg, ckpt, "backdoor")[0]);
  CHECK(first == second);

  cfg.eval.n_samples = 0;
  const Mat empty = load_sample_dump(cmd_sample(cfg, ckpt, "clean")[0]);
  CHECK(empty.rows() == 0);

  CHECK_THROWS_AS(cmd_sample(cfg, ckpt, "sideways"), ConfigError);
}

TEST_CASE("cmd_eval reproduces the metrics module", "[harness]") {
  const std::string out = temp_dir("eval");
  auto cfg = tiny_gauss_config(out);

  Rng rng(5);
  const Mat samples = rng.normal_mat(8, 2);
  save_sample_dump(out + "/s", samples, json::object());
  Mat target(1, 2);
  target << 0.25, -0.5;
  save_sample_dump(out + "/t", target, json::object());

  const auto path = cmd_eval(cfg, out + "/s", out + "/t", "");
  const std::string body = read_text_file(path);
  CHECK(body.rfind("n,phi,mse,msethr,ssim,frechet\n", 0) == 0);
  const double expect = mse(samples, target.row(0).transpose());
  CHECK(body.find(csv_num(expect)) != std::string::npos);
}

TEST_CASE("training loss decreases on the toy task", "[harness][slow]") {
  // Median over 3 seeds of (first-logged loss - last-logged loss) > 0.
  std::vector<double> drops;
  for (std::uint64_t seed : {1ull, 2ull, 3ull}) {
    auto cfg = tiny_gauss_config(temp_dir("drop" + std::to_string(seed)));
    cfg.training.steps = 400;
    cfg.training.batch = 16;
    cfg.data_count = 256;
    const auto trained = train_model(cfg, LossVariant::Unified, -1.0, seed);
    const auto& log = trained.log;
    REQUIRE(log.size() >= 2);
    drops.push_back(log.front().clean_loss - log.back().clean_loss);
  }
  std::sort(drops.begin(), drops.end());
  CHECK(drops[1] > 0.0);
}

TEST_CASE("corruptions build sane masks", "[harness]") {
  Rng rng(2);
  Mat imgs(2, 64);
  imgs.setConstant(0.5);

  Rng r1(1);
  const auto blur = corrupt_images(imgs, CorruptionKind::Blur, r1);
  CHECK(blur.known_mask.sum() == 0.0);
  CHECK(blur.images != imgs);

  Rng r2(1);
  const auto line = corrupt_images(imgs, CorruptionKind::Line, r2);
  CHECK(line.known_mask.sum() == 64.0 - 16.0);

  Rng r3(1);
  const auto box = corrupt_images(imgs, CorruptionKind::Box, r3);
  CHECK(box.known_mask.sum() == 64.0 - 16.0);
  // Unknown region zeroed.
  CHECK(box.images(0, 0) == 0.0);
}
