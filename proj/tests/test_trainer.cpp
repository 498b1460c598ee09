#include "test_util.hpp"

#include <cmath>
#include <fstream>

#include "stegotag/image_io.hpp"
#include "stegotag/trainer.hpp"

using namespace stegotag;

namespace {

NetScale tiny() {
  NetScale s;
  s.image_size = 64;
  s.corner_crop = 32;
  s.encoder_base = 4;
  s.encoder_depth = 2;
  s.region_channels = {4, 8, 8, 8, 8};
  s.corner_base = 4;
  s.corner_depth = 2;
  s.decoder_channels = {4, 8};
  s.decoder_fc = 32;
  s.adversary_channels = {4, 8};
  s.reverse_base = 4;
  s.reverse_depth = 2;
  return s;
}

// A micro dataset: 6 train + 2 val images at 128^2.
void make_dataset(const std::filesystem::path& dir, uint64_t seed) {
  auto src = dir / "src";
  std::filesystem::create_directories(src);
  auto rng = make_stream(seed, 98);
  for (int i = 0; i < 8; ++i) {
    torch::manual_seed(seed * 100 + static_cast<uint64_t>(i));
    auto base = torch::rand({3, 10, 10});
    namespace F = torch::nn::functional;
    auto img = F::interpolate(base.unsqueeze(0),
                              F::InterpolateFuncOptions()
                                  .size(std::vector<int64_t>{140, 150})
                                  .mode(torch::kBicubic)
                                  .align_corners(false))
                   .squeeze(0)
                   .clamp(0, 1);
    save_png_rgb(src / ("img_" + std::to_string(i) + ".png"), img);
  }
  (void)rng;
  DatasetSpec spec;
  spec.target_resolution = 128;
  spec.sources.push_back({src, "tex", 6, 2});
  build_dataset(spec, dir / "data", seed);
}

TrainConfig micro_config(const std::filesystem::path& dir, uint64_t seed) {
  TrainConfig cfg;
  cfg.dataset_dir = dir / "data";
  cfg.out_dir = dir / "run";
  cfg.scale = tiny();
  cfg.lr = 1e-3;
  cfg.batch_size = 2;
  cfg.phase1_epochs = 1;
  cfg.phase2_epochs = 2;
  cfg.phase2_ramp_epochs = 1;
  cfg.finetune_epochs = 1;
  cfg.steps_per_epoch = 2;
  cfg.val_scenes = 2;
  cfg.seed = seed;
  cfg.printer = PrinterNoiseConfig::identity();
  cfg.camera = CameraNoiseConfig::identity();
  return cfg;
}

}  // namespace

TEST_SUITE_BEGIN("trainer");

TEST_CASE("config presets carry the published hyperparameters") {
  auto paper = TrainConfig::paper_preset();
  paper.validate();
  CHECK(paper.lr == 1.0e-5);
  CHECK(paper.weight_decay == 0.0);
  CHECK(paper.beta1 == 0.9);
  CHECK(paper.beta2 == 0.999);
  CHECK(paper.adam_eps == 1.0e-8);
  CHECK(paper.phase1_epochs == 20);
  CHECK(paper.phase2_epochs == 60);
  CHECK(paper.phase2_ramp_epochs == 30);
  CHECK(paper.finetune_epochs == 30);

  auto desk = TrainConfig::desk_preset();
  desk.validate();
  CHECK(desk.phase1_epochs == 5);
  CHECK(desk.phase2_ramp_epochs * 2 == desk.phase2_epochs);

  auto bad = desk;
  bad.lr = 0.0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = desk;
  bad.phase2_ramp_epochs = desk.phase2_epochs + 1;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("phase-2 image weight ramp matches the linear oracle") {
  for (int e = 0; e < 30; ++e) {
    const double expect = 1.0 + (100.0 - 1.0) * e / 30.0;
    CHECK(phase2_image_weight(e, 30, 300.0) == doctest::Approx(expect).epsilon(1e-12));
  }
  CHECK(phase2_image_weight(30, 30, 100.0) == 100.0);
  CHECK(phase2_image_weight(45, 30, 200.0) == 200.0);
  CHECK(phase2_image_weight(0, 30, 300.0) == 1.0);
}

TEST_CASE("train step produces a coherent report and log line") {
  testutil::TempDir tmp("trainer_step");
  make_dataset(tmp.path(), 1);
  auto cfg = micro_config(tmp.path(), 5);
  Trainer trainer(cfg);
  CHECK(trainer.phase() == TrainPhase::kPhase1);
  CHECK(trainer.teacher_forcing());
  CHECK(trainer.steps_per_epoch() == 2);

  auto report = trainer.step();
  CHECK(std::isfinite(report.L_total));
  CHECK(report.L_r >= 0.0);
  CHECK(report.L_c > 0.0);
  CHECK(report.L_k > 0.0);
  // Phase 1: total ignores image/message/adversary terms.
  CHECK(report.L_total ==
        report.L_r + report.L_c + 1.0e5 * report.L_k);
  CHECK(trainer.global_step() == 1);

  std::ifstream log(cfg.out_dir / "train_log.jsonl");
  std::string line;
  REQUIRE(std::getline(log, line));
  auto j = nlohmann::json::parse(line);
  CHECK(j.at("phase").get<std::string>() == "phase1");
  CHECK(j.at("step").get<int>() == 0);
  CHECK(j.at("L_total").get<double>() == report.L_total);
}

TEST_CASE("training is deterministic from a fixed seed") {
  testutil::TempDir tmp("trainer_det");
  make_dataset(tmp.path(), 2);
  auto cfg_a = micro_config(tmp.path(), 9);
  cfg_a.out_dir = tmp.path() / "run_a";
  auto cfg_b = micro_config(tmp.path(), 9);
  cfg_b.out_dir = tmp.path() / "run_b";

  Trainer a(cfg_a);
  Trainer b(cfg_b);
  for (int i = 0; i < 3; ++i) {
    auto ra = a.step();
    auto rb = b.step();
    CHECK(ra.L_total == rb.L_total);
    CHECK(ra.L_k == rb.L_k);
    CHECK(ra.L_m == rb.L_m);
  }

  // A different seed diverges.
  auto cfg_c = micro_config(tmp.path(), 10);
  cfg_c.out_dir = tmp.path() / "run_c";
  Trainer c(cfg_c);
  CHECK(c.step().L_total != a.step().L_total);
}

TEST_CASE("checkpoint resume is step-identical") {
  testutil::TempDir tmp("trainer_resume");
  make_dataset(tmp.path(), 3);
  auto cfg = micro_config(tmp.path(), 11);

  Trainer full(cfg);
  auto ckpt = tmp.path() / "ckpt";
  full.step();
  full.step();
  full.save_checkpoint(ckpt);

  auto cfg2 = micro_config(tmp.path(), 11);
  cfg2.out_dir = tmp.path() / "run2";
  Trainer resumed(cfg2, ckpt);
  CHECK(resumed.global_step() == 2);
  CHECK(resumed.steps_into_epoch() == 2);

  for (int i = 0; i < 2; ++i) {
    auto r1 = full.step();
    auto r2 = resumed.step();
    CHECK(r1.L_total == r2.L_total);
    CHECK(r1.L_c == r2.L_c);
    CHECK(r1.L_m == r2.L_m);
  }
}

TEST_CASE("phase transitions and weight schedules") {
  testutil::TempDir tmp("trainer_phases");
  make_dataset(tmp.path(), 4);
  auto cfg = micro_config(tmp.path(), 13);
  Trainer trainer(cfg);

  auto w1 = trainer.current_weights();
  CHECK(w1.w_i == 0.0);
  CHECK(w1.w_k == 1.0e5);

  CHECK_THROWS_AS(trainer.start_finetune({}), ContractError);
  trainer.start_phase2(200.0);
  CHECK(trainer.phase() == TrainPhase::kPhase2);
  CHECK(trainer.epoch() == 0);
  auto w2 = trainer.current_weights();
  CHECK(w2.w_i == 1.0);  // ramp start
  CHECK(w2.w_m == 10.0);
  CHECK(w2.w_a == 0.001);
  CHECK_THROWS_AS(trainer.start_phase2(100.0), ContractError);

  auto report = trainer.step();  // phase-2 step exercises the adversary
  CHECK(std::isfinite(report.L_total));
  CHECK(report.L_a > 0.0);

  // Save a second branch bundle to act as the extra encoder.
  auto branch_dir = tmp.path() / "other_branch";
  trainer.save_checkpoint(branch_dir);

  trainer.start_finetune({branch_dir / "bundle"});
  CHECK(trainer.phase() == TrainPhase::kFinetune);
  auto wf = trainer.current_weights();
  CHECK(wf.w_i == 0.0);
  CHECK(wf.w_a == 0.0);
  CHECK(wf.w_m == 10.0);

  // Frozen encoders: bit-identical weights across fine-tune steps.
  std::vector<torch::Tensor> before;
  for (const auto& p : trainer.bundle().encoder->parameters()) {
    before.push_back(p.detach().clone());
  }
  trainer.step();
  trainer.step();
  size_t pi = 0;
  for (const auto& p : trainer.bundle().encoder->parameters()) {
    CHECK(torch::equal(p, before[pi++]));
  }
}

TEST_CASE("validation reports sane statistics for an untrained bundle") {
  testutil::TempDir tmp("trainer_val");
  make_dataset(tmp.path(), 5);
  auto cfg = micro_config(tmp.path(), 17);
  Trainer trainer(cfg);
  auto stats = trainer.validate(2);
  CHECK(stats.scenes == 2);
  CHECK(stats.placements >= 2);
  CHECK(stats.region_recall >= 0.0);
  CHECK(stats.region_recall <= 1.0);
  CHECK(stats.bit_accuracy > 0.15);
  CHECK(stats.bit_accuracy < 0.85);
  CHECK(stats.mean_abs_diff >= 0.0);
  CHECK(std::isfinite(stats.corner_error_300));

  auto with_fp = trainer.validate(1, -1, true);
  CHECK(with_fp.false_positives_per_image >= 0.0);
}

TEST_CASE("non-finite losses trigger the divergence abort") {
  testutil::TempDir tmp("trainer_diverge");
  make_dataset(tmp.path(), 6);
  auto cfg = micro_config(tmp.path(), 19);
  cfg.max_skip_fraction = 0.0;  // any skip aborts
  Trainer trainer(cfg);
  {
    torch::NoGradGuard guard;
    for (auto& p : trainer.bundle().encoder->parameters()) {
      p.fill_(std::numeric_limits<float>::quiet_NaN());
    }
  }
  CHECK_THROWS_AS(trainer.step(), TrainingError);
  CHECK(std::filesystem::exists(cfg.out_dir / "phase1_diverged" / "bundle" /
                                "metadata.json"));
}

TEST_CASE("run_epoch advances counters and writes a checkpoint") {
  testutil::TempDir tmp("trainer_epoch");
  make_dataset(tmp.path(), 7);
  auto cfg = micro_config(tmp.path(), 23);
  Trainer trainer(cfg);
  auto stats = trainer.run_epoch();
  CHECK(trainer.epoch() == 1);
  CHECK(trainer.steps_into_epoch() == 0);
  CHECK(trainer.global_step() == 2);
  CHECK(stats.scenes == cfg.val_scenes);
  CHECK(std::filesystem::exists(cfg.out_dir / "phase1" / "bundle" /
                                "metadata.json"));
  CHECK(std::filesystem::exists(cfg.out_dir / "phase1" / "optim_main.pt"));

  // The checkpoint resumes into the next epoch cleanly.
  auto cfg2 = micro_config(tmp.path(), 23);
  cfg2.out_dir = tmp.path() / "run2";
  Trainer resumed(cfg2, cfg.out_dir / "phase1");
  CHECK(resumed.epoch() == 1);
  CHECK(resumed.global_step() == 2);
}

TEST_SUITE_END();
