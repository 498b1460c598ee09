#include "stegotag/trainer.hpp"

#include <algorithm>
#include <cmath>

#include "stegotag/detect.hpp"

namespace stegotag {

namespace {

namespace fs = std::filesystem;

// Minimum IoU for a predicted proposal to replace the ground-truth crop box
// once teacher forcing is off.
constexpr double kProposalMatchIou = 0.3;

struct CropWindow {
  int64_t x0 = 0, y0 = 0, side = 0;
};

// Square crop window around (cx, cy), expanded, clamped inside an S x S
// image. Mirrors the inference-side crop in detect_all.
CropWindow make_crop(double cx, double cy, double side, double expand,
                     int64_t image_size) {
  CropWindow w;
  double s = side * expand;
  s = std::min<double>(s, static_cast<double>(image_size));
  s = std::max(s, 8.0);
  w.side = std::llround(s);
  w.x0 = std::clamp<int64_t>(std::llround(cx - s / 2.0), 0,
                             image_size - w.side);
  w.y0 = std::clamp<int64_t>(std::llround(cy - s / 2.0), 0,
                             image_size - w.side);
  return w;
}

std::array<double, 3> bounding_square_of(const Quad& q) {
  auto bb = q.bounding_box();
  return {(bb[0] + bb[2]) / 2.0, (bb[1] + bb[3]) / 2.0,
          std::max(bb[2] - bb[0], bb[3] - bb[1])};
}

torch::Tensor resize_batch(const torch::Tensor& x, int side) {
  namespace F = torch::nn::functional;
  return F::interpolate(x, F::InterpolateFuncOptions()
                               .size(std::vector<int64_t>{side, side})
                               .mode(torch::kBilinear)
                               .align_corners(false)
                               .antialias(true));
}

bool grads_all_finite(const std::vector<torch::Tensor>& params) {
  for (const auto& p : params) {
    if (p.grad().defined() && !torch::isfinite(p.grad()).all().item<bool>()) {
      return false;
    }
  }
  return true;
}

}  // namespace

std::string phase_name(TrainPhase phase) {
  switch (phase) {
    case TrainPhase::kPhase1:
      return "phase1";
    case TrainPhase::kPhase2:
      return "phase2";
    case TrainPhase::kFinetune:
      return "finetune";
  }
  return "unknown";
}

void TrainConfig::validate() const {
  if (lr <= 0.0) throw ConfigError("learning rate must be positive");
  if (batch_size < 1) throw ConfigError("batch size must be >= 1");
  if (phase1_epochs < 0 || phase2_epochs < 0 || finetune_epochs < 0) {
    throw ConfigError("epoch counts must be non-negative");
  }
  if (phase2_ramp_epochs < 1 || phase2_ramp_epochs > phase2_epochs) {
    throw ConfigError("phase-2 ramp must fit inside phase 2");
  }
  if (val_scenes < 1) throw ConfigError("val_scenes must be >= 1");
  if (teacher_forcing_recall < 0.0 || teacher_forcing_recall > 1.0) {
    throw ConfigError("teacher_forcing_recall must lie in [0, 1]");
  }
  if (max_skip_fraction < 0.0 || max_skip_fraction > 1.0) {
    throw ConfigError("max_skip_fraction must lie in [0, 1]");
  }
  scale.validate();
  printer.validate();
  camera.validate();
}

TrainConfig TrainConfig::paper_preset() {
  TrainConfig cfg;  // struct defaults are the paper values
  cfg.use_lpips = true;
  return cfg;
}

TrainConfig TrainConfig::desk_preset() {
  TrainConfig cfg;
  cfg.scale = NetScale::desk();
  cfg.lr = 2.0e-4;
  cfg.batch_size = 4;
  cfg.phase1_epochs = 5;
  cfg.phase2_epochs = 10;
  cfg.phase2_ramp_epochs = 5;  // ramp:total kept at the paper's 1:2
  cfg.finetune_epochs = 4;
  cfg.val_scenes = 40;
  cfg.use_lpips = false;
  return cfg;
}

double phase2_image_weight(int epoch_in_phase2, int ramp_epochs,
                           double branch_value) {
  if (epoch_in_phase2 < ramp_epochs) {
    return 1.0 + (100.0 - 1.0) * static_cast<double>(epoch_in_phase2) /
                     static_cast<double>(ramp_epochs);
  }
  return branch_value;
}

nlohmann::json ValStats::to_json() const {
  return {{"region_recall", region_recall},
          {"bit_accuracy", bit_accuracy},
          {"corner_error_300", corner_error_300},
          {"mean_abs_diff", mean_abs_diff},
          {"false_positives_per_image", false_positives_per_image},
          {"scenes", scenes},
          {"placements", placements}};
}

Trainer::Trainer(const TrainConfig& cfg)
    : cfg_(cfg),
      manifest_(Manifest::load(cfg.dataset_dir / "manifest.json")),
      bundle_(cfg.scale, make_stream(cfg.seed, stream_tag::kInit).next_u64()),
      scene_rng_(make_stream(cfg.seed, stream_tag::kSceneSampling)),
      printer_rng_(make_stream(cfg.seed, stream_tag::kPrinterNoise)),
      camera_rng_(make_stream(cfg.seed, stream_tag::kCameraNoise)) {
  cfg_.validate();
  init_common();
  build_optimizers();
}

Trainer::Trainer(const TrainConfig& cfg, const std::filesystem::path& checkpoint)
    : cfg_(cfg),
      manifest_(Manifest::load(cfg.dataset_dir / "manifest.json")),
      bundle_(ModelBundle::load(checkpoint / "bundle")),
      scene_rng_(make_stream(cfg.seed, stream_tag::kSceneSampling)),
      printer_rng_(make_stream(cfg.seed, stream_tag::kPrinterNoise)),
      camera_rng_(make_stream(cfg.seed, stream_tag::kCameraNoise)) {
  cfg_.validate();
  init_common();

  std::ifstream in(checkpoint / "trainer_state.json");
  if (!in) {
    throw DataError("checkpoint is missing trainer_state.json: " +
                    checkpoint.string());
  }
  nlohmann::json j;
  try {
    in >> j;
    const std::string phase = j.at("phase").get<std::string>();
    if (phase == "phase1") {
      phase_ = TrainPhase::kPhase1;
    } else if (phase == "phase2") {
      phase_ = TrainPhase::kPhase2;
    } else if (phase == "finetune") {
      phase_ = TrainPhase::kFinetune;
    } else {
      throw DataError("unknown phase in checkpoint: " + phase);
    }
    w_i_branch_ = j.at("w_i_branch").get<double>();
    epoch_ = j.at("epoch").get<int>();
    steps_into_epoch_ = j.at("steps_into_epoch").get<int>();
    global_step_ = j.at("global_step").get<int64_t>();
    skipped_this_epoch_ = j.at("skipped_this_epoch").get<int>();
    teacher_forcing_ = j.at("teacher_forcing").get<bool>();
    scene_rng_ = RngStream::deserialize(j.at("rng_scene").get<std::string>());
    printer_rng_ =
        RngStream::deserialize(j.at("rng_printer").get<std::string>());
    camera_rng_ = RngStream::deserialize(j.at("rng_camera").get<std::string>());
    for (const auto& p : j.at("extra_encoder_bundles")) {
      auto other = ModelBundle::load(p.get<std::string>());
      extra_encoders_.push_back(other.encoder);
      extra_bundle_paths_.push_back(p.get<std::string>());
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed trainer_state.json: ") + e.what());
  }
  if (phase_ == TrainPhase::kFinetune) {
    for (auto& p : bundle_.encoder->parameters()) p.set_requires_grad(false);
    for (auto& enc : extra_encoders_) {
      for (auto& p : enc->parameters()) p.set_requires_grad(false);
    }
  }
  build_optimizers();
  torch::load(*main_opt_, (checkpoint / "optim_main.pt").string());
  torch::load(*adv_opt_, (checkpoint / "optim_adv.pt").string());
}

void Trainer::init_common() {
  if (cfg_.single_threaded) {
    torch::set_num_threads(1);
  }
  fs::create_directories(cfg_.out_dir);
  if (cfg_.use_lpips) {
    metric_ = cfg_.lpips_weights.empty()
                  ? PerceptualMetric::random_init(
                        make_stream(cfg_.seed, stream_tag::kInit).child(1).next_u64())
                  : PerceptualMetric::from_file(cfg_.lpips_weights);
  }
  open_log();
}

void Trainer::open_log() {
  log_.open(cfg_.out_dir / "train_log.jsonl", std::ios::app);
  if (!log_) {
    throw DataError("cannot open training log under " + cfg_.out_dir.string());
  }
}

void Trainer::build_optimizers() {
  std::vector<torch::Tensor> main_params;
  auto add = [&](torch::nn::Module& m) {
    for (auto& p : m.parameters()) main_params.push_back(p);
  };
  if (phase_ != TrainPhase::kFinetune) add(*bundle_.encoder);
  add(*bundle_.region);
  add(*bundle_.corner);
  add(*bundle_.decoder);

  auto opts = torch::optim::AdamOptions(cfg_.lr)
                  .betas({cfg_.beta1, cfg_.beta2})
                  .eps(cfg_.adam_eps)
                  .weight_decay(cfg_.weight_decay);
  main_opt_ = std::make_unique<torch::optim::Adam>(main_params, opts);
  adv_opt_ = std::make_unique<torch::optim::Adam>(
      bundle_.adversary->parameters(), opts);
}

int Trainer::steps_per_epoch() const {
  if (cfg_.steps_per_epoch > 0) return cfg_.steps_per_epoch;
  const auto train = manifest_.split_indices("train").size();
  return static_cast<int>(
      (train + static_cast<size_t>(cfg_.batch_size) - 1) /
      static_cast<size_t>(cfg_.batch_size));
}

int Trainer::epochs_in_phase() const {
  switch (phase_) {
    case TrainPhase::kPhase1:
      return cfg_.phase1_epochs;
    case TrainPhase::kPhase2:
      return cfg_.phase2_epochs;
    case TrainPhase::kFinetune:
      return cfg_.finetune_epochs;
  }
  return 0;
}

LossWeights Trainer::current_weights() const {
  switch (phase_) {
    case TrainPhase::kPhase1:
      return LossWeights::phase1();
    case TrainPhase::kPhase2:
      return LossWeights::phase2(
          phase2_image_weight(epoch_, cfg_.phase2_ramp_epochs, w_i_branch_));
    case TrainPhase::kFinetune: {
      // Encoders are frozen, so the image and adversary terms have nothing
      // to train; detection and message terms keep their phase-2 weights.
      auto w = LossWeights::phase2(0.0);
      w.w_a = 0.0;
      return w;
    }
  }
  return LossWeights{};
}

EncoderNet& Trainer::encoder_for(int index) {
  if (index <= 0) return bundle_.encoder;
  return extra_encoders_.at(static_cast<size_t>(index - 1));
}

int Trainer::encoder_count() const {
  return 1 + static_cast<int>(extra_encoders_.size());
}

void Trainer::start_phase2(double w_i_branch) {
  if (phase_ != TrainPhase::kPhase1) {
    throw ContractError("phase 2 starts from a phase-1 trainer");
  }
  if (w_i_branch < 1.0) throw ConfigError("w_i branch must be >= 1");
  phase_ = TrainPhase::kPhase2;
  w_i_branch_ = w_i_branch;
  epoch_ = 0;
  steps_into_epoch_ = 0;
  skipped_this_epoch_ = 0;
  build_optimizers();  // fresh Adam state at the phase boundary
}

void Trainer::start_finetune(
    const std::vector<std::filesystem::path>& other_encoder_bundles) {
  if (phase_ != TrainPhase::kPhase2) {
    throw ContractError("fine-tuning starts from a phase-2 trainer");
  }
  extra_encoders_.clear();
  extra_bundle_paths_.clear();
  for (const auto& dir : other_encoder_bundles) {
    auto other = ModelBundle::load(dir);
    extra_encoders_.push_back(other.encoder);
    extra_bundle_paths_.push_back(dir.string());
  }
  for (auto& p : bundle_.encoder->parameters()) p.set_requires_grad(false);
  for (auto& enc : extra_encoders_) {
    for (auto& p : enc->parameters()) p.set_requires_grad(false);
  }
  phase_ = TrainPhase::kFinetune;
  epoch_ = 0;
  steps_into_epoch_ = 0;
  skipped_this_epoch_ = 0;
  build_optimizers();
}

LossReport Trainer::step() {
  bundle_.to_train();
  const auto weights = current_weights();
  const int S = manifest_.resolution;
  const double to300 =
      static_cast<double>(cfg_.scale.detector_size) / static_cast<double>(S);

  // ---- sample scenes and placements
  std::vector<SceneSample> batch;
  batch.reserve(static_cast<size_t>(cfg_.batch_size));
  for (int b = 0; b < cfg_.batch_size; ++b) {
    batch.push_back(sample_scene(manifest_, "train", scene_rng_));
  }
  std::vector<std::pair<int, int>> owners;  // (scene, placement index)
  std::vector<int> enc_choice;
  for (int b = 0; b < cfg_.batch_size; ++b) {
    for (size_t k = 0; k < batch[static_cast<size_t>(b)].placements.size(); ++k) {
      owners.emplace_back(b, static_cast<int>(k));
      enc_choice.push_back(
          encoder_count() > 1
              ? static_cast<int>(scene_rng_.uniform_int(0, encoder_count() - 1))
              : 0);
    }
  }
  const int64_t n = static_cast<int64_t>(owners.size());

  // ---- rectify covers, gather bits
  std::vector<torch::Tensor> cover_list, bit_list;
  for (auto [b, k] : owners) {
    const auto& pl = batch[static_cast<size_t>(b)].placements[static_cast<size_t>(k)];
    cover_list.push_back(rectify_patch(batch[static_cast<size_t>(b)].scene,
                                       pl.quad, cfg_.scale.image_size));
    bit_list.push_back(pl.code_id.to_tensor());
  }
  auto covers = torch::stack(cover_list);
  auto bits = torch::stack(bit_list);

  // ---- encode
  torch::Tensor codes;
  if (encoder_count() == 1) {
    codes = bundle_.encoder(covers, bits);
  } else {
    // Fine-tuning: frozen encoders, no gradient needed through them.
    torch::NoGradGuard guard;
    codes = torch::empty_like(covers);
    for (int e = 0; e < encoder_count(); ++e) {
      std::vector<int64_t> rows;
      for (int64_t i = 0; i < n; ++i) {
        if (enc_choice[static_cast<size_t>(i)] == e) rows.push_back(i);
      }
      if (rows.empty()) continue;
      auto idx = torch::tensor(rows, torch::kLong);
      codes.index_put_({idx}, encoder_for(e)(covers.index({idx}),
                                             bits.index({idx})));
    }
  }

  // ---- printer noise, paste back, camera noise
  std::vector<torch::Tensor> noisy_codes;
  noisy_codes.reserve(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) {
    noisy_codes.push_back(printer_noise(codes[i], printer_rng_, cfg_.printer));
  }
  std::vector<torch::Tensor> composites;
  composites.reserve(static_cast<size_t>(cfg_.batch_size));
  {
    int64_t i = 0;
    for (int b = 0; b < cfg_.batch_size; ++b) {
      auto comp = batch[static_cast<size_t>(b)].scene;
      for (size_t k = 0; k < batch[static_cast<size_t>(b)].placements.size();
           ++k, ++i) {
        comp = paste_patch(
            comp, noisy_codes[static_cast<size_t>(i)],
            batch[static_cast<size_t>(b)].placements[k].quad);
      }
      composites.push_back(camera_noise(comp, camera_rng_, cfg_.camera));
    }
  }
  auto det_in = resize_batch(torch::stack(composites), cfg_.scale.detector_size);

  // ---- region losses
  auto region_out = bundle_.region(det_in);
  std::vector<torch::Tensor> gt_boxes;
  for (int b = 0; b < cfg_.batch_size; ++b) {
    const auto& pls = batch[static_cast<size_t>(b)].placements;
    auto t = torch::zeros({static_cast<int64_t>(pls.size()), 3});
    for (size_t k = 0; k < pls.size(); ++k) {
      auto sq = bounding_square_of(pls[k].quad);
      t[static_cast<int64_t>(k)][0] = static_cast<float>(sq[0] * to300);
      t[static_cast<int64_t>(k)][1] = static_cast<float>(sq[1] * to300);
      t[static_cast<int64_t>(k)][2] = static_cast<float>(sq[2] * to300);
    }
    gt_boxes.push_back(t);
  }
  auto det_parts = detection_loss(region_out, gt_boxes);

  // ---- crop boxes: ground truth under teacher forcing, else best proposal
  std::vector<CropWindow> crops(static_cast<size_t>(n));
  {
    torch::NoGradGuard guard;
    torch::Tensor decoded;
    if (!teacher_forcing_) {
      auto anchors = AnchorGrid::boxes();
      decoded = torch::stack([&] {
        std::vector<torch::Tensor> per_scene;
        for (int b = 0; b < cfg_.batch_size; ++b) {
          per_scene.push_back(
              AnchorGrid::decode(region_out.offsets[b].detach(), anchors));
        }
        return per_scene;
      }());
    }
    for (int64_t i = 0; i < n; ++i) {
      auto [b, k] = owners[static_cast<size_t>(i)];
      auto sq = bounding_square_of(
          batch[static_cast<size_t>(b)].placements[static_cast<size_t>(k)].quad);
      double cx = sq[0], cy = sq[1], side = sq[2];
      if (!teacher_forcing_) {
        auto gt300 = torch::tensor(
            {{static_cast<float>(sq[0] * to300),
              static_cast<float>(sq[1] * to300),
              static_cast<float>(sq[2] * to300)}});
        auto iou = square_iou(gt300, decoded[b])[0];
        auto best = iou.argmax().item<int64_t>();
        if (iou[best].item<float>() >= kProposalMatchIou) {
          cx = decoded[b][best][0].item<float>() / to300;
          cy = decoded[b][best][1].item<float>() / to300;
          side = decoded[b][best][2].item<float>() / to300;
        }
      }
      crops[static_cast<size_t>(i)] = make_crop(cx, cy, side, 1.2, S);
    }
  }

  // ---- corner loss
  std::vector<torch::Tensor> crop_imgs;
  auto gt_norm = torch::zeros({n, 8});
  for (int64_t i = 0; i < n; ++i) {
    auto [b, k] = owners[static_cast<size_t>(i)];
    const auto& w = crops[static_cast<size_t>(i)];
    auto crop = composites[static_cast<size_t>(b)]
                    .slice(1, w.y0, w.y0 + w.side)
                    .slice(2, w.x0, w.x0 + w.side);
    crop_imgs.push_back(
        resize_batch(crop.unsqueeze(0), cfg_.scale.corner_crop).squeeze(0));
    const auto& quad =
        batch[static_cast<size_t>(b)].placements[static_cast<size_t>(k)].quad;
    for (int c = 0; c < 4; ++c) {
      gt_norm[i][2 * c] = static_cast<float>(
          (quad.vertex(c).x - static_cast<double>(w.x0)) /
          static_cast<double>(w.side));
      gt_norm[i][2 * c + 1] = static_cast<float>(
          (quad.vertex(c).y - static_cast<double>(w.y0)) /
          static_cast<double>(w.side));
    }
  }
  auto pred_corners = bundle_.corner(torch::stack(crop_imgs));
  auto L_k = keypoint_loss(pred_corners, gt_norm);

  // ---- decode loss
  std::vector<torch::Tensor> rects;
  {
    auto pred_detached = pred_corners.detach();
    for (int64_t i = 0; i < n; ++i) {
      auto [b, k] = owners[static_cast<size_t>(i)];
      const auto& gt_quad =
          batch[static_cast<size_t>(b)].placements[static_cast<size_t>(k)].quad;
      Quad quad = gt_quad;
      if (!teacher_forcing_) {
        const auto& w = crops[static_cast<size_t>(i)];
        std::array<Vec2, 4> vs;
        for (int c = 0; c < 4; ++c) {
          vs[static_cast<size_t>(c)] =
              Vec2{static_cast<double>(w.x0) +
                       pred_detached[i][2 * c].item<float>() *
                           static_cast<double>(w.side),
                   static_cast<double>(w.y0) +
                       pred_detached[i][2 * c + 1].item<float>() *
                           static_cast<double>(w.side)};
        }
        Quad pq(vs);
        if (pq.is_convex() && pq.area() > 16.0) quad = pq;
      }
      try {
        rects.push_back(rectify_patch(composites[static_cast<size_t>(b)], quad,
                                      cfg_.scale.image_size));
      } catch (const GeometryError&) {
        rects.push_back(rectify_patch(composites[static_cast<size_t>(b)],
                                      gt_quad, cfg_.scale.image_size));
      }
    }
  }
  auto msg_logits = bundle_.decoder(torch::stack(rects));
  auto L_m = message_loss(msg_logits, bits);

  // ---- image and adversary losses
  auto img_parts = image_loss(codes, covers, metric_);
  torch::Tensor L_a = torch::zeros({});
  const bool adversary_active = phase_ == TrainPhase::kPhase2;
  if (adversary_active) {
    L_a = adversary_loss_for_encoder(bundle_.adversary, codes);
  }

  auto L_total = total_loss(weights, img_parts.total, det_parts.regression,
                            det_parts.classification, L_k, L_m, L_a);

  // ---- joint update with non-finite protection
  main_opt_->zero_grad();
  bool finite = std::isfinite(L_total.item<double>());
  if (finite) {
    L_total.backward();
    std::vector<torch::Tensor> params;
    for (auto& g : main_opt_->param_groups()) {
      for (auto& p : g.params()) params.push_back(p);
    }
    finite = grads_all_finite(params);
  }
  if (finite) {
    main_opt_->step();
  } else {
    main_opt_->zero_grad();
    skipped_this_epoch_++;
    const double frac = static_cast<double>(skipped_this_epoch_) /
                        static_cast<double>(steps_per_epoch());
    if (frac > cfg_.max_skip_fraction) {
      save_checkpoint(cfg_.out_dir / (phase_name(phase_) + "_diverged"));
      throw TrainingError(
          "too many non-finite steps this epoch (" +
          std::to_string(skipped_this_epoch_) +
          "); diagnostic checkpoint written");
    }
  }

  // ---- adversary alternation (phase 2 only)
  if (adversary_active) {
    auto own =
        adversary_own_loss(bundle_.adversary, codes.detach(), covers.detach());
    if (std::isfinite(own.item<double>())) {
      adv_opt_->zero_grad();
      own.backward();
      adv_opt_->step();
    }
  }

  auto report = make_report(weights, img_parts, det_parts, L_k, L_m, L_a);
  nlohmann::json line = report.to_json();
  line["step"] = global_step_;
  line["epoch"] = epoch_;
  line["phase"] = phase_name(phase_);
  line["skipped"] = !finite;
  log_ << line.dump() << "\n";
  log_.flush();

  global_step_++;
  steps_into_epoch_++;
  return report;
}

ValStats Trainer::run_epoch() {
  while (steps_into_epoch_ < steps_per_epoch()) step();
  auto stats = validate();
  nlohmann::json line = stats.to_json();
  line["event"] = "validation";
  line["epoch"] = epoch_;
  line["phase"] = phase_name(phase_);
  line["teacher_forcing"] = teacher_forcing_;
  log_ << line.dump() << "\n";
  log_.flush();
  if (teacher_forcing_ && stats.region_recall >= cfg_.teacher_forcing_recall) {
    teacher_forcing_ = false;
  }
  epoch_++;
  steps_into_epoch_ = 0;
  skipped_this_epoch_ = 0;
  save_checkpoint(default_checkpoint_dir());
  return stats;
}

ValStats Trainer::run() {
  ValStats stats;
  while (epoch_ < epochs_in_phase()) stats = run_epoch();
  return stats;
}

std::filesystem::path Trainer::default_checkpoint_dir() const {
  std::string tag = phase_name(phase_);
  if (phase_ == TrainPhase::kPhase2) {
    tag += "_nc" + std::to_string(static_cast<int>(w_i_branch_));
  }
  return cfg_.out_dir / tag;
}

void Trainer::save_checkpoint(const std::filesystem::path& dir) {
  fs::create_directories(dir);
  bundle_.meta.phase = phase_name(phase_);
  bundle_.meta.w_i_branch = w_i_branch_;
  bundle_.meta.epoch = epoch_;
  bundle_.save(dir / "bundle");
  torch::save(*main_opt_, (dir / "optim_main.pt").string());
  torch::save(*adv_opt_, (dir / "optim_adv.pt").string());

  nlohmann::json j;
  j["format_version"] = 1;
  j["phase"] = phase_name(phase_);
  j["w_i_branch"] = w_i_branch_;
  j["epoch"] = epoch_;
  j["steps_into_epoch"] = steps_into_epoch_;
  j["global_step"] = global_step_;
  j["skipped_this_epoch"] = skipped_this_epoch_;
  j["teacher_forcing"] = teacher_forcing_;
  j["rng_scene"] = scene_rng_.serialize();
  j["rng_printer"] = printer_rng_.serialize();
  j["rng_camera"] = camera_rng_.serialize();
  j["extra_encoder_bundles"] = extra_bundle_paths_;
  std::ofstream out(dir / "trainer_state.json");
  if (!out) throw DataError("cannot write trainer state: " + dir.string());
  out << j.dump(2) << "\n";
}

ValStats Trainer::validate(int max_scenes, int encoder_override,
                           bool with_detect_fp) {
  torch::NoGradGuard guard;
  bundle_.to_eval();
  auto rng = make_stream(cfg_.seed, stream_tag::kEval);
  const int n_scenes = max_scenes > 0 ? max_scenes : cfg_.val_scenes;
  const int S = manifest_.resolution;
  const double to300 =
      static_cast<double>(cfg_.scale.detector_size) / static_cast<double>(S);
  auto& enc = encoder_for(std::max(encoder_override, 0));
  enc->eval();

  ValStats stats;
  stats.scenes = n_scenes;
  int recall_hits = 0;
  int64_t bit_hits = 0, bit_total = 0;
  double corner_acc = 0.0;
  double diff_acc = 0.0;

  for (int v = 0; v < n_scenes; ++v) {
    auto sample = sample_scene(manifest_, "val", rng);
    std::vector<torch::Tensor> cover_list, bit_list;
    for (const auto& pl : sample.placements) {
      cover_list.push_back(
          rectify_patch(sample.scene, pl.quad, cfg_.scale.image_size));
      bit_list.push_back(pl.code_id.to_tensor());
    }
    auto covers = torch::stack(cover_list);
    auto bits = torch::stack(bit_list);
    auto codes = enc(covers, bits);
    diff_acc += (codes - covers).abs().mean().item<double>();

    auto comp = sample.scene;
    for (size_t k = 0; k < sample.placements.size(); ++k) {
      comp = paste_patch(comp, codes[static_cast<int64_t>(k)],
                         sample.placements[k].quad);
    }
    auto det300 = resize_batch(comp.unsqueeze(0), cfg_.scale.detector_size);
    auto proposals = region_proposals(det300.squeeze(0), bundle_.region, 0.5,
                                      0.45);

    for (size_t k = 0; k < sample.placements.size(); ++k) {
      const auto& pl = sample.placements[k];
      auto sq = bounding_square_of(pl.quad);
      const double gx = sq[0] * to300, gy = sq[1] * to300, gs = sq[2] * to300;
      bool hit = false;
      for (const auto& p : proposals) {
        const double ix0 = std::max(gx - gs / 2, p.cx - p.side / 2);
        const double iy0 = std::max(gy - gs / 2, p.cy - p.side / 2);
        const double ix1 = std::min(gx + gs / 2, p.cx + p.side / 2);
        const double iy1 = std::min(gy + gs / 2, p.cy + p.side / 2);
        const double inter =
            std::max(0.0, ix1 - ix0) * std::max(0.0, iy1 - iy0);
        const double uni = gs * gs + p.side * p.side - inter;
        if (uni > 0 && inter / uni >= 0.5) {
          hit = true;
          break;
        }
      }
      if (hit) recall_hits++;
      stats.placements++;

      // Corner error at the ground-truth crop, reported at 300 scale.
      auto w = make_crop(sq[0], sq[1], sq[2], 1.2, S);
      auto crop = comp.slice(1, w.y0, w.y0 + w.side)
                      .slice(2, w.x0, w.x0 + w.side);
      auto pred = bundle_.corner(
          resize_batch(crop.unsqueeze(0), cfg_.scale.corner_crop))[0];
      double err = 0.0;
      for (int c = 0; c < 4; ++c) {
        const double px = static_cast<double>(w.x0) +
                          pred[2 * c].item<float>() * static_cast<double>(w.side);
        const double py =
            static_cast<double>(w.y0) +
            pred[2 * c + 1].item<float>() * static_cast<double>(w.side);
        err += std::hypot(px - pl.quad.vertex(c).x, py - pl.quad.vertex(c).y);
      }
      corner_acc += err / 4.0 * to300;

      // Bit accuracy on the ground-truth rectification.
      auto rect = rectify_patch(comp, pl.quad, cfg_.scale.image_size);
      auto logits = bundle_.decoder(rect.unsqueeze(0))[0];
      auto decoded = CodeId::from_tensor(torch::sigmoid(logits));
      for (int bi = 0; bi < CodeId::kBits; ++bi) {
        if (decoded.bit(bi) == pl.code_id.bit(bi)) bit_hits++;
        bit_total++;
      }
    }
  }

  stats.region_recall =
      stats.placements > 0
          ? static_cast<double>(recall_hits) / stats.placements
          : 0.0;
  stats.bit_accuracy =
      bit_total > 0 ? static_cast<double>(bit_hits) / bit_total : 0.0;
  stats.corner_error_300 =
      stats.placements > 0 ? corner_acc / stats.placements : 0.0;
  stats.mean_abs_diff = diff_acc / n_scenes;

  if (with_detect_fp) {
    auto val_idx = manifest_.split_indices("val");
    const int n_fp = static_cast<int>(
        std::min<size_t>(val_idx.size(), 100));
    int fp = 0;
    PipelineConfig det_cfg;
    for (int v = 0; v < n_fp; ++v) {
      auto scene = manifest_.load_entry(val_idx[static_cast<size_t>(v)]);
      fp += static_cast<int>(detect_all(scene, bundle_, det_cfg).size());
    }
    stats.false_positives_per_image =
        n_fp > 0 ? static_cast<double>(fp) / n_fp : 0.0;
  }

  bundle_.to_train();
  return stats;
}

}  // namespace stegotag
