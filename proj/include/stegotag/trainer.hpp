#pragma once

#include <torch/torch.h>

#include <filesystem>
#include <fstream>
#include <memory>
#include <optional>
#include <vector>

#include "stegotag/ingest.hpp"
#include "stegotag/losses.hpp"
#include "stegotag/nets.hpp"
#include "stegotag/noisesim.hpp"

namespace stegotag {

enum class TrainPhase { kPhase1, kPhase2, kFinetune };
std::string phase_name(TrainPhase phase);

struct TrainConfig {
  std::filesystem::path dataset_dir;  // directory holding manifest.json
  std::filesystem::path out_dir;      // checkpoints and logs

  NetScale scale;
  double lr = 1.0e-5;
  double weight_decay = 0.0;
  double beta1 = 0.9, beta2 = 0.999, adam_eps = 1.0e-8;
  int batch_size = 8;  // scenes per step

  int phase1_epochs = 20;
  int phase2_epochs = 60;
  int phase2_ramp_epochs = 30;
  int finetune_epochs = 30;
  int steps_per_epoch = 0;  // 0: one pass over the train split
  int val_scenes = 50;

  uint64_t seed = 0;
  bool single_threaded = true;
  bool use_lpips = false;  // off: the 0.01-weighted term is zeroed
  std::filesystem::path lpips_weights;  // empty: seeded random backbone

  PrinterNoiseConfig printer;
  CameraNoiseConfig camera;

  double teacher_forcing_recall = 0.8;  // switch to predicted proposals here
  double max_skip_fraction = 0.01;      // non-finite steps per epoch

  void validate() const;
  static TrainConfig paper_preset();
  static TrainConfig desk_preset();
};

// w_i schedule inside phase 2: linear 1 -> 100 over the ramp, then the
// branch value (100/200/300).
double phase2_image_weight(int epoch_in_phase2, int ramp_epochs,
                           double branch_value);

// Noise-free validation statistics over composited val scenes.
struct ValStats {
  double region_recall = 0.0;
  double bit_accuracy = 0.0;
  double corner_error_300 = 0.0;  // px at detector scale
  double mean_abs_diff = 0.0;     // mean |code - cover|
  double false_positives_per_image = 0.0;  // full detect on code-free scenes
  int scenes = 0;
  int placements = 0;

  nlohmann::json to_json() const;
};

class Trainer {
 public:
  // Fresh phase-1 trainer with deterministic initialization.
  explicit Trainer(const TrainConfig& cfg);
  // Resume from a checkpoint directory written by save_checkpoint.
  Trainer(const TrainConfig& cfg, const std::filesystem::path& checkpoint);

  // Transition a phase-1-complete trainer into phase 2 with a branch
  // weight, or into multi-encoder fine-tuning (extra encoders come from
  // other branches' bundle directories and stay frozen).
  void start_phase2(double w_i_branch);
  void start_finetune(
      const std::vector<std::filesystem::path>& other_encoder_bundles);

  // One joint update (plus one adversary update in phase 2).
  LossReport step();
  // Steps to the end of the current epoch, then validates, checkpoints,
  // and advances the epoch counter.
  ValStats run_epoch();
  // Remaining epochs of the current phase; returns the last epoch's stats.
  ValStats run();

  void save_checkpoint(const std::filesystem::path& dir);
  std::filesystem::path default_checkpoint_dir() const;

  TrainPhase phase() const { return phase_; }
  int epoch() const { return epoch_; }
  int steps_into_epoch() const { return steps_into_epoch_; }
  int64_t global_step() const { return global_step_; }
  int steps_per_epoch() const;
  int epochs_in_phase() const;
  bool teacher_forcing() const { return teacher_forcing_; }
  LossWeights current_weights() const;
  double w_i_branch() const { return w_i_branch_; }

  ModelBundle& bundle() { return bundle_; }
  const TrainConfig& config() const { return cfg_; }
  const Manifest& manifest() const { return manifest_; }

  // Noise-free validation; encoder_override indexes extra encoders during
  // fine-tuning (-1 = the bundle's own encoder). with_detect_fp adds the
  // code-free false-positive sweep (slower).
  ValStats validate(int max_scenes = 0, int encoder_override = -1,
                    bool with_detect_fp = false);

 private:
  void init_common();
  void build_optimizers();
  void open_log();
  EncoderNet& encoder_for(int index);
  int encoder_count() const;

  TrainConfig cfg_;
  Manifest manifest_;
  ModelBundle bundle_;
  std::vector<EncoderNet> extra_encoders_;
  std::vector<std::string> extra_bundle_paths_;
  PerceptualMetric metric_ = PerceptualMetric::disabled();

  TrainPhase phase_ = TrainPhase::kPhase1;
  double w_i_branch_ = 100.0;
  int epoch_ = 0;
  int steps_into_epoch_ = 0;
  int64_t global_step_ = 0;
  int skipped_this_epoch_ = 0;
  bool teacher_forcing_ = true;

  std::unique_ptr<torch::optim::Adam> main_opt_;
  std::unique_ptr<torch::optim::Adam> adv_opt_;
  RngStream scene_rng_;
  RngStream printer_rng_;
  RngStream camera_rng_;
  std::ofstream log_;
};

}  // namespace stegotag
