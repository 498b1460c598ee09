// stegotag: steganographic fiducial markers from texture images.
//
// One executable, one subcommand per pipeline stage. Every command loads a
// RootConfig (file plus preset), applies flag overrides (flags win), and
// validates before touching the filesystem. Exit codes: 0 success, 2
// usage/config error, 3 runtime/data error.

#include <CLI11.hpp>

#include <torch/torch.h>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "stegotag/config.hpp"
#include "stegotag/detect.hpp"
#include "stegotag/evalkit.hpp"
#include "stegotag/image_io.hpp"
#include "stegotag/pose.hpp"
#include "stegotag/synthcorpus.hpp"
#include "stegotag/trainer.hpp"

namespace fs = std::filesystem;
using namespace stegotag;

namespace {

struct GlobalArgs {
  std::string config_file;
  std::string preset = "desk";
  std::optional<uint64_t> seed;
  int threads = 1;
  bool single_threaded = false;
};

RootConfig resolve_config(const GlobalArgs& g) {
  RootConfig cfg = g.config_file.empty() ? RootConfig::preset_by_name(g.preset)
                                         : RootConfig::load(g.config_file);
  if (g.seed) {
    cfg.seed = *g.seed;
    cfg.train.seed = *g.seed;
    cfg.eval.seed = *g.seed;
  }
  return cfg;
}

void apply_threads(const GlobalArgs& g) {
  if (g.threads < 1) throw ConfigError("--threads must be >= 1");
  torch::set_num_threads(g.single_threaded ? 1 : g.threads);
  try {
    at::set_num_interop_threads(1);
  } catch (const c10::Error&) {
    // Already initialized earlier in the process; harmless.
  }
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << text;
}

void emit_json(const nlohmann::json& j, const std::string& out_file) {
  if (out_file.empty()) {
    std::cout << j.dump(2) << "\n";
  } else {
    write_text(out_file, j.dump(2) + "\n");
  }
}

std::vector<fs::path> collect_textures(const std::vector<std::string>& args) {
  std::vector<fs::path> out;
  for (const auto& a : args) {
    fs::path p(a);
    if (fs::is_directory(p)) {
      std::vector<fs::path> found;
      for (const auto& e : fs::directory_iterator(p)) {
        auto ext = e.path().extension().string();
        if (ext == ".png" || ext == ".jpg" || ext == ".jpeg") {
          found.push_back(e.path());
        }
      }
      std::sort(found.begin(), found.end());
      out.insert(out.end(), found.begin(), found.end());
    } else if (fs::exists(p)) {
      out.push_back(p);
    } else {
      throw DataError("texture path not found: " + a);
    }
  }
  if (out.empty()) throw ConfigError("no texture images found");
  return out;
}

// ---------------------------------------------------------------------------
// Subcommand bodies

int cmd_dataset_build(RootConfig cfg, bool synth) {
  if (synth) {
    // No local corpus: generate one and make it the sole source, keeping the
    // preset's train/val totals.
    int train = 0, val = 0;
    for (const auto& s : cfg.dataset.sources) {
      train += s.train_count;
      val += s.val_count;
    }
    auto src = cfg.dataset_dir / "synthetic_src";
    write_synthetic_corpus(src, train + val, cfg.seed);
    cfg.dataset.sources = {{src, "synth", train, val}};
  }
  cfg.dataset.validate();
  auto manifest = build_dataset(cfg.dataset, cfg.dataset_dir, cfg.seed);
  nlohmann::json j{{"manifest", (cfg.dataset_dir / "manifest.json").string()},
                   {"resolution", manifest.resolution},
                   {"train_images", manifest.split_indices("train").size()},
                   {"val_images", manifest.split_indices("val").size()}};
  std::cout << j.dump(2) << "\n";
  return 0;
}

struct TrainArgs {
  std::string phase = "1";
  double branch = 100.0;
  bool branch_given = false;
  std::string resume;
  std::vector<std::string> extra_encoders;
  std::string out_dir;
  std::string dataset_dir;
  int epochs = -1;
  int steps_per_epoch = -1;
  int batch_size = -1;
  int val_scenes = -1;
};

int cmd_train(RootConfig cfg, const TrainArgs& args) {
  if (!args.dataset_dir.empty()) cfg.dataset_dir = args.dataset_dir;
  if (!args.out_dir.empty()) cfg.bundle_dir = args.out_dir;
  cfg.train.dataset_dir = cfg.dataset_dir;
  cfg.train.out_dir = cfg.bundle_dir;
  if (args.steps_per_epoch >= 0) cfg.train.steps_per_epoch = args.steps_per_epoch;
  if (args.batch_size > 0) cfg.train.batch_size = args.batch_size;
  if (args.val_scenes > 0) cfg.train.val_scenes = args.val_scenes;
  if (args.phase != "1" && args.phase != "2" && args.phase != "finetune") {
    throw ConfigError("--phase must be 1, 2, or finetune");
  }
  if (args.phase == "2" && args.branch_given && args.branch != 100.0 &&
      args.branch != 200.0 && args.branch != 300.0) {
    throw ConfigError("--branch must be one of 100, 200, 300");
  }
  if (args.epochs >= 0) {
    if (args.phase == "1") cfg.train.phase1_epochs = args.epochs;
    if (args.phase == "2") {
      cfg.train.phase2_epochs = args.epochs;
      cfg.train.phase2_ramp_epochs = std::max(1, args.epochs / 2);
    }
    if (args.phase == "finetune") cfg.train.finetune_epochs = args.epochs;
  }
  cfg.train.validate();

  std::unique_ptr<Trainer> trainer;
  if (!args.resume.empty()) {
    trainer = std::make_unique<Trainer>(cfg.train, fs::path(args.resume));
  } else if (args.phase == "1") {
    trainer = std::make_unique<Trainer>(cfg.train);
  } else {
    throw ConfigError("--phase " + args.phase +
                      " continues an earlier run; pass --resume <checkpoint>");
  }

  if (args.phase == "2" && trainer->phase() == TrainPhase::kPhase1) {
    trainer->start_phase2(args.branch);
  } else if (args.phase == "finetune" &&
             trainer->phase() == TrainPhase::kPhase2) {
    std::vector<fs::path> extra(args.extra_encoders.begin(),
                                args.extra_encoders.end());
    trainer->start_finetune(extra);
  } else if ((args.phase == "1" && trainer->phase() != TrainPhase::kPhase1) ||
             (args.phase == "2" && trainer->phase() != TrainPhase::kPhase2) ||
             (args.phase == "finetune" &&
              trainer->phase() != TrainPhase::kFinetune)) {
    throw ConfigError("checkpoint is in phase " + phase_name(trainer->phase()) +
                      ", which cannot serve --phase " + args.phase);
  }

  auto stats = trainer->run();
  nlohmann::json j = stats.to_json();
  j["checkpoint"] = trainer->default_checkpoint_dir().string();
  j["phase"] = phase_name(trainer->phase());
  j["global_step"] = trainer->global_step();
  std::cout << j.dump(2) << "\n";
  return 0;
}

int cmd_encode(const RootConfig& cfg, const std::string& bundle_dir,
               const std::string& cover_file, const std::string& id_hex,
               const std::string& payload_hex, bool ecc,
               const std::string& out_file) {
  auto bundle = ModelBundle::load(bundle_dir);
  bundle.to_eval();
  CodeId id;
  std::optional<Payload> payload;
  if (ecc) {
    if (payload_hex.empty()) {
      throw ConfigError("--ecc requires --payload (6 hex digits)");
    }
    payload = Payload::from_hex(payload_hex);
    id = rs_encode(*payload);
  } else {
    if (id_hex.empty()) throw ConfigError("pass --id (9 hex digits) or --ecc");
    id = CodeId::from_hex(id_hex);
  }
  (void)cfg;

  torch::NoGradGuard guard;
  auto cover = prepare_cover(cover_file, bundle.scale.image_size);
  auto code = bundle.encoder(cover.unsqueeze(0), id.to_tensor().unsqueeze(0))
                  .squeeze(0)
                  .clamp(0, 1);
  save_png_rgb(out_file, code);
  nlohmann::json j{{"out", out_file},
                   {"id_hex", id.to_hex()},
                   {"size", bundle.scale.image_size}};
  if (payload) j["payload_hex"] = payload->to_hex();
  std::cout << j.dump(2) << "\n";
  return 0;
}

int cmd_detect(const RootConfig& cfg, const std::string& bundle_dir,
               const std::string& image_file, const std::string& out_file) {
  auto bundle = ModelBundle::load(bundle_dir);
  bundle.to_eval();
  torch::NoGradGuard guard;
  auto image = load_image_rgb(image_file);
  auto detections = detect_all(image, bundle, cfg.pipeline);
  emit_json(detections_to_json(detections), out_file);
  return 0;
}

int cmd_pose(const RootConfig& cfg, const std::string& bundle_dir,
             const std::string& image_file, const std::string& registry_file,
             const std::string& intrinsics_file, double min_bit_confidence,
             const std::string& out_file) {
  auto bundle = ModelBundle::load(bundle_dir);
  bundle.to_eval();
  auto registry = CodeRegistry::load(registry_file);
  auto intrinsics = CameraIntrinsics::load(intrinsics_file);
  torch::NoGradGuard guard;
  auto image = load_image_rgb(image_file);
  auto detections = detect_all(image, bundle, cfg.pipeline);
  auto result = solve_pose(detections, registry, intrinsics, min_bit_confidence);
  auto j = result.to_json();
  j["detections"] = detections_to_json(detections);
  emit_json(j, out_file);
  return 0;
}

int cmd_eval(RootConfig cfg, const std::string& bundle_dir,
             const std::vector<std::string>& texture_args,
             const std::string& stations_file, const std::string& out_prefix) {
  auto bundle = ModelBundle::load(bundle_dir);
  cfg.eval.textures = collect_textures(texture_args);
  if (!stations_file.empty()) {
    cfg.eval = BenchmarkConfig::load_stations(cfg.eval, stations_file);
  }
  cfg.eval.validate();
  auto report = run_detection_benchmark(cfg.eval, bundle);
  write_text(out_prefix + ".json", report.to_json().dump(2) + "\n");
  write_text(out_prefix + ".txt", report.to_text_table());
  std::cout << report.to_text_table();
  return 0;
}

int cmd_reverse(const std::string& bundle_dir, const std::string& code_file,
                const std::string& out_file) {
  auto bundle = ModelBundle::load(bundle_dir);
  bundle.to_eval();
  if (bundle.meta.phase == "init") {
    std::cerr << "warning: bundle has never been trained; the reconstruction "
                 "will not resemble the cover\n";
  }
  torch::NoGradGuard guard;
  auto code = prepare_cover(code_file, bundle.scale.image_size);
  auto recon = bundle.reverse(code.unsqueeze(0)).squeeze(0).clamp(0, 1);
  save_png_rgb(out_file, recon);
  nlohmann::json j{{"out", out_file}};
  std::cout << j.dump(2) << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Steganographic fiducial markers: dataset, training, "
               "detection, pose, and evaluation"};
  app.require_subcommand(1);
  GlobalArgs g;
  app.add_option("--config", g.config_file, "Root config JSON file");
  app.add_option("--preset", g.preset, "Built-in preset when no --config")
      ->check(CLI::IsMember({"paper", "desk"}));
  app.add_option("--seed", g.seed, "Override the config seed");
  app.add_option("--threads", g.threads,
                 "Intra-op torch threads (1 = deterministic single-threaded)");
  app.add_flag("--single-threaded", g.single_threaded,
               "Force one torch thread regardless of --threads");
  app.set_help_all_flag("--help-all", "Print help for every subcommand");

  // dataset-build
  auto* sb = app.add_subcommand("dataset-build",
                                "Resize and shuffle source images into a "
                                "train/val manifest");
  std::string sb_out;
  std::vector<std::string> sb_sources;
  int sb_resolution = -1;
  bool sb_synth = false;
  sb->add_option("--out", sb_out, "Dataset output directory");
  sb->add_option("--source", sb_sources,
                 "Source as root:tag:train_count:val_count (repeatable, "
                 "replaces config sources)");
  sb->add_option("--resolution", sb_resolution, "Target square resolution");
  sb->add_flag("--synth", sb_synth,
               "Generate a procedural source corpus instead of reading "
               "user-supplied directories");

  // train
  auto* tr = app.add_subcommand("train", "Run one training phase");
  TrainArgs ta;
  tr->add_option("--phase", ta.phase, "1, 2, or finetune");
  auto* branch_opt =
      tr->add_option("--branch", ta.branch, "Phase-2 image-loss branch weight");
  tr->add_option("--resume", ta.resume, "Checkpoint directory to resume from");
  tr->add_option("--extra-encoder", ta.extra_encoders,
                 "Other branches' bundle dirs for fine-tuning (repeatable)");
  tr->add_option("--dataset", ta.dataset_dir, "Dataset directory override");
  tr->add_option("--out", ta.out_dir, "Run output directory override");
  tr->add_option("--epochs", ta.epochs, "Epoch count override for this phase");
  tr->add_option("--steps-per-epoch", ta.steps_per_epoch,
                 "Steps per epoch (0 = full pass)");
  tr->add_option("--batch-size", ta.batch_size, "Batch size override");
  tr->add_option("--val-scenes", ta.val_scenes, "Validation scene count");

  // encode
  auto* en = app.add_subcommand("encode", "Turn a cover image into a code");
  std::string en_bundle, en_cover, en_id, en_payload, en_out = "code.png";
  bool en_ecc = false;
  en->add_option("--bundle", en_bundle, "Model bundle directory")->required();
  en->add_option("--cover", en_cover, "Cover image (PNG/JPEG)")->required();
  en->add_option("--id", en_id, "36-bit id as 9 hex digits");
  en->add_option("--payload", en_payload, "24-bit payload as 6 hex digits");
  en->add_flag("--ecc", en_ecc, "Encode --payload with RS(6,4) check symbols");
  en->add_option("--out", en_out, "Output PNG path");

  // detect
  auto* de = app.add_subcommand("detect", "Find codes in an image");
  std::string de_bundle, de_image, de_out;
  double de_conf = -1.0, de_nms = -1.0;
  bool de_ecc = false;
  de->add_option("--bundle", de_bundle, "Model bundle directory")->required();
  de->add_option("--image", de_image, "Query image")->required();
  de->add_option("--out", de_out, "Write detections JSON here (default stdout)");
  de->add_option("--confidence", de_conf, "Region confidence threshold");
  de->add_option("--nms-iou", de_nms, "NMS IoU threshold");
  de->add_flag("--ecc", de_ecc, "Decode payloads with error correction");

  // pose
  auto* po = app.add_subcommand("pose", "Recover the 6-DoF camera pose");
  std::string po_bundle, po_image, po_registry, po_intrinsics, po_out;
  double po_min_conf = 0.2;
  po->add_option("--bundle", po_bundle, "Model bundle directory")->required();
  po->add_option("--image", po_image, "Query image")->required();
  po->add_option("--registry", po_registry, "Code registry JSON")->required();
  po->add_option("--intrinsics", po_intrinsics, "Camera intrinsics JSON")
      ->required();
  po->add_option("--min-bit-confidence", po_min_conf,
                 "Exclude detections below this bit confidence");
  po->add_option("--out", po_out, "Write pose JSON here (default stdout)");

  // eval
  auto* ev = app.add_subcommand("eval", "Run the virtual detection benchmark");
  std::string ev_bundle, ev_stations, ev_prefix = "report";
  std::vector<std::string> ev_textures;
  int ev_trials = -1;
  bool ev_oracle = false, ev_noise_free = false;
  ev->add_option("--bundle", ev_bundle, "Model bundle directory")->required();
  ev->add_option("--textures", ev_textures,
                 "Texture images or directories (repeatable)")
      ->required();
  ev->add_option("--stations", ev_stations, "Camera station JSON file");
  ev->add_option("--out", ev_prefix, "Report file prefix");
  ev->add_option("--trials", ev_trials, "Trials per station");
  ev->add_flag("--oracle", ev_oracle, "Inject ground-truth corners");
  ev->add_flag("--noise-free", ev_noise_free, "Skip camera noise");

  // reverse
  auto* rv = app.add_subcommand("reverse", "Reconstruct a cover from a code");
  std::string rv_bundle, rv_code, rv_out = "reversed.png";
  rv->add_option("--bundle", rv_bundle, "Model bundle directory")->required();
  rv->add_option("--code", rv_code, "Code image")->required();
  rv->add_option("--out", rv_out, "Output PNG path");

  // config-dump
  auto* cd = app.add_subcommand("config-dump",
                                "Print the fully resolved config as JSON");
  std::string cd_out;
  cd->add_option("--out", cd_out, "Write to a file instead of stdout");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    apply_threads(g);
    torch::manual_seed(g.seed.value_or(0));
    RootConfig cfg = resolve_config(g);

    if (sb->parsed()) {
      if (!sb_out.empty()) cfg.dataset_dir = sb_out;
      if (sb_resolution > 0) cfg.dataset.target_resolution = sb_resolution;
      if (!sb_sources.empty()) {
        cfg.dataset.sources.clear();
        for (const auto& s : sb_sources) {
          // root:tag:train:val, root may contain / but not ':'.
          std::vector<std::string> parts;
          size_t start = 0;
          for (size_t pos = s.find(':'); pos != std::string::npos;
               pos = s.find(':', start)) {
            parts.push_back(s.substr(start, pos - start));
            start = pos + 1;
          }
          parts.push_back(s.substr(start));
          if (parts.size() != 4) {
            throw ConfigError("--source needs root:tag:train_count:val_count");
          }
          cfg.dataset.sources.push_back({parts[0], parts[1], std::stoi(parts[2]),
                                         std::stoi(parts[3])});
        }
      }
      return cmd_dataset_build(cfg, sb_synth);
    }
    if (tr->parsed()) {
      ta.branch_given = branch_opt->count() > 0;
      return cmd_train(cfg, ta);
    }
    if (en->parsed()) {
      return cmd_encode(cfg, en_bundle, en_cover, en_id, en_payload, en_ecc,
                        en_out);
    }
    if (de->parsed()) {
      if (de_conf >= 0.0) cfg.pipeline.confidence_threshold = de_conf;
      if (de_nms >= 0.0) cfg.pipeline.nms_iou = de_nms;
      if (de_ecc) cfg.pipeline.ecc = true;
      cfg.pipeline.validate();
      return cmd_detect(cfg, de_bundle, de_image, de_out);
    }
    if (po->parsed()) {
      return cmd_pose(cfg, po_bundle, po_image, po_registry, po_intrinsics,
                      po_min_conf, po_out);
    }
    if (ev->parsed()) {
      if (ev_trials > 0) cfg.eval.trials_per_station = ev_trials;
      cfg.eval.oracle_corners = ev_oracle;
      cfg.eval.noise_free = ev_noise_free;
      return cmd_eval(cfg, ev_bundle, ev_textures, ev_stations, ev_prefix);
    }
    if (rv->parsed()) {
      return cmd_reverse(rv_bundle, rv_code, rv_out);
    }
    if (cd->parsed()) {
      emit_json(cfg.to_json(), cd_out);
      return 0;
    }
    throw ConfigError("no subcommand given");
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
}
