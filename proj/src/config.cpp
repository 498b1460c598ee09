#include "stegotag/config.hpp"

#include <fstream>

#include "stegotag/common.hpp"

namespace stegotag {

namespace {

template <typename T>
void read_field(const nlohmann::json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

void read_path(const nlohmann::json& j, const char* key,
               std::filesystem::path& out) {
  if (j.contains(key)) out = j.at(key).get<std::string>();
}

// --- per-struct JSON mapping (strict) --------------------------------------

nlohmann::json scale_json(const NetScale& s) {
  return {{"image_size", s.image_size},
          {"detector_size", s.detector_size},
          {"corner_crop", s.corner_crop},
          {"encoder_base", s.encoder_base},
          {"encoder_depth", s.encoder_depth},
          {"region_channels", s.region_channels},
          {"corner_base", s.corner_base},
          {"corner_depth", s.corner_depth},
          {"decoder_channels", s.decoder_channels},
          {"decoder_fc", s.decoder_fc},
          {"adversary_channels", s.adversary_channels},
          {"reverse_base", s.reverse_base},
          {"reverse_depth", s.reverse_depth}};
}

NetScale scale_from_json(const nlohmann::json& j, NetScale base) {
  reject_unknown_keys(j,
                      {"image_size", "detector_size", "corner_crop",
                       "encoder_base", "encoder_depth", "region_channels",
                       "corner_base", "corner_depth", "decoder_channels",
                       "decoder_fc", "adversary_channels", "reverse_base",
                       "reverse_depth"},
                      "scale");
  read_field(j, "image_size", base.image_size);
  read_field(j, "detector_size", base.detector_size);
  read_field(j, "corner_crop", base.corner_crop);
  read_field(j, "encoder_base", base.encoder_base);
  read_field(j, "encoder_depth", base.encoder_depth);
  read_field(j, "region_channels", base.region_channels);
  read_field(j, "corner_base", base.corner_base);
  read_field(j, "corner_depth", base.corner_depth);
  read_field(j, "decoder_channels", base.decoder_channels);
  read_field(j, "decoder_fc", base.decoder_fc);
  read_field(j, "adversary_channels", base.adversary_channels);
  read_field(j, "reverse_base", base.reverse_base);
  read_field(j, "reverse_depth", base.reverse_depth);
  return base;
}

nlohmann::json printer_json(const PrinterNoiseConfig& p) {
  return {{"hue_range", p.hue_range},
          {"brightness_range", p.brightness_range},
          {"contrast_range", p.contrast_range},
          {"saturation_range", p.saturation_range},
          {"specular_prob", p.specular_prob},
          {"specular_size_lo", p.specular_size_lo},
          {"specular_size_hi", p.specular_size_hi},
          {"specular_intensity_lo", p.specular_intensity_lo},
          {"specular_intensity_hi", p.specular_intensity_hi}};
}

PrinterNoiseConfig printer_from_json(const nlohmann::json& j,
                                     PrinterNoiseConfig base) {
  reject_unknown_keys(j,
                      {"hue_range", "brightness_range", "contrast_range",
                       "saturation_range", "specular_prob", "specular_size_lo",
                       "specular_size_hi", "specular_intensity_lo",
                       "specular_intensity_hi"},
                      "printer");
  read_field(j, "hue_range", base.hue_range);
  read_field(j, "brightness_range", base.brightness_range);
  read_field(j, "contrast_range", base.contrast_range);
  read_field(j, "saturation_range", base.saturation_range);
  read_field(j, "specular_prob", base.specular_prob);
  read_field(j, "specular_size_lo", base.specular_size_lo);
  read_field(j, "specular_size_hi", base.specular_size_hi);
  read_field(j, "specular_intensity_lo", base.specular_intensity_lo);
  read_field(j, "specular_intensity_hi", base.specular_intensity_hi);
  return base;
}

nlohmann::json camera_json(const CameraNoiseConfig& c) {
  return {{"hue_range", c.hue_range},
          {"brightness_range", c.brightness_range},
          {"contrast_range", c.contrast_range},
          {"saturation_range", c.saturation_range},
          {"blur_kernels", c.blur_kernels},
          {"gauss_sigma_max", c.gauss_sigma_max},
          {"jpeg_q_lo", c.jpeg_q_lo},
          {"jpeg_q_hi", c.jpeg_q_hi}};
}

CameraNoiseConfig camera_from_json(const nlohmann::json& j,
                                   CameraNoiseConfig base) {
  reject_unknown_keys(j,
                      {"hue_range", "brightness_range", "contrast_range",
                       "saturation_range", "blur_kernels", "gauss_sigma_max",
                       "jpeg_q_lo", "jpeg_q_hi"},
                      "camera");
  read_field(j, "hue_range", base.hue_range);
  read_field(j, "brightness_range", base.brightness_range);
  read_field(j, "contrast_range", base.contrast_range);
  read_field(j, "saturation_range", base.saturation_range);
  read_field(j, "blur_kernels", base.blur_kernels);
  read_field(j, "gauss_sigma_max", base.gauss_sigma_max);
  read_field(j, "jpeg_q_lo", base.jpeg_q_lo);
  read_field(j, "jpeg_q_hi", base.jpeg_q_hi);
  return base;
}

nlohmann::json dataset_json(const DatasetSpec& d) {
  nlohmann::json sources = nlohmann::json::array();
  for (const auto& s : d.sources) {
    sources.push_back({{"root", s.root.string()},
                       {"tag", s.tag},
                       {"train_count", s.train_count},
                       {"val_count", s.val_count}});
  }
  return {{"target_resolution", d.target_resolution}, {"sources", sources}};
}

DatasetSpec dataset_from_json(const nlohmann::json& j, DatasetSpec base) {
  reject_unknown_keys(j, {"target_resolution", "sources"}, "dataset");
  read_field(j, "target_resolution", base.target_resolution);
  if (j.contains("sources")) {
    base.sources.clear();
    for (const auto& s : j.at("sources")) {
      reject_unknown_keys(s, {"root", "tag", "train_count", "val_count"},
                          "dataset source");
      DatasetSpec::Source src;
      src.root = s.at("root").get<std::string>();
      src.tag = s.at("tag").get<std::string>();
      src.train_count = s.at("train_count").get<int>();
      src.val_count = s.at("val_count").get<int>();
      base.sources.push_back(std::move(src));
    }
  }
  return base;
}

nlohmann::json train_json(const TrainConfig& t) {
  return {{"lr", t.lr},
          {"weight_decay", t.weight_decay},
          {"beta1", t.beta1},
          {"beta2", t.beta2},
          {"adam_eps", t.adam_eps},
          {"batch_size", t.batch_size},
          {"phase1_epochs", t.phase1_epochs},
          {"phase2_epochs", t.phase2_epochs},
          {"phase2_ramp_epochs", t.phase2_ramp_epochs},
          {"finetune_epochs", t.finetune_epochs},
          {"steps_per_epoch", t.steps_per_epoch},
          {"val_scenes", t.val_scenes},
          {"single_threaded", t.single_threaded},
          {"use_lpips", t.use_lpips},
          {"lpips_weights", t.lpips_weights.string()},
          {"teacher_forcing_recall", t.teacher_forcing_recall},
          {"max_skip_fraction", t.max_skip_fraction}};
}

TrainConfig train_from_json(const nlohmann::json& j, TrainConfig base) {
  reject_unknown_keys(
      j,
      {"lr", "weight_decay", "beta1", "beta2", "adam_eps", "batch_size",
       "phase1_epochs", "phase2_epochs", "phase2_ramp_epochs",
       "finetune_epochs", "steps_per_epoch", "val_scenes", "single_threaded",
       "use_lpips", "lpips_weights", "teacher_forcing_recall",
       "max_skip_fraction"},
      "train");
  read_field(j, "lr", base.lr);
  read_field(j, "weight_decay", base.weight_decay);
  read_field(j, "beta1", base.beta1);
  read_field(j, "beta2", base.beta2);
  read_field(j, "adam_eps", base.adam_eps);
  read_field(j, "batch_size", base.batch_size);
  read_field(j, "phase1_epochs", base.phase1_epochs);
  read_field(j, "phase2_epochs", base.phase2_epochs);
  read_field(j, "phase2_ramp_epochs", base.phase2_ramp_epochs);
  read_field(j, "finetune_epochs", base.finetune_epochs);
  read_field(j, "steps_per_epoch", base.steps_per_epoch);
  read_field(j, "val_scenes", base.val_scenes);
  read_field(j, "single_threaded", base.single_threaded);
  read_field(j, "use_lpips", base.use_lpips);
  read_path(j, "lpips_weights", base.lpips_weights);
  read_field(j, "teacher_forcing_recall", base.teacher_forcing_recall);
  read_field(j, "max_skip_fraction", base.max_skip_fraction);
  return base;
}

nlohmann::json pipeline_json(const PipelineConfig& p) {
  return {{"confidence_threshold", p.confidence_threshold},
          {"nms_iou", p.nms_iou},
          {"crop_expand", p.crop_expand},
          {"ecc", p.ecc}};
}

PipelineConfig pipeline_from_json(const nlohmann::json& j,
                                  PipelineConfig base) {
  reject_unknown_keys(j, {"confidence_threshold", "nms_iou", "crop_expand", "ecc"},
                      "pipeline");
  read_field(j, "confidence_threshold", base.confidence_threshold);
  read_field(j, "nms_iou", base.nms_iou);
  read_field(j, "crop_expand", base.crop_expand);
  read_field(j, "ecc", base.ecc);
  return base;
}

nlohmann::json eval_json(const BenchmarkConfig& e) {
  nlohmann::json stations = nlohmann::json::array();
  for (const auto& s : e.stations) {
    stations.push_back({{"position", {s.position.x(), s.position.y(), s.position.z()}},
                        {"target", {s.target.x(), s.target.y(), s.target.z()}},
                        {"roll", s.roll}});
  }
  return {{"stations", stations},
          {"intrinsics", e.intrinsics.to_json()},
          {"render_width", e.render_width},
          {"render_height", e.render_height},
          {"code_side_m", e.code_side_m},
          {"trials_per_station", e.trials_per_station},
          {"oracle_corners", e.oracle_corners},
          {"noise_free", e.noise_free}};
}

BenchmarkConfig eval_from_json(const nlohmann::json& j, BenchmarkConfig base) {
  reject_unknown_keys(j,
                      {"stations", "intrinsics", "render_width",
                       "render_height", "code_side_m", "trials_per_station",
                       "oracle_corners", "noise_free"},
                      "eval");
  if (j.contains("stations")) {
    base.stations.clear();
    for (const auto& s : j.at("stations")) {
      reject_unknown_keys(s, {"position", "target", "roll"}, "eval station");
      CameraStation st;
      const auto& p = s.at("position");
      st.position = Eigen::Vector3d(p.at(0).get<double>(), p.at(1).get<double>(),
                                    p.at(2).get<double>());
      const auto& t = s.at("target");
      st.target = Eigen::Vector3d(t.at(0).get<double>(), t.at(1).get<double>(),
                                  t.at(2).get<double>());
      st.roll = s.value("roll", 0.0);
      base.stations.push_back(st);
    }
  }
  if (j.contains("intrinsics")) {
    base.intrinsics = CameraIntrinsics::from_json(j.at("intrinsics"));
  }
  read_field(j, "render_width", base.render_width);
  read_field(j, "render_height", base.render_height);
  read_field(j, "code_side_m", base.code_side_m);
  read_field(j, "trials_per_station", base.trials_per_station);
  read_field(j, "oracle_corners", base.oracle_corners);
  read_field(j, "noise_free", base.noise_free);
  return base;
}

}  // namespace

void reject_unknown_keys(const nlohmann::json& j,
                         std::initializer_list<const char*> allowed,
                         const std::string& context) {
  if (!j.is_object()) {
    throw ConfigError("expected a JSON object for " + context);
  }
  for (const auto& [key, value] : j.items()) {
    bool known = false;
    for (const char* a : allowed) {
      if (key == a) {
        known = true;
        break;
      }
    }
    if (!known) {
      throw ConfigError("unknown key \"" + key + "\" in " + context);
    }
  }
}

void RootConfig::validate() const {
  if (preset != "paper" && preset != "desk") {
    throw ConfigError("preset must be \"paper\" or \"desk\"");
  }
  dataset.validate();
  train.validate();
  pipeline.validate();
  eval.validate();
  if (dataset_dir.empty()) throw ConfigError("dataset_dir must be set");
  if (bundle_dir.empty()) throw ConfigError("bundle_dir must be set");
}

RootConfig RootConfig::paper_defaults() {
  RootConfig cfg;
  cfg.preset = "paper";
  cfg.train = TrainConfig::paper_preset();
  cfg.dataset.target_resolution = 1024;
  cfg.dataset.sources = {{"coco", "coco", 43300, 8660},
                         {"dtd", "dtd", 4700, 940}};
  return cfg;
}

RootConfig RootConfig::desk_defaults() {
  RootConfig cfg;
  cfg.preset = "desk";
  cfg.train = TrainConfig::desk_preset();
  cfg.dataset.target_resolution = 512;
  cfg.dataset.sources = {{"textures", "desk", 500, 100}};
  return cfg;
}

RootConfig RootConfig::preset_by_name(const std::string& name) {
  if (name == "paper") return paper_defaults();
  if (name == "desk") return desk_defaults();
  throw ConfigError("unknown preset \"" + name + "\"");
}

nlohmann::json RootConfig::to_json() const {
  return {{"preset", preset},
          {"seed", seed},
          {"paths",
           {{"dataset_dir", dataset_dir.string()},
            {"bundle_dir", bundle_dir.string()},
            {"registry_file", registry_file.string()},
            {"intrinsics_file", intrinsics_file.string()}}},
          {"dataset", dataset_json(dataset)},
          {"scale", scale_json(train.scale)},
          {"train", train_json(train)},
          {"printer", printer_json(train.printer)},
          {"camera", camera_json(train.camera)},
          {"pipeline", pipeline_json(pipeline)},
          {"eval", eval_json(eval)}};
}

RootConfig RootConfig::from_json(const nlohmann::json& j) {
  reject_unknown_keys(j,
                      {"preset", "seed", "paths", "dataset", "scale", "train",
                       "printer", "camera", "pipeline", "eval"},
                      "config root");
  RootConfig cfg = preset_by_name(j.value("preset", "paper"));
  read_field(j, "seed", cfg.seed);
  if (j.contains("paths")) {
    const auto& p = j.at("paths");
    reject_unknown_keys(
        p, {"dataset_dir", "bundle_dir", "registry_file", "intrinsics_file"},
        "paths");
    read_path(p, "dataset_dir", cfg.dataset_dir);
    read_path(p, "bundle_dir", cfg.bundle_dir);
    read_path(p, "registry_file", cfg.registry_file);
    read_path(p, "intrinsics_file", cfg.intrinsics_file);
  }
  if (j.contains("dataset")) {
    cfg.dataset = dataset_from_json(j.at("dataset"), cfg.dataset);
  }
  if (j.contains("scale")) {
    cfg.train.scale = scale_from_json(j.at("scale"), cfg.train.scale);
  }
  if (j.contains("train")) {
    cfg.train = train_from_json(j.at("train"), cfg.train);
  }
  if (j.contains("printer")) {
    cfg.train.printer = printer_from_json(j.at("printer"), cfg.train.printer);
  }
  if (j.contains("camera")) {
    cfg.train.camera = camera_from_json(j.at("camera"), cfg.train.camera);
  }
  if (j.contains("pipeline")) {
    cfg.pipeline = pipeline_from_json(j.at("pipeline"), cfg.pipeline);
  }
  if (j.contains("eval")) {
    cfg.eval = eval_from_json(j.at("eval"), cfg.eval);
  }
  cfg.train.seed = cfg.seed;
  cfg.eval.seed = cfg.seed;
  return cfg;
}

RootConfig RootConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("invalid JSON in " + path.string() + ": " + e.what());
  }
  auto cfg = from_json(j);
  cfg.validate();
  return cfg;
}

void RootConfig::save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write config file " + path.string());
  out << to_json().dump(2) << "\n";
}

}  // namespace stegotag
