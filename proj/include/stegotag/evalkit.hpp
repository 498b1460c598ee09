#pragma once

#include <array>
#include <filesystem>
#include <string>
#include <vector>

#include "stegotag/detect.hpp"
#include "stegotag/noisesim.hpp"
#include "stegotag/pose.hpp"

namespace stegotag {

// Load an image and fit it to a size x size square: antialiased resize of
// the shorter side, then a center crop.
torch::Tensor prepare_cover(const std::filesystem::path& path, int size);

// Mean corner distance in px after trying all four cyclic shifts of the
// predicted winding and keeping the best. Both corner sets must share a
// coordinate scale; the benchmark reports values at the detector's
// 300 px scale.
double corner_error(const std::array<Vec2, 4>& pred,
                    const std::array<Vec2, 4>& gt);

// Percentage of trials whose outcome is missed or found-wrong-id.
double drop_rate(const std::vector<FailureClass>& outcomes);

struct PoseError {
  double position_cm = 0.0;
  double rotation_deg = 0.0;
};

// Euclidean distance between world-frame camera centers plus the geodesic
// angle of R_pred * R_gt^T.
PoseError pose_error(const Pose& pred, const Pose& gt);

// Mean per-patch standard deviation of YUV values over a regular grid of
// non-overlapping patches, averaged over the three channels. Partial
// patches at the border are dropped.
double local_rms_contrast(const torch::Tensor& rgb, int patch_size = 16);

struct CameraStation {
  Eigen::Vector3d position = Eigen::Vector3d::Zero();
  Eigen::Vector3d target = Eigen::Vector3d::Zero();
  double roll = 0.0;

  Pose pose() const { return look_at_pose(position, target, roll); }
};

struct BenchmarkConfig {
  std::vector<std::filesystem::path> textures;
  std::vector<CameraStation> stations = default_stations();
  CameraIntrinsics intrinsics{600.0, 600.0, 320.0, 240.0};
  int render_width = 640;
  int render_height = 480;
  double code_side_m = 0.085;
  int trials_per_station = 5;  // five captures per station
  CameraNoiseConfig camera;
  PipelineConfig pipeline;
  bool oracle_corners = false;  // inject ground truth, skip the nets
  bool noise_free = false;
  uint64_t seed = 0;

  void validate() const;
  static std::vector<CameraStation> default_stations();

  // Station file: {stations:[{position, target, roll}], intrinsics, ...}.
  static BenchmarkConfig load_stations(const BenchmarkConfig& base,
                                       const std::filesystem::path& path);
  void save_stations(const std::filesystem::path& path) const;
};

struct TextureStats {
  std::string name;
  double rms_contrast = 0.0;
  double corner_error_300 = 0.0;  // mean over found-correct trials
  int corner_samples = 0;
  int trials = 0;
  int failures = 0;  // missed + wrong id
  double drop_rate_pct = 0.0;
};

struct StationStats {
  int index = 0;
  double mean_position_err_cm = 0.0;
  double mean_rotation_err_deg = 0.0;
  int samples = 0;
};

struct BenchmarkReport {
  std::vector<TextureStats> textures;
  std::vector<StationStats> stations;
  int total_trials = 0;
  int total_failures = 0;
  double overall_drop_rate_pct = 0.0;
  double mean_corner_error_300 = 0.0;
  bool low_recall = false;  // found-correct rate under 50%

  nlohmann::json to_json() const;
  std::string to_text_table() const;
};

// Fraction of all failures attributable to the `top_k` textures with the
// highest local-RMS contrast.
double failure_share_of_top_contrast(const BenchmarkReport& report, int top_k);

// Virtual reproduction of the capture protocol: each texture is encoded
// with a fresh id, rendered onto a gray canvas through each station's
// homography, degraded by camera noise, and run through the detector.
// Per-trial pose is solved against a single-entry registry when the code
// was found.
BenchmarkReport run_detection_benchmark(const BenchmarkConfig& cfg,
                                        ModelBundle& bundle);

}  // namespace stegotag
