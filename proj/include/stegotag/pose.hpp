#pragma once

#include <Eigen/Dense>

#include <array>
#include <filesystem>
#include <vector>

#include <json.hpp>

#include "stegotag/detect.hpp"
#include "stegotag/idcodec.hpp"

namespace stegotag {

struct CameraIntrinsics {
  double fx = 0.0, fy = 0.0;  // focal lengths, px
  double cx = 0.0, cy = 0.0;  // principal point, px

  void validate() const;
  nlohmann::json to_json() const;
  static CameraIntrinsics from_json(const nlohmann::json& j);
  static CameraIntrinsics load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;
};

// One registered code: its id, physical side length, and the world
// positions of its four corners in the rectified-frame winding (the corner
// that maps to the top-left of the rectified code first, then clockwise as
// seen by a camera facing the code).
struct RegistryEntry {
  CodeId id;
  double side_m = 0.0;
  std::array<Eigen::Vector3d, 4> corners_world;

  void validate() const;  // square + coplanar within 1e-6 m
};

// Convenience constructor: a square of side `side_m` centered at `center`,
// with `ex` pointing along the code's top edge and `ey` down its left edge
// (unit vectors, orthogonal).
RegistryEntry planar_entry(const CodeId& id, double side_m,
                           const Eigen::Vector3d& center,
                           const Eigen::Vector3d& ex,
                           const Eigen::Vector3d& ey);

class CodeRegistry {
 public:
  void add(const RegistryEntry& entry);
  const RegistryEntry* find(const CodeId& id) const;
  size_t size() const { return entries_.size(); }
  const std::vector<RegistryEntry>& entries() const { return entries_; }

  nlohmann::json to_json() const;
  static CodeRegistry from_json(const nlohmann::json& j);
  static CodeRegistry load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;

 private:
  std::vector<RegistryEntry> entries_;
};

// World-to-camera rigid transform: x_cam = R x_world + t.
struct Pose {
  Eigen::Matrix3d R = Eigen::Matrix3d::Identity();
  Eigen::Vector3d t = Eigen::Vector3d::Zero();

  Eigen::Vector3d camera_center() const { return -R.transpose() * t; }
  void validate() const;  // R orthonormal, det +1, within 1e-9
  nlohmann::json to_json() const;  // includes rms only via PoseResult
  static Pose from_json(const nlohmann::json& j);
};

struct Correspondence {
  Eigen::Vector3d world;
  Vec2 image;  // pixels
};

struct PoseResult {
  Pose pose;
  double rms_px = 0.0;
  bool converged = false;
  int iterations = 0;
  int points = 0;

  nlohmann::json to_json() const;
};

// Pinhole projection of a world point; throws GeometryError when the point
// is not in front of the camera.
Vec2 project_point(const Pose& pose, const Eigen::Vector3d& world,
                   const CameraIntrinsics& k);

// Camera at `center` looking toward `target` (x right, y down, z forward),
// rolled by `roll` radians about the view axis.
Pose look_at_pose(const Eigen::Vector3d& center, const Eigen::Vector3d& target,
                  double roll = 0.0);

double reprojection_error(const Pose& pose,
                          const std::vector<Correspondence>& corrs,
                          const CameraIntrinsics& k);

// Levenberg-Marquardt refinement from an explicit initialization. The
// returned rotation is re-orthonormalized every iterate; convergence means
// the last accepted step had norm < 1e-10 (within 100 iterations).
PoseResult refine_pose(const Pose& init,
                       const std::vector<Correspondence>& corrs,
                       const CameraIntrinsics& k);

// Initialization for one planar square: homography decomposition from its
// 4 world/image corner pairs.
Pose pose_from_square(const std::array<Eigen::Vector3d, 4>& world,
                      const std::array<Vec2, 4>& image,
                      const CameraIntrinsics& k);

// Full solve: match detections against the registry (ECC-corrected ids
// when payloads are present), drop detections with bit confidence below
// `min_bit_confidence`, initialize from the best-confidence match, refine
// over all matched corners.
PoseResult solve_pose(const std::vector<DetectionResult>& detections,
                      const CodeRegistry& registry, const CameraIntrinsics& k,
                      double min_bit_confidence = 0.2);

}  // namespace stegotag
