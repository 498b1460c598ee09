#include "stegotag/pose.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>

#include "stegotag/common.hpp"

namespace stegotag {

namespace {

nlohmann::json load_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw DataError("invalid JSON in " + path.string() + ": " + e.what());
  }
  return j;
}

void save_json_file(const std::filesystem::path& path, const nlohmann::json& j) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << j.dump(2) << "\n";
}

Eigen::Matrix3d orthonormalize(const Eigen::Matrix3d& m) {
  Eigen::JacobiSVD<Eigen::Matrix3d> svd(
      m, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Eigen::Matrix3d r = svd.matrixU() * svd.matrixV().transpose();
  if (r.determinant() < 0) {
    Eigen::Matrix3d u = svd.matrixU();
    u.col(2) *= -1.0;
    r = u * svd.matrixV().transpose();
  }
  return r;
}

Eigen::Matrix3d rodrigues(const Eigen::Vector3d& w) {
  const double theta = w.norm();
  if (theta < 1e-12) {
    Eigen::Matrix3d k;
    k << 0, -w.z(), w.y(), w.z(), 0, -w.x(), -w.y(), w.x(), 0;
    return Eigen::Matrix3d::Identity() + k;
  }
  const Eigen::Vector3d a = w / theta;
  Eigen::Matrix3d k;
  k << 0, -a.z(), a.y(), a.z(), 0, -a.x(), -a.y(), a.x(), 0;
  return Eigen::Matrix3d::Identity() + std::sin(theta) * k +
         (1.0 - std::cos(theta)) * k * k;
}

// Exact DLT from 4 point pairs (u,v) -> (x,y); throws on degenerate input.
Eigen::Matrix3d homography_4pt(const std::array<Eigen::Vector2d, 4>& src,
                               const std::array<Eigen::Vector2d, 4>& dst) {
  Eigen::Matrix<double, 8, 8> A = Eigen::Matrix<double, 8, 8>::Zero();
  Eigen::Matrix<double, 8, 1> b;
  for (int i = 0; i < 4; ++i) {
    const double u = src[static_cast<size_t>(i)].x();
    const double v = src[static_cast<size_t>(i)].y();
    const double x = dst[static_cast<size_t>(i)].x();
    const double y = dst[static_cast<size_t>(i)].y();
    A.row(2 * i) << u, v, 1, 0, 0, 0, -u * x, -v * x;
    A.row(2 * i + 1) << 0, 0, 0, u, v, 1, -u * y, -v * y;
    b(2 * i) = x;
    b(2 * i + 1) = y;
  }
  Eigen::FullPivLU<Eigen::Matrix<double, 8, 8>> lu(A);
  if (!lu.isInvertible()) {
    throw GeometryError("degenerate correspondences for homography");
  }
  Eigen::Matrix<double, 8, 1> h = lu.solve(b);
  Eigen::Matrix3d m;
  m << h(0), h(1), h(2), h(3), h(4), h(5), h(6), h(7), 1.0;
  return m;
}

// Residuals (projected - observed) and, optionally, the 2N x 6 Jacobian
// with respect to a left perturbation [rotation | translation]. Points at
// or behind the camera poison the cost with +inf so LM rejects the step.
double residuals(const Pose& pose, const std::vector<Correspondence>& corrs,
                 const CameraIntrinsics& k, Eigen::VectorXd* r_out,
                 Eigen::MatrixXd* jac_out) {
  const auto n = static_cast<Eigen::Index>(corrs.size());
  if (r_out) r_out->resize(2 * n);
  if (jac_out) jac_out->setZero(2 * n, 6);
  double cost = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& c = corrs[static_cast<size_t>(i)];
    const Eigen::Vector3d p = pose.R * c.world + pose.t;
    if (p.z() <= 1e-9) return std::numeric_limits<double>::infinity();
    const double iz = 1.0 / p.z();
    const double ru = k.fx * p.x() * iz + k.cx - c.image.x;
    const double rv = k.fy * p.y() * iz + k.cy - c.image.y;
    cost += ru * ru + rv * rv;
    if (r_out) {
      (*r_out)(2 * i) = ru;
      (*r_out)(2 * i + 1) = rv;
    }
    if (jac_out) {
      Eigen::Matrix<double, 2, 3> dpix;
      dpix << k.fx * iz, 0.0, -k.fx * p.x() * iz * iz,
              0.0, k.fy * iz, -k.fy * p.y() * iz * iz;
      Eigen::Matrix3d skew;
      skew << 0, -p.z(), p.y(), p.z(), 0, -p.x(), -p.y(), p.x(), 0;
      jac_out->block<2, 3>(2 * i, 0) = -dpix * skew;  // d p / d omega
      jac_out->block<2, 3>(2 * i, 3) = dpix;          // d p / d t
    }
  }
  return cost;
}

void check_not_collinear(const std::vector<Correspondence>& corrs) {
  // Covariance of the image points: a vanishing second eigenvalue means
  // they sit on a line and the pose problem is ill-posed.
  Eigen::Vector2d mean = Eigen::Vector2d::Zero();
  for (const auto& c : corrs) mean += Eigen::Vector2d(c.image.x, c.image.y);
  mean /= static_cast<double>(corrs.size());
  Eigen::Matrix2d cov = Eigen::Matrix2d::Zero();
  for (const auto& c : corrs) {
    Eigen::Vector2d d = Eigen::Vector2d(c.image.x, c.image.y) - mean;
    cov += d * d.transpose();
  }
  cov /= static_cast<double>(corrs.size());
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d> eig(cov);
  const double lo = eig.eigenvalues()(0), hi = eig.eigenvalues()(1);
  if (hi <= 0.0 || lo / hi < 1e-10) {
    throw GeometryError("projected corners are (near) collinear");
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// Plain data types

void CameraIntrinsics::validate() const {
  if (!(fx > 0.0) || !(fy > 0.0)) {
    throw ConfigError("focal lengths must be positive");
  }
  if (!std::isfinite(cx) || !std::isfinite(cy)) {
    throw ConfigError("principal point must be finite");
  }
}

nlohmann::json CameraIntrinsics::to_json() const {
  return {{"fx", fx}, {"fy", fy}, {"cx", cx}, {"cy", cy}};
}

CameraIntrinsics CameraIntrinsics::from_json(const nlohmann::json& j) {
  CameraIntrinsics k;
  k.fx = j.at("fx").get<double>();
  k.fy = j.at("fy").get<double>();
  k.cx = j.at("cx").get<double>();
  k.cy = j.at("cy").get<double>();
  k.validate();
  return k;
}

CameraIntrinsics CameraIntrinsics::load(const std::filesystem::path& path) {
  return from_json(load_json_file(path));
}

void CameraIntrinsics::save(const std::filesystem::path& path) const {
  save_json_file(path, to_json());
}

void RegistryEntry::validate() const {
  if (!(side_m > 0.0)) throw ConfigError("side_m must be positive");
  const double kTol = 1e-6;
  for (int i = 0; i < 4; ++i) {
    const auto& a = corners_world[static_cast<size_t>(i)];
    const auto& b = corners_world[static_cast<size_t>((i + 1) % 4)];
    if (std::abs((b - a).norm() - side_m) > kTol) {
      throw ConfigError("registry entry " + id.to_hex() +
                        " is not square: edge length off");
    }
  }
  const double diag = side_m * std::sqrt(2.0);
  if (std::abs((corners_world[2] - corners_world[0]).norm() - diag) > 2 * kTol ||
      std::abs((corners_world[3] - corners_world[1]).norm() - diag) > 2 * kTol) {
    throw ConfigError("registry entry " + id.to_hex() +
                      " is not square: diagonals off");
  }
  const Eigen::Vector3d e1 = corners_world[1] - corners_world[0];
  const Eigen::Vector3d e2 = corners_world[3] - corners_world[0];
  const Eigen::Vector3d n = e1.cross(e2);
  if (n.norm() < 1e-12) {
    throw ConfigError("registry entry " + id.to_hex() + " is degenerate");
  }
  const double off =
      std::abs(n.normalized().dot(corners_world[2] - corners_world[0]));
  if (off > kTol) {
    throw ConfigError("registry entry " + id.to_hex() + " is not coplanar");
  }
}

RegistryEntry planar_entry(const CodeId& id, double side_m,
                           const Eigen::Vector3d& center,
                           const Eigen::Vector3d& ex,
                           const Eigen::Vector3d& ey) {
  const Eigen::Vector3d hx = 0.5 * side_m * ex.normalized();
  const Eigen::Vector3d hy = 0.5 * side_m * ey.normalized();
  RegistryEntry e;
  e.id = id;
  e.side_m = side_m;
  e.corners_world = {center - hx - hy, center + hx - hy, center + hx + hy,
                     center - hx + hy};
  e.validate();
  return e;
}

void CodeRegistry::add(const RegistryEntry& entry) {
  entry.validate();
  for (const auto& e : entries_) {
    if (e.id == entry.id) {
      throw ConfigError("duplicate registry id " + entry.id.to_hex());
    }
  }
  entries_.push_back(entry);
}

const RegistryEntry* CodeRegistry::find(const CodeId& id) const {
  for (const auto& e : entries_) {
    if (e.id == id) return &e;
  }
  return nullptr;
}

nlohmann::json CodeRegistry::to_json() const {
  nlohmann::json codes = nlohmann::json::array();
  for (const auto& e : entries_) {
    nlohmann::json corners = nlohmann::json::array();
    for (const auto& c : e.corners_world) {
      corners.push_back({c.x(), c.y(), c.z()});
    }
    codes.push_back({{"id_hex", e.id.to_hex()},
                     {"side_m", e.side_m},
                     {"corners_world", corners}});
  }
  return {{"codes", codes}};
}

CodeRegistry CodeRegistry::from_json(const nlohmann::json& j) {
  CodeRegistry reg;
  for (const auto& c : j.at("codes")) {
    RegistryEntry e;
    e.id = CodeId::from_hex(c.at("id_hex").get<std::string>());
    e.side_m = c.at("side_m").get<double>();
    const auto& corners = c.at("corners_world");
    if (corners.size() != 4) {
      throw DataError("registry entries need exactly 4 corners");
    }
    for (size_t i = 0; i < 4; ++i) {
      const auto& p = corners.at(i);
      e.corners_world[i] =
          Eigen::Vector3d(p.at(0).get<double>(), p.at(1).get<double>(),
                          p.at(2).get<double>());
    }
    reg.add(e);
  }
  return reg;
}

CodeRegistry CodeRegistry::load(const std::filesystem::path& path) {
  return from_json(load_json_file(path));
}

void CodeRegistry::save(const std::filesystem::path& path) const {
  save_json_file(path, to_json());
}

void Pose::validate() const {
  const double err = (R.transpose() * R - Eigen::Matrix3d::Identity())
                         .cwiseAbs()
                         .maxCoeff();
  if (err > 1e-9 || R.determinant() < 0.0) {
    throw ContractError("pose rotation is not a proper orthonormal matrix");
  }
}

nlohmann::json Pose::to_json() const {
  nlohmann::json rows = nlohmann::json::array();
  for (int i = 0; i < 3; ++i) {
    rows.push_back({R(i, 0), R(i, 1), R(i, 2)});
  }
  return {{"R", rows}, {"t", {t.x(), t.y(), t.z()}}};
}

Pose Pose::from_json(const nlohmann::json& j) {
  Pose p;
  const auto& rows = j.at("R");
  for (int i = 0; i < 3; ++i) {
    for (int c = 0; c < 3; ++c) {
      p.R(i, c) = rows.at(static_cast<size_t>(i)).at(static_cast<size_t>(c))
                      .get<double>();
    }
  }
  const auto& tv = j.at("t");
  p.t = Eigen::Vector3d(tv.at(0).get<double>(), tv.at(1).get<double>(),
                        tv.at(2).get<double>());
  p.validate();
  return p;
}

nlohmann::json PoseResult::to_json() const {
  auto j = pose.to_json();
  j["rms_px"] = rms_px;
  j["converged"] = converged;
  j["iterations"] = iterations;
  j["points"] = points;
  return j;
}

// ---------------------------------------------------------------------------
// Projection and refinement

Vec2 project_point(const Pose& pose, const Eigen::Vector3d& world,
                   const CameraIntrinsics& k) {
  const Eigen::Vector3d p = pose.R * world + pose.t;
  if (p.z() <= 1e-9) throw GeometryError("point is behind the camera");
  return Vec2{k.fx * p.x() / p.z() + k.cx, k.fy * p.y() / p.z() + k.cy};
}

Pose look_at_pose(const Eigen::Vector3d& center, const Eigen::Vector3d& target,
                  double roll) {
  const Eigen::Vector3d f = (target - center).normalized();
  if (!f.allFinite()) throw GeometryError("look-at target equals the center");
  Eigen::Vector3d x = Eigen::Vector3d(0, 1, 0).cross(f);
  if (x.norm() < 1e-9) x = Eigen::Vector3d(1, 0, 0).cross(f);
  x.normalize();
  const Eigen::Vector3d y = f.cross(x);
  Pose p;
  p.R.row(0) = std::cos(roll) * x + std::sin(roll) * y;
  p.R.row(1) = -std::sin(roll) * x + std::cos(roll) * y;
  p.R.row(2) = f;
  p.t = -p.R * center;
  return p;
}

double reprojection_error(const Pose& pose,
                          const std::vector<Correspondence>& corrs,
                          const CameraIntrinsics& k) {
  if (corrs.empty()) throw ContractError("no correspondences");
  const double cost = residuals(pose, corrs, k, nullptr, nullptr);
  return std::sqrt(cost / (2.0 * static_cast<double>(corrs.size())));
}

PoseResult refine_pose(const Pose& init,
                       const std::vector<Correspondence>& corrs,
                       const CameraIntrinsics& k) {
  if (corrs.size() < 4) {
    throw ContractError("pose refinement needs at least 4 correspondences");
  }
  check_not_collinear(corrs);

  Pose pose = init;
  pose.R = orthonormalize(pose.R);
  double cost = residuals(pose, corrs, k, nullptr, nullptr);
  double lambda = 1e-3;
  bool converged = false;
  int iter = 0;
  Eigen::VectorXd r;
  Eigen::MatrixXd jac;
  for (; iter < 100; ++iter) {
    residuals(pose, corrs, k, &r, &jac);
    const Eigen::Matrix<double, 6, 6> jtj = jac.transpose() * jac;
    const Eigen::Matrix<double, 6, 1> jtr = jac.transpose() * r;
    const Eigen::Matrix<double, 6, 1> delta =
        (jtj + lambda * Eigen::Matrix<double, 6, 6>::Identity())
            .ldlt()
            .solve(-jtr);
    if (!delta.allFinite()) break;
    Pose trial;
    trial.R = orthonormalize(rodrigues(delta.head<3>()) * pose.R);
    trial.t = pose.t + delta.tail<3>();
    const double trial_cost = residuals(trial, corrs, k, nullptr, nullptr);
    if (trial_cost < cost) {
      pose = trial;
      cost = trial_cost;
      lambda = std::max(lambda / 3.0, 1e-12);
      if (delta.norm() < 1e-10) {
        converged = true;
        ++iter;
        break;
      }
    } else {
      lambda *= 10.0;
      if (lambda > 1e12) break;
    }
  }

  PoseResult out;
  out.pose = pose;
  out.rms_px = std::sqrt(cost / (2.0 * static_cast<double>(corrs.size())));
  out.converged = converged;
  out.iterations = iter;
  out.points = static_cast<int>(corrs.size());
  return out;
}

Pose pose_from_square(const std::array<Eigen::Vector3d, 4>& world,
                      const std::array<Vec2, 4>& image,
                      const CameraIntrinsics& k) {
  // Local plane frame on the square.
  const Eigen::Vector3d origin = world[0];
  Eigen::Vector3d e1 = world[1] - world[0];
  if (e1.norm() < 1e-12) throw GeometryError("degenerate world square");
  e1.normalize();
  Eigen::Vector3d e2 = world[3] - world[0];
  e2 -= e2.dot(e1) * e1;
  if (e2.norm() < 1e-12) throw GeometryError("degenerate world square");
  e2.normalize();
  const Eigen::Vector3d n = e1.cross(e2);

  std::array<Eigen::Vector2d, 4> plane, norm_img;
  for (size_t i = 0; i < 4; ++i) {
    const Eigen::Vector3d d = world[i] - origin;
    plane[i] = Eigen::Vector2d(d.dot(e1), d.dot(e2));
    norm_img[i] = Eigen::Vector2d((image[i].x - k.cx) / k.fx,
                                  (image[i].y - k.cy) / k.fy);
  }

  const Eigen::Matrix3d h = homography_4pt(plane, norm_img);
  Eigen::Vector3d h1 = h.col(0), h2 = h.col(1), h3 = h.col(2);
  const double scale = 2.0 / (h1.norm() + h2.norm());
  if (!std::isfinite(scale) || scale <= 0.0) {
    throw GeometryError("homography decomposition failed");
  }
  Eigen::Vector3d r1 = scale * h1, r2 = scale * h2, tp = scale * h3;
  if (tp.z() < 0.0) {  // plane must sit in front of the camera
    r1 = -r1;
    r2 = -r2;
    tp = -tp;
  }
  Eigen::Matrix3d r0;
  r0.col(0) = r1;
  r0.col(1) = r2;
  r0.col(2) = r1.cross(r2);
  r0 = orthonormalize(r0);

  // Compose plane-frame pose with the plane-to-world transform:
  // X_world = origin + A (u, v, 0), A = [e1 e2 n].
  Eigen::Matrix3d a;
  a.col(0) = e1;
  a.col(1) = e2;
  a.col(2) = n;
  Pose pose;
  pose.R = orthonormalize(r0 * a.transpose());
  pose.t = tp - pose.R * origin;
  return pose;
}

PoseResult solve_pose(const std::vector<DetectionResult>& detections,
                      const CodeRegistry& registry, const CameraIntrinsics& k,
                      double min_bit_confidence) {
  k.validate();
  std::vector<Correspondence> corrs;
  struct Match {
    const DetectionResult* det;
    const RegistryEntry* entry;
  };
  std::vector<Match> matches;
  size_t best = 0;
  for (const auto& det : detections) {
    if (det.bit_confidence < min_bit_confidence) continue;
    // With ECC the corrected codeword is the canonical identity.
    const CodeId key = det.payload ? rs_encode(*det.payload) : det.id;
    const RegistryEntry* entry = registry.find(key);
    if (!entry) continue;
    for (size_t i = 0; i < 4; ++i) {
      corrs.push_back({entry->corners_world[i], det.corners[i]});
    }
    matches.push_back({&det, entry});
    const auto& b = *matches[best].det;
    if (det.bit_confidence > b.bit_confidence ||
        (det.bit_confidence == b.bit_confidence &&
         det.region_confidence > b.region_confidence)) {
      best = matches.size() - 1;
    }
  }
  if (matches.empty()) {
    throw NoPoseError("no detection matches a registered code");
  }
  check_not_collinear(corrs);

  // A single planar square has a well-known two-fold pose ambiguity, so a
  // lone initialization can drop Levenberg-Marquardt into the wrong basin.
  // Initialize from the best-confidence code first, then from every other
  // matched code, and keep the lowest-cost refinement.
  std::swap(matches[0], matches[best]);
  PoseResult out;
  bool have = false;
  for (const auto& m : matches) {
    Pose init;
    try {
      init = pose_from_square(m.entry->corners_world, m.det->corners, k);
    } catch (const GeometryError&) {
      continue;
    }
    auto refined = refine_pose(init, corrs, k);
    if (!have || refined.rms_px < out.rms_px) {
      out = refined;
      have = true;
    }
  }
  if (!have) throw GeometryError("all pose initializations failed");
  return out;
}

}  // namespace stegotag
