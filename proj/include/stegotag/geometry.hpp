#pragma once

#include <torch/torch.h>

#include <Eigen/Dense>
#include <array>
#include <utility>

#include "stegotag/common.hpp"
#include "stegotag/idcodec.hpp"

namespace stegotag {

struct Vec2 {
  double x = 0.0;
  double y = 0.0;
};

/// Convex quadrilateral in continuous pixel coordinates (the center of pixel
/// (i, j) sits at (i + 0.5, j + 0.5)). Vertex 0 corresponds to the top-left
/// corner of the rectified frame and the winding is clockwise on screen.
class Quad {
 public:
  Quad() = default;
  explicit Quad(const std::array<Vec2, 4>& vertices) : v_(vertices) {}

  const std::array<Vec2, 4>& vertices() const { return v_; }
  Vec2 vertex(int i) const { return v_[static_cast<size_t>(i)]; }

  bool is_convex() const;
  double area() const;
  bool in_bounds(double width, double height) const;
  Vec2 centroid() const;
  /// (x_min, y_min, x_max, y_max).
  std::array<double, 4> bounding_box() const;
  /// Throws GeometryError unless convex with positive area.
  void validate() const;

  /// Shape (8,) float64 tensor: x0,y0,x1,y1,x2,y2,x3,y3.
  torch::Tensor to_tensor() const;
  static Quad from_tensor(const torch::Tensor& t);

 private:
  std::array<Vec2, 4> v_{};
};

/// 3x3 projective map, stored normalized so matrix(2,2) == 1.
class Homography {
 public:
  Homography() : m_(Eigen::Matrix3d::Identity()) {}
  /// Normalizes by the bottom-right entry; throws GeometryError if the
  /// matrix is (near) singular or cannot be normalized.
  explicit Homography(const Eigen::Matrix3d& m);

  static Homography identity() { return Homography(); }

  const Eigen::Matrix3d& matrix() const { return m_; }
  Vec2 apply(const Vec2& p) const;
  Quad apply(const Quad& q) const;
  Homography inverse() const;
  /// Composition: (a * b).apply(p) == a.apply(b.apply(p)).
  friend Homography operator*(const Homography& a, const Homography& b);

 private:
  Eigen::Matrix3d m_;
};

/// Random convex quad: an axis-aligned square of random integer size and
/// position, each vertex shifted by up to shift_amplitude of the edge length
/// in x and y, then rotated about the centroid. Resamples until convex and
/// in-bounds; throws GeometryError when retries run out.
Quad sample_quad(RngStream& rng, int image_size,
                 std::pair<double, double> edge_range,
                 double shift_amplitude = 0.15, bool random_rotation = true);

/// Exact DLT from the 4 vertex correspondences quad -> [0,out_size]^2 square
/// (vertex 0 to the square's top-left, clockwise).
Homography quad_to_square_homography(const Quad& quad, int out_size);

/// Bilinear sample of a (...,C,H,W) image at continuous pixel coordinates
/// given as a (...,2) tensor (x, y). Border-clamped; differentiable with
/// respect to the image.
torch::Tensor bilinear_sample(const torch::Tensor& image,
                              const torch::Tensor& coords);

/// Warp the quad region of image (C,H,W) to an out_size x out_size patch.
torch::Tensor rectify_patch(const torch::Tensor& image, const Quad& quad,
                            int out_size = 256);

/// Composite a square patch into scene (C,H,W) over quad. Pixels outside the
/// quad are bit-identical to the input scene; a 1-px feathered alpha blends
/// the boundary. Differentiable with respect to the patch.
torch::Tensor paste_patch(const torch::Tensor& scene,
                          const torch::Tensor& patch, const Quad& quad);

/// A code placed in a dataset scene.
struct Placement {
  Quad quad;
  CodeId code_id;
  int64_t scene_index = 0;
};

}  // namespace stegotag
