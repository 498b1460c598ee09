#include "stegotag/geometry.hpp"

#include <cmath>

namespace stegotag {

namespace {

double cross_z(const Vec2& a, const Vec2& b, const Vec2& p) {
  return (b.x - a.x) * (p.y - a.y) - (b.y - a.y) * (p.x - a.x);
}

}  // namespace

bool Quad::is_convex() const {
  // Clockwise on screen (y down) makes every edge cross product positive.
  for (int i = 0; i < 4; ++i) {
    const Vec2& a = v_[static_cast<size_t>(i)];
    const Vec2& b = v_[static_cast<size_t>((i + 1) % 4)];
    const Vec2& c = v_[static_cast<size_t>((i + 2) % 4)];
    if (cross_z(a, b, c) <= 0.0) return false;
  }
  return true;
}

double Quad::area() const {
  double twice = 0.0;
  for (int i = 0; i < 4; ++i) {
    const Vec2& a = v_[static_cast<size_t>(i)];
    const Vec2& b = v_[static_cast<size_t>((i + 1) % 4)];
    twice += a.x * b.y - b.x * a.y;
  }
  return std::abs(twice) / 2.0;
}

bool Quad::in_bounds(double width, double height) const {
  for (const Vec2& p : v_) {
    if (p.x < 0.0 || p.y < 0.0 || p.x > width || p.y > height) return false;
  }
  return true;
}

Vec2 Quad::centroid() const {
  Vec2 c;
  for (const Vec2& p : v_) {
    c.x += p.x / 4.0;
    c.y += p.y / 4.0;
  }
  return c;
}

std::array<double, 4> Quad::bounding_box() const {
  std::array<double, 4> bb = {v_[0].x, v_[0].y, v_[0].x, v_[0].y};
  for (const Vec2& p : v_) {
    bb[0] = std::min(bb[0], p.x);
    bb[1] = std::min(bb[1], p.y);
    bb[2] = std::max(bb[2], p.x);
    bb[3] = std::max(bb[3], p.y);
  }
  return bb;
}

void Quad::validate() const {
  if (!is_convex()) throw GeometryError("quad is not convex (or winding is reversed)");
  if (!(area() > 0.0)) throw GeometryError("quad is degenerate");
}

torch::Tensor Quad::to_tensor() const {
  auto t = torch::empty({8}, torch::kFloat64);
  auto a = t.accessor<double, 1>();
  for (int i = 0; i < 4; ++i) {
    a[2 * i] = v_[static_cast<size_t>(i)].x;
    a[2 * i + 1] = v_[static_cast<size_t>(i)].y;
  }
  return t;
}

Quad Quad::from_tensor(const torch::Tensor& t) {
  if (t.numel() != 8) throw ContractError("quad tensor must have 8 entries");
  auto flat = t.detach().to(torch::kFloat64).reshape({8});
  auto a = flat.accessor<double, 1>();
  std::array<Vec2, 4> v;
  for (int i = 0; i < 4; ++i) v[static_cast<size_t>(i)] = {a[2 * i], a[2 * i + 1]};
  return Quad(v);
}

Homography::Homography(const Eigen::Matrix3d& m) {
  const double d = m.determinant();
  if (std::abs(d) < 1e-12) throw GeometryError("homography is singular");
  const double w = m(2, 2);
  if (std::abs(w) < 1e-12) {
    throw GeometryError("homography cannot be normalized (vanishing h33)");
  }
  m_ = m / w;
}

Vec2 Homography::apply(const Vec2& p) const {
  const Eigen::Vector3d q = m_ * Eigen::Vector3d(p.x, p.y, 1.0);
  if (std::abs(q(2)) < 1e-12) throw GeometryError("point maps to infinity");
  return {q(0) / q(2), q(1) / q(2)};
}

Quad Homography::apply(const Quad& q) const {
  std::array<Vec2, 4> v;
  for (int i = 0; i < 4; ++i) v[static_cast<size_t>(i)] = apply(q.vertex(i));
  return Quad(v);
}

Homography Homography::inverse() const {
  return Homography(Eigen::Matrix3d(m_.inverse()));
}

Homography operator*(const Homography& a, const Homography& b) {
  return Homography(Eigen::Matrix3d(a.m_ * b.m_));
}

Quad sample_quad(RngStream& rng, int image_size,
                 std::pair<double, double> edge_range, double shift_amplitude,
                 bool random_rotation) {
  const auto [lo, hi] = edge_range;
  if (!(lo > 0.0 && hi < 1.0 && lo <= hi)) {
    throw ConfigError("edge_range fractions must satisfy 0 < lo <= hi < 1");
  }
  if (image_size < 32) throw ConfigError("image too small to host a patch");
  const int64_t e_lo = std::max<int64_t>(8, std::llround(lo * image_size));
  const int64_t e_hi = std::max<int64_t>(e_lo, std::llround(hi * image_size));

  for (int attempt = 0; attempt < 1000; ++attempt) {
    const int64_t e = rng.uniform_int(e_lo, e_hi);
    const int64_t x0 = rng.uniform_int(0, image_size - e);
    const int64_t y0 = rng.uniform_int(0, image_size - e);
    std::array<Vec2, 4> v = {Vec2{double(x0), double(y0)},
                             Vec2{double(x0 + e), double(y0)},
                             Vec2{double(x0 + e), double(y0 + e)},
                             Vec2{double(x0), double(y0 + e)}};
    const double amp = shift_amplitude * static_cast<double>(e);
    for (Vec2& p : v) {
      p.x += rng.uniform(-amp, amp);
      p.y += rng.uniform(-amp, amp);
    }
    const double theta = random_rotation ? rng.uniform(0.0, 2.0 * M_PI) : 0.0;
    if (theta != 0.0) {
      Vec2 c{0.0, 0.0};
      for (const Vec2& p : v) {
        c.x += p.x / 4.0;
        c.y += p.y / 4.0;
      }
      const double ct = std::cos(theta), st = std::sin(theta);
      for (Vec2& p : v) {
        const double dx = p.x - c.x, dy = p.y - c.y;
        p.x = c.x + ct * dx - st * dy;
        p.y = c.y + st * dx + ct * dy;
      }
    }
    Quad q(v);
    if (q.is_convex() && q.in_bounds(image_size, image_size)) return q;
  }
  throw GeometryError("sample_quad: retries exhausted");
}

Homography quad_to_square_homography(const Quad& quad, int out_size) {
  quad.validate();
  if (out_size <= 0) throw ConfigError("out_size must be positive");
  const double s = static_cast<double>(out_size);
  const Vec2 dst[4] = {{0.0, 0.0}, {s, 0.0}, {s, s}, {0.0, s}};

  // Direct linear transform with h33 pinned to 1: eight equations in eight
  // unknowns, solved exactly.
  Eigen::Matrix<double, 8, 8> A = Eigen::Matrix<double, 8, 8>::Zero();
  Eigen::Matrix<double, 8, 1> b;
  for (int i = 0; i < 4; ++i) {
    const Vec2 p = quad.vertex(i);
    const Vec2 q = dst[i];
    A(2 * i, 0) = p.x;
    A(2 * i, 1) = p.y;
    A(2 * i, 2) = 1.0;
    A(2 * i, 6) = -q.x * p.x;
    A(2 * i, 7) = -q.x * p.y;
    b(2 * i) = q.x;
    A(2 * i + 1, 3) = p.x;
    A(2 * i + 1, 4) = p.y;
    A(2 * i + 1, 5) = 1.0;
    A(2 * i + 1, 6) = -q.y * p.x;
    A(2 * i + 1, 7) = -q.y * p.y;
    b(2 * i + 1) = q.y;
  }
  Eigen::FullPivLU<Eigen::Matrix<double, 8, 8>> lu(A);
  if (!lu.isInvertible()) throw GeometryError("degenerate correspondences");
  const Eigen::Matrix<double, 8, 1> h = lu.solve(b);
  Eigen::Matrix3d m;
  m << h(0), h(1), h(2), h(3), h(4), h(5), h(6), h(7), 1.0;
  return Homography(m);
}

torch::Tensor bilinear_sample(const torch::Tensor& image,
                              const torch::Tensor& coords) {
  if (image.dim() < 3) throw ContractError("image must be (...,C,H,W)");
  if (coords.size(-1) != 2) throw ContractError("coords must end in (x, y) pairs");
  const int64_t h = image.size(-2);
  const int64_t w = image.size(-1);

  auto xy = coords.to(torch::kFloat64);
  // Continuous coordinate -> index coordinate (pixel i center at index i).
  auto u = xy.select(-1, 0) - 0.5;
  auto v = xy.select(-1, 1) - 0.5;
  // Snap coordinates a hair away from an exact pixel center onto it, so an
  // identity-like warp reproduces pixel values bit-exactly despite the
  // ~1e-16 noise in a solved homography.
  auto snap_to_grid = [](const torch::Tensor& t) {
    auto nearest = torch::round(t);
    return torch::where((t - nearest).abs() < 1e-9, nearest, t);
  };
  u = snap_to_grid(u);
  v = snap_to_grid(v);
  auto x0 = torch::floor(u);
  auto y0 = torch::floor(v);
  auto fx = (u - x0).to(image.dtype());
  auto fy = (v - y0).to(image.dtype());
  auto x0i = x0.to(torch::kLong).clamp(0, w - 1);
  auto x1i = (x0 + 1).to(torch::kLong).clamp(0, w - 1);
  auto y0i = y0.to(torch::kLong).clamp(0, h - 1);
  auto y1i = (y0 + 1).to(torch::kLong).clamp(0, h - 1);

  // Flatten spatial dims and gather rows of (..., C, H*W).
  auto flat = image.flatten(-2);  // (...,C,HW)
  auto gather_at = [&](const torch::Tensor& yi, const torch::Tensor& xi) {
    auto idx = (yi * w + xi).reshape({-1});     // (N,)
    auto grabbed = flat.index_select(-1, idx);  // (...,C,N)
    // N unfolds back into the coords' spatial shape.
    std::vector<int64_t> out_shape(flat.sizes().begin(), flat.sizes().end() - 1);
    for (int64_t d = 0; d < coords.dim() - 1; ++d) out_shape.push_back(coords.size(d));
    return grabbed.reshape(out_shape);
  };
  auto i00 = gather_at(y0i, x0i);
  auto i10 = gather_at(y0i, x1i);
  auto i01 = gather_at(y1i, x0i);
  auto i11 = gather_at(y1i, x1i);

  auto top = i00 * (1.0 - fx) + i10 * fx;
  auto bot = i01 * (1.0 - fx) + i11 * fx;
  return top * (1.0 - fy) + bot * fy;
}

namespace {

// Continuous pixel-center coordinates mapped through H, as an (h, w, 2)
// float64 tensor.
torch::Tensor warped_center_grid(const Homography& h_map, int64_t height,
                                 int64_t width, double x_offset,
                                 double y_offset) {
  auto ys = torch::arange(height, torch::kFloat64) + (0.5 + y_offset);
  auto xs = torch::arange(width, torch::kFloat64) + (0.5 + x_offset);
  auto grid_y = ys.reshape({height, 1}).expand({height, width});
  auto grid_x = xs.reshape({1, width}).expand({height, width});
  const Eigen::Matrix3d& m = h_map.matrix();
  auto den = m(2, 0) * grid_x + m(2, 1) * grid_y + m(2, 2);
  auto px = (m(0, 0) * grid_x + m(0, 1) * grid_y + m(0, 2)) / den;
  auto py = (m(1, 0) * grid_x + m(1, 1) * grid_y + m(1, 2)) / den;
  return torch::stack({px, py}, -1);
}

}  // namespace

torch::Tensor rectify_patch(const torch::Tensor& image, const Quad& quad,
                            int out_size) {
  if (image.dim() != 3) throw ContractError("image must be (C,H,W)");
  quad.validate();
  const Homography square_to_quad =
      quad_to_square_homography(quad, out_size).inverse();
  auto grid = warped_center_grid(square_to_quad, out_size, out_size, 0.0, 0.0);
  return bilinear_sample(image, grid);
}

torch::Tensor paste_patch(const torch::Tensor& scene,
                          const torch::Tensor& patch, const Quad& quad) {
  if (scene.dim() != 3 || patch.dim() != 3) {
    throw ContractError("scene and patch must be (C,H,W)");
  }
  if (patch.size(-1) != patch.size(-2)) throw ContractError("patch must be square");
  quad.validate();
  const int64_t sh = scene.size(-2), sw = scene.size(-1);
  const int64_t ps = patch.size(-1);

  const auto bb = quad.bounding_box();
  const int64_t x_lo = std::clamp<int64_t>(
      static_cast<int64_t>(std::floor(bb[0])) - 1, 0, sw);
  const int64_t y_lo = std::clamp<int64_t>(
      static_cast<int64_t>(std::floor(bb[1])) - 1, 0, sh);
  const int64_t x_hi = std::clamp<int64_t>(
      static_cast<int64_t>(std::ceil(bb[2])) + 1, 0, sw);
  const int64_t y_hi = std::clamp<int64_t>(
      static_cast<int64_t>(std::ceil(bb[3])) + 1, 0, sh);
  if (x_lo >= x_hi || y_lo >= y_hi) return scene;

  const int64_t bw = x_hi - x_lo, bh = y_hi - y_lo;
  const Homography quad_to_square = quad_to_square_homography(quad, ps);
  auto grid = warped_center_grid(quad_to_square, bh, bw,
                                 static_cast<double>(x_lo),
                                 static_cast<double>(y_lo));
  // Bounding-box pixels outside the quad can land near the warp's vanishing
  // line; tame them before sampling (their alpha is 0, so values are moot,
  // but inf/nan would still poison gradients).
  grid = grid.nan_to_num(0.0).clamp(-1.0, static_cast<double>(ps) + 1.0);
  auto sampled = bilinear_sample(patch, grid);  // (C,bh,bw)

  // Feathered alpha: signed interior distance to the quad boundary, clamped
  // to a 1-px ramp. Computed on scene pixel centers.
  auto ys = torch::arange(bh, torch::kFloat64) + (0.5 + y_lo);
  auto xs = torch::arange(bw, torch::kFloat64) + (0.5 + x_lo);
  auto py = ys.reshape({bh, 1}).expand({bh, bw});
  auto px = xs.reshape({1, bw}).expand({bh, bw});
  torch::Tensor dist;
  for (int i = 0; i < 4; ++i) {
    const Vec2 a = quad.vertex(i);
    const Vec2 b = quad.vertex((i + 1) % 4);
    const double len = std::hypot(b.x - a.x, b.y - a.y);
    auto d = ((b.x - a.x) * (py - a.y) - (b.y - a.y) * (px - a.x)) / len;
    dist = (i == 0) ? d : torch::minimum(dist, d);
  }
  auto alpha = dist.clamp(0.0, 1.0).to(scene.dtype()).unsqueeze(0);  // (1,bh,bw)

  auto region = scene.index({torch::indexing::Slice(),
                             torch::indexing::Slice(y_lo, y_hi),
                             torch::indexing::Slice(x_lo, x_hi)});
  auto blended = alpha * sampled + (1.0 - alpha) * region;
  // Outside the quad the scene must stay bit-identical, so select rather
  // than blend with a zero weight.
  auto composited = torch::where(alpha > 0.0, blended, region);

  auto out = scene.clone();
  out.index_put_({torch::indexing::Slice(),
                  torch::indexing::Slice(y_lo, y_hi),
                  torch::indexing::Slice(x_lo, x_hi)},
                 composited);
  return out;
}

}  // namespace stegotag
