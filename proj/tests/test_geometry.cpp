#include "test_util.hpp"

#include <cmath>

#include "stegotag/common.hpp"
#include "stegotag/geometry.hpp"

using namespace stegotag;

namespace {

Quad unit_square() {
  return Quad({Vec2{0, 0}, Vec2{1, 0}, Vec2{1, 1}, Vec2{0, 1}});
}

Quad square_at(double x0, double y0, double e) {
  return Quad({Vec2{x0, y0}, Vec2{x0 + e, y0}, Vec2{x0 + e, y0 + e}, Vec2{x0, y0 + e}});
}

// Independent point-in-quad predicate with a signed margin (positive margin
// means "at least that far inside").
bool inside_quad(const Quad& q, double x, double y, double margin) {
  for (int i = 0; i < 4; ++i) {
    Vec2 a = q.vertex(i), b = q.vertex((i + 1) % 4);
    double len = std::hypot(b.x - a.x, b.y - a.y);
    double d = ((b.x - a.x) * (y - a.y) - (b.y - a.y) * (x - a.x)) / len;
    if (d < margin) return false;
  }
  return true;
}

double psnr(const torch::Tensor& a, const torch::Tensor& b) {
  double mse = torch::mean(torch::square(a - b)).item<double>();
  return 10.0 * std::log10(1.0 / std::max(mse, 1e-300));
}

}  // namespace

TEST_SUITE_BEGIN("geometry");

TEST_CASE("quad predicates") {
  Quad q = unit_square();
  CHECK(q.is_convex());
  CHECK(q.area() == doctest::Approx(1.0));
  CHECK(q.centroid().x == doctest::Approx(0.5));
  CHECK(q.in_bounds(1, 1));
  CHECK(!q.in_bounds(0.5, 1));
  auto bb = square_at(3, 5, 2).bounding_box();
  CHECK(bb[0] == 3);
  CHECK(bb[1] == 5);
  CHECK(bb[2] == 5);
  CHECK(bb[3] == 7);

  // Counter-clockwise winding is rejected.
  Quad rev({Vec2{0, 0}, Vec2{0, 1}, Vec2{1, 1}, Vec2{1, 0}});
  CHECK(!rev.is_convex());
  CHECK_THROWS_AS(rev.validate(), GeometryError);
  // Collinear points make a degenerate quad.
  Quad flat({Vec2{0, 0}, Vec2{1, 0}, Vec2{2, 0}, Vec2{3, 0}});
  CHECK_THROWS_AS(flat.validate(), GeometryError);
}

TEST_CASE("quad tensor round trip") {
  RngStream rng(41);
  for (int i = 0; i < 20; ++i) {
    Quad q = sample_quad(rng, 512, {0.1, 0.4});
    Quad back = Quad::from_tensor(q.to_tensor());
    for (int k = 0; k < 4; ++k) {
      CHECK(back.vertex(k).x == q.vertex(k).x);
      CHECK(back.vertex(k).y == q.vertex(k).y);
    }
  }
  CHECK_THROWS_AS(Quad::from_tensor(torch::zeros({7})), ContractError);
}

TEST_CASE("sample_quad identity case is an axis-aligned grid square") {
  RngStream rng(42);
  for (int i = 0; i < 50; ++i) {
    Quad q = sample_quad(rng, 512, {0.1, 0.4}, /*shift_amplitude=*/0.0,
                         /*random_rotation=*/false);
    for (int k = 0; k < 4; ++k) {
      CHECK(q.vertex(k).x == std::floor(q.vertex(k).x));
      CHECK(q.vertex(k).y == std::floor(q.vertex(k).y));
    }
    CHECK(q.vertex(0).y == q.vertex(1).y);
    CHECK(q.vertex(1).x == q.vertex(2).x);
    double e = q.vertex(1).x - q.vertex(0).x;
    CHECK(e == q.vertex(2).y - q.vertex(1).y);
    CHECK(e >= 0.1 * 512 - 1);
    CHECK(e <= 0.4 * 512 + 1);
  }
}

TEST_CASE("default vertex shifts stay within 15% of the edge length") {
  // Fixed edge size so the bound is sharp: relative edge-vector deviations
  // are differences of two shifts, each at most 0.15 * e.
  RngStream rng(43);
  const int size = 1000;
  const double e = 100.0;  // edge_range (0.1, 0.1) at size 1000
  double max_dev = 0.0;
  for (int i = 0; i < 10000; ++i) {
    Quad q = sample_quad(rng, size, {0.1, 0.1}, 0.15, /*random_rotation=*/false);
    const Vec2 expected[4] = {{0, 0}, {e, 0}, {e, e}, {0, e}};
    for (int k = 0; k < 4; ++k) {
      Vec2 d0 = q.vertex(k), e0 = expected[k];
      Vec2 d1 = q.vertex((k + 1) % 4), e1 = expected[(k + 1) % 4];
      double dev_x = std::abs((d1.x - d0.x) - (e1.x - e0.x));
      double dev_y = std::abs((d1.y - d0.y) - (e1.y - e0.y));
      CHECK(dev_x <= 2 * 0.15 * e + 1e-9);
      CHECK(dev_y <= 2 * 0.15 * e + 1e-9);
      max_dev = std::max({max_dev, dev_x, dev_y});
    }
  }
  // The shift distribution actually exercises its range.
  CHECK(max_dev > 0.2 * e);
}

TEST_CASE("10k samples at 1024 are all convex and in-bounds") {
  RngStream rng(44);
  for (int i = 0; i < 10000; ++i) {
    Quad q = sample_quad(rng, 1024, {0.05, 0.3});
    CHECK(q.is_convex());
    CHECK(q.in_bounds(1024, 1024));
  }
}

TEST_CASE("sample_quad is deterministic per seed and validates inputs") {
  RngStream a(45), b(45);
  for (int i = 0; i < 10; ++i) {
    Quad qa = sample_quad(a, 512, {0.1, 0.4});
    Quad qb = sample_quad(b, 512, {0.1, 0.4});
    for (int k = 0; k < 4; ++k) {
      CHECK(qa.vertex(k).x == qb.vertex(k).x);
      CHECK(qa.vertex(k).y == qb.vertex(k).y);
    }
  }
  RngStream rng(46);
  CHECK_THROWS_AS(sample_quad(rng, 512, {0.0, 0.4}), ConfigError);
  CHECK_THROWS_AS(sample_quad(rng, 512, {0.4, 0.1}), ConfigError);
  CHECK_THROWS_AS(sample_quad(rng, 16, {0.1, 0.4}), ConfigError);
}

TEST_CASE("unit square to unit square is the identity homography") {
  Homography h = quad_to_square_homography(unit_square(), 1);
  Eigen::Matrix3d expect = Eigen::Matrix3d::Identity();
  CHECK((h.matrix() - expect).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("forward residual and inverse composition bounds") {
  RngStream rng(47);
  for (int i = 0; i < 200; ++i) {
    Quad q = sample_quad(rng, 800, {0.1, 0.5});
    const int s = 256;
    Homography h = quad_to_square_homography(q, s);
    CHECK(h.matrix()(2, 2) == 1.0);
    const Vec2 corners[4] = {{0, 0}, {double(s), 0}, {double(s), double(s)}, {0, double(s)}};
    for (int k = 0; k < 4; ++k) {
      Vec2 mapped = h.apply(q.vertex(k));
      CHECK(std::hypot(mapped.x - corners[k].x, mapped.y - corners[k].y) <= 1e-6);
    }
    Homography round = h * h.inverse();
    CHECK((round.matrix() - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff() <= 1e-9);
  }
}

TEST_CASE("degenerate quads are rejected") {
  Quad flat({Vec2{0, 0}, Vec2{1, 0}, Vec2{2, 0}, Vec2{3, 0}});
  CHECK_THROWS_AS(quad_to_square_homography(flat, 256), GeometryError);
}

TEST_CASE("homography composition matches sequential application") {
  RngStream rng(48);
  Quad q1 = sample_quad(rng, 500, {0.2, 0.5});
  Quad q2 = sample_quad(rng, 500, {0.2, 0.5});
  Homography a = quad_to_square_homography(q1, 128);
  Homography b = quad_to_square_homography(q2, 128).inverse();
  Homography ab = a * b;
  for (int i = 0; i < 20; ++i) {
    Vec2 p{rng.uniform(20, 100), rng.uniform(20, 100)};
    Vec2 via = a.apply(b.apply(p));
    Vec2 direct = ab.apply(p);
    CHECK(std::hypot(via.x - direct.x, via.y - direct.y) < 1e-8);
  }
}

TEST_CASE("bilinear_sample hits pixel centers and midpoints") {
  auto img = torch::rand({3, 6, 7}, torch::kFloat64);
  // Exact center of pixel (2, 3): the pixel value itself.
  auto at_center = bilinear_sample(img, torch::tensor({{3.5, 2.5}}, torch::kFloat64));
  for (int c = 0; c < 3; ++c) {
    CHECK(at_center[c][0].item<double>() == img[c][2][3].item<double>());
  }
  // Horizontal midpoint between (2,3) and (2,4): their average.
  auto mid = bilinear_sample(img, torch::tensor({{4.0, 2.5}}, torch::kFloat64));
  for (int c = 0; c < 3; ++c) {
    double expect = 0.5 * (img[c][2][3].item<double>() + img[c][2][4].item<double>());
    CHECK(mid[c][0].item<double>() == doctest::Approx(expect).epsilon(1e-12));
  }
}

TEST_CASE("rectify of a native axis-aligned quad is a bit-exact crop") {
  RngStream rng(49);
  auto img = torch::rand({3, 400, 400}, torch::kFloat32);
  Quad q = square_at(37, 59, 256);
  auto patch = rectify_patch(img, q, 256);
  auto crop = img.index({torch::indexing::Slice(),
                         torch::indexing::Slice(59, 59 + 256),
                         torch::indexing::Slice(37, 37 + 256)});
  CHECK(torch::equal(patch, crop));
}

TEST_CASE("rectify gradient matches finite differences") {
  RngStream rng(50);
  auto img = torch::rand({1, 12, 12}, torch::kFloat64).set_requires_grad(true);
  Quad q({Vec2{1.3, 1.1}, Vec2{10.2, 1.8}, Vec2{10.7, 10.1}, Vec2{1.9, 10.6}});
  auto patch = rectify_patch(img, q, 8);
  auto loss = patch.mean();
  loss.backward();
  auto grad = img.grad();

  int checked = 0;
  const double eps = 1e-6;
  for (int y = 0; y < 12 && checked < 12; ++y) {
    for (int x = 0; x < 12 && checked < 12; ++x) {
      double g = grad[0][y][x].item<double>();
      if (std::abs(g) < 1e-4) continue;
      auto probe = [&](double delta) {
        auto im2 = img.detach().clone();
        im2[0][y][x] += delta;
        return rectify_patch(im2, q, 8).mean().item<double>();
      };
      double fd = (probe(eps) - probe(-eps)) / (2 * eps);
      CHECK(std::abs(fd - g) / std::max(std::abs(g), 1e-12) <= 1e-3);
      checked++;
    }
  }
  CHECK(checked >= 10);
}

TEST_CASE("paste keeps the exterior bit-identical") {
  auto scene = torch::zeros({3, 64, 64});
  auto patch = torch::ones({3, 32, 32});
  Quad q({Vec2{10.3, 12.1}, Vec2{40.8, 14.2}, Vec2{42.5, 44.9}, Vec2{12.2, 41.7}});
  auto out = paste_patch(scene, patch, q);
  int outside = 0;
  for (int y = 0; y < 64; ++y) {
    for (int x = 0; x < 64; ++x) {
      if (!inside_quad(q, x + 0.5, y + 0.5, 0.0)) {
        for (int c = 0; c < 3; ++c) CHECK(out[c][y][x].item<float>() == 0.0f);
        outside++;
      }
    }
  }
  CHECK(outside > 2000);
  // Deep interior is fully replaced.
  CHECK(out[0][28][26].item<float>() == 1.0f);
}

TEST_CASE("rectify/paste round trip: exterior exact, interior high fidelity") {
  RngStream rng(51);
  for (int trial = 0; trial < 5; ++trial) {
    // Band-limited texture, a stand-in for natural photographs (white noise
    // cannot survive any double resampling and is not what markers live on).
    auto low = torch::rand({1, 3, 50, 50}, torch::kFloat32);
    auto blurred =
        torch::nn::functional::interpolate(
            low, torch::nn::functional::InterpolateFuncOptions()
                     .size(std::vector<int64_t>{400, 400})
                     .mode(torch::kBicubic)
                     .align_corners(false))
            .squeeze(0)
            .clamp(0.0, 1.0);
    Quad q = sample_quad(rng, 400, {0.3, 0.5});
    auto patch = rectify_patch(blurred, q, 256);
    auto out = paste_patch(blurred, patch, q);

    torch::Tensor ext_mask = torch::zeros({400, 400}, torch::kBool);
    torch::Tensor int_mask = torch::zeros({400, 400}, torch::kBool);
    auto em = ext_mask.accessor<bool, 2>();
    auto im = int_mask.accessor<bool, 2>();
    for (int y = 0; y < 400; ++y) {
      for (int x = 0; x < 400; ++x) {
        if (!inside_quad(q, x + 0.5, y + 0.5, 0.0)) em[y][x] = true;
        if (inside_quad(q, x + 0.5, y + 0.5, 2.0)) im[y][x] = true;
      }
    }
    auto ext_diff = (out - blurred).abs().amax(0).masked_select(ext_mask);
    CHECK(ext_diff.max().item<float>() == 0.0f);
    auto a = blurred.masked_select(int_mask.unsqueeze(0));
    auto b = out.masked_select(int_mask.unsqueeze(0));
    CHECK(psnr(a, b) >= 35.0);
  }
}

TEST_CASE("paste gradient w.r.t. patch matches finite differences") {
  RngStream rng(52);
  auto scene = torch::rand({1, 16, 16}, torch::kFloat64);
  auto patch = torch::rand({1, 8, 8}, torch::kFloat64).set_requires_grad(true);
  auto weights = torch::rand({1, 16, 16}, torch::kFloat64);
  Quad q({Vec2{2.4, 2.2}, Vec2{13.6, 2.9}, Vec2{13.1, 13.7}, Vec2{2.8, 12.9}});

  auto loss = (paste_patch(scene, patch, q) * weights).sum();
  loss.backward();
  auto grad = patch.grad();

  int checked = 0;
  const double eps = 1e-6;
  for (int y = 0; y < 8 && checked < 12; ++y) {
    for (int x = 0; x < 8 && checked < 12; ++x) {
      double g = grad[0][y][x].item<double>();
      if (std::abs(g) < 1e-3) continue;
      auto probe = [&](double delta) {
        auto p2 = patch.detach().clone();
        p2[0][y][x] += delta;
        return (paste_patch(scene, p2, q) * weights).sum().item<double>();
      };
      double fd = (probe(eps) - probe(-eps)) / (2 * eps);
      CHECK(std::abs(fd - g) / std::max(std::abs(g), 1e-12) <= 1e-3);
      checked++;
    }
  }
  CHECK(checked >= 10);
}

TEST_SUITE_END();
