#include "stegotag/synthcorpus.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "stegotag/image_io.hpp"

namespace stegotag {
namespace {

namespace F = torch::nn::functional;

// Fill (c, gh, gw) with standard normals drawn from the stream. Grids are
// small (<= 64^2), so the scalar loop is cheap.
torch::Tensor normal_grid(RngStream& rng, int64_t c, int64_t gh, int64_t gw) {
  auto t = torch::empty({c, gh, gw}, torch::kFloat32);
  auto flat = t.flatten();  // view of the contiguous buffer
  auto a = flat.accessor<float, 1>();
  for (int64_t i = 0; i < t.numel(); ++i) {
    a[i] = static_cast<float>(rng.normal());
  }
  return t;
}

torch::Tensor upsample(const torch::Tensor& grid, int h, int w) {
  return F::interpolate(grid.unsqueeze(0),
                        F::InterpolateFuncOptions()
                            .size(std::vector<int64_t>{h, w})
                            .mode(torch::kBicubic)
                            .align_corners(false))
      .squeeze(0);
}

// Rescale each channel jointly so the image spans roughly [lo, hi].
torch::Tensor normalize_span(const torch::Tensor& x, double lo, double hi) {
  const double mn = x.min().item<double>();
  const double mx = x.max().item<double>();
  if (mx - mn < 1e-8) return torch::full_like(x, 0.5 * (lo + hi));
  return (x - mn) / (mx - mn) * (hi - lo) + lo;
}

torch::Tensor random_color(RngStream& rng) {
  return torch::tensor({static_cast<float>(rng.uniform()),
                        static_cast<float>(rng.uniform()),
                        static_cast<float>(rng.uniform())})
      .reshape({3, 1, 1});
}

// Map a scalar field in [0,1] onto a two-color gradient.
torch::Tensor colorize(const torch::Tensor& field, RngStream& rng) {
  auto c0 = random_color(rng);
  auto c1 = random_color(rng);
  return c0 + (c1 - c0) * field.unsqueeze(0);
}

struct Axes {
  torch::Tensor xs;  // (1, w) pixel centers
  torch::Tensor ys;  // (h, 1)
};

Axes axes(int h, int w) {
  return {torch::arange(w, torch::kFloat32).reshape({1, w}) + 0.5f,
          torch::arange(h, torch::kFloat32).reshape({h, 1}) + 0.5f};
}

torch::Tensor smooth_field(RngStream& rng, int h, int w) {
  const int64_t g = rng.uniform_int(3, 8);
  return normalize_span(upsample(normal_grid(rng, 3, g, g), h, w), 0.05, 0.95);
}

torch::Tensor fractal_noise(RngStream& rng, int h, int w) {
  auto acc = torch::zeros({1, h, w});
  double amp = 1.0;
  for (int64_t g : {4, 8, 16, 32, 64}) {
    acc = acc + amp * upsample(normal_grid(rng, 1, g, g), h, w);
    amp *= rng.uniform(0.4, 0.7);
  }
  return colorize(normalize_span(acc.squeeze(0), 0.0, 1.0), rng);
}

torch::Tensor stripes(RngStream& rng, int h, int w) {
  auto ax = axes(h, w);
  const double theta = rng.uniform(0.0, M_PI);
  const double freq = rng.uniform(0.02, 0.25);
  const double phase = rng.uniform(0.0, 2.0 * M_PI);
  auto coord = std::cos(theta) * ax.xs + std::sin(theta) * ax.ys;
  // A smooth warp bends the stripes so they read as fabric, not a test card.
  const int64_t g = rng.uniform_int(3, 6);
  auto warp = upsample(normal_grid(rng, 1, g, g), h, w).squeeze(0) *
              rng.uniform(0.0, 12.0);
  auto field = 0.5 + 0.5 * torch::sin(freq * (coord + warp) + phase);
  if (rng.bernoulli(0.4)) field = field.square();  // sharpen into bands
  return colorize(field, rng);
}

torch::Tensor checker(RngStream& rng, int h, int w) {
  const int64_t tile = rng.uniform_int(16, 64);
  const int64_t gh = (h + tile - 1) / tile, gw = (w + tile - 1) / tile;
  auto parity = torch::empty({gh, gw}, torch::kFloat32);
  {
    auto a = parity.accessor<float, 2>();
    for (int64_t r = 0; r < gh; ++r) {
      for (int64_t c = 0; c < gw; ++c) {
        const double jitter = 0.12 * rng.normal();
        a[r][c] = static_cast<float>(
            std::clamp(((r + c) % 2 == 0 ? 0.15 : 0.85) + jitter, 0.0, 1.0));
      }
    }
  }
  auto field = parity.repeat_interleave(tile, 0).repeat_interleave(tile, 1);
  field = field.index({torch::indexing::Slice(0, h),
                       torch::indexing::Slice(0, w)});
  return colorize(field, rng);
}

torch::Tensor cells(RngStream& rng, int h, int w) {
  const int64_t sites = rng.uniform_int(8, 40);
  auto ax = axes(h, w);
  auto best = torch::full({h, w}, 1e30f);
  auto which = torch::zeros({h, w}, torch::kLong);
  for (int64_t s = 0; s < sites; ++s) {
    const double cx = rng.uniform(0.0, w);
    const double cy = rng.uniform(0.0, h);
    auto d = (ax.xs - cx).square() + (ax.ys - cy).square();
    which = torch::where(d < best, torch::full_like(which, s), which);
    best = torch::minimum(best, d);
  }
  auto palette = torch::empty({sites, 3}, torch::kFloat32);
  {
    auto a = palette.accessor<float, 2>();
    for (int64_t s = 0; s < sites; ++s) {
      for (int64_t c = 0; c < 3; ++c) a[s][c] = static_cast<float>(rng.uniform());
    }
  }
  auto img = palette.index_select(0, which.flatten())
                 .reshape({h, w, 3})
                 .permute({2, 0, 1})
                 .contiguous();
  // Shade by distance to the site so cells get a soft 3D look.
  auto shade = (-best / (0.02f * static_cast<float>(h * w))).exp() * 0.25f;
  return (img * (0.85f + shade.unsqueeze(0))).clamp(0, 1);
}

torch::Tensor speckle(RngStream& rng, int h, int w) {
  auto base = random_color(rng) * 0.6 + 0.2;
  const int64_t g = std::min<int64_t>(64, std::min(h, w));
  auto grain = upsample(normal_grid(rng, 3, g * 2, g * 2), h, w) *
               rng.uniform(0.05, 0.2);
  auto slow = upsample(normal_grid(rng, 3, 4, 4), h, w) * 0.1;
  return (base + grain + slow).clamp(0, 1);
}

torch::Tensor rings(RngStream& rng, int h, int w) {
  auto ax = axes(h, w);
  const double cx = rng.uniform(-0.3 * w, 1.3 * w);
  const double cy = rng.uniform(-0.3 * h, 1.3 * h);
  const double freq = rng.uniform(0.05, 0.4);
  auto r = ((ax.xs - cx).square() + (ax.ys - cy).square()).sqrt();
  const int64_t g = rng.uniform_int(3, 6);
  auto warp = upsample(normal_grid(rng, 1, g, g), h, w).squeeze(0) *
              rng.uniform(0.0, 10.0);
  auto field = 0.5 + 0.5 * torch::sin(freq * (r + warp));
  return colorize(field, rng);
}

torch::Tensor collage(RngStream& rng, int h, int w) {
  auto img = smooth_field(rng, h, w);
  auto ax = axes(h, w);
  const int64_t n = rng.uniform_int(8, 24);
  for (int64_t i = 0; i < n; ++i) {
    auto color = random_color(rng);
    const double alpha = rng.uniform(0.5, 1.0);
    if (rng.bernoulli(0.5)) {
      const int64_t x0 = rng.uniform_int(0, w - 2);
      const int64_t y0 = rng.uniform_int(0, h - 2);
      const int64_t x1 =
          std::min<int64_t>(w, x0 + rng.uniform_int(4, std::max<int64_t>(5, w / 2)));
      const int64_t y1 =
          std::min<int64_t>(h, y0 + rng.uniform_int(4, std::max<int64_t>(5, h / 2)));
      auto view = img.index({torch::indexing::Slice(),
                             torch::indexing::Slice(y0, y1),
                             torch::indexing::Slice(x0, x1)});
      view.copy_(view * (1.0 - alpha) + color * alpha);
    } else {
      const double cx = rng.uniform(0.0, w);
      const double cy = rng.uniform(0.0, h);
      const double rad = rng.uniform(0.03, 0.25) * std::min(h, w);
      auto mask = (((ax.xs - cx).square() + (ax.ys - cy).square()) <
                   static_cast<float>(rad * rad))
                      .to(torch::kFloat32)
                      .unsqueeze(0);
      img = img * (1.0 - alpha * mask) + color * (alpha * mask);
    }
  }
  return img.clamp(0, 1);
}

}  // namespace

torch::Tensor synthesize_texture(RngStream& rng, int height, int width) {
  if (height < 8 || width < 8) throw ContractError("texture size too small");
  const int64_t style = rng.uniform_int(0, 7);
  torch::Tensor img;
  switch (style) {
    case 0: img = smooth_field(rng, height, width); break;
    case 1: img = fractal_noise(rng, height, width); break;
    case 2: img = stripes(rng, height, width); break;
    case 3: img = checker(rng, height, width); break;
    case 4: img = cells(rng, height, width); break;
    case 5: img = speckle(rng, height, width); break;
    case 6: img = rings(rng, height, width); break;
    default: img = collage(rng, height, width); break;
  }
  return img.to(torch::kFloat32).clamp(0, 1).contiguous();
}

void write_synthetic_corpus(const std::filesystem::path& dir, int count,
                            uint64_t seed) {
  if (count < 0) throw ContractError("corpus count must be >= 0");
  std::filesystem::create_directories(dir);
  auto root = make_stream(seed, stream_tag::kSynthCorpus);
  for (int i = 0; i < count; ++i) {
    auto rng = root.child(static_cast<uint64_t>(i));
    const int h = static_cast<int>(rng.uniform_int(550, 700));
    const int w = static_cast<int>(rng.uniform_int(550, 700));
    auto img = synthesize_texture(rng, h, w);
    char name[32];
    std::snprintf(name, sizeof(name), "synth_%04d.png", i);
    save_png_rgb(dir / name, img);
  }
}

}  // namespace stegotag
