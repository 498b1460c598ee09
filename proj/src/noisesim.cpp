#include "stegotag/noisesim.hpp"

#include <cmath>

#include "stegotag/color.hpp"

namespace stegotag {

namespace {

void check_rgb(const torch::Tensor& x) {
  if (x.dim() != 3 || x.size(0) != 3) throw ContractError("expected a (3,H,W) image");
}

torch::Tensor luma(const torch::Tensor& x) {
  return 0.299 * x[0] + 0.587 * x[1] + 0.114 * x[2];
}

// Shared color jitter: brightness -> contrast -> saturation -> hue, each
// skipped entirely when its range is zero so the inactive path stays
// bit-exact. Draw order is fixed for determinism.
torch::Tensor color_shift(torch::Tensor x, RngStream& rng, double brightness,
                          double contrast, double saturation, double hue) {
  if (brightness > 0.0) {
    x = x * rng.uniform(1.0 - brightness, 1.0 + brightness);
  }
  if (contrast > 0.0) {
    const double f = rng.uniform(1.0 - contrast, 1.0 + contrast);
    auto m = luma(x).mean();
    x = (x - m) * f + m;
  }
  if (saturation > 0.0) {
    const double f = rng.uniform(1.0 - saturation, 1.0 + saturation);
    auto g = luma(x).unsqueeze(0);
    x = g + (x - g) * f;
  }
  if (hue > 0.0) {
    // Hue shift as a rotation of the chroma plane; linear, hence smooth.
    const double theta = rng.uniform(-hue, hue) * 2.0 * M_PI;
    auto yuv = rgb_to_yuv(x);
    const double c = std::cos(theta), s = std::sin(theta);
    auto u = yuv[1] * c - yuv[2] * s;
    auto v = yuv[1] * s + yuv[2] * c;
    x = yuv_to_rgb(torch::stack({yuv[0], u, v}, 0));
  }
  return x;
}

bool color_active(double b, double c, double s, double h) {
  return b > 0.0 || c > 0.0 || s > 0.0 || h > 0.0;
}

torch::Tensor gaussian_blur(const torch::Tensor& x, int k) {
  // sigma follows the common kernel-size heuristic.
  const double sigma = 0.3 * ((k - 1) * 0.5 - 1.0) + 0.8;
  auto half = torch::arange(k, torch::kFloat64) - (k - 1) / 2.0;
  auto kern = torch::exp(-half.square() / (2.0 * sigma * sigma));
  kern = (kern / kern.sum()).to(x.dtype());

  namespace F = torch::nn::functional;
  const int p = k / 2;
  auto img = x.unsqueeze(0);
  img = F::pad(img, F::PadFuncOptions({p, p, p, p}).mode(torch::kReflect));
  auto kx = kern.reshape({1, 1, 1, k}).expand({3, 1, 1, k});
  auto ky = kern.reshape({1, 1, k, 1}).expand({3, 1, k, 1});
  img = F::conv2d(img, kx, F::Conv2dFuncOptions().groups(3));
  img = F::conv2d(img, ky, F::Conv2dFuncOptions().groups(3));
  return img.squeeze(0);
}

// Annex K quantization tables.
const int kLumaTable[64] = {
    16, 11, 10, 16, 24,  40,  51,  61,   //
    12, 12, 14, 19, 26,  58,  60,  55,   //
    14, 13, 16, 24, 40,  57,  69,  56,   //
    14, 17, 22, 29, 51,  87,  80,  62,   //
    18, 22, 37, 56, 68,  109, 103, 77,   //
    24, 35, 55, 64, 81,  104, 113, 92,   //
    49, 64, 78, 87, 103, 121, 120, 101,  //
    72, 92, 95, 98, 112, 100, 103, 99};
const int kChromaTable[64] = {
    17, 18, 24, 47, 99, 99, 99, 99,  //
    18, 21, 26, 66, 99, 99, 99, 99,  //
    24, 26, 56, 99, 99, 99, 99, 99,  //
    47, 66, 99, 99, 99, 99, 99, 99,  //
    99, 99, 99, 99, 99, 99, 99, 99,  //
    99, 99, 99, 99, 99, 99, 99, 99,  //
    99, 99, 99, 99, 99, 99, 99, 99,  //
    99, 99, 99, 99, 99, 99, 99, 99};

torch::Tensor scaled_table(const int* base, int quality, torch::Dtype dtype) {
  const int s = quality < 50 ? 5000 / quality : 200 - 2 * quality;
  auto t = torch::empty({8, 8}, torch::kFloat64);
  auto a = t.accessor<double, 2>();
  for (int i = 0; i < 64; ++i) {
    int v = (base[i] * s + 50) / 100;
    a[i / 8][i % 8] = std::clamp(v, 1, 255);
  }
  return t.to(dtype);
}

torch::Tensor dct_matrix(torch::Dtype dtype) {
  auto d = torch::empty({8, 8}, torch::kFloat64);
  auto a = d.accessor<double, 2>();
  for (int k = 0; k < 8; ++k) {
    const double ck = k == 0 ? 1.0 / std::sqrt(2.0) : 1.0;
    for (int n = 0; n < 8; ++n) {
      a[k][n] = ck * 0.5 * std::cos(M_PI * (2 * n + 1) * k / 16.0);
    }
  }
  return d.to(dtype);
}

// round(x) + (x - round(x))^3: zero-gradient hard round plus a cubic term
// that carries the derivative.
torch::Tensor soft_round(const torch::Tensor& x) {
  auto r = torch::round(x);
  return r + (x - r).pow(3);
}

}  // namespace

void PrinterNoiseConfig::validate() const {
  if (hue_range < 0 || brightness_range < 0 || contrast_range < 0 ||
      saturation_range < 0) {
    throw ConfigError("printer noise ranges must be non-negative");
  }
  if (specular_prob < 0 || specular_prob > 1) {
    throw ConfigError("specular_prob must lie in [0,1]");
  }
  if (specular_size_lo < 0 || specular_size_hi < specular_size_lo) {
    throw ConfigError("specular size range is inverted or negative");
  }
  if (specular_intensity_lo < 0 || specular_intensity_hi > 1 ||
      specular_intensity_hi < specular_intensity_lo) {
    throw ConfigError("specular intensity must stay within [0,1]");
  }
}

PrinterNoiseConfig PrinterNoiseConfig::identity() {
  PrinterNoiseConfig cfg;
  cfg.hue_range = cfg.brightness_range = cfg.contrast_range =
      cfg.saturation_range = 0.0;
  cfg.specular_prob = 0.0;
  cfg.specular_intensity_lo = cfg.specular_intensity_hi = 0.0;
  return cfg;
}

void CameraNoiseConfig::validate() const {
  if (hue_range < 0 || brightness_range < 0 || contrast_range < 0 ||
      saturation_range < 0) {
    throw ConfigError("camera noise ranges must be non-negative");
  }
  if (blur_kernels.empty()) throw ConfigError("blur_kernels must not be empty");
  for (int k : blur_kernels) {
    if (k < 1 || k % 2 == 0) throw ConfigError("blur kernels must be odd and >= 1");
  }
  if (gauss_sigma_max < 0 || gauss_sigma_max > 1) {
    throw ConfigError("gauss_sigma_max must lie in [0,1]");
  }
  if (jpeg_q_lo < 1 || jpeg_q_hi > 100 || jpeg_q_hi < jpeg_q_lo) {
    throw ConfigError("jpeg quality range must satisfy 1 <= lo <= hi <= 100");
  }
}

CameraNoiseConfig CameraNoiseConfig::identity() {
  CameraNoiseConfig cfg;
  cfg.hue_range = cfg.brightness_range = cfg.contrast_range =
      cfg.saturation_range = 0.0;
  cfg.blur_kernels = {1};
  cfg.gauss_sigma_max = 0.0;
  cfg.jpeg_q_lo = cfg.jpeg_q_hi = 100;
  return cfg;
}

torch::Tensor soft_clamp01(const torch::Tensor& x, double width) {
  if (width <= 0.0) throw ConfigError("soft clamp width must be positive");
  const double w = width;
  auto low = w * torch::tanh((x - w) / w) + w;
  auto high = (1.0 - w) + w * torch::tanh((x - (1.0 - w)) / w);
  return torch::where(x < w, low, torch::where(x > 1.0 - w, high, x));
}

torch::Tensor differentiable_jpeg(const torch::Tensor& rgb, int quality) {
  check_rgb(rgb);
  if (quality < 1 || quality > 100) throw ConfigError("quality must be 1..100");
  if (quality == 100) return rgb;

  const auto dtype = rgb.scalar_type();
  const int64_t h = rgb.size(1), w = rgb.size(2);
  const int64_t hp = (h + 7) / 8 * 8, wp = (w + 7) / 8 * 8;

  auto x = rgb_to_ycbcr(rgb) * 255.0 - 128.0;
  if (hp != h || wp != w) {
    namespace F = torch::nn::functional;
    x = F::pad(x.unsqueeze(0), F::PadFuncOptions({0, wp - w, 0, hp - h})
                                   .mode(torch::kReflect))
            .squeeze(0);
  }

  // (3, hp, wp) -> (3, hb, wb, 8, 8) blocks.
  auto blocks = x.reshape({3, hp / 8, 8, wp / 8, 8}).permute({0, 1, 3, 2, 4});
  auto d = dct_matrix(dtype);
  auto coeffs = torch::matmul(d, torch::matmul(blocks, d.t()));

  auto qt = torch::stack({scaled_table(kLumaTable, quality, dtype),
                          scaled_table(kChromaTable, quality, dtype),
                          scaled_table(kChromaTable, quality, dtype)},
                         0)
                .reshape({3, 1, 1, 8, 8});
  auto quantized = soft_round(coeffs / qt) * qt;

  auto back = torch::matmul(d.t(), torch::matmul(quantized, d));
  auto img = back.permute({0, 1, 3, 2, 4}).reshape({3, hp, wp});
  img = img.index({torch::indexing::Slice(), torch::indexing::Slice(0, h),
                   torch::indexing::Slice(0, w)});
  return ycbcr_to_rgb((img + 128.0) / 255.0);
}

torch::Tensor printer_noise(const torch::Tensor& code, RngStream& rng,
                            const PrinterNoiseConfig& cfg) {
  check_rgb(code);
  cfg.validate();
  const bool spec_active = cfg.specular_prob > 0.0 &&
                           cfg.specular_intensity_hi > 0.0 &&
                           cfg.specular_size_hi > 0.0;
  const bool colors = color_active(cfg.brightness_range, cfg.contrast_range,
                                   cfg.saturation_range, cfg.hue_range);
  if (!colors && !spec_active) return code;  // identity configuration

  auto x = color_shift(code, rng, cfg.brightness_range, cfg.contrast_range,
                       cfg.saturation_range, cfg.hue_range);
  if (spec_active && rng.bernoulli(cfg.specular_prob)) {
    const int64_t h = code.size(1), w = code.size(2);
    const double cx = rng.uniform(0.0, static_cast<double>(w));
    const double cy = rng.uniform(0.0, static_cast<double>(h));
    const double size =
        rng.uniform(cfg.specular_size_lo, cfg.specular_size_hi) * w;
    const double aspect = rng.uniform(0.3, 1.0);
    const double phi = rng.uniform(0.0, M_PI);
    const double intensity =
        rng.uniform(cfg.specular_intensity_lo, cfg.specular_intensity_hi);
    const double sa = std::max(size / 4.0, 0.5);
    const double sb = std::max(sa * aspect, 0.5);

    auto ys = (torch::arange(h, torch::kFloat64) + 0.5 - cy).reshape({h, 1});
    auto xs = (torch::arange(w, torch::kFloat64) + 0.5 - cx).reshape({1, w});
    const double cp = std::cos(phi), sp = std::sin(phi);
    auto u = cp * xs + sp * ys;
    auto v = -sp * xs + cp * ys;
    auto q = (u / sa).square() + (v / sb).square();
    auto blob = (intensity * torch::exp(-0.5 * q)).to(x.dtype()).unsqueeze(0);
    x = x + blob;
  }
  return soft_clamp01(x);
}

torch::Tensor camera_noise(const torch::Tensor& scene, RngStream& rng,
                           const CameraNoiseConfig& cfg) {
  check_rgb(scene);
  cfg.validate();
  const bool colors = color_active(cfg.brightness_range, cfg.contrast_range,
                                   cfg.saturation_range, cfg.hue_range);
  bool blur_possible = false;
  for (int k : cfg.blur_kernels) blur_possible = blur_possible || k > 1;
  const bool noise_possible = cfg.gauss_sigma_max > 0.0;
  const bool jpeg_possible = cfg.jpeg_q_lo < 100;
  if (!colors && !blur_possible && !noise_possible && !jpeg_possible) {
    return scene;  // identity configuration
  }

  auto x = color_shift(scene, rng, cfg.brightness_range, cfg.contrast_range,
                       cfg.saturation_range, cfg.hue_range);
  if (blur_possible) {
    const int k = cfg.blur_kernels[static_cast<size_t>(
        rng.uniform_int(0, static_cast<int64_t>(cfg.blur_kernels.size()) - 1))];
    if (k > 1) x = gaussian_blur(x, k);
  }
  if (noise_possible) {
    const double sigma = rng.uniform(0.0, cfg.gauss_sigma_max);
    auto field = torch::empty_like(x, x.options().requires_grad(false));
    auto flat = field.flatten();
    const int64_t n = flat.numel();
    if (x.scalar_type() == torch::kFloat64) {
      auto a = flat.accessor<double, 1>();
      for (int64_t i = 0; i < n; ++i) a[i] = sigma * rng.normal();
    } else {
      auto a = flat.accessor<float, 1>();
      for (int64_t i = 0; i < n; ++i) a[i] = static_cast<float>(sigma * rng.normal());
    }
    x = x + field.reshape(x.sizes());
  }
  if (jpeg_possible) {
    const int q = static_cast<int>(rng.uniform_int(cfg.jpeg_q_lo, cfg.jpeg_q_hi));
    if (q < 100) x = differentiable_jpeg(x, q);
  }
  return soft_clamp01(x);
}

}  // namespace stegotag
