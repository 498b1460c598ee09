#pragma once

#include <torch/torch.h>

#include <vector>

#include "stegotag/common.hpp"

namespace stegotag {

/// Print-stage perturbation ranges. Defaults are the full working values;
/// identity() zeroes everything for bit-exact pass-through.
struct PrinterNoiseConfig {
  double hue_range = 0.1;         // fraction of a full hue turn
  double brightness_range = 0.1;  // multiplicative, +/- fraction
  double contrast_range = 0.15;
  double saturation_range = 0.15;
  double specular_prob = 0.5;
  double specular_size_lo = 0.1;  // fraction of image width
  double specular_size_hi = 0.6;
  double specular_intensity_lo = 0.1;
  double specular_intensity_hi = 0.6;

  void validate() const;
  static PrinterNoiseConfig identity();
};

/// Capture-stage perturbation ranges.
struct CameraNoiseConfig {
  double hue_range = 0.1;
  double brightness_range = 0.1;
  double contrast_range = 0.15;
  double saturation_range = 0.15;
  std::vector<int> blur_kernels = {1, 3, 5, 7};
  double gauss_sigma_max = 0.2;
  int jpeg_q_lo = 25;  // quality 100 disables the JPEG surrogate
  int jpeg_q_hi = 95;

  void validate() const;
  static CameraNoiseConfig identity();
};

/// Smooth clamp to [0,1]: exact identity on [width, 1-width], tanh tails
/// outside. C1 everywhere, so saturated pixels keep a live gradient.
torch::Tensor soft_clamp01(const torch::Tensor& x, double width = 1e-3);

/// Differentiable JPEG surrogate: YCbCr, blockwise 8x8 DCT, quantization by
/// the Annex K tables scaled for `quality`, cubic soft rounding, inverse
/// path. quality == 100 returns the input untouched.
torch::Tensor differentiable_jpeg(const torch::Tensor& rgb, int quality);

/// Print-stage noise on a (3,H,W) code patch in [0,1].
torch::Tensor printer_noise(const torch::Tensor& code, RngStream& rng,
                            const PrinterNoiseConfig& cfg);

/// Capture-stage noise on a (3,H,W) scene in [0,1].
torch::Tensor camera_noise(const torch::Tensor& scene, RngStream& rng,
                           const CameraNoiseConfig& cfg);

}  // namespace stegotag
