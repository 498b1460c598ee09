#pragma once

#include <torch/torch.h>

namespace stegotag {

// Channel-first RGB tensors in [0,1], shape (..., 3, H, W). All conversions
// are plain linear maps (plus the fixed chroma offset for YCbCr), so autograd
// flows through them.

/// BT.601 analog YUV. Y in [0,1]; U, V signed and zero for gray inputs.
torch::Tensor rgb_to_yuv(const torch::Tensor& rgb);
torch::Tensor yuv_to_rgb(const torch::Tensor& yuv);

/// JFIF full-range YCbCr with all three channels in [0,1]; gray maps to
/// Cb = Cr = 0.5. This is the transform JPEG applies before the DCT.
torch::Tensor rgb_to_ycbcr(const torch::Tensor& rgb);
torch::Tensor ycbcr_to_rgb(const torch::Tensor& ycbcr);

}  // namespace stegotag
