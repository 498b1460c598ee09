#include "stegotag/color.hpp"

#include "stegotag/common.hpp"

namespace stegotag {

namespace {

torch::Tensor apply_matrix(const torch::Tensor& img, const double* m,
                           const double* pre_offset = nullptr,
                           const double* post_offset = nullptr) {
  if (img.dim() < 3 || img.size(-3) != 3) {
    throw ContractError("expected a (...,3,H,W) tensor");
  }
  auto opts = torch::TensorOptions().dtype(img.dtype());
  auto mat = torch::from_blob(const_cast<double*>(m), {3, 3},
                              torch::kFloat64)
                 .to(opts.dtype())
                 .clone();
  auto x = img;
  if (pre_offset) {
    auto off = torch::tensor({pre_offset[0], pre_offset[1], pre_offset[2]},
                             torch::kFloat64)
                   .to(opts.dtype())
                   .reshape({3, 1, 1});
    x = x + off;
  }
  // (...,3,H,W) -> matrix multiply over the channel axis.
  auto y = torch::einsum("oc,...chw->...ohw", {mat, x});
  if (post_offset) {
    auto off = torch::tensor({post_offset[0], post_offset[1], post_offset[2]},
                             torch::kFloat64)
                   .to(opts.dtype())
                   .reshape({3, 1, 1});
    y = y + off;
  }
  return y;
}

// BT.601 analog YUV.
const double kRgbToYuv[9] = {0.299, 0.587, 0.114,           //
                             -0.14713, -0.28886, 0.436,     //
                             0.615, -0.51499, -0.10001};
const double kYuvToRgb[9] = {1.0, 0.0, 1.13983,             //
                             1.0, -0.39465, -0.58060,       //
                             1.0, 2.03211, 0.0};

// JFIF YCbCr with chroma centered at 0.5 (unit range).
const double kRgbToYcc[9] = {0.299, 0.587, 0.114,                 //
                             -0.168736, -0.331264, 0.5,           //
                             0.5, -0.418688, -0.081312};
const double kYccToRgb[9] = {1.0, 0.0, 1.402,                     //
                             1.0, -0.344136, -0.714136,           //
                             1.0, 1.772, 0.0};

}  // namespace

torch::Tensor rgb_to_yuv(const torch::Tensor& rgb) {
  return apply_matrix(rgb, kRgbToYuv);
}

torch::Tensor yuv_to_rgb(const torch::Tensor& yuv) {
  return apply_matrix(yuv, kYuvToRgb);
}

torch::Tensor rgb_to_ycbcr(const torch::Tensor& rgb) {
  double post[3] = {0.0, 0.5, 0.5};
  return apply_matrix(rgb, kRgbToYcc, nullptr, post);
}

torch::Tensor ycbcr_to_rgb(const torch::Tensor& ycbcr) {
  double pre[3] = {0.0, -0.5, -0.5};
  return apply_matrix(ycbcr, kYccToRgb, pre, nullptr);
}

}  // namespace stegotag
