#pragma once

#include <torch/torch.h>

#include <filesystem>
#include <vector>

#include <json.hpp>

#include "stegotag/common.hpp"
#include "stegotag/nets.hpp"

namespace stegotag {

// Weights for the six loss terms. Phase presets follow the training recipe:
// phase 1 trains detection only, phase 2 turns everything on with a given
// image-loss weight.
struct LossWeights {
  double w_i = 0.0;
  double w_r = 0.0;
  double w_c = 0.0;
  double w_k = 0.0;
  double w_m = 0.0;
  double w_a = 0.0;

  void validate() const;
  static LossWeights phase1();
  static LossWeights phase2(double w_i_value);
};

// Per-step scalar view of the losses, serialized into the JSONL training
// log. L_total is always the exact dot product of weights and components as
// computed in double precision here; the tensor used for backward may differ
// in the last float ulp.
struct LossReport {
  double L_i = 0.0;
  double L_pixel = 0.0;
  double L_chroma = 0.0;
  double L_lpips = 0.0;
  double L_r = 0.0;
  double L_c = 0.0;
  double L_k = 0.0;
  double L_m = 0.0;
  double L_a = 0.0;
  double L_total = 0.0;

  nlohmann::json to_json() const;
  static LossReport from_json(const nlohmann::json& j);
};

// LPIPS-style perceptual metric: a small frozen conv stack, channel-unit
// normalized features, squared differences weighted by non-negative 1x1
// calibration heads, averaged over space and stages. Weights come either
// from a seeded random init or from an external weight file in the same
// format the model bundles use; a disabled metric always returns zero.
class LpipsNetImpl : public torch::nn::Module {
 public:
  LpipsNetImpl();
  torch::Tensor forward(const torch::Tensor& a, const torch::Tensor& b);

  torch::nn::Conv2d conv1{nullptr}, conv2{nullptr}, conv3{nullptr};
  torch::nn::Conv2d lin1{nullptr}, lin2{nullptr}, lin3{nullptr};
};
TORCH_MODULE(LpipsNet);

class PerceptualMetric {
 public:
  static PerceptualMetric disabled();
  static PerceptualMetric random_init(uint64_t seed);
  static PerceptualMetric from_file(const std::filesystem::path& file);

  bool enabled() const { return static_cast<bool>(net_); }
  void save(const std::filesystem::path& file) const;

  // Mean perceptual distance over the batch; zero tensor when disabled.
  torch::Tensor operator()(const torch::Tensor& a, const torch::Tensor& b) const;

 private:
  PerceptualMetric() = default;
  void freeze();
  LpipsNet net_{nullptr};
};

struct ImageLossParts {
  torch::Tensor total;   // pixel + chroma + 0.01 * lpips
  torch::Tensor pixel;
  torch::Tensor chroma;
  torch::Tensor lpips;
};

// L_pixel: YUV MSE with per-channel weights (2, 1, 1), luminance penalized
// hardest. L_chroma: smooth L1 pulling the per-image mean signed U and V
// deviations toward zero.
ImageLossParts image_loss(const torch::Tensor& code, const torch::Tensor& cover,
                          const PerceptualMetric& metric);

// SSD anchor matching against ground-truth squares (G, 3) in detector
// pixels. Returns (labels, matched_idx), both (anchor_count,): labels are
// 1/0 for positive/background, matched_idx gives the ground-truth row for
// positives. The best anchor per ground truth is always positive; any anchor
// with IoU >= pos_iou also matches.
std::pair<torch::Tensor, torch::Tensor> match_anchors(const torch::Tensor& gt_boxes,
                                                      double pos_iou = 0.5);

struct DetectionLossParts {
  torch::Tensor regression;      // smooth L1 over matched offsets
  torch::Tensor classification;  // CE, hard negatives mined at 3:1
};

DetectionLossParts detection_loss(const RegionOutput& pred,
                                  const std::vector<torch::Tensor>& gt_boxes);

// Mean over corners of the squared Euclidean distance, on (B, 8) corner
// vectors laid out x0 y0 x1 y1 x2 y2 x3 y3.
torch::Tensor keypoint_loss(const torch::Tensor& pred, const torch::Tensor& gt);

// MSE between sigmoid(decoder logits) and {0,1} bit targets.
torch::Tensor message_loss(const torch::Tensor& logits, const torch::Tensor& bits);

// Encoder-side adversary loss: cross entropy pushing codes to be classified
// as covers. The adversary's own parameters are frozen for this forward so
// its weights never receive gradients from the joint step.
torch::Tensor adversary_loss_for_encoder(AdversaryNet& adversary,
                                         const torch::Tensor& codes);

// The adversary's own training loss: standard real/fake cross entropy on
// detached inputs, so encoder weights never receive gradients from it.
torch::Tensor adversary_own_loss(AdversaryNet& adversary, const torch::Tensor& codes,
                                 const torch::Tensor& covers);

// Exact weighted sum, as a tensor for backward.
torch::Tensor total_loss(const LossWeights& w, const torch::Tensor& L_i,
                         const torch::Tensor& L_r, const torch::Tensor& L_c,
                         const torch::Tensor& L_k, const torch::Tensor& L_m,
                         const torch::Tensor& L_a);

// Scalar report with the double-precision L_total identity.
LossReport make_report(const LossWeights& w, const ImageLossParts& img,
                       const DetectionLossParts& det, const torch::Tensor& L_k,
                       const torch::Tensor& L_m, const torch::Tensor& L_a);

}  // namespace stegotag
