#include "stegotag/losses.hpp"

#include <algorithm>
#include <cmath>

#include "stegotag/color.hpp"

namespace stegotag {

namespace {

// Hardest negatives kept for scenes without any positive anchor, so empty
// scenes still push background confidence up.
constexpr int64_t kEmptySceneNegatives = 8;

void check_finite_weight(double v, const char* name) {
  if (!std::isfinite(v) || v < 0.0) {
    throw ConfigError(std::string("loss weight ") + name +
                      " must be finite and >= 0");
  }
}

}  // namespace

void LossWeights::validate() const {
  check_finite_weight(w_i, "w_i");
  check_finite_weight(w_r, "w_r");
  check_finite_weight(w_c, "w_c");
  check_finite_weight(w_k, "w_k");
  check_finite_weight(w_m, "w_m");
  check_finite_weight(w_a, "w_a");
}

LossWeights LossWeights::phase1() {
  LossWeights w;
  w.w_r = 1.0;
  w.w_c = 1.0;
  w.w_k = 1.0e5;
  return w;
}

LossWeights LossWeights::phase2(double w_i_value) {
  LossWeights w;
  w.w_i = w_i_value;
  w.w_r = 1.0;
  w.w_c = 1.0;
  w.w_k = 1.0e5;
  w.w_m = 10.0;
  w.w_a = 0.001;
  return w;
}

nlohmann::json LossReport::to_json() const {
  return {
      {"L_i", L_i},         {"L_pixel", L_pixel}, {"L_chroma", L_chroma},
      {"L_lpips", L_lpips}, {"L_r", L_r},         {"L_c", L_c},
      {"L_k", L_k},         {"L_m", L_m},         {"L_a", L_a},
      {"L_total", L_total},
  };
}

LossReport LossReport::from_json(const nlohmann::json& j) {
  LossReport r;
  r.L_i = j.at("L_i").get<double>();
  r.L_pixel = j.at("L_pixel").get<double>();
  r.L_chroma = j.at("L_chroma").get<double>();
  r.L_lpips = j.at("L_lpips").get<double>();
  r.L_r = j.at("L_r").get<double>();
  r.L_c = j.at("L_c").get<double>();
  r.L_k = j.at("L_k").get<double>();
  r.L_m = j.at("L_m").get<double>();
  r.L_a = j.at("L_a").get<double>();
  r.L_total = j.at("L_total").get<double>();
  return r;
}

LpipsNetImpl::LpipsNetImpl() {
  namespace nn = torch::nn;
  conv1 = register_module(
      "conv1", nn::Conv2d(nn::Conv2dOptions(3, 16, 3).stride(2).padding(1)));
  conv2 = register_module(
      "conv2", nn::Conv2d(nn::Conv2dOptions(16, 32, 3).stride(2).padding(1)));
  conv3 = register_module(
      "conv3", nn::Conv2d(nn::Conv2dOptions(32, 64, 3).stride(2).padding(1)));
  lin1 = register_module(
      "lin1", nn::Conv2d(nn::Conv2dOptions(16, 1, 1).bias(false)));
  lin2 = register_module(
      "lin2", nn::Conv2d(nn::Conv2dOptions(32, 1, 1).bias(false)));
  lin3 = register_module(
      "lin3", nn::Conv2d(nn::Conv2dOptions(64, 1, 1).bias(false)));
}

torch::Tensor LpipsNetImpl::forward(const torch::Tensor& a, const torch::Tensor& b) {
  auto unit = [](const torch::Tensor& x) {
    return x / torch::sqrt((x * x).sum(1, /*keepdim=*/true) + 1e-10);
  };
  auto dist = torch::zeros({a.size(0)}, a.options());
  auto fa = a * 2.0 - 1.0;
  auto fb = b * 2.0 - 1.0;
  const std::array<torch::nn::Conv2d*, 3> stages = {&conv1, &conv2, &conv3};
  const std::array<torch::nn::Conv2d*, 3> lins = {&lin1, &lin2, &lin3};
  for (int s = 0; s < 3; ++s) {
    fa = torch::relu((*stages[s])->forward(fa));
    fb = torch::relu((*stages[s])->forward(fb));
    auto d = (unit(fa) - unit(fb)).pow(2);
    dist = dist + (*lins[s])->forward(d).mean({1, 2, 3});
  }
  return dist;
}

PerceptualMetric PerceptualMetric::disabled() { return PerceptualMetric(); }

PerceptualMetric PerceptualMetric::random_init(uint64_t seed) {
  PerceptualMetric m;
  torch::manual_seed(seed);
  m.net_ = LpipsNet();
  m.freeze();
  return m;
}

PerceptualMetric PerceptualMetric::from_file(const std::filesystem::path& file) {
  PerceptualMetric m;
  torch::manual_seed(0);
  m.net_ = LpipsNet();
  load_weights(*m.net_, file);
  m.freeze();
  return m;
}

void PerceptualMetric::freeze() {
  torch::NoGradGuard guard;
  // Non-negative calibration heads keep the metric >= 0.
  for (auto* lin : {&net_->lin1, &net_->lin2, &net_->lin3}) {
    (*lin)->weight.abs_();
  }
  for (auto& p : net_->parameters()) p.set_requires_grad(false);
  net_->eval();
}

void PerceptualMetric::save(const std::filesystem::path& file) const {
  if (!net_) throw ContractError("cannot save a disabled perceptual metric");
  save_weights(*net_, file);
}

torch::Tensor PerceptualMetric::operator()(const torch::Tensor& a,
                                           const torch::Tensor& b) const {
  if (!net_) return torch::zeros({}, a.options());
  auto net = net_;  // shared handle; forward() needs non-const access
  return net->forward(a, b).mean();
}

ImageLossParts image_loss(const torch::Tensor& code, const torch::Tensor& cover,
                          const PerceptualMetric& metric) {
  if (code.sizes() != cover.sizes() || code.dim() != 4 || code.size(1) != 3) {
    throw ContractError("image_loss expects matching (B,3,H,W) tensors");
  }
  auto code_yuv = rgb_to_yuv(code);
  auto cover_yuv = rgb_to_yuv(cover);
  auto diff = code_yuv - cover_yuv;

  auto channel_mse = diff.pow(2).mean({0, 2, 3});
  auto weights = torch::tensor({2.0f, 1.0f, 1.0f}, code.options());
  auto pixel = (channel_mse * weights).sum();

  auto mean_uv = diff.slice(1, 1, 3).mean({2, 3});  // (B, 2) signed means
  auto chroma = torch::smooth_l1_loss(mean_uv, torch::zeros_like(mean_uv),
                                      torch::Reduction::Sum) /
                static_cast<double>(code.size(0));

  auto lpips = metric(code, cover);
  ImageLossParts parts;
  parts.pixel = pixel;
  parts.chroma = chroma;
  parts.lpips = lpips;
  parts.total = pixel + chroma + 0.01 * lpips;
  return parts;
}

std::pair<torch::Tensor, torch::Tensor> match_anchors(const torch::Tensor& gt_boxes,
                                                      double pos_iou) {
  const int64_t n = AnchorGrid::count();
  auto labels = torch::zeros({n}, torch::kLong);
  auto matched = torch::zeros({n}, torch::kLong);
  if (gt_boxes.numel() == 0) return {labels, matched};
  if (gt_boxes.dim() != 2 || gt_boxes.size(1) != 3) {
    throw ContractError("ground-truth boxes must have shape (G, 3)");
  }
  auto iou = square_iou(gt_boxes.to(torch::kFloat32), AnchorGrid::boxes());
  auto [best_iou, best_gt] = iou.max(0);
  labels = (best_iou >= pos_iou).to(torch::kLong);
  matched = best_gt;
  // Guarantee every ground truth its best anchor.
  auto best_anchor = std::get<1>(iou.max(1));
  for (int64_t g = 0; g < gt_boxes.size(0); ++g) {
    auto a = best_anchor[g].item<int64_t>();
    labels[a] = 1;
    matched[a] = g;
  }
  return {labels, matched};
}

DetectionLossParts detection_loss(const RegionOutput& pred,
                                  const std::vector<torch::Tensor>& gt_boxes) {
  const int64_t batch = pred.logits.size(0);
  if (static_cast<int64_t>(gt_boxes.size()) != batch) {
    throw ContractError("detection_loss needs one ground-truth set per image");
  }
  auto anchors = AnchorGrid::boxes();
  auto reg_sum = torch::zeros({}, pred.offsets.options());
  auto cls_sum = torch::zeros({}, pred.logits.options());
  auto empty_sum = torch::zeros({}, pred.logits.options());
  int64_t total_pos = 0;
  int64_t empty_scenes = 0;

  for (int64_t b = 0; b < batch; ++b) {
    auto [labels, matched] = match_anchors(gt_boxes[b]);
    auto pos_mask = labels == 1;
    auto pos_idx = pos_mask.nonzero().squeeze(1);
    const int64_t n_pos = pos_idx.size(0);
    auto ce = torch::cross_entropy_loss(pred.logits[b], labels,
                                        /*weight=*/{}, torch::Reduction::None);
    if (n_pos > 0) {
      total_pos += n_pos;
      auto gt_for_pos = gt_boxes[b].index({matched.index({pos_idx})});
      auto target = AnchorGrid::encode(gt_for_pos.to(torch::kFloat32),
                                       anchors.index({pos_idx}));
      reg_sum = reg_sum + torch::smooth_l1_loss(pred.offsets[b].index({pos_idx}),
                                                target, torch::Reduction::Sum);
      // Hard negative mining at 3:1.
      auto neg_ce = torch::where(pos_mask, torch::zeros_like(ce), ce);
      const int64_t n_neg =
          std::min<int64_t>(3 * n_pos, AnchorGrid::count() - n_pos);
      auto hardest = std::get<0>(neg_ce.topk(n_neg));
      cls_sum = cls_sum + ce.index({pos_idx}).sum() + hardest.sum();
    } else {
      empty_scenes++;
      auto hardest = std::get<0>(ce.topk(kEmptySceneNegatives));
      empty_sum = empty_sum + hardest.mean();
    }
  }

  DetectionLossParts parts;
  if (total_pos > 0) {
    parts.regression = reg_sum / static_cast<double>(total_pos);
    parts.classification = cls_sum / static_cast<double>(total_pos);
    if (empty_scenes > 0) {
      parts.classification =
          parts.classification + empty_sum / static_cast<double>(batch);
    }
  } else {
    parts.regression = reg_sum;  // zero
    parts.classification =
        empty_scenes > 0 ? empty_sum / static_cast<double>(empty_scenes)
                         : cls_sum;
  }
  return parts;
}

torch::Tensor keypoint_loss(const torch::Tensor& pred, const torch::Tensor& gt) {
  if (pred.sizes() != gt.sizes() || pred.dim() != 2 || pred.size(1) != 8) {
    throw ContractError("keypoint_loss expects matching (B, 8) tensors");
  }
  const int64_t b = pred.size(0);
  auto sq = (pred - gt).pow(2).reshape({b, 4, 2}).sum(-1);
  return sq.mean();
}

torch::Tensor message_loss(const torch::Tensor& logits, const torch::Tensor& bits) {
  if (logits.sizes() != bits.sizes() || logits.dim() != 2) {
    throw ContractError("message_loss expects matching (B, n_bits) tensors");
  }
  return torch::mse_loss(torch::sigmoid(logits), bits);
}

namespace {

// RAII: disable gradient tracking on a module's parameters, restore on exit.
class FreezeParams {
 public:
  explicit FreezeParams(torch::nn::Module& m) {
    for (auto& p : m.parameters()) {
      states_.emplace_back(p, p.requires_grad());
      p.set_requires_grad(false);
    }
  }
  ~FreezeParams() {
    for (auto& [p, was] : states_) p.set_requires_grad(was);
  }

 private:
  std::vector<std::pair<torch::Tensor, bool>> states_;
};

}  // namespace

torch::Tensor adversary_loss_for_encoder(AdversaryNet& adversary,
                                         const torch::Tensor& codes) {
  FreezeParams freeze(*adversary);
  auto logits = adversary(codes);
  // Codes should look like covers: target class 0.
  return torch::binary_cross_entropy_with_logits(logits,
                                                 torch::zeros_like(logits));
}

torch::Tensor adversary_own_loss(AdversaryNet& adversary, const torch::Tensor& codes,
                                 const torch::Tensor& covers) {
  auto code_logits = adversary(codes.detach());
  auto cover_logits = adversary(covers.detach());
  auto l_code = torch::binary_cross_entropy_with_logits(
      code_logits, torch::ones_like(code_logits));
  auto l_cover = torch::binary_cross_entropy_with_logits(
      cover_logits, torch::zeros_like(cover_logits));
  return 0.5 * (l_code + l_cover);
}

torch::Tensor total_loss(const LossWeights& w, const torch::Tensor& L_i,
                         const torch::Tensor& L_r, const torch::Tensor& L_c,
                         const torch::Tensor& L_k, const torch::Tensor& L_m,
                         const torch::Tensor& L_a) {
  return w.w_i * L_i + w.w_r * L_r + w.w_c * L_c + w.w_k * L_k + w.w_m * L_m +
         w.w_a * L_a;
}

LossReport make_report(const LossWeights& w, const ImageLossParts& img,
                       const DetectionLossParts& det, const torch::Tensor& L_k,
                       const torch::Tensor& L_m, const torch::Tensor& L_a) {
  LossReport r;
  r.L_i = img.total.item<double>();
  r.L_pixel = img.pixel.item<double>();
  r.L_chroma = img.chroma.item<double>();
  r.L_lpips = img.lpips.item<double>();
  r.L_r = det.regression.item<double>();
  r.L_c = det.classification.item<double>();
  r.L_k = L_k.item<double>();
  r.L_m = L_m.item<double>();
  r.L_a = L_a.item<double>();
  r.L_total = w.w_i * r.L_i + w.w_r * r.L_r + w.w_c * r.L_c + w.w_k * r.L_k +
              w.w_m * r.L_m + w.w_a * r.L_a;
  return r;
}

}  // namespace stegotag
