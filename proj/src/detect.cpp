#include "stegotag/detect.hpp"

#include <algorithm>
#include <cmath>

namespace stegotag {

namespace {

constexpr double kPadGray = 0.5;

double square_iou_scalar(double cx1, double cy1, double s1, double cx2,
                         double cy2, double s2) {
  const double ax0 = cx1 - s1 / 2, ay0 = cy1 - s1 / 2;
  const double ax1 = cx1 + s1 / 2, ay1 = cy1 + s1 / 2;
  const double bx0 = cx2 - s2 / 2, by0 = cy2 - s2 / 2;
  const double bx1 = cx2 + s2 / 2, by1 = cy2 + s2 / 2;
  const double iw = std::max(0.0, std::min(ax1, bx1) - std::max(ax0, bx0));
  const double ih = std::max(0.0, std::min(ay1, by1) - std::max(ay0, by0));
  const double inter = iw * ih;
  const double uni = s1 * s1 + s2 * s2 - inter;
  return uni > 0.0 ? inter / uni : 0.0;
}

// Bounding square of a quad: bbox center, side = max extent.
std::array<double, 3> bounding_square(const Quad& q) {
  auto bb = q.bounding_box();
  const double cx = (bb[0] + bb[2]) / 2.0;
  const double cy = (bb[1] + bb[3]) / 2.0;
  const double s = std::max(bb[2] - bb[0], bb[3] - bb[1]);
  return {cx, cy, s};
}

}  // namespace

void PipelineConfig::validate() const {
  if (!(confidence_threshold > 0.0 && confidence_threshold < 1.0)) {
    throw ConfigError("confidence threshold must lie in (0, 1)");
  }
  if (!(nms_iou > 0.0 && nms_iou < 1.0)) {
    throw ConfigError("NMS IoU threshold must lie in (0, 1)");
  }
  if (crop_expand < 1.0) throw ConfigError("crop expansion must be >= 1");
}

Letterbox Letterbox::fit(int64_t width, int64_t height, int target) {
  if (width <= 0 || height <= 0) {
    throw ContractError("letterbox needs a non-empty image");
  }
  Letterbox lb;
  lb.target = target;
  lb.scale = static_cast<double>(target) / std::max(width, height);
  lb.pad_x = (target - width * lb.scale) / 2.0;
  lb.pad_y = (target - height * lb.scale) / 2.0;
  return lb;
}

Vec2 Letterbox::to_detector(const Vec2& p) const {
  return {p.x * scale + pad_x, p.y * scale + pad_y};
}

Vec2 Letterbox::to_original(const Vec2& p) const {
  return {(p.x - pad_x) / scale, (p.y - pad_y) / scale};
}

torch::Tensor letterbox_image(const torch::Tensor& image, const Letterbox& lb) {
  if (image.dim() != 3 || image.size(0) != 3) {
    throw ContractError("letterbox_image expects a (3, H, W) tensor");
  }
  const auto h = image.size(1), w = image.size(2);
  const auto nh = std::llround(h * lb.scale);
  const auto nw = std::llround(w * lb.scale);
  namespace F = torch::nn::functional;
  auto resized = F::interpolate(image.unsqueeze(0),
                                F::InterpolateFuncOptions()
                                    .size(std::vector<int64_t>{nh, nw})
                                    .mode(torch::kBilinear)
                                    .align_corners(false)
                                    .antialias(true))
                     .squeeze(0);
  auto out = torch::full({3, lb.target, lb.target}, kPadGray, image.options());
  const auto y0 = std::llround(lb.pad_y);
  const auto x0 = std::llround(lb.pad_x);
  out.slice(1, y0, y0 + nh).slice(2, x0, x0 + nw) = resized;
  return out;
}

std::vector<int64_t> nms(const torch::Tensor& boxes, const torch::Tensor& scores,
                         double iou_threshold) {
  if (boxes.dim() != 2 || boxes.size(1) != 3 || scores.dim() != 1 ||
      scores.size(0) != boxes.size(0)) {
    throw ContractError("nms expects (N,3) boxes and (N,) scores");
  }
  const int64_t n = boxes.size(0);
  auto b = boxes.to(torch::kFloat64).contiguous();
  auto s = scores.to(torch::kFloat64).contiguous();
  auto ba = b.accessor<double, 2>();
  auto sa = s.accessor<double, 1>();

  std::vector<int64_t> order(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) order[static_cast<size_t>(i)] = i;
  std::stable_sort(order.begin(), order.end(), [&](int64_t a2, int64_t b2) {
    if (sa[a2] != sa[b2]) return sa[a2] > sa[b2];
    return a2 < b2;  // tie: lower index wins
  });

  std::vector<int64_t> kept;
  std::vector<char> removed(static_cast<size_t>(n), 0);
  for (size_t oi = 0; oi < order.size(); ++oi) {
    const int64_t i = order[oi];
    if (removed[static_cast<size_t>(i)]) continue;
    kept.push_back(i);
    for (size_t oj = oi + 1; oj < order.size(); ++oj) {
      const int64_t j = order[oj];
      if (removed[static_cast<size_t>(j)]) continue;
      const double iou = square_iou_scalar(ba[i][0], ba[i][1], ba[i][2],
                                           ba[j][0], ba[j][1], ba[j][2]);
      if (iou >= iou_threshold) removed[static_cast<size_t>(j)] = 1;
    }
  }
  return kept;
}

std::vector<Proposal> region_proposals(const torch::Tensor& image300,
                                       RegionNet& net, double tau,
                                       double nms_iou) {
  torch::NoGradGuard guard;
  auto out = net(image300.unsqueeze(0));
  auto scores = torch::softmax(out.logits[0], 1).select(1, 1);  // (2005,)
  auto keep_mask = scores >= tau;
  auto idx = keep_mask.nonzero().squeeze(1);
  if (idx.numel() == 0) return {};

  auto anchors = AnchorGrid::boxes().index({idx});
  auto boxes = AnchorGrid::decode(out.offsets[0].index({idx}), anchors);
  auto sel_scores = scores.index({idx});
  auto kept = nms(boxes, sel_scores, nms_iou);

  std::vector<Proposal> proposals;
  auto bacc = boxes.accessor<float, 2>();
  auto sacc = sel_scores.accessor<float, 1>();
  for (int64_t k : kept) {
    Proposal p;
    p.cx = bacc[k][0];
    p.cy = bacc[k][1];
    p.side = bacc[k][2];
    p.score = sacc[k];
    if (p.side > 1.0) proposals.push_back(p);
  }
  return proposals;
}

std::vector<DetectionResult> detect_all(const torch::Tensor& image,
                                        ModelBundle& bundle,
                                        const PipelineConfig& cfg) {
  cfg.validate();
  if (image.dim() != 3 || image.size(0) != 3) {
    throw ContractError("detect_all expects a (3, H, W) RGB tensor");
  }
  torch::NoGradGuard guard;
  bundle.to_eval();
  const auto h = image.size(1), w = image.size(2);
  auto lb = Letterbox::fit(w, h, bundle.scale.detector_size);
  auto det_input = letterbox_image(image, lb);
  auto proposals = region_proposals(det_input, bundle.region,
                                    cfg.confidence_threshold, cfg.nms_iou);

  std::vector<DetectionResult> results;
  const int crop_size = bundle.scale.corner_crop;
  for (const auto& p : proposals) {
    // Back to original-image pixels, expanded.
    auto center = lb.to_original({p.cx, p.cy});
    double side = p.side / lb.scale * cfg.crop_expand;
    side = std::min<double>(side, std::min(h, w));
    if (side < 8.0) continue;

    // Integer crop window clamped inside the image.
    auto x0 = std::llround(center.x - side / 2.0);
    auto y0 = std::llround(center.y - side / 2.0);
    const auto si = std::llround(side);
    x0 = std::clamp<int64_t>(x0, 0, w - si);
    y0 = std::clamp<int64_t>(y0, 0, h - si);

    auto crop = image.slice(1, y0, y0 + si).slice(2, x0, x0 + si);
    namespace F = torch::nn::functional;
    auto crop_in = F::interpolate(crop.unsqueeze(0),
                                  F::InterpolateFuncOptions()
                                      .size(std::vector<int64_t>{crop_size, crop_size})
                                      .mode(torch::kBilinear)
                                      .align_corners(false)
                                      .antialias(true));
    auto corners_norm = bundle.corner(crop_in)[0];  // (8,) crop-relative

    std::array<Vec2, 4> corners;
    auto corners64 = corners_norm.to(torch::kFloat64).contiguous();
    auto ca = corners64.accessor<double, 1>();
    for (int c = 0; c < 4; ++c) {
      corners[static_cast<size_t>(c)] =
          Vec2{static_cast<double>(x0) + ca[2 * c] * static_cast<double>(si),
               static_cast<double>(y0) + ca[2 * c + 1] * static_cast<double>(si)};
    }
    Quad quad(corners);
    if (!quad.is_convex() || quad.area() < 16.0) continue;
    auto bb = quad.bounding_box();
    if (bb[2] < 0 || bb[0] > static_cast<double>(w) || bb[3] < 0 ||
        bb[1] > static_cast<double>(h)) {
      continue;  // entirely out of frame
    }

    torch::Tensor rectified;
    try {
      rectified = rectify_patch(image, quad, bundle.scale.image_size);
    } catch (const GeometryError&) {
      continue;
    }
    auto logits = bundle.decoder(rectified.unsqueeze(0))[0];
    auto probs = torch::sigmoid(logits.to(torch::kFloat64));

    DetectionResult r;
    r.corners = corners;
    r.id = CodeId::from_tensor(probs);
    r.region_confidence = p.score;
    r.bit_confidence = ((probs - 0.5).abs() * 2.0).mean().item<double>();
    if (cfg.ecc) {
      auto payload = rs_decode(r.id);
      if (!payload) continue;  // uncorrectable
      r.payload = *payload;
    }
    results.push_back(std::move(r));
  }
  return results;
}

FailureClass classify_failure(const std::vector<DetectionResult>& detections,
                              const Quad& gt_quad, const CodeId& gt_id,
                              bool ecc) {
  auto gt_sq = bounding_square(gt_quad);
  const DetectionResult* best = nullptr;
  double best_iou = 0.0;
  for (const auto& d : detections) {
    auto sq = bounding_square(d.quad());
    const double iou = square_iou_scalar(gt_sq[0], gt_sq[1], gt_sq[2], sq[0],
                                         sq[1], sq[2]);
    if (iou >= 0.5 && iou > best_iou) {
      best_iou = iou;
      best = &d;
    }
  }
  if (!best) return FailureClass::kMissed;
  if (ecc) {
    auto gt_payload = rs_decode(gt_id);
    if (!gt_payload) {
      throw ContractError("ECC classification needs a valid ground-truth codeword");
    }
    if (best->payload && *best->payload == *gt_payload) {
      return FailureClass::kFoundCorrect;
    }
    return FailureClass::kFoundWrongId;
  }
  return best->id == gt_id ? FailureClass::kFoundCorrect
                           : FailureClass::kFoundWrongId;
}

nlohmann::json detections_to_json(const std::vector<DetectionResult>& results) {
  nlohmann::json j;
  j["detections"] = nlohmann::json::array();
  for (const auto& r : results) {
    nlohmann::json d;
    d["corners"] = nlohmann::json::array();
    for (const auto& c : r.corners) {
      d["corners"].push_back({c.x, c.y});
    }
    d["id_hex"] = r.id.to_hex();
    if (r.payload) d["payload_hex"] = r.payload->to_hex();
    d["region_conf"] = r.region_confidence;
    d["bit_conf"] = r.bit_confidence;
    j["detections"].push_back(std::move(d));
  }
  return j;
}

}  // namespace stegotag
