#pragma once

#include <torch/torch.h>

#include <optional>
#include <vector>

#include <json.hpp>

#include "stegotag/geometry.hpp"
#include "stegotag/idcodec.hpp"
#include "stegotag/nets.hpp"

namespace stegotag {

struct PipelineConfig {
  double confidence_threshold = 0.5;
  double nms_iou = 0.45;
  double crop_expand = 1.2;
  bool ecc = false;

  void validate() const;
};

struct DetectionResult {
  std::array<Vec2, 4> corners;  // original-image pixels, geometry winding
  CodeId id;
  std::optional<Payload> payload;  // present in ECC mode only
  double region_confidence = 0.0;
  double bit_confidence = 0.0;

  Quad quad() const { return Quad(corners); }
};

// Aspect-preserving mapping of a (w, h) image into the detector's square
// input: uniform scale to fit, centered, gray padding.
struct Letterbox {
  double scale = 1.0;
  double pad_x = 0.0;
  double pad_y = 0.0;
  int target = 300;

  static Letterbox fit(int64_t width, int64_t height, int target = 300);
  Vec2 to_detector(const Vec2& p) const;
  Vec2 to_original(const Vec2& p) const;
};

// Resize + pad an RGB image to the letterbox geometry. Differentiable.
torch::Tensor letterbox_image(const torch::Tensor& image, const Letterbox& lb);

// Greedy non-maximum suppression on square boxes (N, 3) with scores (N,).
// Descending score, ties broken toward the lower index; returns kept row
// indices in selection order.
std::vector<int64_t> nms(const torch::Tensor& boxes, const torch::Tensor& scores,
                         double iou_threshold);

struct Proposal {
  double cx = 0.0, cy = 0.0, side = 0.0;  // detector-input scale
  double score = 0.0;
};

// Thresholded + NMS-filtered region proposals on a single detector-sized
// image (3, 300, 300).
std::vector<Proposal> region_proposals(const torch::Tensor& image300,
                                       RegionNet& net, double tau,
                                       double nms_iou);

// Full pipeline: letterbox -> region proposals -> full-resolution crops ->
// corner refinement -> convexity filter -> rectify -> decode (-> optional
// ECC). Corners come back in original-image pixels. An empty list is the
// no-detection outcome.
std::vector<DetectionResult> detect_all(const torch::Tensor& image,
                                        ModelBundle& bundle,
                                        const PipelineConfig& cfg);

enum class FailureClass { kFoundCorrect, kFoundWrongId, kMissed };

// Classify one ground-truth placement against a set of detections: missed
// if nothing overlaps its bounding square at IoU >= 0.5, otherwise correct
// only if the 36 bits match exactly (ECC off) or the decoded payload
// matches (ECC on).
FailureClass classify_failure(const std::vector<DetectionResult>& detections,
                              const Quad& gt_quad, const CodeId& gt_id, bool ecc);

nlohmann::json detections_to_json(const std::vector<DetectionResult>& results);

}  // namespace stegotag
