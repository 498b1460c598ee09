#pragma once

#include <torch/torch.h>

#include <filesystem>
#include <string>
#include <vector>

#include "stegotag/common.hpp"

namespace stegotag {

/// Width/depth knobs for every net. paper() mirrors the published setup;
/// desk() is the reduced preset that trains on one CPU/GPU in hours.
struct NetScale {
  int image_size = 256;     // encoder/decoder/adversary input side
  int detector_size = 300;  // region-detector input side (fixed)
  int corner_crop = 128;    // corner-detector input side

  int encoder_base = 32;
  int encoder_depth = 5;
  std::vector<int> region_channels = {64, 128, 256, 512, 512};
  int corner_base = 16;
  int corner_depth = 3;
  std::vector<int> decoder_channels = {32, 64, 128, 128, 128};
  int decoder_fc = 512;
  std::vector<int> adversary_channels = {32, 64, 128};
  int reverse_base = 32;
  int reverse_depth = 5;

  void validate() const;
  static NetScale paper() { return NetScale(); }
  static NetScale desk();
};

/// Square SSD-style anchor layout over the 300-px detector input:
/// 38x38 cells at scale 0.1, 19x19 at 0.2, 10x10 at {0.35, 0.5}.
/// Row-major within each map, scales innermost; this order matches how the
/// region heads flatten their outputs.
struct AnchorGrid {
  static constexpr double kVarCenter = 0.1;
  static constexpr double kVarSize = 0.2;

  /// (A,3) float32 of (cx, cy, side) in detector pixels; A = 2005.
  static torch::Tensor boxes();
  static int64_t count();

  /// SSD offset encoding between aligned rows of (N,3) squares.
  static torch::Tensor encode(const torch::Tensor& boxes,
                              const torch::Tensor& anchors);
  static torch::Tensor decode(const torch::Tensor& offsets,
                              const torch::Tensor& anchors);
};

/// IoU between two sets of axis-aligned squares given as (cx, cy, side):
/// (N,3) x (M,3) -> (N,M).
torch::Tensor square_iou(const torch::Tensor& a, const torch::Tensor& b);

// ---------------------------------------------------------------------------
// Building blocks

struct ConvBlockImpl : torch::nn::Module {
  ConvBlockImpl(int in_ch, int out_ch);
  torch::Tensor forward(torch::Tensor x);
  torch::nn::Conv2d conv1{nullptr}, conv2{nullptr};
  torch::nn::GroupNorm norm1{nullptr}, norm2{nullptr};
};
TORCH_MODULE(ConvBlock);

struct UNetImpl : torch::nn::Module {
  UNetImpl(int in_ch, int out_ch, int base, int depth, bool sigmoid_out);
  torch::Tensor forward(torch::Tensor x);
  std::vector<ConvBlock> enc, dec;
  ConvBlock bottleneck{nullptr};
  std::vector<torch::nn::Conv2d> up;
  torch::nn::Conv2d head{nullptr};
  int depth_;
  bool sigmoid_;
};
TORCH_MODULE(UNet);

// ---------------------------------------------------------------------------
// The six networks

/// Steganographic encoder: expands the 36-bit message to a 3-channel plane,
/// concatenates it with the cover, and runs a U-Net. Output in [0,1].
struct EncoderNetImpl : torch::nn::Module {
  explicit EncoderNetImpl(const NetScale& scale);
  /// cover (B,3,S,S), bits (B,36) in {0,1} -> code (B,3,S,S).
  torch::Tensor forward(const torch::Tensor& cover, const torch::Tensor& bits);
  torch::nn::Linear expand{nullptr};
  UNet unet{nullptr};
  int size_;
};
TORCH_MODULE(EncoderNet);

struct RegionOutput {
  torch::Tensor logits;   // (B, A, 2) background/code scores
  torch::Tensor offsets;  // (B, A, 3) encoded (cx, cy, scale)
};

/// Single-class SSD-style detector over a VGG-ish backbone, square anchors.
struct RegionNetImpl : torch::nn::Module {
  explicit RegionNetImpl(const NetScale& scale);
  /// image (B,3,300,300) -> per-anchor scores and offsets.
  RegionOutput forward(const torch::Tensor& image);
  std::vector<ConvBlock> stages;
  std::vector<torch::nn::MaxPool2d> pools;
  std::vector<torch::nn::Conv2d> conf_heads, loc_heads;
  int input_size_;
};
TORCH_MODULE(RegionNet);

/// Corner regressor: shallow U-Net features, pooled, two FC layers to 8
/// reals in crop-normalized coordinates (no clamping; corners may exit the
/// crop).
struct CornerNetImpl : torch::nn::Module {
  explicit CornerNetImpl(const NetScale& scale);
  /// crop (B,3,C,C) -> (B,8) as x0,y0,...,x3,y3, winding as in geometry.
  torch::Tensor forward(const torch::Tensor& crop);
  UNet unet{nullptr};
  torch::nn::Linear fc1{nullptr}, fc2{nullptr};
  int crop_;
};
TORCH_MODULE(CornerNet);

/// Message decoder: plain strided conv stack plus two FC layers -> 36
/// logits. No spatial-transformer stage.
struct DecoderNetImpl : torch::nn::Module {
  explicit DecoderNetImpl(const NetScale& scale);
  torch::Tensor forward(const torch::Tensor& rectified);  // (B,3,S,S)->(B,36)
  std::vector<torch::nn::Conv2d> convs;
  std::vector<torch::nn::GroupNorm> norms;
  torch::nn::Linear fc1{nullptr}, fc2{nullptr};
  int size_;
};
TORCH_MODULE(DecoderNet);

/// Cover-vs-code critic: conv blocks, global average pooling, one FC layer.
struct AdversaryNetImpl : torch::nn::Module {
  explicit AdversaryNetImpl(const NetScale& scale);
  torch::Tensor forward(const torch::Tensor& image);  // (B,3,S,S) -> (B,)
  std::vector<torch::nn::Conv2d> convs;
  std::vector<torch::nn::GroupNorm> norms;
  torch::nn::Linear fc{nullptr};
  int size_;
};
TORCH_MODULE(AdversaryNet);

/// Reverse encoder: U-Net that tries to reconstruct the cover from a code.
struct ReverseNetImpl : torch::nn::Module {
  explicit ReverseNetImpl(const NetScale& scale);
  torch::Tensor forward(const torch::Tensor& code);
  UNet unet{nullptr};
  int size_;
};
TORCH_MODULE(ReverseNet);

// ---------------------------------------------------------------------------
// Bundles

struct BundleMeta {
  int format_version = 1;
  std::string phase = "init";
  double w_i_branch = 0.0;
  uint64_t seed = 0;
  int64_t epoch = 0;
};

/// All six nets trained in one session, plus metadata. Saved as a directory:
/// metadata.json and one portable binary weight file per net; metadata
/// records a SHA-256 per weight file so nets from different bundles cannot
/// be mixed silently.
class ModelBundle {
 public:
  ModelBundle(const NetScale& scale, uint64_t init_seed);

  NetScale scale;
  BundleMeta meta;
  EncoderNet encoder{nullptr};
  RegionNet region{nullptr};
  CornerNet corner{nullptr};
  DecoderNet decoder{nullptr};
  AdversaryNet adversary{nullptr};
  ReverseNet reverse{nullptr};

  void save(const std::filesystem::path& dir) const;
  static ModelBundle load(const std::filesystem::path& dir);

  void to_eval();
  void to_train();
  std::vector<std::pair<std::string, torch::nn::Module*>> named_nets();
  std::vector<std::pair<std::string, const torch::nn::Module*>> named_nets() const;
};

/// Portable tensor-list file IO (name, shape, row-major float32 payload).
void save_weights(const torch::nn::Module& net, const std::filesystem::path& file);
void load_weights(torch::nn::Module& net, const std::filesystem::path& file);

/// Hex SHA-256 of a file's bytes.
std::string sha256_file(const std::filesystem::path& file);

}  // namespace stegotag
