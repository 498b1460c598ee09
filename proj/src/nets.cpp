#include "stegotag/nets.hpp"

#include <openssl/evp.h>

#include <cstring>
#include <fstream>
#include <json.hpp>
#include <map>
#include <set>

namespace stegotag {

namespace {

using nlohmann::json;

int gn_groups(int ch) { return std::min(8, ch); }

// U-Net width at level i, capped at 8x base to keep deep presets sane.
int level_width(int base, int i) { return base << std::min(i, 3); }

json scale_to_json(const NetScale& s) {
  return json{{"image_size", s.image_size},
              {"detector_size", s.detector_size},
              {"corner_crop", s.corner_crop},
              {"encoder_base", s.encoder_base},
              {"encoder_depth", s.encoder_depth},
              {"region_channels", s.region_channels},
              {"corner_base", s.corner_base},
              {"corner_depth", s.corner_depth},
              {"decoder_channels", s.decoder_channels},
              {"decoder_fc", s.decoder_fc},
              {"adversary_channels", s.adversary_channels},
              {"reverse_base", s.reverse_base},
              {"reverse_depth", s.reverse_depth}};
}

NetScale scale_from_json(const json& j) {
  NetScale s;
  try {
    s.image_size = j.at("image_size").get<int>();
    s.detector_size = j.at("detector_size").get<int>();
    s.corner_crop = j.at("corner_crop").get<int>();
    s.encoder_base = j.at("encoder_base").get<int>();
    s.encoder_depth = j.at("encoder_depth").get<int>();
    s.region_channels = j.at("region_channels").get<std::vector<int>>();
    s.corner_base = j.at("corner_base").get<int>();
    s.corner_depth = j.at("corner_depth").get<int>();
    s.decoder_channels = j.at("decoder_channels").get<std::vector<int>>();
    s.decoder_fc = j.at("decoder_fc").get<int>();
    s.adversary_channels = j.at("adversary_channels").get<std::vector<int>>();
    s.reverse_base = j.at("reverse_base").get<int>();
    s.reverse_depth = j.at("reverse_depth").get<int>();
  } catch (const json::exception& e) {
    throw DataError(std::string("bad net-scale metadata: ") + e.what());
  }
  return s;
}

}  // namespace

void NetScale::validate() const {
  auto positive = [](int v, const char* what) {
    if (v <= 0) throw ConfigError(std::string(what) + " must be positive");
  };
  positive(image_size, "image_size");
  positive(corner_crop, "corner_crop");
  positive(encoder_base, "encoder_base");
  positive(encoder_depth, "encoder_depth");
  positive(corner_base, "corner_base");
  positive(corner_depth, "corner_depth");
  positive(decoder_fc, "decoder_fc");
  positive(reverse_base, "reverse_base");
  positive(reverse_depth, "reverse_depth");
  if (detector_size != 300) {
    throw ConfigError("detector_size is pinned to 300 by the anchor layout");
  }
  if (region_channels.size() != 5) {
    throw ConfigError("region_channels must list 5 stage widths");
  }
  if (decoder_channels.empty() || adversary_channels.empty()) {
    throw ConfigError("decoder/adversary channel lists must not be empty");
  }
  for (int c : region_channels) positive(c, "region channel");
  for (int c : decoder_channels) positive(c, "decoder channel");
  for (int c : adversary_channels) positive(c, "adversary channel");
  if (image_size % (1 << encoder_depth) != 0 ||
      image_size % (1 << reverse_depth) != 0) {
    throw ConfigError("image_size must be divisible by 2^unet_depth");
  }
  if (corner_crop % (1 << corner_depth) != 0 || corner_crop < 32) {
    throw ConfigError("corner_crop must be >= 32 and divisible by 2^corner_depth");
  }
  if (image_size % (1 << decoder_channels.size()) != 0) {
    throw ConfigError("image_size must be divisible by 2^len(decoder_channels)");
  }
}

NetScale NetScale::desk() {
  NetScale s;
  s.encoder_base = 8;
  s.encoder_depth = 3;
  s.region_channels = {8, 16, 32, 64, 64};
  s.corner_base = 8;
  s.corner_depth = 3;
  s.decoder_channels = {8, 16, 32, 32, 32};
  s.decoder_fc = 256;
  s.adversary_channels = {8, 16, 32};
  s.reverse_base = 8;
  s.reverse_depth = 3;
  return s;
}

// ---------------------------------------------------------------------------
// Anchors

torch::Tensor AnchorGrid::boxes() {
  static const torch::Tensor cached = [] {
    const double size = 300.0;
    struct Map {
      int cells;
      std::vector<double> scales;
    };
    const Map maps[3] = {{38, {0.1}}, {19, {0.2}}, {10, {0.35, 0.5}}};
    std::vector<float> data;
    for (const Map& m : maps) {
      for (int y = 0; y < m.cells; ++y) {
        for (int x = 0; x < m.cells; ++x) {
          for (double s : m.scales) {
            data.push_back(static_cast<float>((x + 0.5) / m.cells * size));
            data.push_back(static_cast<float>((y + 0.5) / m.cells * size));
            data.push_back(static_cast<float>(s * size));
          }
        }
      }
    }
    return torch::from_blob(data.data(),
                            {static_cast<int64_t>(data.size()) / 3, 3},
                            torch::kFloat32)
        .clone();
  }();
  return cached;
}

int64_t AnchorGrid::count() { return boxes().size(0); }

torch::Tensor AnchorGrid::encode(const torch::Tensor& b,
                                 const torch::Tensor& anchors) {
  auto a = anchors.to(b.dtype());
  auto off_c = (b.slice(-1, 0, 2) - a.slice(-1, 0, 2)) /
               (kVarCenter * a.slice(-1, 2, 3));
  auto off_s = torch::log(b.slice(-1, 2, 3) / a.slice(-1, 2, 3)) / kVarSize;
  return torch::cat({off_c, off_s}, -1);
}

torch::Tensor AnchorGrid::decode(const torch::Tensor& offsets,
                                 const torch::Tensor& anchors) {
  auto a = anchors.to(offsets.dtype());
  auto c = a.slice(-1, 0, 2) +
           offsets.slice(-1, 0, 2) * kVarCenter * a.slice(-1, 2, 3);
  auto s = a.slice(-1, 2, 3) * torch::exp(offsets.slice(-1, 2, 3) * kVarSize);
  return torch::cat({c, s}, -1);
}

torch::Tensor square_iou(const torch::Tensor& a, const torch::Tensor& b) {
  auto ax0 = (a.select(-1, 0) - a.select(-1, 2) / 2).unsqueeze(1);
  auto ay0 = (a.select(-1, 1) - a.select(-1, 2) / 2).unsqueeze(1);
  auto ax1 = (a.select(-1, 0) + a.select(-1, 2) / 2).unsqueeze(1);
  auto ay1 = (a.select(-1, 1) + a.select(-1, 2) / 2).unsqueeze(1);
  auto bx0 = (b.select(-1, 0) - b.select(-1, 2) / 2).unsqueeze(0);
  auto by0 = (b.select(-1, 1) - b.select(-1, 2) / 2).unsqueeze(0);
  auto bx1 = (b.select(-1, 0) + b.select(-1, 2) / 2).unsqueeze(0);
  auto by1 = (b.select(-1, 1) + b.select(-1, 2) / 2).unsqueeze(0);

  auto iw = (torch::minimum(ax1, bx1) - torch::maximum(ax0, bx0)).clamp_min(0);
  auto ih = (torch::minimum(ay1, by1) - torch::maximum(ay0, by0)).clamp_min(0);
  auto inter = iw * ih;
  auto area_a = (a.select(-1, 2) * a.select(-1, 2)).unsqueeze(1);
  auto area_b = (b.select(-1, 2) * b.select(-1, 2)).unsqueeze(0);
  return inter / (area_a + area_b - inter).clamp_min(1e-12);
}

// ---------------------------------------------------------------------------
// Blocks

ConvBlockImpl::ConvBlockImpl(int in_ch, int out_ch) {
  conv1 = register_module(
      "conv1", torch::nn::Conv2d(
                   torch::nn::Conv2dOptions(in_ch, out_ch, 3).padding(1)));
  norm1 = register_module("norm1",
                          torch::nn::GroupNorm(gn_groups(out_ch), out_ch));
  conv2 = register_module(
      "conv2", torch::nn::Conv2d(
                   torch::nn::Conv2dOptions(out_ch, out_ch, 3).padding(1)));
  norm2 = register_module("norm2",
                          torch::nn::GroupNorm(gn_groups(out_ch), out_ch));
}

torch::Tensor ConvBlockImpl::forward(torch::Tensor x) {
  x = torch::relu(norm1(conv1(x)));
  return torch::relu(norm2(conv2(x)));
}

UNetImpl::UNetImpl(int in_ch, int out_ch, int base, int depth, bool sigmoid_out)
    : depth_(depth), sigmoid_(sigmoid_out) {
  int prev = in_ch;
  for (int i = 0; i < depth; ++i) {
    enc.push_back(ConvBlock(prev, level_width(base, i)));
    register_module("enc" + std::to_string(i), enc.back());
    prev = level_width(base, i);
  }
  bottleneck = ConvBlock(prev, level_width(base, depth));
  register_module("bottleneck", bottleneck);
  prev = level_width(base, depth);
  for (int i = depth - 1; i >= 0; --i) {
    const int w = level_width(base, i);
    up.push_back(torch::nn::Conv2d(
        torch::nn::Conv2dOptions(prev, w, 3).padding(1)));
    register_module("up" + std::to_string(i), up.back());
    dec.push_back(ConvBlock(2 * w, w));
    register_module("dec" + std::to_string(i), dec.back());
    prev = w;
  }
  head = register_module(
      "head", torch::nn::Conv2d(torch::nn::Conv2dOptions(prev, out_ch, 1)));
}

torch::Tensor UNetImpl::forward(torch::Tensor x) {
  namespace F = torch::nn::functional;
  std::vector<torch::Tensor> skips;
  for (int i = 0; i < depth_; ++i) {
    x = enc[static_cast<size_t>(i)]->forward(x);
    skips.push_back(x);
    x = torch::max_pool2d(x, 2);
  }
  x = bottleneck->forward(x);
  for (int i = 0; i < depth_; ++i) {
    x = F::interpolate(x, F::InterpolateFuncOptions()
                              .scale_factor(std::vector<double>{2.0, 2.0})
                              .mode(torch::kBilinear)
                              .align_corners(false));
    x = up[static_cast<size_t>(i)]->forward(x);
    auto& skip = skips[static_cast<size_t>(depth_ - 1 - i)];
    x = dec[static_cast<size_t>(i)]->forward(torch::cat({x, skip}, 1));
  }
  x = head(x);
  return sigmoid_ ? torch::sigmoid(x) : x;
}

// ---------------------------------------------------------------------------
// Encoder

EncoderNetImpl::EncoderNetImpl(const NetScale& scale) : size_(scale.image_size) {
  expand = register_module(
      "expand", torch::nn::Linear(36, 3 * size_ * size_));
  unet = register_module(
      "unet", UNet(6, 3, scale.encoder_base, scale.encoder_depth, true));
}

torch::Tensor EncoderNetImpl::forward(const torch::Tensor& cover,
                                      const torch::Tensor& bits) {
  if (cover.dim() != 4 || cover.size(1) != 3 || cover.size(2) != size_ ||
      cover.size(3) != size_) {
    throw ContractError("encoder expects cover of shape (B,3,S,S)");
  }
  if (bits.dim() != 2 || bits.size(1) != 36 || bits.size(0) != cover.size(0)) {
    throw ContractError("encoder expects bits of shape (B,36)");
  }
  auto plane = expand(bits).reshape({cover.size(0), 3, size_, size_});
  return unet(torch::cat({cover, plane}, 1));
}

// ---------------------------------------------------------------------------
// Region detector

RegionNetImpl::RegionNetImpl(const NetScale& scale)
    : input_size_(scale.detector_size) {
  const auto& ch = scale.region_channels;
  int prev = 3;
  for (size_t i = 0; i < ch.size(); ++i) {
    stages.push_back(ConvBlock(prev, ch[i]));
    register_module("stage" + std::to_string(i), stages.back());
    prev = ch[i];
  }
  // 300 -> 150 -> 75 -> 38 -> 19 -> 10; ceil on the odd-size halvings.
  const bool ceil_mode[5] = {false, false, true, false, true};
  for (int i = 0; i < 5; ++i) {
    pools.push_back(torch::nn::MaxPool2d(
        torch::nn::MaxPool2dOptions(2).stride(2).ceil_mode(ceil_mode[i])));
    register_module("pool" + std::to_string(i), pools.back());
  }
  // Heads at 38 (1 anchor/cell), 19 (1), 10 (2).
  const int per_cell[3] = {1, 1, 2};
  const int head_in[3] = {ch[3], ch[4], ch[4]};
  for (int i = 0; i < 3; ++i) {
    conf_heads.push_back(torch::nn::Conv2d(
        torch::nn::Conv2dOptions(head_in[i], per_cell[i] * 2, 3).padding(1)));
    register_module("conf" + std::to_string(i), conf_heads.back());
    loc_heads.push_back(torch::nn::Conv2d(
        torch::nn::Conv2dOptions(head_in[i], per_cell[i] * 3, 3).padding(1)));
    register_module("loc" + std::to_string(i), loc_heads.back());
  }
}

RegionOutput RegionNetImpl::forward(const torch::Tensor& image) {
  if (image.dim() != 4 || image.size(1) != 3 || image.size(2) != input_size_ ||
      image.size(3) != input_size_) {
    throw ContractError("region detector expects (B,3,300,300)");
  }
  const int64_t batch = image.size(0);
  auto flatten = [batch](const torch::Tensor& t, int64_t fields) {
    // (B, per*fields, H, W) -> (B, H*W*per, fields), scales innermost.
    return t.permute({0, 2, 3, 1}).reshape({batch, -1, fields});
  };

  auto x = image;
  std::vector<torch::Tensor> confs, locs;
  std::vector<torch::Tensor> taps;
  x = stages[0]->forward(x);
  x = pools[0]->forward(x);
  x = stages[1]->forward(x);
  x = pools[1]->forward(x);
  x = stages[2]->forward(x);
  x = pools[2]->forward(x);
  x = stages[3]->forward(x);  // 38x38
  taps.push_back(x);
  x = pools[3]->forward(x);
  x = stages[4]->forward(x);  // 19x19
  taps.push_back(x);
  x = pools[4]->forward(x);   // 10x10
  taps.push_back(x);
  for (int i = 0; i < 3; ++i) {
    confs.push_back(flatten(conf_heads[static_cast<size_t>(i)]->forward(taps[static_cast<size_t>(i)]), 2));
    locs.push_back(flatten(loc_heads[static_cast<size_t>(i)]->forward(taps[static_cast<size_t>(i)]), 3));
  }
  RegionOutput out{torch::cat(confs, 1), torch::cat(locs, 1)};
  if (out.logits.size(1) != AnchorGrid::count()) {
    throw ContractError("anchor head layout does not match the anchor grid");
  }
  return out;
}

// ---------------------------------------------------------------------------
// Corner regressor

CornerNetImpl::CornerNetImpl(const NetScale& scale) : crop_(scale.corner_crop) {
  unet = register_module("unet", UNet(3, scale.corner_base, scale.corner_base,
                                      scale.corner_depth, false));
  const int feat = scale.corner_base * 16 * 16;
  fc1 = register_module("fc1", torch::nn::Linear(feat, 128));
  fc2 = register_module("fc2", torch::nn::Linear(128, 8));
}

torch::Tensor CornerNetImpl::forward(const torch::Tensor& crop) {
  if (crop.dim() != 4 || crop.size(1) != 3 || crop.size(2) != crop_ ||
      crop.size(3) != crop_) {
    throw ContractError("corner net expects (B,3,C,C) crops");
  }
  auto f = unet(crop);
  f = torch::adaptive_avg_pool2d(f, {16, 16}).flatten(1);
  return fc2(torch::relu(fc1(f)));
}

// ---------------------------------------------------------------------------
// Decoder

DecoderNetImpl::DecoderNetImpl(const NetScale& scale) : size_(scale.image_size) {
  int prev = 3;
  for (size_t i = 0; i < scale.decoder_channels.size(); ++i) {
    const int ch = scale.decoder_channels[i];
    convs.push_back(torch::nn::Conv2d(
        torch::nn::Conv2dOptions(prev, ch, 3).stride(2).padding(1)));
    register_module("conv" + std::to_string(i), convs.back());
    norms.push_back(torch::nn::GroupNorm(gn_groups(ch), ch));
    register_module("norm" + std::to_string(i), norms.back());
    prev = ch;
  }
  const int spatial = size_ >> scale.decoder_channels.size();
  fc1 = register_module(
      "fc1", torch::nn::Linear(prev * spatial * spatial, scale.decoder_fc));
  fc2 = register_module("fc2", torch::nn::Linear(scale.decoder_fc, 36));
}

torch::Tensor DecoderNetImpl::forward(const torch::Tensor& rectified) {
  if (rectified.dim() != 4 || rectified.size(1) != 3 ||
      rectified.size(2) != size_ || rectified.size(3) != size_) {
    throw ContractError("decoder expects (B,3,S,S)");
  }
  auto x = rectified;
  for (size_t i = 0; i < convs.size(); ++i) {
    x = torch::relu(norms[i](convs[i](x)));
  }
  return fc2(torch::relu(fc1(x.flatten(1))));
}

// ---------------------------------------------------------------------------
// Adversary

AdversaryNetImpl::AdversaryNetImpl(const NetScale& scale)
    : size_(scale.image_size) {
  int prev = 3;
  for (size_t i = 0; i < scale.adversary_channels.size(); ++i) {
    const int ch = scale.adversary_channels[i];
    convs.push_back(torch::nn::Conv2d(
        torch::nn::Conv2dOptions(prev, ch, 3).stride(2).padding(1)));
    register_module("conv" + std::to_string(i), convs.back());
    norms.push_back(torch::nn::GroupNorm(gn_groups(ch), ch));
    register_module("norm" + std::to_string(i), norms.back());
    prev = ch;
  }
  fc = register_module("fc", torch::nn::Linear(prev, 1));
}

torch::Tensor AdversaryNetImpl::forward(const torch::Tensor& image) {
  if (image.dim() != 4 || image.size(1) != 3 || image.size(2) != size_ ||
      image.size(3) != size_) {
    throw ContractError("adversary expects (B,3,S,S)");
  }
  auto x = image;
  for (size_t i = 0; i < convs.size(); ++i) {
    x = torch::relu(norms[i](convs[i](x)));
  }
  x = torch::adaptive_avg_pool2d(x, {1, 1}).flatten(1);
  return fc(x).reshape({-1});
}

// ---------------------------------------------------------------------------
// Reverse encoder

ReverseNetImpl::ReverseNetImpl(const NetScale& scale) : size_(scale.image_size) {
  unet = register_module(
      "unet", UNet(3, 3, scale.reverse_base, scale.reverse_depth, true));
}

torch::Tensor ReverseNetImpl::forward(const torch::Tensor& code) {
  if (code.dim() != 4 || code.size(1) != 3 || code.size(2) != size_ ||
      code.size(3) != size_) {
    throw ContractError("reverse net expects (B,3,S,S)");
  }
  return unet(code);
}

// ---------------------------------------------------------------------------
// Bundle IO

ModelBundle::ModelBundle(const NetScale& s, uint64_t init_seed) : scale(s) {
  scale.validate();
  torch::manual_seed(init_seed);
  meta.seed = init_seed;
  encoder = EncoderNet(scale);
  region = RegionNet(scale);
  corner = CornerNet(scale);
  decoder = DecoderNet(scale);
  adversary = AdversaryNet(scale);
  reverse = ReverseNet(scale);
}

std::vector<std::pair<std::string, torch::nn::Module*>> ModelBundle::named_nets() {
  return {{"encoder", encoder.ptr().get()},   {"region", region.ptr().get()},
          {"corner", corner.ptr().get()},     {"decoder", decoder.ptr().get()},
          {"adversary", adversary.ptr().get()}, {"reverse", reverse.ptr().get()}};
}

std::vector<std::pair<std::string, const torch::nn::Module*>> ModelBundle::named_nets()
    const {
  return {{"encoder", encoder.ptr().get()},   {"region", region.ptr().get()},
          {"corner", corner.ptr().get()},     {"decoder", decoder.ptr().get()},
          {"adversary", adversary.ptr().get()}, {"reverse", reverse.ptr().get()}};
}

void ModelBundle::to_eval() {
  for (auto& [name, net] : named_nets()) net->eval();
}

void ModelBundle::to_train() {
  for (auto& [name, net] : named_nets()) net->train();
}

void save_weights(const torch::nn::Module& net,
                  const std::filesystem::path& file) {
  std::ofstream out(file, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + file.string());
  out.write("STWT0001", 8);
  const auto params = net.named_parameters();
  const uint32_t count = static_cast<uint32_t>(params.size());
  out.write(reinterpret_cast<const char*>(&count), 4);
  for (const auto& item : params) {
    const std::string& name = item.key();
    auto t = item.value().detach().to(torch::kFloat32).contiguous();
    const uint32_t name_len = static_cast<uint32_t>(name.size());
    out.write(reinterpret_cast<const char*>(&name_len), 4);
    out.write(name.data(), name_len);
    const uint32_t ndim = static_cast<uint32_t>(t.dim());
    out.write(reinterpret_cast<const char*>(&ndim), 4);
    for (int64_t d = 0; d < t.dim(); ++d) {
      const int64_t dim = t.size(d);
      out.write(reinterpret_cast<const char*>(&dim), 8);
    }
    const uint8_t dtype = 0;  // float32
    out.write(reinterpret_cast<const char*>(&dtype), 1);
    out.write(reinterpret_cast<const char*>(t.data_ptr<float>()),
              static_cast<std::streamsize>(t.numel() * 4));
  }
  if (!out) throw DataError("short write to " + file.string());
}

void load_weights(torch::nn::Module& net, const std::filesystem::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw DataError("cannot read " + file.string());
  char magic[8];
  in.read(magic, 8);
  if (!in || std::memcmp(magic, "STWT0001", 8) != 0) {
    throw DataError(file.string() + " is not a weight file");
  }
  uint32_t count = 0;
  in.read(reinterpret_cast<char*>(&count), 4);
  std::map<std::string, torch::Tensor> loaded;
  for (uint32_t i = 0; i < count; ++i) {
    uint32_t name_len = 0;
    in.read(reinterpret_cast<char*>(&name_len), 4);
    if (!in || name_len > 4096) throw DataError("corrupt weight file");
    std::string name(name_len, '\0');
    in.read(name.data(), name_len);
    uint32_t ndim = 0;
    in.read(reinterpret_cast<char*>(&ndim), 4);
    if (!in || ndim > 8) throw DataError("corrupt weight file");
    std::vector<int64_t> dims(ndim);
    for (uint32_t d = 0; d < ndim; ++d) {
      in.read(reinterpret_cast<char*>(&dims[d]), 8);
    }
    uint8_t dtype = 255;
    in.read(reinterpret_cast<char*>(&dtype), 1);
    if (dtype != 0) throw DataError("unsupported tensor dtype in weight file");
    auto t = torch::empty(dims, torch::kFloat32);
    in.read(reinterpret_cast<char*>(t.data_ptr<float>()),
            static_cast<std::streamsize>(t.numel() * 4));
    if (!in) throw DataError("truncated weight file " + file.string());
    loaded.emplace(name, std::move(t));
  }

  auto params = net.named_parameters();
  if (params.size() != loaded.size()) {
    throw DataError("weight file does not match the network architecture");
  }
  torch::NoGradGuard guard;
  for (auto& item : params) {
    auto it = loaded.find(item.key());
    if (it == loaded.end()) {
      throw DataError("missing tensor '" + item.key() + "' in weight file");
    }
    if (it->second.sizes() != item.value().sizes()) {
      throw DataError("shape mismatch for tensor '" + item.key() + "'");
    }
    item.value().copy_(it->second);
  }
}

std::string sha256_file(const std::filesystem::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw DataError("cannot read " + file.string());
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  if (!ctx) throw Error("EVP context allocation failed");
  EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr);
  char buf[1 << 16];
  while (in.good()) {
    in.read(buf, sizeof(buf));
    const auto got = in.gcount();
    if (got > 0) EVP_DigestUpdate(ctx, buf, static_cast<size_t>(got));
  }
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_DigestFinal_ex(ctx, digest, &len);
  EVP_MD_CTX_free(ctx);
  static const char* hex = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out.push_back(hex[digest[i] >> 4]);
    out.push_back(hex[digest[i] & 0xF]);
  }
  return out;
}

void ModelBundle::save(const std::filesystem::path& dir) const {
  std::filesystem::create_directories(dir);
  json nets_meta;
  for (const auto& [name, net] : named_nets()) {
    const auto file = dir / (name + ".weights");
    save_weights(*net, file);
    nets_meta[name] = {{"file", name + ".weights"}, {"sha256", sha256_file(file)}};
  }
  json meta_json{{"format_version", meta.format_version},
                 {"phase", meta.phase},
                 {"w_i_branch", meta.w_i_branch},
                 {"seed", meta.seed},
                 {"epoch", meta.epoch},
                 {"scale", scale_to_json(scale)},
                 {"nets", nets_meta}};
  std::ofstream out(dir / "metadata.json", std::ios::trunc);
  out << meta_json.dump(2) << "\n";
  if (!out) throw DataError("cannot write bundle metadata");
}

ModelBundle ModelBundle::load(const std::filesystem::path& dir) {
  std::ifstream in(dir / "metadata.json");
  if (!in) throw DataError("no bundle metadata at " + dir.string());
  json meta_json;
  try {
    in >> meta_json;
  } catch (const json::exception& e) {
    throw DataError(std::string("bad bundle metadata: ") + e.what());
  }
  if (meta_json.value("format_version", -1) != 1) {
    throw DataError("unsupported bundle format version");
  }
  NetScale scale = scale_from_json(meta_json.at("scale"));
  ModelBundle bundle(scale, meta_json.value("seed", 0ULL));
  bundle.meta.phase = meta_json.value("phase", "init");
  bundle.meta.w_i_branch = meta_json.value("w_i_branch", 0.0);
  bundle.meta.epoch = meta_json.value("epoch", 0LL);

  const auto& nets_meta = meta_json.at("nets");
  for (auto& [name, net] : bundle.named_nets()) {
    if (!nets_meta.contains(name)) {
      throw DataError("bundle metadata lists no '" + name + "' net");
    }
    const auto file = dir / nets_meta.at(name).at("file").get<std::string>();
    const auto expect = nets_meta.at(name).at("sha256").get<std::string>();
    const auto actual = sha256_file(file);
    if (actual != expect) {
      throw DataError("bundle hash mismatch for '" + name +
                      "': weight file does not belong to this bundle");
    }
    load_weights(*net, file);
  }
  return bundle;
}

}  // namespace stegotag
