#pragma once

#include <torch/torch.h>

#include <filesystem>

namespace stegotag {

/// Decode a PNG or JPEG file (sniffed by magic bytes) to a float CHW RGB
/// tensor in [0,1]. Grayscale and paletted inputs are expanded to RGB;
/// alpha is dropped. Throws DataError on unreadable files.
torch::Tensor load_image_rgb(const std::filesystem::path& path);

/// Write a float CHW RGB tensor in [0,1] as an 8-bit PNG. Values are
/// clamped and rounded to nearest. Encoding parameters are fixed so the
/// same tensor always produces the same bytes.
void save_png_rgb(const std::filesystem::path& path, const torch::Tensor& image);

/// True if the file decodes as an image without throwing.
bool is_image_decodable(const std::filesystem::path& path);

/// Quantize to 8 bits and back, i.e. what a PNG round trip does to values.
torch::Tensor quantize8(const torch::Tensor& image);

}  // namespace stegotag
