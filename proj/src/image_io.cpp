#include "stegotag/image_io.hpp"

#include <jpeglib.h>
#include <png.h>

#include <csetjmp>
#include <cstdio>
#include <cstring>
#include <vector>

#include "stegotag/common.hpp"

namespace stegotag {
namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

torch::Tensor rgb8_to_tensor(const std::vector<uint8_t>& data, int height, int width) {
  auto t = torch::empty({height, width, 3}, torch::kUInt8);
  std::memcpy(t.data_ptr<uint8_t>(), data.data(), data.size());
  return t.permute({2, 0, 1}).to(torch::kFloat32).div_(255.0f).contiguous();
}

torch::Tensor load_png(std::FILE* fp, const std::filesystem::path& path) {
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw DataError("png: allocation failure reading " + path.string());
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw DataError("png: failed to decode " + path.string());
  }
  png_init_io(png, fp);
  png_read_info(png, info);

  png_set_expand(png);          // palette/gray/low-depth -> 8-bit
  png_set_strip_16(png);
  png_set_strip_alpha(png);
  png_set_gray_to_rgb(png);
  png_read_update_info(png, info);

  const int width = static_cast<int>(png_get_image_width(png, info));
  const int height = static_cast<int>(png_get_image_height(png, info));
  if (png_get_channels(png, info) != 3) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw DataError("png: unexpected channel count in " + path.string());
  }

  std::vector<uint8_t> data(static_cast<size_t>(width) * height * 3);
  std::vector<png_bytep> rows(height);
  for (int y = 0; y < height; ++y) rows[y] = data.data() + static_cast<size_t>(y) * width * 3;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return rgb8_to_tensor(data, height, width);
}

struct JpegErrorMgr {
  jpeg_error_mgr pub;
  std::jmp_buf jump;
};

void jpeg_error_exit(j_common_ptr cinfo) {
  auto* mgr = reinterpret_cast<JpegErrorMgr*>(cinfo->err);
  std::longjmp(mgr->jump, 1);
}

torch::Tensor load_jpeg(std::FILE* fp, const std::filesystem::path& path) {
  jpeg_decompress_struct cinfo;
  JpegErrorMgr err;
  cinfo.err = jpeg_std_error(&err.pub);
  err.pub.error_exit = jpeg_error_exit;
  if (setjmp(err.jump)) {
    jpeg_destroy_decompress(&cinfo);
    throw DataError("jpeg: failed to decode " + path.string());
  }
  jpeg_create_decompress(&cinfo);
  jpeg_stdio_src(&cinfo, fp);
  jpeg_read_header(&cinfo, TRUE);
  cinfo.out_color_space = JCS_RGB;
  jpeg_start_decompress(&cinfo);

  const int width = static_cast<int>(cinfo.output_width);
  const int height = static_cast<int>(cinfo.output_height);
  std::vector<uint8_t> data(static_cast<size_t>(width) * height * 3);
  while (cinfo.output_scanline < cinfo.output_height) {
    JSAMPROW row = data.data() + static_cast<size_t>(cinfo.output_scanline) * width * 3;
    jpeg_read_scanlines(&cinfo, &row, 1);
  }
  jpeg_finish_decompress(&cinfo);
  jpeg_destroy_decompress(&cinfo);
  return rgb8_to_tensor(data, height, width);
}

}  // namespace

torch::Tensor load_image_rgb(const std::filesystem::path& path) {
  FilePtr fp(std::fopen(path.c_str(), "rb"));
  if (!fp) throw DataError("cannot open image file " + path.string());
  uint8_t magic[8] = {};
  const size_t got = std::fread(magic, 1, sizeof(magic), fp.get());
  std::rewind(fp.get());
  if (got >= 8 && png_sig_cmp(magic, 0, 8) == 0) return load_png(fp.get(), path);
  if (got >= 2 && magic[0] == 0xFF && magic[1] == 0xD8) return load_jpeg(fp.get(), path);
  throw DataError("unsupported image format: " + path.string());
}

void save_png_rgb(const std::filesystem::path& path, const torch::Tensor& image) {
  if (image.dim() != 3 || image.size(0) != 3) {
    throw ContractError("save_png_rgb expects a CHW RGB tensor");
  }
  auto u8 = image.detach()
                .to(torch::kFloat32)
                .clamp(0.0, 1.0)
                .mul(255.0f)
                .round()
                .to(torch::kUInt8)
                .permute({1, 2, 0})
                .contiguous();
  const int height = static_cast<int>(u8.size(0));
  const int width = static_cast<int>(u8.size(1));

  FilePtr fp(std::fopen(path.c_str(), "wb"));
  if (!fp) throw DataError("cannot open " + path.string() + " for writing");

  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, &info);
    throw DataError("png: allocation failure writing " + path.string());
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw DataError("png: failed to encode " + path.string());
  }
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, width, height, 8, PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_set_compression_level(png, 6);  // fixed settings: identical tensor -> identical bytes
  png_write_info(png, info);
  auto* base = u8.data_ptr<uint8_t>();
  for (int y = 0; y < height; ++y) {
    png_write_row(png, const_cast<png_bytep>(base + static_cast<size_t>(y) * width * 3));
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

bool is_image_decodable(const std::filesystem::path& path) {
  try {
    load_image_rgb(path);
    return true;
  } catch (const Error&) {
    return false;
  }
}

torch::Tensor quantize8(const torch::Tensor& image) {
  return image.clamp(0.0, 1.0).mul(255.0f).round().div(255.0f);
}

}  // namespace stegotag
