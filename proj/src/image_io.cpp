#include "getam/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstring>

#include "getam/fileio.hpp"

namespace getam {

namespace {

void write_png(const std::filesystem::path& path, std::size_t h, std::size_t w,
               std::uint32_t format, const std::vector<std::uint8_t>& pixels) {
  png_image img;
  std::memset(&img, 0, sizeof img);
  img.version = PNG_IMAGE_VERSION;
  img.width = static_cast<png_uint_32>(w);
  img.height = static_cast<png_uint_32>(h);
  img.format = format;
  png_alloc_size_t size = 0;
  if (!png_image_write_to_memory(&img, nullptr, &size, 0, pixels.data(), 0, nullptr)) {
    throw std::runtime_error("png encode failed for " + path.string() + ": " + img.message);
  }
  std::vector<std::uint8_t> buf(size);
  if (!png_image_write_to_memory(&img, buf.data(), &size, 0, pixels.data(), 0, nullptr)) {
    throw std::runtime_error("png encode failed for " + path.string() + ": " + img.message);
  }
  buf.resize(size);
  write_file_atomic(path, buf);
}

std::vector<std::uint8_t> read_png(const std::filesystem::path& path, std::uint32_t format,
                                   std::size_t& h, std::size_t& w) {
  const auto bytes = read_file_bytes(path);
  png_image img;
  std::memset(&img, 0, sizeof img);
  img.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_memory(&img, bytes.data(), bytes.size())) {
    throw ValidationError("not a readable PNG: " + path.string() + " (" + img.message + ")");
  }
  img.format = format;
  std::vector<std::uint8_t> pixels(PNG_IMAGE_SIZE(img));
  if (!png_image_finish_read(&img, nullptr, pixels.data(), 0, nullptr)) {
    png_image_free(&img);
    throw ValidationError("corrupt PNG: " + path.string() + " (" + img.message + ")");
  }
  h = img.height;
  w = img.width;
  return pixels;
}

}  // namespace

void write_png_rgb(const std::filesystem::path& path, const Tensor& image) {
  if (image.rank() != 3 || image.dim(0) != 3) {
    throw DimensionError("write_png_rgb: expected [3, H, W], got " + shape_to_string(image.shape()));
  }
  const std::size_t h = image.dim(1), w = image.dim(2), hw = h * w;
  std::vector<std::uint8_t> px(3 * hw);
  for (std::size_t i = 0; i < hw; ++i)
    for (std::size_t c = 0; c < 3; ++c) {
      const double v = std::clamp(image[c * hw + i], 0.0, 1.0);
      px[3 * i + c] = static_cast<std::uint8_t>(std::lround(v * 255.0));
    }
  write_png(path, h, w, PNG_FORMAT_RGB, px);
}

Tensor read_png_rgb(const std::filesystem::path& path) {
  std::size_t h = 0, w = 0;
  const auto px = read_png(path, PNG_FORMAT_RGB, h, w);
  const std::size_t hw = h * w;
  Tensor out({3, h, w});
  for (std::size_t i = 0; i < hw; ++i)
    for (std::size_t c = 0; c < 3; ++c) out[c * hw + i] = px[3 * i + c] / 255.0;
  return out;
}

void write_png_gray(const std::filesystem::path& path, const LabelImage& labels) {
  write_png(path, labels.height, labels.width, PNG_FORMAT_GRAY, labels.data);
}

LabelImage read_png_gray(const std::filesystem::path& path) {
  LabelImage out;
  out.data = read_png(path, PNG_FORMAT_GRAY, out.height, out.width);
  return out;
}

LabelImage read_saliency_png(const std::filesystem::path& path) {
  LabelImage s = read_png_gray(path);
  for (auto& v : s.data) v = v >= 128 ? 1 : 0;
  return s;
}

void write_saliency_png(const std::filesystem::path& path, const LabelImage& saliency) {
  LabelImage s = saliency;
  for (auto& v : s.data) v = v ? 255 : 0;
  write_png_gray(path, s);
}

}  // namespace getam
