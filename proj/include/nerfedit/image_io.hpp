#pragma once

#include "nerfedit/common.hpp"

#include <filesystem>

namespace nerfedit {

/// Decodes PNG or JPEG to RGB floats in [0, 1]. Gray sources are replicated,
/// alpha is dropped.
Image load_image(const std::filesystem::path& path);
/// Decodes the first channel of a PNG or JPEG to floats in [0, 1].
GrayImage load_gray(const std::filesystem::path& path);

/// 8-bit PNG; values are clamped to [0, 1] and rounded to [0, 255].
void save_png(const Image& image, const std::filesystem::path& path);
void save_png(const GrayImage& image, const std::filesystem::path& path);

/// Raw float32 dump in NumPy .npy format, shape (H, W, 3) or (H, W).
void save_npy(const Image& image, const std::filesystem::path& path);
void save_npy(const GrayImage& image, const std::filesystem::path& path);

/// Box-filter downsampling by an integer factor; trailing rows/columns that
/// do not fill a whole block are dropped.
template <int Channels>
ImageT<Channels> downsample(const ImageT<Channels>& image, int factor) {
  if (factor < 1) throw IoError("scene-io", "downsample factor must be >= 1");
  if (factor == 1) return image;
  ImageT<Channels> out(image.height / factor, image.width / factor);
  if (out.height == 0 || out.width == 0) throw IoError("scene-io", "downsample factor larger than the image");
  const float norm = 1.0f / static_cast<float>(factor * factor);
  for (int y = 0; y < out.height; ++y) {
    for (int x = 0; x < out.width; ++x) {
      Eigen::Array<float, 1, Channels> sum = Eigen::Array<float, 1, Channels>::Zero();
      for (int dy = 0; dy < factor; ++dy) {
        for (int dx = 0; dx < factor; ++dx) sum += image.pixels.row(image.index(y * factor + dy, x * factor + dx));
      }
      out.pixels.row(out.index(y, x)) = sum * norm;
    }
  }
  return out;
}

}  // namespace nerfedit
