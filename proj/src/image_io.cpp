#include "nerfedit/image_io.hpp"

#include <jpeglib.h>
#include <png.h>

#include <algorithm>
#include <cmath>
#include <csetjmp>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <memory>
#include <vector>

namespace nerfedit {

namespace {

struct Decoded {
  int width = 0, height = 0, channels = 0;
  int max_value = 255;
  std::vector<std::uint16_t> samples;
};

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

FilePtr open_file(const std::filesystem::path& path, const char* mode) {
  FilePtr f(std::fopen(path.c_str(), mode));
  if (!f) throw IoError("scene-io", "cannot open " + path.string());
  return f;
}

Decoded decode_png(const std::filesystem::path& path) {
  png_image image;
  std::memset(&image, 0, sizeof(image));
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&image, path.c_str())) {
    throw IoError("scene-io", "cannot decode PNG " + path.string() + ": " + image.message);
  }
  const bool color = (image.format & PNG_FORMAT_FLAG_COLOR) != 0;
  image.format = color ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  Decoded out;
  out.width = static_cast<int>(image.width);
  out.height = static_cast<int>(image.height);
  out.channels = color ? 3 : 1;
  std::vector<std::uint8_t> bytes(static_cast<std::size_t>(out.width) * out.height * out.channels);
  if (!png_image_finish_read(&image, nullptr, bytes.data(), 0, nullptr)) {
    throw IoError("scene-io", "cannot decode PNG " + path.string() + ": " + image.message);
  }
  out.samples.assign(bytes.begin(), bytes.end());
  return out;
}

struct JpegErrorManager {
  jpeg_error_mgr base;
  std::jmp_buf jump;
};

void jpeg_error_exit(j_common_ptr info) {
  auto* manager = reinterpret_cast<JpegErrorManager*>(info->err);
  std::longjmp(manager->jump, 1);
}

Decoded decode_jpeg(const std::filesystem::path& path) {
  FilePtr file = open_file(path, "rb");
  jpeg_decompress_struct info;
  JpegErrorManager error;
  info.err = jpeg_std_error(&error.base);
  error.base.error_exit = jpeg_error_exit;
  Decoded out;
  if (setjmp(error.jump)) {
    jpeg_destroy_decompress(&info);
    throw IoError("scene-io", "cannot decode JPEG " + path.string());
  }
  jpeg_create_decompress(&info);
  jpeg_stdio_src(&info, file.get());
  jpeg_read_header(&info, TRUE);
  jpeg_start_decompress(&info);
  out.width = static_cast<int>(info.output_width);
  out.height = static_cast<int>(info.output_height);
  out.channels = info.output_components;
  std::vector<JSAMPLE> row(static_cast<std::size_t>(out.width) * out.channels);
  out.samples.reserve(row.size() * out.height);
  while (info.output_scanline < info.output_height) {
    JSAMPROW rows[1] = {row.data()};
    jpeg_read_scanlines(&info, rows, 1);
    out.samples.insert(out.samples.end(), row.begin(), row.end());
  }
  jpeg_finish_decompress(&info);
  jpeg_destroy_decompress(&info);
  if (out.channels != 1 && out.channels != 3) throw IoError("scene-io", "unsupported JPEG layout " + path.string());
  return out;
}

Decoded decode(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw IoError("scene-io", "missing file " + path.string());
  std::ifstream in(path, std::ios::binary);
  unsigned char magic[4] = {};
  in.read(reinterpret_cast<char*>(magic), 4);
  if (magic[0] == 0x89 && magic[1] == 'P' && magic[2] == 'N' && magic[3] == 'G') return decode_png(path);
  if (magic[0] == 0xFF && magic[1] == 0xD8) return decode_jpeg(path);
  throw IoError("scene-io", "unsupported image format " + path.string());
}

std::uint8_t to_byte(float v) {
  const float c = std::isfinite(v) ? std::clamp(v, 0.0f, 1.0f) : 0.0f;
  return static_cast<std::uint8_t>(std::lround(c * 255.0f));
}

void write_png(const std::filesystem::path& path, int width, int height, int channels,
               const std::vector<std::uint8_t>& bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  png_image image;
  std::memset(&image, 0, sizeof(image));
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(width);
  image.height = static_cast<png_uint_32>(height);
  image.format = channels == 3 ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  if (!png_image_write_to_file(&image, path.c_str(), 0, bytes.data(), 0, nullptr)) {
    throw IoError("scene-io", "cannot write PNG " + path.string() + ": " + image.message);
  }
}

template <int Channels>
void write_npy(const ImageT<Channels>& image, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::string header = "{'descr': '<f4', 'fortran_order': False, 'shape': (" + std::to_string(image.height) + ", " +
                       std::to_string(image.width) + (Channels == 1 ? "" : ", 3") + "), }";
  const std::size_t preamble = 10;
  const std::size_t total = ((preamble + header.size() + 1 + 63) / 64) * 64;
  header.append(total - preamble - header.size() - 1, ' ');
  header.push_back('\n');
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("scene-io", "cannot write " + path.string());
  out.write("\x93NUMPY\x01\x00", 8);
  const std::uint16_t length = static_cast<std::uint16_t>(header.size());
  out.put(static_cast<char>(length & 0xFF));
  out.put(static_cast<char>(length >> 8));
  out.write(header.data(), static_cast<std::streamsize>(header.size()));
  out.write(reinterpret_cast<const char*>(image.pixels.data()),
            static_cast<std::streamsize>(image.pixels.size() * sizeof(float)));
}

}  // namespace

Image load_image(const std::filesystem::path& path) {
  const Decoded d = decode(path);
  Image image(d.height, d.width);
  const float max_value = static_cast<float>(d.max_value);
  for (Eigen::Index i = 0; i < image.size(); ++i) {
    for (int c = 0; c < 3; ++c) {
      const int src = d.channels == 3 ? c : 0;
      image.pixels(i, c) = static_cast<float>(d.samples[static_cast<std::size_t>(i) * d.channels + src]) / max_value;
    }
  }
  return image;
}

GrayImage load_gray(const std::filesystem::path& path) {
  const Decoded d = decode(path);
  GrayImage image(d.height, d.width);
  const float max_value = static_cast<float>(d.max_value);
  for (Eigen::Index i = 0; i < image.size(); ++i) {
    image.pixels[i] = static_cast<float>(d.samples[static_cast<std::size_t>(i) * d.channels]) / max_value;
  }
  return image;
}

void save_png(const Image& image, const std::filesystem::path& path) {
  std::vector<std::uint8_t> bytes(static_cast<std::size_t>(image.pixels.size()));
  for (std::size_t i = 0; i < bytes.size(); ++i) bytes[i] = to_byte(image.pixels.data()[i]);
  write_png(path, image.width, image.height, 3, bytes);
}

void save_png(const GrayImage& image, const std::filesystem::path& path) {
  std::vector<std::uint8_t> bytes(static_cast<std::size_t>(image.pixels.size()));
  for (std::size_t i = 0; i < bytes.size(); ++i) bytes[i] = to_byte(image.pixels.data()[i]);
  write_png(path, image.width, image.height, 1, bytes);
}

void save_npy(const Image& image, const std::filesystem::path& path) { write_npy(image, path); }
void save_npy(const GrayImage& image, const std::filesystem::path& path) { write_npy(image, path); }

}  // namespace nerfedit
