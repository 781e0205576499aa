#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <stdexcept>
#include <string>
#include <utility>

namespace nerfedit {

template <typename Scalar>
using Vector3 = Eigen::Matrix<Scalar, 3, 1>;
template <typename Scalar>
using MatrixX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <typename Scalar>
using VectorX = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
template <typename Scalar>
using Matrix3X = Eigen::Matrix<Scalar, 3, Eigen::Dynamic>;
template <typename Scalar>
using ArrayX = Eigen::Array<Scalar, Eigen::Dynamic, 1>;
// One row per pixel, RGB interleaved; the memory layout is H x W x 3 row-major.
template <typename Scalar>
using ArrayX3 = Eigen::Array<Scalar, Eigen::Dynamic, 3, Eigen::RowMajor>;

using Rgb = Eigen::Array3f;

/// Derives an independent 64-bit seed for `stream` (splitmix64 finalizer).
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ull * (stream + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

/// Base class for every error raised by the library. `module()` names the
/// component that failed so the command line can report it.
class Error : public std::runtime_error {
 public:
  Error(std::string module, const std::string& what)
      : std::runtime_error(what), module_(std::move(module)) {}
  const std::string& module() const noexcept { return module_; }

 private:
  std::string module_;
};

class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& what) : Error("config", what) {}
};

class IoError : public Error {
 public:
  IoError(std::string module, const std::string& what) : Error(std::move(module), what) {}
};

class ShapeError : public Error {
 public:
  ShapeError(std::string module, const std::string& what) : Error(std::move(module), what) {}
};

class GeometryError : public Error {
 public:
  GeometryError(std::string module, const std::string& what) : Error(std::move(module), what) {}
};

/// Non-finite density, loss, gradient or parameter.
class DivergenceError : public Error {
 public:
  DivergenceError(std::string module, const std::string& what) : Error(std::move(module), what) {}
};

/// Axis-aligned box in world space (meters).
struct Aabb {
  Eigen::Vector3d min{-1.0, -1.0, -1.0};
  Eigen::Vector3d max{1.0, 1.0, 1.0};

  bool valid() const { return (min.array() < max.array()).all() && min.allFinite() && max.allFinite(); }
  Eigen::Vector3d extent() const { return max - min; }
  Eigen::Vector3d center() const { return 0.5 * (min + max); }
  double diagonal() const { return extent().norm(); }
  bool contains(const Eigen::Vector3d& p) const {
    return (p.array() >= min.array()).all() && (p.array() <= max.array()).all();
  }
  bool operator==(const Aabb&) const = default;
};

/// Dense image with `Channels` floats per pixel, rows of pixels in scanline order.
template <int Channels>
struct ImageT {
  using Storage = Eigen::Array<float, Eigen::Dynamic, Channels, (Channels == 1 ? Eigen::ColMajor : Eigen::RowMajor)>;

  int height = 0;
  int width = 0;
  Storage pixels;

  ImageT() = default;
  ImageT(int h, int w) : height(h), width(w), pixels(Storage::Zero(static_cast<Eigen::Index>(h) * w, Channels)) {}

  static ImageT constant(int h, int w, const Eigen::Array<float, 1, Channels>& value) {
    ImageT image(h, w);
    image.pixels.rowwise() = value;
    return image;
  }

  Eigen::Index size() const { return static_cast<Eigen::Index>(height) * width; }
  Eigen::Index index(int row, int col) const { return static_cast<Eigen::Index>(row) * width + col; }
  bool same_shape(const ImageT& other) const { return height == other.height && width == other.width; }
};

using Image = ImageT<3>;
using GrayImage = ImageT<1>;

}  // namespace nerfedit
