#pragma once

#include "nerfedit/camera.hpp"
#include "nerfedit/common.hpp"

#include <filesystem>
#include <vector>

namespace nerfedit {

struct Frame {
  std::filesystem::path image_path;
  std::filesystem::path mask_path;
  /// Camera as written in the manifest (source resolution).
  CameraPose source_camera;
  /// Camera matching `image` after downsampling.
  CameraPose camera;
  Image image;
  GrayImage mask;
};

struct SceneDataset {
  std::vector<Frame> frames;
  Aabb bbox;
  int downsample_factor = 1;

  std::vector<CameraPose> cameras() const;
  int width() const { return frames.empty() ? 0 : frames.front().image.width; }
  int height() const { return frames.empty() ? 0 : frames.front().image.height; }

  /// Checks shared image size, mask presence and camera validity.
  void validate() const;
};

/// Intrinsics for an image box-filtered by `factor`: pixel coordinates scale by 1/factor.
CameraPose downsample_camera(const CameraPose& camera, int factor);

/// Re-orthonormalizes a nearly orthonormal rotation (max error < 1e-3) and
/// throws GeometryError otherwise.
Eigen::Matrix3d orthonormalize_rotation(const Eigen::Matrix3d& rotation);

/// Reads {frames:[{image, mask, transform_matrix, fx, fy, cx, cy}], bbox:{min, max}}.
/// Paths are relative to the manifest's directory; transform_matrix is a 4x4
/// row-major camera-to-world matrix in the x-right, y-down, z-forward camera
/// convention.
SceneDataset load_dataset(const std::filesystem::path& manifest, int downsample_factor = 1);

/// Writes the manifest describing `dataset` (paths relative to `manifest`'s
/// directory, source cameras). Images are not written.
void save_manifest(const SceneDataset& dataset, const std::filesystem::path& manifest);

/// Writes every frame as PNG image + mask under `directory` and a
/// manifest.json that references them. Returns the manifest path.
std::filesystem::path write_dataset(SceneDataset dataset, const std::filesystem::path& directory);

}  // namespace nerfedit
