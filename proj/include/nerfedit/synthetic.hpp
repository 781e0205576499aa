#pragma once

#include "nerfedit/camera.hpp"
#include "nerfedit/dataset.hpp"

#include <optional>

namespace nerfedit {

/// Sphere resting on a square backdrop plane (z-up world), viewed from a ring
/// of cameras. Shading is flat, so ground truth is exact.
struct SyntheticSceneSpec {
  Eigen::Vector3d sphere_center{0.0, 0.0, 0.5};
  double sphere_radius = 0.5;
  Rgb sphere_color{0.2f, 0.4f, 0.85f};
  bool with_plane = true;
  double plane_height = 0.0;
  double plane_half_extent = 1.25;
  Rgb plane_color{0.85f, 0.8f, 0.6f};
  Rgb background{0.0f, 0.0f, 0.0f};

  int n_views = 20;
  int width = 64;
  int height = 64;
  double fov_deg = 50.0;
  double ring_radius = 3.5;
  double ring_height = 2.0;
  /// Uniform perturbation of camera centers (meters); 0 disables the seed.
  double jitter = 0.0;

  Aabb bbox{{-1.5, -1.5, -0.5}, {1.5, 1.5, 1.5}};

  /// Throws GeometryError on degenerate geometry.
  void validate() const;
};

enum class SyntheticHit { None, Sphere, Plane };

struct SyntheticRayHit {
  SyntheticHit kind = SyntheticHit::None;
  double k = 0.0;
};

/// Closest intersection of an unbounded ray with the scene.
SyntheticRayHit intersect_synthetic(const SyntheticSceneSpec& spec, const Eigen::Vector3d& origin,
                                    const Eigen::Vector3d& direction);

struct SyntheticRenderOptions {
  std::optional<Rgb> sphere_color;
  /// Only the sphere, composited over `bg_color`.
  bool foreground_only = false;
  Rgb bg_color = Rgb::Zero();
};

Image render_synthetic(const SyntheticSceneSpec& spec, const CameraPose& camera,
                       const SyntheticRenderOptions& options = {});

/// 1 where the primary ray through the pixel center first hits the sphere.
GrayImage synthetic_mask(const SyntheticSceneSpec& spec, const CameraPose& camera);

std::vector<CameraPose> synthetic_cameras(const SyntheticSceneSpec& spec, std::uint64_t seed);

SceneDataset make_synthetic_scene(const SyntheticSceneSpec& spec, std::uint64_t seed);

}  // namespace nerfedit
