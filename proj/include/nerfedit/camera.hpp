#pragma once

#include "nerfedit/common.hpp"

#include <vector>

namespace nerfedit {

/// Pinhole camera. `rotation` maps camera axes to world axes (columns are the
/// camera x-right, y-down, z-forward axes) and `translation` is the camera
/// center in world coordinates.
struct CameraPose {
  double fx = 1.0, fy = 1.0, cx = 0.0, cy = 0.0;
  Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
  Eigen::Vector3d translation = Eigen::Vector3d::Zero();
  int width = 1, height = 1;

  /// Throws GeometryError on non-positive intrinsics or a rotation that is not
  /// orthonormal with determinant one.
  void validate() const;

  Eigen::Vector3d center() const { return translation; }
  Eigen::Vector3d optical_axis() const { return rotation.col(2); }

  /// Same view at a different image size; intrinsics scale with the image.
  CameraPose resized(int new_width, int new_height) const;

  /// Camera at `eye` looking at `target`; `up` is the world up direction.
  static CameraPose look_at(const Eigen::Vector3d& eye, const Eigen::Vector3d& target, const Eigen::Vector3d& up,
                            double fx, double fy, int width, int height);

  bool operator==(const CameraPose&) const = default;
};

/// World-space ray segment r(k) = origin + k * direction for k in [k_near, k_far].
struct Ray {
  Eigen::Vector3d origin = Eigen::Vector3d::Zero();
  Eigen::Vector3d direction = Eigen::Vector3d::UnitZ();
  double k_near = 0.0;
  double k_far = 1.0;

  bool empty() const { return !(k_far > k_near); }
};

struct RayBatch {
  Eigen::Matrix3Xd origins;
  Eigen::Matrix3Xd directions;
  Eigen::VectorXd k_near;
  Eigen::VectorXd k_far;

  Eigen::Index size() const { return origins.cols(); }
  Ray ray(Eigen::Index i) const { return {origins.col(i), directions.col(i), k_near[i], k_far[i]}; }
  void resize(Eigen::Index n) {
    origins.resize(3, n);
    directions.resize(3, n);
    k_near.resize(n);
    k_far.resize(n);
  }
  void set(Eigen::Index i, const Ray& r) {
    origins.col(i) = r.origin;
    directions.col(i) = r.direction;
    k_near[i] = r.k_near;
    k_far[i] = r.k_far;
  }
  /// Rays at the given indices, in order.
  RayBatch gather(const std::vector<Eigen::Index>& indices) const;
  static RayBatch concat(const std::vector<RayBatch>& parts);
};

struct RayBounds {
  double k_near = 0.0;
  double k_far = 1.0;
};

/// 5% to 150% of the box diagonal.
RayBounds default_ray_bounds(const Aabb& bbox);

/// Ray through a continuous pixel coordinate (pixel i spans [i, i+1)).
Ray pixel_ray(const CameraPose& camera, const Eigen::Vector2d& pixel, const RayBounds& bounds);

/// Rays through the centers of the listed integer pixels (column x, row y).
RayBatch generate_rays(const CameraPose& camera, const std::vector<Eigen::Vector2i>& pixels,
                       const RayBounds& bounds);

/// Rays through every pixel center in scanline order.
RayBatch generate_rays(const CameraPose& camera, const RayBounds& bounds);

/// Tightens each ray to the part that lies inside `bbox`. Rays that miss the
/// box get an empty interval and render as empty space.
void clip_to_box(RayBatch& rays, const Aabb& bbox);

/// Projects a world point to continuous pixel coordinates.
Eigen::Vector2d project(const CameraPose& camera, const Eigen::Vector3d& world);

}  // namespace nerfedit
