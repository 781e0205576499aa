#include "nerfedit/camera.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

namespace nerfedit {

void CameraPose::validate() const {
  if (!(fx > 0.0) || !(fy > 0.0)) throw GeometryError("renderer", "focal lengths must be positive");
  if (width <= 0 || height <= 0) throw GeometryError("renderer", "image size must be positive");
  if (!rotation.allFinite() || !translation.allFinite()) throw GeometryError("renderer", "non-finite extrinsics");
  const double det = rotation.determinant();
  const double ortho = (rotation.transpose() * rotation - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff();
  if (std::abs(det - 1.0) >= 1e-5 || ortho >= 1e-5) {
    std::ostringstream msg;
    msg << "singular or non-orthonormal extrinsic rotation (det " << det << ", orthogonality error " << ortho << ")";
    throw GeometryError("renderer", msg.str());
  }
}

CameraPose CameraPose::resized(int new_width, int new_height) const {
  CameraPose out = *this;
  const double sx = static_cast<double>(new_width) / width;
  const double sy = static_cast<double>(new_height) / height;
  out.fx *= sx;
  out.cx *= sx;
  out.fy *= sy;
  out.cy *= sy;
  out.width = new_width;
  out.height = new_height;
  return out;
}

CameraPose CameraPose::look_at(const Eigen::Vector3d& eye, const Eigen::Vector3d& target, const Eigen::Vector3d& up,
                               double fx, double fy, int width, int height) {
  const Eigen::Vector3d forward = (target - eye).normalized();
  const Eigen::Vector3d right_raw = forward.cross(up);
  if (right_raw.norm() < 1e-12) throw GeometryError("renderer", "look_at: view direction parallel to up");
  const Eigen::Vector3d right = right_raw.normalized();
  const Eigen::Vector3d down = forward.cross(right);
  CameraPose camera;
  camera.rotation.col(0) = right;
  camera.rotation.col(1) = down;
  camera.rotation.col(2) = forward;
  camera.translation = eye;
  camera.fx = fx;
  camera.fy = fy;
  camera.cx = 0.5 * width;
  camera.cy = 0.5 * height;
  camera.width = width;
  camera.height = height;
  return camera;
}

RayBatch RayBatch::gather(const std::vector<Eigen::Index>& indices) const {
  RayBatch out;
  out.resize(static_cast<Eigen::Index>(indices.size()));
  for (std::size_t i = 0; i < indices.size(); ++i) out.set(static_cast<Eigen::Index>(i), ray(indices[i]));
  return out;
}

RayBatch RayBatch::concat(const std::vector<RayBatch>& parts) {
  Eigen::Index total = 0;
  for (const auto& p : parts) total += p.size();
  RayBatch out;
  out.resize(total);
  Eigen::Index offset = 0;
  for (const auto& p : parts) {
    out.origins.middleCols(offset, p.size()) = p.origins;
    out.directions.middleCols(offset, p.size()) = p.directions;
    out.k_near.segment(offset, p.size()) = p.k_near;
    out.k_far.segment(offset, p.size()) = p.k_far;
    offset += p.size();
  }
  return out;
}

RayBounds default_ray_bounds(const Aabb& bbox) {
  const double diag = bbox.diagonal();
  return {0.05 * diag, 1.5 * diag};
}

Ray pixel_ray(const CameraPose& camera, const Eigen::Vector2d& pixel, const RayBounds& bounds) {
  const Eigen::Vector3d local((pixel.x() - camera.cx) / camera.fx, (pixel.y() - camera.cy) / camera.fy, 1.0);
  Ray ray;
  ray.origin = camera.translation;
  ray.direction = (camera.rotation * local).normalized();
  ray.k_near = bounds.k_near;
  ray.k_far = bounds.k_far;
  return ray;
}

RayBatch generate_rays(const CameraPose& camera, const std::vector<Eigen::Vector2i>& pixels, const RayBounds& bounds) {
  camera.validate();
  RayBatch batch;
  batch.resize(static_cast<Eigen::Index>(pixels.size()));
  for (std::size_t i = 0; i < pixels.size(); ++i) {
    const Eigen::Vector2i& px = pixels[i];
    if (px.x() < 0 || px.y() < 0 || px.x() >= camera.width || px.y() >= camera.height) {
      throw GeometryError("renderer", "pixel outside image bounds");
    }
    batch.set(static_cast<Eigen::Index>(i), pixel_ray(camera, px.cast<double>().array() + 0.5, bounds));
  }
  return batch;
}

RayBatch generate_rays(const CameraPose& camera, const RayBounds& bounds) {
  std::vector<Eigen::Vector2i> pixels;
  pixels.reserve(static_cast<std::size_t>(camera.width) * camera.height);
  for (int y = 0; y < camera.height; ++y) {
    for (int x = 0; x < camera.width; ++x) pixels.emplace_back(x, y);
  }
  return generate_rays(camera, pixels, bounds);
}

void clip_to_box(RayBatch& rays, const Aabb& bbox) {
  for (Eigen::Index i = 0; i < rays.size(); ++i) {
    double t0 = rays.k_near[i];
    double t1 = rays.k_far[i];
    for (int axis = 0; axis < 3; ++axis) {
      const double o = rays.origins(axis, i);
      const double d = rays.directions(axis, i);
      if (std::abs(d) < 1e-15) {
        if (o < bbox.min[axis] || o > bbox.max[axis]) t1 = t0;
        continue;
      }
      double a = (bbox.min[axis] - o) / d;
      double b = (bbox.max[axis] - o) / d;
      if (a > b) std::swap(a, b);
      t0 = std::max(t0, a);
      t1 = std::min(t1, b);
    }
    if (!(t1 > t0)) t1 = t0;
    rays.k_near[i] = t0;
    rays.k_far[i] = t1;
  }
}

Eigen::Vector2d project(const CameraPose& camera, const Eigen::Vector3d& world) {
  const Eigen::Vector3d local = camera.rotation.transpose() * (world - camera.translation);
  return {camera.fx * local.x() / local.z() + camera.cx, camera.fy * local.y() / local.z() + camera.cy};
}

}  // namespace nerfedit
