#include "nerfedit/synthetic.hpp"

#include <cmath>
#include <limits>
#include <numbers>
#include <random>

namespace nerfedit {

void SyntheticSceneSpec::validate() const {
  if (!(sphere_radius > 0.0) || !sphere_center.allFinite()) throw GeometryError("scene-io", "sphere is degenerate");
  if (!bbox.valid()) throw GeometryError("scene-io", "scene bbox is empty");
  const Eigen::Vector3d r = Eigen::Vector3d::Constant(sphere_radius);
  if (!bbox.contains(sphere_center - r) || !bbox.contains(sphere_center + r)) {
    throw GeometryError("scene-io", "sphere does not fit inside the bbox");
  }
  if (with_plane && !(plane_half_extent > 0.0)) throw GeometryError("scene-io", "plane extent must be positive");
  if (n_views < 2) throw GeometryError("scene-io", "need at least 2 views");
  if (width <= 0 || height <= 0) throw GeometryError("scene-io", "image size must be positive");
  if (!(fov_deg > 0.0 && fov_deg < 180.0)) throw GeometryError("scene-io", "field of view must be in (0, 180)");
  const double distance = std::hypot(ring_radius, ring_height - sphere_center.z());
  if (!(distance > sphere_radius * 1.01 + jitter)) throw GeometryError("scene-io", "cameras inside the sphere");
  if (!(ring_radius > 0.0)) throw GeometryError("scene-io", "ring radius must be positive");
}

SyntheticRayHit intersect_synthetic(const SyntheticSceneSpec& spec, const Eigen::Vector3d& origin,
                                    const Eigen::Vector3d& direction) {
  SyntheticRayHit hit;
  double best = std::numeric_limits<double>::infinity();

  const Eigen::Vector3d oc = origin - spec.sphere_center;
  const double a = direction.squaredNorm();
  const double b = oc.dot(direction);
  const double c = oc.squaredNorm() - spec.sphere_radius * spec.sphere_radius;
  const double disc = b * b - a * c;
  if (disc >= 0.0) {
    const double root = std::sqrt(disc);
    double k = (-b - root) / a;
    if (k <= 0.0) k = (-b + root) / a;
    if (k > 0.0 && k < best) {
      best = k;
      hit = {SyntheticHit::Sphere, k};
    }
  }
  if (spec.with_plane && std::abs(direction.z()) > 1e-12) {
    const double k = (spec.plane_height - origin.z()) / direction.z();
    if (k > 0.0 && k < best) {
      const Eigen::Vector3d p = origin + k * direction;
      if (std::abs(p.x()) <= spec.plane_half_extent && std::abs(p.y()) <= spec.plane_half_extent) {
        hit = {SyntheticHit::Plane, k};
      }
    }
  }
  return hit;
}

Image render_synthetic(const SyntheticSceneSpec& spec, const CameraPose& camera,
                       const SyntheticRenderOptions& options) {
  camera.validate();
  const Rgb sphere = options.sphere_color.value_or(spec.sphere_color);
  SyntheticSceneSpec scene = spec;
  if (options.foreground_only) scene.with_plane = false;
  const Rgb empty = options.foreground_only ? options.bg_color : spec.background;
  Image image(camera.height, camera.width);
  for (int y = 0; y < camera.height; ++y) {
    for (int x = 0; x < camera.width; ++x) {
      const Ray ray = pixel_ray(camera, {x + 0.5, y + 0.5}, {0.0, 1.0});
      const SyntheticHit hit = intersect_synthetic(scene, ray.origin, ray.direction).kind;
      const Rgb color = hit == SyntheticHit::Sphere ? sphere : hit == SyntheticHit::Plane ? spec.plane_color : empty;
      image.pixels.row(image.index(y, x)) = color.transpose();
    }
  }
  return image;
}

GrayImage synthetic_mask(const SyntheticSceneSpec& spec, const CameraPose& camera) {
  camera.validate();
  GrayImage mask(camera.height, camera.width);
  for (int y = 0; y < camera.height; ++y) {
    for (int x = 0; x < camera.width; ++x) {
      const Ray ray = pixel_ray(camera, {x + 0.5, y + 0.5}, {0.0, 1.0});
      mask.pixels[mask.index(y, x)] =
          intersect_synthetic(spec, ray.origin, ray.direction).kind == SyntheticHit::Sphere ? 1.0f : 0.0f;
    }
  }
  return mask;
}

std::vector<CameraPose> synthetic_cameras(const SyntheticSceneSpec& spec, std::uint64_t seed) {
  spec.validate();
  const double focal = 0.5 * spec.width / std::tan(0.5 * spec.fov_deg * std::numbers::pi / 180.0);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> jitter(-spec.jitter, spec.jitter);
  std::vector<CameraPose> cameras;
  for (int i = 0; i < spec.n_views; ++i) {
    const double angle = 2.0 * std::numbers::pi * i / spec.n_views;
    Eigen::Vector3d eye(spec.ring_radius * std::cos(angle), spec.ring_radius * std::sin(angle), spec.ring_height);
    if (spec.jitter > 0.0) {
      for (int a = 0; a < 3; ++a) eye[a] += jitter(rng);
    }
    cameras.push_back(CameraPose::look_at(eye, spec.sphere_center, Eigen::Vector3d::UnitZ(), focal, focal,
                                          spec.width, spec.height));
  }
  return cameras;
}

SceneDataset make_synthetic_scene(const SyntheticSceneSpec& spec, std::uint64_t seed) {
  SceneDataset dataset;
  dataset.bbox = spec.bbox;
  for (const CameraPose& camera : synthetic_cameras(spec, seed)) {
    Frame frame;
    frame.source_camera = camera;
    frame.camera = camera;
    frame.image = render_synthetic(spec, camera);
    frame.mask = synthetic_mask(spec, camera);
    dataset.frames.push_back(std::move(frame));
  }
  dataset.validate();
  return dataset;
}

}  // namespace nerfedit
