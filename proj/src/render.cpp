#include "nerfedit/render.hpp"

#include <algorithm>

namespace nerfedit {

RaySampling sample_along_ray(const Ray& ray, int n_samples, bool stratified, std::uint64_t seed) {
  if (n_samples < 2) throw GeometryError("renderer", "n_samples must be at least 2");
  RaySampling s;
  s.k.resize(n_samples);
  s.delta.resize(n_samples);
  const double range = std::max(ray.k_far - ray.k_near, 0.0);
  const double bin = range / n_samples;
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> jitter(0.0, 1.0);
  for (int i = 0; i < n_samples; ++i) {
    const double offset = stratified ? jitter(rng) : 0.5;
    s.k[i] = std::min(ray.k_near + (i + offset) * bin, ray.k_far);
    s.delta[i] = bin;
  }
  return s;
}

ImageRender render_image(const FieldParameters<float>& params, const CameraPose& camera, const Aabb& bbox,
                         const RenderMode& mode, const RenderSettings& settings, Eigen::Index chunk) {
  RayBatch rays = generate_rays(camera, default_ray_bounds(bbox));
  clip_to_box(rays, bbox);
  ImageRender out{Image(camera.height, camera.width), GrayImage(camera.height, camera.width),
                  GrayImage(camera.height, camera.width)};
  for (Eigen::Index begin = 0; begin < rays.size(); begin += chunk) {
    const Eigen::Index count = std::min(chunk, rays.size() - begin);
    std::vector<Eigen::Index> idx(static_cast<std::size_t>(count));
    for (Eigen::Index i = 0; i < count; ++i) idx[i] = begin + i;
    RenderSettings chunk_settings = settings;
    chunk_settings.seed = mix_seed(settings.seed, static_cast<std::uint64_t>(begin));
    const auto result = render(params, rays.gather(idx), mode, chunk_settings);
    out.color.pixels.middleRows(begin, count) = result.color;
    out.edit_prob.pixels.middleRows(begin, count) = result.edit_prob;
    out.opacity.pixels.middleRows(begin, count) = result.opacity;
  }
  return out;
}

}  // namespace nerfedit
