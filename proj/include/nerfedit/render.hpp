#pragma once

#include "nerfedit/camera.hpp"
#include "nerfedit/common.hpp"
#include "nerfedit/field.hpp"

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

namespace nerfedit {

enum class RenderModeKind { Full, Foreground, Background };

/// Which density the quadrature integrates: sigma, m~ * sigma, or (1 - m~) * sigma.
struct RenderMode {
  RenderModeKind kind = RenderModeKind::Full;
  /// Composited behind the foreground with the residual transmittance.
  Rgb bg_color = Rgb::Zero();

  static RenderMode full() { return {RenderModeKind::Full, Rgb::Zero()}; }
  static RenderMode foreground(const Rgb& bg) { return {RenderModeKind::Foreground, bg}; }
  static RenderMode background() { return {RenderModeKind::Background, Rgb::Zero()}; }
};

struct RenderSettings {
  int n_samples = 64;
  bool stratified = false;
  double mask_sharpness = 10.0;
  std::uint64_t seed = 0;
};

/// Parameterized sigmoid that pushes the editing probability toward 0 or 1.
template <typename Scalar>
Scalar soft_mask(Scalar m, Scalar sharpness) {
  return detail::sigmoid(sharpness * (m - Scalar(0.5)));
}

template <typename Scalar>
Scalar effective_density(Scalar sigma, Scalar mask, RenderModeKind kind) {
  switch (kind) {
    case RenderModeKind::Foreground:
      return mask * sigma;
    case RenderModeKind::Background:
      return (Scalar(1) - mask) * sigma;
    case RenderModeKind::Full:
      break;
  }
  return sigma;
}

struct RaySampling {
  Eigen::VectorXd k;
  Eigen::VectorXd delta;
};

/// Splits [k_near, k_far] into n equal bins; one sample per bin at the bin
/// midpoint, or uniformly jittered inside the bin when stratified. Every
/// interval equals the bin width so the intervals partition the segment.
RaySampling sample_along_ray(const Ray& ray, int n_samples, bool stratified, std::uint64_t seed);

/// Per-pixel render results.
template <typename Scalar>
struct RenderOutput {
  ArrayX3<Scalar> color;
  ArrayX<Scalar> edit_prob;
  ArrayX<Scalar> opacity;
};

/// Samples and field responses for a batch of rays. Shared by every render
/// mode so full, foreground and background images come from one field pass.
template <typename Scalar>
struct RenderPass {
  RenderSettings settings;
  Eigen::Index ray_count = 0;
  /// Samples of ray r live in [offsets[r], offsets[r + 1]).
  std::vector<Eigen::Index> offsets;
  ArrayX<Scalar> delta;
  FieldSamples<Scalar> field;
  FieldTape<Scalar> tape;
  /// m~ = soft_mask(m) per sample.
  ArrayX<Scalar> mask;

  Eigen::Index sample_count() const { return delta.size(); }
};

/// Gradients of a scalar objective w.r.t. per-sample quantities.
template <typename Scalar>
struct SampleGradients {
  ArrayX<Scalar> sigma;
  Eigen::Array<Scalar, 3, Eigen::Dynamic> color;
  ArrayX<Scalar> mask;

  explicit SampleGradients(Eigen::Index n = 0)
      : sigma(ArrayX<Scalar>::Zero(n)),
        color(Eigen::Array<Scalar, 3, Eigen::Dynamic>::Zero(3, n)),
        mask(ArrayX<Scalar>::Zero(n)) {}
};

/// Samples every ray and evaluates the field once.
template <typename Scalar>
RenderPass<Scalar> trace(const FieldParameters<Scalar>& params, const RayBatch& rays, const RenderSettings& settings) {
  if (settings.n_samples < 2) throw GeometryError("renderer", "n_samples must be at least 2");
  RenderPass<Scalar> pass;
  pass.settings = settings;
  pass.ray_count = rays.size();
  pass.offsets.assign(static_cast<std::size_t>(rays.size()) + 1, 0);
  Eigen::Index total = 0;
  for (Eigen::Index r = 0; r < rays.size(); ++r) {
    pass.offsets[r] = total;
    if (!rays.ray(r).empty()) total += settings.n_samples;
  }
  pass.offsets[rays.size()] = total;

  Matrix3X<Scalar> positions(3, total);
  Matrix3X<Scalar> directions(3, total);
  pass.delta.resize(total);
  for (Eigen::Index r = 0; r < rays.size(); ++r) {
    const Eigen::Index begin = pass.offsets[r];
    if (pass.offsets[r + 1] == begin) continue;
    const Ray ray = rays.ray(r);
    const RaySampling s = sample_along_ray(ray, settings.n_samples, settings.stratified,
                                           mix_seed(settings.seed, static_cast<std::uint64_t>(r)));
    for (int i = 0; i < settings.n_samples; ++i) {
      positions.col(begin + i) = (ray.origin + s.k[i] * ray.direction).template cast<Scalar>();
      directions.col(begin + i) = ray.direction.template cast<Scalar>();
      pass.delta[begin + i] = static_cast<Scalar>(s.delta[i]);
    }
  }
  pass.field = query_batch(params, positions, directions, &pass.tape);
  const Scalar sharpness = static_cast<Scalar>(settings.mask_sharpness);
  pass.mask = pass.field.edit_prob.unaryExpr([sharpness](Scalar m) { return soft_mask(m, sharpness); });
  return pass;
}

/// Quadrature T_i = exp(-sum_{j<i} tau_j delta_j), w_i = T_i (1 - exp(-tau_i delta_i)).
/// The editing probability always uses the full-density weights.
template <typename Scalar>
RenderOutput<Scalar> composite(const RenderPass<Scalar>& pass, const RenderMode& mode) {
  RenderOutput<Scalar> out;
  out.color = ArrayX3<Scalar>::Zero(pass.ray_count, 3);
  out.edit_prob = ArrayX<Scalar>::Zero(pass.ray_count);
  out.opacity = ArrayX<Scalar>::Zero(pass.ray_count);
  const Eigen::Array<Scalar, 1, 3> bg = mode.bg_color.transpose().template cast<Scalar>();
  for (Eigen::Index r = 0; r < pass.ray_count; ++r) {
    Scalar depth(0), depth_full(0);
    Scalar transmittance(1), transmittance_full(1);
    Eigen::Array<Scalar, 1, 3> color = Eigen::Array<Scalar, 1, 3>::Zero();
    Scalar edit(0);
    for (Eigen::Index i = pass.offsets[r]; i < pass.offsets[r + 1]; ++i) {
      const Scalar sigma = pass.field.sigma[i];
      const Scalar tau = effective_density(sigma, pass.mask[i], mode.kind);
      const Scalar w = transmittance * -std::expm1(-tau * pass.delta[i]);
      color += w * pass.field.color.col(i).transpose();
      depth += tau * pass.delta[i];
      transmittance = std::exp(-depth);

      const Scalar w_full = transmittance_full * -std::expm1(-sigma * pass.delta[i]);
      edit += w_full * pass.mask[i];
      depth_full += sigma * pass.delta[i];
      transmittance_full = std::exp(-depth_full);
    }
    if (mode.kind == RenderModeKind::Foreground) color += transmittance * bg;
    if (!color.allFinite()) throw DivergenceError("renderer", "non-finite density during compositing");
    out.color.row(r) = color;
    out.edit_prob[r] = edit;
    out.opacity[r] = Scalar(1) - transmittance;
  }
  return out;
}

/// Accumulates d(objective)/d(sample quantities) for an objective whose
/// gradient w.r.t. the composited color is `d_color` (rays x 3) and w.r.t.
/// the rendered editing probability is `d_edit` (may be empty).
template <typename Scalar>
void composite_backward(const RenderPass<Scalar>& pass, const RenderMode& mode, const ArrayX3<Scalar>& d_color,
                        const ArrayX<Scalar>& d_edit, SampleGradients<Scalar>& grads) {
  if (d_color.rows() != pass.ray_count || (d_edit.size() != 0 && d_edit.size() != pass.ray_count)) {
    throw ShapeError("renderer", "upstream image gradient does not match the ray batch");
  }
  if (grads.sigma.size() != pass.sample_count()) throw ShapeError("renderer", "sample gradient buffer size mismatch");
  const Eigen::Array<Scalar, 1, 3> bg = mode.bg_color.transpose().template cast<Scalar>();
  std::vector<Scalar> weight, trans_next;
  for (Eigen::Index r = 0; r < pass.ray_count; ++r) {
    const Eigen::Index begin = pass.offsets[r];
    const Eigen::Index n = pass.offsets[r + 1] - begin;
    if (n == 0) continue;
    weight.resize(n);
    trans_next.resize(n);

    const Eigen::Array<Scalar, 1, 3> g = d_color.row(r);
    if ((g != Scalar(0)).any()) {
      Scalar depth(0), transmittance(1);
      for (Eigen::Index i = 0; i < n; ++i) {
        const Scalar tau = effective_density(pass.field.sigma[begin + i], pass.mask[begin + i], mode.kind);
        weight[i] = transmittance * -std::expm1(-tau * pass.delta[begin + i]);
        depth += tau * pass.delta[begin + i];
        transmittance = std::exp(-depth);
        trans_next[i] = transmittance;
      }
      // behind = g . (sum_{i>k} w_i c_i + T_{n+1} bg)
      Scalar behind = mode.kind == RenderModeKind::Foreground ? (g * bg).sum() * transmittance : Scalar(0);
      for (Eigen::Index i = n - 1; i >= 0; --i) {
        const Eigen::Index s = begin + i;
        const Scalar gc = (g * pass.field.color.col(s).transpose()).sum();
        const Scalar d_tau = pass.delta[s] * (trans_next[i] * gc - behind);
        behind += weight[i] * gc;
        grads.color.col(s) += weight[i] * g.transpose();
        const Scalar sigma = pass.field.sigma[s];
        const Scalar m = pass.mask[s];
        switch (mode.kind) {
          case RenderModeKind::Full:
            grads.sigma[s] += d_tau;
            break;
          case RenderModeKind::Foreground:
            grads.sigma[s] += m * d_tau;
            grads.mask[s] += sigma * d_tau;
            break;
          case RenderModeKind::Background:
            grads.sigma[s] += (Scalar(1) - m) * d_tau;
            grads.mask[s] -= sigma * d_tau;
            break;
        }
      }
    }

    if (d_edit.size() == 0 || d_edit[r] == Scalar(0)) continue;
    const Scalar ge = d_edit[r];
    Scalar depth(0), transmittance(1);
    for (Eigen::Index i = 0; i < n; ++i) {
      const Scalar sigma = pass.field.sigma[begin + i];
      weight[i] = transmittance * -std::expm1(-sigma * pass.delta[begin + i]);
      depth += sigma * pass.delta[begin + i];
      transmittance = std::exp(-depth);
      trans_next[i] = transmittance;
    }
    Scalar behind(0);
    for (Eigen::Index i = n - 1; i >= 0; --i) {
      const Eigen::Index s = begin + i;
      const Scalar gm = ge * pass.mask[s];
      grads.sigma[s] += pass.delta[s] * (trans_next[i] * gm - behind);
      behind += weight[i] * gm;
      grads.mask[s] += weight[i] * ge;
    }
  }
}

/// Pulls per-sample gradients through the soft mask and the field.
template <typename Scalar>
void backward(const FieldParameters<Scalar>& params, const RenderPass<Scalar>& pass,
              const SampleGradients<Scalar>& sample_grads, FieldParameters<Scalar>& grads) {
  if (pass.sample_count() == 0) return;
  const Scalar sharpness = static_cast<Scalar>(pass.settings.mask_sharpness);
  const ArrayX<Scalar> d_edit = sample_grads.mask * sharpness * pass.mask * (Scalar(1) - pass.mask);
  backward(params, pass.tape, pass.field, sample_grads.sigma, sample_grads.color, d_edit, grads);
}

template <typename Scalar>
RenderOutput<Scalar> render(const FieldParameters<Scalar>& params, const RayBatch& rays, const RenderMode& mode,
                            const RenderSettings& settings) {
  return composite(trace(params, rays, settings), mode);
}

/// Renders in chunks of rays to bound memory; returns the color image and the
/// editing-probability map.
struct ImageRender {
  Image color;
  GrayImage edit_prob;
  GrayImage opacity;
};

ImageRender render_image(const FieldParameters<float>& params, const CameraPose& camera, const Aabb& bbox,
                         const RenderMode& mode, const RenderSettings& settings, Eigen::Index chunk = 8192);

}  // namespace nerfedit
