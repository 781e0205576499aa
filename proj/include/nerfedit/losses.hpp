#pragma once

#include "nerfedit/render.hpp"

#include <algorithm>
#include <cmath>

namespace nerfedit {

template <typename Scalar>
struct ReconstructionLosses {
  Scalar mse{};
  Scalar bce{};
  /// d(mse)/d(color)
  ArrayX3<Scalar> d_color;
  /// d(bce)/d(edit_prob); zero where the prediction was clamped.
  ArrayX<Scalar> d_edit;
};

/// Photometric MSE over all channels and BCE between the rendered editing
/// probability (clamped to [eps, 1 - eps]) and a binary mask.
template <typename Scalar>
ReconstructionLosses<Scalar> reconstruction_losses(const RenderOutput<Scalar>& render, const ArrayX3<Scalar>& gt_color,
                                                   const ArrayX<Scalar>& gt_mask, double eps) {
  const Eigen::Index n = render.color.rows();
  if (gt_color.rows() != n || gt_mask.size() != n || render.edit_prob.size() != n) {
    throw ShapeError("editor", "reconstruction loss: render and ground truth differ in size");
  }
  if (((gt_mask != Scalar(0)) && (gt_mask != Scalar(1))).any()) {
    throw ShapeError("editor", "reconstruction loss: mask must be binary");
  }
  ReconstructionLosses<Scalar> out;
  const ArrayX3<Scalar> diff = render.color - gt_color;
  out.mse = diff.square().mean();
  out.d_color = diff * (Scalar(2) / static_cast<Scalar>(diff.size()));

  const Scalar lo = static_cast<Scalar>(eps);
  const Scalar hi = Scalar(1) - lo;
  out.d_edit.resize(n);
  double total = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const Scalar raw = render.edit_prob[i];
    const Scalar p = std::clamp(raw, lo, hi);
    const Scalar y = gt_mask[i];
    total -= static_cast<double>(y * std::log(p) + (Scalar(1) - y) * std::log(Scalar(1) - p));
    const bool clamped = !(raw > lo && raw < hi);
    out.d_edit[i] = clamped ? Scalar(0) : (p - y) / (p * (Scalar(1) - p)) / static_cast<Scalar>(n);
  }
  out.bce = static_cast<Scalar>(total / static_cast<double>(n));
  return out;
}

/// Adds `scale` * d(MSE(background(pass), reference))/d(samples) to `grads`
/// and returns the MSE.
template <typename Scalar>
Scalar accumulate_background_loss(const RenderPass<Scalar>& pass, const RenderOutput<Scalar>& background,
                                  const ArrayX3<Scalar>& reference, Scalar scale, SampleGradients<Scalar>& grads) {
  if (reference.rows() != background.color.rows()) {
    throw ShapeError("editor", "background loss: reference render differs in size");
  }
  const ArrayX3<Scalar> diff = background.color - reference;
  const Scalar loss = diff.square().mean();
  if (scale != Scalar(0)) {
    const ArrayX3<Scalar> d_color = diff * (scale * Scalar(2) / static_cast<Scalar>(diff.size()));
    composite_backward(pass, RenderMode::background(), d_color, ArrayX<Scalar>(), grads);
  }
  return loss;
}

template <typename Scalar>
struct BackgroundLoss {
  Scalar loss{};
  /// Gradient w.r.t. the edited parameters only.
  FieldParameters<Scalar> grad;
};

/// MSE between background-only renders of the frozen original field and the
/// edited field over identical rays and samples. Gradients flow only into the
/// edited parameters.
template <typename Scalar>
BackgroundLoss<Scalar> background_preservation_loss(const FieldParameters<Scalar>& edited,
                                                    const FieldParameters<Scalar>& original, const RayBatch& rays,
                                                    const RenderSettings& settings) {
  const RenderOutput<Scalar> reference = composite(trace(original, rays, settings), RenderMode::background());
  const RenderPass<Scalar> pass = trace(edited, rays, settings);
  const RenderOutput<Scalar> background = composite(pass, RenderMode::background());
  SampleGradients<Scalar> sample_grads(pass.sample_count());
  BackgroundLoss<Scalar> out;
  out.loss = accumulate_background_loss(pass, background, reference.color, Scalar(1), sample_grads);
  out.grad = edited.zeros_like();
  backward(edited, pass, sample_grads, out.grad);
  return out;
}

}  // namespace nerfedit
