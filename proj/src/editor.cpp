#include "nerfedit/editor.hpp"

#include "nerfedit/checkpoint.hpp"
#include "nerfedit/losses.hpp"

#include <malloc.h>
#include <spdlog/spdlog.h>

#include <cmath>
#include <numeric>
#include <random>

namespace nerfedit {

namespace {

void zero(FieldParameters<float>& grads) {
  grads.visit([](const char*, MatrixX<float>& m, const TensorDims&) { m.setZero(); });
}

void save_training_state(const std::filesystem::path& path, const FieldParameters<float>& params,
                         const AdamState<float>* state) {
  if (path.empty()) return;
  save_checkpoint(params, path);
  if (state) save_adam_state(*state, adam_state_path(path));
  spdlog::warn("saved checkpoint {}", path.string());
}

// per-iteration temporaries are tens of MB; keep them on the heap instead of
// mapping and unmapping them every step
void keep_large_blocks() {
#ifdef __GLIBC__
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
#endif
}

double psnr(double mse) { return mse > 0.0 ? -10.0 * std::log10(mse) : std::numeric_limits<double>::infinity(); }

}  // namespace

std::filesystem::path adam_state_path(const std::filesystem::path& checkpoint) {
  std::filesystem::path p = checkpoint;
  p += ".adam";
  return p;
}

ReconstructionResult train_reconstruction(const SceneDataset& dataset, const FieldConfig& field,
                                          const ReconstructionConfig& config, double mask_sharpness,
                                          std::uint64_t seed, const ReconstructionHooks& hooks) {
  dataset.validate();
  field.validate();
  config.validate();
  keep_large_blocks();
  if (dataset.frames.size() < 2) throw ShapeError("editor", "reconstruction needs at least 2 calibrated views");

  std::vector<RayBatch> parts;
  const Eigen::Index pixels_per_view = static_cast<Eigen::Index>(dataset.width()) * dataset.height();
  const Eigen::Index total = pixels_per_view * static_cast<Eigen::Index>(dataset.frames.size());
  ArrayX3<float> colors(total, 3);
  ArrayX<float> masks(total);
  for (std::size_t f = 0; f < dataset.frames.size(); ++f) {
    const Frame& frame = dataset.frames[f];
    RayBatch rays = generate_rays(frame.camera, default_ray_bounds(field.grid.bbox));
    clip_to_box(rays, field.grid.bbox);
    parts.push_back(std::move(rays));
    colors.middleRows(static_cast<Eigen::Index>(f) * pixels_per_view, pixels_per_view) = frame.image.pixels;
    masks.segment(static_cast<Eigen::Index>(f) * pixels_per_view, pixels_per_view) = frame.mask.pixels;
  }
  const RayBatch rays = RayBatch::concat(parts);
  parts.clear();

  ReconstructionResult result;
  result.params = init_parameters<float>(field, seed);
  AdamState<float> adam;
  FieldParameters<float> grads = result.params.zeros_like();
  const RenderMode full = RenderMode::full();
  const float mask_weight = static_cast<float>(config.mask_loss_weight);
  std::vector<Eigen::Index> batch(static_cast<std::size_t>(config.rays_per_batch));
  ArrayX3<float> gt_color(config.rays_per_batch, 3);
  ArrayX<float> gt_mask(config.rays_per_batch);

  for (int iter = 0; iter < config.iterations; ++iter) {
    const std::uint64_t iter_seed = mix_seed(seed, static_cast<std::uint64_t>(iter));
    std::mt19937_64 rng(iter_seed);
    std::uniform_int_distribution<Eigen::Index> pick(0, total - 1);
    for (std::size_t i = 0; i < batch.size(); ++i) {
      batch[i] = pick(rng);
      gt_color.row(static_cast<Eigen::Index>(i)) = colors.row(batch[i]);
      gt_mask[static_cast<Eigen::Index>(i)] = masks[batch[i]];
    }
    RenderSettings settings;
    settings.n_samples = config.n_samples;
    settings.stratified = config.stratified;
    settings.mask_sharpness = mask_sharpness;
    settings.seed = mix_seed(iter_seed, 1);

    const RenderPass<float> pass = trace(result.params, rays.gather(batch), settings);
    const RenderOutput<float> out = composite(pass, full);
    const ReconstructionLosses<float> losses = reconstruction_losses(out, gt_color, gt_mask, config.bce_clamp_eps);
    const double loss = static_cast<double>(losses.mse) + config.mask_loss_weight * static_cast<double>(losses.bce);
    if (!std::isfinite(loss)) {
      save_training_state(hooks.divergence_checkpoint, result.params, nullptr);
      throw DivergenceError("editor", "non-finite reconstruction loss at iteration " + std::to_string(iter) +
                                          " (mse " + std::to_string(losses.mse) + ", bce " +
                                          std::to_string(losses.bce) + ")");
    }
    SampleGradients<float> sample_grads(pass.sample_count());
    composite_backward(pass, full, losses.d_color, ArrayX<float>(losses.d_edit * mask_weight), sample_grads);
    zero(grads);
    backward(result.params, pass, sample_grads, grads);
    try {
      adam_step(result.params, grads, adam, config.learning_rate);
    } catch (const DivergenceError&) {
      save_training_state(hooks.divergence_checkpoint, result.params, nullptr);
      throw;
    }
    result.final_mse = losses.mse;
    result.final_bce = losses.bce;

    const bool last = iter + 1 == config.iterations;
    if (hooks.log && config.log_every > 0 && ((iter + 1) % config.log_every == 0 || last)) {
      hooks.log({{"iter", iter + 1},
                 {"stage", "reconstruct"},
                 {"loss_mse", losses.mse},
                 {"loss_bce", losses.bce},
                 {"psnr", psnr(losses.mse)},
                 {"lr", config.learning_rate}});
    }
    if (hooks.validation && hooks.validation_every > 0 && ((iter + 1) % hooks.validation_every == 0 || last)) {
      hooks.validation(iter + 1, result.params);
    }
  }
  result.frozen = result.params;
  return result;
}

EditStage edit_stage(const EditConfig& config, int iteration) {
  const int cycle = config.local_steps + config.global_steps;
  return iteration % cycle < config.local_steps ? EditStage::Local : EditStage::Global;
}

std::uint64_t sds_seed(std::uint64_t seed, int iteration) {
  return mix_seed(mix_seed(seed, static_cast<std::uint64_t>(iteration)), 3);
}

EditResult edit_scene(const FieldParameters<float>& original, std::span<const CameraPose> cameras,
                      const PromptBundle& bundle, GuidanceProvider& provider, const EditConfig& config,
                      const SdsConfig& sds, const DiffusionSchedule& schedule, double mask_sharpness,
                      std::uint64_t seed, const EditHooks& hooks) {
  config.validate();
  sds.validate();
  bundle.validate();
  keep_large_blocks();
  if (cameras.empty()) throw ShapeError("editor", "editing needs at least one camera");
  const Aabb bbox = original.config.grid.bbox;

  EditResult result;
  result.params = hooks.resume_params ? *hooks.resume_params : original;
  if (!(result.params.config == original.config)) {
    throw ShapeError("editor", "resume checkpoint has a different field configuration than the original");
  }
  if (hooks.resume_state) result.optimizer = *hooks.resume_state;
  const int start = static_cast<int>(result.optimizer.step);

  struct ViewCache {
    bool ready = false;
    CameraPose camera;
    RayBatch rays;
    ArrayX3<float> background;
  };
  std::vector<ViewCache> cache(cameras.size());
  const ViewFrame frame = view_frame_from_cameras(cameras, bbox.center());

  RenderSettings settings;
  settings.n_samples = config.n_samples;
  settings.stratified = false;
  settings.mask_sharpness = mask_sharpness;

  FieldParameters<float> grads = result.params.zeros_like();
  std::vector<double> losses;
  const float lambda_sds = static_cast<float>(config.lambda_sds);
  const float lambda_bg = static_cast<float>(config.lambda_bg);

  for (int iter = start; iter < config.max_iterations; ++iter) {
    const EditStage stage = edit_stage(config, iter);
    std::mt19937_64 rng(mix_seed(seed, static_cast<std::uint64_t>(iter)));
    const int index = std::uniform_int_distribution<int>(0, static_cast<int>(cameras.size()) - 1)(rng);
    std::uniform_real_distribution<float> unit(0.0f, 1.0f);
    Rgb bg_color;
    for (int c = 0; c < 3; ++c) bg_color[c] = unit(rng);

    ViewCache& view = cache[static_cast<std::size_t>(index)];
    if (!view.ready) {
      view.camera = cameras[static_cast<std::size_t>(index)].resized(config.render_width, config.render_height);
      view.rays = generate_rays(view.camera, default_ray_bounds(bbox));
      clip_to_box(view.rays, bbox);
      view.background = composite(trace(original, view.rays, settings), RenderMode::background()).color;
      view.ready = true;
    }

    const RenderPass<float> pass = trace(result.params, view.rays, settings);
    const RenderMode mode = stage == EditStage::Local ? RenderMode::foreground(bg_color) : RenderMode::full();
    const RenderOutput<float> out = composite(pass, mode);
    Image image(config.render_height, config.render_width);
    image.pixels = out.color;

    std::optional<std::string> view_word;
    if (stage == EditStage::Local || config.view_words_in_global) {
      view_word = assign_view_word(view.camera, frame, hooks.classifier, &image);
    }
    const std::string prompt = assemble_prompt(bundle, stage, config.image_driven, view_word);
    ViewContext context;
    context.camera_index = index;
    context.camera = &view.camera;
    context.stage = stage;
    context.bg_color = stage == EditStage::Local ? bg_color : Rgb::Zero();

    SdsResult guidance;
    try {
      guidance = sds_gradient(provider, image, prompt, schedule, sds, sds_seed(seed, iter), &context);
    } catch (const ProviderError& e) {
      spdlog::error("provider failed at iteration {}: {}", iter, e.what());
      save_training_state(hooks.checkpoint, result.params, &result.optimizer);
      throw;
    }
    (stage == EditStage::Local ? result.local_calls : result.global_calls) += 1;

    ArrayX3<float> d_color = guidance.gradient.pixels * lambda_sds;
    if (stage == EditStage::Global) {
      const ArrayX<float> gate =
          config.hard_gate ? ArrayX<float>((out.edit_prob > 0.5f).cast<float>()) : out.edit_prob;
      d_color = d_color.colwise() * gate;
    }
    SampleGradients<float> sample_grads(pass.sample_count());
    composite_backward(pass, mode, d_color, ArrayX<float>(), sample_grads);
    const RenderOutput<float> background = composite(pass, RenderMode::background());
    const float loss_bg = accumulate_background_loss(pass, background, view.background, lambda_bg, sample_grads);

    zero(grads);
    backward(result.params, pass, sample_grads, grads);
    if (config.freeze_mask) {
      grads.edit_w1.setZero();
      grads.edit_b1.setZero();
      grads.edit_w2.setZero();
      grads.edit_b2.setZero();
    }
    try {
      adam_step(result.params, grads, result.optimizer, config.learning_rate);
    } catch (const DivergenceError& e) {
      spdlog::error("diverged at iteration {} ({} stage, loss_sds {}, loss_bg {}): {}", iter, to_string(stage),
                    guidance.residual, loss_bg, e.what());
      save_training_state(hooks.checkpoint, result.params, &result.optimizer);
      throw;
    }

    if (hooks.log) {
      hooks.log({{"iter", iter},
                 {"stage", to_string(stage)},
                 {"loss_sds", guidance.residual},
                 {"loss_bg", loss_bg},
                 {"prompt", prompt},
                 {"t", guidance.timestep},
                 {"lr", config.learning_rate}});
    }
    if (config.checkpoint_every > 0 && (iter + 1) % config.checkpoint_every == 0) {
      save_training_state(hooks.checkpoint, result.params, &result.optimizer);
    }

    if (config.plateau_window > 0) {
      losses.push_back(config.lambda_sds * guidance.residual + config.lambda_bg * loss_bg);
      const std::size_t w = static_cast<std::size_t>(config.plateau_window);
      if (losses.size() >= 2 * w) {
        const auto end = losses.end();
        const double previous = std::accumulate(end - 2 * w, end - w, 0.0) / w;
        const double current = std::accumulate(end - w, end, 0.0) / w;
        if (previous - current < config.plateau_tolerance * std::abs(previous)) {
          spdlog::info("loss plateau at iteration {}", iter + 1);
          result.stopped_on_plateau = true;
          break;
        }
      }
    }
  }
  result.iterations = static_cast<int>(result.optimizer.step);
  return result;
}

std::vector<CameraPose> turntable_cameras(std::span<const CameraPose> cameras, const Eigen::Vector3d& center,
                                          int count, int width, int height) {
  if (cameras.empty()) throw GeometryError("cli", "turntable needs reference cameras");
  if (count < 1 || width < 1 || height < 1) throw GeometryError("cli", "turntable needs a positive count and size");
  double radius = 0.0, elevation = 0.0, focal = 0.0;
  for (const CameraPose& c : cameras) {
    const Eigen::Vector3d offset = c.center() - center;
    radius += offset.head<2>().norm();
    elevation += offset.z();
    focal += c.fx * width / c.width;
  }
  const double n = static_cast<double>(cameras.size());
  radius /= n;
  elevation /= n;
  focal /= n;
  if (!(radius > 1e-9)) throw GeometryError("cli", "training cameras have no horizontal offset to orbit at");
  std::vector<CameraPose> out;
  for (int i = 0; i < count; ++i) {
    const double angle = 2.0 * M_PI * i / count;
    const Eigen::Vector3d eye = center + Eigen::Vector3d(radius * std::cos(angle), radius * std::sin(angle), elevation);
    out.push_back(CameraPose::look_at(eye, center, Eigen::Vector3d::UnitZ(), focal, focal, width, height));
  }
  return out;
}

}  // namespace nerfedit
