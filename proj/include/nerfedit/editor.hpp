#pragma once

#include "nerfedit/adam.hpp"
#include "nerfedit/config.hpp"
#include "nerfedit/dataset.hpp"
#include "nerfedit/field.hpp"
#include "nerfedit/guidance.hpp"
#include "nerfedit/render.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <functional>
#include <span>
#include <vector>

namespace nerfedit {

using LogFn = std::function<void(const nlohmann::json&)>;

struct ReconstructionHooks {
  LogFn log;
  /// Called every `validation_every` iterations (and after the last one).
  std::function<void(int iteration, const FieldParameters<float>&)> validation;
  int validation_every = 0;
  /// Where the last finite parameters go if training diverges.
  std::filesystem::path divergence_checkpoint;
};

struct ReconstructionResult {
  FieldParameters<float> params;
  /// Copy kept untouched for the editing stage.
  FieldParameters<float> frozen;
  double final_mse = 0.0;
  double final_bce = 0.0;
};

/// Photometric MSE plus weighted mask BCE over random ray batches from every
/// training view, optimized with Adam. `field.grid.bbox` is the sampling box.
ReconstructionResult train_reconstruction(const SceneDataset& dataset, const FieldConfig& field,
                                          const ReconstructionConfig& config, double mask_sharpness,
                                          std::uint64_t seed, const ReconstructionHooks& hooks = {});

/// Stage of iteration `iteration` (0-based) for the given alternation.
EditStage edit_stage(const EditConfig& config, int iteration);

/// Seed of the SDS timestep/noise draw at `iteration`; sds_gradient is called
/// with it, so the noise is sample_noise(h, w, sds_seed(seed, iteration)).
std::uint64_t sds_seed(std::uint64_t seed, int iteration);

struct EditHooks {
  LogFn log;
  ViewClassifier* classifier = nullptr;
  /// Written every `checkpoint_every` iterations, on provider failure and on
  /// divergence; the optimizer state goes next to it with an ".adam" suffix.
  std::filesystem::path checkpoint;
  /// Resume from a previous run's checkpoint and optimizer state.
  const FieldParameters<float>* resume_params = nullptr;
  const AdamState<float>* resume_state = nullptr;
};

struct EditResult {
  FieldParameters<float> params;
  AdamState<float> optimizer;
  int iterations = 0;
  int local_calls = 0;
  int global_calls = 0;
  bool stopped_on_plateau = false;
};

/// Local-global iterative editing: the edited field starts as a copy of
/// `original` and alternates foreground-only SDS updates (random solid
/// background, local prompt) with full-image SDS updates gated per pixel by the
/// rendered editing probability, plus the background preservation loss
/// against the frozen original in every iteration.
EditResult edit_scene(const FieldParameters<float>& original, std::span<const CameraPose> cameras,
                      const PromptBundle& bundle, GuidanceProvider& provider, const EditConfig& config,
                      const SdsConfig& sds, const DiffusionSchedule& schedule, double mask_sharpness,
                      std::uint64_t seed, const EditHooks& hooks = {});

std::filesystem::path adam_state_path(const std::filesystem::path& checkpoint);

/// Turntable cameras on a horizontal ring at the mean radius and height of
/// `cameras` around `center`, all looking at `center`.
std::vector<CameraPose> turntable_cameras(std::span<const CameraPose> cameras, const Eigen::Vector3d& center,
                                          int count, int width, int height);

}  // namespace nerfedit
