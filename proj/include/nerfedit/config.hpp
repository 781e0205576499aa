#pragma once

#include "nerfedit/field.hpp"
#include "nerfedit/guidance.hpp"
#include "nerfedit/remote_provider.hpp"
#include "nerfedit/synthetic.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>

namespace nerfedit {

struct ReconstructionConfig {
  int iterations = 3000;
  int rays_per_batch = 4096;
  double learning_rate = 5e-4;
  double mask_loss_weight = 1.0;
  double bce_clamp_eps = 1e-5;
  int n_samples = 64;
  bool stratified = true;
  int log_every = 100;

  void validate() const;
  bool operator==(const ReconstructionConfig&) const = default;
};

struct EditConfig {
  int max_iterations = 10000;
  double learning_rate = 5e-4;
  double lambda_sds = 0.01;
  double lambda_bg = 1000.0;
  /// Local iterations then global iterations per cycle.
  int local_steps = 1;
  int global_steps = 1;
  bool image_driven = false;
  int render_height = 64;
  int render_width = 64;
  int n_samples = 48;
  /// Gate global SDS gradients with (edit_prob > 0.5) instead of edit_prob.
  bool hard_gate = false;
  /// Keep the editing-probability head fixed.
  bool freeze_mask = false;
  bool view_words_in_global = true;
  /// Stop when the mean loss over the last window improves by less than the
  /// relative tolerance over the window before it; 0 disables.
  int plateau_window = 0;
  double plateau_tolerance = 1e-3;
  int checkpoint_every = 0;

  void validate() const;
  bool operator==(const EditConfig&) const = default;
};

struct DatasetConfig {
  /// Manifest path; empty selects the synthetic scene.
  std::filesystem::path manifest;
  int downsample_factor = 1;
  SyntheticSceneSpec synthetic{};
};

enum class ProviderKind { None, Oracle, Remote };

struct ProviderConfig {
  ProviderKind kind = ProviderKind::None;
  std::filesystem::path target;
  RemoteOptions remote{};
};

struct RunConfig {
  std::uint64_t seed = 0;
  DatasetConfig dataset;
  FieldConfig field;
  /// Grid box from the config; absent means the dataset's bbox.
  std::optional<Aabb> grid_bbox;
  ReconstructionConfig reconstruction;
  EditConfig edit;
  SdsConfig sds;
  DiffusionSchedule schedule;
  PromptBundle prompt;
  ProviderConfig provider;
  double mask_sharpness = 10.0;
  /// Samples per ray for final renders.
  int render_samples = 64;

  void validate() const;
};

/// Strict parse: absent keys keep their defaults, unknown keys and type
/// errors raise ConfigError naming the key path (e.g. "edit.lambda_bg").
RunConfig parse_config_json(const std::string& text);
RunConfig parse_config(const std::filesystem::path& path);

/// "oracle:<target.png>" or "remote:<url>".
ProviderConfig parse_provider_flag(const std::string& flag, const ProviderConfig& base = {});

std::string describe(const RunConfig& config);

}  // namespace nerfedit
