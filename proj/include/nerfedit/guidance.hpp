#pragma once

#include "nerfedit/camera.hpp"
#include "nerfedit/common.hpp"

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace nerfedit {

/// Failure talking to, or reported by, a guidance provider.
class ProviderError : public Error {
 public:
  enum class Kind { Transport, Timeout, VersionMismatch, Service, InvalidOutput };
  ProviderError(Kind kind, const std::string& what) : Error("guidance", what), kind_(kind) {}
  Kind kind() const noexcept { return kind_; }

 private:
  Kind kind_;
};

// ---------------------------------------------------------------- prompts

struct PromptBundle {
  /// Learned subject token (e.g. "V*") for image-driven editing.
  std::optional<std::string> subject_token;
  std::string class_word = "object";
  std::string subject_modifiers;
  std::string environment;
  std::string template_text = "[subject] [environment]";

  void validate() const;
};

enum class EditStage { Local, Global };

const char* to_string(EditStage stage);

/// Local prompts describe the subject alone; with `image_driven` the subject
/// token is dropped so the class word drives the local updates. Global prompts
/// fill the full template and keep the token when image-driven.
std::string assemble_prompt(const PromptBundle& bundle, EditStage stage, bool image_driven,
                            const std::optional<std::string>& view_word = std::nullopt);

// ------------------------------------------------------------- view words

/// Classifies a rendered image into one of the candidate view words.
class ViewClassifier {
 public:
  virtual ~ViewClassifier() = default;
  virtual std::string classify(const Image& image, std::span<const std::string> candidates) = 0;
};

struct ViewFrame {
  Eigen::Vector3d center = Eigen::Vector3d::Zero();
  /// Points from the scene toward the front viewer.
  Eigen::Vector3d forward = Eigen::Vector3d::UnitX();
  Eigen::Vector3d up = Eigen::Vector3d::UnitZ();
};

inline const std::vector<std::string> kViewWords = {"front view", "side view", "back view", "overhead view"};

/// Geometric rule: elevation above 60 degrees is overhead, otherwise azimuth
/// from `forward` below 45 is front, up to 135 is side, beyond is back.
std::string geometric_view_word(const CameraPose& camera, const ViewFrame& frame);

/// Delegates to `classifier` when given (needs `rendered`), falling back to
/// the geometric rule if the classifier throws.
std::string assign_view_word(const CameraPose& camera, const ViewFrame& frame, ViewClassifier* classifier = nullptr,
                             const Image* rendered = nullptr);

/// Frame centered on the bbox with forward taken from the horizontal part of
/// the mean camera offset (first camera if that cancels out).
ViewFrame view_frame_from_cameras(std::span<const CameraPose> cameras, const Eigen::Vector3d& center,
                                  const Eigen::Vector3d& up = Eigen::Vector3d::UnitZ());

// --------------------------------------------------------------- schedule

struct DiffusionSchedule {
  int num_steps = 1000;
  double beta_start = 1e-4;
  double beta_end = 2e-2;

  DiffusionSchedule() { build(); }
  DiffusionSchedule(int steps, double start, double end) : num_steps(steps), beta_start(start), beta_end(end) {
    build();
  }

  double beta(int t) const { return betas_[t]; }
  double alpha_bar(int t) const { return alpha_bars_[t]; }
  const std::vector<double>& alpha_bars() const { return alpha_bars_; }

 private:
  void build();
  std::vector<double> betas_;
  std::vector<double> alpha_bars_;
};

enum class SdsWeighting { OneMinusAlphaBar, Unit };

struct SdsConfig {
  double t_min_frac = 0.02;
  double t_max_frac = 0.98;
  SdsWeighting weighting = SdsWeighting::OneMinusAlphaBar;

  void validate() const;
  double weight(const DiffusionSchedule& schedule, int t) const;
};

// --------------------------------------------------------------- providers

/// Extra information about the rendered view; providers may ignore it.
struct ViewContext {
  int camera_index = -1;
  const CameraPose* camera = nullptr;
  EditStage stage = EditStage::Global;
  Rgb bg_color = Rgb::Zero();
};

struct NoiseRequest {
  const Image& image;
  const std::string& prompt;
  int timestep;
  const Image& noised;
  const ViewContext* view = nullptr;
};

/// Noise prediction eps_hat(noised; t, prompt).
class GuidanceProvider {
 public:
  virtual ~GuidanceProvider() = default;
  virtual Image predict_noise(const NoiseRequest& request) = 0;
};

/// Predicts the noise that would turn `x_target` into the noised input, so SDS
/// pulls the render toward `x_target`. The prompt is ignored.
std::unique_ptr<GuidanceProvider> make_target_oracle(Image x_target, DiffusionSchedule schedule = {});

/// Target oracle whose target depends on the rendered view.
using ViewTargetFn = std::function<Image(const ViewContext&, int height, int width)>;
std::unique_ptr<GuidanceProvider> make_view_target_oracle(ViewTargetFn target, DiffusionSchedule schedule = {});

// --------------------------------------------------------------------- SDS

struct SdsResult {
  /// omega(t) * (eps_hat - eps): the gradient of the SDS objective w.r.t. the image.
  Image gradient;
  int timestep = 0;
  double weight = 0.0;
  /// omega(t) * mean((eps_hat - eps)^2), for logging.
  double residual = 0.0;
};

/// Uniform integer timestep in [t_min_frac, t_max_frac] * num_steps.
int sample_timestep(const DiffusionSchedule& schedule, const SdsConfig& config, std::uint64_t seed);
Image sample_noise(int height, int width, std::uint64_t seed);

/// SDS with timestep and noise drawn from `seed`.
SdsResult sds_gradient(GuidanceProvider& provider, const Image& image, const std::string& prompt,
                       const DiffusionSchedule& schedule, const SdsConfig& config, std::uint64_t seed,
                       const ViewContext* view = nullptr);

/// SDS with an explicit timestep and noise.
SdsResult sds_gradient(GuidanceProvider& provider, const Image& image, const std::string& prompt,
                       const DiffusionSchedule& schedule, const SdsConfig& config, int timestep, const Image& noise,
                       const ViewContext* view = nullptr);

}  // namespace nerfedit
