#include "nerfedit/guidance.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <sstream>

namespace nerfedit {

namespace {

int count_occurrences(const std::string& text, const std::string& needle) {
  int count = 0;
  for (std::size_t pos = text.find(needle); pos != std::string::npos; pos = text.find(needle, pos + needle.size())) {
    ++count;
  }
  return count;
}

std::string collapse_spaces(const std::string& text) {
  std::string out;
  bool space = false;
  for (char c : text) {
    if (c == ' ' || c == '\t' || c == '\n') {
      space = !out.empty();
      continue;
    }
    if (space) out.push_back(' ');
    space = false;
    out.push_back(c);
  }
  return out;
}

void replace_once(std::string& text, const std::string& slot, const std::string& value) {
  const auto pos = text.find(slot);
  if (pos != std::string::npos) text.replace(pos, slot.size(), value);
}

std::string subject_phrase(const PromptBundle& bundle, EditStage stage, bool image_driven) {
  if (image_driven) {
    if (stage == EditStage::Global && bundle.subject_token) return "a " + *bundle.subject_token + " " + bundle.class_word;
    return "a " + bundle.class_word;
  }
  return collapse_spaces("a " + bundle.subject_modifiers + " " + bundle.class_word);
}

void check_image(const Image& image, const char* what) {
  if (image.pixels.rows() != image.size()) throw ShapeError("guidance", std::string(what) + ": inconsistent image size");
  if (!image.pixels.allFinite()) throw ShapeError("guidance", std::string(what) + ": non-finite values");
}

class TargetOracle final : public GuidanceProvider {
 public:
  TargetOracle(ViewTargetFn target, DiffusionSchedule schedule)
      : target_(std::move(target)), schedule_(std::move(schedule)) {}

  Image predict_noise(const NoiseRequest& request) override {
    static const ViewContext kNoView{};
    const Image target = target_(request.view ? *request.view : kNoView, request.noised.height, request.noised.width);
    if (!target.same_shape(request.noised)) throw ShapeError("guidance", "oracle target and noised input differ in shape");
    const double alpha_bar = schedule_.alpha_bar(request.timestep);
    const float signal = static_cast<float>(std::sqrt(alpha_bar));
    const float noise = static_cast<float>(std::sqrt(1.0 - alpha_bar));
    Image out(request.noised.height, request.noised.width);
    out.pixels = (request.noised.pixels - signal * target.pixels) / noise;
    return out;
  }

 private:
  ViewTargetFn target_;
  DiffusionSchedule schedule_;
};

}  // namespace

void PromptBundle::validate() const {
  if (class_word.empty()) throw ConfigError("prompt.class_word must be nonempty");
  if (count_occurrences(template_text, "[subject]") != 1 || count_occurrences(template_text, "[environment]") != 1) {
    throw ConfigError("prompt.template must contain [subject] and [environment] exactly once");
  }
}

const char* to_string(EditStage stage) { return stage == EditStage::Local ? "local" : "global"; }

std::string assemble_prompt(const PromptBundle& bundle, EditStage stage, bool image_driven,
                            const std::optional<std::string>& view_word) {
  bundle.validate();
  std::string prompt;
  if (stage == EditStage::Local) {
    prompt = subject_phrase(bundle, stage, image_driven);
  } else {
    prompt = bundle.template_text;
    replace_once(prompt, "[subject]", subject_phrase(bundle, stage, image_driven));
    replace_once(prompt, "[environment]", bundle.environment);
    prompt = collapse_spaces(prompt);
  }
  if (view_word && !view_word->empty()) prompt += ", " + *view_word;
  return prompt;
}

std::string geometric_view_word(const CameraPose& camera, const ViewFrame& frame) {
  const Eigen::Vector3d up = frame.up.normalized();
  const Eigen::Vector3d offset = camera.center() - frame.center;
  if (offset.norm() < 1e-12) return "front view";
  const Eigen::Vector3d v = offset.normalized();
  const double elevation = std::asin(std::clamp(v.dot(up), -1.0, 1.0)) * 180.0 / std::numbers::pi;
  if (elevation > 60.0) return "overhead view";

  const Eigen::Vector3d vh = v - v.dot(up) * up;
  const Eigen::Vector3d fh = frame.forward - frame.forward.dot(up) * up;
  if (fh.norm() < 1e-12) throw GeometryError("guidance", "scene forward is parallel to up");
  double azimuth = 0.0;
  if (vh.norm() > 1e-12) {
    azimuth = std::acos(std::clamp(vh.normalized().dot(fh.normalized()), -1.0, 1.0)) * 180.0 / std::numbers::pi;
  }
  if (azimuth < 45.0) return "front view";
  if (azimuth <= 135.0) return "side view";
  return "back view";
}

std::string assign_view_word(const CameraPose& camera, const ViewFrame& frame, ViewClassifier* classifier,
                             const Image* rendered) {
  if (classifier && rendered) {
    try {
      return classifier->classify(*rendered, kViewWords);
    } catch (const std::exception& e) {
      spdlog::warn("view classifier failed ({}); using geometric view word", e.what());
    }
  }
  return geometric_view_word(camera, frame);
}

ViewFrame view_frame_from_cameras(std::span<const CameraPose> cameras, const Eigen::Vector3d& center,
                                  const Eigen::Vector3d& up) {
  ViewFrame frame;
  frame.center = center;
  frame.up = up.normalized();
  auto horizontal = [&](const Eigen::Vector3d& v) -> Eigen::Vector3d { return v - v.dot(frame.up) * frame.up; };
  Eigen::Vector3d sum = Eigen::Vector3d::Zero();
  for (const auto& camera : cameras) {
    const Eigen::Vector3d h = horizontal(camera.center() - center);
    if (h.norm() > 1e-12) sum += h.normalized();
  }
  if (sum.norm() > 1e-6 * std::max<std::size_t>(cameras.size(), 1)) {
    frame.forward = sum.normalized();
    return frame;
  }
  for (const auto& camera : cameras) {
    const Eigen::Vector3d h = horizontal(camera.center() - center);
    if (h.norm() > 1e-12) {
      frame.forward = h.normalized();
      return frame;
    }
  }
  frame.forward = horizontal(Eigen::Vector3d::UnitX()).norm() > 1e-6 ? horizontal(Eigen::Vector3d::UnitX()).normalized()
                                                                     : horizontal(Eigen::Vector3d::UnitY()).normalized();
  return frame;
}

void DiffusionSchedule::build() {
  if (num_steps < 2 || !(beta_start > 0.0) || !(beta_end < 1.0) || !(beta_start < beta_end)) {
    throw ConfigError("diffusion schedule needs num_steps >= 2 and 0 < beta_start < beta_end < 1");
  }
  betas_.resize(num_steps);
  alpha_bars_.resize(num_steps);
  double product = 1.0;
  for (int t = 0; t < num_steps; ++t) {
    betas_[t] = beta_start + (beta_end - beta_start) * t / (num_steps - 1);
    product *= 1.0 - betas_[t];
    alpha_bars_[t] = product;
  }
}

void SdsConfig::validate() const {
  if (!(t_min_frac >= 0.0 && t_min_frac < t_max_frac && t_max_frac <= 1.0)) {
    throw ConfigError("sds: need 0 <= t_min_frac < t_max_frac <= 1");
  }
}

double SdsConfig::weight(const DiffusionSchedule& schedule, int t) const {
  return weighting == SdsWeighting::Unit ? 1.0 : 1.0 - schedule.alpha_bar(t);
}

std::unique_ptr<GuidanceProvider> make_target_oracle(Image x_target, DiffusionSchedule schedule) {
  check_image(x_target, "oracle target");
  return std::make_unique<TargetOracle>(
      [target = std::move(x_target)](const ViewContext&, int, int) { return target; }, std::move(schedule));
}

std::unique_ptr<GuidanceProvider> make_view_target_oracle(ViewTargetFn target, DiffusionSchedule schedule) {
  return std::make_unique<TargetOracle>(std::move(target), std::move(schedule));
}

int sample_timestep(const DiffusionSchedule& schedule, const SdsConfig& config, std::uint64_t seed) {
  const int last = schedule.num_steps - 1;
  const int lo = std::clamp(static_cast<int>(std::lround(config.t_min_frac * schedule.num_steps)), 0, last);
  const int hi = std::clamp(static_cast<int>(std::lround(config.t_max_frac * schedule.num_steps)), lo, last);
  std::mt19937_64 rng(mix_seed(seed, 1));
  return std::uniform_int_distribution<int>(lo, hi)(rng);
}

Image sample_noise(int height, int width, std::uint64_t seed) {
  std::mt19937_64 rng(mix_seed(seed, 2));
  std::normal_distribution<double> normal(0.0, 1.0);
  Image noise(height, width);
  for (Eigen::Index i = 0; i < noise.pixels.size(); ++i) noise.pixels.data()[i] = static_cast<float>(normal(rng));
  return noise;
}

SdsResult sds_gradient(GuidanceProvider& provider, const Image& image, const std::string& prompt,
                       const DiffusionSchedule& schedule, const SdsConfig& config, std::uint64_t seed,
                       const ViewContext* view) {
  const int t = sample_timestep(schedule, config, seed);
  return sds_gradient(provider, image, prompt, schedule, config, t, sample_noise(image.height, image.width, seed), view);
}

SdsResult sds_gradient(GuidanceProvider& provider, const Image& image, const std::string& prompt,
                       const DiffusionSchedule& schedule, const SdsConfig& config, int timestep, const Image& noise,
                       const ViewContext* view) {
  check_image(image, "sds input");
  if ((image.pixels < -1e-5f).any() || (image.pixels > 1.0f + 1e-5f).any()) {
    throw ShapeError("guidance", "sds input image must lie in [0, 1]");
  }
  if (!noise.same_shape(image)) throw ShapeError("guidance", "noise and image differ in shape");
  if (timestep < 0 || timestep >= schedule.num_steps) throw ShapeError("guidance", "timestep outside schedule");

  const double alpha_bar = schedule.alpha_bar(timestep);
  Image noised(image.height, image.width);
  noised.pixels = static_cast<float>(std::sqrt(alpha_bar)) * image.pixels +
                  static_cast<float>(std::sqrt(1.0 - alpha_bar)) * noise.pixels;

  const Image predicted = provider.predict_noise(NoiseRequest{image, prompt, timestep, noised, view});
  if (!predicted.same_shape(image) || predicted.pixels.rows() != image.size()) {
    std::ostringstream msg;
    msg << "provider returned " << predicted.height << "x" << predicted.width << ", expected " << image.height << "x"
        << image.width;
    throw ShapeError("guidance", msg.str());
  }
  if (!predicted.pixels.allFinite()) {
    throw ProviderError(ProviderError::Kind::InvalidOutput, "provider returned non-finite noise");
  }

  SdsResult result;
  result.timestep = timestep;
  result.weight = config.weight(schedule, timestep);
  result.gradient = Image(image.height, image.width);
  const ArrayX3<float> residual = predicted.pixels - noise.pixels;
  result.gradient.pixels = static_cast<float>(result.weight) * residual;
  result.residual = result.weight * residual.cast<double>().square().mean();
  return result;
}

}  // namespace nerfedit
