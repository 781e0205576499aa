#pragma once

#include "nerfedit/guidance.hpp"

#include <nlohmann/json.hpp>

#include <memory>
#include <semaphore>
#include <string>

namespace nerfedit {

inline constexpr int kProtocolVersion = 1;

struct RemoteOptions {
  /// Base address, e.g. "http://127.0.0.1:8000".
  std::string endpoint;
  double timeout_s = 60.0;
  double guidance_scale = 7.5;
  int max_in_flight = 4;
};

/// Base64 of the row-major little-endian f32 H x W x 3 payload.
std::string encode_image_f32(const Image& image);
/// Inverse of encode_image_f32; throws ShapeError if the payload size is not h * w * 3 floats.
Image decode_image_f32(const std::string& base64, int height, int width);

nlohmann::json make_predict_request(const NoiseRequest& request, double guidance_scale);

/// Client for the diffusion service's /v1/predict_noise. The constructor
/// performs the /v1/health handshake.
class RemoteProvider final : public GuidanceProvider {
 public:
  explicit RemoteProvider(RemoteOptions options);
  Image predict_noise(const NoiseRequest& request) override;
  const RemoteOptions& options() const { return options_; }

 private:
  RemoteOptions options_;
  std::unique_ptr<std::counting_semaphore<>> in_flight_;
};

/// Client for /v1/classify_view.
class RemoteViewClassifier final : public ViewClassifier {
 public:
  explicit RemoteViewClassifier(RemoteOptions options) : options_(std::move(options)) {}
  std::string classify(const Image& image, std::span<const std::string> candidates) override;

 private:
  RemoteOptions options_;
};

/// POSTs `body` to `path` and returns the parsed response, mapping transport
/// failures, timeouts, service errors and version mismatches to ProviderError.
nlohmann::json post_json(const RemoteOptions& options, const std::string& path, const nlohmann::json& body);

}  // namespace nerfedit
