#include "nerfedit/remote_provider.hpp"

#include <httplib.h>
#include <openssl/evp.h>

#include <algorithm>
#include <bit>
#include <chrono>
#include <cstring>
#include <sstream>

namespace nerfedit {

static_assert(std::endian::native == std::endian::little, "wire format assumes a little-endian host");

namespace {

using Kind = ProviderError::Kind;

std::unique_ptr<httplib::Client> make_client(const RemoteOptions& options) {
  auto client = std::make_unique<httplib::Client>(options.endpoint);
  if (!client->is_valid()) throw ProviderError(Kind::Transport, "invalid provider endpoint: " + options.endpoint);
  const auto timeout = std::chrono::duration_cast<std::chrono::microseconds>(
      std::chrono::duration<double>(options.timeout_s));
  client->set_connection_timeout(timeout);
  client->set_read_timeout(timeout);
  client->set_write_timeout(timeout);
  return client;
}

[[noreturn]] void throw_transport(const httplib::Error error, double elapsed, const RemoteOptions& options,
                                  const std::string& path) {
  const bool timed_out = error == httplib::Error::ConnectionTimeout ||
                         (error == httplib::Error::Read && elapsed >= 0.9 * options.timeout_s);
  throw ProviderError(timed_out ? Kind::Timeout : Kind::Transport,
                      "request to " + options.endpoint + path + " failed: " + httplib::to_string(error));
}

nlohmann::json parse_response(const httplib::Result& result, const std::string& path) {
  nlohmann::json body;
  try {
    body = nlohmann::json::parse(result->body);
  } catch (const nlohmann::json::exception&) {
    throw ProviderError(Kind::Service, path + ": HTTP " + std::to_string(result->status) + " with non-JSON body");
  }
  if (body.contains("error")) {
    const auto& err = body["error"];
    const std::string code = err.value("code", std::string("unknown"));
    const std::string message = err.value("message", std::string());
    const Kind kind = code == "version_mismatch" ? Kind::VersionMismatch : Kind::Service;
    throw ProviderError(kind, path + ": service error " + code + ": " + message);
  }
  if (result->status >= 400) throw ProviderError(Kind::Service, path + ": HTTP " + std::to_string(result->status));
  if (!body.contains("version") || body["version"] != kProtocolVersion) {
    throw ProviderError(Kind::VersionMismatch, path + ": protocol version mismatch (client speaks " +
                                                   std::to_string(kProtocolVersion) + ", service replied " +
                                                   (body.contains("version") ? body["version"].dump() : "none") + ")");
  }
  return body;
}

}  // namespace

std::string encode_image_f32(const Image& image) {
  const auto* bytes = reinterpret_cast<const unsigned char*>(image.pixels.data());
  const int length = static_cast<int>(image.pixels.size() * sizeof(float));
  std::string out(4 * ((length + 2) / 3), '\0');
  const int written = EVP_EncodeBlock(reinterpret_cast<unsigned char*>(out.data()), bytes, length);
  out.resize(static_cast<std::size_t>(written));
  return out;
}

Image decode_image_f32(const std::string& base64, int height, int width) {
  if (base64.size() % 4 != 0) throw ShapeError("guidance", "malformed base64 image payload");
  std::string raw(3 * base64.size() / 4, '\0');
  int decoded = EVP_DecodeBlock(reinterpret_cast<unsigned char*>(raw.data()),
                                reinterpret_cast<const unsigned char*>(base64.data()), static_cast<int>(base64.size()));
  if (decoded < 0) throw ShapeError("guidance", "malformed base64 image payload");
  // EVP_DecodeBlock counts padding bytes as data
  if (!base64.empty() && base64.back() == '=') --decoded;
  if (base64.size() > 1 && base64[base64.size() - 2] == '=') --decoded;
  const std::size_t expected = static_cast<std::size_t>(height) * width * 3 * sizeof(float);
  if (height <= 0 || width <= 0 || static_cast<std::size_t>(decoded) != expected) {
    std::ostringstream msg;
    msg << "image payload holds " << decoded << " bytes, expected " << expected << " for " << height << "x" << width
        << "x3 f32";
    throw ShapeError("guidance", msg.str());
  }
  Image image(height, width);
  std::memcpy(image.pixels.data(), raw.data(), expected);
  return image;
}

nlohmann::json make_predict_request(const NoiseRequest& request, double guidance_scale) {
  return {{"version", kProtocolVersion},
          {"prompt", request.prompt},
          {"t", request.timestep},
          {"guidance_scale", guidance_scale},
          {"image", encode_image_f32(request.image)},
          {"noised", encode_image_f32(request.noised)},
          {"height", request.image.height},
          {"width", request.image.width}};
}

nlohmann::json post_json(const RemoteOptions& options, const std::string& path, const nlohmann::json& body) {
  auto client = make_client(options);
  const auto start = std::chrono::steady_clock::now();
  auto result = client->Post(path, body.dump(), "application/json");
  const double elapsed = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  if (!result) throw_transport(result.error(), elapsed, options, path);
  return parse_response(result, path);
}

RemoteProvider::RemoteProvider(RemoteOptions options)
    : options_(std::move(options)),
      in_flight_(std::make_unique<std::counting_semaphore<>>(std::max(1, options_.max_in_flight))) {
  auto client = make_client(options_);
  const auto start = std::chrono::steady_clock::now();
  auto result = client->Get("/v1/health");
  const double elapsed = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  if (!result) throw_transport(result.error(), elapsed, options_, "/v1/health");
  parse_response(result, "/v1/health");
}

Image RemoteProvider::predict_noise(const NoiseRequest& request) {
  in_flight_->acquire();
  struct Release {
    std::counting_semaphore<>* s;
    ~Release() { s->release(); }
  } release{in_flight_.get()};

  const auto response = post_json(options_, "/v1/predict_noise", make_predict_request(request, options_.guidance_scale));
  if (!response.contains("noise") || !response["noise"].is_string()) {
    throw ProviderError(Kind::Service, "/v1/predict_noise: response lacks a noise payload");
  }
  const int height = response.value("height", request.image.height);
  const int width = response.value("width", request.image.width);
  Image noise = decode_image_f32(response["noise"].get<std::string>(), height, width);
  if (!noise.same_shape(request.image)) {
    throw ShapeError("guidance", "/v1/predict_noise returned a differently shaped image");
  }
  return noise;
}

std::string RemoteViewClassifier::classify(const Image& image, std::span<const std::string> candidates) {
  nlohmann::json body = {{"version", kProtocolVersion},
                         {"image", encode_image_f32(image)},
                         {"height", image.height},
                         {"width", image.width},
                         {"candidates", std::vector<std::string>(candidates.begin(), candidates.end())}};
  const auto response = post_json(options_, "/v1/classify_view", body);
  const std::string word = response.value("word", std::string());
  if (std::find(candidates.begin(), candidates.end(), word) == candidates.end()) {
    throw ProviderError(Kind::Service, "/v1/classify_view returned a word outside the candidate set");
  }
  return word;
}

}  // namespace nerfedit
