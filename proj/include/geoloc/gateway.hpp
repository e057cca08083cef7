#pragma once

#include <array>
#include <atomic>
#include <chrono>
#include <cstddef>
#include <memory>
#include <optional>
#include <semaphore>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "geoloc/clock.hpp"
#include "geoloc/image.hpp"
#include "geoloc/transport.hpp"

namespace geoloc {

struct EndpointConfig {
  std::string base_url;
  std::string model;
  std::chrono::milliseconds timeout{60000};
  int max_retries = 2;
  double temperature = 0.0;
  int max_output = 2048;
  int concurrency = 4;
  std::chrono::milliseconds backoff{250};  // first retry delay, doubled per attempt
  std::string bearer_token;

  // Throws std::invalid_argument when an invariant is violated.
  void validate() const;
  std::string identity() const;
};

enum class GatewayErrorKind { Timeout, Transport, Status, Malformed, Configuration, Validation };

std::string_view to_string(GatewayErrorKind kind);

class GatewayError : public std::runtime_error {
 public:
  GatewayError(GatewayErrorKind kind, std::string endpoint, std::string operation, int attempts,
               const std::string& detail);

  GatewayErrorKind kind() const { return kind_; }
  const std::string& endpoint() const { return endpoint_; }
  const std::string& operation() const { return operation_; }
  int attempts() const { return attempts_; }

 private:
  GatewayErrorKind kind_;
  std::string endpoint_;
  std::string operation_;
  int attempts_;
};

/// Transport, retry policy, concurrency cap and request counter for one
/// configured endpoint. Shared by every client talking to that endpoint.
class EndpointSession {
 public:
  EndpointSession(EndpointConfig config, std::shared_ptr<Transport> transport,
                  std::shared_ptr<Clock> clock);

  EndpointSession(const EndpointSession&) = delete;
  EndpointSession& operator=(const EndpointSession&) = delete;

  HttpRequest make_request(std::string_view path, const nlohmann::json& body) const;

  /// POSTs `body` to base_url + path. Transport failures, timeouts, 429 and
  /// 5xx responses are retried up to max_retries times with exponential
  /// backoff; anything else fails immediately.
  nlohmann::json post_json(std::string_view path, const nlohmann::json& body,
                           std::string_view operation);

  const EndpointConfig& config() const { return config_; }
  // Outbound requests attempted so far, retries included.
  std::size_t requests_sent() const { return sent_.load(); }

 private:
  EndpointConfig config_;
  std::shared_ptr<Transport> transport_;
  std::shared_ptr<Clock> clock_;
  std::counting_semaphore<> slots_;
  std::atomic<std::size_t> sent_{0};
};

class ChatClient {
 public:
  explicit ChatClient(std::shared_ptr<EndpointSession> session) : session_(std::move(session)) {}

  static constexpr std::string_view kPath = "/v1/chat/completions";

  /// Chat-completions body: one user message with the images (as base64 data
  /// URLs) followed by the prompt text.
  static nlohmann::json request_body(const EndpointConfig& config, std::string_view prompt,
                                     std::span<const ImagePayload> images);

  /// Returns choices[0].message.content verbatim.
  std::string chat_vision(std::string_view prompt, std::span<const ImagePayload> images) const;

  EndpointSession& session() const { return *session_; }

 private:
  std::shared_ptr<EndpointSession> session_;
};

class EmbedClient {
 public:
  // expected_dim, when set, is checked against every returned vector.
  explicit EmbedClient(std::shared_ptr<EndpointSession> session,
                       std::optional<std::size_t> expected_dim = std::nullopt)
      : session_(std::move(session)), expected_dim_(expected_dim) {}

  static constexpr std::string_view kPath = "/v1/embeddings";
  static nlohmann::json request_body(const EndpointConfig& config, const ImagePayload& image);

  std::vector<float> embed_image(const ImagePayload& image) const;

  void set_expected_dim(std::optional<std::size_t> dim) { expected_dim_ = dim; }
  EndpointSession& session() const { return *session_; }

 private:
  std::shared_ptr<EndpointSession> session_;
  std::optional<std::size_t> expected_dim_;
};

struct ImageSize {
  int width = 0;
  int height = 0;
};

struct Detection {
  std::string label;
  std::array<double, 4> box{};  // x0, y0, x1, y1 in pixels
  double confidence = 0.0;

  // Smallest integer box covering the detection, clamped to the image.
  PixelBox pixel_box(ImageSize bounds) const;
};

class GroundClient {
 public:
  explicit GroundClient(std::shared_ptr<EndpointSession> session) : session_(std::move(session)) {}

  static constexpr std::string_view kPath = "/ground";
  static nlohmann::json request_body(const ImagePayload& image, std::span<const std::string> labels,
                                     double box_threshold, double text_threshold);

  /// Detections in service order. A box that is unordered or leaves `bounds`
  /// raises GatewayError(Validation).
  std::vector<Detection> ground(const ImagePayload& image, ImageSize bounds,
                                std::span<const std::string> labels, double box_threshold,
                                double text_threshold) const;

  EndpointSession& session() const { return *session_; }

 private:
  std::shared_ptr<EndpointSession> session_;
};

/// OCR over a dedicated /ocr endpoint, or over a chat endpoint with a
/// transcription prompt.
class OcrClient {
 public:
  explicit OcrClient(std::shared_ptr<EndpointSession> session) : session_(std::move(session)) {}
  explicit OcrClient(std::shared_ptr<ChatClient> chat) : chat_(std::move(chat)) {}

  static constexpr std::string_view kPath = "/ocr";
  static constexpr std::string_view kChatPrompt =
      "Transcribe all text visible in this image. Reply with the text only, or with nothing if the "
      "image contains no text.";
  static nlohmann::json request_body(const ImagePayload& image);

  /// Extracted text with surrounding whitespace removed; may be empty.
  std::string ocr(const ImagePayload& image) const;

  EndpointSession& session() const { return session_ ? *session_ : chat_->session(); }

 private:
  std::shared_ptr<EndpointSession> session_;
  std::shared_ptr<ChatClient> chat_;
};

std::string trim(std::string_view text);

}  // namespace geoloc
