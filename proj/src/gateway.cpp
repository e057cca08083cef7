#include "geoloc/gateway.hpp"

#include <algorithm>
#include <cmath>

namespace geoloc {
namespace {

using nlohmann::json;

class SlotGuard {
 public:
  explicit SlotGuard(std::counting_semaphore<>& slots) : slots_(slots) { slots_.acquire(); }
  ~SlotGuard() { slots_.release(); }
  SlotGuard(const SlotGuard&) = delete;
  SlotGuard& operator=(const SlotGuard&) = delete;

 private:
  std::counting_semaphore<>& slots_;
};

bool retryable_status(int status) { return status == 429 || status >= 500; }

std::string snippet(const std::string& body) {
  constexpr std::size_t kMax = 200;
  return body.size() <= kMax ? body : body.substr(0, kMax) + "...";
}

}  // namespace

std::string trim(std::string_view text) {
  const auto first = text.find_first_not_of(" \t\r\n\f\v");
  if (first == std::string_view::npos) return {};
  const auto last = text.find_last_not_of(" \t\r\n\f\v");
  return std::string(text.substr(first, last - first + 1));
}

void EndpointConfig::validate() const {
  if (base_url.empty()) throw std::invalid_argument("endpoint base_url is empty");
  if (timeout.count() <= 0) throw std::invalid_argument(identity() + ": timeout must be positive");
  if (max_retries < 0) throw std::invalid_argument(identity() + ": max_retries must be >= 0");
  if (!(temperature >= 0.0)) throw std::invalid_argument(identity() + ": temperature must be >= 0");
  if (max_output <= 0) throw std::invalid_argument(identity() + ": max_output must be positive");
  if (concurrency <= 0) throw std::invalid_argument(identity() + ": concurrency must be positive");
}

std::string EndpointConfig::identity() const {
  return model.empty() ? base_url : base_url + " (" + model + ")";
}

std::string_view to_string(GatewayErrorKind kind) {
  switch (kind) {
    case GatewayErrorKind::Timeout: return "timeout";
    case GatewayErrorKind::Transport: return "transport";
    case GatewayErrorKind::Status: return "status";
    case GatewayErrorKind::Malformed: return "malformed";
    case GatewayErrorKind::Configuration: return "configuration";
    case GatewayErrorKind::Validation: return "validation";
  }
  return "unknown";
}

GatewayError::GatewayError(GatewayErrorKind kind, std::string endpoint, std::string operation,
                           int attempts, const std::string& detail)
    : std::runtime_error(operation + " on " + endpoint + " failed after " + std::to_string(attempts) +
                         " attempt(s) [" + std::string(to_string(kind)) + "]: " + detail),
      kind_(kind),
      endpoint_(std::move(endpoint)),
      operation_(std::move(operation)),
      attempts_(attempts) {}

EndpointSession::EndpointSession(EndpointConfig config, std::shared_ptr<Transport> transport,
                                 std::shared_ptr<Clock> clock)
    : config_(std::move(config)),
      transport_(std::move(transport)),
      clock_(std::move(clock)),
      slots_(std::max(config_.concurrency, 1)) {
  config_.validate();
}

HttpRequest EndpointSession::make_request(std::string_view path, const json& body) const {
  HttpRequest request;
  request.method = "POST";
  std::string base = config_.base_url;
  while (!base.empty() && base.back() == '/') base.pop_back();
  request.url = base + std::string(path);
  request.headers.emplace_back("Content-Type", "application/json");
  if (!config_.bearer_token.empty()) {
    request.headers.emplace_back("Authorization", "Bearer " + config_.bearer_token);
  }
  request.body = body.dump();
  request.timeout = config_.timeout;
  return request;
}

json EndpointSession::post_json(std::string_view path, const json& body, std::string_view operation) {
  const HttpRequest request = make_request(path, body);
  const std::string op(operation);
  const int max_attempts = config_.max_retries + 1;
  GatewayErrorKind last_kind = GatewayErrorKind::Transport;
  std::string last_detail;

  for (int attempt = 1; attempt <= max_attempts; ++attempt) {
    if (attempt > 1) clock_->sleep_for(config_.backoff * (1 << std::min(attempt - 2, 16)));

    HttpResponse response;
    try {
      SlotGuard slot(slots_);
      ++sent_;
      response = transport_->send(request);
    } catch (const TransportError& e) {
      if (e.kind() == TransportError::Kind::MissingFixture) {
        throw GatewayError(GatewayErrorKind::Transport, config_.identity(), op, attempt, e.what());
      }
      last_kind = e.kind() == TransportError::Kind::Timeout ? GatewayErrorKind::Timeout
                                                            : GatewayErrorKind::Transport;
      last_detail = e.what();
      continue;
    }

    if (response.status >= 200 && response.status < 300) {
      try {
        return json::parse(response.body);
      } catch (const json::parse_error& e) {
        throw GatewayError(GatewayErrorKind::Malformed, config_.identity(), op, attempt,
                           std::string("response is not JSON: ") + e.what());
      }
    }
    last_kind = GatewayErrorKind::Status;
    last_detail = "HTTP " + std::to_string(response.status) + ": " + snippet(response.body);
    if (!retryable_status(response.status)) {
      throw GatewayError(last_kind, config_.identity(), op, attempt, last_detail);
    }
  }
  throw GatewayError(last_kind, config_.identity(), op, max_attempts, last_detail);
}

json ChatClient::request_body(const EndpointConfig& config, std::string_view prompt,
                              std::span<const ImagePayload> images) {
  json content = json::array();
  for (const auto& image : images) {
    content.push_back({{"type", "image_url"}, {"image_url", {{"url", image.data_url()}}}});
  }
  content.push_back({{"type", "text"}, {"text", prompt}});
  return {{"model", config.model},
          {"messages", json::array({{{"role", "user"}, {"content", std::move(content)}}})},
          {"temperature", config.temperature},
          {"max_tokens", config.max_output}};
}

std::string ChatClient::chat_vision(std::string_view prompt, std::span<const ImagePayload> images) const {
  if (trim(prompt).empty()) throw std::invalid_argument("chat prompt must not be empty");
  const EndpointConfig& config = session_->config();
  const json response = session_->post_json(kPath, request_body(config, prompt, images), "chat_vision");
  try {
    const json& content = response.at("choices").at(0).at("message").at("content");
    if (content.is_string()) return content.get<std::string>();
    // Some servers return content as a list of typed parts.
    std::string text;
    for (const auto& part : content) {
      if (part.value("type", "") == "text") text += part.at("text").get<std::string>();
    }
    return text;
  } catch (const json::exception& e) {
    throw GatewayError(GatewayErrorKind::Malformed, config.identity(), "chat_vision", 1,
                       std::string("unexpected chat response shape: ") + e.what());
  }
}

json EmbedClient::request_body(const EndpointConfig& config, const ImagePayload& image) {
  return {{"model", config.model}, {"input", json::array({image.base64()})}};
}

std::vector<float> EmbedClient::embed_image(const ImagePayload& image) const {
  const EndpointConfig& config = session_->config();
  const json response = session_->post_json(kPath, request_body(config, image), "embed_image");
  std::vector<float> vector;
  try {
    vector = response.at("data").at(0).at("embedding").get<std::vector<float>>();
  } catch (const json::exception& e) {
    throw GatewayError(GatewayErrorKind::Malformed, config.identity(), "embed_image", 1,
                       std::string("unexpected embedding response shape: ") + e.what());
  }
  if (vector.empty()) {
    throw GatewayError(GatewayErrorKind::Malformed, config.identity(), "embed_image", 1,
                       "empty embedding");
  }
  if (expected_dim_ && vector.size() != *expected_dim_) {
    throw GatewayError(GatewayErrorKind::Configuration, config.identity(), "embed_image", 1,
                       "endpoint returned dimension " + std::to_string(vector.size()) +
                           " but the index expects " + std::to_string(*expected_dim_));
  }
  return vector;
}

PixelBox Detection::pixel_box(ImageSize bounds) const {
  const auto clamp_to = [](double v, int hi) {
    return std::clamp(static_cast<int>(v), 0, hi);
  };
  return {clamp_to(std::floor(box[0]), bounds.width), clamp_to(std::floor(box[1]), bounds.height),
          clamp_to(std::ceil(box[2]), bounds.width), clamp_to(std::ceil(box[3]), bounds.height)};
}

json GroundClient::request_body(const ImagePayload& image, std::span<const std::string> labels,
                                double box_threshold, double text_threshold) {
  return {{"image_b64", image.base64()},
          {"labels", std::vector<std::string>(labels.begin(), labels.end())},
          {"box_threshold", box_threshold},
          {"text_threshold", text_threshold}};
}

std::vector<Detection> GroundClient::ground(const ImagePayload& image, ImageSize bounds,
                                            std::span<const std::string> labels,
                                            double box_threshold, double text_threshold) const {
  if (labels.empty()) throw std::invalid_argument("grounding needs at least one label");
  const EndpointConfig& config = session_->config();
  const json response = session_->post_json(
      kPath, request_body(image, labels, box_threshold, text_threshold), "ground");

  std::vector<Detection> detections;
  try {
    for (const auto& d : response.at("detections")) {
      Detection det;
      det.label = d.at("label").get<std::string>();
      det.box = d.at("box").get<std::array<double, 4>>();
      det.confidence = d.at("score").get<double>();
      detections.push_back(std::move(det));
    }
  } catch (const json::exception& e) {
    throw GatewayError(GatewayErrorKind::Malformed, config.identity(), "ground", 1,
                       std::string("unexpected grounding response shape: ") + e.what());
  }

  for (const auto& det : detections) {
    const auto& [x0, y0, x1, y1] = det.box;
    const bool ordered = x0 < x1 && y0 < y1;
    const bool inside = x0 >= 0 && y0 >= 0 && x1 <= bounds.width && y1 <= bounds.height;
    if (!ordered || !inside || !(det.confidence >= 0.0 && det.confidence <= 1.0)) {
      throw GatewayError(GatewayErrorKind::Validation, config.identity(), "ground", 1,
                         "invalid detection for '" + det.label + "' in a " +
                             std::to_string(bounds.width) + "x" + std::to_string(bounds.height) +
                             " image");
    }
  }
  return detections;
}

json OcrClient::request_body(const ImagePayload& image) { return {{"image_b64", image.base64()}}; }

std::string OcrClient::ocr(const ImagePayload& image) const {
  if (chat_) return trim(chat_->chat_vision(kChatPrompt, std::span(&image, 1)));
  const json response = session_->post_json(kPath, request_body(image), "ocr");
  const auto it = response.find("text");
  if (it == response.end() || !it->is_string()) {
    throw GatewayError(GatewayErrorKind::Malformed, session_->config().identity(), "ocr", 1,
                       "response has no string 'text' field");
  }
  return trim(it->get<std::string>());
}

}  // namespace geoloc
