#include <doctest.h>

#include <atomic>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "fake_world.hpp"
#include "geoloc/gateway.hpp"

using namespace geoloc;
using nlohmann::json;

namespace {

EndpointConfig endpoint(std::string url = "http://svc.test", int retries = 2) {
  EndpointConfig c;
  c.base_url = std::move(url);
  c.model = "m";
  c.max_retries = retries;
  c.backoff = std::chrono::milliseconds(100);
  return c;
}

MockReply chat_response(const std::string& content) {
  return {200, json{{"choices", {{{"message", {{"content", content}}}}}}}.dump()};
}

ImagePayload tiny_png(Pixel color = {1, 2, 3}) { return ImagePayload{encode_png(Image::filled(4, 3, color))}; }

struct Rig {
  std::shared_ptr<MockTransport> mock = std::make_shared<MockTransport>();
  std::shared_ptr<FakeClock> clock = std::make_shared<FakeClock>();

  std::shared_ptr<EndpointSession> session(EndpointConfig c = endpoint()) {
    return std::make_shared<EndpointSession>(std::move(c), mock, clock);
  }
};

}  // namespace

TEST_CASE("endpoint config validation") {
  EndpointConfig c = endpoint();
  CHECK_NOTHROW(c.validate());
  c.timeout = std::chrono::milliseconds(0);
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  c = endpoint();
  c.max_retries = -1;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  c = endpoint();
  c.temperature = -0.1;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  c = endpoint();
  c.base_url.clear();
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  CHECK(EndpointConfig{}.temperature == 0.0);
  CHECK(EndpointConfig{}.max_output == 2048);
  CHECK(EndpointConfig{}.concurrency == 4);
}

TEST_CASE("chat request body follows the chat-completions shape") {
  const auto image = tiny_png();
  const std::vector<ImagePayload> images{image, image};
  const json body = ChatClient::request_body(endpoint(), "describe", images);
  CHECK(body["model"] == "m");
  CHECK(body["temperature"] == 0.0);
  CHECK(body["max_tokens"] == 2048);
  const auto& content = body["messages"][0]["content"];
  CHECK(body["messages"][0]["role"] == "user");
  REQUIRE(content.size() == 3);
  CHECK(content[0]["type"] == "image_url");
  CHECK(content[0]["image_url"]["url"] == image.data_url());
  CHECK(content[2]["type"] == "text");
  CHECK(content[2]["text"] == "describe");
}

TEST_CASE("chat_vision returns the completion verbatim") {
  Rig rig;
  auto session = rig.session();
  ChatClient chat(session);
  const auto image = tiny_png();
  const auto req = session->make_request(ChatClient::kPath, ChatClient::request_body(session->config(), "p", std::span(&image, 1)));
  rig.mock->add(req, {chat_response("  Somewhere warm.\n")});
  CHECK(chat.chat_vision("p", std::span(&image, 1)) == "  Somewhere warm.\n");
  CHECK(chat.chat_vision("p", std::span(&image, 1)) == "  Somewhere warm.\n");
  CHECK(rig.mock->calls().size() == 2);
  CHECK(req.url == "http://svc.test/v1/chat/completions");
  CHECK_THROWS_AS(chat.chat_vision("   ", {}), std::invalid_argument);
}

TEST_CASE("bearer token header") {
  EndpointConfig c = endpoint();
  c.bearer_token = "secret";
  Rig rig;
  const auto req = rig.session(c)->make_request("/x", json::object());
  bool found = false;
  for (const auto& [k, v] : req.headers) found = found || (k == "Authorization" && v == "Bearer secret");
  CHECK(found);
  CHECK(req.timeout == c.timeout);
}

TEST_CASE("retry: 503 twice then 200 succeeds with exponential backoff") {
  Rig rig;
  auto session = rig.session(endpoint("http://svc.test", 2));
  const auto req = session->make_request("/x", json{{"a", 1}});
  rig.mock->add(req, {{503, "busy"}, {503, "busy"}, {200, R"({"ok":true})"}});
  const auto start = rig.clock->now();
  CHECK(session->post_json("/x", json{{"a", 1}}, "op")["ok"] == true);
  CHECK(session->requests_sent() == 3);
  const auto sleeps = rig.clock->sleeps();
  REQUIRE(sleeps.size() == 2);
  CHECK(sleeps[0] - start == std::chrono::milliseconds(100));
  CHECK(sleeps[1] - sleeps[0] == std::chrono::milliseconds(200));
}

TEST_CASE("retry: 503 three times exhausts max_retries=2") {
  Rig rig;
  auto session = rig.session(endpoint("http://svc.test", 2));
  rig.mock->add(session->make_request("/x", json::object()), {{503, "busy"}});
  try {
    session->post_json("/x", json::object(), "chat_vision");
    FAIL("expected GatewayError");
  } catch (const GatewayError& e) {
    CHECK(e.kind() == GatewayErrorKind::Status);
    CHECK(e.attempts() == 3);
    CHECK(e.operation() == "chat_vision");
    CHECK(e.endpoint().find("http://svc.test") != std::string::npos);
    CHECK(std::string(e.what()).find("503") != std::string::npos);
  }
  CHECK(session->requests_sent() == 3);
}

TEST_CASE("retry covers 429 and timeouts but not other 4xx") {
  Rig rig;
  auto session = rig.session(endpoint("http://svc.test", 3));
  MockReply timeout;
  timeout.timeout = true;
  rig.mock->add(session->make_request("/t", json::object()), {timeout, {429, "slow down"}, {200, "{}"}});
  CHECK_NOTHROW(session->post_json("/t", json::object(), "op"));
  CHECK(session->requests_sent() == 3);

  rig.mock->add(session->make_request("/bad", json::object()), {{400, "nope"}, {200, "{}"}});
  CHECK_THROWS_AS(session->post_json("/bad", json::object(), "op"), GatewayError);
  CHECK(session->requests_sent() == 4);

  MockReply always_timeout;
  always_timeout.timeout = true;
  rig.mock->add(session->make_request("/slow", json::object()), {always_timeout});
  try {
    session->post_json("/slow", json::object(), "op");
    FAIL("expected timeout");
  } catch (const GatewayError& e) {
    CHECK(e.kind() == GatewayErrorKind::Timeout);
    CHECK(e.attempts() == 4);
  }
}

TEST_CASE("missing fixtures and malformed bodies are not retried") {
  Rig rig;
  auto session = rig.session();
  try {
    session->post_json("/nothing", json::object(), "op");
    FAIL("expected GatewayError");
  } catch (const GatewayError& e) {
    CHECK(e.kind() == GatewayErrorKind::Transport);
    CHECK(e.attempts() == 1);
  }
  rig.mock->add(session->make_request("/garbled", json::object()), {{200, "<html>"}});
  try {
    session->post_json("/garbled", json::object(), "op");
    FAIL("expected GatewayError");
  } catch (const GatewayError& e) {
    CHECK(e.kind() == GatewayErrorKind::Malformed);
  }
  CHECK(session->requests_sent() == 2);
}

TEST_CASE("concurrency cap bounds in-flight requests") {
  EndpointConfig c = endpoint();
  c.concurrency = 2;
  std::atomic<int> in_flight{0};
  std::atomic<int> peak{0};
  auto transport = std::make_shared<FunctionTransport>([&](const HttpRequest&) {
    const int now = ++in_flight;
    int seen = peak.load();
    while (now > seen && !peak.compare_exchange_weak(seen, now)) {
    }
    std::this_thread::sleep_for(std::chrono::milliseconds(5));
    --in_flight;
    return HttpResponse{200, "{}"};
  });
  auto session = std::make_shared<EndpointSession>(c, transport, std::make_shared<FakeClock>());
  {
    std::vector<std::jthread> threads;
    for (int i = 0; i < 6; ++i) {
      threads.emplace_back([&] {
        for (int j = 0; j < 4; ++j) session->post_json("/x", json::object(), "op");
      });
    }
  }
  CHECK(peak.load() <= 2);
  CHECK(peak.load() >= 1);
  CHECK(session->requests_sent() == 24);
}

TEST_CASE("embed_image") {
  Rig rig;
  auto session = rig.session();
  const auto image = tiny_png();
  std::vector<float> fixed(512);
  for (std::size_t i = 0; i < fixed.size(); ++i) fixed[i] = static_cast<float>(i) * 0.5f;
  rig.mock->add(session->make_request(EmbedClient::kPath, EmbedClient::request_body(session->config(), image)),
                {{200, json{{"data", {{{"embedding", fixed}}}}}.dump()}});
  EmbedClient embed(session, 512);
  CHECK(embed.embed_image(image) == fixed);
  CHECK(embed.embed_image(image) == embed.embed_image(image));
  CHECK(EmbedClient::request_body(session->config(), image)["input"][0] == image.base64());

  EmbedClient mismatched(session, 256);
  try {
    mismatched.embed_image(image);
    FAIL("expected a configuration error");
  } catch (const GatewayError& e) {
    CHECK(e.kind() == GatewayErrorKind::Configuration);
  }
}

TEST_CASE("ground parses detections and validates boxes") {
  Rig rig;
  auto session = rig.session();
  GroundClient ground(session);
  const auto image = tiny_png();
  const std::vector<std::string> labels{"house", "road sign", "building sign"};
  auto reply = [&](double threshold, json detections) {
    rig.mock->add(session->make_request(GroundClient::kPath, GroundClient::request_body(image, labels, threshold, 0.5)),
                  {{200, json{{"detections", detections}}.dump()}});
  };
  const json all = json::array({{{"label", "house"}, {"box", {0, 0, 2, 2}}, {"score", 0.9}},
                                {{"label", "road sign"}, {"box", {1.5, 0.5, 4, 3}}, {"score", 0.6}}});
  reply(0.5, all);
  reply(0.8, json::array({all[0]}));
  const auto low = ground.ground(image, {4, 3}, labels, 0.5, 0.5);
  const auto high = ground.ground(image, {4, 3}, labels, 0.8, 0.5);
  REQUIRE(low.size() == 2);
  CHECK(low[1].label == "road sign");
  CHECK(low[1].confidence == 0.6);
  for (const auto& d : high) {
    CHECK(std::any_of(low.begin(), low.end(), [&](const Detection& x) { return x.label == d.label && x.box == d.box; }));
  }
  const PixelBox px = low[1].pixel_box({4, 3});
  CHECK(px.x0 == 1);
  CHECK(px.y0 == 0);
  CHECK(px.x1 == 4);
  CHECK(px.y1 == 3);

  reply(0.1, json::array());
  CHECK(ground.ground(image, {4, 3}, labels, 0.1, 0.5).empty());

  reply(0.2, json::array({{{"label", "house"}, {"box", {0, 0, 5, 2}}, {"score", 0.9}}}));
  try {
    ground.ground(image, {4, 3}, labels, 0.2, 0.5);
    FAIL("expected validation error");
  } catch (const GatewayError& e) {
    CHECK(e.kind() == GatewayErrorKind::Validation);
  }
  reply(0.3, json::array({{{"label", "house"}, {"box", {2, 0, 1, 2}}, {"score", 0.9}}}));
  CHECK_THROWS_AS(ground.ground(image, {4, 3}, labels, 0.3, 0.5), GatewayError);
  reply(0.4, json::array({{{"label", "house"}, {"box", {0, 0, 1, 1}}, {"score", 1.5}}}));
  CHECK_THROWS_AS(ground.ground(image, {4, 3}, labels, 0.4, 0.5), GatewayError);
  CHECK_THROWS_AS(ground.ground(image, {4, 3}, {}, 0.5, 0.5), std::invalid_argument);
}

TEST_CASE("ocr trims text, handles blanks and can run over a chat endpoint") {
  Rig rig;
  auto session = rig.session();
  OcrClient ocr(session);
  const auto sign = tiny_png({10, 10, 10});
  const auto blank = tiny_png({255, 255, 255});
  rig.mock->add(session->make_request(OcrClient::kPath, OcrClient::request_body(sign)), {{200, R"({"text": "  Lower Mill \n"})"}});
  rig.mock->add(session->make_request(OcrClient::kPath, OcrClient::request_body(blank)), {{200, R"({"text": ""})"}});
  CHECK(ocr.ocr(sign) == "Lower Mill");
  CHECK(ocr.ocr(blank) == "");

  auto chat_session = rig.session(endpoint("http://chat.test"));
  const auto bank = tiny_png({0, 0, 200});
  rig.mock->add(chat_session->make_request(
                    ChatClient::kPath, ChatClient::request_body(chat_session->config(), OcrClient::kChatPrompt, std::span(&bank, 1))),
                {chat_response("Bradesco\n")});
  OcrClient via_chat(std::make_shared<ChatClient>(chat_session));
  CHECK(via_chat.ocr(bank) == "Bradesco");
  CHECK(&via_chat.session() == chat_session.get());
}

TEST_CASE("trim") {
  CHECK(trim("  a b \n") == "a b");
  CHECK(trim("\t\n ") == "");
  CHECK(trim("x") == "x");
}
