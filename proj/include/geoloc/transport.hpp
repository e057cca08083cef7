#pragma once

#include <chrono>
#include <cstddef>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace geoloc {

struct HttpRequest {
  std::string method = "POST";
  std::string url;  // absolute: scheme://host[:port]/path[?query]
  std::vector<std::pair<std::string, std::string>> headers;
  std::string body;
  std::chrono::milliseconds timeout{60000};

  // "/path?query" part of url.
  std::string target() const;
  // "scheme://host[:port]" part of url.
  std::string origin() const;
};

struct HttpResponse {
  int status = 0;
  std::string body;
};

class TransportError : public std::runtime_error {
 public:
  enum class Kind { Connection, Timeout, MissingFixture };

  TransportError(Kind kind, const std::string& message) : std::runtime_error(message), kind_(kind) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

/// One request/response exchange. Implementations must be safe to call from
/// several threads at once.
class Transport {
 public:
  virtual ~Transport() = default;
  virtual HttpResponse send(const HttpRequest& request) = 0;
};

/// Real network transport backed by cpp-httplib (http and https).
class HttpTransport final : public Transport {
 public:
  HttpResponse send(const HttpRequest& request) override;
};

/// Scripted reply used by MockTransport fixtures.
struct MockReply {
  int status = 200;
  std::string body;
  bool timeout = false;  // simulate a transport timeout instead of a response
};

/// Deterministic replay transport. Requests are keyed by a digest of method,
/// target and body (the origin is ignored so fixtures survive host changes).
/// Each key holds a reply sequence; the n-th call gets reply n, and the last
/// reply repeats once the sequence is exhausted.
///
/// Fixture directory layout: one "<key>.json" file per request, holding
///   {"request": {...informational...}, "replies": [{"status": 200, "body": "..."}]}
/// An unknown key raises TransportError(MissingFixture) and is remembered in
/// missing() so tests can fail loudly.
class MockTransport final : public Transport {
 public:
  struct Call {
    std::string method;
    std::string url;
    std::string key;
  };

  MockTransport() = default;
  explicit MockTransport(std::filesystem::path fixtures_dir);

  static std::string fixture_key(const HttpRequest& request);

  void add(const HttpRequest& request, std::vector<MockReply> replies);

  HttpResponse send(const HttpRequest& request) override;

  std::vector<Call> calls() const;
  std::vector<std::string> missing() const;
  // Number of logged calls whose url starts with `prefix`.
  std::size_t count_calls(const std::string& prefix) const;

 private:
  struct Entry {
    std::vector<MockReply> replies;
    std::size_t served = 0;
  };
  Entry* find_locked(const std::string& key);

  std::optional<std::filesystem::path> dir_;
  mutable std::mutex mutex_;
  std::map<std::string, Entry> entries_;
  std::vector<Call> calls_;
  std::vector<std::string> missing_;
};

/// Forwards to an inner transport and writes every exchange as a
/// MockTransport fixture into `dir`.
class RecordingTransport final : public Transport {
 public:
  RecordingTransport(std::shared_ptr<Transport> inner, std::filesystem::path dir);
  HttpResponse send(const HttpRequest& request) override;

 private:
  std::shared_ptr<Transport> inner_;
  std::filesystem::path dir_;
  std::mutex mutex_;
  std::map<std::string, std::vector<MockReply>> recorded_;
};

/// Answers with a user-supplied function; useful for scripted fake servers.
class FunctionTransport final : public Transport {
 public:
  using Handler = std::function<HttpResponse(const HttpRequest&)>;
  explicit FunctionTransport(Handler handler) : handler_(std::move(handler)) {}
  HttpResponse send(const HttpRequest& request) override { return handler_(request); }

 private:
  Handler handler_;
};

void write_fixture(const std::filesystem::path& dir, const HttpRequest& request,
                   const std::vector<MockReply>& replies);

}  // namespace geoloc
