#include "geoloc/transport.hpp"

#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "geoloc/digest.hpp"

namespace geoloc {
namespace {

using nlohmann::json;

std::size_t authority_end(const std::string& url) {
  const std::size_t scheme = url.find("://");
  const std::size_t start = scheme == std::string::npos ? 0 : scheme + 3;
  const std::size_t slash = url.find_first_of("/?", start);
  return slash == std::string::npos ? url.size() : slash;
}

json fixture_document(const HttpRequest& request, const std::vector<MockReply>& replies) {
  json doc;
  doc["request"] = {{"method", request.method}, {"target", request.target()}, {"body", request.body}};
  doc["replies"] = json::array();
  for (const auto& reply : replies) {
    json r = {{"status", reply.status}, {"body", reply.body}};
    if (reply.timeout) r["timeout"] = true;
    doc["replies"].push_back(std::move(r));
  }
  return doc;
}

std::vector<MockReply> parse_replies(const json& doc, const std::filesystem::path& file) {
  std::vector<MockReply> replies;
  const json& list = doc.at("replies");
  for (const auto& r : list) {
    MockReply reply;
    reply.status = r.value("status", 200);
    reply.body = r.value("body", std::string());
    reply.timeout = r.value("timeout", false);
    replies.push_back(std::move(reply));
  }
  if (replies.empty()) throw std::runtime_error("fixture " + file.string() + " has no replies");
  return replies;
}

}  // namespace

std::string HttpRequest::target() const {
  std::string t = url.substr(authority_end(url));
  return t.empty() || t.front() != '/' ? "/" + t : t;
}

std::string HttpRequest::origin() const { return url.substr(0, authority_end(url)); }

MockTransport::MockTransport(std::filesystem::path fixtures_dir) : dir_(std::move(fixtures_dir)) {
  if (!std::filesystem::is_directory(*dir_)) {
    throw std::runtime_error("mock fixtures directory not found: " + dir_->string());
  }
}

std::string MockTransport::fixture_key(const HttpRequest& request) {
  return sha256_hex(request.method + "\n" + request.target() + "\n" + request.body);
}

void MockTransport::add(const HttpRequest& request, std::vector<MockReply> replies) {
  std::lock_guard lock(mutex_);
  entries_[fixture_key(request)] = Entry{std::move(replies), 0};
}

MockTransport::Entry* MockTransport::find_locked(const std::string& key) {
  if (auto it = entries_.find(key); it != entries_.end()) return &it->second;
  if (!dir_) return nullptr;
  const auto file = *dir_ / (key + ".json");
  std::ifstream in(file);
  if (!in) return nullptr;
  const json doc = json::parse(in);
  auto [it, inserted] = entries_.emplace(key, Entry{parse_replies(doc, file), 0});
  return &it->second;
}

HttpResponse MockTransport::send(const HttpRequest& request) {
  const std::string key = fixture_key(request);
  std::lock_guard lock(mutex_);
  calls_.push_back({request.method, request.url, key});
  Entry* entry = find_locked(key);
  if (entry == nullptr) {
    missing_.push_back(request.method + " " + request.url + " [" + key + "]");
    throw TransportError(TransportError::Kind::MissingFixture,
                         "no mock fixture for " + request.method + " " + request.target() + " (key " +
                             key + ")");
  }
  const MockReply& reply = entry->replies[std::min(entry->served, entry->replies.size() - 1)];
  ++entry->served;
  if (reply.timeout) {
    throw TransportError(TransportError::Kind::Timeout, "simulated timeout for " + request.url);
  }
  return {reply.status, reply.body};
}

std::vector<MockTransport::Call> MockTransport::calls() const {
  std::lock_guard lock(mutex_);
  return calls_;
}

std::vector<std::string> MockTransport::missing() const {
  std::lock_guard lock(mutex_);
  return missing_;
}

std::size_t MockTransport::count_calls(const std::string& prefix) const {
  std::lock_guard lock(mutex_);
  std::size_t n = 0;
  for (const auto& call : calls_) {
    if (call.url.starts_with(prefix)) ++n;
  }
  return n;
}

void write_fixture(const std::filesystem::path& dir, const HttpRequest& request,
                   const std::vector<MockReply>& replies) {
  std::filesystem::create_directories(dir);
  const auto file = dir / (MockTransport::fixture_key(request) + ".json");
  std::ofstream out(file, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write fixture " + file.string());
  out << fixture_document(request, replies).dump(2) << '\n';
}

RecordingTransport::RecordingTransport(std::shared_ptr<Transport> inner, std::filesystem::path dir)
    : inner_(std::move(inner)), dir_(std::move(dir)) {
  std::filesystem::create_directories(dir_);
}

HttpResponse RecordingTransport::send(const HttpRequest& request) {
  MockReply reply;
  HttpResponse response;
  try {
    response = inner_->send(request);
    reply = {response.status, response.body, false};
  } catch (const TransportError& e) {
    if (e.kind() != TransportError::Kind::Timeout) throw;
    reply.timeout = true;
    std::lock_guard lock(mutex_);
    auto& replies = recorded_[MockTransport::fixture_key(request)];
    replies.push_back(reply);
    write_fixture(dir_, request, replies);
    throw;
  }
  std::lock_guard lock(mutex_);
  auto& replies = recorded_[MockTransport::fixture_key(request)];
  replies.push_back(reply);
  write_fixture(dir_, request, replies);
  return response;
}

}  // namespace geoloc
