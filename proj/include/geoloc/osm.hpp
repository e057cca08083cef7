#pragma once

#include <chrono>
#include <cstddef>
#include <filesystem>
#include <memory>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "geoloc/clock.hpp"
#include "geoloc/geodesy.hpp"
#include "geoloc/transport.hpp"

namespace geoloc {

struct Place {
  std::string name;
  std::string address;
  GeoPoint location;
  double importance = 0.0;
  std::size_t rank = 0;  // position in the service response

  friend bool operator==(const Place&, const Place&) = default;
};

class OsmError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// The service answered 429 (usage policy exceeded).
class OsmRateLimitedError : public OsmError {
 public:
  using OsmError::OsmError;
};

/// Guarantees at least `interval` between consecutive acquire() returns.
class RateLimiter {
 public:
  RateLimiter(std::chrono::milliseconds interval, std::shared_ptr<Clock> clock);
  void acquire();

 private:
  std::chrono::milliseconds interval_;
  std::shared_ptr<Clock> clock_;
  std::mutex mutex_;
  std::optional<Clock::time_point> last_;
};

/// Raw response bodies keyed by normalized query; optionally persisted as an
/// append-only JSONL file of {"key", "body"} lines.
class SearchCache {
 public:
  SearchCache() = default;
  explicit SearchCache(std::filesystem::path file);

  std::optional<std::string> get(const std::string& key) const;
  void put(const std::string& key, const std::string& body);
  std::size_t size() const;

 private:
  std::optional<std::filesystem::path> file_;
  mutable std::mutex mutex_;
  std::unordered_map<std::string, std::string> entries_;
};

struct OsmConfig {
  static constexpr std::string_view kPublicUrl = "https://nominatim.openstreetmap.org";

  std::string base_url{kPublicUrl};
  // Unset: 1 s against the public server, none for self-hosted instances.
  std::optional<std::chrono::milliseconds> min_interval;
  std::chrono::milliseconds timeout{30000};
  std::string user_agent = "geoloc-eval/1.0";
  std::optional<std::filesystem::path> cache_file;
  std::size_t default_limit = 3;

  std::chrono::milliseconds effective_interval() const;
};

class NominatimClient {
 public:
  /// `limiter` and `cache` may be shared between clients that talk to the same
  /// server; when null they are built from `config`.
  NominatimClient(OsmConfig config, std::shared_ptr<Transport> transport, std::shared_ptr<Clock> clock,
                  std::shared_ptr<RateLimiter> limiter = nullptr,
                  std::shared_ptr<SearchCache> cache = nullptr);

  /// Lowercased with whitespace runs collapsed to one space and trimmed.
  static std::string normalize_query(std::string_view query);
  static std::vector<Place> parse_response(std::string_view body, std::size_t limit);
  HttpRequest make_request(std::string_view query, std::size_t limit) const;

  /// At most `limit` places in service order. Throws std::invalid_argument for
  /// a blank query, OsmRateLimitedError on HTTP 429, OsmError otherwise.
  std::vector<Place> search(std::string_view query, std::size_t limit = 3);

  /// First hit for "city, country" ("country" when city is blank).
  std::optional<GeoPoint> geocode_city(std::string_view country, std::string_view city);

  std::size_t requests_sent() const;
  const OsmConfig& config() const { return config_; }
  const std::shared_ptr<RateLimiter>& limiter() const { return limiter_; }
  const std::shared_ptr<SearchCache>& cache() const { return cache_; }

 private:
  OsmConfig config_;
  std::shared_ptr<Transport> transport_;
  std::shared_ptr<Clock> clock_;
  std::shared_ptr<RateLimiter> limiter_;
  std::shared_ptr<SearchCache> cache_;
  mutable std::mutex count_mutex_;
  std::size_t sent_ = 0;
};

std::string url_encode(std::string_view text);

}  // namespace geoloc
