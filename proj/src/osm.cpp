#include "geoloc/osm.hpp"

#include <cctype>
#include <fstream>

#include <nlohmann/json.hpp>

#include "geoloc/gateway.hpp"

namespace geoloc {
namespace {

using nlohmann::json;

std::string cache_key(std::string_view query, std::size_t limit) {
  return NominatimClient::normalize_query(query) + "\x1f" + std::to_string(limit);
}

double number_field(const json& object, const char* name) {
  const json& v = object.at(name);
  if (v.is_number()) return v.get<double>();
  return std::stod(v.get<std::string>());
}

}  // namespace

std::string url_encode(std::string_view text) {
  static constexpr char kHex[] = "0123456789ABCDEF";
  std::string out;
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (std::isalnum(c) || c == '-' || c == '_' || c == '.' || c == '~') {
      out.push_back(ch);
    } else {
      out.push_back('%');
      out.push_back(kHex[c >> 4]);
      out.push_back(kHex[c & 0xf]);
    }
  }
  return out;
}

RateLimiter::RateLimiter(std::chrono::milliseconds interval, std::shared_ptr<Clock> clock)
    : interval_(interval), clock_(std::move(clock)) {}

void RateLimiter::acquire() {
  std::lock_guard lock(mutex_);
  if (interval_.count() <= 0) return;
  if (last_) {
    const auto ready = *last_ + interval_;
    if (clock_->now() < ready) clock_->sleep_until(ready);
  }
  last_ = clock_->now();
}

SearchCache::SearchCache(std::filesystem::path file) : file_(std::move(file)) {
  std::ifstream in(*file_);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    try {
      const json entry = json::parse(line);
      entries_[entry.at("key").get<std::string>()] = entry.at("body").get<std::string>();
    } catch (const json::exception&) {
      // A torn final line from an interrupted run; later lines still load.
    }
  }
}

std::optional<std::string> SearchCache::get(const std::string& key) const {
  std::lock_guard lock(mutex_);
  if (auto it = entries_.find(key); it != entries_.end()) return it->second;
  return std::nullopt;
}

void SearchCache::put(const std::string& key, const std::string& body) {
  std::lock_guard lock(mutex_);
  if (!entries_.emplace(key, body).second) return;
  if (!file_) return;
  std::ofstream out(*file_, std::ios::app);
  if (!out) throw OsmError("cannot append to cache file " + file_->string());
  out << json{{"key", key}, {"body", body}}.dump() << '\n';
}

std::size_t SearchCache::size() const {
  std::lock_guard lock(mutex_);
  return entries_.size();
}

std::chrono::milliseconds OsmConfig::effective_interval() const {
  if (min_interval) return *min_interval;
  return base_url.starts_with(kPublicUrl) ? std::chrono::milliseconds(1000)
                                          : std::chrono::milliseconds(0);
}

NominatimClient::NominatimClient(OsmConfig config, std::shared_ptr<Transport> transport,
                                 std::shared_ptr<Clock> clock, std::shared_ptr<RateLimiter> limiter,
                                 std::shared_ptr<SearchCache> cache)
    : config_(std::move(config)),
      transport_(std::move(transport)),
      clock_(std::move(clock)),
      limiter_(std::move(limiter)),
      cache_(std::move(cache)) {
  if (!limiter_) limiter_ = std::make_shared<RateLimiter>(config_.effective_interval(), clock_);
  if (!cache_) {
    cache_ = config_.cache_file ? std::make_shared<SearchCache>(*config_.cache_file)
                                : std::make_shared<SearchCache>();
  }
}

std::string NominatimClient::normalize_query(std::string_view query) {
  std::string out;
  bool pending_space = false;
  for (char ch : query) {
    const auto c = static_cast<unsigned char>(ch);
    if (std::isspace(c)) {
      pending_space = !out.empty();
      continue;
    }
    if (pending_space) out.push_back(' ');
    pending_space = false;
    out.push_back(static_cast<char>(std::tolower(c)));
  }
  return out;
}

HttpRequest NominatimClient::make_request(std::string_view query, std::size_t limit) const {
  std::string base = config_.base_url;
  while (!base.empty() && base.back() == '/') base.pop_back();
  HttpRequest request;
  request.method = "GET";
  request.url = base + "/search?q=" + url_encode(trim(query)) +
                "&format=json&limit=" + std::to_string(limit);
  request.headers.emplace_back("User-Agent", config_.user_agent);
  request.timeout = config_.timeout;
  return request;
}

std::vector<Place> NominatimClient::parse_response(std::string_view body, std::size_t limit) {
  json doc;
  try {
    doc = json::parse(body);
  } catch (const json::parse_error& e) {
    throw OsmError(std::string("malformed Nominatim response: ") + e.what());
  }
  if (!doc.is_array()) throw OsmError("malformed Nominatim response: expected a JSON array");

  std::vector<Place> places;
  for (std::size_t i = 0; i < doc.size() && places.size() < limit; ++i) {
    const json& item = doc[i];
    try {
      Place place;
      place.address = item.at("display_name").get<std::string>();
      if (auto it = item.find("name"); it != item.end() && it->is_string() && !it->get<std::string>().empty()) {
        place.name = it->get<std::string>();
      } else {
        place.name = place.address.substr(0, place.address.find(','));
      }
      const double lat = number_field(item, "lat");
      const double lon = number_field(item, "lon");
      if (!in_coordinate_bounds(lat, lon)) throw OsmError("coordinates out of range");
      place.location = GeoPoint(lat, lon);
      if (item.contains("importance")) place.importance = number_field(item, "importance");
      place.rank = i;
      places.push_back(std::move(place));
    } catch (const std::exception& e) {
      throw OsmError("malformed Nominatim result #" + std::to_string(i) + ": " + e.what());
    }
  }
  return places;
}

std::vector<Place> NominatimClient::search(std::string_view query, std::size_t limit) {
  if (trim(query).empty()) throw std::invalid_argument("map search query is blank");
  if (limit == 0) throw std::invalid_argument("map search limit must be positive");

  const std::string key = cache_key(query, limit);
  if (auto cached = cache_->get(key)) return parse_response(*cached, limit);

  const HttpRequest request = make_request(query, limit);
  limiter_->acquire();
  {
    std::lock_guard lock(count_mutex_);
    ++sent_;
  }
  HttpResponse response;
  try {
    response = transport_->send(request);
  } catch (const TransportError& e) {
    throw OsmError(std::string("map search failed: ") + e.what());
  }
  if (response.status == 429) {
    throw OsmRateLimitedError("Nominatim rate limit exceeded for query '" + std::string(query) + "'");
  }
  if (response.status < 200 || response.status >= 300) {
    throw OsmError("Nominatim returned HTTP " + std::to_string(response.status));
  }
  auto places = parse_response(response.body, limit);
  cache_->put(key, response.body);
  return places;
}

std::optional<GeoPoint> NominatimClient::geocode_city(std::string_view country, std::string_view city) {
  const std::string country_name = trim(country);
  if (country_name.empty()) throw std::invalid_argument("geocode_city needs a country");
  const std::string city_name = trim(city);
  const std::string query = city_name.empty() ? country_name : city_name + ", " + country_name;
  const auto places = search(query, 1);
  if (places.empty()) return std::nullopt;
  return places.front().location;
}

std::size_t NominatimClient::requests_sent() const {
  std::lock_guard lock(count_mutex_);
  return sent_;
}

}  // namespace geoloc
