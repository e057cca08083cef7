#pragma once

#include <cstddef>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "geoloc/clock.hpp"
#include "geoloc/gateway.hpp"
#include "geoloc/osm.hpp"
#include "geoloc/pipeline.hpp"
#include "geoloc/transport.hpp"

namespace geoloc {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class TransportMode { Http, Mock };

struct TransportSettings {
  TransportMode mode = TransportMode::Http;
  std::filesystem::path fixtures;                 // mock mode
  std::optional<std::filesystem::path> record_to;  // http mode: also write fixtures here
};

inline constexpr std::string_view kChatRoles[] = {"reasoner", "reasoner_untrained", "searcher", "guesser"};
inline constexpr std::string_view kServiceRoles[] = {"embed", "ground", "ocr"};

/// Everything a batch run needs, resolved from the JSON config file:
///
///   {
///     "transport":  {"mode": "http" | "mock", "fixtures": dir, "record": dir},
///     "endpoints":  {"defaults": {...}, "reasoner": {...}, "reasoner_untrained": {...},
///                    "searcher": {...}, "guesser": {...}, "embed": {..., "dimension": n},
///                    "ground": {...}, "ocr": {..., "mode": "dedicated" | "chat"},
///                    "osm": {"base_url", "min_interval_ms", "timeout_ms", "user_agent", "cache"}},
///     "searcher":   {"elements", "sign_labels", "preset", "box_threshold", "text_threshold", "top_crops"},
///     "retrieval":  {"index": path, "k": 3, "d_t": 30},
///     "ablations":  {"enable_reasoner": true, "enable_searcher": true},
///     "prompts":    {"reasoner": path, "searcher": path, "guesser": path},
///     "evaluation": {"city_fallback": true},
///     "output":     {"include_latency": false}
///   }
///
/// Endpoint fields: base_url, model, timeout_ms, max_retries, temperature,
/// max_output, concurrency, backoff_ms, token. Relative paths resolve against
/// the config file's directory.
struct RunConfig {
  PipelineConfig pipeline;
  std::map<std::string, EndpointConfig> endpoints;
  bool ocr_via_chat = false;
  std::optional<std::size_t> embed_dimension;
  std::optional<OsmConfig> osm;
  std::optional<std::filesystem::path> index_path;
  TransportSettings transport;
  bool include_latency = false;
  std::vector<std::string> ablations;

  /// Canonical form with bearer tokens removed and prompt texts inlined.
  nlohmann::ordered_json resolved() const;
  std::string digest() const;
};

using EnvLookup = std::function<std::optional<std::string>(const std::string&)>;

std::optional<std::string> process_env(const std::string& name);

/// Parses and validates a config document. GEOLOC_<ROLE>_URL and
/// GEOLOC_<ROLE>_TOKEN (ROLE = REASONER, GUESSER, EMBED, OSM, ...) override
/// the file. Throws ConfigError.
RunConfig parse_run_config(const nlohmann::json& doc, const std::filesystem::path& base_dir,
                           const EnvLookup& env = process_env);
RunConfig load_run_config(const std::filesystem::path& path, const EnvLookup& env = process_env);

/// "reasoner" disables the reasoner, "searcher" disables the searcher and
/// "training" swaps in the reasoner_untrained endpoint. Throws ConfigError.
void apply_ablation(RunConfig& config, std::string_view name);

/// HTTP or fixture-replay transport, wrapped in a recorder when record_to is
/// set. Throws ConfigError.
std::shared_ptr<Transport> make_transport(const TransportSettings& settings);

/// Owns the transport, clock, sessions and clients for one run.
class Runtime {
 public:
  /// `transport` and `clock` override the configured ones (used by tests).
  explicit Runtime(const RunConfig& config, std::shared_ptr<Transport> transport = nullptr,
                   std::shared_ptr<Clock> clock = nullptr);

  PipelineServices services(std::function<void(std::string_view)> log = {}) const;

  /// Outbound requests per role: reasoner, searcher, guesser, embed, ground,
  /// ocr, map, geocode. Roles that were never built report 0.
  std::map<std::string, std::size_t> tool_calls() const;

  const std::shared_ptr<Transport>& transport() const { return transport_; }

 private:
  std::shared_ptr<Transport> transport_;
  std::shared_ptr<Clock> clock_;
  std::map<std::string, std::shared_ptr<EndpointSession>> sessions_;
  PipelineServices services_;
};

}  // namespace geoloc
