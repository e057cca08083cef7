#include "geoloc/config.hpp"

#include <algorithm>
#include <cctype>
#include <cstdlib>
#include <fstream>
#include <initializer_list>
#include <iterator>
#include <set>

#include "geoloc/digest.hpp"
#include "geoloc/embedindex.hpp"

namespace geoloc {
namespace {

using nlohmann::json;
using nlohmann::ordered_json;
namespace fs = std::filesystem;

void only_keys(const json& object, std::string_view where, std::initializer_list<std::string_view> allowed) {
  if (!object.is_object()) throw ConfigError(std::string(where) + " must be an object");
  for (const auto& [key, value] : object.items()) {
    if (std::find(allowed.begin(), allowed.end(), key) == allowed.end()) {
      throw ConfigError("unknown key '" + key + "' in " + std::string(where));
    }
  }
}

template <typename T>
T get_or(const json& object, const char* key, T fallback, std::string_view where) {
  const auto it = object.find(key);
  if (it == object.end() || it->is_null()) return fallback;
  try {
    return it->get<T>();
  } catch (const json::exception&) {
    throw ConfigError(std::string(where) + "." + key + " has the wrong type");
  }
}

fs::path resolve(const fs::path& base, const std::string& path) {
  const fs::path p(path);
  return (p.is_absolute() ? p : base / p).lexically_normal();
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read prompt file " + path.string());
  return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

std::string upper(std::string_view text) {
  std::string out(text);
  std::transform(out.begin(), out.end(), out.begin(),
                 [](unsigned char c) { return static_cast<char>(std::toupper(c)); });
  return out;
}

EndpointConfig parse_endpoint(const json& object, const EndpointConfig& defaults, std::string_view role) {
  const std::string where = "endpoints." + std::string(role);
  only_keys(object, where,
            {"base_url", "model", "timeout_ms", "max_retries", "temperature", "max_output", "concurrency",
             "backoff_ms", "token", "dimension", "mode"});
  EndpointConfig e = defaults;
  e.base_url = get_or(object, "base_url", e.base_url, where);
  e.model = get_or(object, "model", e.model, where);
  e.timeout = std::chrono::milliseconds(get_or<long long>(object, "timeout_ms", e.timeout.count(), where));
  e.max_retries = get_or(object, "max_retries", e.max_retries, where);
  e.temperature = get_or(object, "temperature", e.temperature, where);
  e.max_output = get_or(object, "max_output", e.max_output, where);
  e.concurrency = get_or(object, "concurrency", e.concurrency, where);
  e.backoff = std::chrono::milliseconds(get_or<long long>(object, "backoff_ms", e.backoff.count(), where));
  e.bearer_token = get_or(object, "token", e.bearer_token, where);
  return e;
}

ordered_json endpoint_json(const EndpointConfig& e) {
  return {{"base_url", e.base_url},     {"model", e.model},
          {"timeout_ms", e.timeout.count()}, {"max_retries", e.max_retries},
          {"temperature", e.temperature}, {"max_output", e.max_output},
          {"concurrency", e.concurrency}, {"backoff_ms", e.backoff.count()}};
}

}  // namespace

std::optional<std::string> process_env(const std::string& name) {
  if (const char* value = std::getenv(name.c_str()); value != nullptr && *value != '\0') return std::string(value);
  return std::nullopt;
}

RunConfig parse_run_config(const json& doc, const fs::path& base_dir, const EnvLookup& env) {
  only_keys(doc, "config",
            {"transport", "endpoints", "searcher", "retrieval", "ablations", "prompts", "evaluation", "output"});
  RunConfig config;
  const json empty = json::object();
  auto section = [&](const char* name) -> const json& {
    const auto it = doc.find(name);
    return it == doc.end() ? empty : *it;
  };

  const json& transport = section("transport");
  only_keys(transport, "transport", {"mode", "fixtures", "record"});
  const std::string mode = get_or<std::string>(transport, "mode", "http", "transport");
  if (mode == "mock") {
    config.transport.mode = TransportMode::Mock;
    const auto fixtures = get_or<std::string>(transport, "fixtures", "", "transport");
    if (fixtures.empty()) throw ConfigError("transport.fixtures is required in mock mode");
    config.transport.fixtures = resolve(base_dir, fixtures);
  } else if (mode != "http") {
    throw ConfigError("transport.mode must be 'http' or 'mock'");
  }
  if (const auto record = get_or<std::string>(transport, "record", "", "transport"); !record.empty()) {
    config.transport.record_to = resolve(base_dir, record);
  }

  const json& endpoints = section("endpoints");
  only_keys(endpoints, "endpoints",
            {"defaults", "reasoner", "reasoner_untrained", "searcher", "guesser", "embed", "ground", "ocr", "osm"});
  EndpointConfig defaults;
  if (auto it = endpoints.find("defaults"); it != endpoints.end()) defaults = parse_endpoint(*it, {}, "defaults");

  auto read_role = [&](std::string_view role) {
    const std::string key(role);
    const std::string env_prefix = "GEOLOC_" + upper(role);
    std::optional<EndpointConfig> endpoint;
    if (auto it = endpoints.find(key); it != endpoints.end()) endpoint = parse_endpoint(*it, defaults, role);
    if (auto url = env(env_prefix + "_URL")) {
      if (!endpoint) endpoint = defaults;
      endpoint->base_url = *url;
    }
    if (!endpoint) return;
    if (auto token = env(env_prefix + "_TOKEN")) endpoint->bearer_token = *token;
    try {
      endpoint->validate();
    } catch (const std::invalid_argument& e) {
      throw ConfigError("endpoints." + key + ": " + e.what());
    }
    config.endpoints[key] = *endpoint;
  };
  for (auto role : kChatRoles) read_role(role);
  for (auto role : kServiceRoles) read_role(role);

  if (auto it = endpoints.find("embed"); it != endpoints.end() && it->contains("dimension")) {
    config.embed_dimension = get_or<std::size_t>(*it, "dimension", 0, "endpoints.embed");
    if (*config.embed_dimension == 0) throw ConfigError("endpoints.embed.dimension must be positive");
  }
  if (auto it = endpoints.find("ocr"); it != endpoints.end()) {
    const auto ocr_mode = get_or<std::string>(*it, "mode", "dedicated", "endpoints.ocr");
    if (ocr_mode != "dedicated" && ocr_mode != "chat") throw ConfigError("endpoints.ocr.mode must be 'dedicated' or 'chat'");
    config.ocr_via_chat = ocr_mode == "chat";
  }

  const auto osm_it = endpoints.find("osm");
  const auto osm_url = env("GEOLOC_OSM_URL");
  if (osm_it != endpoints.end() || osm_url) {
    const json& o = osm_it != endpoints.end() ? *osm_it : empty;
    only_keys(o, "endpoints.osm", {"base_url", "min_interval_ms", "timeout_ms", "user_agent", "cache"});
    OsmConfig osm;
    osm.base_url = get_or(o, "base_url", osm.base_url, "endpoints.osm");
    if (osm_url) osm.base_url = *osm_url;
    if (o.contains("min_interval_ms")) {
      osm.min_interval = std::chrono::milliseconds(get_or<long long>(o, "min_interval_ms", 0, "endpoints.osm"));
    }
    osm.timeout = std::chrono::milliseconds(get_or<long long>(o, "timeout_ms", osm.timeout.count(), "endpoints.osm"));
    osm.user_agent = get_or(o, "user_agent", osm.user_agent, "endpoints.osm");
    if (const auto cache = get_or<std::string>(o, "cache", "", "endpoints.osm"); !cache.empty()) {
      osm.cache_file = resolve(base_dir, cache);
    }
    config.osm = osm;
  }

  PipelineConfig& p = config.pipeline;
  const json& searcher = section("searcher");
  only_keys(searcher, "searcher",
            {"elements", "sign_labels", "preset", "box_threshold", "text_threshold", "top_crops"});
  p.elements.elements = get_or(searcher, "elements", p.elements.elements, "searcher");
  p.elements.sign_labels = get_or(searcher, "sign_labels", p.elements.sign_labels, "searcher");
  if (searcher.contains("preset")) {
    const auto name = get_or<std::string>(searcher, "preset", "", "searcher");
    const auto preset = GroundingThresholds::preset(name);
    if (!preset) throw ConfigError("unknown grounding preset '" + name + "' (expected gws or im2gps)");
    p.grounding = *preset;
  }
  p.grounding.box = get_or(searcher, "box_threshold", p.grounding.box, "searcher");
  p.grounding.text = get_or(searcher, "text_threshold", p.grounding.text, "searcher");
  p.top_crops = get_or(searcher, "top_crops", p.top_crops, "searcher");

  const json& retrieval = section("retrieval");
  only_keys(retrieval, "retrieval", {"index", "k", "d_t"});
  if (const auto index = get_or<std::string>(retrieval, "index", "", "retrieval"); !index.empty()) {
    config.index_path = resolve(base_dir, index);
  }
  p.retrieval_k = get_or(retrieval, "k", p.retrieval_k, "retrieval");
  p.retrieval_max_distance = get_or(retrieval, "d_t", p.retrieval_max_distance, "retrieval");

  const json& ablations = section("ablations");
  only_keys(ablations, "ablations", {"enable_reasoner", "enable_searcher"});
  p.enable_reasoner = get_or(ablations, "enable_reasoner", p.enable_reasoner, "ablations");
  p.enable_searcher = get_or(ablations, "enable_searcher", p.enable_searcher, "ablations");

  const json& prompts = section("prompts");
  only_keys(prompts, "prompts", {"reasoner", "searcher", "guesser"});
  if (auto path = get_or<std::string>(prompts, "reasoner", "", "prompts"); !path.empty()) {
    p.prompts.reasoner = read_text(resolve(base_dir, path));
  }
  if (auto path = get_or<std::string>(prompts, "searcher", "", "prompts"); !path.empty()) {
    p.prompts.searcher = read_text(resolve(base_dir, path));
  }
  if (auto path = get_or<std::string>(prompts, "guesser", "", "prompts"); !path.empty()) {
    p.prompts.guesser = read_text(resolve(base_dir, path));
  }

  const json& evaluation = section("evaluation");
  only_keys(evaluation, "evaluation", {"city_fallback"});
  p.city_fallback = get_or(evaluation, "city_fallback", p.city_fallback, "evaluation");

  const json& output = section("output");
  only_keys(output, "output", {"include_latency"});
  config.include_latency = get_or(output, "include_latency", config.include_latency, "output");

  try {
    p.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  return config;
}

RunConfig load_run_config(const fs::path& path, const EnvLookup& env) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  const fs::path base = fs::absolute(path).parent_path();
  return parse_run_config(doc, base, env);
}

void apply_ablation(RunConfig& config, std::string_view name) {
  if (name == "reasoner") {
    config.pipeline.enable_reasoner = false;
  } else if (name == "searcher") {
    config.pipeline.enable_searcher = false;
  } else if (name == "training") {
    const auto it = config.endpoints.find("reasoner_untrained");
    if (it == config.endpoints.end()) {
      throw ConfigError("--ablate=training needs endpoints.reasoner_untrained");
    }
    config.endpoints["reasoner"] = it->second;
  } else {
    throw ConfigError("unknown ablation '" + std::string(name) + "' (expected reasoner, searcher or training)");
  }
  config.ablations.emplace_back(name);
}

ordered_json RunConfig::resolved() const {
  ordered_json doc;
  doc["transport"] = transport.mode == TransportMode::Mock ? "mock" : "http";
  ordered_json eps = ordered_json::object();
  for (const auto& [role, endpoint] : endpoints) eps[role] = endpoint_json(endpoint);
  doc["endpoints"] = std::move(eps);
  doc["ocr_mode"] = ocr_via_chat ? "chat" : "dedicated";
  doc["embed_dimension"] = embed_dimension ? ordered_json(*embed_dimension) : ordered_json(nullptr);
  if (osm) {
    doc["osm"] = {{"base_url", osm->base_url},
                  {"min_interval_ms", osm->effective_interval().count()},
                  {"timeout_ms", osm->timeout.count()}};
  } else {
    doc["osm"] = nullptr;
  }
  doc["index"] = index_path ? ordered_json(index_path->string()) : ordered_json(nullptr);
  const PipelineConfig& p = pipeline;
  doc["searcher"] = {{"elements", p.elements.elements},
                     {"sign_labels", p.elements.sign_labels},
                     {"box_threshold", p.grounding.box},
                     {"text_threshold", p.grounding.text},
                     {"top_crops", p.top_crops}};
  doc["retrieval"] = {{"k", p.retrieval_k}, {"d_t", p.retrieval_max_distance}};
  doc["ablations"] = {{"enable_reasoner", p.enable_reasoner},
                      {"enable_searcher", p.enable_searcher},
                      {"applied", ablations}};
  doc["prompts"] = {{"reasoner", p.prompts.reasoner}, {"searcher", p.prompts.searcher}, {"guesser", p.prompts.guesser}};
  doc["evaluation"] = {{"city_fallback", p.city_fallback}};
  doc["output"] = {{"include_latency", include_latency}};
  return doc;
}

std::string RunConfig::digest() const { return sha256_hex(resolved().dump()); }

std::shared_ptr<Transport> make_transport(const TransportSettings& settings) {
  std::shared_ptr<Transport> transport;
  try {
    if (settings.mode == TransportMode::Mock) {
      transport = std::make_shared<MockTransport>(settings.fixtures);
    } else {
      transport = std::make_shared<HttpTransport>();
    }
    if (settings.record_to) transport = std::make_shared<RecordingTransport>(transport, *settings.record_to);
  } catch (const std::exception& e) {
    throw ConfigError(e.what());
  }
  return transport;
}

Runtime::Runtime(const RunConfig& config, std::shared_ptr<Transport> transport, std::shared_ptr<Clock> clock)
    : transport_(std::move(transport)), clock_(std::move(clock)) {
  if (!clock_) clock_ = std::make_shared<SystemClock>();
  if (!transport_) transport_ = make_transport(config.transport);

  const PipelineConfig& p = config.pipeline;
  auto session = [&](const std::string& role) -> std::shared_ptr<EndpointSession> {
    const auto it = config.endpoints.find(role);
    if (it == config.endpoints.end()) return nullptr;
    auto s = std::make_shared<EndpointSession>(it->second, transport_, clock_);
    sessions_[role] = s;
    return s;
  };

  services_.clock = clock_;
  auto guesser = session("guesser");
  if (!guesser) throw ConfigError("endpoints.guesser is required");
  services_.guesser = std::make_shared<ChatClient>(guesser);
  if (p.enable_reasoner) {
    auto s = session("reasoner");
    if (!s) throw ConfigError("reasoner is enabled but endpoints.reasoner is not configured");
    services_.reasoner = std::make_shared<ChatClient>(s);
  }

  if (p.enable_searcher) {
    if (auto s = session("searcher")) services_.searcher = std::make_shared<ChatClient>(s);
    if (auto s = session("ground")) services_.ground = std::make_shared<GroundClient>(s);
    if (auto s = session("ocr")) {
      services_.ocr = config.ocr_via_chat ? std::make_shared<OcrClient>(std::make_shared<ChatClient>(s))
                                          : std::make_shared<OcrClient>(s);
    }
    if (auto s = session("embed")) services_.embed = std::make_shared<EmbedClient>(s, config.embed_dimension);
    if (config.index_path) {
      try {
        services_.index = std::make_shared<EmbeddingIndex>(EmbeddingIndex::load(*config.index_path));
      } catch (const IndexError& e) {
        throw ConfigError(std::string("cannot load guidebook index: ") + e.what());
      }
      if (config.embed_dimension && *config.embed_dimension != services_.index->dim()) {
        throw ConfigError("endpoints.embed.dimension " + std::to_string(*config.embed_dimension) +
                          " does not match index dimension " + std::to_string(services_.index->dim()));
      }
    }
  }

  if (config.osm) {
    std::shared_ptr<RateLimiter> limiter;
    std::shared_ptr<SearchCache> cache;
    if (p.enable_searcher) {
      services_.osm = std::make_shared<NominatimClient>(*config.osm, transport_, clock_);
      limiter = services_.osm->limiter();
      cache = services_.osm->cache();
    }
    if (p.city_fallback) {
      services_.geocoder = std::make_shared<NominatimClient>(*config.osm, transport_, clock_, limiter, cache);
    }
  }
}

PipelineServices Runtime::services(std::function<void(std::string_view)> log) const {
  PipelineServices s = services_;
  s.log = std::move(log);
  return s;
}

std::map<std::string, std::size_t> Runtime::tool_calls() const {
  std::map<std::string, std::size_t> calls;
  for (const char* role : {"reasoner", "searcher", "guesser", "embed", "ground", "ocr"}) {
    const auto it = sessions_.find(role);
    calls[role] = it == sessions_.end() ? 0 : it->second->requests_sent();
  }
  calls["map"] = services_.osm ? services_.osm->requests_sent() : 0;
  calls["geocode"] = services_.geocoder ? services_.geocoder->requests_sent() : 0;
  return calls;
}

}  // namespace geoloc
