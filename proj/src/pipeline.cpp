#include "geoloc/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <cctype>
#include <cstdio>
#include <exception>
#include <thread>

#include <nlohmann/json.hpp>

namespace geoloc {
namespace {

using nlohmann::json;

constexpr std::string_view kInformationSlot = "<information>";
constexpr std::string_view kItemSlot = "{item}";

std::string normalize_label(std::string_view label) {
  std::string out = trim(label);
  std::transform(out.begin(), out.end(), out.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return out;
}

std::string replace_all(std::string text, std::string_view needle, std::string_view value) {
  for (std::size_t pos = text.find(needle); pos != std::string::npos;
       pos = text.find(needle, pos + value.size())) {
    text.replace(pos, needle.size(), value);
  }
  return text;
}

// End index (inclusive) of the balanced object starting at `open`, honoring
// JSON string literals; npos when the braces never balance.
std::size_t matching_brace(std::string_view text, std::size_t open) {
  int depth = 0;
  bool in_string = false;
  bool escaped = false;
  for (std::size_t i = open; i < text.size(); ++i) {
    const char c = text[i];
    if (in_string) {
      if (escaped) {
        escaped = false;
      } else if (c == '\\') {
        escaped = true;
      } else if (c == '"') {
        in_string = false;
      }
      continue;
    }
    if (c == '"') {
      in_string = true;
    } else if (c == '{') {
      ++depth;
    } else if (c == '}') {
      if (--depth == 0) return i;
    }
  }
  return std::string_view::npos;
}

std::optional<json> first_json_object(std::string_view text) {
  for (std::size_t open = text.find('{'); open != std::string_view::npos; open = text.find('{', open + 1)) {
    const std::size_t close = matching_brace(text, open);
    if (close == std::string_view::npos) continue;
    json doc = json::parse(text.substr(open, close - open + 1), nullptr, /*allow_exceptions=*/false);
    if (!doc.is_discarded() && doc.is_object()) return doc;
  }
  return std::nullopt;
}

enum class NumberRead { Ok, Missing, NotANumber };

NumberRead read_number(const json& doc, const char* key, double& out) {
  const auto it = doc.find(key);
  if (it == doc.end() || it->is_null()) return NumberRead::Missing;
  if (it->is_number()) {
    out = it->get<double>();
    return NumberRead::Ok;
  }
  if (!it->is_string()) return NumberRead::NotANumber;
  const std::string text = trim(it->get<std::string>());
  if (text.empty()) return NumberRead::NotANumber;
  try {
    std::size_t used = 0;
    out = std::stod(text, &used);
    return used == text.size() ? NumberRead::Ok : NumberRead::NotANumber;
  } catch (const std::exception&) {
    return NumberRead::NotANumber;
  }
}

std::string format_coordinate(double value) {
  char buffer[32];
  std::snprintf(buffer, sizeof buffer, "%.5f", value);
  return buffer;
}

std::string render_place(const Place& place) {
  return place.name + "; " + place.address + "; (" + format_coordinate(place.location.lat()) + ", " +
         format_coordinate(place.location.lon()) + ")";
}

PredictionRecord failed_record(PredictionRecord record, std::string stage, std::string message) {
  record.guess.reset();
  record.location_source.clear();
  record.distance_km.reset();
  record.score.reset();
  record.failure = StageFailure{std::move(stage), std::move(message)};
  return record;
}

}  // namespace

void ElementSet::validate() const {
  if (elements.empty()) throw std::invalid_argument("element set must not be empty");
  for (const auto& sign : sign_labels) {
    if (!contains(sign)) throw std::invalid_argument("sign label '" + sign + "' is not a grounding element");
  }
}

bool ElementSet::contains(std::string_view label) const {
  const std::string key = normalize_label(label);
  return std::any_of(elements.begin(), elements.end(),
                     [&](const std::string& e) { return normalize_label(e) == key; });
}

bool ElementSet::is_sign(std::string_view label) const {
  const std::string key = normalize_label(label);
  return std::any_of(sign_labels.begin(), sign_labels.end(),
                     [&](const std::string& e) { return normalize_label(e) == key; });
}

std::string_view to_string(KnowledgeSource source) {
  switch (source) {
    case KnowledgeSource::Guidebook: return "guidebook";
    case KnowledgeSource::Map: return "map";
    case KnowledgeSource::Vlm: return "vlm";
  }
  return "unknown";
}

std::optional<KnowledgeSource> parse_knowledge_source(std::string_view text) {
  if (text == "guidebook") return KnowledgeSource::Guidebook;
  if (text == "map") return KnowledgeSource::Map;
  if (text == "vlm") return KnowledgeSource::Vlm;
  return std::nullopt;
}

PromptTemplates PromptTemplates::defaults() {
  PromptTemplates t;
  t.reasoner =
      "Given an image, craft a brief and cohesive reasoning path that deduces this location based on "
      "the visual clues present in the image. Using a tone of exploration and inference. Carefully "
      "analyze and link observations of natural features (climate, vegetation, terrain), man-made "
      "structures (roads, buildings, signage), and distinct landmarks. Allow these observations to "
      "naturally lead you to the correct country, enhancing the accuracy of your deductions. Start "
      "the reasoning without any intro, and make sure to make it brief.";
  t.searcher =
      "Analyze the {item} images to determine the region with the highest likelihood of finding this "
      "type of {item}. For each image, provide only the core reasoning in one sentence. Don't say you "
      "can't determine, try your best as it's a geo-localization game";
  t.guesser =
      "<information> Using the provided information as a reference, estimate the location depicted in "
      "the image with as much accuracy and precision as possible. Generally, you might use the "
      "reasoning to roughly locate the coarse-grained location, and use other information to help you "
      "decide more precisely. Use your own knowledge as well. Aim to deduce the exact coordinates "
      "whenever feasible. Format your response strictly as JSON in the following structure:"
      "{\"country\": \"<country_name>\", \"city\": \"<city_name>\", \"latitude\": <Latitude "
      "Coordinate>, \"longitude\": <Longitude Coordinate>} Ensure the JSON output is correctly "
      "formatted. Provide a well-informed estimate for each value, avoiding any empty fields. Do not "
      "include additional information or commentary.";
  return t;
}

std::optional<GroundingThresholds> GroundingThresholds::preset(std::string_view name) {
  if (name == "gws") return gws();
  if (name == "im2gps") return im2gps();
  return std::nullopt;
}

void PipelineConfig::validate() const {
  elements.validate();
  if (top_crops < 1) throw std::invalid_argument("top_crops must be >= 1");
  if (retrieval_k < 1) throw std::invalid_argument("retrieval k must be >= 1");
  if (!(retrieval_max_distance > 0.0)) throw std::invalid_argument("retrieval d_t must be > 0");
  const auto in_unit = [](double v) { return v >= 0.0 && v <= 1.0; };
  if (!in_unit(grounding.box) || !in_unit(grounding.text)) {
    throw std::invalid_argument("grounding thresholds must lie in [0, 1]");
  }
  if (trim(prompts.reasoner).empty() || trim(prompts.searcher).empty() || trim(prompts.guesser).empty()) {
    throw std::invalid_argument("prompt templates must not be empty");
  }
}

LoadedImage LoadedImage::from_payload(ImagePayload payload) {
  Image pixels = decode_image(payload.bytes);
  return {std::move(payload), std::move(pixels)};
}

std::string ImageQuery::ref() const { return label + "#" + std::to_string(detection_index); }

std::vector<std::size_t> select_top_crops(std::span<const Detection> detections,
                                          const ElementSet& elements, std::size_t top) {
  std::vector<std::size_t> kept;
  for (const std::string& element : elements.elements) {
    const std::string key = normalize_label(element);
    std::vector<std::size_t> matching;
    for (std::size_t i = 0; i < detections.size(); ++i) {
      if (normalize_label(detections[i].label) == key) matching.push_back(i);
    }
    std::stable_sort(matching.begin(), matching.end(), [&](std::size_t a, std::size_t b) {
      return detections[a].confidence > detections[b].confidence;
    });
    if (matching.size() > top) matching.resize(top);
    kept.insert(kept.end(), matching.begin(), matching.end());
  }
  return kept;
}

std::string_view to_string(GuessFailureKind kind) {
  switch (kind) {
    case GuessFailureKind::NoJsonObject: return "no_json_object";
    case GuessFailureKind::MissingKey: return "missing_key";
    case GuessFailureKind::NotANumber: return "not_a_number";
    case GuessFailureKind::OutOfBounds: return "out_of_bounds";
  }
  return "unknown";
}

GuessParse parse_guess(std::string_view text) noexcept {
  try {
    const auto doc = first_json_object(text);
    if (!doc) return GuessFailure{GuessFailureKind::NoJsonObject, "no JSON object found", {}, {}};

    GuessFailure partial;
    auto read_name = [&](const char* key, std::optional<std::string>& out) {
      const auto it = doc->find(key);
      if (it != doc->end() && it->is_string()) out = it->get<std::string>();
    };
    read_name("country", partial.country);
    read_name("city", partial.city);
    if (!partial.country || !partial.city) {
      partial.kind = GuessFailureKind::MissingKey;
      partial.detail = !partial.country ? "missing string key 'country'" : "missing string key 'city'";
      return partial;
    }

    double coords[2] = {0.0, 0.0};
    const char* keys[2] = {"latitude", "longitude"};
    for (int i = 0; i < 2; ++i) {
      switch (read_number(*doc, keys[i], coords[i])) {
        case NumberRead::Ok: break;
        case NumberRead::Missing:
          partial.kind = GuessFailureKind::MissingKey;
          partial.detail = std::string("missing key '") + keys[i] + "'";
          return partial;
        case NumberRead::NotANumber:
          partial.kind = GuessFailureKind::NotANumber;
          partial.detail = std::string("'") + keys[i] + "' is not a number";
          return partial;
      }
    }
    if (!in_coordinate_bounds(coords[0], coords[1])) {
      partial.kind = GuessFailureKind::OutOfBounds;
      partial.detail = "coordinates out of range: " + std::to_string(coords[0]) + ", " +
                       std::to_string(coords[1]);
      return partial;
    }
    return ParsedGuess{*partial.country, *partial.city, GeoPoint(coords[0], coords[1])};
  } catch (...) {
    return GuessFailure{GuessFailureKind::NoJsonObject, "unparseable guess", {}, {}};
  }
}

std::string render_information(std::string_view reasoning, std::span<const KnowledgeItem> knowledge) {
  std::string out;
  const std::string r = trim(reasoning);
  if (!r.empty()) out = "Reasoning: " + r;
  for (const auto& item : knowledge) {
    if (!out.empty()) out += '\n';
    out += "[" + std::string(to_string(item.source)) + "] " + item.content;
  }
  return out;
}

std::optional<Outcome> PredictionRecord::outcome() const {
  if (!truth) return std::nullopt;
  if (!distance_km) return Outcome::failure();
  return Outcome{*distance_km, score.value_or(geoguessr_score(*distance_km))};
}

Pipeline::Pipeline(PipelineConfig config, PipelineServices services)
    : config_(std::move(config)), services_(std::move(services)) {
  config_.validate();
  if (!services_.clock) services_.clock = std::make_shared<SystemClock>();
  if (!services_.guesser) throw std::invalid_argument("pipeline needs a guesser endpoint");
  if (config_.enable_reasoner && !services_.reasoner) {
    throw std::invalid_argument("reasoner enabled but no reasoner endpoint configured");
  }
  if (services_.embed && services_.index) services_.embed->set_expected_dim(services_.index->dim());
}

void Pipeline::log(const std::string& message) const {
  if (services_.log) services_.log(message);
}

std::chrono::milliseconds Pipeline::elapsed_since(Clock::time_point start) const {
  return std::chrono::duration_cast<std::chrono::milliseconds>(services_.clock->now() - start);
}

std::string Pipeline::reason(const ImagePayload& image) const {
  if (!services_.reasoner) throw StageError("reasoner", "no reasoner endpoint configured");
  try {
    return services_.reasoner->chat_vision(config_.prompts.reasoner, std::span(&image, 1));
  } catch (const std::exception& e) {
    throw StageError("reasoner", e.what());
  }
}

QuerySet Pipeline::build_queries(const LoadedImage& image) const {
  QuerySet queries;
  if (!services_.ground) return queries;
  try {
    const auto detections =
        services_.ground->ground(image.payload, image.size(), config_.elements.elements,
                                 config_.grounding.box, config_.grounding.text);
    for (std::size_t index : select_top_crops(detections, config_.elements, config_.top_crops)) {
      const Detection& det = detections[index];
      ImageQuery query;
      query.label = normalize_label(det.label);
      query.detection_index = index;
      query.detection = det;
      query.crop.bytes = encode_png(crop(image.pixels, det.pixel_box(image.size())));
      queries.images.push_back(std::move(query));
    }
    if (services_.ocr) {
      for (std::size_t i = 0; i < queries.images.size(); ++i) {
        if (!config_.elements.is_sign(queries.images[i].label)) continue;
        std::string text = services_.ocr->ocr(queries.images[i].crop);
        if (!text.empty()) queries.texts.push_back({std::move(text), i});
      }
    }
  } catch (const std::exception& e) {
    throw StageError("searcher", e.what());
  }
  return queries;
}

ToolResults Pipeline::dispatch_tools(const QuerySet& queries) const {
  ToolResults results;
  std::vector<KnowledgeItem> guidebook;
  std::vector<KnowledgeItem> map;
  std::vector<KnowledgeItem> vlm;
  bool guidebook_failed = false;
  bool map_failed = false;
  bool vlm_failed = false;

  if (services_.embed && services_.index) {
    for (const auto& query : queries.images) {
      try {
        const auto vector = services_.embed->embed_image(query.crop);
        for (const auto& hit :
             services_.index->query(vector, config_.retrieval_k, config_.retrieval_max_distance)) {
          if (!trim(hit.text).empty()) guidebook.push_back({KnowledgeSource::Guidebook, query.ref(), hit.text});
        }
      } catch (const std::exception& e) {
        guidebook_failed = true;
        log("guidebook tool failed for " + query.ref() + ": " + e.what());
      }
    }
  }

  if (services_.osm) {
    for (const auto& query : queries.texts) {
      try {
        for (const auto& place : services_.osm->search(query.text, 3)) {
          map.push_back({KnowledgeSource::Map, "text:" + query.text, render_place(place)});
        }
      } catch (const std::exception& e) {
        map_failed = true;
        log("map tool failed for '" + query.text + "': " + e.what());
      }
    }
  }

  if (services_.searcher) {
    for (const std::string& element : config_.elements.elements) {
      const std::string label = normalize_label(element);
      std::vector<ImagePayload> crops;
      for (const auto& query : queries.images) {
        if (query.label == label) crops.push_back(query.crop);
      }
      if (crops.empty()) continue;
      try {
        const std::string prompt = replace_all(config_.prompts.searcher, kItemSlot, label);
        std::string content = trim(services_.searcher->chat_vision(prompt, crops));
        if (!content.empty()) vlm.push_back({KnowledgeSource::Vlm, label, std::move(content)});
      } catch (const std::exception& e) {
        vlm_failed = true;
        log("vlm tool failed for " + label + ": " + e.what());
      }
    }
  }

  for (auto* part : {&guidebook, &map, &vlm}) {
    results.knowledge.insert(results.knowledge.end(), std::make_move_iterator(part->begin()),
                             std::make_move_iterator(part->end()));
  }
  if (guidebook_failed) results.degraded.emplace_back("guidebook");
  if (map_failed) results.degraded.emplace_back("map");
  if (vlm_failed) results.degraded.emplace_back("vlm");
  return results;
}

GuessOutcome Pipeline::guess(const ImagePayload& image, std::string_view reasoning,
                             std::span<const KnowledgeItem> knowledge) const {
  const std::string information = render_information(reasoning, knowledge);
  const std::string prompt = trim(replace_all(config_.prompts.guesser, kInformationSlot, information));

  GuessOutcome outcome;
  try {
    outcome.raw = services_.guesser->chat_vision(prompt, std::span(&image, 1));
    outcome.attempts = 1;
    outcome.parse = parse_guess(outcome.raw);
    if (std::holds_alternative<GuessFailure>(outcome.parse)) {
      outcome.raw = services_.guesser->chat_vision(prompt + "\n" + std::string(kFormatReminder),
                                                   std::span(&image, 1));
      outcome.attempts = 2;
      outcome.parse = parse_guess(outcome.raw);
    }
  } catch (const std::exception& e) {
    throw StageError("guesser", e.what());
  }
  return outcome;
}

PredictionRecord Pipeline::run_one(const Sample& sample) const {
  PredictionRecord record;
  record.sample_id = sample.id;
  if (sample.truth) record.truth = sample.truth->location;

  LoadedImage image;
  try {
    image = LoadedImage::from_payload(ImagePayload::read_file(sample.image_path));
  } catch (const std::exception& e) {
    return failed_record(std::move(record), "input", e.what());
  }

  if (config_.enable_reasoner) {
    const auto start = services_.clock->now();
    try {
      record.reasoning = reason(image.payload);
    } catch (const StageError& e) {
      record.latency.reasoner = elapsed_since(start);
      return failed_record(std::move(record), e.stage(), e.what());
    }
    record.latency.reasoner = elapsed_since(start);
  }

  if (config_.enable_searcher) {
    const auto start = services_.clock->now();
    try {
      ToolResults tools = dispatch_tools(build_queries(image));
      record.knowledge = std::move(tools.knowledge);
      record.degraded = std::move(tools.degraded);
    } catch (const StageError& e) {
      // Searcher output is auxiliary; the guess goes ahead without knowledge.
      record.knowledge.clear();
      record.degraded = {"searcher"};
      log(sample.id + ": " + e.what());
    }
    record.latency.searcher = elapsed_since(start);
  }

  const auto guess_start = services_.clock->now();
  GuessOutcome outcome;
  try {
    outcome = guess(image.payload, record.reasoning, record.knowledge);
  } catch (const StageError& e) {
    record.latency.guesser = elapsed_since(guess_start);
    return failed_record(std::move(record), e.stage(), e.what());
  }
  record.latency.guesser = elapsed_since(guess_start);
  record.raw_guess = outcome.raw;

  if (auto* parsed = std::get_if<ParsedGuess>(&outcome.parse)) {
    record.guess = *parsed;
    record.location_source = "model";
  } else {
    const auto& failure = std::get<GuessFailure>(outcome.parse);
    const bool coordinates_only = failure.kind != GuessFailureKind::NoJsonObject && failure.country &&
                                  failure.city && !trim(*failure.country).empty();
    if (config_.city_fallback && coordinates_only && services_.geocoder) {
      try {
        if (auto point = services_.geocoder->geocode_city(*failure.country, *failure.city)) {
          record.guess = ParsedGuess{*failure.country, *failure.city, *point};
          record.location_source = "geocoded";
        }
      } catch (const std::exception& e) {
        log(sample.id + ": city geocode fallback failed: " + e.what());
      }
    }
    if (!record.guess) {
      return failed_record(std::move(record), "guesser",
                           "unparseable guess (" + std::string(to_string(failure.kind)) + "): " +
                               failure.detail);
    }
  }

  if (record.truth) {
    record.distance_km = haversine_km(*record.truth, record.guess->location);
    record.score = geoguessr_score(*record.distance_km);
  }
  return record;
}

BatchResult Pipeline::run_batch(std::span<const Sample> samples, std::size_t parallelism) const {
  if (samples.empty()) throw std::invalid_argument("dataset is empty");
  BatchResult result;
  result.records.resize(samples.size());

  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < samples.size(); i = next++) {
      try {
        result.records[i] = run_one(samples[i]);
      } catch (const std::exception& e) {
        PredictionRecord record;
        record.sample_id = samples[i].id;
        if (samples[i].truth) record.truth = samples[i].truth->location;
        result.records[i] = failed_record(std::move(record), "internal", e.what());
      }
    }
  };

  const std::size_t workers = std::clamp<std::size_t>(parallelism, 1, samples.size());
  if (workers == 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    pool.reserve(workers);
    for (std::size_t i = 0; i < workers; ++i) pool.emplace_back(worker);
  }

  std::vector<Outcome> outcomes;
  for (const auto& record : result.records) {
    if (auto outcome = record.outcome()) outcomes.push_back(*outcome);
  }
  if (!outcomes.empty()) result.report = aggregate(outcomes);
  return result;
}

}  // namespace geoloc
