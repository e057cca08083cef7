#pragma once

#include <chrono>
#include <cstddef>
#include <functional>
#include <memory>
#include <optional>
#include <stdexcept>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "geoloc/corpus.hpp"
#include "geoloc/embedindex.hpp"
#include "geoloc/gateway.hpp"
#include "geoloc/geodesy.hpp"
#include "geoloc/image.hpp"
#include "geoloc/osm.hpp"

namespace geoloc {

/// Grounding labels, and the subset whose crops are sent to OCR.
struct ElementSet {
  std::vector<std::string> elements{"house", "road sign", "building sign"};
  std::vector<std::string> sign_labels{"road sign", "building sign"};

  void validate() const;
  bool contains(std::string_view label) const;
  bool is_sign(std::string_view label) const;
};

enum class KnowledgeSource { Guidebook, Map, Vlm };

std::string_view to_string(KnowledgeSource source);
std::optional<KnowledgeSource> parse_knowledge_source(std::string_view text);

struct KnowledgeItem {
  KnowledgeSource source = KnowledgeSource::Guidebook;
  std::string query_ref;  // crop or text query that produced this item
  std::string content;

  friend bool operator==(const KnowledgeItem&, const KnowledgeItem&) = default;
};

/// Prompt texts sent next to the image. The image itself travels as a separate
/// message part, so templates carry no image placeholder. The searcher template
/// substitutes {item}; the guesser template substitutes <information>.
struct PromptTemplates {
  std::string reasoner;
  std::string searcher;
  std::string guesser;

  static PromptTemplates defaults();
};

inline constexpr std::string_view kFormatReminder =
    "Your previous reply could not be parsed. Reply with only the JSON object "
    "{\"country\": \"<country_name>\", \"city\": \"<city_name>\", \"latitude\": <Latitude Coordinate>, "
    "\"longitude\": <Longitude Coordinate>} and nothing else.";

struct GroundingThresholds {
  double box = 0.5;
  double text = 0.5;

  static GroundingThresholds gws() { return {0.5, 0.5}; }
  static GroundingThresholds im2gps() { return {0.8, 0.6}; }
  // "gws" or "im2gps"; std::nullopt for unknown names.
  static std::optional<GroundingThresholds> preset(std::string_view name);
};

struct PipelineConfig {
  ElementSet elements;
  GroundingThresholds grounding;
  std::size_t retrieval_k = 3;
  double retrieval_max_distance = 30.0;
  std::size_t top_crops = 3;
  bool enable_reasoner = true;
  bool enable_searcher = true;
  // Geocode country/city when the guess has no usable coordinates.
  bool city_fallback = true;
  PromptTemplates prompts = PromptTemplates::defaults();

  void validate() const;
};

/// Clients the pipeline talks to. Any tool client may be null, in which case
/// that tool is skipped.
struct PipelineServices {
  std::shared_ptr<ChatClient> reasoner;
  std::shared_ptr<ChatClient> searcher;
  std::shared_ptr<ChatClient> guesser;
  std::shared_ptr<EmbedClient> embed;
  std::shared_ptr<GroundClient> ground;
  std::shared_ptr<OcrClient> ocr;
  std::shared_ptr<NominatimClient> osm;
  // City-coordinate fallback for guesses without usable coordinates.
  std::shared_ptr<NominatimClient> geocoder;
  std::shared_ptr<const EmbeddingIndex> index;
  std::shared_ptr<Clock> clock;
  std::function<void(std::string_view)> log;
};

/// Error from one pipeline stage, tagged with the stage name.
class StageError : public std::runtime_error {
 public:
  StageError(std::string stage, const std::string& message)
      : std::runtime_error(stage + ": " + message), stage_(std::move(stage)) {}
  const std::string& stage() const { return stage_; }

 private:
  std::string stage_;
};

/// Decoded image plus its original encoded bytes.
struct LoadedImage {
  ImagePayload payload;
  Image pixels;

  static LoadedImage from_payload(ImagePayload payload);
  ImageSize size() const { return {pixels.width, pixels.height}; }
};

struct ImageQuery {
  std::string label;
  std::size_t detection_index = 0;  // position in the grounding response
  Detection detection;
  ImagePayload crop;  // PNG

  std::string ref() const;
};

struct TextQuery {
  std::string text;
  std::size_t image_query = 0;  // index into QuerySet::images

  friend bool operator==(const TextQuery&, const TextQuery&) = default;
};

struct QuerySet {
  std::vector<ImageQuery> images;
  std::vector<TextQuery> texts;

  bool empty() const { return images.empty() && texts.empty(); }
};

/// Indices of the detections kept for cropping: for each label in element
/// order, the `top` most confident detections, ties broken by response order.
/// Detections with labels outside the element set are ignored.
std::vector<std::size_t> select_top_crops(std::span<const Detection> detections,
                                          const ElementSet& elements, std::size_t top);

struct ToolResults {
  std::vector<KnowledgeItem> knowledge;
  // Tools with at least one failed call, in guidebook/map/vlm order.
  std::vector<std::string> degraded;
};

struct ParsedGuess {
  std::string country;
  std::string city;
  GeoPoint location;

  friend bool operator==(const ParsedGuess&, const ParsedGuess&) = default;
};

enum class GuessFailureKind { NoJsonObject, MissingKey, NotANumber, OutOfBounds };

std::string_view to_string(GuessFailureKind kind);

struct GuessFailure {
  GuessFailureKind kind = GuessFailureKind::NoJsonObject;
  std::string detail;
  // Whatever place names parsed before the failure; used for the geocode
  // fallback when only the coordinates are unusable.
  std::optional<std::string> country;
  std::optional<std::string> city;
};

using GuessParse = std::variant<ParsedGuess, GuessFailure>;

/// Finds the first balanced {...} object that parses as JSON and reads
/// country, city, latitude and longitude from it. Numbers may be given as
/// strings. Never throws.
GuessParse parse_guess(std::string_view text) noexcept;

struct GuessOutcome {
  std::string raw;  // last completion
  GuessParse parse;
  int attempts = 0;
};

/// Reasoning and knowledge rendered into the guesser's <information> slot:
/// the reasoning first, then one "[source] content" line per item.
std::string render_information(std::string_view reasoning, std::span<const KnowledgeItem> knowledge);

struct StageLatencies {
  std::chrono::milliseconds reasoner{0};
  std::chrono::milliseconds searcher{0};
  std::chrono::milliseconds guesser{0};
};

struct StageFailure {
  std::string stage;
  std::string message;

  friend bool operator==(const StageFailure&, const StageFailure&) = default;
};

struct PredictionRecord {
  static constexpr int kSchemaVersion = 1;

  std::string sample_id;
  std::string reasoning;
  std::vector<KnowledgeItem> knowledge;
  std::vector<std::string> degraded;
  std::string raw_guess;
  std::optional<ParsedGuess> guess;
  std::string location_source;  // "model" or "geocoded" when a guess exists
  std::optional<StageFailure> failure;
  std::optional<GeoPoint> truth;
  std::optional<double> distance_km;
  std::optional<double> score;
  StageLatencies latency;

  bool failed() const { return !guess.has_value(); }
  // Outcome for aggregation; nullopt when the sample has no ground truth.
  std::optional<Outcome> outcome() const;
};

struct BatchResult {
  std::vector<PredictionRecord> records;
  std::optional<EvaluationReport> report;  // over records with ground truth
};

class Pipeline {
 public:
  Pipeline(PipelineConfig config, PipelineServices services);

  const PipelineConfig& config() const { return config_; }

  std::string reason(const ImagePayload& image) const;
  QuerySet build_queries(const LoadedImage& image) const;
  ToolResults dispatch_tools(const QuerySet& queries) const;
  GuessOutcome guess(const ImagePayload& image, std::string_view reasoning,
                     std::span<const KnowledgeItem> knowledge) const;

  /// Runs every enabled stage on one sample. Stage errors produce a failed
  /// record instead of an exception.
  PredictionRecord run_one(const Sample& sample) const;

  /// Runs samples on up to `parallelism` worker threads; records come back in
  /// dataset order.
  BatchResult run_batch(std::span<const Sample> samples, std::size_t parallelism) const;

 private:
  void log(const std::string& message) const;
  std::chrono::milliseconds elapsed_since(Clock::time_point start) const;

  PipelineConfig config_;
  PipelineServices services_;
};

}  // namespace geoloc
