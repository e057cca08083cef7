#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "geoloc/geodesy.hpp"
#include "geoloc/image.hpp"

namespace geoloc {

/// Schema or content error in an input file; line is 1-based, 0 when unknown.
class CorpusError : public std::runtime_error {
 public:
  CorpusError(const std::filesystem::path& file, std::size_t line, const std::string& message);
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

struct GroundTruth {
  std::string country;
  GeoPoint location;

  friend bool operator==(const GroundTruth&, const GroundTruth&) = default;
};

struct Sample {
  std::string id;
  std::filesystem::path image_path;
  std::optional<GroundTruth> truth;

  friend bool operator==(const Sample&, const Sample&) = default;
};

/// Dataset JSONL: {"id": str, "image": path, "lat": num, "lon": num, "country": str}.
/// Image paths resolve against the file's directory; lat/lon may be omitted
/// together for unlabeled samples.
std::vector<Sample> load_dataset(const std::filesystem::path& path);
void save_dataset(std::span<const Sample> samples, const std::filesystem::path& path);

enum class GuidebookSource { Toptips, Plonkit, Other };

std::string_view to_string(GuidebookSource source);
GuidebookSource parse_guidebook_source(std::string_view text);

struct GuidebookEntry {
  std::string id;
  std::filesystem::path image_path;
  std::string clue;
  GuidebookSource source = GuidebookSource::Other;
};

/// Guidebook JSONL: {"image": path, "clue": str, "source": str, "id"?: str}.
/// The id defaults to the image path as written in the file.
std::vector<GuidebookEntry> load_guidebook(const std::filesystem::path& path);

/// Concatenates four equally sized views left to right in heading order
/// 0, 90, 180, 270.
Image stitch_panorama(std::span<const Image> views);

struct RoundMeta {
  double score = 0.0;
  std::size_t transcript_words = 0;
  double time_limit_s = 0.0;
};

enum class RoundVerdict { Keep, DropTimeLimit, DropTranscript, DropScore };

inline constexpr double kMinTimeLimitS = 30.0;
inline constexpr std::size_t kMinTranscriptWords = 100;
inline constexpr double kMinRoundScore = 3400.0;

/// Drops rounds with time limit < 30 s, transcripts < 100 words, or score <
/// 3400, reporting the first rule that fails in that order.
RoundVerdict filter_round(const RoundMeta& meta);
std::string_view to_string(RoundVerdict verdict);

struct HistogramBucket {
  double lower = 0.0;
  double upper = 0.0;  // inclusive for the last bucket
  std::size_t count = 0;
};

struct DatasetStats {
  std::vector<HistogramBucket> distance_histogram;
  std::optional<double> mean_reasoning_words;
};

/// Histogram over `distances_km` plus mean word count of `reasonings`.
/// With no edges, ten equal-width buckets span [min, max], collapsing to one
/// bucket when all distances are equal. Values outside explicit edges are
/// dropped. Throws std::invalid_argument when both inputs are empty.
DatasetStats dataset_stats(std::span<const double> distances_km,
                           std::span<const std::string> reasonings,
                           std::span<const double> bucket_edges = {});

std::size_t word_count(std::string_view text);

struct CsvColumns {
  std::string id = "id";
  std::string image = "image";
  std::string lat = "lat";
  std::string lon = "lon";
  std::string country = "country";
};

/// Reads a third-party CSV manifest (header row required, columns matched
/// case-insensitively) into samples. Image paths resolve against image_root.
/// The country column is optional.
std::vector<Sample> ingest_csv(const std::filesystem::path& csv_path,
                               const std::filesystem::path& image_root,
                               const CsvColumns& columns = {});

}  // namespace geoloc
