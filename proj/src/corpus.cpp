#include "geoloc/corpus.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <numeric>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include <boost/tokenizer.hpp>
#include <nlohmann/json.hpp>

namespace geoloc {
namespace {

using nlohmann::json;
namespace fs = std::filesystem;

std::string lower(std::string_view text) {
  std::string out(text);
  std::transform(out.begin(), out.end(), out.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return out;
}

std::string trimmed(std::string_view text) {
  const auto first = text.find_first_not_of(" \t\r\n");
  if (first == std::string_view::npos) return {};
  const auto last = text.find_last_not_of(" \t\r\n");
  return std::string(text.substr(first, last - first + 1));
}

template <typename Fn>
void for_each_jsonl(const fs::path& path, Fn&& fn) {
  std::ifstream in(path);
  if (!in) throw CorpusError(path, 0, "cannot open file");
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (trimmed(line).empty()) continue;
    json doc;
    try {
      doc = json::parse(line);
    } catch (const json::parse_error& e) {
      throw CorpusError(path, number, std::string("invalid JSON: ") + e.what());
    }
    if (!doc.is_object()) throw CorpusError(path, number, "expected a JSON object");
    fn(doc, number);
  }
}

std::string required_string(const json& doc, const char* key, const fs::path& path, std::size_t line) {
  const auto it = doc.find(key);
  if (it == doc.end() || !it->is_string()) {
    throw CorpusError(path, line, std::string("missing string field '") + key + "'");
  }
  return it->get<std::string>();
}

std::optional<double> optional_number(const json& doc, const char* key, const fs::path& path,
                                      std::size_t line) {
  const auto it = doc.find(key);
  if (it == doc.end() || it->is_null()) return std::nullopt;
  if (!it->is_number()) throw CorpusError(path, line, std::string("field '") + key + "' must be a number");
  return it->get<double>();
}

GeoPoint checked_point(double lat, double lon, const fs::path& path, std::size_t line) {
  if (!in_coordinate_bounds(lat, lon)) {
    throw CorpusError(path, line, "coordinates out of range: lat " + std::to_string(lat) + ", lon " +
                                      std::to_string(lon));
  }
  return GeoPoint(lat, lon);
}

}  // namespace

CorpusError::CorpusError(const fs::path& file, std::size_t line, const std::string& message)
    : std::runtime_error(file.string() + (line ? ":" + std::to_string(line) : std::string()) + ": " +
                         message),
      line_(line) {}

std::vector<Sample> load_dataset(const fs::path& path) {
  const fs::path dir = path.parent_path();
  std::vector<Sample> samples;
  std::unordered_set<std::string> ids;

  for_each_jsonl(path, [&](const json& doc, std::size_t line) {
    Sample sample;
    sample.id = required_string(doc, "id", path, line);
    if (sample.id.empty()) throw CorpusError(path, line, "empty sample id");
    if (!ids.insert(sample.id).second) {
      throw CorpusError(path, line, "duplicate sample id '" + sample.id + "'");
    }
    sample.image_path = (dir / required_string(doc, "image", path, line)).lexically_normal();
    if (!fs::is_regular_file(sample.image_path)) {
      throw CorpusError(path, line, "image file not found: " + sample.image_path.string());
    }

    const auto lat = optional_number(doc, "lat", path, line);
    const auto lon = optional_number(doc, "lon", path, line);
    if (lat.has_value() != lon.has_value()) {
      throw CorpusError(path, line, "lat and lon must be given together");
    }
    if (lat) {
      GroundTruth truth{"", checked_point(*lat, *lon, path, line)};
      if (auto it = doc.find("country"); it != doc.end() && it->is_string()) {
        truth.country = it->get<std::string>();
      }
      sample.truth = std::move(truth);
    }
    samples.push_back(std::move(sample));
  });
  return samples;
}

void save_dataset(std::span<const Sample> samples, const fs::path& path) {
  const fs::path dir = path.parent_path().empty() ? fs::current_path() : fs::absolute(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw CorpusError(path, 0, "cannot open file for writing");
  for (const Sample& sample : samples) {
    json doc;
    doc["id"] = sample.id;
    doc["image"] = fs::absolute(sample.image_path).lexically_relative(dir).generic_string();
    if (sample.truth) {
      doc["lat"] = sample.truth->location.lat();
      doc["lon"] = sample.truth->location.lon();
      doc["country"] = sample.truth->country;
    }
    out << doc.dump() << '\n';
  }
}

std::string_view to_string(GuidebookSource source) {
  switch (source) {
    case GuidebookSource::Toptips: return "toptips";
    case GuidebookSource::Plonkit: return "plonkit";
    case GuidebookSource::Other: return "other";
  }
  return "other";
}

GuidebookSource parse_guidebook_source(std::string_view text) {
  const std::string key = lower(trimmed(text));
  if (key == "toptips") return GuidebookSource::Toptips;
  if (key == "plonkit") return GuidebookSource::Plonkit;
  return GuidebookSource::Other;
}

std::vector<GuidebookEntry> load_guidebook(const fs::path& path) {
  const fs::path dir = path.parent_path();
  std::vector<GuidebookEntry> entries;
  for_each_jsonl(path, [&](const json& doc, std::size_t line) {
    GuidebookEntry entry;
    const std::string image = required_string(doc, "image", path, line);
    entry.image_path = (dir / image).lexically_normal();
    entry.clue = trimmed(required_string(doc, "clue", path, line));
    if (entry.clue.empty()) throw CorpusError(path, line, "empty clue text");
    if (auto it = doc.find("source"); it != doc.end()) {
      if (!it->is_string()) throw CorpusError(path, line, "field 'source' must be a string");
      entry.source = parse_guidebook_source(it->get<std::string>());
    }
    entry.id = image;
    if (auto it = doc.find("id"); it != doc.end()) {
      if (!it->is_string()) throw CorpusError(path, line, "field 'id' must be a string");
      entry.id = it->get<std::string>();
    }
    entries.push_back(std::move(entry));
  });
  return entries;
}

Image stitch_panorama(std::span<const Image> views) {
  if (views.size() != 4) {
    throw ImageError("panorama needs exactly 4 views, got " + std::to_string(views.size()));
  }
  const int w = views[0].width;
  const int h = views[0].height;
  if (w <= 0 || h <= 0) throw ImageError("panorama views must be non-empty");
  for (const Image& view : views) {
    if (view.width != w || view.height != h) throw ImageError("panorama views differ in size");
  }

  Image out{4 * w, h, {}};
  out.data.reserve(static_cast<std::size_t>(out.width) * static_cast<std::size_t>(h) * 3);
  const std::size_t row_bytes = static_cast<std::size_t>(w) * 3;
  for (int y = 0; y < h; ++y) {
    for (const Image& view : views) {
      const auto* row = view.data.data() + static_cast<std::size_t>(y) * row_bytes;
      out.data.insert(out.data.end(), row, row + row_bytes);
    }
  }
  return out;
}

RoundVerdict filter_round(const RoundMeta& meta) {
  if (meta.time_limit_s < kMinTimeLimitS) return RoundVerdict::DropTimeLimit;
  if (meta.transcript_words < kMinTranscriptWords) return RoundVerdict::DropTranscript;
  if (meta.score < kMinRoundScore) return RoundVerdict::DropScore;
  return RoundVerdict::Keep;
}

std::string_view to_string(RoundVerdict verdict) {
  switch (verdict) {
    case RoundVerdict::Keep: return "keep";
    case RoundVerdict::DropTimeLimit: return "drop: time limit";
    case RoundVerdict::DropTranscript: return "drop: transcript";
    case RoundVerdict::DropScore: return "drop: score";
  }
  return "unknown";
}

std::size_t word_count(std::string_view text) {
  std::size_t count = 0;
  bool in_word = false;
  for (char ch : text) {
    const bool space = std::isspace(static_cast<unsigned char>(ch)) != 0;
    if (!space && !in_word) ++count;
    in_word = !space;
  }
  return count;
}

DatasetStats dataset_stats(std::span<const double> distances_km, std::span<const std::string> reasonings,
                           std::span<const double> bucket_edges) {
  if (distances_km.empty() && reasonings.empty()) {
    throw std::invalid_argument("dataset_stats needs distances or reasonings");
  }
  DatasetStats stats;

  if (!reasonings.empty()) {
    const double total = std::accumulate(reasonings.begin(), reasonings.end(), 0.0,
                                         [](double acc, const std::string& r) {
                                           return acc + static_cast<double>(word_count(r));
                                         });
    stats.mean_reasoning_words = total / static_cast<double>(reasonings.size());
  }

  if (distances_km.empty()) return stats;

  std::vector<double> edges(bucket_edges.begin(), bucket_edges.end());
  if (edges.empty()) {
    const auto [lo, hi] = std::minmax_element(distances_km.begin(), distances_km.end());
    if (*lo == *hi) {
      edges = {*lo, *hi};
    } else {
      constexpr int kBuckets = 10;
      for (int i = 0; i <= kBuckets; ++i) edges.push_back(*lo + (*hi - *lo) * i / kBuckets);
      edges.back() = *hi;
    }
  }
  if (edges.size() < 2 || !std::is_sorted(edges.begin(), edges.end())) {
    throw std::invalid_argument("histogram edges must be sorted with at least two values");
  }

  for (std::size_t i = 0; i + 1 < edges.size(); ++i) stats.distance_histogram.push_back({edges[i], edges[i + 1], 0});
  for (double d : distances_km) {
    if (d < edges.front() || d > edges.back()) continue;
    auto it = std::upper_bound(edges.begin(), edges.end(), d);
    std::size_t bucket = static_cast<std::size_t>(it - edges.begin()) - 1;
    bucket = std::min(bucket, stats.distance_histogram.size() - 1);
    ++stats.distance_histogram[bucket].count;
  }
  return stats;
}

std::vector<Sample> ingest_csv(const fs::path& csv_path, const fs::path& image_root,
                               const CsvColumns& columns) {
  using Tokenizer = boost::tokenizer<boost::escaped_list_separator<char>>;
  std::ifstream in(csv_path);
  if (!in) throw CorpusError(csv_path, 0, "cannot open file");

  auto split = [&](const std::string& line, std::size_t number) {
    try {
      Tokenizer tok(line);
      std::vector<std::string> cells;
      for (const auto& cell : tok) cells.push_back(trimmed(cell));
      return cells;
    } catch (const boost::escaped_list_error& e) {
      throw CorpusError(csv_path, number, std::string("malformed CSV: ") + e.what());
    }
  };

  std::string line;
  if (!std::getline(in, line)) throw CorpusError(csv_path, 1, "missing header row");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  // Strip a UTF-8 byte order mark.
  if (line.starts_with("\xEF\xBB\xBF")) line.erase(0, 3);
  const auto header = split(line, 1);

  std::unordered_map<std::string, std::size_t> positions;
  for (std::size_t i = 0; i < header.size(); ++i) positions.emplace(lower(header[i]), i);
  auto column = [&](const std::string& name, bool required) -> std::optional<std::size_t> {
    if (auto it = positions.find(lower(name)); it != positions.end()) return it->second;
    if (required) throw CorpusError(csv_path, 1, "missing column '" + name + "'");
    return std::nullopt;
  };
  const std::size_t id_col = *column(columns.id, true);
  const std::size_t image_col = *column(columns.image, true);
  const std::size_t lat_col = *column(columns.lat, true);
  const std::size_t lon_col = *column(columns.lon, true);
  const auto country_col = column(columns.country, false);

  std::vector<Sample> samples;
  std::unordered_set<std::string> ids;
  std::size_t number = 1;
  while (std::getline(in, line)) {
    ++number;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (trimmed(line).empty()) continue;
    const auto cells = split(line, number);
    auto cell = [&](std::size_t index) -> const std::string& {
      if (index >= cells.size()) throw CorpusError(csv_path, number, "row has too few columns");
      return cells[index];
    };

    Sample sample;
    sample.id = cell(id_col);
    if (sample.id.empty()) throw CorpusError(csv_path, number, "empty id");
    if (!ids.insert(sample.id).second) throw CorpusError(csv_path, number, "duplicate id '" + sample.id + "'");
    sample.image_path = (image_root / cell(image_col)).lexically_normal();

    double lat = 0.0;
    double lon = 0.0;
    try {
      std::size_t used = 0;
      lat = std::stod(cell(lat_col), &used);
      if (used != cell(lat_col).size()) throw std::invalid_argument("trailing characters");
      lon = std::stod(cell(lon_col), &used);
      if (used != cell(lon_col).size()) throw std::invalid_argument("trailing characters");
    } catch (const std::logic_error&) {
      throw CorpusError(csv_path, number, "latitude/longitude are not numbers");
    }
    GroundTruth truth{country_col ? cell(*country_col) : std::string(), checked_point(lat, lon, csv_path, number)};
    sample.truth = std::move(truth);
    samples.push_back(std::move(sample));
  }
  return samples;
}

}  // namespace geoloc
