#include "geoloc/records.hpp"

#include <array>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace geoloc {
namespace {

using nlohmann::json;
using nlohmann::ordered_json;

constexpr std::array<AccuracyLevel, kLevelCount> kDisplayOrder = {
    AccuracyLevel::Continent, AccuracyLevel::Country, AccuracyLevel::Region, AccuracyLevel::City,
    AccuracyLevel::Street};

std::string fixed(double value, int decimals) {
  char buffer[64];
  std::snprintf(buffer, sizeof buffer, "%.*f", decimals, value);
  return buffer;
}

std::string full_precision(double value) {
  char buffer[64];
  std::snprintf(buffer, sizeof buffer, "%.17g", value);
  return buffer;
}

GeoPoint point_from(const json& doc) {
  const double lat = doc.at("latitude").get<double>();
  const double lon = doc.at("longitude").get<double>();
  if (!in_coordinate_bounds(lat, lon)) throw RecordError("coordinates out of range");
  return GeoPoint(lat, lon);
}

}  // namespace

ordered_json record_to_json(const PredictionRecord& record, bool include_latency) {
  ordered_json doc;
  doc["schema"] = PredictionRecord::kSchemaVersion;
  doc["sample_id"] = record.sample_id;
  doc["status"] = record.failed() ? "failed" : "ok";
  doc["reasoning"] = record.reasoning;
  doc["knowledge"] = ordered_json::array();
  for (const auto& item : record.knowledge) {
    doc["knowledge"].push_back(
        {{"source", to_string(item.source)}, {"query_ref", item.query_ref}, {"content", item.content}});
  }
  doc["degraded"] = record.degraded;
  doc["raw_guess"] = record.raw_guess;
  if (record.guess) {
    doc["guess"] = {{"country", record.guess->country},
                    {"city", record.guess->city},
                    {"latitude", record.guess->location.lat()},
                    {"longitude", record.guess->location.lon()},
                    {"location_source", record.location_source}};
  } else {
    doc["guess"] = nullptr;
  }
  if (record.failure) {
    doc["failure"] = {{"stage", record.failure->stage}, {"message", record.failure->message}};
  } else {
    doc["failure"] = nullptr;
  }
  if (record.truth) {
    doc["truth"] = {{"latitude", record.truth->lat()}, {"longitude", record.truth->lon()}};
  } else {
    doc["truth"] = nullptr;
  }
  doc["distance_km"] = record.distance_km ? ordered_json(*record.distance_km) : ordered_json(nullptr);
  doc["score"] = record.score ? ordered_json(*record.score) : ordered_json(nullptr);
  if (include_latency) {
    doc["latency_ms"] = {{"reasoner", record.latency.reasoner.count()},
                         {"searcher", record.latency.searcher.count()},
                         {"guesser", record.latency.guesser.count()}};
  }
  return doc;
}

PredictionRecord record_from_json(const json& doc) {
  if (!doc.is_object()) throw RecordError("record is not a JSON object");
  PredictionRecord record;
  try {
    const int schema = doc.at("schema").get<int>();
    if (schema != PredictionRecord::kSchemaVersion) {
      throw RecordError("unsupported record schema " + std::to_string(schema));
    }
    record.sample_id = doc.at("sample_id").get<std::string>();
    record.reasoning = doc.value("reasoning", std::string());
    if (auto it = doc.find("knowledge"); it != doc.end()) {
      for (const auto& item : *it) {
        const auto source = parse_knowledge_source(item.at("source").get<std::string>());
        if (!source) throw RecordError("unknown knowledge source");
        record.knowledge.push_back(
            {*source, item.at("query_ref").get<std::string>(), item.at("content").get<std::string>()});
      }
    }
    if (auto it = doc.find("degraded"); it != doc.end()) {
      record.degraded = it->get<std::vector<std::string>>();
    }
    record.raw_guess = doc.value("raw_guess", std::string());
    if (const json& guess = doc.at("guess"); !guess.is_null()) {
      record.guess = ParsedGuess{guess.at("country").get<std::string>(), guess.at("city").get<std::string>(),
                                 point_from(guess)};
      record.location_source = guess.value("location_source", std::string("model"));
    }
    if (auto it = doc.find("failure"); it != doc.end() && !it->is_null()) {
      record.failure = StageFailure{it->at("stage").get<std::string>(), it->at("message").get<std::string>()};
    }
    if (record.guess.has_value() == record.failure.has_value()) {
      throw RecordError("exactly one of guess and failure must be present");
    }
    if (auto it = doc.find("truth"); it != doc.end() && !it->is_null()) record.truth = point_from(*it);
    if (auto it = doc.find("distance_km"); it != doc.end() && !it->is_null()) {
      record.distance_km = it->get<double>();
      if (!(*record.distance_km >= 0.0)) throw RecordError("negative distance");
    }
    if (auto it = doc.find("score"); it != doc.end() && !it->is_null()) record.score = it->get<double>();
    if (record.distance_km.has_value() != (record.guess && record.truth)) {
      throw RecordError("distance must be present exactly when both guess and truth are");
    }
    if (auto it = doc.find("latency_ms"); it != doc.end()) {
      record.latency.reasoner = std::chrono::milliseconds(it->value("reasoner", 0));
      record.latency.searcher = std::chrono::milliseconds(it->value("searcher", 0));
      record.latency.guesser = std::chrono::milliseconds(it->value("guesser", 0));
    }
  } catch (const json::exception& e) {
    throw RecordError(std::string("malformed record: ") + e.what());
  }
  return record;
}

std::string records_to_jsonl(std::span<const PredictionRecord> records, bool include_latency) {
  std::string out;
  for (const auto& record : records) {
    out += record_to_json(record, include_latency).dump();
    out += '\n';
  }
  return out;
}

void write_records(const std::filesystem::path& path, std::span<const PredictionRecord> records,
                   bool include_latency) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw RecordError("cannot open " + path.string() + " for writing");
  out << records_to_jsonl(records, include_latency);
  if (!out) throw RecordError("failed writing " + path.string());
}

std::vector<PredictionRecord> read_records(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw RecordError("cannot open records file " + path.string());
  std::vector<PredictionRecord> records;
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      records.push_back(record_from_json(json::parse(line)));
    } catch (const std::exception& e) {
      throw RecordError(path.string() + ":" + std::to_string(number) + ": " + e.what());
    }
  }
  return records;
}

ordered_json report_to_json(const EvaluationReport& report) {
  ordered_json doc;
  doc["n"] = report.n;
  doc["n_failed"] = report.n_failed;
  ordered_json accuracy;
  for (AccuracyLevel level : kDisplayOrder) accuracy[std::string(level_name(level))] = report.accuracy(level);
  doc["accuracy_pct"] = std::move(accuracy);
  doc["mean_distance_km"] =
      report.mean_distance_km ? ordered_json(*report.mean_distance_km) : ordered_json(nullptr);
  doc["mean_score"] = report.mean_score;
  return doc;
}

EvaluationReport report_from_json(const json& doc) {
  EvaluationReport report;
  try {
    report.n = doc.at("n").get<std::size_t>();
    report.n_failed = doc.at("n_failed").get<std::size_t>();
    for (AccuracyLevel level : kAllLevels) {
      report.accuracy_pct[static_cast<std::size_t>(level)] =
          doc.at("accuracy_pct").at(std::string(level_name(level))).get<double>();
    }
    if (const json& d = doc.at("mean_distance_km"); !d.is_null()) report.mean_distance_km = d.get<double>();
    report.mean_score = doc.at("mean_score").get<double>();
  } catch (const json::exception& e) {
    throw RecordError(std::string("malformed report: ") + e.what());
  }
  return report;
}

std::string render_report_text(const EvaluationReport& report) {
  std::ostringstream out;
  char line[256];
  std::snprintf(line, sizeof line, "%-10s %-10s %-10s %-10s %-10s %-14s %-10s\n", "Continent", "Country",
                "Region", "City", "Street", "Distance(km)", "Score");
  out << line;
  std::string cells;
  for (AccuracyLevel level : kDisplayOrder) {
    std::snprintf(line, sizeof line, "%-10s ", fixed(report.accuracy(level), 1).c_str());
    cells += line;
  }
  const std::string distance = report.mean_distance_km ? fixed(*report.mean_distance_km, 1) : "n/a";
  std::snprintf(line, sizeof line, "%-14s %-10s\n", distance.c_str(), fixed(report.mean_score, 1).c_str());
  out << cells << line;
  out << "n=" << report.n << " failed=" << report.n_failed << '\n';
  return out.str();
}

std::string render_report_csv(const EvaluationReport& report) {
  std::string out = "Continent,Country,Region,City,Street,Distance,Score,n,n_failed\n";
  for (AccuracyLevel level : kDisplayOrder) out += full_precision(report.accuracy(level)) + ",";
  out += (report.mean_distance_km ? full_precision(*report.mean_distance_km) : std::string()) + ",";
  out += full_precision(report.mean_score) + ",";
  out += std::to_string(report.n) + "," + std::to_string(report.n_failed) + "\n";
  return out;
}

}  // namespace geoloc
