#pragma once

#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "geoloc/geodesy.hpp"
#include "geoloc/pipeline.hpp"

namespace geoloc {

class RecordError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// One JSONL line per record. Latencies are left out unless requested so
/// that repeated runs produce byte-identical files.
nlohmann::ordered_json record_to_json(const PredictionRecord& record, bool include_latency = false);
PredictionRecord record_from_json(const nlohmann::json& doc);

void write_records(const std::filesystem::path& path, std::span<const PredictionRecord> records,
                   bool include_latency = false);
std::string records_to_jsonl(std::span<const PredictionRecord> records, bool include_latency = false);
// Throws RecordError naming the file and line of the first malformed record.
std::vector<PredictionRecord> read_records(const std::filesystem::path& path);

nlohmann::ordered_json report_to_json(const EvaluationReport& report);
EvaluationReport report_from_json(const nlohmann::json& doc);

// Columns in display order: Continent, Country, Region, City, Street, then
// mean distance and mean score.
std::string render_report_text(const EvaluationReport& report);
std::string render_report_csv(const EvaluationReport& report);

}  // namespace geoloc
