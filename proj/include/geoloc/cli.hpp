#pragma once

#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "geoloc/clock.hpp"
#include "geoloc/config.hpp"
#include "geoloc/corpus.hpp"
#include "geoloc/transport.hpp"

namespace geoloc::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitPartial = 1;
inline constexpr int kExitFailure = 2;

/// Streams and injectable dependencies shared by every command.
struct Context {
  std::ostream& out;
  std::ostream& err;
  std::shared_ptr<Transport> transport;  // overrides the configured transport
  std::shared_ptr<Clock> clock;
  EnvLookup env = process_env;
  bool verbose = false;
};

struct BuildIndexOptions {
  std::filesystem::path guidebook;
  std::filesystem::path config;
  std::filesystem::path out;
  bool force = false;
};

struct RunOptions {
  std::filesystem::path config;
  std::filesystem::path dataset;
  std::filesystem::path out_dir;
  std::size_t parallelism = 1;
  std::vector<std::string> ablations;
  bool force = false;
};

struct ScoreOptions {
  std::filesystem::path predictions;
  std::filesystem::path truth;
  std::optional<std::filesystem::path> out;
};

enum class ReportFormat { Text, Json, Csv };

struct ReportOptions {
  std::filesystem::path records;
  ReportFormat format = ReportFormat::Text;
};

struct ScoreReasoningOptions {
  std::filesystem::path input;
  bool json = false;
};

struct IngestOptions {
  std::filesystem::path csv;
  std::filesystem::path image_root;
  std::filesystem::path out;
  CsvColumns columns;
  bool force = false;
};

struct StatsOptions {
  std::filesystem::path records;
  std::vector<double> edges;
};

int cmd_build_index(const BuildIndexOptions& options, Context& ctx);
/// Writes records.jsonl, report.json and manifest.json into out_dir.
int cmd_run(const RunOptions& options, Context& ctx);
int cmd_score(const ScoreOptions& options, Context& ctx);
int cmd_report(const ReportOptions& options, Context& ctx);
int cmd_score_reasoning(const ScoreReasoningOptions& options, Context& ctx);
int cmd_ingest(const IngestOptions& options, Context& ctx);
int cmd_stats(const StatsOptions& options, Context& ctx);

/// Digest of the dataset contents: ids, image bytes and ground truth.
std::string dataset_digest(std::span<const Sample> samples);

}  // namespace geoloc::cli
