#include "geoloc/cli.hpp"

#include <array>
#include <chrono>
#include <cmath>
#include <ctime>
#include <fstream>
#include <iostream>
#include <map>
#include <mutex>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "geoloc/digest.hpp"
#include "geoloc/embedindex.hpp"
#include "geoloc/gateway.hpp"
#include "geoloc/image.hpp"
#include "geoloc/pipeline.hpp"
#include "geoloc/records.hpp"
#include "geoloc/textmetrics.hpp"

namespace geoloc::cli {
namespace {

using nlohmann::json;
using nlohmann::ordered_json;
namespace fs = std::filesystem;

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::string iso_timestamp(std::chrono::system_clock::time_point t) {
  const std::time_t seconds = std::chrono::system_clock::to_time_t(t);
  std::tm tm{};
  gmtime_r(&seconds, &tm);
  char buffer[32];
  std::strftime(buffer, sizeof buffer, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buffer;
}

template <typename Fn>
void for_each_jsonl(const fs::path& path, Fn&& fn) {
  std::ifstream in(path);
  if (!in) throw CorpusError(path, 0, "cannot open file");
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    json doc;
    try {
      doc = json::parse(line);
    } catch (const json::parse_error& e) {
      throw CorpusError(path, number, std::string("invalid JSON: ") + e.what());
    }
    if (!doc.is_object()) throw CorpusError(path, number, "expected a JSON object");
    try {
      fn(doc, number);
    } catch (const json::exception& e) {
      throw CorpusError(path, number, e.what());
    }
  }
}

void refuse_existing(const fs::path& path, bool force) {
  if (fs::exists(path) && !force) {
    throw UsageError(path.string() + " already exists (use --force to overwrite)");
  }
}

std::optional<double> number_field(const json& object, const char* key) {
  const auto it = object.find(key);
  if (it == object.end() || it->is_null()) return std::nullopt;
  if (!it->is_number()) throw std::invalid_argument(std::string(key) + " must be a number");
  return it->get<double>();
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

int fail(Context& ctx, const std::string& message) {
  ctx.err << "error: " << message << '\n';
  return kExitFailure;
}

template <typename Fn>
int guarded(Context& ctx, Fn&& body) {
  try {
    return body();
  } catch (const std::exception& e) {
    return fail(ctx, e.what());
  }
}

EvaluationReport report_for(std::span<const PredictionRecord> records) {
  std::vector<Outcome> outcomes;
  for (const auto& record : records) {
    if (auto outcome = record.outcome()) outcomes.push_back(*outcome);
  }
  if (outcomes.empty()) throw std::runtime_error("no records carry ground truth; nothing to score");
  return aggregate(outcomes);
}

}  // namespace

std::string dataset_digest(std::span<const Sample> samples) {
  std::string canonical;
  char coords[64];
  for (const auto& sample : samples) {
    canonical += sample.id;
    canonical += '\t';
    canonical += ImagePayload::read_file(sample.image_path).digest();
    if (sample.truth) {
      std::snprintf(coords, sizeof coords, "\t%.17g\t%.17g\t", sample.truth->location.lat(),
                    sample.truth->location.lon());
      canonical += coords;
      canonical += sample.truth->country;
    }
    canonical += '\n';
  }
  return sha256_hex(canonical);
}

int cmd_build_index(const BuildIndexOptions& options, Context& ctx) {
  return guarded(ctx, [&] {
    refuse_existing(options.out, options.force);
    const RunConfig config = load_run_config(options.config, ctx.env);
    const auto endpoint = config.endpoints.find("embed");
    if (endpoint == config.endpoints.end()) throw ConfigError("config has no embed endpoint");
    const auto entries = load_guidebook(options.guidebook);

    auto transport = ctx.transport ? ctx.transport : make_transport(config.transport);
    auto clock = ctx.clock ? ctx.clock : std::make_shared<SystemClock>();
    EmbedClient embed(std::make_shared<EndpointSession>(endpoint->second, transport, clock), config.embed_dimension);

    std::vector<IndexEntry> items;
    items.reserve(entries.size());
    for (const auto& entry : entries) {
      const auto image = ImagePayload::read_file(entry.image_path);
      items.push_back({entry.id, embed.embed_image(image), entry.clue, std::string(to_string(entry.source))});
      if (ctx.verbose) ctx.err << "embedded " << entry.id << '\n';
    }
    const auto index = EmbeddingIndex::build(std::move(items));
    if (options.out.has_parent_path()) fs::create_directories(options.out.parent_path());
    index.save(options.out);
    ctx.out << "n=" << index.size() << " dim=" << index.dim() << '\n';
    return kExitOk;
  });
}

int cmd_run(const RunOptions& options, Context& ctx) {
  return guarded(ctx, [&] {
    if (options.parallelism == 0) throw UsageError("--parallelism must be at least 1");
    RunConfig config = load_run_config(options.config, ctx.env);
    for (const auto& name : options.ablations) apply_ablation(config, name);
    const auto samples = load_dataset(options.dataset);
    if (samples.empty()) throw UsageError("dataset " + options.dataset.string() + " is empty");

    const fs::path records_path = options.out_dir / "records.jsonl";
    const fs::path report_path = options.out_dir / "report.json";
    const fs::path manifest_path = options.out_dir / "manifest.json";
    for (const auto& path : {records_path, report_path, manifest_path}) refuse_existing(path, options.force);
    fs::create_directories(options.out_dir);

    Runtime runtime(config, ctx.transport, ctx.clock);
    std::mutex log_mutex;
    auto log = [&](std::string_view message) {
      if (!ctx.verbose) return;
      std::lock_guard lock(log_mutex);
      ctx.err << message << '\n';
    };
    Pipeline pipeline(config.pipeline, runtime.services(log));

    const auto started = std::chrono::system_clock::now();
    const BatchResult result = pipeline.run_batch(samples, options.parallelism);
    const auto finished = std::chrono::system_clock::now();

    write_records(records_path, result.records, config.include_latency);
    write_text(report_path, (result.report ? report_to_json(*result.report) : ordered_json(nullptr)).dump(2) + "\n");

    std::map<std::string, std::size_t> knowledge{{"guidebook", 0}, {"map", 0}, {"vlm", 0}};
    std::map<std::string, std::size_t> degraded;
    std::size_t failed = 0;
    for (const auto& record : result.records) {
      for (const auto& item : record.knowledge) ++knowledge[std::string(to_string(item.source))];
      for (const auto& tool : record.degraded) ++degraded[tool];
      if (record.failed()) ++failed;
    }
    ordered_json manifest;
    manifest["config_digest"] = config.digest();
    manifest["dataset_digest"] = dataset_digest(samples);
    manifest["started"] = iso_timestamp(started);
    manifest["finished"] = iso_timestamp(finished);
    manifest["parallelism"] = options.parallelism;
    manifest["ablations"] = config.ablations;
    manifest["n_samples"] = samples.size();
    manifest["n_failed"] = failed;
    manifest["tool_calls"] = runtime.tool_calls();
    manifest["knowledge_counts"] = knowledge;
    manifest["degraded_counts"] = degraded;
    write_text(manifest_path, manifest.dump(2) + "\n");

    if (result.report) ctx.out << render_report_text(*result.report);
    ctx.out << "records: " << records_path.string() << '\n';
    if (failed > 0) {
      ctx.err << failed << " of " << samples.size() << " samples failed\n";
      return kExitPartial;
    }
    return kExitOk;
  });
}

int cmd_score(const ScoreOptions& options, Context& ctx) {
  return guarded(ctx, [&] {
    std::vector<std::string> truth_order;
    std::map<std::string, GeoPoint> truth;
    for_each_jsonl(options.truth, [&](const json& doc, std::size_t line) {
      const auto id = doc.at("id").get<std::string>();
      const auto lat = number_field(doc, "lat");
      const auto lon = number_field(doc, "lon");
      if (!lat || !lon) throw CorpusError(options.truth, line, "truth record '" + id + "' lacks lat/lon");
      if (!in_coordinate_bounds(*lat, *lon)) throw CorpusError(options.truth, line, "coordinates out of range");
      if (!truth.emplace(id, GeoPoint(*lat, *lon)).second) {
        throw CorpusError(options.truth, line, "duplicate id '" + id + "'");
      }
      truth_order.push_back(id);
    });

    std::map<std::string, std::optional<GeoPoint>> predictions;
    std::vector<std::string> unknown;
    for_each_jsonl(options.predictions, [&](const json& doc, std::size_t line) {
      std::string id;
      std::optional<double> lat;
      std::optional<double> lon;
      if (doc.contains("sample_id")) {
        id = doc.at("sample_id").get<std::string>();
        if (const auto guess = doc.find("guess"); guess != doc.end() && guess->is_object()) {
          lat = number_field(*guess, "latitude");
          lon = number_field(*guess, "longitude");
        }
      } else {
        id = doc.at("id").get<std::string>();
        lat = number_field(doc, "lat");
        lon = number_field(doc, "lon");
      }
      std::optional<GeoPoint> point;
      if (lat && lon) {
        if (!in_coordinate_bounds(*lat, *lon)) throw CorpusError(options.predictions, line, "coordinates out of range");
        point = GeoPoint(*lat, *lon);
      }
      if (!truth.contains(id)) unknown.push_back(id);
      if (!predictions.emplace(id, point).second) {
        throw CorpusError(options.predictions, line, "duplicate prediction for '" + id + "'");
      }
    });

    if (!unknown.empty()) {
      for (const auto& id : unknown) ctx.err << "error: prediction id '" << id << "' not found in truth\n";
      return fail(ctx, std::to_string(unknown.size()) + " prediction id(s) have no ground truth");
    }
    if (truth_order.empty()) throw UsageError("truth file is empty");

    std::vector<Outcome> outcomes;
    std::size_t unpredicted = 0;
    for (const auto& id : truth_order) {
      const auto it = predictions.find(id);
      if (it == predictions.end()) ++unpredicted;
      if (it == predictions.end() || !it->second) {
        outcomes.push_back(Outcome::failure());
      } else {
        outcomes.push_back(Outcome::from_distance(haversine_km(*it->second, truth.at(id))));
      }
    }
    if (unpredicted > 0) ctx.err << "warning: " << unpredicted << " truth id(s) have no prediction; scored as failures\n";

    const std::string text = report_to_json(aggregate(outcomes)).dump(2) + "\n";
    if (options.out) {
      write_text(*options.out, text);
    } else {
      ctx.out << text;
    }
    return kExitOk;
  });
}

int cmd_report(const ReportOptions& options, Context& ctx) {
  return guarded(ctx, [&] {
    const auto records = read_records(options.records);
    if (records.empty()) throw UsageError(options.records.string() + " contains no records");
    const EvaluationReport report = report_for(records);
    switch (options.format) {
      case ReportFormat::Text: ctx.out << render_report_text(report); break;
      case ReportFormat::Json: ctx.out << report_to_json(report).dump(2) << '\n'; break;
      case ReportFormat::Csv: ctx.out << render_report_csv(report); break;
    }
    return kExitOk;
  });
}

int cmd_score_reasoning(const ScoreReasoningOptions& options, Context& ctx) {
  return guarded(ctx, [&] {
    std::array<RougeScore, 3> sum{};
    std::size_t n = 0;
    for_each_jsonl(options.input, [&](const json& doc, std::size_t) {
      const auto scores =
          score_reasoning(doc.at("candidate").get<std::string>(), doc.at("reference").get<std::string>());
      const std::array<RougeScore, 3> parts{scores.rouge1, scores.rouge2, scores.rouge_l};
      for (std::size_t i = 0; i < parts.size(); ++i) {
        sum[i].precision += parts[i].precision;
        sum[i].recall += parts[i].recall;
        sum[i].f1 += parts[i].f1;
      }
      ++n;
    });
    if (n == 0) throw UsageError(options.input.string() + " contains no pairs");

    const std::array<const char*, 3> names{"rouge1", "rouge2", "rougeL"};
    const double count = static_cast<double>(n);
    if (options.json) {
      ordered_json doc;
      doc["n"] = n;
      for (std::size_t i = 0; i < names.size(); ++i) {
        doc[names[i]] = {{"precision", sum[i].precision / count},
                         {"recall", sum[i].recall / count},
                         {"f1", sum[i].f1 / count}};
      }
      ctx.out << doc.dump(2) << '\n';
    } else {
      char line[128];
      ctx.out << "n=" << n << '\n';
      for (std::size_t i = 0; i < names.size(); ++i) {
        std::snprintf(line, sizeof line, "%-7s P=%.4f R=%.4f F1=%.4f\n", names[i], sum[i].precision / count,
                      sum[i].recall / count, sum[i].f1 / count);
        ctx.out << line;
      }
    }
    return kExitOk;
  });
}

int cmd_ingest(const IngestOptions& options, Context& ctx) {
  return guarded(ctx, [&] {
    refuse_existing(options.out, options.force);
    const auto samples = ingest_csv(options.csv, options.image_root, options.columns);
    if (options.out.has_parent_path()) fs::create_directories(options.out.parent_path());
    save_dataset(samples, options.out);
    ctx.out << "wrote " << samples.size() << " samples to " << options.out.string() << '\n';
    return kExitOk;
  });
}

int cmd_stats(const StatsOptions& options, Context& ctx) {
  return guarded(ctx, [&] {
    const auto records = read_records(options.records);
    std::vector<double> distances;
    std::vector<std::string> reasonings;
    for (const auto& record : records) {
      if (record.distance_km) distances.push_back(*record.distance_km);
      if (!record.reasoning.empty()) reasonings.push_back(record.reasoning);
    }
    const auto stats = dataset_stats(distances, reasonings, options.edges);
    char line[128];
    ctx.out << "distance histogram (km):\n";
    for (const auto& bucket : stats.distance_histogram) {
      std::snprintf(line, sizeof line, "  [%.1f, %.1f%c %zu\n", bucket.lower, bucket.upper,
                    &bucket == &stats.distance_histogram.back() ? ']' : ')', bucket.count);
      ctx.out << line;
    }
    if (stats.mean_reasoning_words) {
      std::snprintf(line, sizeof line, "mean reasoning words: %.1f\n", *stats.mean_reasoning_words);
      ctx.out << line;
    }
    return kExitOk;
  });
}

}  // namespace geoloc::cli
