#include <iostream>
#include <map>

#include <CLI11.hpp>

#include "geoloc/cli.hpp"

int main(int argc, char** argv) {
  using namespace geoloc::cli;

  CLI::App app{"Image geolocation pipeline: index building, batch runs and scoring"};
  app.require_subcommand(1);
  bool verbose = false;
  app.add_flag("-v,--verbose", verbose, "Log per-sample progress to stderr");

  BuildIndexOptions build;
  auto* build_cmd = app.add_subcommand("build-index", "Embed a guidebook and write an index file");
  build_cmd->add_option("--guidebook", build.guidebook, "Guidebook JSONL")->required()->check(CLI::ExistingFile);
  build_cmd->add_option("--config", build.config, "Config with an embed endpoint")->required()->check(CLI::ExistingFile);
  build_cmd->add_option("--out", build.out, "Index file to write")->required();
  build_cmd->add_flag("--force", build.force, "Overwrite an existing index");

  RunOptions run;
  auto* run_cmd = app.add_subcommand("run", "Run the pipeline over a dataset");
  run_cmd->add_option("--config", run.config, "Run config JSON")->required()->check(CLI::ExistingFile);
  run_cmd->add_option("--dataset", run.dataset, "Dataset JSONL")->required()->check(CLI::ExistingFile);
  run_cmd->add_option("--out", run.out_dir, "Output directory")->required();
  run_cmd->add_option("--parallelism", run.parallelism, "Worker threads")->check(CLI::PositiveNumber);
  run_cmd->add_option("--ablate", run.ablations, "reasoner, searcher or training; repeatable")
      ->check(CLI::IsMember({"reasoner", "searcher", "training"}));
  run_cmd->add_flag("--force", run.force, "Overwrite existing outputs");

  ScoreOptions score;
  std::string score_out;
  auto* score_cmd = app.add_subcommand("score", "Score predictions against ground truth");
  score_cmd->add_option("--predictions", score.predictions, "JSONL of {id, lat, lon} or run records")
      ->required()
      ->check(CLI::ExistingFile);
  score_cmd->add_option("--truth", score.truth, "JSONL of {id, lat, lon}")->required()->check(CLI::ExistingFile);
  score_cmd->add_option("--out", score_out, "Write the report here instead of stdout");

  ReportOptions report;
  auto* report_cmd = app.add_subcommand("report", "Render the evaluation report of a records file");
  report_cmd->add_option("records", report.records, "records.jsonl")->required()->check(CLI::ExistingFile);
  report_cmd->add_option("--format", report.format, "text, json or csv")
      ->transform(CLI::CheckedTransformer(
          std::map<std::string, ReportFormat>{
              {"text", ReportFormat::Text}, {"json", ReportFormat::Json}, {"csv", ReportFormat::Csv}},
          CLI::ignore_case));

  ScoreReasoningOptions reasoning;
  auto* reasoning_cmd = app.add_subcommand("score-reasoning", "Mean ROUGE-1/2/L over candidate/reference pairs");
  reasoning_cmd->add_option("input", reasoning.input, "JSONL of {id, candidate, reference}")
      ->required()
      ->check(CLI::ExistingFile);
  reasoning_cmd->add_flag("--json", reasoning.json, "Emit JSON");

  IngestOptions ingest;
  auto* ingest_cmd = app.add_subcommand("ingest", "Convert a CSV manifest into dataset JSONL");
  ingest_cmd->add_option("--csv", ingest.csv, "CSV manifest")->required()->check(CLI::ExistingFile);
  ingest_cmd->add_option("--images", ingest.image_root, "Directory image paths are relative to")
      ->required()
      ->check(CLI::ExistingDirectory);
  ingest_cmd->add_option("--out", ingest.out, "Dataset JSONL to write")->required();
  ingest_cmd->add_option("--id-column", ingest.columns.id);
  ingest_cmd->add_option("--image-column", ingest.columns.image);
  ingest_cmd->add_option("--lat-column", ingest.columns.lat);
  ingest_cmd->add_option("--lon-column", ingest.columns.lon);
  ingest_cmd->add_option("--country-column", ingest.columns.country);
  ingest_cmd->add_flag("--force", ingest.force, "Overwrite an existing output");

  StatsOptions stats;
  auto* stats_cmd = app.add_subcommand("stats", "Distance histogram and reasoning length of a records file");
  stats_cmd->add_option("records", stats.records, "records.jsonl")->required()->check(CLI::ExistingFile);
  stats_cmd->add_option("--edges", stats.edges, "Explicit bucket edges in km");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitFailure;
  }

  Context ctx{std::cout, std::cerr};
  ctx.verbose = verbose;
  if (!score_out.empty()) score.out = score_out;

  if (*build_cmd) return cmd_build_index(build, ctx);
  if (*run_cmd) return cmd_run(run, ctx);
  if (*score_cmd) return cmd_score(score, ctx);
  if (*report_cmd) return cmd_report(report, ctx);
  if (*reasoning_cmd) return cmd_score_reasoning(reasoning, ctx);
  if (*ingest_cmd) return cmd_ingest(ingest, ctx);
  if (*stats_cmd) return cmd_stats(stats, ctx);
  return kExitFailure;
}
