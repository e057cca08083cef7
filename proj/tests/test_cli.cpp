#include <doctest.h>

#include <sstream>

#include <nlohmann/json.hpp>

#include "fake_world.hpp"
#include "geoloc/cli.hpp"
#include "geoloc/embedindex.hpp"
#include "geoloc/records.hpp"

using namespace geoloc;
using namespace geoloc::testing;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct Io {
  std::ostringstream out;
  std::ostringstream err;
  cli::Context ctx{out, err, nullptr, std::make_shared<FakeClock>(), [](const std::string&) { return std::optional<std::string>(); }};

  explicit Io(std::shared_ptr<Transport> transport = nullptr) { ctx.transport = std::move(transport); }
};

json read_json(const fs::path& path) { return json::parse(read_file(path)); }

// Records fixtures for `ablations` against the fake server.
void record_fixtures(FakeWorld& world, const fs::path& fixtures, const std::vector<std::string>& ablations,
                     const fs::path& scratch) {
  auto recorder = std::make_shared<RecordingTransport>(world.server.transport(), fixtures);
  Io io(recorder);
  cli::RunOptions run{world.write_config(world.config_json()), world.dataset, scratch, 1, ablations, true};
  REQUIRE(cli::cmd_run(run, io.ctx) == cli::kExitOk);
}

}  // namespace

TEST_CASE("build-index embeds the guidebook") {
  FakeWorld world;
  Io io(world.server.transport());
  cli::BuildIndexOptions opts{world.guidebook, world.write_config(world.config_json()), world.dir / "out/gb.idx", false};
  REQUIRE(cli::cmd_build_index(opts, io.ctx) == cli::kExitOk);
  CHECK(io.out.str() == "n=3 dim=3\n");
  const auto built = EmbeddingIndex::load(opts.out);
  const auto reference = EmbeddingIndex::load(world.index);
  REQUIRE(built.size() == reference.size());
  for (std::size_t i = 0; i < built.size(); ++i) {
    CHECK(built.id(i) == reference.id(i));
    const auto a = built.vector(i);
    const auto b = reference.vector(i);
    CHECK(std::equal(a.begin(), a.end(), b.begin(), b.end()));
  }
  CHECK(world.server.hits(kEmbedUrl) == 3);

  Io again(world.server.transport());
  CHECK(cli::cmd_build_index(opts, again.ctx) == cli::kExitFailure);
  CHECK(again.err.str().find("--force") != std::string::npos);
  opts.force = true;
  CHECK(cli::cmd_build_index(opts, again.ctx) == cli::kExitOk);
}

TEST_CASE("build-index fails cleanly when the embed endpoint is down") {
  FakeWorld world;
  world.server.fail_origin(kEmbedUrl);
  Io io(world.server.transport());
  cli::BuildIndexOptions opts{world.guidebook, world.write_config(world.config_json()), world.dir / "gb.idx", false};
  CHECK(cli::cmd_build_index(opts, io.ctx) == cli::kExitFailure);
  CHECK(io.err.str().rfind("error: embed_image", 0) == 0);
  CHECK_FALSE(fs::exists(opts.out));

  json only_guesser = {{"endpoints", {{"guesser", {{"base_url", kGuesserUrl}}}}}};
  opts.config = world.write_config(only_guesser, "g.json");
  Io io2(world.server.transport());
  CHECK(cli::cmd_build_index(opts, io2.ctx) == cli::kExitFailure);
  CHECK(io2.err.str().find("embed") != std::string::npos);
}

TEST_CASE("run writes records, report and manifest") {
  FakeWorld world;
  Io io(world.server.transport());
  cli::RunOptions run{world.write_config(world.config_json()), world.dataset, world.dir / "run", 1, {}, false};
  REQUIRE(cli::cmd_run(run, io.ctx) == cli::kExitOk);
  const auto records = read_records(run.out_dir / "records.jsonl");
  REQUIRE(records.size() == 3);
  CHECK(records[0].sample_id == "isr-001");
  CHECK(records[2].location_source == "geocoded");

  const json report = read_json(run.out_dir / "report.json");
  CHECK(report["n"] == 3);
  CHECK(report["accuracy_pct"]["Country"] == 100.0);

  const json manifest = read_json(run.out_dir / "manifest.json");
  CHECK(manifest["n_samples"] == 3);
  CHECK(manifest["n_failed"] == 0);
  CHECK(manifest["parallelism"] == 1);
  CHECK(manifest["config_digest"].get<std::string>().size() == 64);
  CHECK(manifest["tool_calls"]["reasoner"] == 3);
  CHECK(manifest["tool_calls"]["guesser"] == 5);
  CHECK(manifest["tool_calls"]["ground"] == 3);
  CHECK(manifest["tool_calls"]["ocr"] == 2);
  CHECK(manifest["tool_calls"]["map"] == 2);
  CHECK(manifest["tool_calls"]["geocode"] == 1);
  CHECK(manifest["knowledge_counts"]["map"] == 4);
  CHECK(manifest["started"].get<std::string>().ends_with("Z"));
  CHECK(io.out.str().find("Continent") != std::string::npos);

  Io again(world.server.transport());
  CHECK(cli::cmd_run(run, again.ctx) == cli::kExitFailure);
  CHECK(again.err.str().find("already exists") != std::string::npos);
}

TEST_CASE("run replays fixtures byte-identically with matching call counts") {
  FakeWorld world;
  const fs::path fixtures = world.dir / "fixtures";
  record_fixtures(world, fixtures, {}, world.dir / "rec");

  std::vector<std::string> outputs;
  for (int round = 0; round < 2; ++round) {
    auto mock = std::make_shared<MockTransport>(fixtures);
    Io io(mock);
    const fs::path out = world.dir / ("replay" + std::to_string(round));
    cli::RunOptions run{world.write_config(world.config_json()), world.dataset, out, round == 0 ? 1u : 3u, {}, false};
    REQUIRE(cli::cmd_run(run, io.ctx) == cli::kExitOk);
    CHECK(mock->missing().empty());
    outputs.push_back(read_file(out / "records.jsonl") + read_file(out / "report.json"));

    const json calls = read_json(out / "manifest.json")["tool_calls"];
    CHECK(calls["reasoner"] == mock->count_calls(kReasonerUrl));
    CHECK(calls["guesser"] == mock->count_calls(kGuesserUrl));
    CHECK(calls["searcher"] == mock->count_calls(kSearcherUrl));
    CHECK(calls["embed"] == mock->count_calls(kEmbedUrl));
    CHECK(calls["ground"] == mock->count_calls(kGroundUrl));
    CHECK(calls["ocr"] == mock->count_calls(kOcrUrl));
    CHECK(calls["map"].get<std::size_t>() + calls["geocode"].get<std::size_t>() == mock->count_calls(kOsmUrl));
  }
  CHECK(outputs[0] == outputs[1]);
  CHECK(outputs[0] == read_file(world.dir / "rec/records.jsonl") + read_file(world.dir / "rec/report.json"));
}

TEST_CASE("ablation runs record what they skipped") {
  FakeWorld world;
  for (const std::string ablation : {"reasoner", "searcher", "training"}) {
    Io io(world.server.transport());
    const fs::path out = world.dir / ("ablate-" + ablation);
    cli::RunOptions run{world.write_config(world.config_json()), world.dataset, out, 1, {ablation}, false};
    REQUIRE(cli::cmd_run(run, io.ctx) == cli::kExitOk);
    const json manifest = read_json(out / "manifest.json");
    CHECK(manifest["ablations"] == json::array({ablation}));
    const auto records = read_records(out / "records.jsonl");
    if (ablation == "reasoner") {
      CHECK(manifest["tool_calls"]["reasoner"] == 0);
      for (const auto& r : records) CHECK(r.reasoning.empty());
    } else if (ablation == "searcher") {
      CHECK(manifest["tool_calls"]["ground"] == 0);
      CHECK(manifest["tool_calls"]["map"] == 0);
      CHECK(manifest["knowledge_counts"]["vlm"] == 0);
      for (const auto& r : records) CHECK(r.knowledge.empty());
    } else {
      CHECK(world.server.hits(kUntrainedUrl) == 3);
      for (const auto& r : records) CHECK(r.reasoning == "It looks like a warm place.");
    }
  }
  Io io(world.server.transport());
  cli::RunOptions bad{world.write_config(world.config_json()), world.dataset, world.dir / "x", 1, {"everything"}, false};
  CHECK(cli::cmd_run(bad, io.ctx) == cli::kExitFailure);
}

TEST_CASE("run exits 1 when some samples fail") {
  FakeWorld world;
  write_file(world.dir / "broken.png", "garbage");
  write_file(world.dataset, read_file(world.dataset) + R"({"id": "broken", "image": "broken.png", "lat": 0, "lon": 0})" + "\n");
  Io io(world.server.transport());
  cli::RunOptions run{world.write_config(world.config_json()), world.dataset, world.dir / "run", 2, {}, false};
  CHECK(cli::cmd_run(run, io.ctx) == cli::kExitPartial);
  const json manifest = read_json(run.out_dir / "manifest.json");
  CHECK(manifest["n_failed"] == 1);
  const auto records = read_records(run.out_dir / "records.jsonl");
  CHECK(records[3].failure->stage == "input");
  CHECK(read_json(run.out_dir / "report.json")["n_failed"] == 1);
}

TEST_CASE("score") {
  TempDir dir;
  write_file(dir / "truth.jsonl", R"({"id": "a", "lat": 48.8566, "lon": 2.3522})" "\n"
                                  R"({"id": "b", "lat": 0, "lon": 0})" "\n");
  write_file(dir / "exact.jsonl", R"({"id": "a", "lat": 48.8566, "lon": 2.3522})" "\n"
                                  R"({"id": "b", "lat": 0, "lon": 0})" "\n");
  Io io;
  REQUIRE(cli::cmd_score({dir / "exact.jsonl", dir / "truth.jsonl", std::nullopt}, io.ctx) == cli::kExitOk);
  const json exact = json::parse(io.out.str());
  CHECK(exact["mean_score"] == 5000.0);
  CHECK(exact["accuracy_pct"]["Street"] == 100.0);

  // 100 km due north of the truth: ~0.8993 degrees of latitude.
  write_file(dir / "near.jsonl", R"({"id": "b", "lat": 0.899322, "lon": 0})" "\n");
  Io near;
  REQUIRE(cli::cmd_score({dir / "near.jsonl", dir / "truth.jsonl", dir / "r.json"}, near.ctx) == cli::kExitOk);
  const json r = read_json(dir / "r.json");
  CHECK(r["accuracy_pct"]["Region"] == 50.0);
  CHECK(r["accuracy_pct"]["City"] == 0.0);
  CHECK(r["n_failed"] == 1);
  CHECK(near.err.str().find("warning: 1 truth id") != std::string::npos);

  write_file(dir / "unknown.jsonl", R"({"id": "zz", "lat": 1, "lon": 1})" "\n" R"({"id": "yy", "lat": 1, "lon": 1})" "\n");
  Io unknown;
  CHECK(cli::cmd_score({dir / "unknown.jsonl", dir / "truth.jsonl", std::nullopt}, unknown.ctx) == cli::kExitFailure);
  CHECK(unknown.err.str().find("'zz'") != std::string::npos);
  CHECK(unknown.err.str().find("'yy'") != std::string::npos);

  write_file(dir / "dup.jsonl", R"({"id": "a", "lat": 1, "lon": 1})" "\n" R"({"id": "a", "lat": 1, "lon": 1})" "\n");
  Io dup;
  CHECK(cli::cmd_score({dir / "exact.jsonl", dir / "dup.jsonl", std::nullopt}, dup.ctx) == cli::kExitFailure);
  CHECK(dup.err.str().find("dup.jsonl:2") != std::string::npos);
}

TEST_CASE("score accepts run records") {
  FakeWorld world;
  Io io(world.server.transport());
  cli::RunOptions run{world.write_config(world.config_json()), world.dataset, world.dir / "run", 1, {}, false};
  REQUIRE(cli::cmd_run(run, io.ctx) == cli::kExitOk);
  Io scored;
  REQUIRE(cli::cmd_score({run.out_dir / "records.jsonl", world.dataset, std::nullopt}, scored.ctx) == cli::kExitOk);
  const json a = json::parse(scored.out.str());
  const json b = read_json(run.out_dir / "report.json");
  CHECK(a["accuracy_pct"] == b["accuracy_pct"]);
  CHECK(a["mean_score"].get<double>() == doctest::Approx(b["mean_score"].get<double>()));
}

TEST_CASE("report renders every format") {
  FakeWorld world;
  Io io(world.server.transport());
  cli::RunOptions run{world.write_config(world.config_json()), world.dataset, world.dir / "run", 1, {}, false};
  REQUIRE(cli::cmd_run(run, io.ctx) == cli::kExitOk);
  const auto path = run.out_dir / "records.jsonl";

  Io text, js, csv;
  REQUIRE(cli::cmd_report({path, cli::ReportFormat::Text}, text.ctx) == cli::kExitOk);
  REQUIRE(cli::cmd_report({path, cli::ReportFormat::Json}, js.ctx) == cli::kExitOk);
  REQUIRE(cli::cmd_report({path, cli::ReportFormat::Csv}, csv.ctx) == cli::kExitOk);
  CHECK(text.out.str().rfind("Continent", 0) == 0);
  CHECK(json::parse(js.out.str()) == read_json(run.out_dir / "report.json"));
  CHECK(csv.out.str().rfind("Continent,Country,Region,City,Street", 0) == 0);

  write_file(world.dir / "empty.jsonl", "");
  Io empty;
  CHECK(cli::cmd_report({world.dir / "empty.jsonl", cli::ReportFormat::Text}, empty.ctx) == cli::kExitFailure);
  CHECK(empty.err.str().find("no records") != std::string::npos);
  Io missing;
  CHECK(cli::cmd_report({world.dir / "absent.jsonl", cli::ReportFormat::Text}, missing.ctx) == cli::kExitFailure);
}

TEST_CASE("score-reasoning averages ROUGE over pairs") {
  TempDir dir;
  write_file(dir / "pairs.jsonl", R"({"candidate": "The cat, sat!", "reference": "the CAT"})" "\n"
                                  R"({"candidate": "a b", "reference": "a b"})" "\n");
  Io text;
  REQUIRE(cli::cmd_score_reasoning({dir / "pairs.jsonl", false}, text.ctx) == cli::kExitOk);
  CHECK(text.out.str().find("rouge1  P=0.8333 R=1.0000 F1=0.9000") != std::string::npos);
  Io js;
  REQUIRE(cli::cmd_score_reasoning({dir / "pairs.jsonl", true}, js.ctx) == cli::kExitOk);
  const json doc = json::parse(js.out.str());
  CHECK(doc["n"] == 2);
  CHECK(doc["rougeL"]["f1"].get<double>() == doctest::Approx(0.9));
  CHECK(doc["rouge2"]["f1"].get<double>() == doctest::Approx((2.0 / 3 + 1.0) / 2));

  write_file(dir / "bad.jsonl", R"({"candidate": "x"})" "\n");
  Io bad;
  CHECK(cli::cmd_score_reasoning({dir / "bad.jsonl", false}, bad.ctx) == cli::kExitFailure);
  CHECK(bad.err.str().find("bad.jsonl:1") != std::string::npos);
}

TEST_CASE("ingest and stats") {
  FakeWorld world;
  write_file(world.dir / "m.csv", "id,image,lat,lon,country\nisr-001,isr-001.png,32.0853,34.7818,Israel\n");
  Io io;
  cli::IngestOptions opts;
  opts.csv = world.dir / "m.csv";
  opts.image_root = world.dir / "images";
  opts.out = world.dir / "ingested/data.jsonl";
  REQUIRE(cli::cmd_ingest(opts, io.ctx) == cli::kExitOk);
  const auto samples = load_dataset(opts.out);
  REQUIRE(samples.size() == 1);
  CHECK(samples[0].truth->country == "Israel");
  const auto original = world.samples();
  CHECK(cli::dataset_digest(samples) == cli::dataset_digest(std::span(original).first(1)));
  Io again;
  CHECK(cli::cmd_ingest(opts, again.ctx) == cli::kExitFailure);

  Io run_io(world.server.transport());
  cli::RunOptions run{world.write_config(world.config_json()), world.dataset, world.dir / "run", 1, {}, false};
  REQUIRE(cli::cmd_run(run, run_io.ctx) == cli::kExitOk);
  Io stats;
  REQUIRE(cli::cmd_stats({run.out_dir / "records.jsonl", {0, 1, 25, 200, 750, 2500}}, stats.ctx) == cli::kExitOk);
  CHECK(stats.out.str().find("[0.0, 1.0) 1") != std::string::npos);
  CHECK(stats.out.str().find("[200.0, 750.0) 2") != std::string::npos);
  CHECK(stats.out.str().find("mean reasoning words:") != std::string::npos);
}
