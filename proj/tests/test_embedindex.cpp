#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <vector>

#include "fake_world.hpp"
#include "geoloc/embedindex.hpp"

using namespace geoloc;

namespace {

struct Case {
  std::vector<std::vector<int>> vectors;
  std::vector<IndexEntry> entries;
};

Case random_case(std::mt19937_64& rng, std::size_t n, std::size_t dim, int range) {
  std::uniform_int_distribution<int> coord(-range, range);
  Case c;
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<int> v(dim);
    for (auto& x : v) x = coord(rng);
    IndexEntry e{"e" + std::to_string(i), std::vector<float>(v.begin(), v.end()), "clue " + std::to_string(i),
                 i % 2 ? "plonkit" : "toptips"};
    c.vectors.push_back(std::move(v));
    c.entries.push_back(std::move(e));
  }
  return c;
}

// Filter by threshold, stable sort by exact squared distance, truncate to k.
std::vector<std::size_t> brute_force(const Case& c, const std::vector<int>& q, std::size_t k, double dt) {
  std::vector<std::pair<long long, std::size_t>> kept;
  for (std::size_t i = 0; i < c.vectors.size(); ++i) {
    long long sq = 0;
    for (std::size_t j = 0; j < q.size(); ++j) {
      const long long d = c.vectors[i][j] - q[j];
      sq += d * d;
    }
    if (std::sqrt(static_cast<double>(sq)) <= dt) kept.emplace_back(sq, i);
  }
  std::stable_sort(kept.begin(), kept.end(), [](auto& a, auto& b) { return a.first < b.first; });
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < kept.size() && i < k; ++i) out.push_back(kept[i].second);
  return out;
}

std::vector<std::size_t> positions(const std::vector<RetrievalHit>& hits) {
  std::vector<std::size_t> out;
  for (const auto& h : hits) out.push_back(h.position);
  return out;
}

}  // namespace

TEST_CASE("build rejects bad input") {
  CHECK_THROWS_AS(EmbeddingIndex::build({}), IndexError);
  CHECK_THROWS_AS(EmbeddingIndex::build({{"a", {}, "", ""}}), IndexError);
  CHECK_THROWS_AS(EmbeddingIndex::build({{"a", {1, 2}, "", ""}, {"b", {1}, "", ""}}), IndexError);
  CHECK_THROWS_AS(EmbeddingIndex::build({{"a", {1}, "", ""}, {"a", {2}, "", ""}}), IndexError);
}

TEST_CASE("query basics") {
  const auto index = EmbeddingIndex::build({{"a", {0, 0}, "A", "toptips"},
                                            {"b", {3, 4}, "B", "plonkit"},
                                            {"c", {0, 3}, "C", "other"},
                                            {"d", {3, 0}, "D", "other"}});
  CHECK(index.size() == 4);
  CHECK(index.dim() == 2);
  CHECK(index.id(1) == "b");

  const std::vector<float> origin{0, 0};
  auto hits = index.query(origin, 10, 100);
  REQUIRE(hits.size() == 4);
  CHECK(hits[0].id == "a");
  CHECK(hits[0].distance == 0.0);
  // c and d tie at 3; insertion order decides.
  CHECK(hits[1].id == "c");
  CHECK(hits[2].id == "d");
  CHECK(hits[3].distance == 5.0);
  CHECK(hits[3].text == "B");
  CHECK(hits[3].source == "plonkit");

  CHECK(index.query(origin, 2, 100).size() == 2);
  // The threshold is inclusive.
  CHECK(index.query(origin, 10, 5.0).size() == 4);
  CHECK(index.query(origin, 10, 4.999).size() == 3);
  CHECK(index.query(std::vector<float>{100, 100}, 3, 30).empty());

  CHECK_THROWS_AS(index.query(std::vector<float>{1}, 1, 1), IndexError);
  CHECK_THROWS_AS(index.query(origin, 0, 1), IndexError);
  CHECK_THROWS_AS(index.query(origin, 1, 0), IndexError);
}

TEST_CASE("distance accumulates in double precision") {
  const std::vector<float> a{1e8f, 1.0f};
  const std::vector<float> b{1e8f, 0.0f};
  CHECK(euclidean_distance(a, b) == 1.0);
  CHECK(euclidean_distance(std::vector<float>{3, 0}, std::vector<float>{0, 4}) == 5.0);
}

TEST_CASE("property: query equals brute force including tie order") {
  std::mt19937_64 rng(42);
  std::uniform_int_distribution<std::size_t> n_dist(1, 120);
  std::uniform_int_distribution<std::size_t> dim_dist(1, 8);
  std::uniform_int_distribution<std::size_t> k_dist(1, 12);
  std::uniform_real_distribution<double> dt_dist(0.5, 12.0);
  for (int trial = 0; trial < 200; ++trial) {
    const auto c = random_case(rng, n_dist(rng), dim_dist(rng), 3);
    const auto index = EmbeddingIndex::build(c.entries);
    for (int q = 0; q < 10; ++q) {
      std::uniform_int_distribution<int> coord(-3, 3);
      std::vector<int> query(index.dim());
      for (auto& x : query) x = coord(rng);
      const std::vector<float> fq(query.begin(), query.end());
      const std::size_t k = k_dist(rng);
      const double dt = dt_dist(rng);
      CHECK(positions(index.query(fq, k, dt)) == brute_force(c, query, k, dt));
    }
  }
}

TEST_CASE("property: monotone in k and threshold") {
  std::mt19937_64 rng(8);
  for (int trial = 0; trial < 100; ++trial) {
    const auto c = random_case(rng, 60, 4, 5);
    const auto index = EmbeddingIndex::build(c.entries);
    const std::vector<float> q{0, 1, -1, 2};
    for (std::size_t k = 1; k < 10; ++k) {
      const auto small = positions(index.query(q, k, 6.0));
      const auto large = positions(index.query(q, k + 1, 6.0));
      CHECK(std::equal(small.begin(), small.end(), large.begin()));
    }
    for (double dt = 1.0; dt < 10.0; dt += 0.5) {
      const auto tight = index.query(q, 100, dt);
      const auto loose = index.query(q, 100, dt + 0.5);
      CHECK(tight.size() <= loose.size());
      for (const auto& h : tight) CHECK(h.distance <= dt);
    }
  }
}

TEST_CASE("save and load round trip") {
  testing::TempDir dir;
  std::mt19937_64 rng(1);
  const auto c = random_case(rng, 25, 7, 100);
  auto entries = c.entries;
  entries[3].text = "Ünïcode clue with \"quotes\"\nand newline";
  const auto index = EmbeddingIndex::build(entries);
  const auto path = dir / "idx.bin";
  index.save(path);
  const auto loaded = EmbeddingIndex::load(path);
  REQUIRE(loaded.size() == index.size());
  CHECK(loaded.dim() == index.dim());
  for (std::size_t i = 0; i < index.size(); ++i) {
    CHECK(loaded.id(i) == index.id(i));
    const auto a = loaded.vector(i);
    const auto b = index.vector(i);
    CHECK(std::equal(a.begin(), a.end(), b.begin()));
  }
  const std::vector<float> q(7, 1.0f);
  const auto h1 = index.query(q, 5, 1000);
  const auto h2 = loaded.query(q, 5, 1000);
  REQUIRE(h1.size() == h2.size());
  for (std::size_t i = 0; i < h1.size(); ++i) {
    CHECK(h1[i].id == h2[i].id);
    CHECK(h1[i].text == h2[i].text);
    CHECK(h1[i].distance == h2[i].distance);
  }
  CHECK(loaded.query(loaded.vector(3), 1, 1)[0].text == entries[3].text);
}

TEST_CASE("load rejects corrupted files") {
  testing::TempDir dir;
  const auto index = EmbeddingIndex::build({{"a", {1, 2, 3}, "x", "toptips"}, {"b", {4, 5, 6}, "y", "plonkit"}});
  const auto path = dir / "idx.bin";
  index.save(path);
  const std::string good = testing::read_file(path);

  CHECK_THROWS_AS(EmbeddingIndex::load(dir / "missing.bin"), IndexError);

  auto write_variant = [&](std::string bytes) {
    const auto p = dir / "bad.bin";
    testing::write_file(p, bytes);
    return p;
  };
  std::string bad_magic = good;
  bad_magic[0] = 'X';
  CHECK_THROWS_AS(EmbeddingIndex::load(write_variant(bad_magic)), IndexFormatError);

  std::string bad_version = good;
  bad_version[4] = 9;
  CHECK_THROWS_AS(EmbeddingIndex::load(write_variant(bad_version)), IndexFormatError);

  CHECK_THROWS_AS(EmbeddingIndex::load(write_variant(good.substr(0, good.size() - 7))), IndexFormatError);
  CHECK_THROWS_AS(EmbeddingIndex::load(write_variant(good.substr(0, 10))), IndexFormatError);

  for (std::size_t pos : {std::size_t{20}, good.size() / 2, good.size() - 6}) {
    std::string flipped = good;
    flipped[pos] = static_cast<char>(flipped[pos] ^ 0x5a);
    CHECK_THROWS_AS(EmbeddingIndex::load(write_variant(flipped)), IndexFormatError);
  }
}
