#include "geoloc/embedindex.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <unordered_set>

#include "geoloc/digest.hpp"

namespace geoloc {
namespace {

constexpr char kMagic[4] = {'G', 'L', 'E', 'I'};

static_assert(std::endian::native == std::endian::little,
              "index serialization assumes a little-endian host");

class Writer {
 public:
  void bytes(const void* data, std::size_t n) {
    const auto* p = static_cast<const std::uint8_t*>(data);
    buffer_.insert(buffer_.end(), p, p + n);
  }
  void u32(std::uint32_t v) { bytes(&v, sizeof v); }
  void str(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    bytes(s.data(), s.size());
  }
  std::vector<std::uint8_t>& buffer() { return buffer_; }

 private:
  std::vector<std::uint8_t> buffer_;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> data) : data_(data) {}

  void bytes(void* out, std::size_t n) {
    if (n > data_.size() - pos_) throw IndexFormatError("index file is truncated");
    std::memcpy(out, data_.data() + pos_, n);
    pos_ += n;
  }
  std::uint32_t u32() {
    std::uint32_t v = 0;
    bytes(&v, sizeof v);
    return v;
  }
  std::string str() {
    const std::uint32_t len = u32();
    std::string s(len, '\0');
    bytes(s.data(), len);
    return s;
  }
  std::size_t remaining() const { return data_.size() - pos_; }

 private:
  std::span<const std::uint8_t> data_;
  std::size_t pos_ = 0;
};

}  // namespace

double euclidean_distance(std::span<const float> a, std::span<const float> b) {
  double sum = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
    sum += d * d;
  }
  return std::sqrt(sum);
}

EmbeddingIndex EmbeddingIndex::build(std::vector<IndexEntry> entries) {
  if (entries.empty()) throw IndexError("cannot build an index from zero entries");
  const std::size_t dim = entries.front().vector.size();
  if (dim == 0) throw IndexError("embedding dimension must be positive");

  EmbeddingIndex index;
  index.dim_ = dim;
  index.matrix_.reserve(dim * entries.size());
  std::unordered_set<std::string> seen;
  for (auto& entry : entries) {
    if (entry.vector.size() != dim) {
      throw IndexError("dimension mismatch for entry '" + entry.id + "': expected " +
                       std::to_string(dim) + ", got " + std::to_string(entry.vector.size()));
    }
    if (!seen.insert(entry.id).second) throw IndexError("duplicate index id '" + entry.id + "'");
    index.matrix_.insert(index.matrix_.end(), entry.vector.begin(), entry.vector.end());
    index.ids_.push_back(std::move(entry.id));
    index.texts_.push_back(std::move(entry.text));
    index.sources_.push_back(std::move(entry.source));
  }
  return index;
}

std::span<const float> EmbeddingIndex::vector(std::size_t i) const {
  return std::span<const float>(matrix_).subspan(i * dim_, dim_);
}

std::vector<RetrievalHit> EmbeddingIndex::query(std::span<const float> q, std::size_t k,
                                                double max_distance) const {
  if (q.size() != dim_) {
    throw IndexError("query dimension " + std::to_string(q.size()) + " does not match index dimension " +
                     std::to_string(dim_));
  }
  if (k == 0) throw IndexError("k must be at least 1");
  if (!(max_distance > 0.0)) throw IndexError("distance threshold must be positive");

  std::vector<std::pair<double, std::size_t>> candidates;
  for (std::size_t i = 0; i < size(); ++i) {
    const double d = euclidean_distance(q, vector(i));
    if (d <= max_distance) candidates.emplace_back(d, i);
  }
  const std::size_t keep = std::min(k, candidates.size());
  // Pairs compare by (distance, position), which gives the insertion-order tie break.
  std::partial_sort(candidates.begin(), candidates.begin() + static_cast<std::ptrdiff_t>(keep),
                    candidates.end());

  std::vector<RetrievalHit> hits;
  hits.reserve(keep);
  for (std::size_t i = 0; i < keep; ++i) {
    const auto [d, pos] = candidates[i];
    hits.push_back({ids_[pos], d, texts_[pos], sources_[pos], pos});
  }
  return hits;
}

void EmbeddingIndex::save(const std::filesystem::path& path) const {
  Writer w;
  w.bytes(kMagic, sizeof kMagic);
  w.u32(kFormatVersion);
  w.u32(static_cast<std::uint32_t>(dim_));
  w.u32(static_cast<std::uint32_t>(size()));
  w.bytes(matrix_.data(), matrix_.size() * sizeof(float));
  for (std::size_t i = 0; i < size(); ++i) {
    w.str(ids_[i]);
    w.str(texts_[i]);
    w.str(sources_[i]);
  }
  w.u32(crc32(w.buffer()));

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IndexError("cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(w.buffer().data()),
            static_cast<std::streamsize>(w.buffer().size()));
  if (!out) throw IndexError("failed writing " + path.string());
}

EmbeddingIndex EmbeddingIndex::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IndexError("cannot open index file " + path.string());
  const std::vector<std::uint8_t> data((std::istreambuf_iterator<char>(in)),
                                       std::istreambuf_iterator<char>());
  if (data.size() < sizeof kMagic || std::memcmp(data.data(), kMagic, sizeof kMagic) != 0) {
    throw IndexFormatError(path.string() + " is not an embedding index (bad magic)");
  }
  if (data.size() < sizeof kMagic + 4 * sizeof(std::uint32_t)) {
    throw IndexFormatError("index file is truncated");
  }

  const std::span<const std::uint8_t> body(data.data(), data.size() - sizeof(std::uint32_t));
  Reader r(body);
  char magic[4];
  r.bytes(magic, sizeof magic);
  const std::uint32_t version = r.u32();
  if (version != kFormatVersion) {
    throw IndexFormatError("unsupported index format version " + std::to_string(version));
  }
  const std::size_t dim = r.u32();
  const std::size_t count = r.u32();
  if (dim == 0 || count == 0) throw IndexFormatError("index header declares an empty index");
  if (dim * count * sizeof(float) > r.remaining()) throw IndexFormatError("index file is truncated");

  std::uint32_t stored_crc = 0;
  std::memcpy(&stored_crc, data.data() + body.size(), sizeof stored_crc);
  if (stored_crc != crc32(body)) throw IndexFormatError("index checksum mismatch");

  EmbeddingIndex index;
  index.dim_ = dim;
  index.matrix_.resize(dim * count);
  r.bytes(index.matrix_.data(), index.matrix_.size() * sizeof(float));
  for (std::size_t i = 0; i < count; ++i) {
    index.ids_.push_back(r.str());
    index.texts_.push_back(r.str());
    index.sources_.push_back(r.str());
  }
  if (r.remaining() != 0) throw IndexFormatError("trailing bytes after payload table");
  return index;
}

}  // namespace geoloc
