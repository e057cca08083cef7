#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace geoloc {

class IndexError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Raised by EmbeddingIndex::load for unreadable, truncated or corrupted files.
class IndexFormatError : public IndexError {
 public:
  using IndexError::IndexError;
};

struct IndexEntry {
  std::string id;
  std::vector<float> vector;
  std::string text;    // clue text returned on a hit
  std::string source;  // guidebook tag, e.g. "toptips"
};

struct RetrievalHit {
  std::string id;
  double distance = 0.0;
  std::string text;
  std::string source;
  std::size_t position = 0;  // insertion order in the index
};

/// Exact Euclidean nearest-neighbour store. Immutable after build; concurrent
/// queries need no synchronization.
///
/// File layout (all integers little-endian):
///   magic "GLEI" | u32 version | u32 dim | u32 count
///   count*dim f32 vectors, row-major
///   count records of (u32 len + id bytes, u32 len + text bytes, u32 len + source bytes)
///   u32 CRC-32 of every preceding byte
class EmbeddingIndex {
 public:
  static constexpr std::uint32_t kFormatVersion = 1;

  /// Throws IndexError on empty input, mixed dimensions, zero dimension or
  /// duplicate ids.
  static EmbeddingIndex build(std::vector<IndexEntry> entries);

  /// Up to k entries with distance <= max_distance, nearest first; equal
  /// distances keep insertion order.
  std::vector<RetrievalHit> query(std::span<const float> q, std::size_t k, double max_distance) const;

  void save(const std::filesystem::path& path) const;
  static EmbeddingIndex load(const std::filesystem::path& path);

  std::size_t size() const { return ids_.size(); }
  std::size_t dim() const { return dim_; }
  std::span<const float> vector(std::size_t i) const;
  const std::string& id(std::size_t i) const { return ids_[i]; }

 private:
  EmbeddingIndex() = default;

  std::size_t dim_ = 0;
  std::vector<float> matrix_;
  std::vector<std::string> ids_;
  std::vector<std::string> texts_;
  std::vector<std::string> sources_;
};

/// L2 norm of a - b, accumulated in double.
double euclidean_distance(std::span<const float> a, std::span<const float> b);

}  // namespace geoloc
