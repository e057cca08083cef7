#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

namespace geoloc::testing {

/// Every list of length 0..max_len over {0, 1, 2}, shortest first.
class TernaryLists {
 public:
  explicit TernaryLists(std::size_t max_len) {
    for (std::size_t len = 0; len <= max_len; ++len) {
      std::size_t count = 1;
      for (std::size_t i = 0; i < len; ++i) count *= 3;
      offset_.push_back(lists_.size());
      for (std::size_t value = 0; value < count; ++value) {
        std::vector<std::uint8_t> list(len);
        std::size_t v = value;
        for (std::size_t i = len; i-- > 0;) {
          list[i] = static_cast<std::uint8_t>(v % 3);
          v /= 3;
        }
        lists_.push_back(std::move(list));
      }
    }
    deletions_.resize(lists_.size());
    for (std::size_t i = 0; i < lists_.size(); ++i) {
      for (std::size_t drop = 0; drop < lists_[i].size(); ++drop) {
        std::vector<std::uint8_t> shorter = lists_[i];
        shorter.erase(shorter.begin() + static_cast<std::ptrdiff_t>(drop));
        deletions_[i].push_back(index_of(shorter));
      }
    }
  }

  std::size_t size() const { return lists_.size(); }
  const std::vector<std::uint8_t>& operator[](std::size_t i) const { return lists_[i]; }

  std::size_t index_of(std::span<const std::uint8_t> list) const {
    std::size_t value = 0;
    for (auto s : list) value = value * 3 + s;
    return offset_[list.size()] + value;
  }

  /// LCS length of lists_[a] against every list, without dynamic
  /// programming: b's answer is |b| when b is a subsequence of a, otherwise
  /// the best answer among b with one element removed.
  std::vector<std::uint8_t> lcs_against_all(std::size_t a) const {
    const auto& source = lists_[a];
    std::vector<std::uint8_t> is_sub(lists_.size(), 0);
    const std::size_t n = source.size();
    std::vector<std::uint8_t> picked;
    for (std::size_t mask = 0; mask < (std::size_t{1} << n); ++mask) {
      picked.clear();
      for (std::size_t i = 0; i < n; ++i) {
        if (mask >> i & 1) picked.push_back(source[i]);
      }
      is_sub[index_of(picked)] = 1;
    }
    std::vector<std::uint8_t> best(lists_.size(), 0);
    for (std::size_t b = 0; b < lists_.size(); ++b) {
      if (is_sub[b]) {
        best[b] = static_cast<std::uint8_t>(lists_[b].size());
        continue;
      }
      std::uint8_t m = 0;
      for (std::size_t d : deletions_[b]) m = std::max(m, best[d]);
      best[b] = m;
    }
    return best;
  }

 private:
  std::vector<std::vector<std::uint8_t>> lists_;
  std::vector<std::size_t> offset_;
  std::vector<std::vector<std::size_t>> deletions_;
};

}  // namespace geoloc::testing
