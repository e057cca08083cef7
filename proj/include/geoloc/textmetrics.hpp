#pragma once

#include <algorithm>
#include <bit>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace geoloc {

struct RougeScore {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;

  // F1 with beta = 1; zero when precision + recall is zero.
  static RougeScore from(double precision, double recall);
};

/// Lowercases ASCII letters and splits on runs of characters that are not
/// ASCII alphanumerics. Bytes >= 0x80 are kept as word characters so UTF-8
/// words survive intact.
std::vector<std::string> tokenize(std::string_view text);

/// Clipped n-gram overlap. Throws std::invalid_argument when n < 1.
RougeScore rouge_n(std::span<const std::string> candidate, std::span<const std::string> reference,
                   int n);

/// LCS-based ROUGE-L with beta = 1.
RougeScore rouge_l(std::span<const std::string> candidate, std::span<const std::string> reference);

/// Length of the longest common subsequence. When b has at most 64 elements
/// this runs the bit-parallel recurrence of Hyyrö (2004) in O(|a|·|b|)
/// comparisons and O(|a|) word operations; longer inputs use the row DP.
template <typename T>
std::size_t lcs_length(std::span<const T> a, std::span<const T> b) {
  if (a.empty() || b.empty()) return 0;
  if (b.size() <= 64) {
    const std::uint64_t all = b.size() == 64 ? ~std::uint64_t{0} : (std::uint64_t{1} << b.size()) - 1;
    std::uint64_t v = all;
    for (const T& x : a) {
      std::uint64_t match = 0;
      for (std::size_t j = 0; j < b.size(); ++j) match |= std::uint64_t{x == b[j]} << j;
      const std::uint64_t u = v & match;
      v = (v + u) | (v - u);
    }
    return static_cast<std::size_t>(std::popcount(~v & all));
  }
  std::vector<std::size_t> row(b.size() + 1, 0);
  for (const T& x : a) {
    std::size_t diagonal = 0;
    for (std::size_t j = 1; j <= b.size(); ++j) {
      const std::size_t above = row[j];
      row[j] = (x == b[j - 1]) ? diagonal + 1 : std::max(row[j], row[j - 1]);
      diagonal = above;
    }
  }
  return row.back();
}

struct ReasoningScores {
  RougeScore rouge1;
  RougeScore rouge2;
  RougeScore rouge_l;
};

/// Tokenizes both texts and computes ROUGE-1, ROUGE-2 and ROUGE-L.
ReasoningScores score_reasoning(std::string_view candidate, std::string_view reference);

}  // namespace geoloc
