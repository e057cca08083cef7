#include "geoloc/textmetrics.hpp"

#include <algorithm>
#include <array>
#include <cstdint>
#include <map>
#include <stdexcept>

namespace geoloc {
namespace {

bool is_word_byte(unsigned char c) {
  return (c >= '0' && c <= '9') || (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || c >= 0x80;
}

using NgramCounts = std::map<std::vector<std::string_view>, std::size_t>;

NgramCounts count_ngrams(std::span<const std::string> tokens, std::size_t n) {
  NgramCounts counts;
  if (tokens.size() < n) return counts;
  for (std::size_t i = 0; i + n <= tokens.size(); ++i) {
    std::vector<std::string_view> gram(tokens.begin() + static_cast<std::ptrdiff_t>(i),
                                       tokens.begin() + static_cast<std::ptrdiff_t>(i + n));
    ++counts[std::move(gram)];
  }
  return counts;
}

constexpr std::size_t kPackedTokenBytes = 7;
constexpr std::size_t kPackedListMax = 64;

// Length and bytes of a token of at most kPackedTokenBytes bytes in one word.
std::uint64_t pack_token(const std::string& s) {
  std::uint64_t packed = 0;
  for (char c : s) packed = (packed << 8) | static_cast<unsigned char>(c);
  return (packed << 8) | s.size();
}

// Packs every token into `out` when all of them are short enough.
bool pack_tokens(std::span<const std::string> tokens, std::array<std::uint64_t, kPackedListMax>& out) {
  if (tokens.size() > kPackedListMax) return false;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (tokens[i].size() > kPackedTokenBytes) return false;
    out[i] = pack_token(tokens[i]);
  }
  return true;
}

double ratio(std::size_t num, std::size_t den) {
  return den == 0 ? 0.0 : static_cast<double>(num) / static_cast<double>(den);
}

}  // namespace

RougeScore RougeScore::from(double precision, double recall) {
  const double sum = precision + recall;
  return {precision, recall, sum > 0.0 ? 2.0 * precision * recall / sum : 0.0};
}

std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> tokens;
  std::string current;
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (is_word_byte(c)) {
      current.push_back(c >= 'A' && c <= 'Z' ? static_cast<char>(c - 'A' + 'a') : ch);
    } else if (!current.empty()) {
      tokens.push_back(std::move(current));
      current.clear();
    }
  }
  if (!current.empty()) tokens.push_back(std::move(current));
  return tokens;
}

RougeScore rouge_n(std::span<const std::string> candidate, std::span<const std::string> reference,
                   int n) {
  if (n < 1) throw std::invalid_argument("rouge_n requires n >= 1");
  const auto order = static_cast<std::size_t>(n);
  const NgramCounts cand = count_ngrams(candidate, order);
  const NgramCounts ref = count_ngrams(reference, order);

  std::size_t overlap = 0;
  for (const auto& [gram, count] : cand) {
    if (auto it = ref.find(gram); it != ref.end()) overlap += std::min(count, it->second);
  }
  const std::size_t cand_total = candidate.size() >= order ? candidate.size() - order + 1 : 0;
  const std::size_t ref_total = reference.size() >= order ? reference.size() - order + 1 : 0;
  return RougeScore::from(ratio(overlap, cand_total), ratio(overlap, ref_total));
}

RougeScore rouge_l(std::span<const std::string> candidate, std::span<const std::string> reference) {
  std::array<std::uint64_t, kPackedListMax> cand_packed, ref_packed;
  std::size_t lcs = 0;
  if (pack_tokens(candidate, cand_packed) && pack_tokens(reference, ref_packed)) {
    lcs = lcs_length(std::span<const std::uint64_t>(cand_packed.data(), candidate.size()),
                     std::span<const std::uint64_t>(ref_packed.data(), reference.size()));
  } else {
    lcs = lcs_length(candidate, reference);
  }
  return RougeScore::from(ratio(lcs, candidate.size()), ratio(lcs, reference.size()));
}

ReasoningScores score_reasoning(std::string_view candidate, std::string_view reference) {
  const auto cand = tokenize(candidate);
  const auto ref = tokenize(reference);
  return {rouge_n(cand, ref, 1), rouge_n(cand, ref, 2), rouge_l(cand, ref)};
}

}  // namespace geoloc
