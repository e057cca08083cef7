#pragma once

#include <array>
#include <cstddef>
#include <limits>
#include <optional>
#include <span>
#include <string_view>

namespace geoloc {

inline constexpr double kEarthRadiusKm = 6371.0;
inline constexpr double kScoreScaleKm = 1492.7;
inline constexpr double kMaxScore = 5000.0;

/// Latitude/longitude in degrees. Latitude must lie in [-90, 90]; longitude
/// is wrapped into [-180, 180] on construction.
class GeoPoint {
 public:
  GeoPoint() = default;
  GeoPoint(double lat, double lon);

  double lat() const { return lat_; }
  double lon() const { return lon_; }

  friend bool operator==(const GeoPoint&, const GeoPoint&) = default;

 private:
  double lat_ = 0.0;
  double lon_ = 0.0;
};

/// True when lat/lon lie inside the closed coordinate ranges without wrapping.
bool in_coordinate_bounds(double lat, double lon);

/// Great-circle distance in km on a sphere of radius kEarthRadiusKm.
/// `truth` and `guess` are interchangeable; the result is symmetric.
double haversine_km(const GeoPoint& truth, const GeoPoint& guess);

/// 5000 * exp(-d / 1492.7). Throws std::invalid_argument for negative or NaN
/// distances. An infinite distance scores 0.
double geoguessr_score(double distance_km);

enum class AccuracyLevel { Street, City, Region, Country, Continent };

inline constexpr std::size_t kLevelCount = 5;
inline constexpr std::array<AccuracyLevel, kLevelCount> kAllLevels = {
    AccuracyLevel::Street, AccuracyLevel::City, AccuracyLevel::Region,
    AccuracyLevel::Country, AccuracyLevel::Continent};

double threshold_km(AccuracyLevel level);
std::string_view level_name(AccuracyLevel level);

/// Set of accuracy levels hit by one guess.
class LevelSet {
 public:
  bool contains(AccuracyLevel level) const {
    return (bits_ >> static_cast<unsigned>(level)) & 1u;
  }
  void insert(AccuracyLevel level) { bits_ |= 1u << static_cast<unsigned>(level); }
  std::size_t size() const;
  bool empty() const { return bits_ == 0; }

  friend bool operator==(const LevelSet&, const LevelSet&) = default;

 private:
  unsigned bits_ = 0;
};

/// Every level whose threshold is >= d (a guess exactly on a threshold counts).
/// Throws std::invalid_argument for negative or NaN distances.
LevelSet level_hits(double distance_km);

/// Distance and score of one evaluated guess. Failed guesses carry an
/// infinite distance and a zero score.
struct Outcome {
  double distance_km = std::numeric_limits<double>::infinity();
  double score = 0.0;

  bool failed() const { return distance_km == std::numeric_limits<double>::infinity(); }

  static Outcome from_distance(double distance_km);
  static Outcome failure() { return {}; }
};

struct EvaluationReport {
  std::array<double, kLevelCount> accuracy_pct{};
  // Absent when every outcome failed.
  std::optional<double> mean_distance_km;
  double mean_score = 0.0;
  std::size_t n = 0;
  std::size_t n_failed = 0;

  double accuracy(AccuracyLevel level) const {
    return accuracy_pct[static_cast<std::size_t>(level)];
  }
};

/// Percent of outcomes per level, mean distance over non-failed outcomes and
/// mean score over all outcomes. Throws std::invalid_argument when empty.
EvaluationReport aggregate(std::span<const Outcome> outcomes);

}  // namespace geoloc
