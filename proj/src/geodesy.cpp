#include "geoloc/geodesy.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

namespace geoloc {
namespace {

constexpr std::array<double, kLevelCount> kThresholdsKm = {1.0, 25.0, 200.0, 750.0, 2500.0};
constexpr std::array<std::string_view, kLevelCount> kLevelNames = {"Street", "City", "Region",
                                                                   "Country", "Continent"};

double to_radians(double degrees) { return degrees * std::numbers::pi / 180.0; }

double wrap_longitude(double lon) {
  if (lon >= -180.0 && lon <= 180.0) return lon;
  double wrapped = std::fmod(lon + 180.0, 360.0);
  if (wrapped < 0) wrapped += 360.0;
  return wrapped - 180.0;
}

void require_distance(double d) {
  if (std::isnan(d) || d < 0.0) {
    throw std::invalid_argument("distance must be a non-negative number, got " +
                                std::to_string(d));
  }
}

}  // namespace

GeoPoint::GeoPoint(double lat, double lon) {
  if (!std::isfinite(lat) || !std::isfinite(lon)) {
    throw std::invalid_argument("coordinates must be finite");
  }
  if (lat < -90.0 || lat > 90.0) {
    throw std::invalid_argument("latitude out of range: " + std::to_string(lat));
  }
  lat_ = lat;
  lon_ = wrap_longitude(lon);
}

bool in_coordinate_bounds(double lat, double lon) {
  return std::isfinite(lat) && std::isfinite(lon) && lat >= -90.0 && lat <= 90.0 &&
         lon >= -180.0 && lon <= 180.0;
}

double haversine_km(const GeoPoint& truth, const GeoPoint& guess) {
  const double lat_truth = to_radians(truth.lat());
  const double lat_guess = to_radians(guess.lat());
  const double half_dlat = to_radians(guess.lat() - truth.lat()) / 2.0;
  const double half_dlon = to_radians(guess.lon() - truth.lon()) / 2.0;

  const double s_lat = std::sin(half_dlat);
  const double s_lon = std::sin(half_dlon);
  const double h = s_lat * s_lat + std::cos(lat_truth) * std::cos(lat_guess) * s_lon * s_lon;
  // h can drift slightly above 1 near antipodes.
  const double delta = std::clamp(std::sqrt(std::max(h, 0.0)), 0.0, 1.0);
  return 2.0 * kEarthRadiusKm * std::asin(delta);
}

double geoguessr_score(double distance_km) {
  require_distance(distance_km);
  return kMaxScore * std::exp(-distance_km / kScoreScaleKm);
}

double threshold_km(AccuracyLevel level) { return kThresholdsKm[static_cast<std::size_t>(level)]; }

std::string_view level_name(AccuracyLevel level) {
  return kLevelNames[static_cast<std::size_t>(level)];
}

std::size_t LevelSet::size() const { return static_cast<std::size_t>(std::popcount(bits_)); }

LevelSet level_hits(double distance_km) {
  require_distance(distance_km);
  LevelSet hits;
  for (AccuracyLevel level : kAllLevels) {
    if (distance_km <= threshold_km(level)) hits.insert(level);
  }
  return hits;
}

Outcome Outcome::from_distance(double distance_km) {
  return Outcome{distance_km, geoguessr_score(distance_km)};
}

EvaluationReport aggregate(std::span<const Outcome> outcomes) {
  if (outcomes.empty()) throw std::invalid_argument("cannot aggregate an empty outcome list");

  EvaluationReport report;
  report.n = outcomes.size();
  std::array<std::size_t, kLevelCount> hits{};
  double distance_sum = 0.0;
  double score_sum = 0.0;

  for (const Outcome& outcome : outcomes) {
    if (outcome.failed()) {
      ++report.n_failed;
      continue;
    }
    distance_sum += outcome.distance_km;
    score_sum += outcome.score;
    const LevelSet levels = level_hits(outcome.distance_km);
    for (AccuracyLevel level : kAllLevels) {
      if (levels.contains(level)) ++hits[static_cast<std::size_t>(level)];
    }
  }

  const auto n = static_cast<double>(report.n);
  for (std::size_t i = 0; i < kLevelCount; ++i) {
    report.accuracy_pct[i] = 100.0 * static_cast<double>(hits[i]) / n;
  }
  if (report.n_failed < report.n) {
    report.mean_distance_km = distance_sum / static_cast<double>(report.n - report.n_failed);
  }
  report.mean_score = score_sum / n;
  return report;
}

}  // namespace geoloc
