#pragma once

#include <array>
#include <cstdint>
#include <numbers>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "bcrec/bias_extractor.hpp"
#include "bcrec/dataset.hpp"
#include "bcrec/encoders.hpp"
#include "json.hpp"

namespace bcrec {

inline constexpr double kDefaultAngleBin = std::numbers::pi / 30.0;

// Angles of one user's positive and negative items (radians, [0, pi]).
struct AngleReport {
  Index user = 0;
  std::optional<double> mean_positive;
  std::optional<double> mean_negative;
  double bin_width = kDefaultAngleBin;
  std::vector<std::size_t> positive_hist;
  std::vector<std::size_t> negative_hist;
  std::size_t num_positive = 0;
  std::size_t num_negative = 0;

  nlohmann::json to_json() const;
  // Header "user,bin,lo,hi,positive,negative" plus one row per bin.
  std::string histogram_csv(bool header = true) const;
};

AngleReport angle_report(const ScoringModel& model, Index user, std::span<const Index> positives,
                         std::span<const Index> negatives, double bin_width = kDefaultAngleBin);

// Negatives that complete the user's positives to `total` items, drawn
// uniformly without replacement from the non-positives.
std::vector<Index> angle_negatives(const Dataset& train, Index user, std::size_t total,
                                   std::mt19937_64& rng);

struct DispersionSpec {
  std::size_t negatives_per_user = 128;
  std::uint64_t seed = 7;
  // Use every non-positive item as N_u instead of sampling.
  bool full_enumeration = false;
};

// Compactness / dispersion sums on L2-normalized copies of the embeddings:
//   compactness = sum_u |v_u - c_u|^2 + sum_i |v_i - c_i|^2
//   dispersion  = -sum_u sum_{j in N_u} |v_u - v_j|^2
// with c_u, c_i the raw means of the normalized neighbor vectors.
struct GeometryReport {
  double compactness_sum = 0.0;
  double compactness_users = 0.0;
  double compactness_items = 0.0;
  double dispersion_sum = 0.0;
  std::size_t dispersion_pairs = 0;
  std::size_t excluded_users = 0;
  std::size_t excluded_items = 0;
  DispersionSpec spec;

  // -dispersion_sum / dispersion_pairs.
  double mean_negative_sq_distance() const;
  nlohmann::json to_json() const;
};

GeometryReport geometry_report(const EmbeddingTable& table, const Dataset& train,
                               const DispersionSpec& spec = {});

// Pearson correlation; nullopt when either series is constant or n < 2.
std::optional<double> pearson(std::span<const double> x, std::span<const double> y);

struct ScatterPoint {
  Index id = 0;
  Count popularity = 0;
  double mean_cos = 0.0;
};

struct BiasCorrelation {
  std::optional<double> pearson_user;
  std::optional<double> pearson_item;
  bool log_popularity = false;
  std::vector<ScatterPoint> user_points;
  std::vector<ScatterPoint> item_points;

  nlohmann::json to_json() const;
  std::string scatter_csv() const;
};

// Mean cos(xi) per user / per item over training interactions, correlated
// with popularity (natural log of it when `log_popularity`).
BiasCorrelation bias_correlation(const PopularityEmbeddings& pe, const Dataset& train,
                                 bool log_popularity = false);

struct AngleCell {
  std::optional<double> mean;
  std::optional<double> stddev;  // population standard deviation
  std::size_t count = 0;
};

// Rows: user subgroup by p_u thirds; columns: item subgroup by p_i thirds.
struct SubgroupAngleMatrix {
  std::array<std::array<AngleCell, 3>, 3> cells{};

  const AngleCell& at(Subgroup user_group, Subgroup item_group) const {
    return cells[static_cast<std::size_t>(user_group)][static_cast<std::size_t>(item_group)];
  }
  nlohmann::json to_json() const;
  std::string csv() const;
};

SubgroupAngleMatrix subgroup_angle_matrix(const PopularityEmbeddings& pe, const Dataset& train);

}  // namespace bcrec
