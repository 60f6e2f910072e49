#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "bcrec/dataset.hpp"
#include "json.hpp"

namespace bcrec {

// Long-tail interaction generator with a known unbiased preference model.
//
// Users and items get i.i.d. Gaussian latent factors; the true preference of
// user u for item i is exp(sharpness * cos(x_u, y_i)) (constant when
// latent_dim == 0). Item base popularity follows Zipf(zipf_exponent) over a
// random rank order. Observed interactions are drawn per user without
// replacement with probability proportional to preference * popularity^bias.
// The ground-truth set is drawn from preference alone, excluding observed
// pairs.
struct SynthConfig {
  std::size_t num_users = 200;
  std::size_t num_items = 300;
  std::size_t latent_dim = 4;
  double zipf_exponent = 1.2;
  double bias_strength = 1.0;
  double preference_sharpness = 8.0;
  double mean_interactions = 20.0;
  std::size_t min_interactions = 5;
  // User activity weights ~ 1 / rank^user_activity_exponent.
  double user_activity_exponent = 0.5;
  // 0 draws as many ground-truth items as the user has observed ones, which
  // keeps the two item distributions on equal sample sizes.
  std::size_t ground_truth_per_user = 0;
  std::uint64_t seed = 1;

  void validate() const;
  nlohmann::json to_json() const;
  // Unknown keys are rejected; missing keys keep the values in `base`.
  static SynthConfig from_json(const nlohmann::json& j, SynthConfig base);
};

struct SynthData {
  // Observed (popularity-exposed) log with timestamps; ids "u<k>", "i<k>".
  Dataset observed;
  // Unbiased held-out preferences, same index space as `observed`.
  Dataset ground_truth;
  std::vector<double> base_popularity;
};

SynthData synthesize(const SynthConfig& config);

// Writes interactions.tsv, ground_truth.tsv and synth.json under `dir`.
void write_synth(const std::filesystem::path& dir, const SynthConfig& config,
                 const SynthData& data);

}  // namespace bcrec
