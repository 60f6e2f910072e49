#include "bcrec/synth.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>

#include "bcrec/errors.hpp"

namespace bcrec {

void SynthConfig::validate() const {
  if (num_users < 2 || num_items < 2) throw ConfigError("synth: need at least 2 users and 2 items");
  if (!(zipf_exponent >= 0.0) || !std::isfinite(zipf_exponent)) {
    throw ConfigError("synth: zipf exponent must be >= 0");
  }
  if (!(bias_strength >= 0.0) || !std::isfinite(bias_strength)) {
    throw ConfigError("synth: bias strength must be >= 0");
  }
  if (!(preference_sharpness >= 0.0)) throw ConfigError("synth: preference sharpness must be >= 0");
  if (!(mean_interactions >= 1.0)) throw ConfigError("synth: mean interactions must be >= 1");
  if (!(user_activity_exponent >= 0.0)) throw ConfigError("synth: activity exponent must be >= 0");
  if (min_interactions < 1 || min_interactions >= num_items) {
    throw ConfigError("synth: min interactions must lie in [1, num_items)");
  }
}

nlohmann::json SynthConfig::to_json() const {
  return {{"num_users", num_users},
          {"num_items", num_items},
          {"latent_dim", latent_dim},
          {"zipf_exponent", zipf_exponent},
          {"bias_strength", bias_strength},
          {"preference_sharpness", preference_sharpness},
          {"mean_interactions", mean_interactions},
          {"min_interactions", min_interactions},
          {"user_activity_exponent", user_activity_exponent},
          {"ground_truth_per_user", ground_truth_per_user},
          {"seed", seed}};
}

SynthConfig SynthConfig::from_json(const nlohmann::json& j, SynthConfig c) {
  if (!j.is_object()) throw ConfigError("synth config must be a JSON object");
  try {
    for (const auto& [key, v] : j.items()) {
      if (key == "num_users") c.num_users = v.get<std::size_t>();
      else if (key == "num_items") c.num_items = v.get<std::size_t>();
      else if (key == "latent_dim") c.latent_dim = v.get<std::size_t>();
      else if (key == "zipf_exponent") c.zipf_exponent = v.get<double>();
      else if (key == "bias_strength") c.bias_strength = v.get<double>();
      else if (key == "preference_sharpness") c.preference_sharpness = v.get<double>();
      else if (key == "mean_interactions") c.mean_interactions = v.get<double>();
      else if (key == "min_interactions") c.min_interactions = v.get<std::size_t>();
      else if (key == "user_activity_exponent") c.user_activity_exponent = v.get<double>();
      else if (key == "ground_truth_per_user") c.ground_truth_per_user = v.get<std::size_t>();
      else if (key == "seed") c.seed = v.get<std::uint64_t>();
      else throw ConfigError("unknown synth key '" + key + "'");
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("bad synth value: ") + e.what());
  }
  return c;
}

namespace {

// Weighted sampling without replacement (Efraimidis-Spirakis): keep the n
// largest log(U)/w keys.
std::vector<Index> weighted_sample(std::span<const double> weights, std::size_t n,
                                   std::mt19937_64& rng, const std::vector<char>* banned) {
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::vector<std::pair<double, Index>> keys;
  keys.reserve(weights.size());
  for (Index i = 0; i < weights.size(); ++i) {
    const double r = unif(rng);
    if ((banned && (*banned)[i]) || !(weights[i] > 0.0)) continue;
    keys.emplace_back(std::log(std::max(r, 1e-300)) / weights[i], i);
  }
  n = std::min(n, keys.size());
  std::partial_sort(keys.begin(), keys.begin() + std::ptrdiff_t(n), keys.end(),
                    [](const auto& a, const auto& b) {
                      return a.first > b.first || (a.first == b.first && a.second < b.second);
                    });
  std::vector<Index> out;
  for (std::size_t k = 0; k < n; ++k) out.push_back(keys[k].second);
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace

SynthData synthesize(const SynthConfig& cfg) {
  cfg.validate();
  std::mt19937_64 rng(cfg.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  const std::size_t nu = cfg.num_users, ni = cfg.num_items, d = cfg.latent_dim;

  auto unit_rows = [&](std::size_t rows) {
    std::vector<double> m(rows * d);
    for (double& x : m) x = normal(rng);
    for (std::size_t r = 0; r < rows && d > 0; ++r) {
      double n = 0.0;
      for (std::size_t k = 0; k < d; ++k) n += m[r * d + k] * m[r * d + k];
      n = std::sqrt(std::max(n, 1e-300));
      for (std::size_t k = 0; k < d; ++k) m[r * d + k] /= n;
    }
    return m;
  };
  const auto user_f = unit_rows(nu);
  const auto item_f = unit_rows(ni);

  std::vector<std::size_t> rank(ni);
  std::iota(rank.begin(), rank.end(), 1);
  std::shuffle(rank.begin(), rank.end(), rng);
  std::vector<double> pop(ni);
  for (std::size_t i = 0; i < ni; ++i) pop[i] = std::pow(double(rank[i]), -cfg.zipf_exponent);

  std::vector<std::size_t> user_rank(nu);
  std::iota(user_rank.begin(), user_rank.end(), 1);
  std::shuffle(user_rank.begin(), user_rank.end(), rng);
  std::vector<double> activity(nu);
  for (std::size_t u = 0; u < nu; ++u) {
    activity[u] = std::pow(double(user_rank[u]), -cfg.user_activity_exponent);
  }
  const double mean_activity = std::accumulate(activity.begin(), activity.end(), 0.0) / double(nu);
  const std::size_t cap = std::max<std::size_t>(cfg.min_interactions, ni / 2);

  std::vector<Interaction> observed, truth;
  std::vector<double> pref(ni), exposure(ni);
  std::uniform_int_distribution<std::int64_t> clock(0, 1'000'000'000);
  for (std::size_t u = 0; u < nu; ++u) {
    for (std::size_t i = 0; i < ni; ++i) {
      double c = 0.0;
      for (std::size_t k = 0; k < d; ++k) c += user_f[u * d + k] * item_f[i * d + k];
      pref[i] = d > 0 ? std::exp(cfg.preference_sharpness * c) : 1.0;
      exposure[i] = pref[i] * std::pow(pop[i], cfg.bias_strength);
    }
    const auto n_obs = std::clamp<std::size_t>(
        std::size_t(std::llround(cfg.mean_interactions * activity[u] / mean_activity)),
        cfg.min_interactions, cap);
    auto seen = weighted_sample(exposure, n_obs, rng, nullptr);
    std::vector<char> banned(ni, 0);
    for (Index i : seen) {
      banned[i] = 1;
      observed.push_back({Index(u), i, clock(rng)});
    }
    const std::size_t n_truth = cfg.ground_truth_per_user ? cfg.ground_truth_per_user : n_obs;
    for (Index i : weighted_sample(pref, n_truth, rng, &banned)) {
      truth.push_back({Index(u), i, std::nullopt});
    }
  }
  SynthData out;
  out.observed = Dataset(nu, ni, std::move(observed));
  out.ground_truth = out.observed.with_interactions(std::move(truth));
  out.base_popularity = std::move(pop);
  return out;
}

void write_synth(const std::filesystem::path& dir, const SynthConfig& config,
                 const SynthData& data) {
  std::filesystem::create_directories(dir);
  save_interactions(dir / "interactions.tsv", data.observed);
  save_interactions(dir / "ground_truth.tsv", data.ground_truth);
  nlohmann::json manifest = {
      {"schema_version", 1},
      {"config", config.to_json()},
      {"observed_interactions", data.observed.size()},
      {"ground_truth_interactions", data.ground_truth.size()},
      {"kl_observed_nats", kl_divergence_uniform(data.observed.item_pop())},
      {"kl_ground_truth_nats", kl_divergence_uniform(data.ground_truth.item_pop())},
      {"files", {"interactions.tsv", "ground_truth.tsv"}}};
  std::ofstream(dir / "synth.json") << manifest.dump(2) << '\n';
}

}  // namespace bcrec
