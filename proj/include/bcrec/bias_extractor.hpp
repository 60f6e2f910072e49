#pragma once

#include <filesystem>
#include <random>
#include <span>
#include <vector>

#include "bcrec/dataset.hpp"
#include "bcrec/losses.hpp"
#include "bcrec/matrix.hpp"

namespace bcrec {

// Popularity-only embeddings: one vector per distinct user interaction count
// (psi_b) and one per distinct item interaction count (phi_b) seen in
// training. Their cosine is the interaction's bias degree cos(xi).
class PopularityEmbeddings {
 public:
  PopularityEmbeddings() = default;
  PopularityEmbeddings(std::vector<Count> user_keys, std::vector<Count> item_keys,
                       std::size_t dim);

  // Keys are the distinct nonzero counts in `train`; vectors ~ N(0, stddev^2).
  static PopularityEmbeddings for_dataset(const Dataset& train, std::size_t dim, double stddev,
                                          std::mt19937_64& rng);

  std::size_t dim() const noexcept { return user_vecs_.cols(); }
  const std::vector<Count>& user_keys() const noexcept { return user_keys_; }
  const std::vector<Count>& item_keys() const noexcept { return item_keys_; }
  Matrix& user_vecs() noexcept { return user_vecs_; }
  Matrix& item_vecs() noexcept { return item_vecs_; }
  const Matrix& user_vecs() const noexcept { return user_vecs_; }
  const Matrix& item_vecs() const noexcept { return item_vecs_; }

  // Row for a count: exact key if present, otherwise the nearest key with
  // ties going to the smaller one.
  Index user_row(Count p_u) const { return nearest(user_keys_, p_u); }
  Index item_row(Count p_i) const { return nearest(item_keys_, p_i); }

  friend bool operator==(const PopularityEmbeddings&, const PopularityEmbeddings&) = default;

 private:
  static Index nearest(const std::vector<Count>& keys, Count p);

  std::vector<Count> user_keys_;
  std::vector<Count> item_keys_;
  Matrix user_vecs_;
  Matrix item_vecs_;
};

// cos(xi_ui) = s(psi_b(p_u), phi_b(p_i)).
double bias_score(const PopularityEmbeddings& pe, Count p_u, Count p_i);
// xi_ui in [0, pi].
double bias_angle(const PopularityEmbeddings& pe, Count p_u, Count p_i);

// Softmax loss on popularity-only scores with temperature tau2. Interactions
// and negatives are dataset ids; counts come from `user_pop`/`item_pop`.
// Gradients are keyed by popularity-table rows.
LossResult extractor_loss(const PopularityEmbeddings& pe, const LossBatch& batch,
                          std::span<const Count> user_pop, std::span<const Count> item_pop,
                          double tau2);

// Bias-aware angular margin min(strength * xi, pi - theta).
double margin(double xi, double theta, double strength = 1.0);

// Binary layout: "BCRECEXT", u32 version, u64 d, u64 #user keys, keys (u32),
// u64 #item keys, keys (u32), user rows, item rows (row-major f64).
void save_extractor(const std::filesystem::path& path, const PopularityEmbeddings& pe);
PopularityEmbeddings load_extractor(const std::filesystem::path& path);

}  // namespace bcrec
