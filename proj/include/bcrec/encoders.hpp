#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "bcrec/dataset.hpp"
#include "bcrec/matrix.hpp"
#include "json.hpp"

namespace bcrec {

// User (psi) and item (phi) embedding matrices sharing dimension d.
struct EmbeddingTable {
  Matrix users;
  Matrix items;

  EmbeddingTable() = default;
  EmbeddingTable(std::size_t num_users, std::size_t num_items, std::size_t dim)
      : users(num_users, dim), items(num_items, dim) {}

  std::size_t dim() const noexcept { return users.cols(); }
  std::size_t num_users() const noexcept { return users.rows(); }
  std::size_t num_items() const noexcept { return items.rows(); }

  // i.i.d. N(0, stddev^2) entries.
  static EmbeddingTable random_normal(std::size_t num_users, std::size_t num_items,
                                      std::size_t dim, double stddev, std::mt19937_64& rng);

  friend bool operator==(const EmbeddingTable&, const EmbeddingTable&) = default;
};

struct EncoderKind {
  enum class Variant : std::uint8_t { kMF = 0, kLightGCN = 1 };
  Variant variant = Variant::kMF;
  std::size_t layers = 0;

  static EncoderKind mf() { return {Variant::kMF, 0}; }
  static EncoderKind lightgcn(std::size_t layers) { return {Variant::kLightGCN, layers}; }
  bool is_lightgcn() const noexcept { return variant == Variant::kLightGCN; }
  std::string name() const { return is_lightgcn() ? "lightgcn" : "mf"; }

  friend bool operator==(const EncoderKind&, const EncoderKind&) = default;
};

// Symmetric-normalized bipartite adjacency over num_users + num_items nodes,
// users first. Entry (u, i) = 1 / sqrt(deg(u) * deg(i)); no self-loops.
class NormalizedAdjacency {
 public:
  NormalizedAdjacency() = default;
  explicit NormalizedAdjacency(const Dataset& train);

  std::size_t num_users() const noexcept { return num_users_; }
  std::size_t num_items() const noexcept { return num_items_; }
  std::size_t num_nodes() const noexcept { return num_users_ + num_items_; }
  const std::vector<std::size_t>& degrees() const noexcept { return degree_; }

  // out = A_hat * in, both (num_nodes x d).
  void multiply(const Matrix& in, Matrix& out) const;

  // Compressed rows, exposed for tests.
  const std::vector<std::size_t>& row_ptr() const noexcept { return row_ptr_; }
  const std::vector<std::size_t>& col() const noexcept { return col_; }
  const std::vector<double>& val() const noexcept { return val_; }

 private:
  std::size_t num_users_ = 0;
  std::size_t num_items_ = 0;
  std::vector<std::size_t> degree_;
  std::vector<std::size_t> row_ptr_;
  std::vector<std::size_t> col_;
  std::vector<double> val_;
};

// Norms below this are treated as degenerate embeddings.
inline constexpr double kNormFloor = 1e-12;

// a.b / (|a| |b|), clamped to [-1, 1]. Throws DataError on a zero-norm input.
double cosine_similarity(std::span<const double> a, std::span<const double> b);
// arccos(cosine_similarity(a, b)) in [0, pi].
double angle(std::span<const double> a, std::span<const double> b);

// Adds weight * d cos(a,b) / da to grad_a and weight * d cos(a,b) / db to
// grad_b; `cos_ab` must be the unclamped cosine of (a, b).
void accumulate_cosine_grad(std::span<const double> a, std::span<const double> b,
                            double cos_ab, double weight, std::span<double> grad_a,
                            std::span<double> grad_b);

// Mean of E^0 .. E^layers with E^{k+1} = A_hat E^k.
EmbeddingTable lightgcn_propagate(const EmbeddingTable& table, const NormalizedAdjacency& adj,
                                  std::size_t layers);

// Cosine between the (propagated, for LightGCN) user and item vectors.
// Propagates on every call; use ScoringModel when scoring many pairs.
double score(const EncoderKind& kind, const EmbeddingTable& table,
             const NormalizedAdjacency* adj, Index user, Index item);

// Final representations for one evaluation pass, with row norms cached.
class ScoringModel {
 public:
  ScoringModel(const EncoderKind& kind, const EmbeddingTable& table,
               const NormalizedAdjacency* adj);

  const EmbeddingTable& representations() const noexcept { return reps_; }
  std::size_t num_users() const noexcept { return reps_.num_users(); }
  std::size_t num_items() const noexcept { return reps_.num_items(); }

  double score(Index user, Index item) const;
  // Cosine of `user` against every item; out.size() == num_items().
  void score_all(Index user, std::span<double> out) const;

 private:
  EmbeddingTable reps_;
  std::vector<double> user_norm_;
  std::vector<double> item_norm_;
};

struct Checkpoint {
  EncoderKind kind;
  EmbeddingTable table;
  nlohmann::json metadata = nlohmann::json::object();

  friend bool operator==(const Checkpoint&, const Checkpoint&) = default;
};

// Binary layout (host byte order): "BCRECKPT", u32 version, u32 variant,
// u64 layers, u64 d, u64 num_users, u64 num_items, user rows, item rows
// (row-major f64), u64 metadata length, metadata JSON text.
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

nlohmann::json checkpoint_to_json(const Checkpoint& ckpt);
Checkpoint checkpoint_from_json(const nlohmann::json& j);

}  // namespace bcrec
