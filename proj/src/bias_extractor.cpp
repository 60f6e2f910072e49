#include "bcrec/bias_extractor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>

#include "bcrec/encoders.hpp"
#include "bcrec/errors.hpp"

namespace bcrec {

PopularityEmbeddings::PopularityEmbeddings(std::vector<Count> user_keys,
                                           std::vector<Count> item_keys, std::size_t dim)
    : user_keys_(std::move(user_keys)),
      item_keys_(std::move(item_keys)),
      user_vecs_(user_keys_.size(), dim),
      item_vecs_(item_keys_.size(), dim) {
  if (dim < 1) throw ConfigError("popularity embedding dimension must be >= 1");
  if (user_keys_.empty() || item_keys_.empty()) throw DataError("no popularity keys");
  if (!std::is_sorted(user_keys_.begin(), user_keys_.end()) ||
      !std::is_sorted(item_keys_.begin(), item_keys_.end())) {
    throw DataError("popularity keys must be sorted");
  }
}

PopularityEmbeddings PopularityEmbeddings::for_dataset(const Dataset& train, std::size_t dim,
                                                       double stddev, std::mt19937_64& rng) {
  auto distinct = [](const std::vector<Count>& pops) {
    std::vector<Count> keys;
    for (Count p : pops) {
      if (p > 0) keys.push_back(p);
    }
    std::sort(keys.begin(), keys.end());
    keys.erase(std::unique(keys.begin(), keys.end()), keys.end());
    return keys;
  };
  PopularityEmbeddings pe(distinct(train.user_pop()), distinct(train.item_pop()), dim);
  std::normal_distribution<double> normal(0.0, stddev);
  for (double& v : pe.user_vecs_.data()) v = normal(rng);
  for (double& v : pe.item_vecs_.data()) v = normal(rng);
  return pe;
}

Index PopularityEmbeddings::nearest(const std::vector<Count>& keys, Count p) {
  auto hi = std::lower_bound(keys.begin(), keys.end(), p);
  if (hi == keys.end()) return Index(keys.size() - 1);
  if (*hi == p || hi == keys.begin()) return Index(hi - keys.begin());
  auto lo = hi - 1;
  return (p - *lo) <= (*hi - p) ? Index(lo - keys.begin()) : Index(hi - keys.begin());
}

double bias_score(const PopularityEmbeddings& pe, Count p_u, Count p_i) {
  return cosine_similarity(pe.user_vecs().row(pe.user_row(p_u)),
                           pe.item_vecs().row(pe.item_row(p_i)));
}

double bias_angle(const PopularityEmbeddings& pe, Count p_u, Count p_i) {
  return std::acos(bias_score(pe, p_u, p_i));
}

LossResult extractor_loss(const PopularityEmbeddings& pe, const LossBatch& batch,
                          std::span<const Count> user_pop, std::span<const Count> item_pop,
                          double tau2) {
  if (!(tau2 > 0.0)) throw ConfigError("extractor temperature tau2 must be > 0");
  LossBatch keyed;
  keyed.weights = batch.weights;
  keyed.interactions.reserve(batch.size());
  keyed.negatives.reserve(batch.size());
  for (std::size_t r = 0; r < batch.size(); ++r) {
    const auto [u, i] = batch.interactions[r];
    keyed.interactions.emplace_back(pe.user_row(user_pop[u]), pe.item_row(item_pop[i]));
    std::vector<Index> negs;
    negs.reserve(batch.negatives[r].size());
    for (Index j : batch.negatives[r]) negs.push_back(pe.item_row(item_pop[j]));
    keyed.negatives.push_back(std::move(negs));
  }
  return contrastive_loss(pe.user_vecs(), pe.item_vecs(), keyed, tau2);
}

double margin(double xi, double theta, double strength) {
  return std::max(0.0, std::min(strength * xi, std::numbers::pi - theta));
}

namespace {

constexpr char kMagic[8] = {'B', 'C', 'R', 'E', 'C', 'E', 'X', 'T'};
constexpr std::uint32_t kVersion = 1;

template <typename T>
void put(std::ostream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& in) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw DataError("truncated extractor checkpoint");
  return v;
}

}  // namespace

void save_extractor(const std::filesystem::path& path, const PopularityEmbeddings& pe) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out.write(kMagic, sizeof(kMagic));
  put(out, kVersion);
  put(out, static_cast<std::uint64_t>(pe.dim()));
  for (const auto* keys : {&pe.user_keys(), &pe.item_keys()}) {
    put(out, static_cast<std::uint64_t>(keys->size()));
    for (Count k : *keys) put(out, static_cast<std::uint32_t>(k));
  }
  for (const Matrix* m : {&pe.user_vecs(), &pe.item_vecs()}) {
    out.write(reinterpret_cast<const char*>(m->data().data()),
              std::streamsize(m->data().size() * sizeof(double)));
  }
}

PopularityEmbeddings load_extractor(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw DataError("not an extractor checkpoint: " + path.string());
  }
  if (get<std::uint32_t>(in) != kVersion) throw DataError("unsupported extractor version");
  const auto d = get<std::uint64_t>(in);
  auto read_keys = [&] {
    std::vector<Count> keys(get<std::uint64_t>(in));
    for (auto& k : keys) k = get<std::uint32_t>(in);
    return keys;
  };
  auto user_keys = read_keys();
  auto item_keys = read_keys();
  PopularityEmbeddings pe(std::move(user_keys), std::move(item_keys), d);
  for (Matrix* m : {&pe.user_vecs(), &pe.item_vecs()}) {
    in.read(reinterpret_cast<char*>(m->data().data()),
            std::streamsize(m->data().size() * sizeof(double)));
    if (!in) throw DataError("truncated extractor checkpoint");
  }
  return pe;
}

}  // namespace bcrec
