#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

namespace bcrec {

using Index = std::uint32_t;
using Count = std::uint32_t;

struct Interaction {
  Index user = 0;
  Index item = 0;
  std::optional<std::int64_t> timestamp;

  friend bool operator==(const Interaction&, const Interaction&) = default;
};

// Bidirectional raw-string <-> dense-index map.
class IdMap {
 public:
  // Returns the dense id of `raw`, assigning the next free id on first sight.
  Index intern(const std::string& raw);
  std::optional<Index> find(const std::string& raw) const;
  const std::string& raw(Index id) const { return to_raw_.at(id); }
  std::size_t size() const noexcept { return to_raw_.size(); }
  const std::vector<std::string>& raws() const noexcept { return to_raw_; }

  friend bool operator==(const IdMap& a, const IdMap& b) { return a.to_raw_ == b.to_raw_; }

 private:
  std::vector<std::string> to_raw_;
  std::unordered_map<std::string, Index> to_dense_;
};

struct IdMaps {
  IdMap users;
  IdMap items;
  friend bool operator==(const IdMaps&, const IdMaps&) = default;
};

// Immutable implicit-feedback interaction log with popularity statistics.
// Every (user, item) pair is unique; sum(user_pop) == sum(item_pop) == size().
class Dataset {
 public:
  Dataset() = default;
  // Throws DataError on out-of-range ids or duplicate pairs. When `maps` is
  // null, synthetic ids "u<k>"/"i<k>" are generated.
  Dataset(std::size_t num_users, std::size_t num_items, std::vector<Interaction> interactions,
          std::shared_ptr<const IdMaps> maps = nullptr);

  std::size_t num_users() const noexcept { return num_users_; }
  std::size_t num_items() const noexcept { return num_items_; }
  std::size_t size() const noexcept { return interactions_.size(); }
  bool empty() const noexcept { return interactions_.empty(); }

  const std::vector<Interaction>& interactions() const noexcept { return interactions_; }
  const std::vector<Count>& user_pop() const noexcept { return user_pop_; }
  const std::vector<Count>& item_pop() const noexcept { return item_pop_; }
  // Sorted item ids per user (P_u) and sorted user ids per item (P_i).
  const std::vector<Index>& user_positives(Index u) const { return user_positives_.at(u); }
  const std::vector<Index>& item_positives(Index i) const { return item_positives_.at(i); }
  bool contains(Index u, Index i) const;

  const IdMaps& id_maps() const noexcept { return *maps_; }
  std::shared_ptr<const IdMaps> shared_id_maps() const noexcept { return maps_; }
  bool has_all_timestamps() const;

  // Same index space and id maps, different interactions.
  Dataset with_interactions(std::vector<Interaction> interactions) const;

  friend bool operator==(const Dataset& a, const Dataset& b);

 private:
  std::size_t num_users_ = 0;
  std::size_t num_items_ = 0;
  std::vector<Interaction> interactions_;
  std::vector<Count> user_pop_;
  std::vector<Count> item_pop_;
  std::vector<std::vector<Index>> user_positives_;
  std::vector<std::vector<Index>> item_positives_;
  std::shared_ptr<const IdMaps> maps_;
};

struct DataSplit {
  Dataset train;
  Dataset validation;
  std::optional<Dataset> test_imbalanced;
  std::optional<Dataset> test_balanced;
  std::optional<Dataset> test_temporal;
};

// Field separator for interaction files. nullopt means any run of blanks.
struct TextFormat {
  std::optional<char> separator = '\t';
};

std::optional<char> parse_separator(const std::string& name);

// Reads `<user><sep><item>[<sep><timestamp>]` lines, skipping blank lines and
// lines starting with '#'. Dense ids follow first-seen order; duplicate pairs
// collapse onto the first occurrence, keeping the earliest timestamp.
Dataset load_interactions(const std::filesystem::path& path, const TextFormat& format = {});

// As above but resolves raw ids through fixed maps. Lines naming unknown
// users or items are dropped and counted in `*dropped` when given.
Dataset load_interactions(const std::filesystem::path& path, std::shared_ptr<const IdMaps> maps,
                          const TextFormat& format = {}, std::size_t* dropped = nullptr);

void save_interactions(const std::filesystem::path& path, const Dataset& ds,
                       const TextFormat& format = {});

// Iteratively drops users and items with fewer than k interactions until a
// fixpoint, then re-densifies ids (relative order preserved).
Dataset k_core_filter(const Dataset& ds, std::size_t k);

struct SplitFractions {
  double balanced = 0.15;
  double train = 0.60;
  double validation = 0.10;
  double test = 0.15;
};

// Balanced test first (uniform over items, then uniform over that item's
// remaining interactions), then the remainder is shuffled and cut in the
// proportions train:validation:test.
DataSplit split_random(const Dataset& ds, const SplitFractions& fractions, std::uint64_t seed);

struct TemporalRatios {
  double train = 0.7;
  double validation = 0.1;
  double test = 0.2;
};

// Stable sort by timestamp; earliest slice trains, latest slice tests.
DataSplit split_temporal(const Dataset& ds, const TemporalRatios& ratios = {},
                         std::uint64_t seed = 0);

// D_KL(P || Uniform) in nats, P = counts / sum(counts).
double kl_divergence_uniform(std::span<const Count> counts);

enum class Subgroup : std::uint8_t { kHead = 0, kMid = 1, kTail = 2 };
const char* subgroup_name(Subgroup g);

// Descending popularity with ascending-id tie-break; first ceil(n/3) head,
// next ceil(n/3) mid, remainder tail.
std::vector<Subgroup> subgroup_partition(std::span<const Count> pops);

}  // namespace bcrec
