#include "bcrec/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

#include "bcrec/errors.hpp"

namespace bcrec {

Index IdMap::intern(const std::string& raw) {
  auto [it, inserted] = to_dense_.try_emplace(raw, static_cast<Index>(to_raw_.size()));
  if (inserted) to_raw_.push_back(raw);
  return it->second;
}

std::optional<Index> IdMap::find(const std::string& raw) const {
  auto it = to_dense_.find(raw);
  if (it == to_dense_.end()) return std::nullopt;
  return it->second;
}

namespace {

std::shared_ptr<const IdMaps> synthetic_maps(std::size_t num_users, std::size_t num_items) {
  auto maps = std::make_shared<IdMaps>();
  for (std::size_t u = 0; u < num_users; ++u) maps->users.intern("u" + std::to_string(u));
  for (std::size_t i = 0; i < num_items; ++i) maps->items.intern("i" + std::to_string(i));
  return maps;
}

}  // namespace

Dataset::Dataset(std::size_t num_users, std::size_t num_items,
                 std::vector<Interaction> interactions, std::shared_ptr<const IdMaps> maps)
    : num_users_(num_users),
      num_items_(num_items),
      interactions_(std::move(interactions)),
      user_pop_(num_users, 0),
      item_pop_(num_items, 0),
      user_positives_(num_users),
      item_positives_(num_items),
      maps_(maps ? std::move(maps) : synthetic_maps(num_users, num_items)) {
  if (maps_->users.size() != num_users || maps_->items.size() != num_items) {
    throw DataError("id maps do not match dataset dimensions");
  }
  for (const auto& x : interactions_) {
    if (x.user >= num_users || x.item >= num_items) {
      throw DataError("interaction (" + std::to_string(x.user) + ", " + std::to_string(x.item) +
                      ") out of range");
    }
    ++user_pop_[x.user];
    ++item_pop_[x.item];
    user_positives_[x.user].push_back(x.item);
    item_positives_[x.item].push_back(x.user);
  }
  for (auto& p : user_positives_) {
    std::sort(p.begin(), p.end());
    if (std::adjacent_find(p.begin(), p.end()) != p.end()) {
      throw DataError("duplicate interaction pair");
    }
  }
  for (auto& p : item_positives_) std::sort(p.begin(), p.end());
}

bool Dataset::contains(Index u, Index i) const {
  const auto& p = user_positives_.at(u);
  return std::binary_search(p.begin(), p.end(), i);
}

bool Dataset::has_all_timestamps() const {
  return std::all_of(interactions_.begin(), interactions_.end(),
                     [](const Interaction& x) { return x.timestamp.has_value(); });
}

Dataset Dataset::with_interactions(std::vector<Interaction> interactions) const {
  return Dataset(num_users_, num_items_, std::move(interactions), maps_);
}

bool operator==(const Dataset& a, const Dataset& b) {
  return a.num_users_ == b.num_users_ && a.num_items_ == b.num_items_ &&
         a.interactions_ == b.interactions_ && *a.maps_ == *b.maps_;
}

std::optional<char> parse_separator(const std::string& name) {
  if (name == "tab" || name == "\\t" || name == "\t") return '\t';
  if (name == "space" || name == " ") return ' ';
  if (name == "ws" || name == "whitespace") return std::nullopt;
  if (name == "comma") return ',';
  if (name.size() == 1) return name[0];
  throw ConfigError("unknown separator '" + name + "'");
}

namespace {

std::vector<std::string> split_fields(const std::string& line, const TextFormat& format) {
  std::vector<std::string> fields;
  if (!format.separator) {
    std::istringstream in(line);
    std::string f;
    while (in >> f) fields.push_back(f);
    return fields;
  }
  std::size_t start = 0;
  while (true) {
    auto pos = line.find(*format.separator, start);
    fields.push_back(line.substr(start, pos - start));
    if (pos == std::string::npos) break;
    start = pos + 1;
  }
  return fields;
}

std::string strip(const std::string& s) {
  auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

struct RawRecord {
  std::string user;
  std::string item;
  std::optional<std::int64_t> timestamp;
};

template <typename Sink>
void read_records(const std::filesystem::path& path, const TextFormat& format, Sink&& sink) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (strip(line).empty() || line[0] == '#') continue;
    auto fields = split_fields(line, format);
    if (fields.size() < 2) throw ParseError("expected at least 2 fields", lineno);
    RawRecord rec{strip(fields[0]), strip(fields[1]), std::nullopt};
    if (rec.user.empty() || rec.item.empty()) throw ParseError("empty user or item field", lineno);
    if (fields.size() >= 3 && !strip(fields[2]).empty()) {
      const std::string ts = strip(fields[2]);
      std::size_t used = 0;
      try {
        rec.timestamp = std::stoll(ts, &used);
      } catch (const std::exception&) {
        throw ParseError("bad timestamp '" + ts + "'", lineno);
      }
      if (used != ts.size()) throw ParseError("bad timestamp '" + ts + "'", lineno);
    }
    sink(std::move(rec));
  }
}

struct PairHash {
  std::size_t operator()(const std::pair<Index, Index>& p) const noexcept {
    return (static_cast<std::size_t>(p.first) << 32) ^ p.second;
  }
};

// Collapses duplicate pairs onto their first position, keeping the earliest
// timestamp among the duplicates.
std::vector<Interaction> dedup(std::vector<Interaction> raw) {
  std::unordered_map<std::pair<Index, Index>, std::size_t, PairHash> first;
  std::vector<Interaction> out;
  out.reserve(raw.size());
  for (auto& x : raw) {
    auto [it, inserted] = first.try_emplace({x.user, x.item}, out.size());
    if (inserted) {
      out.push_back(x);
      continue;
    }
    auto& kept = out[it->second];
    if (x.timestamp && (!kept.timestamp || *x.timestamp < *kept.timestamp)) {
      kept.timestamp = x.timestamp;
    }
  }
  return out;
}

}  // namespace

Dataset load_interactions(const std::filesystem::path& path, const TextFormat& format) {
  auto maps = std::make_shared<IdMaps>();
  std::vector<Interaction> raw;
  read_records(path, format, [&](RawRecord rec) {
    raw.push_back({maps->users.intern(rec.user), maps->items.intern(rec.item), rec.timestamp});
  });
  if (raw.empty()) throw DataError("empty dataset: " + path.string());
  auto nu = maps->users.size(), ni = maps->items.size();
  return Dataset(nu, ni, dedup(std::move(raw)), std::move(maps));
}

Dataset load_interactions(const std::filesystem::path& path, std::shared_ptr<const IdMaps> maps,
                          const TextFormat& format, std::size_t* dropped) {
  std::vector<Interaction> raw;
  std::size_t unknown = 0;
  read_records(path, format, [&](RawRecord rec) {
    auto u = maps->users.find(rec.user);
    auto i = maps->items.find(rec.item);
    if (!u || !i) {
      ++unknown;
      return;
    }
    raw.push_back({*u, *i, rec.timestamp});
  });
  if (dropped) *dropped = unknown;
  auto nu = maps->users.size(), ni = maps->items.size();
  return Dataset(nu, ni, dedup(std::move(raw)), std::move(maps));
}

void save_interactions(const std::filesystem::path& path, const Dataset& ds,
                       const TextFormat& format) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  const char sep = format.separator.value_or('\t');
  const auto& maps = ds.id_maps();
  for (const auto& x : ds.interactions()) {
    out << maps.users.raw(x.user) << sep << maps.items.raw(x.item);
    if (x.timestamp) out << sep << *x.timestamp;
    out << '\n';
  }
}

Dataset k_core_filter(const Dataset& ds, std::size_t k) {
  if (k < 1) throw ConfigError("k must be >= 1");
  std::vector<char> alive(ds.size(), 1);
  std::vector<std::size_t> upop(ds.user_pop().begin(), ds.user_pop().end());
  std::vector<std::size_t> ipop(ds.item_pop().begin(), ds.item_pop().end());
  const auto& xs = ds.interactions();
  bool changed = true;
  while (changed) {
    changed = false;
    for (std::size_t n = 0; n < xs.size(); ++n) {
      if (!alive[n]) continue;
      if (upop[xs[n].user] < k || ipop[xs[n].item] < k) {
        alive[n] = 0;
        --upop[xs[n].user];
        --ipop[xs[n].item];
        changed = true;
      }
    }
  }
  std::vector<Index> new_user(ds.num_users(), 0), new_item(ds.num_items(), 0);
  auto maps = std::make_shared<IdMaps>();
  for (std::size_t u = 0; u < ds.num_users(); ++u) {
    if (upop[u] > 0) new_user[u] = maps->users.intern(ds.id_maps().users.raw(Index(u)));
  }
  for (std::size_t i = 0; i < ds.num_items(); ++i) {
    if (ipop[i] > 0) new_item[i] = maps->items.intern(ds.id_maps().items.raw(Index(i)));
  }
  std::vector<Interaction> kept;
  for (std::size_t n = 0; n < xs.size(); ++n) {
    if (alive[n]) kept.push_back({new_user[xs[n].user], new_item[xs[n].item], xs[n].timestamp});
  }
  auto nu = maps->users.size(), ni = maps->items.size();
  return Dataset(nu, ni, std::move(kept), std::move(maps));
}

namespace {

Dataset subset(const Dataset& ds, std::vector<std::size_t> picks) {
  std::sort(picks.begin(), picks.end());
  std::vector<Interaction> xs;
  xs.reserve(picks.size());
  for (auto n : picks) xs.push_back(ds.interactions()[n]);
  return ds.with_interactions(std::move(xs));
}

void check_fraction(double f, const char* name, bool allow_zero) {
  if (!std::isfinite(f) || f >= 1.0 || f < 0.0 || (!allow_zero && f == 0.0)) {
    throw ConfigError(std::string("fraction '") + name + "' must lie in (0, 1)");
  }
}

}  // namespace

DataSplit split_random(const Dataset& ds, const SplitFractions& fr, std::uint64_t seed) {
  check_fraction(fr.balanced, "balanced", true);
  check_fraction(fr.train, "train", false);
  check_fraction(fr.validation, "validation", false);
  check_fraction(fr.test, "test", false);
  if (fr.balanced + fr.train + fr.validation + fr.test > 1.0 + 1e-9) {
    throw ConfigError("split fractions sum above 1");
  }
  std::mt19937_64 rng(seed);
  const std::size_t total = ds.size();
  std::vector<char> taken(total, 0);

  std::vector<std::size_t> balanced;
  const auto quota = static_cast<std::size_t>(std::llround(fr.balanced * double(total)));
  if (quota > 0) {
    std::vector<std::vector<std::size_t>> by_item(ds.num_items());
    for (std::size_t n = 0; n < total; ++n) by_item[ds.interactions()[n].item].push_back(n);
    std::vector<Index> open;
    for (std::size_t i = 0; i < by_item.size(); ++i) {
      if (!by_item[i].empty()) open.push_back(Index(i));
    }
    while (balanced.size() < quota && !open.empty()) {
      std::uniform_int_distribution<std::size_t> pick_item(0, open.size() - 1);
      const std::size_t slot = pick_item(rng);
      auto& pool = by_item[open[slot]];
      std::uniform_int_distribution<std::size_t> pick_x(0, pool.size() - 1);
      const std::size_t k = pick_x(rng);
      balanced.push_back(pool[k]);
      taken[pool[k]] = 1;
      pool[k] = pool.back();
      pool.pop_back();
      if (pool.empty()) {
        open[slot] = open.back();
        open.pop_back();
      }
    }
  }

  std::vector<std::size_t> rest;
  for (std::size_t n = 0; n < total; ++n) {
    if (!taken[n]) rest.push_back(n);
  }
  std::shuffle(rest.begin(), rest.end(), rng);
  const double denom = fr.train + fr.validation + fr.test;
  const auto n_train =
      static_cast<std::size_t>(std::llround(double(rest.size()) * fr.train / denom));
  const auto n_val = std::min(
      rest.size() - n_train,
      static_cast<std::size_t>(std::llround(double(rest.size()) * fr.validation / denom)));

  DataSplit split;
  split.train = subset(ds, {rest.begin(), rest.begin() + n_train});
  split.validation = subset(ds, {rest.begin() + n_train, rest.begin() + n_train + n_val});
  split.test_imbalanced = subset(ds, {rest.begin() + n_train + n_val, rest.end()});
  if (quota > 0) split.test_balanced = subset(ds, std::move(balanced));
  return split;
}

DataSplit split_temporal(const Dataset& ds, const TemporalRatios& r, std::uint64_t /*seed*/) {
  for (double f : {r.train, r.validation, r.test}) {
    if (!(f > 0.0 && f < 1.0)) throw ConfigError("temporal ratios must lie in (0, 1)");
  }
  const auto& xs = ds.interactions();
  for (std::size_t n = 0; n < xs.size(); ++n) {
    if (!xs[n].timestamp) {
      throw DataError("temporal split: interaction #" + std::to_string(n + 1) + " (" +
                      ds.id_maps().users.raw(xs[n].user) + ", " +
                      ds.id_maps().items.raw(xs[n].item) + ") has no timestamp");
    }
  }
  std::vector<std::size_t> order(xs.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return *xs[a].timestamp < *xs[b].timestamp;
  });
  const double denom = r.train + r.validation + r.test;
  const auto n = order.size();
  const auto n_train = static_cast<std::size_t>(std::llround(double(n) * r.train / denom));
  const auto n_val = std::min(
      n - n_train, static_cast<std::size_t>(std::llround(double(n) * r.validation / denom)));
  auto take = [&](std::size_t from, std::size_t to) {
    std::vector<Interaction> out;
    for (std::size_t k = from; k < to; ++k) out.push_back(xs[order[k]]);
    return ds.with_interactions(std::move(out));
  };
  DataSplit split;
  split.train = take(0, n_train);
  split.validation = take(n_train, n_train + n_val);
  split.test_temporal = take(n_train + n_val, n);
  return split;
}

double kl_divergence_uniform(std::span<const Count> counts) {
  double total = 0.0;
  for (auto c : counts) total += c;
  if (total <= 0.0) throw DataError("KL divergence of an all-zero count vector");
  const double n = double(counts.size());
  double kl = 0.0;
  for (auto c : counts) {
    if (c == 0) continue;
    const double p = c / total;
    kl += p * std::log(p * n);
  }
  return std::max(kl, 0.0);
}

const char* subgroup_name(Subgroup g) {
  switch (g) {
    case Subgroup::kHead:
      return "head";
    case Subgroup::kMid:
      return "mid";
    case Subgroup::kTail:
      return "tail";
  }
  return "?";
}

std::vector<Subgroup> subgroup_partition(std::span<const Count> pops) {
  const std::size_t n = pops.size();
  std::vector<Index> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](Index a, Index b) { return pops[a] > pops[b]; });
  const std::size_t third = (n + 2) / 3;
  std::vector<Subgroup> labels(n, Subgroup::kTail);
  for (std::size_t r = 0; r < n; ++r) {
    if (r < third) {
      labels[order[r]] = Subgroup::kHead;
    } else if (r < std::min(n, 2 * third)) {
      labels[order[r]] = Subgroup::kMid;
    }
  }
  return labels;
}

}  // namespace bcrec
