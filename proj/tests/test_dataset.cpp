#include <algorithm>
#include <cmath>
#include <map>
#include <random>
#include <set>

#include "bcrec/dataset.hpp"
#include "bcrec/errors.hpp"
#include "bcrec/split_io.hpp"
#include "bcrec/synth.hpp"
#include "doctest.h"
#include "test_util.hpp"

using namespace bcrec;
using testutil::TempDir;
using testutil::write_file;

namespace {

std::multiset<std::pair<std::string, std::string>> raw_pairs(const Dataset& ds) {
  std::multiset<std::pair<std::string, std::string>> out;
  for (const auto& x : ds.interactions()) {
    out.emplace(ds.id_maps().users.raw(x.user), ds.id_maps().items.raw(x.item));
  }
  return out;
}

Dataset stamped(std::vector<std::int64_t> ts) {
  std::vector<Interaction> xs;
  for (std::size_t n = 0; n < ts.size(); ++n) xs.push_back({Index(n), 0, ts[n]});
  return Dataset(ts.size(), 1, std::move(xs));
}

}  // namespace

TEST_CASE("load: three lines, two users, two items") {
  TempDir dir("load");
  write_file(dir / "x.tsv", "a\tb\na\tc\nd\tb\n");
  auto ds = load_interactions(dir / "x.tsv");
  CHECK(ds.num_users() == 2);
  CHECK(ds.num_items() == 2);
  CHECK(ds.size() == 3);
  CHECK(ds.user_pop() == std::vector<Count>{2, 1});
  CHECK(ds.item_pop() == std::vector<Count>{2, 1});
  CHECK(ds.id_maps().users.raw(0) == "a");
  CHECK(ds.id_maps().items.raw(1) == "c");
}

TEST_CASE("load: duplicate pair collapses and keeps the earliest timestamp") {
  TempDir dir("dup");
  write_file(dir / "x.tsv", "a\tb\t9\na\tb\t4\n");
  auto ds = load_interactions(dir / "x.tsv");
  REQUIRE(ds.size() == 1);
  CHECK(ds.interactions()[0].timestamp == 4);
}

TEST_CASE("load: comments, blank lines, CRLF and whitespace separator") {
  TempDir dir("ws");
  write_file(dir / "x.txt", "# header\n\nu1  i1   5\r\nu2 i1\n");
  auto ds = load_interactions(dir / "x.txt", TextFormat{std::nullopt});
  CHECK(ds.size() == 2);
  CHECK(ds.interactions()[0].timestamp == 5);
  CHECK_FALSE(ds.interactions()[1].timestamp.has_value());
  CHECK_FALSE(ds.has_all_timestamps());
}

TEST_CASE("load: malformed input reports the line") {
  TempDir dir("bad");
  write_file(dir / "x.tsv", "a\tb\nonlyone\n");
  try {
    load_interactions(dir / "x.tsv");
    FAIL("expected ParseError");
  } catch (const ParseError& e) {
    CHECK(e.line() == 2);
  }
  write_file(dir / "y.tsv", "a\tb\tnot-a-time\n");
  CHECK_THROWS_AS(load_interactions(dir / "y.tsv"), ParseError);
  write_file(dir / "z.tsv", "# nothing\n");
  CHECK_THROWS_AS(load_interactions(dir / "z.tsv"), DataError);
  CHECK_THROWS_AS(load_interactions(dir / "missing.tsv"), DataError);
}

TEST_CASE("load: 1000-line random log matches an independent tally") {
  TempDir dir("tally");
  std::mt19937_64 rng(11);
  std::uniform_int_distribution<int> uid(0, 39), iid(0, 59);
  std::string text;
  std::set<std::pair<int, int>> pairs;
  for (int n = 0; n < 1000; ++n) {
    int u = uid(rng), i = iid(rng);
    pairs.emplace(u, i);
    text += "user" + std::to_string(u) + "\titem" + std::to_string(i) + "\n";
  }
  write_file(dir / "x.tsv", text);
  auto ds = load_interactions(dir / "x.tsv");

  std::map<std::string, Count> up, ip;
  for (auto [u, i] : pairs) {
    ++up["user" + std::to_string(u)];
    ++ip["item" + std::to_string(i)];
  }
  CHECK(ds.size() == pairs.size());
  CHECK(ds.num_users() == up.size());
  CHECK(ds.num_items() == ip.size());
  for (Index u = 0; u < ds.num_users(); ++u) {
    CHECK(ds.user_pop()[u] == up.at(ds.id_maps().users.raw(u)));
  }
  for (Index i = 0; i < ds.num_items(); ++i) {
    CHECK(ds.item_pop()[i] == ip.at(ds.id_maps().items.raw(i)));
  }
}

TEST_CASE("load with fixed maps drops unknown ids") {
  TempDir dir("maps");
  write_file(dir / "a.tsv", "a\tx\nb\ty\n");
  write_file(dir / "b.tsv", "a\ty\nzz\tx\na\tqq\n");
  auto base = load_interactions(dir / "a.tsv");
  std::size_t dropped = 0;
  auto ds = load_interactions(dir / "b.tsv", base.shared_id_maps(), {}, &dropped);
  CHECK(dropped == 2);
  REQUIRE(ds.size() == 1);
  CHECK(ds.interactions()[0].user == 0);
  CHECK(ds.interactions()[0].item == 1);
}

TEST_CASE("dataset constructor rejects bad input") {
  CHECK_THROWS_AS(Dataset(1, 1, {{0, 1, std::nullopt}}), DataError);
  CHECK_THROWS_AS(Dataset(1, 1, {{0, 0, std::nullopt}, {0, 0, std::nullopt}}), DataError);
}

TEST_CASE("separator names") {
  CHECK(parse_separator("tab") == '\t');
  CHECK(parse_separator("comma") == ',');
  CHECK(parse_separator(";") == ';');
  CHECK_FALSE(parse_separator("ws").has_value());
  CHECK_THROWS_AS(parse_separator("pipes"), ConfigError);
}

TEST_CASE("save then load round-trips") {
  TempDir dir("rt");
  std::mt19937_64 rng(3);
  std::vector<Interaction> xs;
  for (Index u = 0; u < 10; ++u)
    for (Index i = 0; i < 10; ++i)
      if ((u * 7 + i) % 3 == 0) xs.push_back({u, i, std::int64_t(u * 100 + i)});
  Dataset ds(10, 10, xs);
  save_interactions(dir / "x.tsv", ds);
  auto back = load_interactions(dir / "x.tsv", ds.shared_id_maps());
  CHECK(back == ds);
}

TEST_CASE("k-core: already dense data is unchanged") {
  std::vector<Interaction> xs;
  for (Index u = 0; u < 3; ++u)
    for (Index i = 0; i < 3; ++i) xs.push_back({u, i, std::nullopt});
  Dataset ds(3, 3, xs);
  auto out = k_core_filter(ds, 3);
  CHECK(out == ds);
}

TEST_CASE("k-core: star graph collapses to empty") {
  std::vector<Interaction> xs;
  for (Index i = 0; i < 5; ++i) xs.push_back({0, i, std::nullopt});
  auto out = k_core_filter(Dataset(1, 5, xs), 2);
  CHECK(out.empty());
  CHECK(out.num_users() == 0);
  CHECK(out.num_items() == 0);
}

TEST_CASE("k-core: random logs satisfy the degree bound and are idempotent") {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    std::bernoulli_distribution coin(0.15);
    std::vector<Interaction> xs;
    for (Index u = 0; u < 40; ++u)
      for (Index i = 0; i < 50; ++i)
        if (coin(rng)) xs.push_back({u, i, std::nullopt});
    Dataset ds(40, 50, xs);
    for (std::size_t k : {2u, 5u, 8u}) {
      auto out = k_core_filter(ds, k);
      for (auto c : out.user_pop()) CHECK(c >= k);
      for (auto c : out.item_pop()) CHECK(c >= k);
      CHECK(k_core_filter(out, k) == out);
      // Surviving pairs are original pairs.
      auto orig = raw_pairs(ds);
      for (const auto& p : raw_pairs(out)) CHECK(orig.count(p) == 1);
    }
  }
}

TEST_CASE("split_random: exact partition, determinism, member order") {
  SynthConfig sc;
  sc.seed = 4;
  auto data = synthesize(sc).observed;
  auto a = split_random(data, {}, 99);
  auto b = split_random(data, {}, 99);
  CHECK(a.train == b.train);
  CHECK(a.validation == b.validation);
  CHECK(*a.test_imbalanced == *b.test_imbalanced);
  CHECK(*a.test_balanced == *b.test_balanced);

  auto all = raw_pairs(a.train);
  std::size_t total = a.train.size();
  for (const Dataset* m : {&a.validation, &*a.test_imbalanced, &*a.test_balanced}) {
    for (const auto& p : raw_pairs(*m)) {
      CHECK(all.count(p) == 0);
      all.insert(p);
    }
    total += m->size();
  }
  CHECK(total == data.size());
  CHECK(all == raw_pairs(data));

  const double n = double(data.size());
  CHECK(std::abs(double(a.test_balanced->size()) - 0.15 * n) <= 1.0);
  CHECK(std::abs(double(a.train.size()) - 0.60 * n) <= 2.0);
  CHECK(std::abs(double(a.validation.size()) - 0.10 * n) <= 2.0);

  auto c = split_random(data, {}, 100);
  CHECK_FALSE(c.train == a.train);
}

TEST_CASE("split_random: no balanced fraction") {
  SynthConfig sc;
  auto data = synthesize(sc).observed;
  auto s = split_random(data, {0.0, 0.60, 0.10, 0.15}, 1);
  CHECK_FALSE(s.test_balanced.has_value());
  const double n = double(data.size());
  CHECK(std::abs(double(s.train.size()) - n * 0.60 / 0.85) <= 1.0);
  CHECK(std::abs(double(s.validation.size()) - n * 0.10 / 0.85) <= 1.0);
  CHECK(s.train.size() + s.validation.size() + s.test_imbalanced->size() == data.size());
}

TEST_CASE("split_random: balanced test is flatter than train") {
  SynthConfig sc;
  sc.num_users = 400;
  auto data = synthesize(sc).observed;
  auto s = split_random(data, {}, 8);
  CHECK(kl_divergence_uniform(s.test_balanced->item_pop()) <
        kl_divergence_uniform(s.train.item_pop()));
}

TEST_CASE("split_random: invalid fractions") {
  Dataset ds(1, 2, {{0, 0, std::nullopt}, {0, 1, std::nullopt}});
  CHECK_THROWS_AS(split_random(ds, {0.5, 0.5, 0.1, 0.1}, 0), ConfigError);
  CHECK_THROWS_AS(split_random(ds, {0.1, 0.0, 0.1, 0.1}, 0), ConfigError);
  CHECK_THROWS_AS(split_random(ds, {-0.1, 0.5, 0.1, 0.1}, 0), ConfigError);
}

TEST_CASE("split_temporal: slices by time") {
  auto s = split_temporal(stamped({1, 2, 3, 4, 5, 6, 7, 8, 9, 10}));
  auto times = [](const Dataset& d) {
    std::vector<std::int64_t> t;
    for (const auto& x : d.interactions()) t.push_back(*x.timestamp);
    return t;
  };
  CHECK(times(s.train) == std::vector<std::int64_t>{1, 2, 3, 4, 5, 6, 7});
  CHECK(times(s.validation) == std::vector<std::int64_t>{8});
  CHECK(times(*s.test_temporal) == std::vector<std::int64_t>{9, 10});
}

TEST_CASE("split_temporal: equal timestamps keep input order") {
  auto s = split_temporal(stamped(std::vector<std::int64_t>(10, 5)));
  std::vector<Index> users;
  for (const auto& x : s.train.interactions()) users.push_back(x.user);
  CHECK(users == std::vector<Index>{0, 1, 2, 3, 4, 5, 6});
  CHECK(s.test_temporal->interactions()[1].user == 9);
}

TEST_CASE("split_temporal: shuffled input gives the sorted split") {
  std::mt19937_64 rng(2);
  std::vector<Interaction> xs;
  for (Index n = 0; n < 50; ++n) xs.push_back({n % 10, n, std::int64_t(n * 3)});
  auto shuffled = xs;
  std::shuffle(shuffled.begin(), shuffled.end(), rng);
  auto a = split_temporal(Dataset(10, 50, xs));
  auto b = split_temporal(Dataset(10, 50, shuffled));
  CHECK(a.train == b.train);
  CHECK(a.validation == b.validation);
  CHECK(*a.test_temporal == *b.test_temporal);
}

TEST_CASE("split_temporal: missing timestamp names the interaction") {
  Dataset ds(2, 1, {{0, 0, 1}, {1, 0, std::nullopt}});
  try {
    split_temporal(ds);
    FAIL("expected DataError");
  } catch (const DataError& e) {
    CHECK(std::string(e.what()).find("u1") != std::string::npos);
  }
}

TEST_CASE("KL divergence to uniform") {
  CHECK(kl_divergence_uniform(std::vector<Count>{5, 5, 5, 5}) == doctest::Approx(0.0));
  CHECK(kl_divergence_uniform(std::vector<Count>{3, 1}) ==
        doctest::Approx(0.130812).epsilon(1e-6));
  CHECK(kl_divergence_uniform(std::vector<Count>{1, 0, 0, 0}) ==
        doctest::Approx(1.386294).epsilon(1e-6));
  CHECK_THROWS_AS(kl_divergence_uniform(std::vector<Count>{0, 0}), DataError);
}

TEST_CASE("subgroup partition") {
  std::vector<Count> pops{9, 8, 7, 6, 5, 4, 3, 2, 1};
  auto g = subgroup_partition(pops);
  for (int i = 0; i < 3; ++i) CHECK(g[i] == Subgroup::kHead);
  for (int i = 3; i < 6; ++i) CHECK(g[i] == Subgroup::kMid);
  for (int i = 6; i < 9; ++i) CHECK(g[i] == Subgroup::kTail);

  auto eq = subgroup_partition(std::vector<Count>(6, 3));
  CHECK(eq == std::vector<Subgroup>{Subgroup::kHead, Subgroup::kHead, Subgroup::kMid,
                                    Subgroup::kMid, Subgroup::kTail, Subgroup::kTail});

  std::mt19937_64 rng(17);
  std::uniform_int_distribution<Count> pick(0, 20);
  std::vector<Count> rp(100);
  for (auto& p : rp) p = pick(rng);
  auto labels = subgroup_partition(rp);
  std::vector<std::pair<long, Index>> order;
  for (Index i = 0; i < 100; ++i) order.emplace_back(-long(rp[i]), i);
  std::sort(order.begin(), order.end());
  std::size_t sizes[3] = {0, 0, 0};
  for (std::size_t r = 0; r < 100; ++r) {
    Subgroup want = r < 34 ? Subgroup::kHead : r < 68 ? Subgroup::kMid : Subgroup::kTail;
    CHECK(labels[order[r].second] == want);
    ++sizes[static_cast<int>(labels[order[r].second])];
  }
  CHECK(sizes[0] == 34);
  CHECK(sizes[1] == 34);
  CHECK(sizes[2] == 32);
}

TEST_CASE("split directory round-trip") {
  TempDir dir("split");
  SynthConfig sc;
  auto data = synthesize(sc).observed;
  auto s = split_random(data, {}, 5);
  auto manifest = write_split(dir.path(), s, {{"seed", 5}});
  CHECK(manifest["seed"] == 5);
  CHECK(manifest["files"].size() == 4);
  CHECK(manifest["kl_divergence_uniform"].contains("test_balanced"));
  nlohmann::json back_manifest;
  auto back = read_split(dir.path(), &back_manifest);
  CHECK(back_manifest == manifest);
  CHECK(back.train == s.train);
  CHECK(back.validation == s.validation);
  CHECK(*back.test_balanced == *s.test_balanced);
  CHECK(*back.test_imbalanced == *s.test_imbalanced);
  CHECK_FALSE(back.test_temporal.has_value());
}
