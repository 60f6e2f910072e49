#include <cmath>
#include <numbers>
#include <random>

#include "bcrec/encoders.hpp"
#include "bcrec/errors.hpp"
#include "doctest.h"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace bcrec;

TEST_CASE("cosine similarity") {
  std::vector<double> v{0.3, -1.2, 2.0};
  CHECK(cosine_similarity(v, v) == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(cosine_similarity(std::vector<double>{1, 0}, std::vector<double>{0, 1}) == 0.0);
  CHECK(cosine_similarity(std::vector<double>{1, 1}, std::vector<double>{1, 0}) ==
        doctest::Approx(0.7071068).epsilon(1e-7));
  CHECK_THROWS_AS(cosine_similarity(std::vector<double>{0, 0}, std::vector<double>{1, 0}),
                  DataError);
}

TEST_CASE("angle") {
  std::vector<double> v{0.3, -1.2, 2.0};
  CHECK(angle(v, v) == 0.0);
  CHECK(angle(std::vector<double>{1, 0}, std::vector<double>{-1, 0}) ==
        doctest::Approx(std::numbers::pi).epsilon(1e-15));
  std::mt19937_64 rng(1);
  std::normal_distribution<double> g;
  for (int t = 0; t < 200; ++t) {
    std::vector<double> a(5), b(5);
    for (auto& x : a) x = g(rng);
    for (auto& x : b) x = g(rng);
    CHECK(std::abs(angle(a, b) - std::acos(oracle::cosine(a, b))) < 1e-12);
  }
}

TEST_CASE("cosine gradient matches finite differences") {
  std::mt19937_64 rng(2);
  std::normal_distribution<double> g;
  for (int t = 0; t < 30; ++t) {
    Matrix m(2, 6);
    for (auto& x : m.data()) x = g(rng);
    auto f = [&] { return oracle::cosine(oracle::row(m, 0), oracle::row(m, 1)); };
    auto fd = oracle::fd_gradient(m, f);
    Matrix an(2, 6);
    accumulate_cosine_grad(m.row(0), m.row(1), f(), 1.0, an.row(0), an.row(1));
    for (std::size_t k = 0; k < fd.data().size(); ++k) {
      CHECK(an.data()[k] == doctest::Approx(fd.data()[k]).epsilon(1e-6));
    }
  }
}

TEST_CASE("lightgcn: zero layers is the identity") {
  std::mt19937_64 rng(3);
  auto ds = oracle::random_bipartite(6, 8, 0.3, rng);
  auto t = oracle::random_table(6, 8, 4, rng);
  NormalizedAdjacency adj(ds);
  CHECK(lightgcn_propagate(t, adj, 0) == t);
}

TEST_CASE("lightgcn: single edge swaps then averages") {
  Dataset ds(1, 1, {{0, 0, std::nullopt}});
  EmbeddingTable t(1, 1, 2);
  t.users(0, 0) = 1.0;
  t.users(0, 1) = 2.0;
  t.items(0, 0) = -3.0;
  t.items(0, 1) = 0.5;
  auto out = lightgcn_propagate(t, NormalizedAdjacency(ds), 1);
  CHECK(out.users(0, 0) == doctest::Approx(-1.0));
  CHECK(out.users(0, 1) == doctest::Approx(1.25));
  CHECK(out.items(0, 0) == doctest::Approx(-1.0));
  CHECK(out.items(0, 1) == doctest::Approx(1.25));
}

TEST_CASE("lightgcn: dense oracle on random graphs") {
  std::mt19937_64 rng(4);
  std::uniform_int_distribution<std::size_t> side(1, 25);
  std::uniform_real_distribution<double> dens(0.05, 0.6);
  for (int t = 0; t < 25; ++t) {
    const std::size_t nu = side(rng), ni = side(rng);
    auto ds = oracle::random_bipartite(nu, ni, dens(rng), rng);
    auto table = oracle::random_table(nu, ni, 3, rng);
    NormalizedAdjacency adj(ds);
    for (std::size_t layers = 0; layers <= 3; ++layers) {
      auto got = lightgcn_propagate(table, adj, layers);
      auto want = oracle::dense_lightgcn(table, ds, layers);
      for (std::size_t k = 0; k < got.users.data().size(); ++k)
        CHECK(std::abs(got.users.data()[k] - want.users.data()[k]) < 1e-10);
      for (std::size_t k = 0; k < got.items.data().size(); ++k)
        CHECK(std::abs(got.items.data()[k] - want.items.data()[k]) < 1e-10);
    }
  }
}

TEST_CASE("normalized adjacency is symmetric") {
  std::mt19937_64 rng(5);
  auto ds = oracle::random_bipartite(10, 12, 0.3, rng);
  NormalizedAdjacency adj(ds);
  std::map<std::pair<std::size_t, std::size_t>, double> entries;
  for (std::size_t r = 0; r < adj.num_nodes(); ++r)
    for (std::size_t k = adj.row_ptr()[r]; k < adj.row_ptr()[r + 1]; ++k)
      entries[{r, adj.col()[k]}] = adj.val()[k];
  for (const auto& [rc, v] : entries) {
    CHECK(entries.at({rc.second, rc.first}) == v);
  }
  CHECK(entries.size() == 2 * ds.size());
}

TEST_CASE("score") {
  std::mt19937_64 rng(6);
  auto ds = oracle::random_bipartite(5, 7, 0.4, rng);
  auto t = oracle::random_table(5, 7, 4, rng);
  for (std::size_t k = 0; k < 4; ++k) t.items(2, k) = t.users(1, k);
  CHECK(score(EncoderKind::mf(), t, nullptr, 1, 2) == doctest::Approx(1.0));

  NormalizedAdjacency adj(ds);
  for (Index u = 0; u < 5; ++u) {
    for (Index i = 0; i < 7; ++i) {
      const double mf = score(EncoderKind::mf(), t, nullptr, u, i);
      CHECK(score(EncoderKind::lightgcn(0), t, &adj, u, i) == mf);
      CHECK(std::abs(mf - oracle::cosine(oracle::row(t.users, u), oracle::row(t.items, i))) <
            1e-12);
    }
  }
  ScoringModel model(EncoderKind::lightgcn(2), t, &adj);
  std::vector<double> all(7);
  model.score_all(3, all);
  for (Index i = 0; i < 7; ++i) {
    CHECK(all[i] == doctest::Approx(score(EncoderKind::lightgcn(2), t, &adj, 3, i)));
    CHECK(model.score(3, i) == doctest::Approx(all[i]).epsilon(1e-14));
  }
}

TEST_CASE("checkpoint round-trip, binary and JSON") {
  testutil::TempDir dir("ckpt");
  std::mt19937_64 rng(7);
  Checkpoint c{EncoderKind::lightgcn(2), oracle::random_table(4, 6, 3, rng),
               {{"loss", "bc"}, {"epoch", 12}}};
  save_checkpoint(dir / "m.bin", c);
  CHECK(load_checkpoint(dir / "m.bin") == c);
  CHECK(checkpoint_from_json(checkpoint_to_json(c)) == c);

  testutil::write_file(dir / "junk.bin", "NOTACHECKPOINT");
  CHECK_THROWS_AS(load_checkpoint(dir / "junk.bin"), DataError);
  CHECK_THROWS_AS(load_checkpoint(dir / "absent.bin"), DataError);
}
