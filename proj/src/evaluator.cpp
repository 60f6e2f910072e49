#include "bcrec/evaluator.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <ctime>
#include <sstream>
#include <thread>

#include "bcrec/errors.hpp"

namespace bcrec {

TopK rank_topk(std::span<const double> scores, std::span<const Index> exclude, std::size_t k) {
  std::vector<Index> cand;
  cand.reserve(scores.size());
  std::size_t e = 0;
  for (Index i = 0; i < scores.size(); ++i) {
    while (e < exclude.size() && exclude[e] < i) ++e;
    if (e < exclude.size() && exclude[e] == i) continue;
    cand.push_back(i);
  }
  TopK out;
  out.truncated = cand.size() < k;
  const std::size_t n = std::min(k, cand.size());
  auto better = [&](Index a, Index b) {
    return scores[a] > scores[b] || (scores[a] == scores[b] && a < b);
  };
  std::partial_sort(cand.begin(), cand.begin() + std::ptrdiff_t(n), cand.end(), better);
  out.items.assign(cand.begin(), cand.begin() + std::ptrdiff_t(n));
  return out;
}

namespace {

bool is_relevant(std::span<const Index> relevant, Index i) {
  return std::binary_search(relevant.begin(), relevant.end(), i);
}

std::size_t hits(std::span<const Index> ranked, std::span<const Index> relevant) {
  std::size_t h = 0;
  for (Index i : ranked) h += is_relevant(relevant, i);
  return h;
}

}  // namespace

double recall_at_k(std::span<const Index> ranked, std::span<const Index> relevant) {
  if (relevant.empty()) return 0.0;
  return double(hits(ranked, relevant)) / double(relevant.size());
}

double ndcg_at_k(std::span<const Index> ranked, std::span<const Index> relevant, std::size_t k) {
  if (relevant.empty()) return 0.0;
  if (k == 0) k = ranked.size();
  double dcg = 0.0;
  for (std::size_t p = 0; p < ranked.size() && p < k; ++p) {
    if (is_relevant(relevant, ranked[p])) dcg += 1.0 / std::log2(double(p) + 2.0);
  }
  double idcg = 0.0;
  for (std::size_t p = 0; p < std::min(k, relevant.size()); ++p) {
    idcg += 1.0 / std::log2(double(p) + 2.0);
  }
  return idcg > 0.0 ? dcg / idcg : 0.0;
}

double hr_at_k(std::span<const Index> ranked, std::span<const Index> relevant) {
  return hits(ranked, relevant) > 0 ? 1.0 : 0.0;
}

namespace {

struct UserScores {
  // [0] overall, [1..3] head/mid/tail; count 0 means skipped.
  std::array<double, 4> recall{}, ndcg{}, hr{};
  std::array<std::size_t, 4> relevant{};
  bool truncated = false;
};

template <typename Fn>
void parallel_for(std::size_t n, std::size_t threads, Fn&& fn) {
  threads = std::max<std::size_t>(1, std::min(threads, n));
  if (threads == 1) {
    for (std::size_t k = 0; k < n; ++k) fn(k);
    return;
  }
  std::vector<std::thread> pool;
  for (std::size_t t = 0; t < threads; ++t) {
    pool.emplace_back([&, t] {
      for (std::size_t k = t; k < n; k += threads) fn(k);
    });
  }
  for (auto& th : pool) th.join();
}

std::vector<UserScores> score_users(const ScoringModel& model, const Dataset& member,
                                    const Dataset& train, std::span<const Subgroup> labels,
                                    std::size_t k, std::size_t threads) {
  if (member.empty()) throw DataError("evaluation on an empty split member");
  if (model.num_items() != member.num_items() || train.num_items() != member.num_items()) {
    throw DataError("evaluation: item space mismatch");
  }
  if (!labels.empty() && labels.size() != member.num_items()) {
    throw DataError("evaluation: subgroup labels do not cover the catalog");
  }
  std::vector<UserScores> out(member.num_users());
  parallel_for(member.num_users(), threads, [&](std::size_t u) {
    const auto& rel = member.user_positives(Index(u));
    if (rel.empty()) return;
    std::vector<double> scores(model.num_items());
    model.score_all(Index(u), scores);
    const auto& excl = u < train.num_users() ? train.user_positives(Index(u))
                                             : std::vector<Index>{};
    auto top = rank_topk(scores, excl, k);
    auto& s = out[u];
    s.truncated = top.truncated;
    auto fill = [&](std::size_t slot, std::span<const Index> relevant) {
      s.relevant[slot] = relevant.size();
      if (relevant.empty()) return;
      s.recall[slot] = recall_at_k(top.items, relevant);
      s.ndcg[slot] = ndcg_at_k(top.items, relevant, k);
      s.hr[slot] = hr_at_k(top.items, relevant);
    };
    fill(0, rel);
    if (labels.empty()) return;
    for (int g = 0; g < 3; ++g) {
      std::vector<Index> sub;
      for (Index i : rel) {
        if (static_cast<int>(labels[i]) == g) sub.push_back(i);
      }
      fill(std::size_t(g) + 1, sub);
    }
  });
  return out;
}

MetricSummary reduce(const std::vector<UserScores>& users, std::size_t slot) {
  MetricSummary m;
  double r = 0, n = 0, h = 0;
  for (const auto& s : users) {
    if (s.relevant[slot] == 0) continue;
    ++m.users;
    m.interactions += s.relevant[slot];
    r += s.recall[slot];
    n += s.ndcg[slot];
    h += s.hr[slot];
  }
  if (m.users > 0) {
    m.recall = r / double(m.users);
    m.ndcg = n / double(m.users);
    m.hr = h / double(m.users);
  }
  return m;
}

std::string now_iso8601() {
  const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

nlohmann::json summary_json(const MetricSummary& m) {
  auto opt = [](const std::optional<double>& v) -> nlohmann::json {
    return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
  };
  return {{"recall", opt(m.recall)},
          {"ndcg", opt(m.ndcg)},
          {"hr", opt(m.hr)},
          {"users", m.users},
          {"interactions", m.interactions}};
}

}  // namespace

EvalReport evaluate(const ScoringModel& model, const Dataset& member, const Dataset& train,
                    std::span<const Subgroup> item_labels, std::size_t k,
                    std::string member_name, std::size_t threads) {
  auto users = score_users(model, member, train, item_labels, k, threads);
  EvalReport rep;
  rep.member = std::move(member_name);
  rep.k = k;
  rep.overall = reduce(users, 0);
  for (std::size_t g = 0; g < 3; ++g) rep.subgroups[g] = reduce(users, g + 1);
  for (const auto& s : users) rep.truncated_users += (s.relevant[0] > 0 && s.truncated);
  rep.timestamp = now_iso8601();
  return rep;
}

double evaluate_recall(const ScoringModel& model, const Dataset& member, const Dataset& train,
                       std::size_t k, std::size_t threads) {
  auto users = score_users(model, member, train, {}, k, threads);
  return reduce(users, 0).recall.value_or(0.0);
}

nlohmann::json EvalReport::to_json() const {
  nlohmann::json sub = nlohmann::json::object();
  for (std::size_t g = 0; g < 3; ++g) {
    sub[subgroup_name(static_cast<Subgroup>(g))] = summary_json(subgroups[g]);
  }
  return {{"schema_version", 1},
          {"member", member},
          {"k", k},
          {"overall", summary_json(overall)},
          {"subgroups", sub},
          {"subgroup_definition",
           "items ranked by training popularity (ties by id): top ceil(n/3) head, next "
           "ceil(n/3) mid, rest tail"},
          {"subgroup_user_rule", "users without positives in a subgroup are skipped for it"},
          {"truncated_users", truncated_users},
          {"timestamp", timestamp}};
}

std::string EvalReport::csv_header() { return "member,subgroup,metric,k,value,users\n"; }

std::string EvalReport::csv_rows() const {
  std::ostringstream out;
  out.precision(17);
  auto emit = [&](const char* group, const MetricSummary& m) {
    auto row = [&](const char* metric, const std::optional<double>& v) {
      out << member << ',' << group << ',' << metric << ',' << k << ',';
      if (v) out << *v;
      out << ',' << m.users << '\n';
    };
    row("recall", m.recall);
    row("ndcg", m.ndcg);
    row("hr", m.hr);
  };
  emit("overall", overall);
  for (std::size_t g = 0; g < 3; ++g) emit(subgroup_name(static_cast<Subgroup>(g)), subgroups[g]);
  return out.str();
}

}  // namespace bcrec
