#pragma once

#include <array>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "bcrec/dataset.hpp"
#include "bcrec/encoders.hpp"
#include "json.hpp"

namespace bcrec {

struct TopK {
  std::vector<Index> items;
  // Set when fewer than K candidates survived the exclusions.
  bool truncated = false;
};

// Top-K items by descending score, ties by ascending id, skipping the sorted
// `exclude` list.
TopK rank_topk(std::span<const double> scores, std::span<const Index> exclude, std::size_t k);

// `relevant` must be sorted and nonempty.
double recall_at_k(std::span<const Index> ranked, std::span<const Index> relevant);
// Binary-relevance NDCG with log2(p + 1) discount; IDCG over min(k, |relevant|)
// positions. k defaults to ranked.size().
double ndcg_at_k(std::span<const Index> ranked, std::span<const Index> relevant,
                 std::size_t k = 0);
double hr_at_k(std::span<const Index> ranked, std::span<const Index> relevant);

// Averages over users with at least one relevant item. Metrics are empty
// when no user qualifies.
struct MetricSummary {
  std::optional<double> recall;
  std::optional<double> ndcg;
  std::optional<double> hr;
  std::size_t users = 0;
  std::size_t interactions = 0;
};

struct EvalReport {
  std::string member;
  std::size_t k = 20;
  MetricSummary overall;
  std::array<MetricSummary, 3> subgroups;  // indexed by Subgroup
  std::size_t truncated_users = 0;
  std::string timestamp;

  nlohmann::json to_json() const;
  // Header plus one row per (member, subgroup, metric).
  static std::string csv_header();
  std::string csv_rows() const;
};

// All-ranking evaluation of `member` against the full catalog minus each
// user's training positives. Subgroup metrics restrict the relevant set to
// that subgroup's items; the ranking is shared.
EvalReport evaluate(const ScoringModel& model, const Dataset& member, const Dataset& train,
                    std::span<const Subgroup> item_labels, std::size_t k = 20,
                    std::string member_name = "test", std::size_t threads = 1);

// Overall Recall@k only; what early stopping consumes.
double evaluate_recall(const ScoringModel& model, const Dataset& member, const Dataset& train,
                       std::size_t k = 20, std::size_t threads = 1);

}  // namespace bcrec
