#include "bcrec/losses.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <unordered_set>

#include "bcrec/errors.hpp"

namespace bcrec {

namespace {

double raw_cosine(std::span<const double> a, std::span<const double> b) {
  double ab = 0.0, aa = 0.0, bb = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    ab += a[k] * b[k];
    aa += a[k] * a[k];
    bb += b[k] * b[k];
  }
  const double na = std::sqrt(aa), nb = std::sqrt(bb);
  if (!(na >= kNormFloor) || !(nb >= kNormFloor)) {
    throw DataError("zero-norm embedding in loss");
  }
  return ab / (na * nb);
}

void check_tau(double tau) {
  if (!(tau > 0.0) || !std::isfinite(tau)) throw ConfigError("temperature must be > 0");
}

double softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }

double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace

LossResult contrastive_loss(const Matrix& users, const Matrix& items, const LossBatch& batch,
                            double tau, std::span<const double> margins) {
  check_tau(tau);
  if (batch.negatives.size() != batch.size()) {
    throw DataError("loss batch: negatives list does not match interactions");
  }
  if (!margins.empty() && margins.size() != batch.size()) {
    throw DataError("loss batch: margins do not match interactions");
  }
  const double s_floor = std::sqrt(1.0 - kAngleGuardCos * kAngleGuardCos);
  LossResult res{0.0, RowGrads(users.cols()), RowGrads(items.cols())};
  std::vector<double> logits, cosines;
  for (std::size_t r = 0; r < batch.size(); ++r) {
    const auto [u, i] = batch.interactions[r];
    const auto& negs = batch.negatives[r];
    if (negs.empty()) throw DataError("softmax-family loss needs at least one negative");
    const double w = batch.weight(r);
    const double m = margins.empty() ? 0.0 : margins[r];
    auto uv = users.row(u);

    const double c0 = raw_cosine(uv, items.row(i));
    const double cc = std::clamp(c0, -1.0, 1.0);
    const double s0 = std::sqrt(std::max(0.0, 1.0 - cc * cc));
    if (m != 0.0 && std::acos(cc) + m > std::numbers::pi + 1e-9) {
      throw InvariantError("angular margin pushes theta + M beyond pi");
    }
    const double cos_m = std::cos(m), sin_m = std::sin(m);
    // cos(theta + M) written without arccos so that M = 0 gives c0 exactly.
    const double pos = m == 0.0 ? c0 : cc * cos_m - s0 * sin_m;

    logits.assign(1, pos / tau);
    cosines.assign(1, c0);
    for (Index j : negs) {
      const double cj = raw_cosine(uv, items.row(j));
      cosines.push_back(cj);
      logits.push_back(cj / tau);
    }
    const double top = *std::max_element(logits.begin(), logits.end());
    double denom = 0.0;
    for (double z : logits) denom += std::exp(z - top);
    res.value += w * (std::log(denom) - (logits[0] - top));

    // d pos / d c0 = sin(theta + M) / sin(theta), floored near the poles.
    const double dpos = m == 0.0 ? 1.0 : cos_m + cc * sin_m / std::max(s0, s_floor);
    auto gu = res.user_grads.at(u);
    for (std::size_t k = 0; k < logits.size(); ++k) {
      const double p = std::exp(logits[k] - top) / denom;
      double dz = k == 0 ? (p - 1.0) * dpos : p;
      dz *= w / tau;
      const Index item = k == 0 ? i : negs[k - 1];
      accumulate_cosine_grad(uv, items.row(item), cosines[k], dz, gu, res.item_grads.at(item));
    }
  }
  return res;
}

LossResult softmax_loss(const EmbeddingTable& reps, const LossBatch& batch, double tau) {
  return contrastive_loss(reps.users, reps.items, batch, tau);
}

LossResult bc_loss(const EmbeddingTable& reps, const LossBatch& batch,
                   std::span<const double> margins, double tau1) {
  if (margins.size() != batch.size()) throw DataError("bc_loss: one margin per interaction");
  for (double m : margins) {
    if (!(m >= 0.0)) throw InvariantError("negative angular margin");
  }
  return contrastive_loss(reps.users, reps.items, batch, tau1, margins);
}

LossResult bpr_loss(const EmbeddingTable& reps, const LossBatch& batch) {
  if (batch.negatives.size() != batch.size()) {
    throw DataError("loss batch: negatives list does not match interactions");
  }
  LossResult res{0.0, RowGrads(reps.dim()), RowGrads(reps.dim())};
  for (std::size_t r = 0; r < batch.size(); ++r) {
    if (batch.negatives[r].size() != 1) throw DataError("BPR needs exactly one negative per row");
    const auto [u, i] = batch.interactions[r];
    const Index j = batch.negatives[r][0];
    const double w = batch.weight(r);
    auto uv = reps.users.row(u);
    const double ci = raw_cosine(uv, reps.items.row(i));
    const double cj = raw_cosine(uv, reps.items.row(j));
    const double x = cj - ci;
    res.value += w * softplus(x);
    const double g = w * sigmoid(x);
    auto gu = res.user_grads.at(u);
    accumulate_cosine_grad(uv, reps.items.row(i), ci, -g, gu, res.item_grads.at(i));
    accumulate_cosine_grad(uv, reps.items.row(j), cj, g, gu, res.item_grads.at(j));
  }
  return res;
}

std::vector<double> ips_cn_weights(std::span<const Count> item_pop, std::span<const Index> items,
                                   double clip_max) {
  if (!(clip_max > 0.0)) throw ConfigError("IPS clip_max must be > 0");
  std::vector<double> w;
  w.reserve(items.size());
  double total = 0.0;
  for (Index i : items) {
    if (i >= item_pop.size() || item_pop[i] == 0) {
      throw DataError("IPS weight for an item absent from training");
    }
    w.push_back(std::min(1.0 / double(item_pop[i]), clip_max));
    total += w.back();
  }
  if (w.empty()) return w;
  const double scale = double(w.size()) / total;
  for (double& v : w) v *= scale;
  return w;
}

double ips_default_clip(std::span<const Count> item_pop, const std::vector<Interaction>& xs) {
  if (xs.empty()) throw DataError("IPS clip of an empty interaction set");
  std::vector<double> raw;
  raw.reserve(xs.size());
  for (const auto& x : xs) raw.push_back(1.0 / double(std::max<Count>(item_pop[x.item], 1)));
  auto mid = raw.begin() + std::ptrdiff_t(raw.size() / 2);
  std::nth_element(raw.begin(), mid, raw.end());
  double median = *mid;
  if (raw.size() % 2 == 0) {
    median = 0.5 * (median + *std::max_element(raw.begin(), mid));
  }
  return 10.0 * median;
}

double l2_penalty(const Matrix& params, std::span<const Index> rows, double coefficient,
                  RowGrads* grads) {
  if (coefficient < 0.0) throw ConfigError("L2 coefficient must be >= 0");
  if (coefficient == 0.0) return 0.0;
  std::unordered_set<Index> seen;
  double total = 0.0;
  for (Index r : rows) {
    if (!seen.insert(r).second) continue;
    auto v = params.row(r);
    double sq = 0.0;
    for (double x : v) sq += x * x;
    total += sq;
    if (grads) {
      auto g = grads->at(r);
      for (std::size_t k = 0; k < v.size(); ++k) g[k] += 2.0 * coefficient * v[k];
    }
  }
  return coefficient * total;
}

LossResult l2_penalty(const EmbeddingTable& table, std::span<const Index> users,
                      std::span<const Index> items, double coefficient) {
  LossResult res{0.0, RowGrads(table.dim()), RowGrads(table.dim())};
  res.value = l2_penalty(table.users, users, coefficient, &res.user_grads) +
              l2_penalty(table.items, items, coefficient, &res.item_grads);
  return res;
}

}  // namespace bcrec
