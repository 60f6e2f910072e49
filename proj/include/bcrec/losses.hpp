#pragma once

#include <span>
#include <utility>
#include <vector>

#include "bcrec/dataset.hpp"
#include "bcrec/encoders.hpp"
#include "bcrec/matrix.hpp"

namespace bcrec {

// One mini-batch of observed pairs with their sampled negatives N_u.
// `weights` is either empty (all ones) or one entry per interaction.
struct LossBatch {
  std::vector<std::pair<Index, Index>> interactions;
  std::vector<std::vector<Index>> negatives;
  std::vector<double> weights;

  std::size_t size() const noexcept { return interactions.size(); }
  double weight(std::size_t row) const { return weights.empty() ? 1.0 : weights[row]; }
};

// Loss value plus gradients w.r.t. the touched user and item rows.
struct LossResult {
  double value = 0.0;
  RowGrads user_grads;
  RowGrads item_grads;
};

// Below this sine of the positive angle the angular chain rule switches to a
// floored denominator (|cos| > 1 - 1e-7).
inline constexpr double kAngleGuardCos = 1.0 - 1e-7;

// Softmax-family loss over rows of `users`/`items`:
//   sum_r w_r * -log softmax_0( cos(theta_r0 + M_r)/tau, cos(theta_rj)/tau ... )
// `margins` empty means M = 0 everywhere. Logits are max-shifted before
// exponentiation. Margins are constants for differentiation.
LossResult contrastive_loss(const Matrix& users, const Matrix& items, const LossBatch& batch,
                            double tau, std::span<const double> margins = {});

// Sampled softmax over cosine scores.
LossResult softmax_loss(const EmbeddingTable& reps, const LossBatch& batch, double tau);

// Bias-margin contrastive loss: positive logit cos(theta_ui + M_ui) / tau1.
// Throws InvariantError when theta + M exceeds pi by more than 1e-9.
LossResult bc_loss(const EmbeddingTable& reps, const LossBatch& batch,
                   std::span<const double> margins, double tau1);

// sum -log sigmoid(y_ui - y_uj) on cosine scores; exactly one negative per row.
LossResult bpr_loss(const EmbeddingTable& reps, const LossBatch& batch);

// w = min(1 / p_i, clip_max), rescaled so the batch mean is 1.
std::vector<double> ips_cn_weights(std::span<const Count> item_pop, std::span<const Index> items,
                                   double clip_max);

// 10x the median of 1 / p_i over the given interactions.
double ips_default_clip(std::span<const Count> item_pop, const std::vector<Interaction>& xs);

// coefficient * sum ||row||^2 over the distinct rows listed; gradient
// 2 * coefficient * row accumulated into `grads` when non-null.
double l2_penalty(const Matrix& params, std::span<const Index> rows, double coefficient,
                  RowGrads* grads);

// Table form: user rows and item rows of one embedding table.
LossResult l2_penalty(const EmbeddingTable& table, std::span<const Index> users,
                      std::span<const Index> items, double coefficient);

}  // namespace bcrec
