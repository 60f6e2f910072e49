#pragma once

#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "bcrec/bias_extractor.hpp"
#include "bcrec/dataset.hpp"
#include "bcrec/encoders.hpp"
#include "bcrec/errors.hpp"
#include "bcrec/losses.hpp"
#include "json.hpp"

namespace bcrec {

// Raised when a loss or gradient turns non-finite.
class DivergenceError : public Error {
 public:
  using Error::Error;
};

enum class LossKind { kSoftmax, kBC, kBPR, kIpsCnBPR, kIpsCnSoftmax };
enum class NegativeMode { kAuto, kSampled, kInBatch };
enum class Schedule { kJoint, kTwoPhase };

LossKind parse_loss_kind(const std::string& name);
std::string loss_kind_name(LossKind kind);

struct TrainConfig {
  double lr = 1e-3;
  std::size_t batch_size = 2048;
  std::size_t dim = 64;
  double reg = 1e-5;
  // Temperature of the CF loss (softmax and BC).
  double tau1 = 0.08;
  // Temperature of the popularity extractor loss.
  double tau2 = 0.1;
  std::size_t num_negatives = 128;
  // kAuto: sampled for MF, in-batch for LightGCN.
  NegativeMode negative_mode = NegativeMode::kAuto;
  std::size_t patience = 10;
  std::size_t max_epochs = 1000;
  std::uint64_t seed = 2022;
  LossKind loss = LossKind::kBC;
  double margin_strength = 1.0;
  Schedule schedule = Schedule::kJoint;
  double init_stddev = 0.1;
  std::size_t eval_k = 20;
  // Also apply the L2 penalty to popularity embeddings.
  bool reg_popularity = true;
  // LightGCN: propagate once per epoch for the forward pass instead of per step.
  bool cached_propagation = false;
  // IPS-CN clip; nullopt means 10x the median raw weight.
  std::optional<double> ips_clip;
  std::size_t threads = 1;

  // Throws ConfigError on invalid settings.
  void validate() const;
  nlohmann::json to_json() const;
  // Unknown keys are rejected; missing keys keep the values already in `base`.
  static TrainConfig from_json(const nlohmann::json& j, TrainConfig base);
  static TrainConfig from_json(const nlohmann::json& j);
};

// First/second moment accumulators for one parameter matrix.
struct AdamState {
  static constexpr double kBeta1 = 0.9;
  static constexpr double kBeta2 = 0.999;
  static constexpr double kEps = 1e-8;

  Matrix m;
  Matrix v;
  std::uint64_t step = 0;

  AdamState() = default;
  AdamState(std::size_t rows, std::size_t cols) : m(rows, cols), v(rows, cols) {}
};

// Bias-corrected Adam applied to the rows listed in `grads` only; other rows
// (and their moments) are left untouched. Throws DivergenceError on NaN.
void adam_step(Matrix& params, const RowGrads& grads, AdamState& state, double lr);

// n uniform draws from the catalog, rejecting the user's training positives.
std::vector<Index> sample_negatives(const Dataset& train, Index user, std::size_t n,
                                    std::mt19937_64& rng);

// For each row, the distinct positive items of the other rows minus the
// row user's training positives. Rows may come back empty.
std::vector<std::vector<Index>> in_batch_negatives(
    const Dataset& train, std::span<const std::pair<Index, Index>> batch);

// Stops once `patience` epochs pass without a strict improvement.
class EarlyStopper {
 public:
  explicit EarlyStopper(std::size_t patience) : patience_(patience) {}
  // Returns true when training should stop after this epoch.
  bool update(std::size_t epoch, double metric);
  bool improved() const noexcept { return improved_; }
  std::size_t best_epoch() const noexcept { return best_epoch_; }
  double best_metric() const noexcept { return best_; }

 private:
  std::size_t patience_;
  std::size_t best_epoch_ = 0;
  std::size_t since_best_ = 0;
  double best_ = -std::numeric_limits<double>::infinity();
  bool improved_ = false;
};

struct EpochRecord {
  std::size_t epoch = 0;
  double loss = 0.0;            // mean CF loss per trained interaction
  double extractor_loss = 0.0;  // mean extractor loss, 0 when unused
  double val_recall = 0.0;
  std::optional<double> val_ndcg;
};

struct TrainReport {
  std::vector<EpochRecord> epochs;
  std::size_t best_epoch = 0;
  std::string stop_reason;
  double wall_seconds = 0.0;
  std::size_t extractor_epochs = 0;  // two-phase only

  nlohmann::json to_json() const;
  std::string metrics_csv() const;
};

struct TrainResult {
  EmbeddingTable table;
  std::optional<PopularityEmbeddings> extractor;
  TrainReport report;
};

struct TrainHooks {
  // Replaces validation Recall@K when set (epochs are 1-based).
  std::function<double(std::size_t epoch, const EmbeddingTable&)> validation_metric;
  // Called after each epoch's parameter updates, before early stopping.
  std::function<void(std::size_t epoch, const EmbeddingTable&, const PopularityEmbeddings*)>
      on_epoch_end;
  // Called once with the freshly initialized parameters.
  std::function<void(const EmbeddingTable&, const PopularityEmbeddings*)> on_init;
};

TrainResult train(const DataSplit& split, const EncoderKind& kind, const TrainConfig& config,
                  const TrainHooks& hooks = {});

}  // namespace bcrec
