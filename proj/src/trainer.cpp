#include "bcrec/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <sstream>
#include <unordered_set>

#include "bcrec/evaluator.hpp"

namespace bcrec {

LossKind parse_loss_kind(const std::string& name) {
  if (name == "softmax") return LossKind::kSoftmax;
  if (name == "bc") return LossKind::kBC;
  if (name == "bpr") return LossKind::kBPR;
  if (name == "ips-cn" || name == "ips-cn-bpr" || name == "ips_cn") return LossKind::kIpsCnBPR;
  if (name == "ips-cn-softmax") return LossKind::kIpsCnSoftmax;
  throw ConfigError("unknown loss '" + name + "'");
}

std::string loss_kind_name(LossKind kind) {
  switch (kind) {
    case LossKind::kSoftmax:
      return "softmax";
    case LossKind::kBC:
      return "bc";
    case LossKind::kBPR:
      return "bpr";
    case LossKind::kIpsCnBPR:
      return "ips-cn-bpr";
    case LossKind::kIpsCnSoftmax:
      return "ips-cn-softmax";
  }
  return "?";
}

namespace {

const char* negative_mode_name(NegativeMode m) {
  switch (m) {
    case NegativeMode::kAuto:
      return "auto";
    case NegativeMode::kSampled:
      return "sampled";
    case NegativeMode::kInBatch:
      return "in_batch";
  }
  return "?";
}

NegativeMode parse_negative_mode(const std::string& s) {
  if (s == "auto") return NegativeMode::kAuto;
  if (s == "sampled") return NegativeMode::kSampled;
  if (s == "in_batch" || s == "in-batch") return NegativeMode::kInBatch;
  throw ConfigError("unknown negative mode '" + s + "'");
}

bool uses_bpr(LossKind k) { return k == LossKind::kBPR || k == LossKind::kIpsCnBPR; }
bool uses_ips(LossKind k) { return k == LossKind::kIpsCnBPR || k == LossKind::kIpsCnSoftmax; }

}  // namespace

void TrainConfig::validate() const {
  auto positive = [](double v, const char* name) {
    if (!(v > 0.0) || !std::isfinite(v)) throw ConfigError(std::string(name) + " must be > 0");
  };
  positive(lr, "lr");
  positive(tau1, "tau1");
  positive(tau2, "tau2");
  positive(init_stddev, "init_stddev");
  if (!(margin_strength >= 0.0)) throw ConfigError("margin_strength must be >= 0");
  if (!(reg >= 0.0)) throw ConfigError("reg must be >= 0");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (dim < 1) throw ConfigError("dim must be >= 1");
  if (num_negatives < 1) throw ConfigError("num_negatives must be >= 1");
  if (max_epochs < 1) throw ConfigError("max_epochs must be >= 1");
  if (eval_k < 1) throw ConfigError("eval_k must be >= 1");
  if (ips_clip && !(*ips_clip > 0.0)) throw ConfigError("ips_clip must be > 0");
}

nlohmann::json TrainConfig::to_json() const {
  return {{"lr", lr},
          {"batch_size", batch_size},
          {"dim", dim},
          {"reg", reg},
          {"tau1", tau1},
          {"tau2", tau2},
          {"num_negatives", num_negatives},
          {"negative_mode", negative_mode_name(negative_mode)},
          {"patience", patience},
          {"max_epochs", max_epochs},
          {"seed", seed},
          {"loss", loss_kind_name(loss)},
          {"margin_strength", margin_strength},
          {"schedule", schedule == Schedule::kJoint ? "joint" : "two_phase"},
          {"init_stddev", init_stddev},
          {"eval_k", eval_k},
          {"reg_popularity", reg_popularity},
          {"cached_propagation", cached_propagation},
          {"ips_clip", ips_clip ? nlohmann::json(*ips_clip) : nlohmann::json(nullptr)},
          {"threads", threads}};
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j) { return from_json(j, TrainConfig{}); }

TrainConfig TrainConfig::from_json(const nlohmann::json& j, TrainConfig c) {
  if (!j.is_object()) throw ConfigError("training config must be a JSON object");
  try {
    for (const auto& [key, v] : j.items()) {
      if (key == "lr") c.lr = v.get<double>();
      else if (key == "batch_size") c.batch_size = v.get<std::size_t>();
      else if (key == "dim") c.dim = v.get<std::size_t>();
      else if (key == "reg") c.reg = v.get<double>();
      else if (key == "tau1") c.tau1 = v.get<double>();
      else if (key == "tau2") c.tau2 = v.get<double>();
      else if (key == "num_negatives") c.num_negatives = v.get<std::size_t>();
      else if (key == "negative_mode") c.negative_mode = parse_negative_mode(v.get<std::string>());
      else if (key == "patience") c.patience = v.get<std::size_t>();
      else if (key == "max_epochs") c.max_epochs = v.get<std::size_t>();
      else if (key == "seed") c.seed = v.get<std::uint64_t>();
      else if (key == "loss") c.loss = parse_loss_kind(v.get<std::string>());
      else if (key == "margin_strength") c.margin_strength = v.get<double>();
      else if (key == "schedule") {
        const auto s = v.get<std::string>();
        if (s == "joint") c.schedule = Schedule::kJoint;
        else if (s == "two_phase" || s == "two-phase") c.schedule = Schedule::kTwoPhase;
        else throw ConfigError("unknown schedule '" + s + "'");
      } else if (key == "init_stddev") c.init_stddev = v.get<double>();
      else if (key == "eval_k") c.eval_k = v.get<std::size_t>();
      else if (key == "reg_popularity") c.reg_popularity = v.get<bool>();
      else if (key == "cached_propagation") c.cached_propagation = v.get<bool>();
      else if (key == "ips_clip") {
        if (v.is_null()) c.ips_clip.reset();
        else c.ips_clip = v.get<double>();
      } else if (key == "threads") c.threads = v.get<std::size_t>();
      else throw ConfigError("unknown config key '" + key + "'");
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("bad config value: ") + e.what());
  }
  return c;
}

void adam_step(Matrix& params, const RowGrads& grads, AdamState& state, double lr) {
  if (state.m.rows() != params.rows() || state.m.cols() != params.cols() ||
      grads.cols() != params.cols()) {
    throw DataError("adam_step: shape mismatch");
  }
  for (std::size_t k = 0; k < grads.size(); ++k) {
    for (double g : grads.value(k)) {
      if (std::isnan(g)) {
        throw DivergenceError("NaN gradient on row " + std::to_string(grads.touched()[k]));
      }
    }
  }
  ++state.step;
  const double t = double(state.step);
  const double c1 = 1.0 - std::pow(AdamState::kBeta1, t);
  const double c2 = 1.0 - std::pow(AdamState::kBeta2, t);
  for (std::size_t k = 0; k < grads.size(); ++k) {
    const std::size_t r = grads.touched()[k];
    auto g = grads.value(k);
    auto p = params.row(r);
    auto m = state.m.row(r);
    auto v = state.v.row(r);
    for (std::size_t c = 0; c < p.size(); ++c) {
      m[c] = AdamState::kBeta1 * m[c] + (1.0 - AdamState::kBeta1) * g[c];
      v[c] = AdamState::kBeta2 * v[c] + (1.0 - AdamState::kBeta2) * g[c] * g[c];
      const double mhat = m[c] / c1;
      const double vhat = v[c] / c2;
      p[c] -= lr * mhat / (std::sqrt(vhat) + AdamState::kEps);
    }
  }
}

std::vector<Index> sample_negatives(const Dataset& train, Index user, std::size_t n,
                                    std::mt19937_64& rng) {
  std::vector<Index> out;
  if (n == 0) return out;
  if (train.user_positives(user).size() >= train.num_items()) {
    throw DataError("user " + std::to_string(user) + " has interacted with every item");
  }
  std::uniform_int_distribution<Index> pick(0, Index(train.num_items() - 1));
  out.reserve(n);
  while (out.size() < n) {
    const Index j = pick(rng);
    if (!train.contains(user, j)) out.push_back(j);
  }
  return out;
}

std::vector<std::vector<Index>> in_batch_negatives(
    const Dataset& train, std::span<const std::pair<Index, Index>> batch) {
  if (batch.size() < 2) throw DataError("in-batch negatives need a batch of at least 2");
  std::vector<Index> items;
  std::unordered_set<Index> seen;
  for (const auto& [u, i] : batch) {
    if (seen.insert(i).second) items.push_back(i);
  }
  std::vector<std::vector<Index>> out(batch.size());
  for (std::size_t r = 0; r < batch.size(); ++r) {
    const auto [u, i] = batch[r];
    for (Index j : items) {
      if (j != i && !train.contains(u, j)) out[r].push_back(j);
    }
  }
  return out;
}

bool EarlyStopper::update(std::size_t epoch, double metric) {
  improved_ = metric > best_;
  if (improved_) {
    best_ = metric;
    best_epoch_ = epoch;
    since_best_ = 0;
    return false;
  }
  ++since_best_;
  return since_best_ >= patience_;
}

nlohmann::json TrainReport::to_json() const {
  nlohmann::json eps = nlohmann::json::array();
  for (const auto& e : epochs) {
    eps.push_back({{"epoch", e.epoch},
                   {"loss", e.loss},
                   {"extractor_loss", e.extractor_loss},
                   {"val_recall", e.val_recall},
                   {"val_ndcg", e.val_ndcg ? nlohmann::json(*e.val_ndcg) : nlohmann::json()}});
  }
  return {{"epochs", eps},
          {"best_epoch", best_epoch},
          {"stop_reason", stop_reason},
          {"extractor_epochs", extractor_epochs},
          {"wall_seconds", wall_seconds}};
}

std::string TrainReport::metrics_csv() const {
  std::ostringstream out;
  out.precision(17);
  out << "epoch,loss,extractor_loss,val_recall,val_ndcg\n";
  for (const auto& e : epochs) {
    out << e.epoch << ',' << e.loss << ',' << e.extractor_loss << ',' << e.val_recall << ',';
    if (e.val_ndcg) out << *e.val_ndcg;
    out << '\n';
  }
  return out.str();
}

namespace {

RowGrads dense_to_rows(const Matrix& dense) {
  RowGrads out(dense.cols());
  for (std::size_t r = 0; r < dense.rows(); ++r) {
    auto row = dense.row(r);
    if (std::any_of(row.begin(), row.end(), [](double x) { return x != 0.0; })) {
      auto dst = out.at(r);
      std::copy(row.begin(), row.end(), dst.begin());
    }
  }
  return out;
}

// The layer-mean propagation is a symmetric linear map, so the gradient of
// the ego embeddings is the same map applied to the output gradient.
void backprop_lightgcn(const NormalizedAdjacency& adj, std::size_t layers, RowGrads& user_grads,
                       RowGrads& item_grads, std::size_t dim) {
  EmbeddingTable g(adj.num_users(), adj.num_items(), dim);
  for (std::size_t k = 0; k < user_grads.size(); ++k) {
    auto src = user_grads.value(k);
    std::copy(src.begin(), src.end(), g.users.row(user_grads.touched()[k]).begin());
  }
  for (std::size_t k = 0; k < item_grads.size(); ++k) {
    auto src = item_grads.value(k);
    std::copy(src.begin(), src.end(), g.items.row(item_grads.touched()[k]).begin());
  }
  auto back = lightgcn_propagate(g, adj, layers);
  user_grads = dense_to_rows(back.users);
  item_grads = dense_to_rows(back.items);
}

struct Trainer {
  const DataSplit& split;
  const EncoderKind& kind;
  const TrainConfig& cfg;
  const TrainHooks& hooks;
  const Dataset& train;

  std::mt19937_64 rng;
  EmbeddingTable table;
  AdamState adam_users, adam_items;
  std::optional<PopularityEmbeddings> pe;
  AdamState adam_pop_users, adam_pop_items;
  std::optional<NormalizedAdjacency> adj;
  bool in_batch = false;
  bool extractor_frozen = false;
  double ips_clip = 0.0;
  std::optional<EmbeddingTable> cached_reps;

  Trainer(const DataSplit& s, const EncoderKind& k, const TrainConfig& c, const TrainHooks& h)
      : split(s), kind(k), cfg(c), hooks(h), train(s.train), rng(c.seed) {
    table = EmbeddingTable::random_normal(train.num_users(), train.num_items(), cfg.dim,
                                          cfg.init_stddev, rng);
    adam_users = AdamState(train.num_users(), cfg.dim);
    adam_items = AdamState(train.num_items(), cfg.dim);
    if (cfg.loss == LossKind::kBC) {
      pe = PopularityEmbeddings::for_dataset(train, cfg.dim, cfg.init_stddev, rng);
      adam_pop_users = AdamState(pe->user_vecs().rows(), cfg.dim);
      adam_pop_items = AdamState(pe->item_vecs().rows(), cfg.dim);
    }
    if (kind.is_lightgcn()) adj.emplace(train);
    in_batch = cfg.negative_mode == NegativeMode::kInBatch ||
               (cfg.negative_mode == NegativeMode::kAuto && kind.is_lightgcn());
    if (uses_ips(cfg.loss)) {
      ips_clip = cfg.ips_clip ? *cfg.ips_clip : ips_default_clip(train.item_pop(), train.interactions());
    }
  }

  const EmbeddingTable& representations() {
    if (!kind.is_lightgcn()) return table;
    if (!cfg.cached_propagation || !cached_reps) {
      cached_reps = lightgcn_propagate(table, *adj, kind.layers);
    }
    return *cached_reps;
  }

  // Builds the batch (with negatives) from interaction indices; rows whose
  // negative set is empty are dropped.
  LossBatch make_batch(std::span<const std::size_t> picks, bool single_negative) {
    LossBatch b;
    std::vector<std::pair<Index, Index>> rows;
    rows.reserve(picks.size());
    for (auto n : picks) {
      const auto& x = train.interactions()[n];
      rows.emplace_back(x.user, x.item);
    }
    std::vector<std::vector<Index>> negs;
    if (single_negative || !in_batch || rows.size() < 2) {
      const std::size_t count = single_negative ? 1 : cfg.num_negatives;
      for (const auto& [u, i] : rows) negs.push_back(sample_negatives(train, u, count, rng));
    } else {
      negs = in_batch_negatives(train, rows);
    }
    for (std::size_t r = 0; r < rows.size(); ++r) {
      if (negs[r].empty()) continue;
      b.interactions.push_back(rows[r]);
      b.negatives.push_back(std::move(negs[r]));
    }
    return b;
  }

  static std::vector<Index> touched_items(const LossBatch& b) {
    std::vector<Index> items;
    for (std::size_t r = 0; r < b.size(); ++r) {
      items.push_back(b.interactions[r].second);
      items.insert(items.end(), b.negatives[r].begin(), b.negatives[r].end());
    }
    return items;
  }

  static void check_finite(double v, const char* what) {
    if (!std::isfinite(v)) throw DivergenceError(std::string("non-finite ") + what);
  }

  // Extractor loss + optional popularity L2, and its Adam step.
  double extractor_step(const LossBatch& b) {
    auto ext = extractor_loss(*pe, b, train.user_pop(), train.item_pop(), cfg.tau2);
    check_finite(ext.value, "extractor loss");
    if (cfg.reg_popularity && cfg.reg > 0.0) {
      std::vector<Index> urows, irows;
      for (std::size_t r = 0; r < b.size(); ++r) {
        urows.push_back(pe->user_row(train.user_pop()[b.interactions[r].first]));
        irows.push_back(pe->item_row(train.item_pop()[b.interactions[r].second]));
        for (Index j : b.negatives[r]) irows.push_back(pe->item_row(train.item_pop()[j]));
      }
      l2_penalty(pe->user_vecs(), urows, cfg.reg, &ext.user_grads);
      l2_penalty(pe->item_vecs(), irows, cfg.reg, &ext.item_grads);
    }
    adam_step(pe->user_vecs(), ext.user_grads, adam_pop_users, cfg.lr);
    adam_step(pe->item_vecs(), ext.item_grads, adam_pop_items, cfg.lr);
    return ext.value;
  }

  // One optimizer step; returns {cf loss sum, extractor loss sum, rows}.
  std::tuple<double, double, std::size_t> step(std::span<const std::size_t> picks) {
    LossBatch b = make_batch(picks, uses_bpr(cfg.loss));
    if (b.size() == 0) return {0.0, 0.0, 0};
    const auto& reps = representations();

    if (uses_ips(cfg.loss)) {
      std::vector<Index> items;
      for (const auto& pr : b.interactions) items.push_back(pr.second);
      b.weights = ips_cn_weights(train.item_pop(), items, ips_clip);
    }

    LossResult res;
    switch (cfg.loss) {
      case LossKind::kSoftmax:
      case LossKind::kIpsCnSoftmax:
        res = softmax_loss(reps, b, cfg.tau1);
        break;
      case LossKind::kBPR:
      case LossKind::kIpsCnBPR:
        res = bpr_loss(reps, b);
        break;
      case LossKind::kBC: {
        std::vector<double> margins(b.size());
        for (std::size_t r = 0; r < b.size(); ++r) {
          const auto [u, i] = b.interactions[r];
          const double xi = bias_angle(*pe, train.user_pop()[u], train.item_pop()[i]);
          const double theta = angle(reps.users.row(u), reps.items.row(i));
          margins[r] = margin(xi, theta, cfg.margin_strength);
        }
        res = bc_loss(reps, b, margins, cfg.tau1);
        break;
      }
    }
    check_finite(res.value, "training loss");

    if (kind.is_lightgcn()) backprop_lightgcn(*adj, kind.layers, res.user_grads, res.item_grads, cfg.dim);

    std::vector<Index> users;
    for (const auto& pr : b.interactions) users.push_back(pr.first);
    const auto items = touched_items(b);
    l2_penalty(table.users, users, cfg.reg, &res.user_grads);
    l2_penalty(table.items, items, cfg.reg, &res.item_grads);

    double ext_value = 0.0;
    if (pe && !extractor_frozen) ext_value = extractor_step(b);

    adam_step(table.users, res.user_grads, adam_users, cfg.lr);
    adam_step(table.items, res.item_grads, adam_items, cfg.lr);
    return {res.value, ext_value, b.size()};
  }

  std::vector<std::size_t> shuffled_order() {
    std::vector<std::size_t> order(train.size());
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    return order;
  }

  // Two-phase schedule: fit the extractor alone with early stopping on its
  // validation loss, then freeze it.
  std::size_t fit_extractor() {
    std::mt19937_64 val_rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);
    LossBatch val;
    for (const auto& x : split.validation.interactions()) {
      if (train.user_positives(x.user).size() >= train.num_items()) continue;
      val.interactions.emplace_back(x.user, x.item);
      val.negatives.push_back(sample_negatives(train, x.user, cfg.num_negatives, val_rng));
    }
    EarlyStopper stopper(cfg.patience);
    PopularityEmbeddings best = *pe;
    std::size_t epoch = 0;
    for (epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
      auto order = shuffled_order();
      for (std::size_t s = 0; s < order.size(); s += cfg.batch_size) {
        const std::size_t e = std::min(order.size(), s + cfg.batch_size);
        LossBatch b = make_batch(std::span(order).subspan(s, e - s), false);
        if (b.size() > 0) extractor_step(b);
      }
      const double metric =
          val.size() > 0
              ? -extractor_loss(*pe, val, train.user_pop(), train.item_pop(), cfg.tau2).value
              : -double(epoch);
      const bool stop = stopper.update(epoch, metric);
      if (stopper.improved()) best = *pe;
      if (stop) break;
    }
    *pe = std::move(best);
    extractor_frozen = true;
    return std::min(epoch, cfg.max_epochs);
  }

  double validation(std::size_t epoch, std::optional<double>& ndcg) {
    if (hooks.validation_metric) return hooks.validation_metric(epoch, table);
    if (split.validation.empty()) throw DataError("early stopping needs a nonempty validation set");
    ScoringModel model(kind, table, adj ? &*adj : nullptr);
    auto rep = evaluate(model, split.validation, train, {}, cfg.eval_k, "validation", cfg.threads);
    ndcg = rep.overall.ndcg;
    return rep.overall.recall.value_or(0.0);
  }

  TrainResult run() {
    const auto t0 = std::chrono::steady_clock::now();
    TrainResult out;
    if (hooks.on_init) hooks.on_init(table, pe ? &*pe : nullptr);
    if (pe && cfg.schedule == Schedule::kTwoPhase) out.report.extractor_epochs = fit_extractor();

    EarlyStopper stopper(cfg.patience);
    out.table = table;
    out.extractor = pe;
    out.report.stop_reason = "max_epochs";
    for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
      EpochRecord rec;
      rec.epoch = epoch;
      double loss = 0.0, ext = 0.0;
      std::size_t rows = 0;
      try {
        cached_reps.reset();
        auto order = shuffled_order();
        for (std::size_t s = 0; s < order.size(); s += cfg.batch_size) {
          const std::size_t e = std::min(order.size(), s + cfg.batch_size);
          auto [l, x, n] = step(std::span(order).subspan(s, e - s));
          loss += l;
          ext += x;
          rows += n;
        }
      } catch (const DivergenceError& err) {
        out.report.stop_reason = std::string("diverged: ") + err.what();
        break;
      }
      rec.loss = rows ? loss / double(rows) : 0.0;
      rec.extractor_loss = rows ? ext / double(rows) : 0.0;
      rec.val_recall = validation(epoch, rec.val_ndcg);
      out.report.epochs.push_back(rec);
      if (hooks.on_epoch_end) hooks.on_epoch_end(epoch, table, pe ? &*pe : nullptr);
      const bool stop = stopper.update(epoch, rec.val_recall);
      if (stopper.improved()) {
        out.table = table;
        out.extractor = pe;
        out.report.best_epoch = epoch;
      }
      if (stop) {
        out.report.stop_reason = "patience";
        break;
      }
    }
    out.report.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return out;
  }
};

}  // namespace

TrainResult train(const DataSplit& split, const EncoderKind& kind, const TrainConfig& config,
                  const TrainHooks& hooks) {
  config.validate();
  if (split.train.empty()) throw DataError("training split is empty");
  Trainer trainer(split, kind, config, hooks);
  return trainer.run();
}

}  // namespace bcrec
