#include "cli.hpp"

#include <openssl/evp.h>
#include <spdlog/sinks/ostream_sink.h>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <optional>
#include <ostream>
#include <random>
#include <sstream>

#include "CLI11.hpp"
#include "bcrec/bias_extractor.hpp"
#include "bcrec/dataset.hpp"
#include "bcrec/diagnostics.hpp"
#include "bcrec/encoders.hpp"
#include "bcrec/errors.hpp"
#include "bcrec/evaluator.hpp"
#include "bcrec/split_io.hpp"
#include "bcrec/synth.hpp"
#include "bcrec/trainer.hpp"
#include "json.hpp"

namespace bcrec::cli {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

constexpr int kManifestSchema = 1;
const std::vector<std::string> kMembers{"validation", "test_imbalanced", "test_balanced",
                                        "test_temporal"};

struct Globals {
  std::optional<std::uint64_t> seed;
  std::string out;
  std::string config;
  std::optional<std::size_t> threads;
  std::string log_level = "info";
};

struct Context {
  Globals g;
  json file = json::object();
  std::shared_ptr<spdlog::logger> log;
  std::ostream* out = nullptr;

  json section(const char* name) const {
    if (!file.contains(name)) return json::object();
    const auto& s = file.at(name);
    if (!s.is_object()) throw ConfigError(std::string("config section '") + name + "' must be an object");
    return s;
  }
  fs::path out_dir() const {
    if (g.out.empty()) throw ConfigError("--out is required");
    fs::create_directories(g.out);
    return g.out;
  }
};

json read_config_file(const std::string& path) {
  if (path.empty()) return json::object();
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path);
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError("config file " + path + ": " + e.what());
  }
  if (!j.is_object()) throw ConfigError("config file must hold a JSON object");
  return j;
}

std::string sha256_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read " + path.string());
  std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(), EVP_MD_CTX_free);
  EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr);
  char buf[1 << 16];
  while (in.read(buf, sizeof buf) || in.gcount() > 0) {
    EVP_DigestUpdate(ctx.get(), buf, static_cast<std::size_t>(in.gcount()));
  }
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_DigestFinal_ex(ctx.get(), md, &len);
  std::ostringstream hex;
  for (unsigned int k = 0; k < len; ++k) hex << std::hex << std::setw(2) << std::setfill('0') << int(md[k]);
  return hex.str();
}

// Files are hashed directly; directories contribute each regular file.
json describe_inputs(const std::vector<std::string>& paths) {
  json inputs = json::object();
  for (const auto& p : paths) {
    if (fs::is_directory(p)) {
      std::vector<fs::path> files;
      for (const auto& e : fs::directory_iterator(p))
        if (e.is_regular_file()) files.push_back(e.path());
      std::sort(files.begin(), files.end());
      for (const auto& f : files) inputs[f.string()] = {{"sha256", sha256_file(f)}};
    } else {
      inputs[p] = {{"sha256", sha256_file(p)}};
    }
  }
  return inputs;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  f << text;
  if (!f) throw Error("cannot write " + path.string());
}

void write_json(const fs::path& path, const json& j) { write_text(path, j.dump(2) + "\n"); }

void write_run_manifest(const fs::path& dir, const std::string& command, std::uint64_t seed,
                        const json& config, const json& inputs, std::vector<std::string> outputs) {
  outputs.push_back("run.json");
  write_json(dir / "run.json", {{"schema_version", kManifestSchema},
                                {"version", BCREC_VERSION},
                                {"command", command},
                                {"seed", seed},
                                {"config", config},
                                {"inputs", inputs},
                                {"outputs", outputs}});
}

template <class T>
void put(json& j, const char* key, const std::optional<T>& v) {
  if (v) j[key] = *v;
}

// ---- synth -----------------------------------------------------------------

struct SynthFlags {
  std::optional<std::size_t> users, items, latent_dim, min_interactions, ground_truth;
  std::optional<double> zipf, bias, sharpness, mean_interactions;
};

void add_synth(CLI::App& app, SynthFlags& f) {
  app.add_option("--users", f.users, "number of users (default 200)");
  app.add_option("--items", f.items, "number of items (default 300)");
  app.add_option("--latent-dim", f.latent_dim, "preference latent dimension, 0 = none (default 4)");
  app.add_option("--zipf", f.zipf, "item popularity Zipf exponent (default 1.2)");
  app.add_option("--bias", f.bias, "exposure bias strength (default 1)");
  app.add_option("--sharpness", f.sharpness, "preference sharpness (default 8)");
  app.add_option("--mean-interactions", f.mean_interactions, "mean observed items per user (default 20)");
  app.add_option("--min-interactions", f.min_interactions, "minimum observed items per user (default 5)");
  app.add_option("--ground-truth", f.ground_truth,
                 "ground-truth items per user, 0 = match the observed count (default 0)");
}

int cmd_synth(Context& ctx, const SynthFlags& f) {
  json over = json::object();
  put(over, "num_users", f.users);
  put(over, "num_items", f.items);
  put(over, "latent_dim", f.latent_dim);
  put(over, "zipf_exponent", f.zipf);
  put(over, "bias_strength", f.bias);
  put(over, "preference_sharpness", f.sharpness);
  put(over, "mean_interactions", f.mean_interactions);
  put(over, "min_interactions", f.min_interactions);
  put(over, "ground_truth_per_user", f.ground_truth);
  put(over, "seed", ctx.g.seed);
  auto cfg = SynthConfig::from_json(over, SynthConfig::from_json(ctx.section("synth"), {}));
  cfg.validate();
  const auto dir = ctx.out_dir();
  ctx.log->info("synthesizing {} users x {} items", cfg.num_users, cfg.num_items);
  auto data = synthesize(cfg);
  write_synth(dir, cfg, data);
  write_run_manifest(dir, "synth", cfg.seed, cfg.to_json(), json::object(),
                     {"interactions.tsv", "ground_truth.tsv", "synth.json"});
  *ctx.out << "observed " << data.observed.size() << " ground_truth " << data.ground_truth.size()
           << '\n';
  return 0;
}

// ---- split -----------------------------------------------------------------

struct SplitFlags {
  std::string input;
  std::optional<std::string> strategy, separator;
  std::vector<double> fractions;
  std::optional<std::size_t> k_core;
};

void add_split(CLI::App& app, SplitFlags& f) {
  app.add_option("--input", f.input, "interaction file <user> <item> [timestamp]")->required();
  app.add_option("--strategy", f.strategy, "random or temporal (default random)")
      ->check(CLI::IsMember({"random", "temporal"}));
  app.add_option("--fractions", f.fractions,
                 "random: balanced,train,validation,test (default 0.15,0.6,0.1,0.15); "
                 "temporal: train,validation,test (default 0.7,0.1,0.2)")
      ->delimiter(',');
  app.add_option("--k-core", f.k_core, "apply k-core filtering first, 0 = off (default 0)");
  app.add_option("--sep", f.separator, "field separator: tab, space, ws, comma or a character (default tab)");
}

int cmd_split(Context& ctx, const SplitFlags& f) {
  json cfg = {{"strategy", "random"}, {"k_core", 0}, {"separator", "tab"}, {"seed", 0}};
  for (const auto& [key, v] : ctx.section("split").items()) {
    if (!cfg.contains(key) && key != "fractions") throw ConfigError("unknown split key '" + key + "'");
    cfg[key] = v;
  }
  put(cfg, "strategy", f.strategy);
  put(cfg, "k_core", f.k_core);
  put(cfg, "separator", f.separator);
  put(cfg, "seed", ctx.g.seed);
  if (!f.fractions.empty()) cfg["fractions"] = f.fractions;

  std::string strategy;
  std::size_t k_core = 0;
  std::uint64_t seed = 0;
  std::optional<std::vector<double>> fractions;
  std::optional<char> sep;
  try {
    strategy = cfg.at("strategy").get<std::string>();
    k_core = cfg.at("k_core").get<std::size_t>();
    seed = cfg.at("seed").get<std::uint64_t>();
    sep = parse_separator(cfg.at("separator").get<std::string>());
    if (cfg.contains("fractions")) fractions = cfg.at("fractions").get<std::vector<double>>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("bad split setting: ") + e.what());
  }
  if (strategy != "random" && strategy != "temporal")
    throw ConfigError("unknown split strategy '" + strategy + "'");

  Dataset ds = load_interactions(f.input, TextFormat{sep});
  ctx.log->info("loaded {} interactions ({} users, {} items)", ds.size(), ds.num_users(), ds.num_items());
  if (k_core > 0) {
    ds = k_core_filter(ds, k_core);
    ctx.log->info("{}-core keeps {} interactions", k_core, ds.size());
  }

  DataSplit split;
  if (strategy == "random") {
    SplitFractions fr;
    if (fractions) {
      if (fractions->size() != 4) throw ConfigError("random split takes 4 fractions");
      fr = {(*fractions)[0], (*fractions)[1], (*fractions)[2], (*fractions)[3]};
    }
    cfg["fractions"] = {fr.balanced, fr.train, fr.validation, fr.test};
    split = split_random(ds, fr, seed);
  } else {
    if (!ds.has_all_timestamps())
      throw ConfigError("temporal split strategy needs a timestamp on every interaction in " + f.input);
    TemporalRatios r;
    if (fractions) {
      if (fractions->size() != 3) throw ConfigError("temporal split takes 3 fractions");
      r = {(*fractions)[0], (*fractions)[1], (*fractions)[2]};
    }
    cfg["fractions"] = {r.train, r.validation, r.test};
    split = split_temporal(ds, r, seed);
  }

  const auto dir = ctx.out_dir();
  auto manifest = write_split(dir, split, {{"strategy", strategy}, {"seed", seed}, {"k_core", k_core}});
  std::vector<std::string> outputs{kSplitManifest};
  for (const auto& [member, file] : manifest.at("files").items()) outputs.push_back(file.get<std::string>());
  write_run_manifest(dir, "split", seed, cfg, describe_inputs({f.input}), outputs);
  for (const auto& [member, n] : manifest.at("counts").items()) *ctx.out << member << ' ' << n << '\n';
  return 0;
}

// ---- train -----------------------------------------------------------------

struct TrainFlags {
  std::string split;
  std::optional<std::string> encoder, loss, negative_mode, schedule;
  std::optional<std::size_t> layers, batch_size, dim, negatives, patience, max_epochs, eval_k;
  std::optional<double> lr, reg, tau1, tau2, margin_strength, init_stddev, ips_clip;
};

const std::vector<std::string> kLossNames{"softmax", "bc", "bpr", "ips-cn", "ips-cn-bpr",
                                          "ips-cn-softmax"};

void add_train(CLI::App& app, TrainFlags& f) {
  app.add_option("--split", f.split, "split directory")->required();
  app.add_option("--encoder", f.encoder, "mf or lightgcn (default mf)")
      ->check(CLI::IsMember({"mf", "lightgcn"}));
  app.add_option("--layers", f.layers, "LightGCN layers (default 2)");
  app.add_option("--loss", f.loss, "softmax, bc, bpr, ips-cn, ips-cn-bpr, ips-cn-softmax (default bc)")
      ->check(CLI::IsMember(kLossNames));
  app.add_option("--lr", f.lr, "Adam learning rate (default 1e-3)");
  app.add_option("--batch-size", f.batch_size, "interactions per step (default 2048)");
  app.add_option("--dim", f.dim, "embedding dimension (default 64)");
  app.add_option("--reg", f.reg, "L2 coefficient (default 1e-5)");
  app.add_option("--tau1", f.tau1, "CF loss temperature (default 0.08)");
  app.add_option("--tau2", f.tau2, "popularity extractor temperature (default 0.1)");
  app.add_option("--negatives", f.negatives, "sampled negatives per interaction (default 128)");
  app.add_option("--negative-mode", f.negative_mode, "auto, sampled or in_batch (default auto)");
  app.add_option("--patience", f.patience, "early stopping patience in epochs (default 10)");
  app.add_option("--max-epochs", f.max_epochs, "epoch limit (default 1000)");
  app.add_option("--margin-strength", f.margin_strength, "margin multiplier lambda (default 1)");
  app.add_option("--schedule", f.schedule, "joint or two_phase (default joint)");
  app.add_option("--init-stddev", f.init_stddev, "initial embedding stddev (default 0.1)");
  app.add_option("--eval-k", f.eval_k, "validation Recall@K cutoff (default 20)");
  app.add_option("--ips-clip", f.ips_clip, "IPS-CN weight clip (default 10x median weight)");
}

int cmd_train(Context& ctx, const TrainFlags& f) {
  json file = ctx.section("train");
  std::string encoder = "mf";
  std::size_t layers = 2;
  try {
    if (file.contains("encoder")) encoder = file.at("encoder").get<std::string>();
    if (file.contains("layers")) layers = file.at("layers").get<std::size_t>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("bad train setting: ") + e.what());
  }
  file.erase("encoder");
  file.erase("layers");
  if (f.encoder) encoder = *f.encoder;
  if (f.layers) layers = *f.layers;
  if (encoder != "mf" && encoder != "lightgcn") throw ConfigError("unknown encoder '" + encoder + "'");
  const auto kind = encoder == "mf" ? EncoderKind::mf() : EncoderKind::lightgcn(layers);

  json over = json::object();
  put(over, "loss", f.loss);
  put(over, "lr", f.lr);
  put(over, "batch_size", f.batch_size);
  put(over, "dim", f.dim);
  put(over, "reg", f.reg);
  put(over, "tau1", f.tau1);
  put(over, "tau2", f.tau2);
  put(over, "num_negatives", f.negatives);
  put(over, "negative_mode", f.negative_mode);
  put(over, "patience", f.patience);
  put(over, "max_epochs", f.max_epochs);
  put(over, "margin_strength", f.margin_strength);
  put(over, "schedule", f.schedule);
  put(over, "init_stddev", f.init_stddev);
  put(over, "eval_k", f.eval_k);
  put(over, "ips_clip", f.ips_clip);
  put(over, "seed", ctx.g.seed);
  put(over, "threads", ctx.g.threads);
  const auto cfg = TrainConfig::from_json(over, TrainConfig::from_json(file));
  cfg.validate();

  json resolved = cfg.to_json();
  resolved["encoder"] = kind.name();
  resolved["layers"] = kind.layers;
  *ctx.out << "config " << resolved.dump() << '\n';

  auto split = read_split(f.split);
  const auto dir = ctx.out_dir();
  ctx.log->info("training {} / {} on {} interactions", kind.name(), loss_kind_name(cfg.loss), split.train.size());
  TrainHooks hooks;
  hooks.on_epoch_end = [&](std::size_t epoch, const EmbeddingTable&, const PopularityEmbeddings*) {
    ctx.log->debug("epoch {} done", epoch);
  };
  auto res = train(split, kind, cfg, hooks);
  ctx.log->info("stopped after {} epochs ({}), best epoch {}", res.report.epochs.size(),
                res.report.stop_reason, res.report.best_epoch);

  json report = res.report.to_json();
  report.erase("wall_seconds");
  Checkpoint ckpt{kind, res.table,
                  {{"version", BCREC_VERSION}, {"config", resolved}, {"best_epoch", res.report.best_epoch}}};
  save_checkpoint(dir / "model.ckpt", ckpt);
  std::vector<std::string> outputs{"model.ckpt", "metrics.csv", "report.json"};
  if (res.extractor) {
    save_extractor(dir / "extractor.bin", *res.extractor);
    outputs.push_back("extractor.bin");
  }
  write_text(dir / "metrics.csv", res.report.metrics_csv());
  write_json(dir / "report.json", report);
  write_run_manifest(dir, "train", cfg.seed, resolved, describe_inputs({f.split}), outputs);
  const auto& best = res.report.epochs.at(res.report.best_epoch - 1);
  *ctx.out << "best_epoch " << res.report.best_epoch << " val_recall " << best.val_recall << '\n';
  return 0;
}

// ---- shared model loading --------------------------------------------------

struct LoadedModel {
  Checkpoint ckpt;
  NormalizedAdjacency adj;
  std::optional<ScoringModel> model;
};

void load_model(LoadedModel& m, const std::string& path, const Dataset& train) {
  m.ckpt = load_checkpoint(path);
  if (m.ckpt.table.num_users() != train.num_users() || m.ckpt.table.num_items() != train.num_items())
    throw DataError("checkpoint " + path + " does not match the split's user/item counts");
  if (m.ckpt.kind.is_lightgcn()) m.adj = NormalizedAdjacency(train);
  m.model.emplace(m.ckpt.kind, m.ckpt.table, m.ckpt.kind.is_lightgcn() ? &m.adj : nullptr);
}

const Dataset* find_member(const DataSplit& s, const std::string& name) {
  auto opt = [](const std::optional<Dataset>& d) { return d ? &*d : nullptr; };
  if (name == "train") return &s.train;
  if (name == "validation") return &s.validation;
  if (name == "test_imbalanced") return opt(s.test_imbalanced);
  if (name == "test_balanced") return opt(s.test_balanced);
  if (name == "test_temporal") return opt(s.test_temporal);
  throw ConfigError("unknown split member '" + name + "'");
}

// ---- eval ------------------------------------------------------------------

struct EvalFlags {
  std::string checkpoint, split;
  std::optional<std::size_t> k;
  std::vector<std::string> members;
  bool no_subgroups = false;
};

void add_eval(CLI::App& app, EvalFlags& f) {
  app.add_option("--checkpoint", f.checkpoint, "model checkpoint")->required();
  app.add_option("--split", f.split, "split directory")->required();
  app.add_option("--k", f.k, "cutoff K (default 20)");
  app.add_option("--members", f.members, "members to evaluate (default every test member present)")
      ->delimiter(',');
  app.add_flag("--no-subgroups", f.no_subgroups, "skip head/mid/tail breakdowns");
}

int cmd_eval(Context& ctx, const EvalFlags& f) {
  json cfg = {{"k", 20}, {"subgroups", true}};
  for (const auto& [key, v] : ctx.section("eval").items()) {
    if (key != "k" && key != "subgroups" && key != "members") throw ConfigError("unknown eval key '" + key + "'");
    cfg[key] = v;
  }
  put(cfg, "k", f.k);
  if (f.no_subgroups) cfg["subgroups"] = false;
  if (!f.members.empty()) cfg["members"] = f.members;
  std::size_t k = 0;
  bool subgroups = true;
  std::vector<std::string> members;
  try {
    k = cfg.at("k").get<std::size_t>();
    subgroups = cfg.at("subgroups").get<bool>();
    if (cfg.contains("members")) members = cfg.at("members").get<std::vector<std::string>>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("bad eval setting: ") + e.what());
  }
  if (k == 0) throw ConfigError("k must be positive");

  auto split = read_split(f.split);
  if (members.empty()) {
    for (const auto& m : kMembers)
      if (m != "validation" && find_member(split, m)) members.push_back(m);
  }
  cfg["members"] = members;
  LoadedModel lm;
  load_model(lm, f.checkpoint, split.train);
  const auto labels = subgroup_partition(split.train.item_pop());
  const std::size_t threads = ctx.g.threads.value_or(1);

  json reports = json::array();
  std::string csv = EvalReport::csv_header();
  for (const auto& name : members) {
    const Dataset* member = find_member(split, name);
    if (!member) throw ConfigError("split has no member '" + name + "'");
    auto rep = evaluate(*lm.model, *member, split.train, labels, k, name, threads);
    json j = rep.to_json();
    std::string rows = rep.csv_rows();
    if (!subgroups) {
      j.erase("subgroups");
      std::istringstream in(rows);
      std::string line;
      rows.clear();
      while (std::getline(in, line))
        if (line.find(",overall,") != std::string::npos) rows += line + '\n';
    }
    reports.push_back(j);
    csv += rows;
    *ctx.out << name << " recall@" << k << ' ' << (rep.overall.recall ? *rep.overall.recall : 0.0)
             << '\n';
  }
  const auto dir = ctx.out_dir();
  write_json(dir / "eval.json", {{"schema_version", 1}, {"checkpoint", f.checkpoint}, {"reports", reports}});
  write_text(dir / "eval.csv", csv);
  write_run_manifest(dir, "eval", 0, cfg, describe_inputs({f.checkpoint, f.split}), {"eval.json", "eval.csv"});
  return 0;
}

// ---- diagnose --------------------------------------------------------------

struct DiagnoseFlags {
  std::string which, checkpoint, extractor, split;
  std::vector<Index> users;
  std::size_t total = 500;
  double bin_width = kDefaultAngleBin;
  std::size_t negatives_per_user = 128;
  bool full = false;
  bool log_pop = false;
};

void add_diagnose(CLI::App& app, DiagnoseFlags& f) {
  app.add_option("which", f.which, "angles, geometry, bias-corr or subgroup-matrix")
      ->required()
      ->check(CLI::IsMember({"angles", "geometry", "bias-corr", "subgroup-matrix"}));
  app.add_option("--split", f.split, "split directory (its train member is used)")->required();
  app.add_option("--checkpoint", f.checkpoint, "model checkpoint (angles, geometry)");
  app.add_option("--extractor", f.extractor, "popularity extractor (bias-corr, subgroup-matrix)");
  app.add_option("--users", f.users, "angles: users to report (default all)")->delimiter(',');
  app.add_option("--total", f.total, "angles: positives plus sampled negatives per user")->capture_default_str();
  app.add_option("--bin-width", f.bin_width, "angles: histogram bin width in radians")->capture_default_str();
  app.add_option("--negatives-per-user", f.negatives_per_user, "geometry: sampled N_u size")->capture_default_str();
  app.add_flag("--full-enumeration", f.full, "geometry: use every non-positive as N_u");
  app.add_flag("--log-pop", f.log_pop, "bias-corr: correlate with log popularity");
}

int cmd_diagnose(Context& ctx, const DiagnoseFlags& f) {
  const std::uint64_t seed = ctx.g.seed.value_or(7);
  const bool needs_extractor = f.which == "bias-corr" || f.which == "subgroup-matrix";
  if (needs_extractor && f.extractor.empty()) throw ConfigError(f.which + " needs --extractor");
  if (needs_extractor && !fs::exists(f.extractor))
    throw ConfigError("extractor file " + f.extractor + " does not exist");
  if (!needs_extractor && f.checkpoint.empty()) throw ConfigError(f.which + " needs --checkpoint");

  auto split = read_split(f.split);
  const Dataset& train = split.train;
  const auto dir = ctx.out_dir();
  json cfg = {{"which", f.which}, {"seed", seed}};
  std::vector<std::string> outputs;
  std::vector<std::string> inputs{f.split};

  if (f.which == "angles") {
    LoadedModel lm;
    load_model(lm, f.checkpoint, train);
    inputs.push_back(f.checkpoint);
    std::vector<Index> users = f.users;
    if (users.empty())
      for (Index u = 0; u < train.num_users(); ++u) users.push_back(u);
    std::mt19937_64 rng(seed);
    json reports = json::array();
    std::string csv;
    bool header = true;
    for (Index u : users) {
      if (u >= train.num_users()) throw ConfigError("user " + std::to_string(u) + " out of range");
      auto negs = angle_negatives(train, u, f.total, rng);
      auto rep = angle_report(*lm.model, u, train.user_positives(u), negs, f.bin_width);
      reports.push_back(rep.to_json());
      csv += rep.histogram_csv(header);
      header = false;
    }
    cfg["total"] = f.total;
    cfg["bin_width"] = f.bin_width;
    write_json(dir / "angles.json", {{"schema_version", 1}, {"reports", reports}});
    write_text(dir / "angles.csv", csv);
    outputs = {"angles.json", "angles.csv"};
  } else if (f.which == "geometry") {
    LoadedModel lm;
    load_model(lm, f.checkpoint, train);
    inputs.push_back(f.checkpoint);
    DispersionSpec spec{f.negatives_per_user, seed, f.full};
    auto rep = geometry_report(lm.model->representations(), train, spec);
    std::ostringstream csv;
    csv.precision(17);
    csv << "metric,value\n"
        << "compactness_sum," << rep.compactness_sum << '\n'
        << "compactness_users," << rep.compactness_users << '\n'
        << "compactness_items," << rep.compactness_items << '\n'
        << "dispersion_sum," << rep.dispersion_sum << '\n'
        << "dispersion_pairs," << rep.dispersion_pairs << '\n'
        << "mean_negative_sq_distance," << rep.mean_negative_sq_distance() << '\n';
    cfg["negatives_per_user"] = f.negatives_per_user;
    cfg["full_enumeration"] = f.full;
    write_json(dir / "geometry.json", rep.to_json());
    write_text(dir / "geometry.csv", csv.str());
    outputs = {"geometry.json", "geometry.csv"};
  } else {
    auto pe = load_extractor(f.extractor);
    inputs.push_back(f.extractor);
    if (f.which == "bias-corr") {
      auto rep = bias_correlation(pe, train, f.log_pop);
      cfg["log_popularity"] = f.log_pop;
      write_json(dir / "bias_corr.json", rep.to_json());
      write_text(dir / "bias_corr.csv", rep.scatter_csv());
      outputs = {"bias_corr.json", "bias_corr.csv"};
    } else {
      auto rep = subgroup_angle_matrix(pe, train);
      write_json(dir / "subgroup_matrix.json", rep.to_json());
      write_text(dir / "subgroup_matrix.csv", rep.csv());
      outputs = {"subgroup_matrix.json", "subgroup_matrix.csv"};
    }
  }
  write_run_manifest(dir, "diagnose", seed, cfg, describe_inputs(inputs), outputs);
  for (const auto& o : outputs) *ctx.out << (dir / o).string() << '\n';
  return 0;
}

void add_globals(CLI::App& app, Globals& g) {
  app.add_option("--seed", g.seed, "random seed");
  app.add_option("--out", g.out, "output directory");
  app.add_option("--config", g.config, "JSON config file with synth/split/train/eval sections");
  app.add_option("--threads", g.threads, "evaluation threads");
  app.add_option("--log-level", g.log_level, "trace, debug, info, warn, error or off")
      ->capture_default_str()
      ->check(CLI::IsMember({"trace", "debug", "info", "warn", "error", "off"}));
}

std::shared_ptr<spdlog::logger> make_logger(std::ostream& err, const std::string& level) {
  auto sink = std::make_shared<spdlog::sinks::ostream_sink_mt>(err);
  auto log = std::make_shared<spdlog::logger>("bcrec", sink);
  log->set_pattern("[%l] %v");
  log->set_level(spdlog::level::from_str(level));
  return log;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Train and evaluate collaborative-filtering recommenders with the BC loss", "bcrec"};
  app.fallthrough();
  app.require_subcommand(1);
  app.set_version_flag("--version", BCREC_VERSION);

  Context ctx;
  ctx.out = &out;
  add_globals(app, ctx.g);

  SynthFlags synth_f;
  SplitFlags split_f;
  TrainFlags train_f;
  EvalFlags eval_f;
  DiagnoseFlags diag_f;
  auto* synth = app.add_subcommand("synth", "generate a long-tail synthetic dataset");
  add_synth(*synth, synth_f);
  auto* split = app.add_subcommand("split", "split an interaction log");
  add_split(*split, split_f);
  auto* trn = app.add_subcommand("train", "train a model on a split");
  add_train(*trn, train_f);
  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on a split");
  add_eval(*eval, eval_f);
  auto* diag = app.add_subcommand("diagnose", "geometry and popularity-bias diagnostics");
  add_diagnose(*diag, diag_f);
  for (auto* sub : {synth, split, trn, eval, diag}) add_globals(*sub, ctx.g);

  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n\n";
    const auto subs = app.get_subcommands();
    err << (subs.empty() ? app.help() : subs.back()->help());
    return 2;
  }

  ctx.log = make_logger(err, ctx.g.log_level);
  try {
    ctx.file = read_config_file(ctx.g.config);
    for (const auto& [key, v] : ctx.file.items()) {
      if (key != "synth" && key != "split" && key != "train" && key != "eval")
        throw ConfigError("unknown config section '" + key + "'");
    }
    if (synth->parsed()) return cmd_synth(ctx, synth_f);
    if (split->parsed()) return cmd_split(ctx, split_f);
    if (trn->parsed()) return cmd_train(ctx, train_f);
    if (eval->parsed()) return cmd_eval(ctx, eval_f);
    return cmd_diagnose(ctx, diag_f);
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
}

}  // namespace bcrec::cli
