#include "bcrec/encoders.hpp"

#include <cmath>
#include <cstring>
#include <fstream>

#include "bcrec/errors.hpp"

namespace bcrec {

EmbeddingTable EmbeddingTable::random_normal(std::size_t num_users, std::size_t num_items,
                                             std::size_t dim, double stddev,
                                             std::mt19937_64& rng) {
  if (dim < 1) throw ConfigError("embedding dimension must be >= 1");
  EmbeddingTable t(num_users, num_items, dim);
  std::normal_distribution<double> normal(0.0, stddev);
  for (double& v : t.users.data()) v = normal(rng);
  for (double& v : t.items.data()) v = normal(rng);
  return t;
}

NormalizedAdjacency::NormalizedAdjacency(const Dataset& train)
    : num_users_(train.num_users()),
      num_items_(train.num_items()),
      degree_(train.num_users() + train.num_items(), 0) {
  for (std::size_t u = 0; u < num_users_; ++u) degree_[u] = train.user_pop()[u];
  for (std::size_t i = 0; i < num_items_; ++i) degree_[num_users_ + i] = train.item_pop()[i];

  const std::size_t n = num_nodes();
  row_ptr_.assign(n + 1, 0);
  for (std::size_t v = 0; v < n; ++v) row_ptr_[v + 1] = row_ptr_[v] + degree_[v];
  col_.resize(row_ptr_[n]);
  val_.resize(row_ptr_[n]);
  std::vector<std::size_t> fill(row_ptr_.begin(), row_ptr_.end() - 1);
  // Positive lists are sorted, so each CSR row comes out column-sorted.
  for (std::size_t u = 0; u < num_users_; ++u) {
    for (Index i : train.user_positives(Index(u))) {
      const std::size_t iv = num_users_ + i;
      const double w = 1.0 / std::sqrt(double(degree_[u]) * double(degree_[iv]));
      col_[fill[u]] = iv;
      val_[fill[u]++] = w;
    }
  }
  for (std::size_t i = 0; i < num_items_; ++i) {
    const std::size_t iv = num_users_ + i;
    for (Index u : train.item_positives(Index(i))) {
      const double w = 1.0 / std::sqrt(double(degree_[u]) * double(degree_[iv]));
      col_[fill[iv]] = u;
      val_[fill[iv]++] = w;
    }
  }
}

void NormalizedAdjacency::multiply(const Matrix& in, Matrix& out) const {
  const std::size_t d = in.cols();
  out = Matrix(num_nodes(), d);
  for (std::size_t v = 0; v < num_nodes(); ++v) {
    auto dst = out.row(v);
    for (std::size_t k = row_ptr_[v]; k < row_ptr_[v + 1]; ++k) {
      auto src = in.row(col_[k]);
      const double w = val_[k];
      for (std::size_t c = 0; c < d; ++c) dst[c] += w * src[c];
    }
  }
}

namespace {

double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) s += a[k] * b[k];
  return s;
}

double checked_norm(std::span<const double> a) {
  const double n = std::sqrt(dot(a, a));
  if (!(n >= kNormFloor)) throw DataError("zero-norm embedding in cosine similarity");
  return n;
}

}  // namespace

double cosine_similarity(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw DataError("cosine of vectors with different dimensions");
  const double c = dot(a, b) / (checked_norm(a) * checked_norm(b));
  return std::clamp(c, -1.0, 1.0);
}

double angle(std::span<const double> a, std::span<const double> b) {
  return std::acos(cosine_similarity(a, b));
}

void accumulate_cosine_grad(std::span<const double> a, std::span<const double> b,
                            double cos_ab, double weight, std::span<double> grad_a,
                            std::span<double> grad_b) {
  const double na = checked_norm(a);
  const double nb = checked_norm(b);
  const double inv = weight / (na * nb);
  const double sa = weight * cos_ab / (na * na);
  const double sb = weight * cos_ab / (nb * nb);
  for (std::size_t k = 0; k < a.size(); ++k) {
    grad_a[k] += inv * b[k] - sa * a[k];
    grad_b[k] += inv * a[k] - sb * b[k];
  }
}

EmbeddingTable lightgcn_propagate(const EmbeddingTable& table, const NormalizedAdjacency& adj,
                                  std::size_t layers) {
  if (table.num_users() != adj.num_users() || table.num_items() != adj.num_items()) {
    throw DataError("embedding table does not match adjacency dimensions");
  }
  if (layers == 0) return table;
  const std::size_t d = table.dim();
  const std::size_t nu = table.num_users();
  Matrix layer(adj.num_nodes(), d);
  std::copy(table.users.data().begin(), table.users.data().end(), layer.data().begin());
  std::copy(table.items.data().begin(), table.items.data().end(),
            layer.data().begin() + std::ptrdiff_t(nu * d));
  Matrix sum = layer;
  Matrix next;
  for (std::size_t l = 0; l < layers; ++l) {
    adj.multiply(layer, next);
    std::swap(layer, next);
    for (std::size_t k = 0; k < sum.data().size(); ++k) sum.data()[k] += layer.data()[k];
  }
  const double scale = 1.0 / double(layers + 1);
  EmbeddingTable out(nu, table.num_items(), d);
  for (std::size_t k = 0; k < nu * d; ++k) out.users.data()[k] = sum.data()[k] * scale;
  for (std::size_t k = 0; k < out.items.data().size(); ++k) {
    out.items.data()[k] = sum.data()[nu * d + k] * scale;
  }
  return out;
}

double score(const EncoderKind& kind, const EmbeddingTable& table,
             const NormalizedAdjacency* adj, Index user, Index item) {
  if (user >= table.num_users() || item >= table.num_items()) {
    throw DataError("score: id out of range");
  }
  if (!kind.is_lightgcn()) return cosine_similarity(table.users.row(user), table.items.row(item));
  if (!adj) throw DataError("LightGCN scoring needs an adjacency");
  auto reps = lightgcn_propagate(table, *adj, kind.layers);
  return cosine_similarity(reps.users.row(user), reps.items.row(item));
}

ScoringModel::ScoringModel(const EncoderKind& kind, const EmbeddingTable& table,
                           const NormalizedAdjacency* adj) {
  if (kind.is_lightgcn()) {
    if (!adj) throw DataError("LightGCN scoring needs an adjacency");
    reps_ = lightgcn_propagate(table, *adj, kind.layers);
  } else {
    reps_ = table;
  }
  auto norms = [](const Matrix& m) {
    std::vector<double> out(m.rows());
    for (std::size_t r = 0; r < m.rows(); ++r) out[r] = std::sqrt(dot(m.row(r), m.row(r)));
    return out;
  };
  user_norm_ = norms(reps_.users);
  item_norm_ = norms(reps_.items);
}

double ScoringModel::score(Index user, Index item) const {
  if (user >= num_users() || item >= num_items()) throw DataError("score: id out of range");
  return cosine_similarity(reps_.users.row(user), reps_.items.row(item));
}

void ScoringModel::score_all(Index user, std::span<double> out) const {
  if (user >= num_users()) throw DataError("score: user id out of range");
  const double nu = user_norm_[user];
  if (!(nu >= kNormFloor)) throw DataError("zero-norm user embedding");
  auto uv = reps_.users.row(user);
  for (std::size_t i = 0; i < num_items(); ++i) {
    const double ni = item_norm_[i];
    if (!(ni >= kNormFloor)) throw DataError("zero-norm item embedding");
    out[i] = std::clamp(dot(uv, reps_.items.row(i)) / (nu * ni), -1.0, 1.0);
  }
}

namespace {

constexpr char kMagic[8] = {'B', 'C', 'R', 'E', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kCheckpointVersion = 1;

template <typename T>
void put(std::ostream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& in) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw DataError("truncated checkpoint");
  return v;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out.write(kMagic, sizeof(kMagic));
  put(out, kCheckpointVersion);
  put(out, static_cast<std::uint32_t>(ckpt.kind.variant));
  put(out, static_cast<std::uint64_t>(ckpt.kind.layers));
  put(out, static_cast<std::uint64_t>(ckpt.table.dim()));
  put(out, static_cast<std::uint64_t>(ckpt.table.num_users()));
  put(out, static_cast<std::uint64_t>(ckpt.table.num_items()));
  for (const Matrix* m : {&ckpt.table.users, &ckpt.table.items}) {
    out.write(reinterpret_cast<const char*>(m->data().data()),
              std::streamsize(m->data().size() * sizeof(double)));
  }
  const std::string meta = ckpt.metadata.dump();
  put(out, static_cast<std::uint64_t>(meta.size()));
  out.write(meta.data(), std::streamsize(meta.size()));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw DataError("not a checkpoint file: " + path.string());
  }
  if (get<std::uint32_t>(in) != kCheckpointVersion) throw DataError("unsupported checkpoint version");
  Checkpoint ckpt;
  const auto variant = get<std::uint32_t>(in);
  if (variant > 1) throw DataError("unknown encoder variant in checkpoint");
  ckpt.kind.variant = static_cast<EncoderKind::Variant>(variant);
  ckpt.kind.layers = get<std::uint64_t>(in);
  const auto d = get<std::uint64_t>(in);
  const auto nu = get<std::uint64_t>(in);
  const auto ni = get<std::uint64_t>(in);
  ckpt.table = EmbeddingTable(nu, ni, d);
  for (Matrix* m : {&ckpt.table.users, &ckpt.table.items}) {
    in.read(reinterpret_cast<char*>(m->data().data()),
            std::streamsize(m->data().size() * sizeof(double)));
    if (!in) throw DataError("truncated checkpoint");
  }
  const auto len = get<std::uint64_t>(in);
  std::string meta(len, '\0');
  in.read(meta.data(), std::streamsize(len));
  if (!in) throw DataError("truncated checkpoint");
  ckpt.metadata = nlohmann::json::parse(meta);
  return ckpt;
}

nlohmann::json checkpoint_to_json(const Checkpoint& ckpt) {
  return {{"schema_version", 1},
          {"encoder", ckpt.kind.name()},
          {"layers", ckpt.kind.layers},
          {"d", ckpt.table.dim()},
          {"num_users", ckpt.table.num_users()},
          {"num_items", ckpt.table.num_items()},
          {"users", ckpt.table.users.data()},
          {"items", ckpt.table.items.data()},
          {"metadata", ckpt.metadata}};
}

Checkpoint checkpoint_from_json(const nlohmann::json& j) {
  Checkpoint ckpt;
  ckpt.kind = j.at("encoder").get<std::string>() == "lightgcn"
                  ? EncoderKind::lightgcn(j.at("layers").get<std::size_t>())
                  : EncoderKind::mf();
  const auto d = j.at("d").get<std::size_t>();
  ckpt.table = EmbeddingTable(j.at("num_users").get<std::size_t>(),
                              j.at("num_items").get<std::size_t>(), d);
  ckpt.table.users.data() = j.at("users").get<std::vector<double>>();
  ckpt.table.items.data() = j.at("items").get<std::vector<double>>();
  if (ckpt.table.users.data().size() != ckpt.table.num_users() * d ||
      ckpt.table.items.data().size() != ckpt.table.num_items() * d) {
    throw DataError("checkpoint JSON matrix sizes do not match header");
  }
  ckpt.metadata = j.value("metadata", nlohmann::json::object());
  return ckpt;
}

}  // namespace bcrec
