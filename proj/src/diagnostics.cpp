#include "bcrec/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <sstream>

#include "bcrec/errors.hpp"

namespace bcrec {

namespace {

std::size_t bin_count(double width) {
  if (!(width > 0.0)) throw ConfigError("histogram bin width must be > 0");
  return std::max<std::size_t>(1, std::size_t(std::ceil(std::numbers::pi / width - 1e-12)));
}

std::size_t bin_of(double a, double width, std::size_t bins) {
  return std::min(bins - 1, std::size_t(a / width));
}

nlohmann::json opt(const std::optional<double>& v) {
  return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
}

}  // namespace

AngleReport angle_report(const ScoringModel& model, Index user, std::span<const Index> positives,
                         std::span<const Index> negatives, double bin_width) {
  if (positives.empty()) throw DataError("angle report needs at least one positive");
  AngleReport rep;
  rep.user = user;
  rep.bin_width = bin_width;
  const std::size_t bins = bin_count(bin_width);
  rep.positive_hist.assign(bins, 0);
  rep.negative_hist.assign(bins, 0);
  auto uv = model.representations().users.row(user);
  auto collect = [&](std::span<const Index> items, std::vector<std::size_t>& hist) {
    double sum = 0.0;
    for (Index i : items) {
      const double a = angle(uv, model.representations().items.row(i));
      sum += a;
      ++hist[bin_of(a, bin_width, bins)];
    }
    return items.empty() ? std::optional<double>{} : sum / double(items.size());
  };
  rep.mean_positive = collect(positives, rep.positive_hist);
  rep.mean_negative = collect(negatives, rep.negative_hist);
  rep.num_positive = positives.size();
  rep.num_negative = negatives.size();
  return rep;
}

std::vector<Index> angle_negatives(const Dataset& train, Index user, std::size_t total,
                                   std::mt19937_64& rng) {
  const auto& pos = train.user_positives(user);
  const std::size_t want = total > pos.size() ? total - pos.size() : 0;
  std::vector<Index> pool;
  for (Index i = 0; i < train.num_items(); ++i) {
    if (!std::binary_search(pos.begin(), pos.end(), i)) pool.push_back(i);
  }
  std::shuffle(pool.begin(), pool.end(), rng);
  pool.resize(std::min(want, pool.size()));
  std::sort(pool.begin(), pool.end());
  return pool;
}

nlohmann::json AngleReport::to_json() const {
  return {{"schema_version", 1},
          {"user", user},
          {"mean_positive_angle", opt(mean_positive)},
          {"mean_negative_angle", opt(mean_negative)},
          {"bin_width", bin_width},
          {"positive_hist", positive_hist},
          {"negative_hist", negative_hist},
          {"num_positive", num_positive},
          {"num_negative", num_negative}};
}

std::string AngleReport::histogram_csv(bool header) const {
  std::ostringstream out;
  out.precision(17);
  if (header) out << "user,bin,lo,hi,positive,negative\n";
  for (std::size_t b = 0; b < positive_hist.size(); ++b) {
    const double lo = double(b) * bin_width;
    const double hi = std::min(std::numbers::pi, lo + bin_width);
    out << user << ',' << b << ',' << lo << ',' << hi << ',' << positive_hist[b] << ','
        << negative_hist[b] << '\n';
  }
  return out.str();
}

double GeometryReport::mean_negative_sq_distance() const {
  return dispersion_pairs ? -dispersion_sum / double(dispersion_pairs) : 0.0;
}

nlohmann::json GeometryReport::to_json() const {
  return {{"schema_version", 1},
          {"normalized", true},
          {"compactness_sum", compactness_sum},
          {"compactness_users", compactness_users},
          {"compactness_items", compactness_items},
          {"dispersion_sum", dispersion_sum},
          {"dispersion_pairs", dispersion_pairs},
          {"mean_negative_sq_distance", mean_negative_sq_distance()},
          {"excluded_users", excluded_users},
          {"excluded_items", excluded_items},
          {"negatives", {{"per_user", spec.negatives_per_user},
                         {"seed", spec.seed},
                         {"full_enumeration", spec.full_enumeration}}}};
}

namespace {

Matrix normalized_rows(const Matrix& m) {
  Matrix out = m;
  for (std::size_t r = 0; r < out.rows(); ++r) {
    auto row = out.row(r);
    double n = 0.0;
    for (double x : row) n += x * x;
    n = std::sqrt(n);
    if (!(n >= kNormFloor)) throw DataError("zero-norm embedding in geometry report");
    for (double& x : row) x /= n;
  }
  return out;
}

double sq_dist(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) s += (a[k] - b[k]) * (a[k] - b[k]);
  return s;
}

// sum over members |v - mean(neighbors)|^2.
double centroid_term(const Matrix& self, const Matrix& other,
                     const std::function<const std::vector<Index>&(Index)>& neighbors,
                     std::size_t& excluded) {
  const std::size_t d = self.cols();
  std::vector<double> c(d);
  double total = 0.0;
  for (std::size_t r = 0; r < self.rows(); ++r) {
    const auto& nb = neighbors(Index(r));
    if (nb.empty()) {
      ++excluded;
      continue;
    }
    std::fill(c.begin(), c.end(), 0.0);
    for (Index j : nb) {
      auto v = other.row(j);
      for (std::size_t k = 0; k < d; ++k) c[k] += v[k];
    }
    for (double& x : c) x /= double(nb.size());
    total += sq_dist(self.row(r), c);
  }
  return total;
}

}  // namespace

GeometryReport geometry_report(const EmbeddingTable& table, const Dataset& train,
                               const DispersionSpec& spec) {
  if (table.num_users() != train.num_users() || table.num_items() != train.num_items()) {
    throw DataError("geometry report: table does not match dataset");
  }
  const Matrix users = normalized_rows(table.users);
  const Matrix items = normalized_rows(table.items);
  GeometryReport rep;
  rep.spec = spec;
  rep.compactness_users = centroid_term(
      users, items, [&](Index u) -> const std::vector<Index>& { return train.user_positives(u); },
      rep.excluded_users);
  rep.compactness_items = centroid_term(
      items, users, [&](Index i) -> const std::vector<Index>& { return train.item_positives(i); },
      rep.excluded_items);
  rep.compactness_sum = rep.compactness_users + rep.compactness_items;

  std::mt19937_64 rng(spec.seed);
  std::uniform_int_distribution<Index> pick(0, Index(train.num_items() - 1));
  for (Index u = 0; u < train.num_users(); ++u) {
    const auto& pos = train.user_positives(u);
    if (pos.empty() || pos.size() >= train.num_items()) continue;
    auto uv = users.row(u);
    if (spec.full_enumeration) {
      for (Index j = 0; j < train.num_items(); ++j) {
        if (std::binary_search(pos.begin(), pos.end(), j)) continue;
        rep.dispersion_sum -= sq_dist(uv, items.row(j));
        ++rep.dispersion_pairs;
      }
      continue;
    }
    for (std::size_t n = 0; n < spec.negatives_per_user;) {
      const Index j = pick(rng);
      if (std::binary_search(pos.begin(), pos.end(), j)) continue;
      rep.dispersion_sum -= sq_dist(uv, items.row(j));
      ++rep.dispersion_pairs;
      ++n;
    }
  }
  return rep;
}

std::optional<double> pearson(std::span<const double> x, std::span<const double> y) {
  const std::size_t n = std::min(x.size(), y.size());
  if (n < 2) return std::nullopt;
  const double mx = std::accumulate(x.begin(), x.begin() + std::ptrdiff_t(n), 0.0) / double(n);
  const double my = std::accumulate(y.begin(), y.begin() + std::ptrdiff_t(n), 0.0) / double(n);
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t k = 0; k < n; ++k) {
    sxy += (x[k] - mx) * (y[k] - my);
    sxx += (x[k] - mx) * (x[k] - mx);
    syy += (y[k] - my) * (y[k] - my);
  }
  if (sxx <= 0.0 || syy <= 0.0) return std::nullopt;
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

BiasCorrelation bias_correlation(const PopularityEmbeddings& pe, const Dataset& train,
                                 bool log_popularity) {
  std::vector<double> user_sum(train.num_users(), 0.0), item_sum(train.num_items(), 0.0);
  for (const auto& x : train.interactions()) {
    const double c = bias_score(pe, train.user_pop()[x.user], train.item_pop()[x.item]);
    user_sum[x.user] += c;
    item_sum[x.item] += c;
  }
  BiasCorrelation out;
  out.log_popularity = log_popularity;
  auto side = [&](const std::vector<double>& sums, const std::vector<Count>& pops,
                  std::vector<ScatterPoint>& points) {
    std::vector<double> xs, ys;
    for (std::size_t k = 0; k < sums.size(); ++k) {
      if (pops[k] == 0) continue;
      const double mean = sums[k] / double(pops[k]);
      points.push_back({Index(k), pops[k], mean});
      xs.push_back(log_popularity ? std::log(double(pops[k])) : double(pops[k]));
      ys.push_back(mean);
    }
    return pearson(xs, ys);
  };
  out.pearson_user = side(user_sum, train.user_pop(), out.user_points);
  out.pearson_item = side(item_sum, train.item_pop(), out.item_points);
  return out;
}

nlohmann::json BiasCorrelation::to_json() const {
  return {{"schema_version", 1},
          {"pearson_user", opt(pearson_user)},
          {"pearson_item", opt(pearson_item)},
          {"popularity_transform", log_popularity ? "log" : "identity"},
          {"num_users", user_points.size()},
          {"num_items", item_points.size()}};
}

std::string BiasCorrelation::scatter_csv() const {
  std::ostringstream out;
  out.precision(17);
  out << "side,id,popularity,mean_cos_xi\n";
  for (const auto& p : user_points) out << "user," << p.id << ',' << p.popularity << ',' << p.mean_cos << '\n';
  for (const auto& p : item_points) out << "item," << p.id << ',' << p.popularity << ',' << p.mean_cos << '\n';
  return out.str();
}

SubgroupAngleMatrix subgroup_angle_matrix(const PopularityEmbeddings& pe, const Dataset& train) {
  const auto user_groups = subgroup_partition(train.user_pop());
  const auto item_groups = subgroup_partition(train.item_pop());
  std::array<std::array<double, 3>, 3> sum{}, sum_sq{};
  SubgroupAngleMatrix out;
  // Two passes for a stable variance: means first, then squared deviations.
  for (const auto& x : train.interactions()) {
    const double xi = bias_angle(pe, train.user_pop()[x.user], train.item_pop()[x.item]);
    auto ug = std::size_t(user_groups[x.user]), ig = std::size_t(item_groups[x.item]);
    sum[ug][ig] += xi;
    ++out.cells[ug][ig].count;
  }
  for (std::size_t a = 0; a < 3; ++a) {
    for (std::size_t b = 0; b < 3; ++b) {
      if (out.cells[a][b].count) out.cells[a][b].mean = sum[a][b] / double(out.cells[a][b].count);
    }
  }
  for (const auto& x : train.interactions()) {
    const double xi = bias_angle(pe, train.user_pop()[x.user], train.item_pop()[x.item]);
    auto ug = std::size_t(user_groups[x.user]), ig = std::size_t(item_groups[x.item]);
    const double dev = xi - *out.cells[ug][ig].mean;
    sum_sq[ug][ig] += dev * dev;
  }
  for (std::size_t a = 0; a < 3; ++a) {
    for (std::size_t b = 0; b < 3; ++b) {
      if (out.cells[a][b].count) {
        out.cells[a][b].stddev = std::sqrt(sum_sq[a][b] / double(out.cells[a][b].count));
      }
    }
  }
  return out;
}

nlohmann::json SubgroupAngleMatrix::to_json() const {
  nlohmann::json rows = nlohmann::json::array();
  for (std::size_t a = 0; a < 3; ++a) {
    for (std::size_t b = 0; b < 3; ++b) {
      const auto& c = cells[a][b];
      rows.push_back({{"user_group", subgroup_name(static_cast<Subgroup>(a))},
                      {"item_group", subgroup_name(static_cast<Subgroup>(b))},
                      {"mean_xi", opt(c.mean)},
                      {"std_xi", opt(c.stddev)},
                      {"count", c.count}});
    }
  }
  return {{"schema_version", 1}, {"cells", rows}};
}

std::string SubgroupAngleMatrix::csv() const {
  std::ostringstream out;
  out.precision(17);
  out << "user_group,item_group,mean_xi,std_xi,count\n";
  for (std::size_t a = 0; a < 3; ++a) {
    for (std::size_t b = 0; b < 3; ++b) {
      const auto& c = cells[a][b];
      out << subgroup_name(static_cast<Subgroup>(a)) << ',' << subgroup_name(static_cast<Subgroup>(b))
          << ',';
      if (c.mean) out << *c.mean;
      out << ',';
      if (c.stddev) out << *c.stddev;
      out << ',' << c.count << '\n';
    }
  }
  return out.str();
}

}  // namespace bcrec
