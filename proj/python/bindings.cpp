#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <sstream>

#include "bcrec/bias_extractor.hpp"
#include "bcrec/dataset.hpp"
#include "bcrec/diagnostics.hpp"
#include "bcrec/encoders.hpp"
#include "bcrec/errors.hpp"
#include "bcrec/evaluator.hpp"
#include "bcrec/losses.hpp"
#include "bcrec/split_io.hpp"
#include "bcrec/synth.hpp"
#include "bcrec/trainer.hpp"
#include "cli.hpp"

namespace py = pybind11;
using namespace bcrec;
using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

namespace {

py::object to_py(const nlohmann::json& j) { return py::module_::import("json").attr("loads")(j.dump()); }

nlohmann::json from_py(const py::object& o) {
  if (o.is_none()) return nlohmann::json::object();
  return nlohmann::json::parse(py::module_::import("json").attr("dumps")(o).cast<std::string>());
}

Array to_array(const Matrix& m) {
  Array a({m.rows(), m.cols()});
  std::copy(m.data().begin(), m.data().end(), a.mutable_data());
  return a;
}

Matrix to_matrix(const Array& a) {
  if (a.ndim() != 2) throw ConfigError("expected a 2-d array");
  Matrix m(a.shape(0), a.shape(1));
  std::copy(a.data(), a.data() + a.size(), m.data().begin());
  return m;
}

EmbeddingTable to_table(const Array& users, const Array& items) {
  EmbeddingTable t;
  t.users = to_matrix(users);
  t.items = to_matrix(items);
  if (t.users.cols() != t.items.cols()) throw ConfigError("user and item arrays differ in width");
  return t;
}

EncoderKind to_kind(const std::string& encoder, std::size_t layers) {
  if (encoder == "mf") return EncoderKind::mf();
  if (encoder == "lightgcn") return EncoderKind::lightgcn(layers);
  throw ConfigError("unknown encoder '" + encoder + "'");
}

LossBatch to_batch(std::vector<std::pair<Index, Index>> interactions,
                   std::vector<std::vector<Index>> negatives, std::vector<double> weights) {
  return LossBatch{std::move(interactions), std::move(negatives), std::move(weights)};
}

py::tuple loss_tuple(const LossResult& r, const EmbeddingTable& t) {
  auto dense = [](const RowGrads& g, std::size_t rows, std::size_t cols) {
    Matrix m(rows, cols);
    for (std::size_t k = 0; k < g.size(); ++k) {
      auto v = g.value(k);
      std::copy(v.begin(), v.end(), m.row(g.touched()[k]).begin());
    }
    return to_array(m);
  };
  return py::make_tuple(r.value, dense(r.user_grads, t.num_users(), t.dim()),
                        dense(r.item_grads, t.num_items(), t.dim()));
}

std::vector<std::tuple<Index, Index, std::optional<std::int64_t>>> interaction_list(const Dataset& d) {
  std::vector<std::tuple<Index, Index, std::optional<std::int64_t>>> out;
  out.reserve(d.size());
  for (const auto& x : d.interactions()) out.emplace_back(x.user, x.item, x.timestamp);
  return out;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "BC-loss collaborative filtering toolkit";
  m.attr("__version__") = BCREC_VERSION;

  auto base = py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
  py::register_exception<ConfigError>(m, "ConfigError", base.ptr());
  py::register_exception<DataError>(m, "DataError", base.ptr());
  py::register_exception<InvariantError>(m, "InvariantError", base.ptr());
  py::register_exception<DivergenceError>(m, "DivergenceError", base.ptr());
  py::register_exception<ParseError>(m, "ParseError", base.ptr());

  py::class_<Dataset>(m, "Dataset")
      .def(py::init([](std::size_t nu, std::size_t ni,
                       const std::vector<std::pair<Index, Index>>& pairs) {
             std::vector<Interaction> xs;
             for (auto [u, i] : pairs) xs.push_back({u, i, std::nullopt});
             return Dataset(nu, ni, std::move(xs));
           }),
           py::arg("num_users"), py::arg("num_items"), py::arg("pairs"))
      .def_property_readonly("num_users", &Dataset::num_users)
      .def_property_readonly("num_items", &Dataset::num_items)
      .def("__len__", &Dataset::size)
      .def_property_readonly("user_pop", &Dataset::user_pop)
      .def_property_readonly("item_pop", &Dataset::item_pop)
      .def("interactions", &interaction_list, "list of (user, item, timestamp or None)")
      .def("user_positives", &Dataset::user_positives)
      .def("item_positives", &Dataset::item_positives)
      .def("contains", &Dataset::contains)
      .def("has_all_timestamps", &Dataset::has_all_timestamps)
      .def_property_readonly("user_ids", [](const Dataset& d) { return d.id_maps().users.raws(); })
      .def_property_readonly("item_ids", [](const Dataset& d) { return d.id_maps().items.raws(); })
      .def("__eq__", [](const Dataset& a, const Dataset& b) { return a == b; });

  py::class_<DataSplit>(m, "DataSplit")
      .def_readonly("train", &DataSplit::train)
      .def_readonly("validation", &DataSplit::validation)
      .def_readonly("test_imbalanced", &DataSplit::test_imbalanced)
      .def_readonly("test_balanced", &DataSplit::test_balanced)
      .def_readonly("test_temporal", &DataSplit::test_temporal);

  m.def("load_interactions",
        [](const std::filesystem::path& p, const std::string& sep) {
          return load_interactions(p, TextFormat{parse_separator(sep)});
        },
        py::arg("path"), py::arg("separator") = "tab");
  m.def("save_interactions",
        [](const std::filesystem::path& p, const Dataset& d, const std::string& sep) {
          save_interactions(p, d, TextFormat{parse_separator(sep)});
        },
        py::arg("path"), py::arg("dataset"), py::arg("separator") = "tab");
  m.def("k_core_filter", &k_core_filter, py::arg("dataset"), py::arg("k"));
  m.def("split_random",
        [](const Dataset& d, std::array<double, 4> f, std::uint64_t seed) {
          return split_random(d, {f[0], f[1], f[2], f[3]}, seed);
        },
        py::arg("dataset"), py::arg("fractions") = std::array<double, 4>{0.15, 0.6, 0.1, 0.15},
        py::arg("seed") = 0);
  m.def("split_temporal",
        [](const Dataset& d, std::array<double, 3> r, std::uint64_t seed) {
          return split_temporal(d, {r[0], r[1], r[2]}, seed);
        },
        py::arg("dataset"), py::arg("ratios") = std::array<double, 3>{0.7, 0.1, 0.2},
        py::arg("seed") = 0);
  m.def("write_split",
        [](const std::filesystem::path& dir, const DataSplit& s) { return to_py(write_split(dir, s)); },
        py::arg("dir"), py::arg("split"));
  m.def("read_split", [](const std::filesystem::path& dir) { return read_split(dir); }, py::arg("dir"));
  m.def("kl_divergence_uniform",
        [](const std::vector<Count>& c) { return kl_divergence_uniform(c); }, py::arg("counts"));
  m.def("subgroup_partition",
        [](const std::vector<Count>& pops) {
          std::vector<std::string> out;
          for (auto g : subgroup_partition(pops)) out.emplace_back(subgroup_name(g));
          return out;
        },
        py::arg("pops"));

  m.def("synthesize",
        [](const py::object& cfg) {
          auto c = SynthConfig::from_json(from_py(cfg), SynthConfig{});
          auto d = synthesize(c);
          py::dict out;
          out["observed"] = d.observed;
          out["ground_truth"] = d.ground_truth;
          out["base_popularity"] = d.base_popularity;
          out["config"] = to_py(c.to_json());
          return out;
        },
        py::arg("config") = py::none(), "config: dict of SynthConfig fields");

  m.def("margin", &margin, py::arg("xi"), py::arg("theta"), py::arg("strength") = 1.0);
  m.def("softmax_loss",
        [](const Array& u, const Array& i, std::vector<std::pair<Index, Index>> pairs,
           std::vector<std::vector<Index>> negs, double tau, std::vector<double> w) {
          auto t = to_table(u, i);
          return loss_tuple(softmax_loss(t, to_batch(pairs, negs, w), tau), t);
        },
        py::arg("users"), py::arg("items"), py::arg("pairs"), py::arg("negatives"), py::arg("tau"),
        py::arg("weights") = std::vector<double>{}, "returns (value, user_grad, item_grad)");
  m.def("bc_loss",
        [](const Array& u, const Array& i, std::vector<std::pair<Index, Index>> pairs,
           std::vector<std::vector<Index>> negs, std::vector<double> margins, double tau,
           std::vector<double> w) {
          auto t = to_table(u, i);
          return loss_tuple(bc_loss(t, to_batch(pairs, negs, w), margins, tau), t);
        },
        py::arg("users"), py::arg("items"), py::arg("pairs"), py::arg("negatives"),
        py::arg("margins"), py::arg("tau"), py::arg("weights") = std::vector<double>{});
  m.def("bpr_loss",
        [](const Array& u, const Array& i, std::vector<std::pair<Index, Index>> pairs,
           std::vector<std::vector<Index>> negs, std::vector<double> w) {
          auto t = to_table(u, i);
          return loss_tuple(bpr_loss(t, to_batch(pairs, negs, w)), t);
        },
        py::arg("users"), py::arg("items"), py::arg("pairs"), py::arg("negatives"),
        py::arg("weights") = std::vector<double>{});
  m.def("lightgcn_propagate",
        [](const Array& u, const Array& i, const Dataset& train, std::size_t layers) {
          NormalizedAdjacency adj(train);
          auto out = lightgcn_propagate(to_table(u, i), adj, layers);
          return py::make_tuple(to_array(out.users), to_array(out.items));
        },
        py::arg("users"), py::arg("items"), py::arg("train"), py::arg("layers"));

  py::class_<PopularityEmbeddings>(m, "PopularityEmbeddings")
      .def_property_readonly("user_keys", &PopularityEmbeddings::user_keys)
      .def_property_readonly("item_keys", &PopularityEmbeddings::item_keys)
      .def_property_readonly("user_vecs", [](const PopularityEmbeddings& p) { return to_array(p.user_vecs()); })
      .def_property_readonly("item_vecs", [](const PopularityEmbeddings& p) { return to_array(p.item_vecs()); })
      .def("bias_score", [](const PopularityEmbeddings& p, Count pu, Count pi) { return bias_score(p, pu, pi); })
      .def("bias_angle", [](const PopularityEmbeddings& p, Count pu, Count pi) { return bias_angle(p, pu, pi); });
  m.def("load_extractor", &load_extractor, py::arg("path"));
  m.def("save_extractor", &save_extractor, py::arg("path"), py::arg("extractor"));

  m.def("train",
        [](const DataSplit& split, const std::string& encoder, std::size_t layers, const py::object& cfg) {
          auto c = TrainConfig::from_json(from_py(cfg));
          TrainResult r;
          {
            py::gil_scoped_release release;
            r = train(split, to_kind(encoder, layers), c);
          }
          py::dict out;
          out["users"] = to_array(r.table.users);
          out["items"] = to_array(r.table.items);
          out["extractor"] = r.extractor ? py::cast(*r.extractor) : py::none();
          out["report"] = to_py(r.report.to_json());
          out["config"] = to_py(c.to_json());
          return out;
        },
        py::arg("split"), py::arg("encoder") = "mf", py::arg("layers") = 2, py::arg("config") = py::none(),
        "returns dict(users, items, extractor, report, config)");

  m.def("evaluate",
        [](const Array& u, const Array& i, const Dataset& member, const Dataset& train, std::size_t k,
           const std::string& encoder, std::size_t layers, std::size_t threads) {
          const auto kind = to_kind(encoder, layers);
          std::optional<NormalizedAdjacency> adj;
          if (kind.is_lightgcn()) adj.emplace(train);
          ScoringModel model(kind, to_table(u, i), adj ? &*adj : nullptr);
          auto labels = subgroup_partition(train.item_pop());
          return to_py(evaluate(model, member, train, labels, k, "member", threads).to_json());
        },
        py::arg("users"), py::arg("items"), py::arg("member"), py::arg("train"), py::arg("k") = 20,
        py::arg("encoder") = "mf", py::arg("layers") = 2, py::arg("threads") = 1);

  m.def("geometry_report",
        [](const Array& u, const Array& i, const Dataset& train, std::size_t negatives_per_user,
           std::uint64_t seed, bool full) {
          return to_py(geometry_report(to_table(u, i), train, {negatives_per_user, seed, full}).to_json());
        },
        py::arg("users"), py::arg("items"), py::arg("train"), py::arg("negatives_per_user") = 128,
        py::arg("seed") = 7, py::arg("full_enumeration") = false);
  m.def("bias_correlation",
        [](const PopularityEmbeddings& pe, const Dataset& train, bool log_pop) {
          return to_py(bias_correlation(pe, train, log_pop).to_json());
        },
        py::arg("extractor"), py::arg("train"), py::arg("log_popularity") = false);
  m.def("subgroup_angle_matrix",
        [](const PopularityEmbeddings& pe, const Dataset& train) {
          return to_py(subgroup_angle_matrix(pe, train).to_json());
        },
        py::arg("extractor"), py::arg("train"));

  m.def("cli",
        [](const std::vector<std::string>& args) {
          std::vector<std::string> full{"bcrec"};
          full.insert(full.end(), args.begin(), args.end());
          std::ostringstream out, err;
          const int code = cli::run(full, out, err);
          return py::make_tuple(code, out.str(), err.str());
        },
        py::arg("args"), "runs one command line; returns (exit code, stdout, stderr)");
}
