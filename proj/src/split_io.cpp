#include "bcrec/split_io.hpp"

#include <fstream>
#include <optional>
#include <utility>
#include <vector>

#include "bcrec/errors.hpp"

namespace bcrec {

namespace {

std::vector<std::pair<std::string, const Dataset*>> members(const DataSplit& s) {
  std::vector<std::pair<std::string, const Dataset*>> out{{"train", &s.train},
                                                          {"validation", &s.validation}};
  if (s.test_imbalanced) out.emplace_back("test_imbalanced", &*s.test_imbalanced);
  if (s.test_balanced) out.emplace_back("test_balanced", &*s.test_balanced);
  if (s.test_temporal) out.emplace_back("test_temporal", &*s.test_temporal);
  return out;
}

}  // namespace

nlohmann::json write_split(const std::filesystem::path& dir, const DataSplit& split,
                           const nlohmann::json& provenance) {
  std::filesystem::create_directories(dir);
  nlohmann::json manifest = {{"schema_version", 1}, {"kl_unit", "nats"}};
  manifest.update(provenance);
  nlohmann::json files = nlohmann::json::object(), counts = nlohmann::json::object(),
                 kl = nlohmann::json::object();
  for (const auto& [name, ds] : members(split)) {
    const std::string file = name + ".tsv";
    save_interactions(dir / file, *ds);
    files[name] = file;
    counts[name] = ds->size();
    kl[name] = ds->empty() ? nlohmann::json(nullptr)
                           : nlohmann::json(kl_divergence_uniform(ds->item_pop()));
  }
  manifest["files"] = files;
  manifest["counts"] = counts;
  manifest["kl_divergence_uniform"] = kl;
  manifest["num_users"] = split.train.num_users();
  manifest["num_items"] = split.train.num_items();
  manifest["user_ids"] = split.train.id_maps().users.raws();
  manifest["item_ids"] = split.train.id_maps().items.raws();
  std::ofstream(dir / kSplitManifest) << manifest.dump(2) << '\n';
  return manifest;
}

DataSplit read_split(const std::filesystem::path& dir, nlohmann::json* manifest_out) {
  std::ifstream in(dir / kSplitManifest);
  if (!in) throw DataError("no split manifest in " + dir.string());
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("bad split manifest: ") + e.what());
  }
  auto maps = std::make_shared<IdMaps>();
  for (const auto& raw : manifest.at("user_ids")) maps->users.intern(raw.get<std::string>());
  for (const auto& raw : manifest.at("item_ids")) maps->items.intern(raw.get<std::string>());
  std::shared_ptr<const IdMaps> shared = std::move(maps);

  const auto& files = manifest.at("files");
  auto load = [&](const char* name) -> std::optional<Dataset> {
    if (!files.contains(name)) return std::nullopt;
    return load_interactions(dir / files.at(name).get<std::string>(), shared);
  };
  DataSplit split;
  auto train = load("train");
  auto val = load("validation");
  if (!train || !val) throw DataError("split manifest lacks train/validation members");
  split.train = std::move(*train);
  split.validation = std::move(*val);
  split.test_imbalanced = load("test_imbalanced");
  split.test_balanced = load("test_balanced");
  split.test_temporal = load("test_temporal");
  if (manifest_out) *manifest_out = std::move(manifest);
  return split;
}

}  // namespace bcrec
