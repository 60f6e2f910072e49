#pragma once

#include <filesystem>
#include <string>

#include "bcrec/dataset.hpp"
#include "json.hpp"

namespace bcrec {

// A split directory holds one interaction file per present member
// (train.tsv, validation.tsv, test_imbalanced.tsv, test_balanced.tsv,
// test_temporal.tsv) and manifest.json with counts, KL statistics, the
// caller's provenance fields and the shared id maps.
inline constexpr const char* kSplitManifest = "manifest.json";

// Returns the manifest that was written. `provenance` is merged into it.
nlohmann::json write_split(const std::filesystem::path& dir, const DataSplit& split,
                           const nlohmann::json& provenance = nlohmann::json::object());

DataSplit read_split(const std::filesystem::path& dir, nlohmann::json* manifest = nullptr);

}  // namespace bcrec
