#pragma once

#include "promptseg/scene.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <vector>

namespace promptseg {

struct QueryRecord {
    int scene = 0;  // index into Dataset::scenes
    Query query;

    friend bool operator==(const QueryRecord&, const QueryRecord&) = default;
};

/// Scenes plus queries. `root` remembers where the dataset was read from so
/// image-backed segmenters can locate `scenes/<k>/image.png`; it takes no
/// part in equality.
struct Dataset {
    std::vector<Scene> scenes;
    std::vector<QueryRecord> queries;
    std::filesystem::path root;

    std::filesystem::path image_path(int scene) const;
    Canvas canvas() const;

    friend bool operator==(const Dataset& a, const Dataset& b) {
        return a.scenes == b.scenes && a.queries == b.queries;
    }
};

struct DatasetOptions {
    int scenes = 10;
    std::uint64_t seed = 0;
    int queries_per_scene = 1;
    /// When set, every query has this kind (scenes lacking a suitable
    /// category are regenerated from the next seed in the stream).
    std::optional<QueryKind> forced_kind;
    int jobs = 1;
};

/// Scene k uses seed derive_seed(seed, k); query kinds are drawn per scene:
/// empty_target with the spec's probability when an absent category exists,
/// otherwise explicit or implicit with equal odds.
Dataset generate_dataset(const SceneSpec& spec, const DatasetOptions& opts);

/// Layout: scenes/<k>/meta.json, scenes/<k>/instance_<i>.pgm,
/// scenes/<k>/image.png (rendered), gt/<q>.pgm, queries.jsonl.
/// `provenance` (if not null) is written to generation.json.
void write_dataset(const Dataset& d, const std::filesystem::path& dir,
                   const nlohmann::json& provenance = nullptr);

/// Throws IoError naming the file (and line for queries.jsonl).
Dataset read_dataset(const std::filesystem::path& dir);

/// 64-bit FNV-1a digest over the canonical content of the dataset; lets
/// goldens detect generator drift without shipping every mask.
std::uint64_t dataset_digest(const Dataset& d);

}  // namespace promptseg
