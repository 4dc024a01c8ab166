#pragma once

#include "promptseg/mask.hpp"

#include <json.hpp>

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace promptseg {

enum class ShapeFamily { disc, rectangle, elongated_strip, blob_cluster };

std::string_view to_string(ShapeFamily s);
ShapeFamily parse_shape_family(std::string_view name);

struct CategorySpec {
    std::string name;
    ShapeFamily shape = ShapeFamily::disc;
    int min_size = 6;   // radius / short side, pixels
    int max_size = 12;  // radius / long side, pixels
};

/// Version tag of the built-in category library and cue table. Bump when
/// either changes so generated datasets can be traced to it.
inline constexpr std::string_view kSceneLibraryVersion = "scene-library-v1";

struct SceneSpec {
    Canvas canvas{256, 256};
    std::vector<CategorySpec> categories;
    int min_instances = 2;
    int max_instances = 5;
    int min_separation = 4;  // Chebyshev pixel distance between instances
    double empty_target_probability = 0.2;
    int max_placement_attempts = 400;

    /// Five-category library: tank, greenhouse, runway, water, helipad.
    static SceneSpec defaults();
    /// Throws Error describing the first violated constraint.
    void validate() const;

    nlohmann::json to_json() const;
    /// Missing fields keep their defaults.
    static SceneSpec from_json(const nlohmann::json& j);
};

struct SceneInstance {
    int id = 0;
    int category = 0;
    BinaryMask mask;

    friend bool operator==(const SceneInstance&, const SceneInstance&) = default;
};

/// Labeled synthetic world. Instance masks are pairwise disjoint and
/// nonempty; ids are dense from 0.
struct Scene {
    int width = 0;
    int height = 0;
    std::vector<SceneInstance> instances;
    std::vector<std::string> category_names;  // index = category id

    Canvas canvas() const { return {width, height}; }
    bool has_category(int category) const;
    /// Union of every instance of `category` (all-background if absent).
    BinaryMask category_mask(int category) const;

    friend bool operator==(const Scene&, const Scene&) = default;
};

enum class QueryKind { explicit_name, implicit_cue, empty_target };

std::string_view to_string(QueryKind k);
QueryKind parse_query_kind(std::string_view name);

struct Query {
    std::string text;
    std::optional<int> target_category;
    QueryKind kind = QueryKind::explicit_name;
    BinaryMask gt_mask{1, 1};

    friend bool operator==(const Query&, const Query&) = default;
};

/// Category name -> implicit cue phrases. None of the phrases contain the
/// category name itself.
using CueTable = std::map<std::string, std::vector<std::string>, std::less<>>;

const CueTable& default_cue_table();

/// Deterministic for a given (spec, seed). Throws Error naming the seed when
/// an instance cannot be placed within the attempt budget.
Scene generate_scene(const SceneSpec& spec, std::uint64_t seed);

/// Throws Error when `kind` is impossible for the scene (no present category
/// for explicit/implicit, no absent category for empty_target).
Query generate_query(const Scene& scene, QueryKind kind, std::uint64_t seed,
                     const CueTable& cues = default_cue_table());

}  // namespace promptseg
