#include "promptseg/scene.hpp"

#include "promptseg/error.hpp"
#include "promptseg/rng.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace promptseg {

using json = nlohmann::json;

std::string_view to_string(ShapeFamily s) {
    switch (s) {
        case ShapeFamily::disc: return "disc";
        case ShapeFamily::rectangle: return "rectangle";
        case ShapeFamily::elongated_strip: return "elongated_strip";
        case ShapeFamily::blob_cluster: return "blob_cluster";
    }
    return "?";
}

ShapeFamily parse_shape_family(std::string_view name) {
    for (auto s : {ShapeFamily::disc, ShapeFamily::rectangle, ShapeFamily::elongated_strip,
                   ShapeFamily::blob_cluster})
        if (to_string(s) == name) return s;
    throw Error("unknown shape family '" + std::string(name) + "'");
}

std::string_view to_string(QueryKind k) {
    switch (k) {
        case QueryKind::explicit_name: return "explicit";
        case QueryKind::implicit_cue: return "implicit";
        case QueryKind::empty_target: return "empty_target";
    }
    return "?";
}

QueryKind parse_query_kind(std::string_view name) {
    for (auto k : {QueryKind::explicit_name, QueryKind::implicit_cue, QueryKind::empty_target})
        if (to_string(k) == name) return k;
    throw Error("unknown query kind '" + std::string(name) + "'");
}

SceneSpec SceneSpec::defaults() {
    SceneSpec s;
    s.categories = {
        {"tank", ShapeFamily::disc, 7, 12},
        {"greenhouse", ShapeFamily::rectangle, 8, 20},
        {"runway", ShapeFamily::elongated_strip, 60, 110},
        {"water", ShapeFamily::blob_cluster, 10, 16},
        {"helipad", ShapeFamily::disc, 4, 6},
    };
    return s;
}

void SceneSpec::validate() const {
    if (canvas.width < 8 || canvas.height < 8) throw Error("scene spec: canvas must be at least 8x8");
    if (categories.empty()) throw Error("scene spec: category library is empty");
    for (const auto& c : categories) {
        if (c.name.empty()) throw Error("scene spec: category with empty name");
        if (c.min_size < 1 || c.min_size > c.max_size)
            throw Error("scene spec: category '" + c.name + "' has an empty size range");
    }
    if (min_instances < 1 || min_instances > max_instances)
        throw Error("scene spec: instance count range is empty");
    if (min_separation < 2) throw Error("scene spec: min separation must be at least 2");
    if (empty_target_probability < 0.0 || empty_target_probability > 1.0)
        throw Error("scene spec: empty-target probability must lie in [0, 1]");
    if (max_placement_attempts < 1) throw Error("scene spec: placement attempts must be positive");
}

json SceneSpec::to_json() const {
    json cats = json::array();
    for (const auto& c : categories)
        cats.push_back({{"name", c.name}, {"shape", to_string(c.shape)}, {"min_size", c.min_size},
                        {"max_size", c.max_size}});
    return {{"library_version", kSceneLibraryVersion},
            {"canvas", {{"width", canvas.width}, {"height", canvas.height}}},
            {"categories", cats},
            {"min_instances", min_instances},
            {"max_instances", max_instances},
            {"min_separation", min_separation},
            {"empty_target_probability", empty_target_probability},
            {"max_placement_attempts", max_placement_attempts}};
}

SceneSpec SceneSpec::from_json(const json& j) {
    SceneSpec s = defaults();
    try {
        if (j.contains("canvas")) {
            s.canvas.width = j.at("canvas").at("width").get<int>();
            s.canvas.height = j.at("canvas").at("height").get<int>();
        }
        if (j.contains("categories")) {
            s.categories.clear();
            for (const auto& c : j.at("categories"))
                s.categories.push_back({c.at("name").get<std::string>(),
                                        parse_shape_family(c.at("shape").get<std::string>()),
                                        c.at("min_size").get<int>(), c.at("max_size").get<int>()});
        }
        s.min_instances = j.value("min_instances", s.min_instances);
        s.max_instances = j.value("max_instances", s.max_instances);
        s.min_separation = j.value("min_separation", s.min_separation);
        s.empty_target_probability = j.value("empty_target_probability", s.empty_target_probability);
        s.max_placement_attempts = j.value("max_placement_attempts", s.max_placement_attempts);
    } catch (const json::exception& e) {
        throw Error(std::string("scene spec: ") + e.what());
    }
    return s;
}

bool Scene::has_category(int category) const {
    return std::any_of(instances.begin(), instances.end(),
                       [&](const SceneInstance& i) { return i.category == category; });
}

BinaryMask Scene::category_mask(int category) const {
    BinaryMask m(width, height);
    for (const auto& inst : instances)
        if (inst.category == category) m |= inst.mask;
    return m;
}

const CueTable& default_cue_table() {
    static const CueTable table = {
        {"tank", {"facility storing flammable liquids", "cylindrical containers holding fuel reserves"}},
        {"greenhouse", {"glass-covered structures for growing crops", "covered sheds for year-round cultivation"}},
        {"runway", {"paved surface where aircraft take off", "long strip used by planes for landing"}},
        {"water", {"reservoir that could supply irrigation", "surface where boats could float"}},
        {"helipad", {"marked landing spot for rotorcraft", "place where a medical chopper would touch down"}},
    };
    return table;
}

namespace {

// Shape pixels relative to an anchor, in local coordinates with offsets.
struct Stamp {
    int x0 = 0, y0 = 0;  // top-left of the local grid relative to the anchor
    int w = 0, h = 0;
    std::vector<std::uint8_t> px;

    bool at(int lx, int ly) const { return px[std::size_t(ly) * std::size_t(w) + std::size_t(lx)] != 0; }
};

Stamp disc_stamp(int r) {
    Stamp s{-r, -r, 2 * r + 1, 2 * r + 1, {}};
    s.px.assign(std::size_t(s.w) * std::size_t(s.h), 0);
    for (int y = -r; y <= r; ++y)
        for (int x = -r; x <= r; ++x)
            if (x * x + y * y <= r * r) s.px[std::size_t(y + r) * std::size_t(s.w) + std::size_t(x + r)] = 1;
    return s;
}

Stamp rect_stamp(int w, int h) {
    Stamp s{-(w / 2), -(h / 2), w, h, {}};
    s.px.assign(std::size_t(w) * std::size_t(h), 1);
    return s;
}

Stamp blob_stamp(Rng& rng, int r) {
    int lobes = int(rng.uniform_int(3, 5));
    int reach = 2 * r;
    Stamp s{-reach, -reach, 2 * reach + 1, 2 * reach + 1, {}};
    s.px.assign(std::size_t(s.w) * std::size_t(s.h), 0);
    for (int k = 0; k < lobes; ++k) {
        int lr = int(rng.uniform_int(std::max(2, r / 2), r));
        int ox = k == 0 ? 0 : int(rng.uniform_int(-(r - lr / 2), r - lr / 2));
        int oy = k == 0 ? 0 : int(rng.uniform_int(-(r - lr / 2), r - lr / 2));
        for (int y = -lr; y <= lr; ++y)
            for (int x = -lr; x <= lr; ++x)
                if (x * x + y * y <= lr * lr)
                    s.px[std::size_t(oy + y + reach) * std::size_t(s.w) + std::size_t(ox + x + reach)] = 1;
    }
    return s;
}

Stamp make_stamp(Rng& rng, const CategorySpec& c) {
    switch (c.shape) {
        case ShapeFamily::disc: return disc_stamp(int(rng.uniform_int(c.min_size, c.max_size)));
        case ShapeFamily::rectangle:
            return rect_stamp(int(rng.uniform_int(c.min_size, c.max_size)),
                              int(rng.uniform_int(c.min_size, c.max_size)));
        case ShapeFamily::elongated_strip: {
            int len = int(rng.uniform_int(c.min_size, c.max_size));
            int thick = std::max(3, len / 10);
            return rng.bernoulli(0.5) ? rect_stamp(len, thick) : rect_stamp(thick, len);
        }
        case ShapeFamily::blob_cluster: return blob_stamp(rng, int(rng.uniform_int(c.min_size, c.max_size)));
    }
    throw Error("unhandled shape family");
}

// Summed-area table over occupied pixels for O(1) separation queries.
class Occupancy {
public:
    Occupancy(int w, int h) : w_(w), h_(h), sat_(std::size_t(w + 1) * std::size_t(h + 1), 0) {}

    void rebuild(const BinaryMask& occupied) {
        for (int y = 0; y < h_; ++y) {
            std::int64_t row = 0;
            for (int x = 0; x < w_; ++x) {
                row += occupied.at(x, y) ? 1 : 0;
                sat_[idx(x + 1, y + 1)] = sat_[idx(x + 1, y)] + row;
            }
        }
    }

    // Any occupied pixel within Chebyshev distance < sep of (x, y)?
    bool near(int x, int y, int sep) const {
        int x1 = std::max(0, x - sep + 1), y1 = std::max(0, y - sep + 1);
        int x2 = std::min(w_ - 1, x + sep - 1), y2 = std::min(h_ - 1, y + sep - 1);
        std::int64_t n = sat_[idx(x2 + 1, y2 + 1)] - sat_[idx(x1, y2 + 1)] - sat_[idx(x2 + 1, y1)] + sat_[idx(x1, y1)];
        return n > 0;
    }

private:
    std::size_t idx(int x, int y) const { return std::size_t(y) * std::size_t(w_ + 1) + std::size_t(x); }
    int w_, h_;
    std::vector<std::int64_t> sat_;
};

}  // namespace

Scene generate_scene(const SceneSpec& spec, std::uint64_t seed) {
    spec.validate();
    Rng rng(seed);
    const int C = int(spec.categories.size());
    const int W = spec.canvas.width, H = spec.canvas.height;

    int n = int(rng.uniform_int(spec.min_instances, spec.max_instances));
    bool force_absent = C > 1 && rng.bernoulli(spec.empty_target_probability);
    int k_max = std::min(n, force_absent ? C - 1 : C);
    int k = int(rng.uniform_int(1, k_max));

    std::vector<int> order(static_cast<std::size_t>(C));
    std::iota(order.begin(), order.end(), 0);
    for (int i = C - 1; i > 0; --i) std::swap(order[std::size_t(i)], order[std::size_t(rng.uniform_int(0, i))]);
    std::vector<int> cats;
    for (int i = 0; i < n; ++i)
        cats.push_back(i < k ? order[std::size_t(i)] : order[std::size_t(rng.uniform_int(0, k - 1))]);

    Scene scene;
    scene.width = W;
    scene.height = H;
    for (const auto& c : spec.categories) scene.category_names.push_back(c.name);

    BinaryMask occupied(W, H);
    Occupancy occ(W, H);
    for (int i = 0; i < n; ++i) {
        const CategorySpec& cat = spec.categories[std::size_t(cats[std::size_t(i)])];
        bool placed = false;
        for (int attempt = 0; attempt < spec.max_placement_attempts && !placed; ++attempt) {
            Stamp st = make_stamp(rng, cat);
            int ax = int(rng.uniform_int(0, W - 1));
            int ay = int(rng.uniform_int(0, H - 1));
            bool ok = true;
            bool any = false;
            for (int ly = 0; ly < st.h && ok; ++ly) {
                for (int lx = 0; lx < st.w && ok; ++lx) {
                    if (!st.at(lx, ly)) continue;
                    int x = ax + st.x0 + lx, y = ay + st.y0 + ly;
                    // one-pixel border keeps shapes whole inside the canvas
                    if (x < 1 || y < 1 || x >= W - 1 || y >= H - 1 || occ.near(x, y, spec.min_separation))
                        ok = false;
                    any = true;
                }
            }
            if (!ok || !any) continue;
            BinaryMask m(W, H);
            for (int ly = 0; ly < st.h; ++ly)
                for (int lx = 0; lx < st.w; ++lx)
                    if (st.at(lx, ly)) m.set(ax + st.x0 + lx, ay + st.y0 + ly);
            occupied |= m;
            occ.rebuild(occupied);
            scene.instances.push_back({i, cats[std::size_t(i)], std::move(m)});
            placed = true;
        }
        if (!placed) {
            throw Error("scene generation failed for seed " + std::to_string(seed) + ": could not place instance " +
                        std::to_string(i) + " (" + cat.name + ") after " +
                        std::to_string(spec.max_placement_attempts) + " attempts");
        }
    }
    return scene;
}

Query generate_query(const Scene& scene, QueryKind kind, std::uint64_t seed, const CueTable& cues) {
    Rng rng(seed);
    std::vector<int> present, absent;
    for (int c = 0; c < int(scene.category_names.size()); ++c)
        (scene.has_category(c) ? present : absent).push_back(c);

    const auto& pool = kind == QueryKind::empty_target ? absent : present;
    if (pool.empty()) {
        throw Error(std::string("cannot build a ") + std::string(to_string(kind)) + " query: scene has no " +
                    (kind == QueryKind::empty_target ? "absent" : "present") + " category");
    }
    int cat = pool[std::size_t(rng.uniform_int(0, std::int64_t(pool.size()) - 1))];
    const std::string& name = scene.category_names[std::size_t(cat)];

    auto cue_text = [&]() {
        auto it = cues.find(name);
        if (it == cues.end() || it->second.empty()) throw Error("no implicit cue for category '" + name + "'");
        const auto& phrases = it->second;
        return "segment every " + phrases[std::size_t(rng.uniform_int(0, std::int64_t(phrases.size()) - 1))];
    };

    Query q;
    q.kind = kind;
    q.target_category = cat;
    switch (kind) {
        case QueryKind::explicit_name: q.text = "segment every " + name; break;
        case QueryKind::implicit_cue: q.text = cue_text(); break;
        case QueryKind::empty_target: q.text = rng.bernoulli(0.5) ? "segment every " + name : cue_text(); break;
    }
    q.gt_mask = scene.category_mask(cat);
    return q;
}

}  // namespace promptseg
