#include "helpers.hpp"

#include "promptseg/dataset.hpp"
#include "promptseg/error.hpp"
#include "promptseg/scene.hpp"

#include <doctest.h>

#include <algorithm>
#include <cctype>
#include <cstdlib>
#include <fstream>

using namespace promptseg;

namespace {

std::string lower(std::string s) {
    for (auto& c : s) c = char(std::tolower(static_cast<unsigned char>(c)));
    return s;
}

// Minimum Chebyshev distance between pixels of different instances, by
// brute force over every pixel pair.
int min_pairwise_distance(const Scene& s) {
    std::vector<std::vector<std::pair<int, int>>> pix(s.instances.size());
    for (std::size_t i = 0; i < s.instances.size(); ++i)
        for (int y = 0; y < s.height; ++y)
            for (int x = 0; x < s.width; ++x)
                if (s.instances[i].mask.at(x, y)) pix[i].push_back({x, y});
    int best = 1 << 30;
    for (std::size_t i = 0; i < pix.size(); ++i)
        for (std::size_t j = i + 1; j < pix.size(); ++j)
            for (auto [ax, ay] : pix[i])
                for (auto [bx, by] : pix[j]) best = std::min(best, std::max(std::abs(ax - bx), std::abs(ay - by)));
    return best;
}

void check_scene_invariants(const Scene& s) {
    BinaryMask seen(s.canvas());
    for (std::size_t i = 0; i < s.instances.size(); ++i) {
        const auto& inst = s.instances[i];
        REQUIRE(inst.id == int(i));
        REQUIRE(inst.mask.width() == s.width);
        REQUIRE_FALSE(inst.mask.empty());
        REQUIRE(inst.category >= 0);
        REQUIRE(inst.category < int(s.category_names.size()));
        REQUIRE(intersection_count(seen, inst.mask) == 0);
        std::vector<BinaryMask> both{seen, inst.mask};
        seen = mask_union(both);
    }
}

}  // namespace

TEST_CASE("scene generation is deterministic") {
    auto spec = SceneSpec::defaults();
    for (std::uint64_t seed : {0ull, 1ull, 42ull, 0xffffffffffffffffull}) {
        CHECK(generate_scene(spec, seed) == generate_scene(spec, seed));
    }
    CHECK_FALSE(generate_scene(spec, 1) == generate_scene(spec, 2));
}

TEST_CASE("instance count range is honored") {
    auto spec = SceneSpec::defaults();
    spec.min_instances = spec.max_instances = 3;
    for (std::uint64_t seed = 0; seed < 20; ++seed) CHECK(generate_scene(spec, seed).instances.size() == 3);
}

TEST_CASE("instances respect min separation, checked pixel pair by pixel pair") {
    auto spec = SceneSpec::defaults();
    spec.min_separation = 4;
    for (std::uint64_t seed = 0; seed < 6; ++seed) {
        auto s = generate_scene(spec, seed);
        check_scene_invariants(s);
        if (s.instances.size() > 1) CHECK(min_pairwise_distance(s) >= 4);
    }
    spec.min_separation = 9;
    auto s = generate_scene(spec, 3);
    if (s.instances.size() > 1) CHECK(min_pairwise_distance(s) >= 9);
}

TEST_CASE("scene invariants over many seeds") {
    auto spec = SceneSpec::defaults();
    for (std::uint64_t seed = 100; seed < 160; ++seed) {
        auto s = generate_scene(spec, seed);
        check_scene_invariants(s);
        CHECK(int(s.instances.size()) >= spec.min_instances);
        CHECK(int(s.instances.size()) <= spec.max_instances);
    }
}

TEST_CASE("placement failure names the seed") {
    auto spec = SceneSpec::defaults();
    spec.canvas = {24, 24};
    spec.min_instances = spec.max_instances = 6;
    spec.max_placement_attempts = 5;
    try {
        generate_scene(spec, 31337);
        FAIL("expected failure");
    } catch (const Error& e) {
        CHECK(std::string(e.what()).find("31337") != std::string::npos);
    }
}

TEST_CASE("spec validation") {
    auto spec = SceneSpec::defaults();
    CHECK_NOTHROW(spec.validate());
    auto bad = spec;
    bad.min_separation = 1;
    CHECK_THROWS_AS(bad.validate(), Error);
    bad = spec;
    bad.min_instances = 4;
    bad.max_instances = 3;
    CHECK_THROWS_AS(bad.validate(), Error);
    bad = spec;
    bad.categories.clear();
    CHECK_THROWS_AS(bad.validate(), Error);
    CHECK(SceneSpec::from_json(spec.to_json()).to_json() == spec.to_json());
}

TEST_CASE("query ground truth is the union of the category's instances") {
    auto spec = SceneSpec::defaults();
    for (std::uint64_t seed = 0; seed < 40; ++seed) {
        auto s = generate_scene(spec, seed);
        for (auto kind : {QueryKind::explicit_name, QueryKind::implicit_cue}) {
            auto q = generate_query(s, kind, seed);
            REQUIRE(q.target_category);
            BinaryMask ref(s.canvas());
            for (const auto& inst : s.instances)
                if (inst.category == *q.target_category)
                    for (int y = 0; y < s.height; ++y)
                        for (int x = 0; x < s.width; ++x)
                            if (inst.mask.at(x, y)) ref.set(x, y);
            REQUIRE(q.gt_mask == ref);
            REQUIRE_FALSE(q.gt_mask.empty());
            const auto& name = s.category_names[std::size_t(*q.target_category)];
            if (kind == QueryKind::explicit_name) {
                CHECK(q.text == "segment every " + name);
            } else {
                CHECK(lower(q.text).find(name) == std::string::npos);
                const auto& cues = default_cue_table().at(name);
                CHECK(std::find_if(cues.begin(), cues.end(), [&](const std::string& c) {
                          return q.text == "segment every " + c;
                      }) != cues.end());
            }
        }
        bool any_absent = false;
        for (int c = 0; c < int(s.category_names.size()); ++c) any_absent |= !s.has_category(c);
        if (any_absent) {
            auto q = generate_query(s, QueryKind::empty_target, seed);
            REQUIRE(q.kind == QueryKind::empty_target);
            REQUIRE(q.target_category);
            CHECK_FALSE(s.has_category(*q.target_category));
            CHECK(q.gt_mask.empty());
        } else {
            CHECK_THROWS_AS(generate_query(s, QueryKind::empty_target, seed), Error);
        }
    }
}

TEST_CASE("explicit query over two tanks covers both") {
    Scene s;
    s.width = s.height = 20;
    s.category_names = {"tank", "runway"};
    BinaryMask a(20, 20), b(20, 20), c(20, 20);
    a.fill_box({1, 1, 3, 3});
    b.fill_box({10, 10, 12, 12});
    c.fill_box({1, 15, 18, 16});
    s.instances = {{0, 0, a}, {1, 1, c}, {2, 0, b}};
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        auto q = generate_query(s, QueryKind::explicit_name, seed);
        if (q.target_category != 0) continue;
        CHECK(q.gt_mask.count() == 18);
        CHECK(q.gt_mask.at(2, 2));
        CHECK(q.gt_mask.at(11, 11));
        CHECK_FALSE(q.gt_mask.at(5, 15));
        return;
    }
    FAIL("no tank query drawn in 20 seeds");
}

TEST_CASE("cue table never names its category") {
    for (const auto& [name, cues] : default_cue_table()) {
        REQUIRE_FALSE(cues.empty());
        for (const auto& cue : cues) CHECK(lower(cue).find(name) == std::string::npos);
    }
    const auto& tank = default_cue_table().at("tank");
    CHECK(std::find(tank.begin(), tank.end(), "facility storing flammable liquids") != tank.end());
}

TEST_CASE("dataset generation and kinds") {
    auto spec = SceneSpec::defaults();
    DatasetOptions opts;
    opts.scenes = 12;
    opts.seed = 5;
    opts.queries_per_scene = 2;
    auto d = generate_dataset(spec, opts);
    CHECK(d.scenes.size() == 12);
    CHECK(d.queries.size() == 24);
    opts.jobs = 3;
    CHECK(generate_dataset(spec, opts) == d);

    opts.forced_kind = QueryKind::empty_target;
    auto e = generate_dataset(spec, opts);
    for (const auto& q : e.queries) {
        CHECK(q.query.kind == QueryKind::empty_target);
        CHECK(q.query.gt_mask.empty());
    }
}

TEST_CASE("dataset round trip through disk") {
    testutil::TempDir dir("ds");
    DatasetOptions opts;
    opts.scenes = 3;
    opts.seed = 11;
    opts.queries_per_scene = 2;
    auto d = generate_dataset(SceneSpec::defaults(), opts);
    write_dataset(d, dir.path(), nlohmann::json{{"note", "test"}});
    CHECK(std::filesystem::exists(dir.path() / "scenes/0/meta.json"));
    CHECK(std::filesystem::exists(dir.path() / "scenes/2/image.png"));
    CHECK(std::filesystem::exists(dir.path() / "generation.json"));
    auto r = read_dataset(dir.path());
    CHECK(r == d);
    CHECK(dataset_digest(r) == dataset_digest(d));
    CHECK(r.image_path(1) == dir.path() / "scenes/1/image.png");
}

TEST_CASE("dataset digest tracks content") {
    DatasetOptions opts;
    opts.scenes = 2;
    auto a = generate_dataset(SceneSpec::defaults(), opts);
    auto b = a;
    CHECK(dataset_digest(a) == dataset_digest(b));
    b.queries[0].query.text += "!";
    CHECK(dataset_digest(a) != dataset_digest(b));
}

TEST_CASE("reader errors name the file and line") {
    testutil::TempDir dir("dserr");
    DatasetOptions opts;
    opts.scenes = 2;
    auto d = generate_dataset(SceneSpec::defaults(), opts);
    write_dataset(d, dir.path());

    SUBCASE("missing meta.json") {
        std::filesystem::remove(dir.path() / "scenes/1/meta.json");
        try {
            read_dataset(dir.path());
            FAIL("expected IoError");
        } catch (const IoError& e) {
            CHECK(std::string(e.what()).find("meta.json") != std::string::npos);
        }
    }
    SUBCASE("unknown scene index") {
        std::ifstream in(dir.path() / "queries.jsonl");
        std::string l1, l2;
        std::getline(in, l1);
        std::getline(in, l2);
        in.close();
        auto j = nlohmann::json::parse(l2);
        j["scene"] = 7;
        std::ofstream(dir.path() / "queries.jsonl") << l1 << "\n" << j.dump() << "\n";
        try {
            read_dataset(dir.path());
            FAIL("expected IoError");
        } catch (const IoError& e) {
            std::string msg = e.what();
            CHECK(msg.find("queries.jsonl:2") != std::string::npos);
        }
    }
    SUBCASE("missing directory") { CHECK_THROWS_AS(read_dataset(dir.path() / "nope"), IoError); }
}

TEST_CASE("kind names") {
    for (auto k : {QueryKind::explicit_name, QueryKind::implicit_cue, QueryKind::empty_target})
        CHECK(parse_query_kind(to_string(k)) == k);
    for (auto s : {ShapeFamily::disc, ShapeFamily::rectangle, ShapeFamily::elongated_strip, ShapeFamily::blob_cluster})
        CHECK(parse_shape_family(to_string(s)) == s);
}
