#include "helpers.hpp"

#include "promptseg/error.hpp"
#include "promptseg/scene.hpp"
#include "promptseg/segmenter.hpp"

#include <doctest.h>

#include <algorithm>
#include <cstdlib>
#include <set>

using namespace promptseg;
using testutil::mask_from_rows;

namespace {

PromptSchema schema(PromptMode m, Canvas c) {
    PromptSchema s;
    s.mode = m;
    s.canvas = c;
    return s;
}

PointPx pos(int x, int y) { return {x, y, Polarity::positive}; }
PointPx neg(int x, int y) { return {x, y, Polarity::negative}; }

// 30x20 scene: A = box [2..6]x[2..6], B = box [12..16]x[2..6], C = box [2..9]x[12..15]
Scene three_boxes() {
    Scene s;
    s.width = 30;
    s.height = 20;
    s.category_names = {"tank", "water"};
    BinaryMask a(30, 20), b(30, 20), c(30, 20);
    a.fill_box({2, 2, 6, 6});
    b.fill_box({12, 2, 16, 6});
    c.fill_box({2, 12, 9, 15});
    s.instances = {{0, 0, a}, {1, 0, b}, {2, 1, c}};
    return s;
}

BinaryMask instance_union(const Scene& s, const std::vector<int>& ids) {
    BinaryMask m(s.canvas());
    for (int id : ids)
        for (int y = 0; y < s.height; ++y)
            for (int x = 0; x < s.width; ++x)
                if (s.instances[std::size_t(id)].mask.at(x, y)) m.set(x, y);
    return m;
}

// Reference clustering: foreground pixels linked when both are core and
// within eps, border pixels join the first core cluster (in row-major scan
// order of cores) that reaches them. Brute force over all pixel pairs.
std::vector<BinaryMask> brute_dbscan(const BinaryMask& m, int eps, int min_pts) {
    std::vector<std::pair<int, int>> px;
    for (int y = 0; y < m.height(); ++y)
        for (int x = 0; x < m.width(); ++x)
            if (m.at(x, y)) px.push_back({x, y});
    auto near = [&](std::size_t i, std::size_t j) {
        return std::max(std::abs(px[i].first - px[j].first), std::abs(px[i].second - px[j].second)) <= eps;
    };
    std::size_t n = px.size();
    std::vector<bool> core(n);
    for (std::size_t i = 0; i < n; ++i) {
        int c = 0;
        for (std::size_t j = 0; j < n; ++j) c += near(i, j);
        core[i] = c >= min_pts;
    }
    std::vector<int> label(n, -1);
    int next = 0;
    for (std::size_t i = 0; i < n; ++i) {
        if (!core[i] || label[i] >= 0) continue;
        std::vector<std::size_t> stack{i};
        label[i] = next;
        while (!stack.empty()) {
            auto k = stack.back();
            stack.pop_back();
            for (std::size_t j = 0; j < n; ++j) {
                if (label[j] >= 0 || !near(k, j)) continue;
                label[j] = next;
                if (core[j]) stack.push_back(j);
            }
        }
        ++next;
    }
    std::vector<BinaryMask> out(std::size_t(next), BinaryMask(m.width(), m.height()));
    for (std::size_t i = 0; i < n; ++i)
        if (label[i] >= 0) out[std::size_t(label[i])].set(px[i].first, px[i].second);
    return out;
}

std::vector<int> brute_distance(const BinaryMask& m) {
    std::vector<int> d(std::size_t(m.width()) * std::size_t(m.height()), 0);
    for (int y = 0; y < m.height(); ++y)
        for (int x = 0; x < m.width(); ++x) {
            if (!m.at(x, y)) continue;
            // Distance to outside the canvas.
            int best = std::min({x + 1, y + 1, m.width() - x, m.height() - y});
            for (int v = 0; v < m.height(); ++v)
                for (int u = 0; u < m.width(); ++u)
                    if (!m.at(u, v)) best = std::min(best, std::max(std::abs(u - x), std::abs(v - y)));
            d[std::size_t(y) * std::size_t(m.width()) + std::size_t(x)] = best;
        }
    return d;
}

}  // namespace

TEST_CASE("selection rule examples") {
    auto s = three_boxes();
    SyntheticSegmenter seg;
    auto sch = schema(PromptMode::bbox_pos2, s.canvas());
    SegmentationTarget t{s, {}};

    // Tight box around A with points in A.
    InstancePrompt p{BBox{2, 2, 6, 6}, {pos(4, 4), pos(3, 3)}};
    CHECK(seg.select(s, p, sch) == std::vector<int>{0});
    CHECK(seg.execute(t, p, sch) == s.instances[0].mask);

    // Box over A and B, points only in A.
    InstancePrompt ab{BBox{0, 0, 20, 8}, {pos(4, 4), pos(5, 5)}};
    CHECK(seg.select(s, ab, sch) == std::vector<int>{0});

    // Points in both.
    InstancePrompt both{BBox{0, 0, 20, 8}, {pos(4, 4), pos(14, 4)}};
    CHECK(seg.select(s, both, sch) == std::vector<int>{0, 1});

    // Points in background: rule 4 falls back to the best candidate.
    InstancePrompt bg{BBox{1, 1, 8, 8}, {pos(0, 0), pos(8, 8)}};
    CHECK(seg.select(s, bg, sch) == std::vector<int>{0});

    // Box barely touching A: below the inside threshold, nothing.
    InstancePrompt edge{BBox{6, 6, 8, 8}, {pos(6, 6), pos(7, 7)}};
    CHECK(seg.select(s, edge, sch).empty());
    CHECK(seg.execute(t, edge, sch).empty());
}

TEST_CASE("rule 4 tie break checked by brute force") {
    // A and B both fully inside the box; B is larger; C partly inside.
    Scene s;
    s.width = s.height = 24;
    s.category_names = {"x"};
    BinaryMask a(24, 24), b(24, 24), c(24, 24);
    a.fill_box({1, 1, 3, 3});    // 9 px
    b.fill_box({8, 1, 12, 4});   // 20 px
    c.fill_box({16, 1, 22, 4});  // 28 px, x 16..22
    s.instances = {{0, 0, a}, {1, 0, b}, {2, 0, c}};
    BBox box{0, 0, 19, 10};
    double threshold = 0.5;

    // Reference: f_i by counting, then argmax of (f, area, -id).
    struct Cand {
        double f;
        long area;
        int id;
    };
    std::vector<Cand> cands;
    for (const auto& inst : s.instances) {
        long in = 0, area = 0;
        for (int y = 0; y < 24; ++y)
            for (int x = 0; x < 24; ++x)
                if (inst.mask.at(x, y)) {
                    ++area;
                    in += box.contains(x, y);
                }
        double f = double(in) / double(area);
        if (f >= threshold) cands.push_back({f, area, inst.id});
    }
    REQUIRE(cands.size() == 3);  // c has 16/28 inside
    auto best = *std::max_element(cands.begin(), cands.end(), [](const Cand& l, const Cand& r) {
        if (l.f != r.f) return l.f < r.f;
        if (l.area != r.area) return l.area < r.area;
        return l.id > r.id;
    });
    CHECK(best.id == 1);

    SyntheticSegmenter seg({threshold, 0.9});
    InstancePrompt p{box, {pos(6, 8), pos(14, 8)}};
    CHECK(seg.select(s, p, schema(PromptMode::bbox_pos2, s.canvas())) == std::vector<int>{best.id});
    CHECK(seg.select(s, InstancePrompt{box, {}}, schema(PromptMode::bbox_only, s.canvas())) ==
          std::vector<int>{best.id});
}

TEST_CASE("points-only and negative points") {
    auto s = three_boxes();
    SyntheticSegmenter seg;
    auto pts = schema(PromptMode::pos_points_2, s.canvas());
    CHECK(seg.select(s, {std::nullopt, {pos(4, 4), pos(3, 13)}}, pts) == std::vector<int>{0, 2});
    CHECK(seg.select(s, {std::nullopt, {pos(0, 0), pos(29, 19)}}, pts).empty());

    auto negs = schema(PromptMode::bbox_pos2_neg2, s.canvas());
    InstancePrompt p{BBox{0, 0, 20, 8}, {pos(4, 4), pos(14, 4), neg(0, 19), neg(29, 19)}};
    CHECK(seg.select(s, p, negs) == std::vector<int>{0, 1});
    p.points[2] = neg(15, 5);
    CHECK(seg.select(s, p, negs) == std::vector<int>{0});
}

TEST_CASE("negative point inside a selected instance removes it") {
    Rng rng(8);
    SyntheticSegmenter seg;
    for (int t = 0; t < 40; ++t) {
        auto s = generate_scene(SceneSpec::defaults(), std::uint64_t(t));
        auto sch = schema(PromptMode::bbox_pos2_neg2, s.canvas());
        for (const auto& inst : s.instances) {
            auto bp = derive_box_points(inst.mask);
            InstancePrompt p{bp.box, {bp.interior, bp.central, neg(0, 0), neg(0, 0)}};
            auto chosen = seg.select(s, p, sch);
            if (std::find(chosen.begin(), chosen.end(), inst.id) == chosen.end()) continue;
            p.points[2] = neg(bp.interior.x, bp.interior.y);
            auto after = seg.select(s, p, sch);
            CHECK(std::find(after.begin(), after.end(), inst.id) == after.end());
        }
    }
}

TEST_CASE("output is always a union of whole instances") {
    Rng rng(21);
    SyntheticSegmenter seg;
    const PromptMode modes[] = {PromptMode::bbox_only, PromptMode::pos_points_2, PromptMode::bbox_pos2,
                                PromptMode::bbox_pos4, PromptMode::bbox_pos2_neg2};
    for (int t = 0; t < 30; ++t) {
        auto s = generate_scene(SceneSpec::defaults(), std::uint64_t(500 + t));
        for (auto mode : modes) {
            auto sch = schema(mode, s.canvas());
            for (int k = 0; k < 10; ++k) {
                int x1 = int(rng.uniform_int(0, s.width - 1)), x2 = int(rng.uniform_int(x1, s.width - 1));
                int y1 = int(rng.uniform_int(0, s.height - 1)), y2 = int(rng.uniform_int(y1, s.height - 1));
                InstancePrompt p;
                if (sch.has_box()) p.bbox = BBox{x1, y1, x2, y2};
                for (int i = 0; i < sch.positive_points(); ++i)
                    p.points.push_back(pos(int(rng.uniform_int(x1, x2)), int(rng.uniform_int(y1, y2))));
                for (int i = 0; i < sch.negative_points(); ++i)
                    p.points.push_back(neg(int(rng.uniform_int(0, s.width - 1)), int(rng.uniform_int(0, s.height - 1))));
                auto out = seg.execute({s, {}}, p, sch);
                for (const auto& inst : s.instances) {
                    auto in = intersection_count(out, inst.mask);
                    REQUIRE((in == 0 || in == inst.mask.count()));
                }
                std::vector<int> ids;
                for (const auto& inst : s.instances)
                    if (intersection_count(out, inst.mask) > 0) ids.push_back(inst.id);
                REQUIRE(out == instance_union(s, ids));
                REQUIRE(seg.select(s, p, sch) == ids);
                if (mode == PromptMode::bbox_only) REQUIRE(ids.size() <= 1);
            }
        }
    }
}

TEST_CASE("prompt set execution") {
    auto s = three_boxes();
    SyntheticSegmenter seg;
    auto sch = schema(PromptMode::bbox_pos2, s.canvas());
    SegmentationTarget t{s, {}};
    CHECK(seg.execute_prompt_set(t, {}, sch) == BinaryMask(s.canvas()));

    InstancePrompt a{BBox{2, 2, 6, 6}, {pos(4, 4), pos(3, 3)}};
    InstancePrompt b{BBox{12, 2, 16, 6}, {pos(14, 4), pos(13, 3)}};
    CHECK(seg.execute_prompt_set(t, {{a, b}}, sch) == instance_union(s, {0, 1}));
    CHECK(seg.execute_prompt_set(t, {{a, a, a}}, sch) == seg.execute_prompt_set(t, {{a}}, sch));
    CHECK(seg.execute_prompt_set(t, {{b, a}}, sch) == seg.execute_prompt_set(t, {{a, b}}, sch));
}

TEST_CASE("oracle prompts recover every instance exactly") {
    SyntheticSegmenter seg;
    for (std::uint64_t seed = 0; seed < 40; ++seed) {
        auto s = generate_scene(SceneSpec::defaults(), seed);
        auto sch = schema(PromptMode::bbox_pos2, s.canvas());
        for (const auto& inst : s.instances) {
            auto bp = derive_box_points(inst.mask);
            InstancePrompt p{bp.box, {bp.interior, bp.central}};
            REQUIRE(inst.mask.at(bp.interior.x, bp.interior.y));
            REQUIRE(inst.mask.at(bp.central.x, bp.central.y));
            CHECK(iou(seg.execute({s, {}}, p, sch), inst.mask) == 1.0);
        }
    }
}

TEST_CASE("fill-box segmenter") {
    auto s = three_boxes();
    FillBoxSegmenter fb;
    auto sch = schema(PromptMode::bbox_pos2, s.canvas());
    auto m = fb.execute({s, {}}, {BBox{1, 1, 3, 2}, {pos(1, 1), pos(2, 2)}}, sch);
    CHECK(m.count() == 6);
    auto pts = schema(PromptMode::pos_points_2, s.canvas());
    auto q = fb.execute({s, {}}, {std::nullopt, {pos(1, 1), pos(5, 7)}}, pts);
    CHECK(q.count() == 2);
    CHECK(q.at(5, 7));
}

TEST_CASE("dbscan examples") {
    BinaryMask m(30, 10);
    m.fill_box({1, 1, 3, 3});
    m.fill_box({14, 4, 16, 6});
    auto parts = decompose_mask(m, 2, 4);
    REQUIRE(parts.size() == 2);
    CHECK(parts[0].count() == 9);
    CHECK(parts[0].at(1, 1));  // equal areas: first pixel decides
    CHECK(parts[1].at(15, 5));

    BinaryMask blob(10, 10);
    blob.fill_box({2, 2, 6, 5});
    auto one = decompose_mask(blob, 3, 5);
    REQUIRE(one.size() == 1);
    CHECK(one[0] == blob);

    CHECK(decompose_mask(BinaryMask(8, 8)).empty());

    // Isolated pixel is noise.
    BinaryMask noisy = blob;
    noisy.set(9, 9);
    auto kept = decompose_mask(noisy, 1, 3);
    REQUIRE(kept.size() == 1);
    CHECK(kept[0] == blob);
}

TEST_CASE("dbscan agrees with brute-force clustering") {
    Rng rng(13);
    for (int t = 0; t < 60; ++t) {
        int w = int(rng.uniform_int(5, 28)), h = int(rng.uniform_int(5, 20));
        auto m = testutil::random_mask(rng, w, h, rng.uniform(0.05, 0.4));
        int eps = int(rng.uniform_int(1, 3)), min_pts = int(rng.uniform_int(1, 8));
        auto got = decompose_mask(m, eps, min_pts);
        auto ref = brute_dbscan(m, eps, min_pts);
        REQUIRE(got.size() == ref.size());

        // Compare core membership exactly: border pixels may legally go to
        // either neighboring cluster, so compare the partition of core pixels
        // and require every pixel to sit in exactly one output.
        BinaryMask seen(w, h);
        for (const auto& part : got) {
            REQUIRE_FALSE(part.empty());
            REQUIRE(intersection_count(seen, part) == 0);
            std::vector<BinaryMask> u{seen, part};
            seen = mask_union(u);
        }
        BinaryMask ref_all(w, h);
        for (const auto& part : ref) {
            std::vector<BinaryMask> u{ref_all, part};
            ref_all = mask_union(u);
        }
        REQUIRE(seen == ref_all);
        REQUIRE(intersection_count(seen, m) == seen.count());
        for (std::size_t i = 1; i < got.size(); ++i) REQUIRE(got[i - 1].count() >= got[i].count());
    }
}

TEST_CASE("dbscan clusters are eps-connected and disjoint") {
    Rng rng(19);
    for (int t = 0; t < 40; ++t) {
        auto m = testutil::random_mask(rng, 20, 20, 0.2);
        int eps = int(rng.uniform_int(1, 3));
        for (const auto& part : decompose_mask(m, eps, 3)) {
            // Flood fill inside the part using the eps neighborhood.
            std::vector<std::pair<int, int>> px;
            for (int y = 0; y < 20; ++y)
                for (int x = 0; x < 20; ++x)
                    if (part.at(x, y)) px.push_back({x, y});
            std::vector<bool> reached(px.size());
            std::vector<std::size_t> stack{0};
            reached[0] = true;
            std::size_t count = 1;
            while (!stack.empty()) {
                auto k = stack.back();
                stack.pop_back();
                for (std::size_t j = 0; j < px.size(); ++j) {
                    if (reached[j]) continue;
                    if (std::max(std::abs(px[k].first - px[j].first), std::abs(px[k].second - px[j].second)) <= eps) {
                        reached[j] = true;
                        ++count;
                        stack.push_back(j);
                    }
                }
            }
            REQUIRE(count == px.size());
        }
    }
}

TEST_CASE("distance transform matches brute force") {
    Rng rng(23);
    for (int t = 0; t < 60; ++t) {
        int w = int(rng.uniform_int(1, 24)), h = int(rng.uniform_int(1, 24));
        auto m = testutil::random_mask(rng, w, h, rng.uniform(0.3, 1.0));
        REQUIRE(chebyshev_distance_transform(m) == brute_distance(m));
    }
}

TEST_CASE("derive_box_points examples") {
    BinaryMask r(10, 10);
    r.fill_box({2, 3, 5, 7});
    auto bp = derive_box_points(r);
    CHECK(bp.box == BBox{2, 3, 5, 7});
    CHECK(bp.interior != bp.central);

    BinaryMask one(5, 5);
    one.set(3, 1);
    auto single = derive_box_points(one);
    CHECK(single.box == BBox{3, 1, 3, 1});
    CHECK(single.interior == PointPx{3, 1, Polarity::positive});
    CHECK(single.central == single.interior);

    BinaryMask two(5, 5);
    two.set(1, 1);
    two.set(2, 1);
    auto pair = derive_box_points(two);
    CHECK(pair.interior != pair.central);

    CHECK_THROWS_AS(derive_box_points(BinaryMask(4, 4)), Error);
}

TEST_CASE("L shape: interior point lies in the thicker arm") {
    // Thick vertical arm x 1..8, y 1..18; thin horizontal arm y 16..18, x 9..28.
    auto m = mask_from_rows({
        "..............................",
        ".########.....................",
        ".########.....................",
        ".########.....................",
        ".########.....................",
        ".########.....................",
        ".########.....................",
        ".########.....................",
        ".########.....................",
        ".########.....................",
        ".########.....................",
        ".########.....................",
        ".########.....................",
        ".########.....................",
        ".########.....................",
        ".############################.",
        ".############################.",
        ".############################.",
        ".############################.",
        "..............................",
    });
    auto d = brute_distance(m);
    int peak = *std::max_element(d.begin(), d.end());
    auto bp = derive_box_points(m);
    CHECK(bp.interior.x <= 8);
    CHECK(d[std::size_t(bp.interior.y) * 30 + std::size_t(bp.interior.x)] == peak);
    // first peak pixel in row-major order
    std::size_t first = std::size_t(std::find(d.begin(), d.end(), peak) - d.begin());
    CHECK(bp.interior.x == int(first % 30));
    CHECK(bp.interior.y == int(first / 30));
}

TEST_CASE("params validation") {
    CHECK_THROWS_AS(SyntheticSegmenter({0.0, 0.9}), Error);
    CHECK_THROWS_AS(SyntheticSegmenter({1.5, 0.9}), Error);
    CHECK_NOTHROW(SyntheticSegmenter({1.0, 0.9}));
}
