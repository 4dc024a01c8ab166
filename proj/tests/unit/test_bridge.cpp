#include "helpers.hpp"

#include "promptseg/bridge.hpp"
#include "promptseg/error.hpp"
#include "promptseg/eval.hpp"
#include "promptseg/image.hpp"

#include <doctest.h>

#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

using namespace promptseg;
using json = nlohmann::json;

namespace {

const std::string kStub = PROMPTSEG_STUB_BRIDGE;

PromptSchema schema_of(PromptMode m, Canvas c) {
    PromptSchema s;
    s.mode = m;
    s.canvas = c;
    return s;
}

PromptSet random_prompts(Rng& rng, const PromptSchema& s) {
    PromptSet set;
    int n = int(rng.uniform_int(0, 3));
    for (int i = 0; i < n; ++i) {
        int w = s.canvas.width, h = s.canvas.height;
        int x1 = int(rng.uniform_int(0, w - 1)), x2 = int(rng.uniform_int(x1, w - 1));
        int y1 = int(rng.uniform_int(0, h - 1)), y2 = int(rng.uniform_int(y1, h - 1));
        InstancePrompt p;
        if (s.has_box()) p.bbox = BBox{x1, y1, x2, y2};
        for (int k = 0; k < s.positive_points(); ++k)
            p.points.push_back({int(rng.uniform_int(x1, x2)), int(rng.uniform_int(y1, y2)), Polarity::positive});
        for (int k = 0; k < s.negative_points(); ++k)
            p.points.push_back({int(rng.uniform_int(0, w - 1)), int(rng.uniform_int(0, h - 1)), Polarity::negative});
        set.instances.push_back(p);
    }
    return set;
}

void write_blank_png(const std::filesystem::path& p, int w, int h) {
    std::vector<std::uint8_t> rgb(std::size_t(w) * std::size_t(h) * 3, 0);
    write_png_rgb(p, w, h, rgb);
}

// Feeds `input` to the stub and returns its output lines.
std::vector<std::string> run_stub(const std::filesystem::path& dir, const std::string& input) {
    auto in = dir / "stub_in.txt";
    std::ofstream(in) << input;
    std::string cmd = "'" + kStub + "' < '" + in.string() + "'";
    std::FILE* pipe = ::popen(cmd.c_str(), "r");
    REQUIRE(pipe);
    std::string out;
    char buf[4096];
    std::size_t n;
    while ((n = std::fread(buf, 1, sizeof buf, pipe)) > 0) out.append(buf, n);
    ::pclose(pipe);
    std::vector<std::string> lines;
    std::istringstream ss(out);
    for (std::string l; std::getline(ss, l);) lines.push_back(l);
    return lines;
}

}  // namespace

TEST_CASE("request encoding round trip") {
    Rng rng(1);
    const PromptMode modes[] = {PromptMode::bbox_only, PromptMode::pos_points_2, PromptMode::bbox_pos2,
                                PromptMode::bbox_pos4, PromptMode::bbox_pos2_neg2};
    for (int t = 0; t < 100; ++t) {
        auto s = schema_of(modes[t % 5], {64, 48});
        auto set = random_prompts(rng, s);
        auto j = encode_bridge_request("req-" + std::to_string(t), "/x/image.png", set, s);
        auto back = decode_bridge_request(json::parse(j.dump()));
        CHECK(back.id == "req-" + std::to_string(t));
        CHECK(back.image_path == "/x/image.png");
        CHECK(back.schema == to_string(s.mode));
        CHECK(back.prompts == set);
        for (const auto& p : j["prompts"]) {
            CHECK(p["labels"].size() == p["points"].size());
            CHECK(p.contains("bbox") == s.has_box());
        }
    }
    CHECK_THROWS_AS(decode_bridge_request(json{{"id", "a"}}), Error);
    CHECK_THROWS_AS(decode_bridge_request(json::parse(
                        R"({"id":"a","image_path":"p","schema":"bbox_pos2","prompts":[{"points":[[1,2]],"labels":[2]}]})")),
                    Error);
}

TEST_CASE("response encoding round trip") {
    BridgeResponse ok;
    ok.id = "req-3";
    ok.ok = true;
    ok.mask = RleMask{4, 2, {1, 3, 4}};
    auto back = decode_bridge_response(encode_bridge_response(ok).dump());
    CHECK(back.ok);
    CHECK(back.id == "req-3");
    CHECK(*back.mask == *ok.mask);

    BridgeResponse err;
    err.id = "unknown";
    err.error_code = "bad_request";
    err.error_detail = "nope";
    auto e = decode_bridge_response(encode_bridge_response(err).dump());
    CHECK_FALSE(e.ok);
    CHECK(e.error_code == "bad_request");
    CHECK(e.error_detail == "nope");

    CHECK_THROWS_AS(decode_bridge_response("{"), Error);
    CHECK_THROWS_AS(decode_bridge_response(R"({"id":"a","ok":true})"), Error);
}

TEST_CASE("stub bridge answers 100 random requests like the in-process fill backend") {
    testutil::TempDir dir("bridge");
    Canvas c{48, 32};
    write_blank_png(dir.path() / "image.png", c.width, c.height);
    Scene scene;
    scene.width = c.width;
    scene.height = c.height;
    SegmentationTarget target{scene, dir.path() / "image.png"};

    BridgeSegmenter bridge(kStub);
    FillBoxSegmenter fill;
    CHECK(bridge.name() == "bridge:" + kStub);
    Rng rng(2);
    const PromptMode modes[] = {PromptMode::bbox_only, PromptMode::pos_points_2, PromptMode::bbox_pos2,
                                PromptMode::bbox_pos4, PromptMode::bbox_pos2_neg2};
    for (int t = 0; t < 100; ++t) {
        auto s = schema_of(modes[t % 5], c);
        auto set = random_prompts(rng, s);
        auto got = bridge.execute_prompt_set(target, set, s);
        REQUIRE(got.width() == c.width);
        REQUIRE(got.height() == c.height);
        auto rle = rle_encode(got);
        REQUIRE(std::accumulate(rle.counts.begin(), rle.counts.end(), std::int64_t{0}) ==
                std::int64_t(c.width) * c.height);
        REQUIRE(got == fill.execute_prompt_set(target, set, s));
        if (set.empty()) REQUIRE(got.empty());
    }
    // Single prompt through execute().
    auto s = schema_of(PromptMode::bbox_pos2, c);
    InstancePrompt p{BBox{0, 0, 1, 1}, {{0, 0, Polarity::positive}, {1, 1, Polarity::positive}}};
    CHECK(bridge.execute(target, p, s).count() == 4);
}

TEST_CASE("stub examples and error codes") {
    testutil::TempDir dir("stub");
    write_blank_png(dir.path() / "img.png", 4, 4);
    auto img = (dir.path() / "img.png").string();
    auto s = schema_of(PromptMode::bbox_pos2, {4, 4});
    auto pts = schema_of(PromptMode::pos_points_2, {4, 4});

    PromptSet one{{{BBox{0, 0, 1, 1}, {{0, 0, Polarity::positive}, {1, 1, Polarity::positive}}}}};
    PromptSet two{{{BBox{0, 0, 1, 1}, {{0, 0, Polarity::positive}, {1, 1, Polarity::positive}}},
                   {BBox{3, 3, 3, 3}, {{3, 3, Polarity::positive}, {3, 3, Polarity::positive}}}}};
    PromptSet points{{{std::nullopt, {{0, 3, Polarity::positive}, {2, 1, Polarity::positive}}}}};

    std::string input;
    input += encode_bridge_request("a", img, one, s).dump() + "\n";
    input += "this is not json\n";
    input += encode_bridge_request("b", (dir.path() / "missing.png").string(), one, s).dump() + "\n";
    input += encode_bridge_request("c", img, two, s).dump() + "\n";
    input += encode_bridge_request("d", img, points, pts).dump() + "\n";
    input += encode_bridge_request("e", img, {}, s).dump() + "\n";
    input += R"({"id":"f","image_path":")" + img + R"(","schema":"bbox_pos2","prompts":[{"bbox":[1,2],"points":[],"labels":[]}]})" "\n";

    auto lines = run_stub(dir.path(), input);
    REQUIRE(lines.size() == 7);
    std::vector<BridgeResponse> rs;
    for (const auto& l : lines) rs.push_back(decode_bridge_response(l));

    CHECK(rs[0].id == "a");
    REQUIRE(rs[0].ok);
    CHECK(rle_decode(*rs[0].mask).count() == 4);

    CHECK(rs[1].id == "unknown");
    CHECK_FALSE(rs[1].ok);
    CHECK(rs[1].error_code == "bad_request");

    CHECK(rs[2].id == "b");
    CHECK(rs[2].error_code == "image_missing");

    CHECK(rs[3].id == "c");
    CHECK(rle_decode(*rs[3].mask).count() == 5);

    auto d = rle_decode(*rs[4].mask);
    CHECK(d.count() == 2);
    CHECK(d.at(0, 3));
    CHECK(d.at(2, 1));

    CHECK(rs[5].mask->counts == std::vector<std::int64_t>{16});

    CHECK(rs[6].id == "f");
    CHECK(rs[6].error_code == "bad_request");
}

TEST_CASE("bridge failures surface as errors") {
    testutil::TempDir dir("bridgefail");
    Scene scene;
    scene.width = scene.height = 8;
    auto s = schema_of(PromptMode::bbox_pos2, {8, 8});
    PromptSet one{{{BBox{0, 0, 1, 1}, {{0, 0, Polarity::positive}, {1, 1, Polarity::positive}}}}};

    BridgeSegmenter stub(kStub);
    SegmentationTarget missing{scene, dir.path() / "nope.png"};
    try {
        stub.execute_prompt_set(missing, one, s);
        FAIL("expected an error");
    } catch (const Error& e) {
        CHECK(std::string(e.what()).find("image_missing") != std::string::npos);
    }

    // Canvas mismatch between the image and the scene.
    write_blank_png(dir.path() / "small.png", 4, 4);
    SegmentationTarget wrong{scene, dir.path() / "small.png"};
    CHECK_THROWS_AS(stub.execute_prompt_set(wrong, one, s), Error);

    // A process that exits immediately.
    write_blank_png(dir.path() / "ok.png", 8, 8);
    SegmentationTarget fine{scene, dir.path() / "ok.png"};
    BridgeSegmenter dead("exit 0");
    CHECK_THROWS_AS(dead.execute_prompt_set(fine, one, s), IoError);

    // A process that answers with the wrong id.
    BridgeSegmenter liar(R"(read line; echo '{"id":"zzz","ok":true,"mask":{"width":8,"height":8,"counts":[64]}}')");
    CHECK_THROWS_AS(liar.execute_prompt_set(fine, one, s), Error);

    CHECK_THROWS_AS(BridgeSegmenter(""), UsageError);
}

TEST_CASE("bridge evaluation matches the in-process fill backend") {
    testutil::TempDir dir("bridgeeval");
    DatasetOptions o;
    o.scenes = 5;
    o.seed = 3;
    o.queries_per_scene = 2;
    auto data = generate_dataset(SceneSpec::defaults(), o);
    write_dataset(data, dir.path());
    auto disk = read_dataset(dir.path());
    PromptSchema schema;

    ActionSpace space;
    FeatureConfig fc;
    auto params = init_params(space, fc, 0.5, 4, 0.3);
    auto responses = policy_responses(params, space, fc, disk, schema);
    // Mix in oracle answers so some boxes hit their targets.
    auto oracle = oracle_responses(disk, schema);
    for (std::size_t i = 0; i < oracle.size(); i += 2) responses[i] = oracle[i];

    BridgeSegmenter bridge(kStub);
    FillBoxSegmenter fill;
    auto a = aggregate(evaluate_responses(disk, responses, bridge, schema, 2));
    auto b = aggregate(evaluate_responses(disk, responses, fill, schema, 2));
    CHECK(a.to_json() == b.to_json());
    CHECK(a.giou > 0.0);
}
