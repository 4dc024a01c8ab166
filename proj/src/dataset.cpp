#include "promptseg/dataset.hpp"

#include "promptseg/error.hpp"
#include "promptseg/image.hpp"
#include "promptseg/parallel.hpp"
#include "promptseg/rng.hpp"

#include <cstdio>
#include <fstream>
#include <map>

namespace promptseg {

using json = nlohmann::json;
namespace fs = std::filesystem;

fs::path Dataset::image_path(int scene) const {
    return root / "scenes" / std::to_string(scene) / "image.png";
}

Canvas Dataset::canvas() const {
    if (scenes.empty()) throw Error("dataset has no scenes");
    return scenes.front().canvas();
}

namespace {

constexpr int kMaxRegenerations = 64;

bool kind_possible(const Scene& s, QueryKind kind) {
    for (int c = 0; c < int(s.category_names.size()); ++c) {
        bool present = s.has_category(c);
        if (kind == QueryKind::empty_target ? !present : present) return true;
    }
    return false;
}

struct SceneWithQueries {
    Scene scene;
    std::vector<Query> queries;
};

SceneWithQueries make_scene(const SceneSpec& spec, const DatasetOptions& opts, int k) {
    std::uint64_t scene_seed = derive_seed(opts.seed, std::uint64_t(k));
    Scene scene = generate_scene(spec, scene_seed);
    for (int attempt = 1; opts.forced_kind && !kind_possible(scene, *opts.forced_kind); ++attempt) {
        if (attempt > kMaxRegenerations)
            throw Error("scene " + std::to_string(k) + ": no seed in budget admits a " +
                        std::string(to_string(*opts.forced_kind)) + " query");
        scene_seed = derive_seed(opts.seed, std::uint64_t(k), std::uint64_t(attempt));
        scene = generate_scene(spec, scene_seed);
    }
    SceneWithQueries out{std::move(scene), {}};
    for (int q = 0; q < opts.queries_per_scene; ++q) {
        Rng pick(derive_seed(scene_seed, 1000 + std::uint64_t(q)));
        QueryKind kind;
        if (opts.forced_kind) {
            kind = *opts.forced_kind;
        } else if (kind_possible(out.scene, QueryKind::empty_target) && pick.bernoulli(spec.empty_target_probability)) {
            kind = QueryKind::empty_target;
        } else {
            kind = pick.bernoulli(0.5) ? QueryKind::explicit_name : QueryKind::implicit_cue;
        }
        out.queries.push_back(generate_query(out.scene, kind, derive_seed(scene_seed, 2000 + std::uint64_t(q))));
    }
    return out;
}

json read_json_file(const fs::path& p) {
    std::ifstream in(p);
    if (!in) throw IoError("missing file: " + p.string());
    json j = json::parse(in, nullptr, false);
    if (j.is_discarded()) throw IoError("malformed JSON in " + p.string());
    return j;
}

void write_text(const fs::path& p, const std::string& text) {
    std::ofstream out(p, std::ios::binary);
    if (!out) throw IoError("cannot write " + p.string());
    out << text;
    if (!out) throw IoError("failed writing " + p.string());
}

std::string gt_name(std::size_t q) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "gt/%06zu.pgm", q);
    return buf;
}

}  // namespace

Dataset generate_dataset(const SceneSpec& spec, const DatasetOptions& opts) {
    spec.validate();
    if (opts.scenes < 0) throw Error("scene count must be non-negative");
    if (opts.queries_per_scene < 1) throw Error("queries per scene must be at least 1");
    std::vector<SceneWithQueries> slots(std::size_t(opts.scenes));
    parallel_for(slots.size(), opts.jobs, [&](std::size_t k) { slots[k] = make_scene(spec, opts, int(k)); });

    Dataset d;
    for (std::size_t k = 0; k < slots.size(); ++k) {
        d.scenes.push_back(std::move(slots[k].scene));
        for (auto& q : slots[k].queries) d.queries.push_back({int(k), std::move(q)});
    }
    return d;
}

void write_dataset(const Dataset& d, const fs::path& dir, const json& provenance) {
    std::error_code ec;
    fs::create_directories(dir / "scenes", ec);
    fs::create_directories(dir / "gt", ec);
    if (ec) throw IoError("cannot create dataset directory " + dir.string() + ": " + ec.message());

    for (std::size_t k = 0; k < d.scenes.size(); ++k) {
        const Scene& s = d.scenes[k];
        fs::path sd = dir / "scenes" / std::to_string(k);
        fs::create_directories(sd, ec);
        if (ec) throw IoError("cannot create " + sd.string() + ": " + ec.message());
        json instances = json::array();
        for (const auto& inst : s.instances) {
            std::string name = "instance_" + std::to_string(inst.id) + ".pgm";
            write_pgm(inst.mask, sd / name);
            instances.push_back({{"id", inst.id}, {"category", inst.category}, {"mask", name}});
        }
        json meta = {{"canvas", {{"width", s.width}, {"height", s.height}}},
                     {"category_names", s.category_names},
                     {"instances", instances}};
        write_text(sd / "meta.json", meta.dump(2) + "\n");
        auto rgb = render_scene_rgb(s);
        write_png_rgb(sd / "image.png", s.width, s.height, rgb);
    }

    std::string lines;
    for (std::size_t q = 0; q < d.queries.size(); ++q) {
        const auto& r = d.queries[q];
        std::string gt = gt_name(q);
        write_pgm(r.query.gt_mask, dir / gt);
        json line = {{"scene", r.scene},
                     {"text", r.query.text},
                     {"kind", to_string(r.query.kind)},
                     {"target_category", r.query.target_category ? json(*r.query.target_category) : json(nullptr)},
                     {"gt_mask", gt}};
        lines += line.dump() + "\n";
    }
    write_text(dir / "queries.jsonl", lines);
    if (!provenance.is_null()) write_text(dir / "generation.json", provenance.dump(2) + "\n");
}

Dataset read_dataset(const fs::path& dir) {
    Dataset d;
    d.root = dir;
    fs::path scenes_dir = dir / "scenes";
    if (!fs::is_directory(scenes_dir)) throw IoError("missing directory: " + scenes_dir.string());

    std::map<int, fs::path> found;
    for (const auto& e : fs::directory_iterator(scenes_dir)) {
        if (!e.is_directory()) continue;
        const std::string name = e.path().filename().string();
        std::size_t used = 0;
        int k = -1;
        try {
            k = std::stoi(name, &used);
        } catch (const std::exception&) {
        }
        if (k < 0 || used != name.size()) throw IoError("unexpected entry in scenes/: " + e.path().string());
        found[k] = e.path();
    }
    int expected = 0;
    for (const auto& [k, path] : found) {
        if (k != expected) throw IoError("scene directories are not dense: missing " + (scenes_dir / std::to_string(expected)).string());
        ++expected;
        fs::path meta_path = path / "meta.json";
        json meta = read_json_file(meta_path);
        Scene s;
        try {
            s.width = meta.at("canvas").at("width").get<int>();
            s.height = meta.at("canvas").at("height").get<int>();
            s.category_names = meta.at("category_names").get<std::vector<std::string>>();
            for (const auto& inst : meta.value("instances", json::array())) {
                int id = inst.at("id").get<int>();
                int cat = inst.at("category").get<int>();
                if (id != int(s.instances.size())) throw IoError(meta_path.string() + ": instance ids must be dense from 0");
                if (cat < 0 || cat >= int(s.category_names.size()))
                    throw IoError(meta_path.string() + ": instance " + std::to_string(id) + " has unknown category");
                fs::path mp = path / inst.at("mask").get<std::string>();
                BinaryMask m = read_pgm(mp);
                if (m.width() != s.width || m.height() != s.height)
                    throw IoError(mp.string() + ": mask size does not match scene canvas");
                s.instances.push_back({id, cat, std::move(m)});
            }
        } catch (const json::exception& e) {
            throw IoError(meta_path.string() + ": " + e.what());
        }
        d.scenes.push_back(std::move(s));
    }

    fs::path qpath = dir / "queries.jsonl";
    std::ifstream in(qpath);
    if (!in) throw IoError("missing file: " + qpath.string());
    std::string line;
    for (int lineno = 1; std::getline(in, line); ++lineno) {
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        std::string where = qpath.string() + ":" + std::to_string(lineno);
        json j = json::parse(line, nullptr, false);
        if (j.is_discarded() || !j.is_object()) throw IoError(where + ": malformed JSON");
        QueryRecord r;
        try {
            r.scene = j.at("scene").get<int>();
            if (r.scene < 0 || r.scene >= int(d.scenes.size()))
                throw IoError(where + ": unknown scene index " + std::to_string(r.scene));
            r.query.text = j.at("text").get<std::string>();
            r.query.kind = parse_query_kind(j.at("kind").get<std::string>());
            if (j.contains("target_category") && !j.at("target_category").is_null())
                r.query.target_category = j.at("target_category").get<int>();
            fs::path gp = dir / j.at("gt_mask").get<std::string>();
            r.query.gt_mask = read_pgm(gp);
            const Scene& s = d.scenes[std::size_t(r.scene)];
            if (r.query.gt_mask.width() != s.width || r.query.gt_mask.height() != s.height)
                throw IoError(where + ": gt mask size does not match scene canvas");
        } catch (const json::exception& e) {
            throw IoError(where + ": " + e.what());
        } catch (const IoError&) {
            throw;
        } catch (const Error& e) {
            throw IoError(where + ": " + e.what());
        }
        d.queries.push_back(std::move(r));
    }
    return d;
}

std::uint64_t dataset_digest(const Dataset& d) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    auto eat = [&](const void* p, std::size_t n) {
        auto b = static_cast<const unsigned char*>(p);
        for (std::size_t i = 0; i < n; ++i) {
            h ^= b[i];
            h *= 0x100000001b3ULL;
        }
    };
    auto eat_int = [&](std::int64_t v) { eat(&v, sizeof v); };
    auto eat_str = [&](const std::string& s) {
        eat_int(std::int64_t(s.size()));
        eat(s.data(), s.size());
    };
    auto eat_mask = [&](const BinaryMask& m) {
        eat_int(m.width());
        eat_int(m.height());
        for (std::uint64_t w : m.words()) eat_int(std::int64_t(w));
    };
    eat_int(std::int64_t(d.scenes.size()));
    for (const auto& s : d.scenes) {
        eat_int(s.width);
        eat_int(s.height);
        for (const auto& n : s.category_names) eat_str(n);
        for (const auto& i : s.instances) {
            eat_int(i.id);
            eat_int(i.category);
            eat_mask(i.mask);
        }
    }
    eat_int(std::int64_t(d.queries.size()));
    for (const auto& r : d.queries) {
        eat_int(r.scene);
        eat_str(r.query.text);
        eat_str(std::string(to_string(r.query.kind)));
        eat_int(r.query.target_category.value_or(-1));
        eat_mask(r.query.gt_mask);
    }
    return h;
}

}  // namespace promptseg
