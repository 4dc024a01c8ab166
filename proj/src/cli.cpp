#include "promptseg/cli.hpp"

#include "promptseg/bridge.hpp"
#include "promptseg/dataset.hpp"
#include "promptseg/error.hpp"
#include "promptseg/eval.hpp"
#include "promptseg/grpo.hpp"
#include "promptseg/parallel.hpp"
#include "promptseg/policy.hpp"
#include "promptseg/rng.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

namespace promptseg {

namespace fs = std::filesystem;
using json = nlohmann::json;
using ojson = nlohmann::ordered_json;

std::unique_ptr<SegmenterBackend> make_segmenter(std::string_view spec) {
    if (spec == "synthetic") return std::make_unique<SyntheticSegmenter>();
    if (spec == "fill-box") return std::make_unique<FillBoxSegmenter>();
    if (spec.starts_with("bridge:")) return std::make_unique<BridgeSegmenter>(std::string(spec.substr(7)));
    throw UsageError("unknown segmenter '" + std::string(spec) + "' (expected synthetic, fill-box or bridge:<cmd>)");
}

namespace {

json read_json_file(const fs::path& path, const char* what) {
    std::ifstream in(path);
    if (!in) throw IoError(std::string(what) + " not found: " + path.string());
    json j = json::parse(in, nullptr, false);
    if (j.is_discarded() || !j.is_object()) throw IoError(std::string(what) + " is not a JSON object: " + path.string());
    return j;
}

void write_text_file(const fs::path& path, const std::string& text) {
    if (path.has_parent_path()) {
        std::error_code ec;
        fs::create_directories(path.parent_path(), ec);
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path.string());
    out << text;
    if (!out) throw IoError("write failed: " + path.string());
}

// --seed wins; otherwise PROMPTSEG_SEED; otherwise the fallback.
std::uint64_t resolve_seed(const CLI::Option* flag, std::uint64_t flag_value, std::uint64_t fallback) {
    if (flag->count()) return flag_value;
    if (const char* env = std::getenv("PROMPTSEG_SEED"); env && *env) {
        std::string s(env);
        if (s.find_first_not_of("0123456789") != std::string::npos)
            throw UsageError("PROMPTSEG_SEED must be a non-negative integer, got '" + s + "'");
        try {
            return std::stoull(s);
        } catch (const std::exception&) {
            throw UsageError("PROMPTSEG_SEED out of range: '" + s + "'");
        }
    }
    return fallback;
}

std::string hex64(std::uint64_t v) {
    std::ostringstream os;
    os << std::hex << std::setw(16) << std::setfill('0') << v;
    return os.str();
}

// Usage problems in config values surface as exit 2.
template <class Fn>
auto as_usage(Fn&& fn) {
    try {
        return fn();
    } catch (const IoError&) {
        throw;
    } catch (const UsageError&) {
        throw;
    } catch (const Error& e) {
        throw UsageError(e.what());
    }
}

struct GenArgs {
    std::string spec, out, kind;
    int scenes = 10, queries_per_scene = 1, jobs = default_jobs();
    std::uint64_t seed = 0;
    CLI::Option* seed_opt = nullptr;
};

int cmd_gen(const GenArgs& a, std::ostream& out) {
    SceneSpec spec = a.spec.empty() ? SceneSpec::defaults()
                                    : as_usage([&] { return SceneSpec::from_json(read_json_file(a.spec, "scene spec")); });
    as_usage([&] { spec.validate(); return 0; });
    DatasetOptions opts;
    opts.scenes = a.scenes;
    opts.seed = resolve_seed(a.seed_opt, a.seed, 0);
    opts.queries_per_scene = a.queries_per_scene;
    opts.jobs = a.jobs;
    if (!a.kind.empty()) opts.forced_kind = as_usage([&] { return parse_query_kind(a.kind); });
    if (opts.scenes < 1) throw UsageError("--scenes must be at least 1");
    if (opts.queries_per_scene < 1) throw UsageError("--queries-per-scene must be at least 1");

    Dataset d = generate_dataset(spec, opts);
    ojson prov;
    prov["command"] = "gen";
    prov["scene_library"] = std::string(kSceneLibraryVersion);
    prov["seed"] = opts.seed;
    prov["scenes"] = opts.scenes;
    prov["queries_per_scene"] = opts.queries_per_scene;
    prov["forced_kind"] = opts.forced_kind ? json(std::string(to_string(*opts.forced_kind))) : json(nullptr);
    prov["spec"] = spec.to_json();
    prov["digest"] = hex64(dataset_digest(d));
    write_dataset(d, a.out, json::parse(prov.dump()));
    out << "wrote " << d.scenes.size() << " scenes, " << d.queries.size() << " queries to " << a.out
        << " (digest " << hex64(dataset_digest(d)) << ")\n";
    return kExitOk;
}

struct TrainArgs {
    std::string data, config, out, log, schema, segmenter = "synthetic";
    int iters = 0, jobs = default_jobs(), group_size = 0, batch_size = 0;
    double lr = 0, beta = 0, clip_eps = 0;
    std::uint64_t seed = 0;
    CLI::Option *seed_opt = nullptr, *iters_opt = nullptr, *lr_opt = nullptr, *beta_opt = nullptr,
                *clip_opt = nullptr, *group_opt = nullptr, *batch_opt = nullptr, *schema_opt = nullptr,
                *segmenter_opt = nullptr;
};

int cmd_train(const TrainArgs& a, std::ostream& out) {
    json file = a.config.empty() ? json::object() : read_json_file(a.config, "config file");
    GrpoConfig cfg = as_usage([&] { return GrpoConfig::from_json(file); });
    if (a.iters_opt->count()) cfg.iterations = a.iters;
    if (a.lr_opt->count()) cfg.learning_rate = a.lr;
    if (a.beta_opt->count()) cfg.beta = a.beta;
    if (a.clip_opt->count()) cfg.clip_eps = a.clip_eps;
    if (a.group_opt->count()) cfg.group_size = a.group_size;
    if (a.batch_opt->count()) cfg.batch_size = a.batch_size;
    cfg.seed = resolve_seed(a.seed_opt, a.seed, cfg.seed);
    as_usage([&] { cfg.validate(); return 0; });

    std::string schema_name = a.schema_opt->count() ? a.schema : file.value("schema", std::string("bbox_pos2"));
    std::string seg_name = a.segmenter_opt->count() ? a.segmenter : file.value("segmenter", std::string("synthetic"));
    Dataset data = read_dataset(a.data);
    if (data.queries.empty()) throw UsageError("dataset " + a.data + " has no queries");

    PromptSchema schema{parse_prompt_mode(schema_name), data.canvas()};
    ActionSpace space = file.contains("action_space") ? as_usage([&] { return ActionSpace::from_json(file["action_space"]); })
                                                      : ActionSpace{};
    space.canvas = data.canvas();
    json feature_json = file.value("features", json::object());
    FeatureConfig features = as_usage([&] { return FeatureConfig::from_json(feature_json); });
    if (!feature_json.contains("categories")) features.categories = int(data.scenes.front().category_names.size());
    as_usage([&] { space.validate(); return 0; });
    auto segmenter = make_segmenter(seg_name);

    const std::uint64_t init_seed = derive_seed(cfg.seed, 0x1417);
    PolicyParams init = init_params(space, features, cfg.init_scale, init_seed, cfg.init_stop_probability);

    json effective;
    effective["grpo"] = json::parse(cfg.to_json().dump());
    effective["schema"] = schema_name;
    effective["segmenter"] = segmenter->name();
    effective["action_space"] = space.to_json();
    effective["features"] = features.to_json();
    effective["dataset_digest"] = hex64(dataset_digest(data));

    std::ofstream log;
    if (!a.log.empty()) {
        log.open(a.log, std::ios::binary);
        if (!log) throw IoError("cannot write stats log " + a.log);
    }
    auto on_iter = [&](const IterationRecord& r) {
        if (log.is_open()) log << r.to_json().dump() << "\n" << std::flush;
    };
    TrainResult res = train(data, cfg, schema, space, features, *segmenter, init, on_iter, a.jobs);
    if (log.is_open() && !log) throw IoError("failed writing stats log " + a.log);

    Checkpoint ckpt{res.params, space, features, schema.mode, {cfg.seed, init_seed}, effective};
    save_checkpoint(ckpt, a.out);
    out << "trained " << cfg.iterations << " iterations";
    if (!res.log.empty())
        out << "; final mean_reward " << res.log.back().stats.mean_reward << ", mean_giou "
            << res.log.back().stats.mean_giou;
    out << "; checkpoint " << a.out << "\n";
    return kExitOk;
}

struct EvalArgs {
    std::string data, policy, prompts, schema, report, csv, segmenter = "synthetic";
    bool oracle = false;
    double tau = 0.5, assert_min = 0.0;
    int jobs = default_jobs();
    CLI::Option *schema_opt = nullptr, *assert_opt = nullptr;
};

int cmd_eval(const EvalArgs& a, std::ostream& out, std::ostream& err) {
    int sources = int(!a.policy.empty()) + int(!a.prompts.empty()) + int(a.oracle);
    if (sources != 1) throw UsageError("eval needs exactly one of --policy, --prompts, --oracle");
    std::optional<Checkpoint> ckpt;
    if (!a.policy.empty()) ckpt = load_checkpoint(a.policy);
    Dataset data = read_dataset(a.data);
    if (data.queries.empty()) throw UsageError("dataset " + a.data + " has no queries");

    PromptMode mode = a.schema_opt->count() ? parse_prompt_mode(a.schema)
                      : ckpt                ? ckpt->schema
                                            : PromptMode::bbox_pos2;
    PromptSchema schema{mode, data.canvas()};
    auto segmenter = make_segmenter(a.segmenter);

    std::vector<std::string> responses;
    std::string source;
    if (ckpt) {
        responses = policy_responses(*ckpt, data, schema, a.jobs);
        source = "policy:" + a.policy;
    } else if (!a.prompts.empty()) {
        responses = read_prompts_file(a.prompts, data.queries.size());
        source = "prompts:" + a.prompts;
    } else {
        responses = oracle_responses(data, schema);
        source = "oracle";
    }
    auto results = evaluate_responses(data, responses, *segmenter, schema, a.jobs);
    Report rep = aggregate(results, a.tau);
    rep.config["source"] = source;
    rep.config["decoding"] = ckpt ? "greedy" : "as-given";
    rep.config["schema"] = std::string(to_string(mode));
    rep.config["segmenter"] = segmenter->name();
    rep.config["dataset"] = a.data;
    rep.config["dataset_digest"] = hex64(dataset_digest(data));
    rep.config["tau"] = a.tau;
    rep.config["empty_target_convention"] =
        "iou 1 for an empty prediction on an empty target, else 0; both-empty samples add (0,0) to the cIoU sums";

    if (!a.report.empty()) write_text_file(a.report, rep.to_json().dump(2) + "\n");
    if (!a.csv.empty()) write_results_csv(results, a.csv);

    out << std::setprecision(6) << "N=" << rep.n << " gIoU=" << rep.giou << " cIoU=" << rep.ciou << " P@" << rep.tau
        << "=" << rep.p_at << " format_errors=" << rep.format_errors << "\n";
    if (rep.rejection.total())
        out << "empty-target: TRUE " << rep.rejection.true_count << " (" << std::fixed << std::setprecision(1)
            << rep.rejection.true_percent() << "%) FALSE " << rep.rejection.false_count << " ("
            << rep.rejection.false_percent() << "%)\n"
            << std::defaultfloat;
    if (a.assert_opt->count() && !(rep.giou >= a.assert_min)) {
        err << "assertion failed: gIoU " << rep.giou << " < " << a.assert_min << "\n";
        return kExitDomain;
    }
    return kExitOk;
}

int cmd_check_format(const std::string& in_path, const std::string& schema_name, int width, int height,
                     std::ostream& out) {
    std::ifstream in(in_path);
    if (!in) throw IoError("input not found: " + in_path);
    PromptSchema schema{parse_prompt_mode(schema_name), Canvas{width, height}};
    std::string line;
    int lineno = 0, passed = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        // A line may be raw response text, a JSON string, or a prompts-file record.
        std::string text = line;
        json j = json::parse(line, nullptr, false);
        if (!j.is_discarded()) {
            if (j.is_string())
                text = j.get<std::string>();
            else if (j.is_object() && j.contains("answer_text") && j["answer_text"].is_string())
                text = j["answer_text"].get<std::string>();
        }
        ParseResult pr = parse_response(text, schema);
        int r = format_reward(pr);
        passed += r;
        out << lineno << "\t" << r;
        if (!pr.ok()) out << "\t" << to_string(pr.error().kind) << ": " << pr.error().detail;
        out << "\n";
    }
    out << "# " << passed << "/" << lineno << " well-formed\n";
    return kExitOk;
}

int cmd_report(const std::string& stats_path, const std::string& out_path, int window, std::ostream& out) {
    if (window < 1) throw UsageError("--window must be at least 1");
    std::ifstream in(stats_path);
    if (!in) throw IoError("stats log not found: " + stats_path);
    std::vector<json> rows;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        json j = json::parse(line, nullptr, false);
        if (j.is_discarded() || !j.is_object() || !j.contains("mean_reward") || !j.contains("mean_giou"))
            throw IoError(stats_path + ":" + std::to_string(lineno) + ": not a stats record");
        rows.push_back(std::move(j));
    }
    if (rows.empty()) throw IoError("stats log is empty: " + stats_path);

    auto windows = [&](const char* key) {
        std::vector<double> means;
        for (std::size_t s = 0; s + std::size_t(window) <= rows.size(); s += std::size_t(window)) {
            double sum = 0;
            for (std::size_t i = s; i < s + std::size_t(window); ++i) sum += rows[i][key].get<double>();
            means.push_back(sum / window);
        }
        return means;
    };
    auto reward_w = windows("mean_reward");
    auto giou_w = windows("mean_giou");
    bool nondecreasing = std::is_sorted(reward_w.begin(), reward_w.end());
    double max_kl = 0, clip_sum = 0, wall = 0;
    for (const auto& r : rows) {
        max_kl = std::max(max_kl, r.value("kl", 0.0));
        clip_sum += r.value("clip_frac", 0.0);
        wall += r.value("wall_ms", 0.0);
    }

    ojson s;
    s["iterations"] = rows.size();
    s["window"] = window;
    s["first"] = {{"mean_reward", rows.front()["mean_reward"]}, {"mean_giou", rows.front()["mean_giou"]}};
    s["final"] = {{"mean_reward", rows.back()["mean_reward"]}, {"mean_giou", rows.back()["mean_giou"]}};
    s["window_mean_reward"] = reward_w;
    s["window_mean_giou"] = giou_w;
    s["reward_windows_nondecreasing"] = nondecreasing;
    s["max_kl"] = max_kl;
    s["mean_clip_frac"] = clip_sum / double(rows.size());
    s["total_wall_ms"] = wall;
    if (!out_path.empty()) write_text_file(out_path, s.dump(2) + "\n");
    out << rows.size() << " iterations; reward windows " << (nondecreasing ? "non-decreasing" : "not monotone");
    if (!reward_w.empty()) out << " (" << reward_w.front() << " -> " << reward_w.back() << ")";
    out << "\n";
    return kExitOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"promptseg: prompt-policy training and evaluation over promptable segmenters", "promptseg"};
    app.require_subcommand(1);

    GenArgs gen;
    auto* g = app.add_subcommand("gen", "generate a synthetic dataset");
    g->add_option("--spec", gen.spec, "scene spec JSON (defaults to the built-in library)");
    g->add_option("--out", gen.out, "output directory")->required();
    g->add_option("--scenes", gen.scenes, "number of scenes");
    gen.seed_opt = g->add_option("--seed", gen.seed, "generator seed (PROMPTSEG_SEED if absent)");
    g->add_option("--queries-per-scene", gen.queries_per_scene, "queries per scene");
    g->add_option("--kind", gen.kind, "force every query to this kind (explicit|implicit|empty_target)");
    g->add_option("--jobs", gen.jobs, "worker threads");

    TrainArgs tr;
    auto* t = app.add_subcommand("train", "train a prompt policy with GRPO");
    t->add_option("--data", tr.data, "dataset directory")->required();
    tr.iters_opt = t->add_option("--iters", tr.iters, "iterations");
    t->add_option("--config", tr.config, "JSON config file");
    t->add_option("--out", tr.out, "checkpoint path")->required();
    t->add_option("--log", tr.log, "per-iteration stats JSONL");
    tr.seed_opt = t->add_option("--seed", tr.seed, "training seed (PROMPTSEG_SEED if absent)");
    tr.lr_opt = t->add_option("--lr", tr.lr, "learning rate");
    tr.beta_opt = t->add_option("--beta", tr.beta, "KL weight");
    tr.clip_opt = t->add_option("--clip-eps", tr.clip_eps, "clip range");
    tr.group_opt = t->add_option("--group-size", tr.group_size, "rollouts per query");
    tr.batch_opt = t->add_option("--batch-size", tr.batch_size, "queries per iteration");
    tr.schema_opt = t->add_option("--schema", tr.schema, "prompt schema");
    tr.segmenter_opt = t->add_option("--segmenter", tr.segmenter, "synthetic | fill-box | bridge:<cmd>");
    t->add_option("--jobs", tr.jobs, "worker threads");

    EvalArgs ev;
    auto* e = app.add_subcommand("eval", "evaluate a policy or a prompts file");
    e->add_option("--data", ev.data, "dataset directory")->required();
    e->add_option("--policy", ev.policy, "checkpoint (greedy decoding)");
    e->add_option("--prompts", ev.prompts, "JSONL of {sample_id, answer_text}");
    e->add_flag("--oracle", ev.oracle, "use prompts derived from the ground truth");
    ev.schema_opt = e->add_option("--schema", ev.schema, "prompt schema");
    e->add_option("--report", ev.report, "report JSON path");
    e->add_option("--csv", ev.csv, "per-sample CSV path");
    e->add_option("--segmenter", ev.segmenter, "synthetic | fill-box | bridge:<cmd>");
    e->add_option("--tau", ev.tau, "P@tau threshold");
    ev.assert_opt = e->add_option("--assert", ev.assert_min, "exit 1 when gIoU falls below this value");
    e->add_option("--jobs", ev.jobs, "worker threads");

    std::string cf_in, cf_schema = "bbox_pos2";
    int cf_w = 256, cf_h = 256;
    auto* c = app.add_subcommand("check-format", "score the format reward of each response line");
    c->add_option("--in", cf_in, "responses, one per line")->required();
    c->add_option("--schema", cf_schema, "prompt schema");
    c->add_option("--width", cf_w, "canvas width");
    c->add_option("--height", cf_h, "canvas height");

    std::string rp_stats, rp_out;
    int rp_window = 50;
    auto* r = app.add_subcommand("report", "summarize a training stats log");
    r->add_option("--stats", rp_stats, "stats JSONL")->required();
    r->add_option("--out", rp_out, "summary JSON path");
    r->add_option("--window", rp_window, "iterations per averaging window");

    try {
        std::vector<std::string> rev(args.rbegin(), args.rend());
        app.parse(rev);
    } catch (const CLI::ParseError& ex) {
        int code = app.exit(ex, out, err);
        return code == 0 ? kExitOk : kExitUsage;
    }

    try {
        if (*g) return cmd_gen(gen, out);
        if (*t) return cmd_train(tr, out);
        if (*e) return cmd_eval(ev, out, err);
        if (*c) return cmd_check_format(cf_in, cf_schema, cf_w, cf_h, out);
        if (*r) return cmd_report(rp_stats, rp_out, rp_window, out);
    } catch (const UsageError& ex) {
        err << "error: " << ex.what() << "\n";
        return kExitUsage;
    } catch (const IoError& ex) {
        err << "error: " << ex.what() << "\n";
        return kExitUsage;
    } catch (const std::exception& ex) {
        err << "error: " << ex.what() << "\n";
        return kExitDomain;
    }
    return kExitUsage;
}

}  // namespace promptseg
