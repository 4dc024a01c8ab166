#include "promptseg/eval.hpp"

#include "promptseg/error.hpp"
#include "promptseg/parallel.hpp"

#include <cstdio>
#include <fstream>

namespace promptseg {

using json = nlohmann::json;

SampleResult score_sample(std::string id, std::string category, const BinaryMask& pred, const BinaryMask& gt,
                          bool predicted_empty, bool format_ok) {
    SampleResult r;
    r.id = std::move(id);
    r.category = std::move(category);
    r.intersection = intersection_count(pred, gt);
    r.union_ = union_count(pred, gt);
    r.iou = r.union_ == 0 ? 1.0 : double(r.intersection) / double(r.union_);
    r.predicted_empty = predicted_empty;
    r.gt_empty = gt.empty();
    r.format_ok = format_ok;
    return r;
}

double RejectionCounts::true_percent() const { return total() ? 100.0 * true_count / total() : 0.0; }
double RejectionCounts::false_percent() const { return total() ? 100.0 * false_count / total() : 0.0; }

nlohmann::ordered_json RejectionCounts::to_json() const {
    nlohmann::ordered_json j;
    j["samples"] = total();
    j["true_count"] = true_count;
    j["true_percent"] = true_percent();
    j["false_count"] = false_count;
    j["false_percent"] = false_percent();
    return j;
}

RejectionCounts rejection_eval(std::span<const SampleResult> results) {
    RejectionCounts c;
    for (const auto& r : results) {
        if (!r.gt_empty) throw Error("rejection_eval: sample " + r.id + " has a nonempty ground truth");
        (r.predicted_empty ? c.true_count : c.false_count) += 1;
    }
    return c;
}

Report aggregate(std::span<const SampleResult> results, double tau) {
    if (results.empty()) throw Error("aggregate: no samples");
    Report rep;
    rep.n = int(results.size());
    rep.tau = tau;
    double iou_sum = 0.0;
    int above = 0;
    std::vector<SampleResult> empty_gt;
    std::map<std::string, std::pair<std::int64_t, std::int64_t>> cat_sums;
    std::map<std::string, double> cat_iou;
    for (const auto& r : results) {
        iou_sum += r.iou;
        if (r.iou > tau) ++above;
        rep.sum_intersection += r.intersection;
        rep.sum_union += r.union_;
        if (!r.format_ok) ++rep.format_errors;
        if (r.gt_empty) empty_gt.push_back(r);
        auto& cs = rep.per_category[r.category];
        cs.n += 1;
        cat_iou[r.category] += r.iou;
        cat_sums[r.category].first += r.intersection;
        cat_sums[r.category].second += r.union_;
    }
    rep.giou = iou_sum / double(rep.n);
    rep.ciou = rep.sum_union ? double(rep.sum_intersection) / double(rep.sum_union) : 0.0;
    rep.p_at = double(above) / double(rep.n);
    rep.rejection = rejection_eval(empty_gt);
    for (auto& [name, cs] : rep.per_category) {
        cs.giou = cat_iou[name] / double(cs.n);
        auto [i, u] = cat_sums[name];
        cs.ciou = u ? double(i) / double(u) : 0.0;
    }
    return rep;
}

nlohmann::ordered_json Report::to_json() const {
    nlohmann::ordered_json j;
    j["n"] = n;
    j["giou"] = giou;
    j["ciou"] = ciou;
    j["p_at"] = {{"tau", tau}, {"value", p_at}};
    j["sum_intersection"] = sum_intersection;
    j["sum_union"] = sum_union;
    j["format_errors"] = format_errors;
    j["rejection"] = rejection.to_json();
    nlohmann::ordered_json cats = nlohmann::ordered_json::object();
    for (const auto& [name, cs] : per_category)
        cats[name.empty() ? "(none)" : name] = {{"n", cs.n}, {"giou", cs.giou}, {"ciou", cs.ciou}};
    j["per_category"] = cats;
    j["config"] = config;
    return j;
}

std::string sample_id(std::size_t query_index) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%06zu", query_index);
    return buf;
}

std::vector<std::string> policy_responses(const PolicyParams& params, const ActionSpace& space,
                                          const FeatureConfig& features, const Dataset& data,
                                          const PromptSchema& schema, int jobs) {
    std::vector<std::string> out(data.queries.size());
    parallel_for(out.size(), jobs, [&](std::size_t q) {
        const auto& rec = data.queries[q];
        const Scene& scene = data.scenes[std::size_t(rec.scene)];
        Features phi = featurize(scene, rec.query, features);
        out[q] = make_rollout(params, space, phi, greedy_actions(params, space, phi), schema).text;
    });
    return out;
}

std::vector<std::string> policy_responses(const Checkpoint& ckpt, const Dataset& data, const PromptSchema& schema,
                                          int jobs) {
    if (ckpt.schema != schema.mode)
        throw UsageError("checkpoint was trained with schema " + std::string(to_string(ckpt.schema)) +
                         " but evaluation requested " + std::string(to_string(schema.mode)));
    if (!(ckpt.space.canvas == data.canvas()))
        throw UsageError("checkpoint canvas does not match the dataset canvas");
    return policy_responses(ckpt.params, ckpt.space, ckpt.features, data, schema, jobs);
}

std::vector<std::string> oracle_responses(const Dataset& data, const PromptSchema& schema) {
    std::vector<std::string> out;
    out.reserve(data.queries.size());
    for (const auto& rec : data.queries) {
        PromptSet p = oracle_prompts(data.scenes[std::size_t(rec.scene)], rec.query, schema);
        out.push_back(serialize_prompt_set(p, p.empty() ? "nothing matches the query" : "one prompt per instance",
                                           schema));
    }
    return out;
}

std::vector<std::string> read_prompts_file(const std::filesystem::path& path, std::size_t num_queries) {
    std::ifstream in(path);
    if (!in) throw IoError("prompts file not found: " + path.string());
    std::vector<std::optional<std::string>> slots(num_queries);
    std::string line;
    int lineno = 0;
    auto fail = [&](const std::string& what) {
        throw IoError(path.string() + ":" + std::to_string(lineno) + ": " + what);
    };
    while (std::getline(in, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        json j = json::parse(line, nullptr, false);
        if (j.is_discarded() || !j.is_object()) fail("not a JSON object");
        if (!j.contains("sample_id") || !j.contains("answer_text") || !j["answer_text"].is_string())
            fail("expected fields sample_id and answer_text");
        std::size_t idx = 0;
        const auto& sid = j["sample_id"];
        if (sid.is_number_unsigned()) {
            idx = sid.get<std::size_t>();
        } else if (sid.is_string()) {
            const auto s = sid.get<std::string>();
            if (s.empty() || s.find_first_not_of("0123456789") != std::string::npos) fail("bad sample_id '" + s + "'");
            idx = std::stoull(s);
        } else {
            fail("sample_id must be a non-negative integer or digit string");
        }
        if (idx >= num_queries) fail("sample_id " + std::to_string(idx) + " is not in the dataset");
        if (slots[idx]) fail("duplicate sample_id " + std::to_string(idx));
        slots[idx] = j["answer_text"].get<std::string>();
    }
    std::vector<std::string> out;
    out.reserve(num_queries);
    for (std::size_t i = 0; i < num_queries; ++i) {
        if (!slots[i]) throw IoError(path.string() + ": no response for sample " + std::to_string(i));
        out.push_back(std::move(*slots[i]));
    }
    return out;
}

std::vector<SampleResult> evaluate_responses(const Dataset& data, std::span<const std::string> responses,
                                             const SegmenterBackend& segmenter, const PromptSchema& schema,
                                             int jobs) {
    if (responses.size() != data.queries.size())
        throw Error("evaluate: " + std::to_string(responses.size()) + " responses for " +
                    std::to_string(data.queries.size()) + " queries");
    std::vector<SampleResult> out(responses.size());
    parallel_for(out.size(), jobs, [&](std::size_t q) {
        const auto& rec = data.queries[q];
        const Scene& scene = data.scenes[std::size_t(rec.scene)];
        std::string category;
        if (rec.query.target_category && *rec.query.target_category < int(scene.category_names.size()))
            category = scene.category_names[std::size_t(*rec.query.target_category)];
        ParseResult pr = parse_response(responses[q], schema);
        BinaryMask pred(rec.query.gt_mask.canvas());
        bool predicted_empty = false;
        if (pr.ok()) {
            predicted_empty = pr.prompts().empty();
            if (!predicted_empty)
                pred = segmenter.execute_prompt_set(SegmentationTarget{scene, data.image_path(rec.scene)},
                                                    pr.prompts(), schema);
        }
        out[q] = score_sample(sample_id(q), std::move(category), pred, rec.query.gt_mask, predicted_empty, pr.ok());
    });
    return out;
}

void write_results_csv(std::span<const SampleResult> results, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path.string());
    out << "sample_id,category,iou,intersection,union,predicted_empty,gt_empty,format_ok\n";
    char buf[64];
    for (const auto& r : results) {
        std::snprintf(buf, sizeof buf, "%.17g", r.iou);
        out << r.id << ',' << r.category << ',' << buf << ',' << r.intersection << ',' << r.union_ << ','
            << int(r.predicted_empty) << ',' << int(r.gt_empty) << ',' << int(r.format_ok) << '\n';
    }
    if (!out) throw IoError("write failed: " + path.string());
}

}  // namespace promptseg
