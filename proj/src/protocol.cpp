#include "promptseg/protocol.hpp"

#include "promptseg/error.hpp"

#include <json.hpp>

#include <array>
#include <cctype>
#include <cstdint>

namespace promptseg {

using json = nlohmann::json;

std::string_view to_string(PromptMode mode) {
    switch (mode) {
        case PromptMode::bbox_only: return "bbox_only";
        case PromptMode::pos_points_2: return "pos_points_2";
        case PromptMode::bbox_pos2: return "bbox_pos2";
        case PromptMode::bbox_pos4: return "bbox_pos4";
        case PromptMode::bbox_pos2_neg2: return "bbox_pos2_neg2";
    }
    return "?";
}

PromptMode parse_prompt_mode(std::string_view name) {
    for (auto m : {PromptMode::bbox_only, PromptMode::pos_points_2, PromptMode::bbox_pos2,
                   PromptMode::bbox_pos4, PromptMode::bbox_pos2_neg2}) {
        if (to_string(m) == name) return m;
    }
    throw UsageError("unknown prompt schema '" + std::string(name) +
                     "' (expected bbox_only, pos_points_2, bbox_pos2, bbox_pos4, bbox_pos2_neg2)");
}

bool PromptSchema::has_box() const { return mode != PromptMode::pos_points_2; }

int PromptSchema::positive_points() const {
    switch (mode) {
        case PromptMode::bbox_only: return 0;
        case PromptMode::bbox_pos4: return 4;
        default: return 2;
    }
}

int PromptSchema::negative_points() const { return mode == PromptMode::bbox_pos2_neg2 ? 2 : 0; }

std::string_view to_string(FormatErrorKind kind) {
    switch (kind) {
        case FormatErrorKind::missing_tags: return "missing_tags";
        case FormatErrorKind::bad_json: return "bad_json";
        case FormatErrorKind::schema_violation: return "schema_violation";
        case FormatErrorKind::out_of_canvas: return "out_of_canvas";
    }
    return "?";
}

namespace {

constexpr std::string_view kThinkOpen = "<think>";
constexpr std::string_view kThinkClose = "</think>";
constexpr std::string_view kAnswerOpen = "<answer>";
constexpr std::string_view kAnswerClose = "</answer>";

FormatError fail(FormatErrorKind kind, std::string detail) { return {kind, std::move(detail)}; }

std::size_t skip_space(std::string_view s, std::size_t pos) {
    while (pos < s.size() && std::isspace(static_cast<unsigned char>(s[pos]))) ++pos;
    return pos;
}

bool contains_tag(std::string_view body) {
    for (auto tag : {kThinkOpen, kThinkClose, kAnswerOpen, kAnswerClose})
        if (body.find(tag) != std::string_view::npos) return true;
    return false;
}

struct TaggedBlocks {
    std::string_view think;
    std::string_view answer;
};

std::variant<TaggedBlocks, FormatError> split_tags(std::string_view text) {
    std::size_t pos = skip_space(text, 0);
    if (text.substr(pos, kThinkOpen.size()) != kThinkOpen)
        return fail(FormatErrorKind::missing_tags, "response must open with <think>");
    pos += kThinkOpen.size();
    std::size_t think_end = text.find(kThinkClose, pos);
    if (think_end == std::string_view::npos)
        return fail(FormatErrorKind::missing_tags, "unterminated <think> block");
    std::string_view think = text.substr(pos, think_end - pos);
    if (contains_tag(think)) return fail(FormatErrorKind::missing_tags, "nested tag inside <think>");

    pos = skip_space(text, think_end + kThinkClose.size());
    if (text.substr(pos, kAnswerOpen.size()) != kAnswerOpen)
        return fail(FormatErrorKind::missing_tags, "<answer> must follow </think>");
    pos += kAnswerOpen.size();
    std::size_t answer_end = text.find(kAnswerClose, pos);
    if (answer_end == std::string_view::npos)
        return fail(FormatErrorKind::missing_tags, "unterminated <answer> block");
    std::string_view answer = text.substr(pos, answer_end - pos);
    if (contains_tag(answer)) return fail(FormatErrorKind::missing_tags, "nested tag inside <answer>");
    return TaggedBlocks{think, answer};
}

// Coordinates are held wide until the canvas check so that huge integers
// are reported as out_of_canvas rather than wrapping.
struct RawPoint {
    std::int64_t x, y;
};
struct RawInstance {
    std::optional<std::array<std::int64_t, 4>> bbox;
    std::vector<RawPoint> pos, neg;
};

std::optional<FormatError> read_points(const json& j, const char* key, std::size_t expected,
                                       std::size_t index, std::vector<RawPoint>& out) {
    std::string where = "instance " + std::to_string(index) + " '" + key + "'";
    if (!j.is_array()) return fail(FormatErrorKind::schema_violation, where + " must be an array");
    if (j.size() != expected) {
        return fail(FormatErrorKind::schema_violation, where + " must hold exactly " +
                                                           std::to_string(expected) + " points");
    }
    for (const auto& p : j) {
        if (!p.is_array() || p.size() != 2 || !p[0].is_number_integer() || !p[1].is_number_integer())
            return fail(FormatErrorKind::schema_violation, where + " entries must be [x, y] integers");
        out.push_back({p[0].get<std::int64_t>(), p[1].get<std::int64_t>()});
    }
    return std::nullopt;
}

std::variant<RawInstance, FormatError> read_instance(const json& j, std::size_t index,
                                                     const PromptSchema& schema) {
    std::string where = "instance " + std::to_string(index);
    if (!j.is_object()) return fail(FormatErrorKind::schema_violation, where + " is not an object");
    for (const auto& [key, _] : j.items()) {
        bool known = (key == "bbox" && schema.has_box()) || key == "points" ||
                     (key == "neg_points" && schema.negative_points() > 0);
        if (!known)
            return fail(FormatErrorKind::schema_violation, where + " has unexpected key '" + key + "'");
    }
    RawInstance inst;
    if (schema.has_box()) {
        auto it = j.find("bbox");
        if (it == j.end()) return fail(FormatErrorKind::schema_violation, where + " is missing 'bbox'");
        const json& b = *it;
        if (!b.is_array() || b.size() != 4)
            return fail(FormatErrorKind::schema_violation, where + " 'bbox' must be [x1, y1, x2, y2]");
        std::array<std::int64_t, 4> v{};
        for (std::size_t k = 0; k < 4; ++k) {
            if (!b[k].is_number_integer())
                return fail(FormatErrorKind::schema_violation, where + " 'bbox' values must be integers");
            v[k] = b[k].get<std::int64_t>();
        }
        if (v[0] > v[2] || v[1] > v[3])
            return fail(FormatErrorKind::schema_violation, where + " 'bbox' corners are inverted");
        inst.bbox = v;
    }
    auto pts = j.find("points");
    if (pts == j.end()) {
        if (schema.positive_points() > 0)
            return fail(FormatErrorKind::schema_violation, where + " is missing 'points'");
    } else if (auto e = read_points(*pts, "points", std::size_t(schema.positive_points()), index, inst.pos)) {
        return *e;
    }
    if (schema.negative_points() > 0) {
        auto neg = j.find("neg_points");
        if (neg == j.end())
            return fail(FormatErrorKind::schema_violation, where + " is missing 'neg_points'");
        if (auto e = read_points(*neg, "neg_points", std::size_t(schema.negative_points()), index, inst.neg))
            return *e;
    }
    return inst;
}

bool in_canvas(std::int64_t x, std::int64_t y, const Canvas& c) {
    return x >= 0 && y >= 0 && x < c.width && y < c.height;
}

}  // namespace

std::optional<FormatError> check_instance(const InstancePrompt& p, const PromptSchema& schema) {
    if (p.bbox.has_value() != schema.has_box()) {
        return fail(FormatErrorKind::schema_violation,
                    schema.has_box() ? "box required by schema" : "box not allowed by schema");
    }
    if (p.bbox && !p.bbox->well_formed())
        return fail(FormatErrorKind::schema_violation, "box corners are inverted");
    int pos = 0, neg = 0;
    for (const auto& pt : p.points) {
        if (pt.polarity == Polarity::positive) {
            if (neg > 0) return fail(FormatErrorKind::schema_violation, "positive points must precede negative");
            ++pos;
        } else {
            ++neg;
        }
    }
    if (pos != schema.positive_points() || neg != schema.negative_points()) {
        return fail(FormatErrorKind::schema_violation,
                    "expected " + std::to_string(schema.positive_points()) + " positive and " +
                        std::to_string(schema.negative_points()) + " negative points");
    }
    if (p.bbox && !p.bbox->inside(schema.canvas))
        return fail(FormatErrorKind::out_of_canvas, "box outside canvas");
    for (const auto& pt : p.points)
        if (!schema.canvas.contains(pt.x, pt.y)) return fail(FormatErrorKind::out_of_canvas, "point outside canvas");
    return std::nullopt;
}

ParseResult parse_response(std::string_view text, const PromptSchema& schema) {
    auto blocks = split_tags(text);
    if (auto* e = std::get_if<FormatError>(&blocks)) return *e;
    const auto& tb = std::get<TaggedBlocks>(blocks);

    json doc = json::parse(tb.answer.begin(), tb.answer.end(), nullptr, false);
    if (doc.is_discarded()) return fail(FormatErrorKind::bad_json, "answer body is not valid JSON");
    if (!doc.is_array()) return fail(FormatErrorKind::schema_violation, "answer must be a JSON array");

    std::vector<RawInstance> raw;
    raw.reserve(doc.size());
    for (std::size_t i = 0; i < doc.size(); ++i) {
        auto inst = read_instance(doc[i], i, schema);
        if (auto* e = std::get_if<FormatError>(&inst)) return *e;
        raw.push_back(std::move(std::get<RawInstance>(inst)));
    }

    const Canvas& c = schema.canvas;
    PromptSet out;
    for (std::size_t i = 0; i < raw.size(); ++i) {
        const auto& r = raw[i];
        std::string where = "instance " + std::to_string(i);
        InstancePrompt p;
        if (r.bbox) {
            const auto& b = *r.bbox;
            if (!in_canvas(b[0], b[1], c) || !in_canvas(b[2], b[3], c))
                return fail(FormatErrorKind::out_of_canvas, where + " box outside canvas");
            p.bbox = BBox{int(b[0]), int(b[1]), int(b[2]), int(b[3])};
        }
        for (auto [list, pol] : {std::pair{&r.pos, Polarity::positive}, std::pair{&r.neg, Polarity::negative}}) {
            for (const auto& pt : *list) {
                if (!in_canvas(pt.x, pt.y, c))
                    return fail(FormatErrorKind::out_of_canvas, where + " point outside canvas");
                p.points.push_back({int(pt.x), int(pt.y), pol});
            }
        }
        out.instances.push_back(std::move(p));
    }
    return ParsedResponse{std::move(out), std::string(tb.think)};
}

std::string serialize_answer(const PromptSet& p, const PromptSchema& schema) {
    nlohmann::ordered_json arr = nlohmann::ordered_json::array();
    for (std::size_t i = 0; i < p.instances.size(); ++i) {
        const auto& inst = p.instances[i];
        if (auto e = check_instance(inst, schema))
            throw Error("cannot serialize instance " + std::to_string(i) + ": " + e->detail);
        nlohmann::ordered_json obj = nlohmann::ordered_json::object();
        if (inst.bbox) obj["bbox"] = {inst.bbox->x1, inst.bbox->y1, inst.bbox->x2, inst.bbox->y2};
        nlohmann::ordered_json pos = nlohmann::ordered_json::array();
        nlohmann::ordered_json neg = nlohmann::ordered_json::array();
        for (const auto& pt : inst.points)
            (pt.polarity == Polarity::positive ? pos : neg).push_back({pt.x, pt.y});
        if (schema.positive_points() > 0) obj["points"] = pos;
        if (schema.negative_points() > 0) obj["neg_points"] = neg;
        arr.push_back(std::move(obj));
    }
    return arr.dump();
}

std::string serialize_prompt_set(const PromptSet& p, std::string_view think, const PromptSchema& schema) {
    if (contains_tag(think)) throw Error("think text must not contain protocol tags");
    std::string out;
    out.reserve(think.size() + 64 * (p.instances.size() + 1));
    out.append(kThinkOpen).append(think).append(kThinkClose);
    out.append(kAnswerOpen).append(serialize_answer(p, schema)).append(kAnswerClose);
    return out;
}

int format_reward(const ParseResult& r) { return r.ok() ? 1 : 0; }

}  // namespace promptseg
