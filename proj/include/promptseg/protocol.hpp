#pragma once

#include "promptseg/mask.hpp"

#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

namespace promptseg {

// Prompt combinations accepted per instance.
enum class PromptMode {
    bbox_only,       // one box
    pos_points_2,    // two positive points, no box
    bbox_pos2,       // one box + two positive points (default)
    bbox_pos4,       // one box + four positive points
    bbox_pos2_neg2,  // one box + two positive + two negative points
};

std::string_view to_string(PromptMode mode);
/// Throws UsageError for an unknown name.
PromptMode parse_prompt_mode(std::string_view name);

struct PromptSchema {
    PromptMode mode = PromptMode::bbox_pos2;
    Canvas canvas{256, 256};

    bool has_box() const;
    int positive_points() const;
    int negative_points() const;
};

struct InstancePrompt {
    std::optional<BBox> bbox;
    std::vector<PointPx> points;  // both polarities, positives first

    friend bool operator==(const InstancePrompt&, const InstancePrompt&) = default;
};

// An empty instance list is the "no target" answer.
struct PromptSet {
    std::vector<InstancePrompt> instances;

    bool empty() const { return instances.empty(); }
    friend bool operator==(const PromptSet&, const PromptSet&) = default;
};

enum class FormatErrorKind { missing_tags, bad_json, schema_violation, out_of_canvas };

std::string_view to_string(FormatErrorKind kind);

struct FormatError {
    FormatErrorKind kind;
    std::string detail;
};

struct ParsedResponse {
    PromptSet prompts;
    std::string think;
};

class ParseResult {
public:
    ParseResult(ParsedResponse ok) : value_(std::move(ok)) {}
    ParseResult(FormatError err) : value_(std::move(err)) {}

    bool ok() const { return std::holds_alternative<ParsedResponse>(value_); }
    const PromptSet& prompts() const { return std::get<ParsedResponse>(value_).prompts; }
    const std::string& think() const { return std::get<ParsedResponse>(value_).think; }
    const FormatError& error() const { return std::get<FormatError>(value_); }

private:
    std::variant<ParsedResponse, FormatError> value_;
};

/// Checks one instance against the schema: composition first, then canvas
/// bounds. Returns the first violation or nullopt.
std::optional<FormatError> check_instance(const InstancePrompt& p, const PromptSchema& schema);

/// Parses `<think>...</think><answer>[...]</answer>`. Never throws; every
/// failure is reported as a FormatError. Checks run in a fixed order: tags,
/// JSON well-formedness, schema, canvas bounds.
ParseResult parse_response(std::string_view text, const PromptSchema& schema);

/// Inverse of parse_response. Throws Error if `p` violates the schema or
/// `think` contains a protocol tag.
std::string serialize_prompt_set(const PromptSet& p, std::string_view think, const PromptSchema& schema);

/// JSON array body only (what sits between the answer tags).
std::string serialize_answer(const PromptSet& p, const PromptSchema& schema);

int format_reward(const ParseResult& r);

}  // namespace promptseg
