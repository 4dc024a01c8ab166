#pragma once

#include "promptseg/dataset.hpp"
#include "promptseg/mask.hpp"
#include "promptseg/policy.hpp"
#include "promptseg/protocol.hpp"
#include "promptseg/segmenter.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace promptseg {

struct SampleResult {
    std::string id;
    std::string category;  // queried category name; empty when unknown
    double iou = 0.0;
    std::int64_t intersection = 0;
    std::int64_t union_ = 0;
    bool predicted_empty = false;  // response parsed to the empty prompt set
    bool gt_empty = false;
    bool format_ok = true;
};

/// Per-sample score from the executed mask. iou = intersection / union, and
/// 1 when both masks are empty.
SampleResult score_sample(std::string id, std::string category, const BinaryMask& pred, const BinaryMask& gt,
                          bool predicted_empty, bool format_ok);

struct RejectionCounts {
    int true_count = 0;
    int false_count = 0;

    int total() const { return true_count + false_count; }
    double true_percent() const;
    double false_percent() const;
    nlohmann::ordered_json to_json() const;
};

/// Over empty-ground-truth samples only: TRUE when the prompt set was empty,
/// FALSE otherwise. Throws Error on a sample whose ground truth is nonempty.
RejectionCounts rejection_eval(std::span<const SampleResult> results);

struct CategoryStats {
    int n = 0;
    double giou = 0.0;
    double ciou = 0.0;
};

struct Report {
    int n = 0;
    double giou = 0.0;
    double ciou = 0.0;
    double p_at = 0.0;
    double tau = 0.5;
    std::int64_t sum_intersection = 0;
    std::int64_t sum_union = 0;
    int format_errors = 0;
    RejectionCounts rejection;  // over the empty-target subset (zeros if none)
    std::map<std::string, CategoryStats> per_category;
    nlohmann::ordered_json config;

    nlohmann::ordered_json to_json() const;
};

/// gIoU = mean iou; cIoU = Σ∩ / Σ∪ (0 when Σ∪ = 0); P@τ counts iou > τ.
/// Throws Error on an empty list.
Report aggregate(std::span<const SampleResult> results, double tau = 0.5);

/// Zero-padded query index, also the ground-truth file stem.
std::string sample_id(std::size_t query_index);

/// Greedy responses of a checkpointed policy, one per query.
std::vector<std::string> policy_responses(const Checkpoint& ckpt, const Dataset& data, const PromptSchema& schema,
                                          int jobs = 1);
std::vector<std::string> policy_responses(const PolicyParams& params, const ActionSpace& space,
                                          const FeatureConfig& features, const Dataset& data,
                                          const PromptSchema& schema, int jobs = 1);

/// Oracle responses built from the ground-truth instances.
std::vector<std::string> oracle_responses(const Dataset& data, const PromptSchema& schema);

/// JSONL of {"sample_id", "answer_text"}; sample_id is the query index as an
/// integer or its zero-padded string form. Every query must appear exactly
/// once. Throws IoError with path and line.
std::vector<std::string> read_prompts_file(const std::filesystem::path& path, std::size_t num_queries);

/// Parses and executes every response against its query.
std::vector<SampleResult> evaluate_responses(const Dataset& data, std::span<const std::string> responses,
                                             const SegmenterBackend& segmenter, const PromptSchema& schema,
                                             int jobs = 1);

void write_results_csv(std::span<const SampleResult> results, const std::filesystem::path& path);

}  // namespace promptseg
