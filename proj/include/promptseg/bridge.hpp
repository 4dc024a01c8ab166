#pragma once

#include "promptseg/mask.hpp"
#include "promptseg/protocol.hpp"
#include "promptseg/segmenter.hpp"

#include <json.hpp>

#include <cstdio>
#include <memory>
#include <mutex>
#include <optional>
#include <string>

namespace promptseg {

/// One request line: {"id", "image_path", "prompts": [{"bbox"?, "points", "labels"}], "schema"}.
/// labels hold 1 for positive and 0 for negative points, aligned with points.
nlohmann::ordered_json encode_bridge_request(const std::string& id, const std::string& image_path,
                                             const PromptSet& prompts, const PromptSchema& schema);

/// Inverse of encode_bridge_request; throws Error on a malformed request.
struct BridgeRequest {
    std::string id;
    std::string image_path;
    PromptSet prompts;
    std::string schema;
};
BridgeRequest decode_bridge_request(const nlohmann::json& j);

struct BridgeResponse {
    std::string id;
    bool ok = false;
    std::optional<RleMask> mask;
    std::string error_code;  // bad_request | image_missing | model_failure
    std::string error_detail;
};

nlohmann::ordered_json encode_bridge_response(const BridgeResponse& r);
/// Throws Error when the line is not a well-formed response.
BridgeResponse decode_bridge_response(std::string_view line);

/// Runs `/bin/sh -c command` once and exchanges one JSONL request/response
/// pair per prompt set over its stdin/stdout. Calls are serialized.
class BridgeSegmenter final : public SegmenterBackend {
public:
    explicit BridgeSegmenter(std::string command);
    ~BridgeSegmenter() override;
    BridgeSegmenter(const BridgeSegmenter&) = delete;
    BridgeSegmenter& operator=(const BridgeSegmenter&) = delete;

    BinaryMask execute(const SegmentationTarget& target, const InstancePrompt& prompt,
                       const PromptSchema& schema) const override;
    BinaryMask execute_prompt_set(const SegmentationTarget& target, const PromptSet& prompts,
                                  const PromptSchema& schema) const override;
    std::string name() const override { return "bridge:" + command_; }

private:
    std::string command_;
    int pid_ = -1;
    std::FILE* to_child_ = nullptr;
    std::FILE* from_child_ = nullptr;
    mutable std::mutex mutex_;
    mutable long next_id_ = 0;
};

}  // namespace promptseg
