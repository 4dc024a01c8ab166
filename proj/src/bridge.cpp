#include "promptseg/bridge.hpp"

#include "promptseg/error.hpp"

#include <csignal>
#include <cstring>
#include <fcntl.h>
#include <sys/wait.h>
#include <unistd.h>

namespace promptseg {

using json = nlohmann::json;

nlohmann::ordered_json encode_bridge_request(const std::string& id, const std::string& image_path,
                                             const PromptSet& prompts, const PromptSchema& schema) {
    nlohmann::ordered_json j;
    j["id"] = id;
    j["image_path"] = image_path;
    auto arr = nlohmann::ordered_json::array();
    for (const auto& p : prompts.instances) {
        nlohmann::ordered_json e;
        if (p.bbox) e["bbox"] = {p.bbox->x1, p.bbox->y1, p.bbox->x2, p.bbox->y2};
        auto pts = nlohmann::ordered_json::array();
        auto labels = nlohmann::ordered_json::array();
        for (const auto& pt : p.points) {
            pts.push_back({pt.x, pt.y});
            labels.push_back(pt.polarity == Polarity::positive ? 1 : 0);
        }
        e["points"] = pts;
        e["labels"] = labels;
        arr.push_back(e);
    }
    j["prompts"] = arr;
    j["schema"] = std::string(to_string(schema.mode));
    return j;
}

BridgeRequest decode_bridge_request(const json& j) {
    try {
        BridgeRequest r;
        r.id = j.at("id").get<std::string>();
        r.image_path = j.at("image_path").get<std::string>();
        r.schema = j.at("schema").get<std::string>();
        for (const auto& e : j.at("prompts")) {
            InstancePrompt p;
            if (e.contains("bbox")) {
                auto b = e.at("bbox").get<std::vector<int>>();
                if (b.size() != 4) throw Error("bbox needs 4 integers");
                p.bbox = BBox{b[0], b[1], b[2], b[3]};
            }
            auto pts = e.value("points", std::vector<std::vector<int>>{});
            auto labels = e.value("labels", std::vector<int>{});
            if (labels.size() != pts.size()) throw Error("labels and points differ in length");
            for (std::size_t i = 0; i < pts.size(); ++i) {
                if (pts[i].size() != 2) throw Error("point needs 2 integers");
                if (labels[i] != 0 && labels[i] != 1) throw Error("label must be 0 or 1");
                p.points.push_back({pts[i][0], pts[i][1], labels[i] ? Polarity::positive : Polarity::negative});
            }
            r.prompts.instances.push_back(std::move(p));
        }
        return r;
    } catch (const json::exception& e) {
        throw Error(std::string("bad bridge request: ") + e.what());
    }
}

nlohmann::ordered_json encode_bridge_response(const BridgeResponse& r) {
    nlohmann::ordered_json j;
    j["id"] = r.id;
    j["ok"] = r.ok;
    if (r.ok) {
        if (!r.mask) throw Error("bridge response: ok without a mask");
        j["mask"] = {{"width", r.mask->width}, {"height", r.mask->height}, {"counts", r.mask->counts}};
    } else {
        j["error"] = {{"code", r.error_code}, {"detail", r.error_detail}};
    }
    return j;
}

BridgeResponse decode_bridge_response(std::string_view line) {
    json j = json::parse(line, nullptr, false);
    if (j.is_discarded() || !j.is_object()) throw Error("bridge response is not a JSON object");
    try {
        BridgeResponse r;
        r.id = j.at("id").get<std::string>();
        r.ok = j.at("ok").get<bool>();
        if (r.ok) {
            const auto& m = j.at("mask");
            r.mask = RleMask{m.at("width").get<int>(), m.at("height").get<int>(),
                             m.at("counts").get<std::vector<std::int64_t>>()};
        } else {
            const auto& e = j.at("error");
            r.error_code = e.at("code").get<std::string>();
            r.error_detail = e.value("detail", "");
        }
        return r;
    } catch (const json::exception& e) {
        throw Error(std::string("bad bridge response: ") + e.what());
    }
}

BridgeSegmenter::BridgeSegmenter(std::string command) : command_(std::move(command)) {
    if (command_.empty()) throw UsageError("bridge command is empty");
    int in_pipe[2], out_pipe[2];
    if (pipe(in_pipe) != 0) throw IoError("pipe failed: " + std::string(std::strerror(errno)));
    if (pipe(out_pipe) != 0) {
        close(in_pipe[0]);
        close(in_pipe[1]);
        throw IoError("pipe failed: " + std::string(std::strerror(errno)));
    }
    pid_ = fork();
    if (pid_ < 0) throw IoError("fork failed: " + std::string(std::strerror(errno)));
    if (pid_ == 0) {
        dup2(in_pipe[0], STDIN_FILENO);
        dup2(out_pipe[1], STDOUT_FILENO);
        close(in_pipe[0]);
        close(in_pipe[1]);
        close(out_pipe[0]);
        close(out_pipe[1]);
        execl("/bin/sh", "sh", "-c", command_.c_str(), static_cast<char*>(nullptr));
        _exit(127);
    }
    close(in_pipe[0]);
    close(out_pipe[1]);
    fcntl(in_pipe[1], F_SETFD, FD_CLOEXEC);
    fcntl(out_pipe[0], F_SETFD, FD_CLOEXEC);
    to_child_ = fdopen(in_pipe[1], "w");
    from_child_ = fdopen(out_pipe[0], "r");
    // A dead bridge should surface as a write error, not kill the process.
    std::signal(SIGPIPE, SIG_IGN);
}

BridgeSegmenter::~BridgeSegmenter() {
    if (to_child_) std::fclose(to_child_);
    if (from_child_) std::fclose(from_child_);
    if (pid_ > 0) {
        int status = 0;
        waitpid(pid_, &status, 0);
    }
}

BinaryMask BridgeSegmenter::execute(const SegmentationTarget& target, const InstancePrompt& prompt,
                                    const PromptSchema& schema) const {
    return execute_prompt_set(target, PromptSet{{prompt}}, schema);
}

BinaryMask BridgeSegmenter::execute_prompt_set(const SegmentationTarget& target, const PromptSet& prompts,
                                               const PromptSchema& schema) const {
    std::lock_guard lock(mutex_);
    const std::string id = "req-" + std::to_string(next_id_++);
    std::string line = encode_bridge_request(id, target.image_path.string(), prompts, schema).dump() + "\n";
    if (std::fwrite(line.data(), 1, line.size(), to_child_) != line.size() || std::fflush(to_child_) != 0)
        throw IoError("bridge '" + command_ + "': write failed (process exited?)");

    std::string reply;
    char buf[4096];
    while (std::fgets(buf, sizeof buf, from_child_)) {
        reply += buf;
        if (!reply.empty() && reply.back() == '\n') break;
    }
    if (reply.empty()) throw IoError("bridge '" + command_ + "': no response (process exited?)");
    BridgeResponse r = decode_bridge_response(reply);
    if (r.id != id) throw Error("bridge response id '" + r.id + "' does not match request '" + id + "'");
    if (!r.ok) throw Error("bridge error " + r.error_code + ": " + r.error_detail);
    BinaryMask m = rle_decode(*r.mask);
    if (!(m.canvas() == target.canvas()))
        throw Error("bridge returned a " + std::to_string(m.width()) + "x" + std::to_string(m.height()) +
                    " mask for a " + std::to_string(target.canvas().width) + "x" +
                    std::to_string(target.canvas().height) + " target");
    return m;
}

}  // namespace promptseg
