#pragma once

#include "promptseg/protocol.hpp"
#include "promptseg/scene.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace promptseg {

/// Discretized prompt actions: a grid x grid lattice of box centers times one
/// size class per entry of `half_extents`, plus a STOP action with id
/// num_actions(). Every action decodes to a schema-valid InstancePrompt.
struct ActionSpace {
    int grid = 16;
    std::vector<int> half_extents{8, 20, 48};  // pixels at a 256-pixel canvas side
    int max_steps = 8;
    Canvas canvas{256, 256};

    int num_actions() const { return grid * grid * int(half_extents.size()); }
    int stop_action() const { return num_actions(); }
    int num_outputs() const { return num_actions() + 1; }

    void validate() const;
    BBox box(int action) const;
    InstancePrompt decode(int action, const PromptSchema& schema) const;

    nlohmann::json to_json() const;
    static ActionSpace from_json(const nlohmann::json& j);
    friend bool operator==(const ActionSpace&, const ActionSpace&) = default;
};

/// Feature layout, in order:
///   one-hot of the queried category                       [categories]
///   per-category occupancy counts on a grid, L1-normalized  [categories * grid^2]
///   queried category's per-cell coverage, max-normalized   [query_grid^2] (if query_block)
///   bias 1                                                [1]
struct FeatureConfig {
    int categories = 5;
    int occupancy_grid = 8;
    bool query_block = true;
    int query_grid = 16;

    int dim() const;
    nlohmann::json to_json() const;
    static FeatureConfig from_json(const nlohmann::json& j);
    friend bool operator==(const FeatureConfig&, const FeatureConfig&) = default;
};

using Features = std::vector<double>;

Features featurize(const Scene& scene, const Query& query, const FeatureConfig& cfg);

/// Row-major (num_outputs x feature dim) logit weights shared by every step.
class PolicyParams {
public:
    PolicyParams() = default;
    PolicyParams(int rows, int cols, double fill = 0.0);

    int rows() const { return rows_; }
    int cols() const { return cols_; }
    double& at(int r, int c) { return values_[std::size_t(r) * std::size_t(cols_) + std::size_t(c)]; }
    double at(int r, int c) const { return values_[std::size_t(r) * std::size_t(cols_) + std::size_t(c)]; }
    std::span<double> values() { return values_; }
    std::span<const double> values() const { return values_; }

    /// this += scale * other
    void axpy(double scale, const PolicyParams& other);
    /// this += scale * outer(coeffs, features)
    void add_outer(double scale, std::span<const double> coeffs, std::span<const double> features);

    friend bool operator==(const PolicyParams&, const PolicyParams&) = default;

private:
    int rows_ = 0;
    int cols_ = 0;
    std::vector<double> values_;
};

/// STOP-row bias offset giving STOP probability `stop_probability` when every
/// other logit is 0.
double stop_bias_for(const ActionSpace& space, double stop_probability);

/// Uniform(-scale, scale) entries from the given seed; scale 0 gives zeros.
/// With `stop_probability`, the STOP row's bias weight is raised by
/// stop_bias_for() so short rollouts and rejections get explored.
PolicyParams init_params(const ActionSpace& space, const FeatureConfig& features, double scale, std::uint64_t seed,
                         std::optional<double> stop_probability = std::nullopt);

std::vector<double> step_logits(const PolicyParams& params, std::span<const double> features);
std::vector<double> log_softmax(std::span<const double> logits);
std::vector<double> softmax(std::span<const double> logits);

struct Rollout {
    std::vector<int> actions;  // ends with STOP unless truncated at max_steps
    std::string text;
    double logprob = 0.0;
    PromptSet prompts;
};

/// Throws Error for an id outside [0, STOP], a STOP that is not last, or
/// more than max_steps non-STOP actions.
void validate_actions(const ActionSpace& space, std::span<const int> actions);

PromptSet decode_actions(const ActionSpace& space, std::span<const int> actions, const PromptSchema& schema);

/// Builds the rollout record (text, prompts, logprob) for a fixed action sequence.
Rollout make_rollout(const PolicyParams& params, const ActionSpace& space, std::span<const double> features,
                     std::vector<int> actions, const PromptSchema& schema);

/// G i.i.d. rollouts; rollout i draws from its own stream derived from
/// (seed, i), so results do not depend on evaluation order.
std::vector<Rollout> sample_rollouts(const PolicyParams& params, const ActionSpace& space,
                                     std::span<const double> features, int group_size, const PromptSchema& schema,
                                     std::uint64_t seed);

/// Sum over steps of log softmax(θ·φ)[a_t].
double logprob(const PolicyParams& params, const ActionSpace& space, std::span<const double> features,
               std::span<const int> actions);

/// Σ_t outer(e_{a_t} − p, φ), same shape as θ.
PolicyParams grad_logprob(const PolicyParams& params, const ActionSpace& space, std::span<const double> features,
                          std::span<const int> actions);

/// Deterministic decoding. Each step first takes the likelier of "stop" and
/// "continue with an action not yet emitted" (STOP wins only when its
/// probability strictly exceeds the total of the unused actions), then the
/// most probable unused action. Repeats are skipped because they cannot
/// change the executed mask. Ties go to the lowest id.
std::vector<int> greedy_actions(const PolicyParams& params, const ActionSpace& space, std::span<const double> features);

/// Scripted upper bound: one prompt per ground-truth instance of the target
/// category, derived from the instance mask; empty for empty-target queries.
PromptSet oracle_prompts(const Scene& scene, const Query& query, const PromptSchema& schema);

struct Checkpoint {
    PolicyParams params;
    ActionSpace space;
    FeatureConfig features;
    PromptMode schema = PromptMode::bbox_pos2;
    std::vector<std::uint64_t> seed_lineage;
    nlohmann::json config;  // effective training config echo
};

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
/// Throws IoError naming the path when missing or malformed.
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace promptseg
