#pragma once

#include "promptseg/dataset.hpp"
#include "promptseg/mask.hpp"
#include "promptseg/policy.hpp"
#include "promptseg/protocol.hpp"
#include "promptseg/segmenter.hpp"

#include <json.hpp>

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

namespace promptseg {

struct RewardWeights {
    double format = 1.0;
    double iou = 2.0;
};

struct RewardBreakdown {
    int format = 0;
    double iou = 0.0;
    double total = 0.0;
};

/// total = w.format * r_format + w.iou * r_iou.
///  - r_format = format_reward(pr);
///  - parse failure: r_iou = 0 and `pred` must be null (segmenter never runs);
///  - empty ground truth: r_iou = 1 iff the prompt set is empty;
///  - otherwise r_iou = iou(pred, gt), with an empty prompt set scoring 0.
/// `pred` must be non-null exactly when pr is Ok with a nonempty prompt set;
/// any other combination throws Error.
RewardBreakdown compute_reward(const ParseResult& pr, const BinaryMask* pred, const BinaryMask& gt,
                               const RewardWeights& w);

inline constexpr double kAdvantageStdEpsilon = 1e-8;

struct GroupAdvantages {
    std::vector<double> rewards;
    std::vector<double> advantages;
    double mean = 0.0;
    double std = 0.0;  // population standard deviation
};

/// (r_i - mean) / std with the population std; a group whose std is at most
/// kAdvantageStdEpsilon gets all-zero advantages.
GroupAdvantages compute_advantages(std::span<const double> rewards);

/// min(ratio * a, clip(ratio, 1 - eps, 1 + eps) * a)
double surrogate_value(double ratio, double advantage, double clip_eps);

/// KL(p || q) for two categorical distributions given as probabilities.
double categorical_kl(std::span<const double> p, std::span<const double> q);

/// Exact KL between the per-step action distributions of two policies.
double kl_divergence(const PolicyParams& p, const PolicyParams& q, std::span<const double> features);

enum class UpdateRule { gradient_ascent, adam };

struct GrpoConfig {
    int group_size = 16;
    double clip_eps = 0.2;
    double beta = 1e-3;
    double learning_rate = 1e-2;
    int inner_epochs = 1;
    int iterations = 0;
    int batch_size = 16;
    std::uint64_t seed = 0;
    UpdateRule update_rule = UpdateRule::gradient_ascent;
    double init_scale = 0.01;
    double init_stop_probability = 0.2;  // per-step STOP probability of the initial policy
    RewardWeights weights;
    // moment-based rule only
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_epsilon = 1e-8;

    void validate() const;
    nlohmann::ordered_json to_json() const;
    /// Fields absent from `j` keep the values already in `base`.
    static GrpoConfig from_json(const nlohmann::json& j, GrpoConfig base);
    static GrpoConfig from_json(const nlohmann::json& j) { return from_json(j, GrpoConfig()); }
};

/// One sampled group, frozen for the objective: features, the actions of
/// each rollout, their log-likelihood under the sampling policy, and the
/// standardized advantages.
struct GroupData {
    Features features;
    std::vector<std::vector<int>> actions;
    std::vector<double> old_logprobs;
    std::vector<double> advantages;
};

struct ObjectiveResult {
    double value = 0.0;
    PolicyParams gradient;
    double clip_fraction = 0.0;  // share of rollouts whose clipped branch is strictly smaller
    double kl = 0.0;             // mean step KL(π_θ || π_ref)
};

/// Mean over groups of (1/G) Σ_i min(ratio_i a_i, clip(ratio_i) a_i) − β KL(π_θ || π_ref),
/// with its exact gradient. A rollout contributes ratio·a·∇log π_θ when the
/// unclipped term attains the min, and nothing otherwise.
ObjectiveResult grpo_objective(const PolicyParams& params, const PolicyParams& ref, const ActionSpace& space,
                               std::span<const GroupData> groups, const GrpoConfig& cfg);

/// Moment-based update state; empty until first use.
class AdamState {
public:
    void ascend(PolicyParams& params, const PolicyParams& grad, const GrpoConfig& cfg);

private:
    std::vector<double> m_, v_;
    long step_ = 0;
};

struct TrainSample {
    const Scene* scene = nullptr;
    const Query* query = nullptr;
    Features features;
    std::filesystem::path image_path;
};

struct TrainStats {
    double mean_reward = 0.0;
    double mean_giou = 0.0;
    double clip_frac = 0.0;
    double kl = 0.0;
};

struct TrainStepResult {
    PolicyParams params;
    TrainStats stats;
};

/// Scores one rollout: parse, execute (only when the prompt set is nonempty
/// and parsed), reward. Also returns the mask IoU against the ground truth.
struct ScoredRollout {
    RewardBreakdown reward;
    double iou = 0.0;
};
ScoredRollout score_rollout(const Rollout& r, const TrainSample& sample, const SegmenterBackend& segmenter,
                            const PromptSchema& schema, const RewardWeights& w);

/// Samples G rollouts per batch element from `old_params` (element b uses
/// seed derive_seed(step_seed, b)), scores them, standardizes rewards per
/// group, and takes cfg.inner_epochs ascent steps on the GRPO objective
/// starting from `params`.
TrainStepResult train_step(std::span<const TrainSample> batch, const PolicyParams& params,
                           const PolicyParams& old_params, const PolicyParams& ref_params, const GrpoConfig& cfg,
                           const SegmenterBackend& segmenter, const PromptSchema& schema, const ActionSpace& space,
                           std::uint64_t step_seed, AdamState* adam = nullptr, int jobs = 1);

struct IterationRecord {
    int iter = 0;
    TrainStats stats;
    double wall_ms = 0.0;

    nlohmann::ordered_json to_json() const;
};

struct TrainResult {
    PolicyParams params;
    std::vector<IterationRecord> log;
};

/// Runs cfg.iterations train steps. old_params is refreshed to the current
/// params at the start of every iteration; the reference policy stays at
/// `init`. Batches cycle through a seeded permutation of the queries.
TrainResult train(const Dataset& data, const GrpoConfig& cfg, const PromptSchema& schema, const ActionSpace& space,
                  const FeatureConfig& features, const SegmenterBackend& segmenter, const PolicyParams& init,
                  const std::function<void(const IterationRecord&)>& on_iteration = {}, int jobs = 1);

}  // namespace promptseg
