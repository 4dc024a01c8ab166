#include "promptseg/grpo.hpp"

#include "promptseg/error.hpp"
#include "promptseg/parallel.hpp"
#include "promptseg/rng.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>

namespace promptseg {

using json = nlohmann::json;

RewardBreakdown compute_reward(const ParseResult& pr, const BinaryMask* pred, const BinaryMask& gt,
                               const RewardWeights& w) {
    RewardBreakdown r;
    r.format = format_reward(pr);
    if (!pr.ok()) {
        if (pred) throw Error("compute_reward: a mask was supplied for an unparsable response");
    } else if (pr.prompts().empty()) {
        if (pred) throw Error("compute_reward: a mask was supplied for an empty prompt set");
        r.iou = gt.empty() ? 1.0 : 0.0;
    } else {
        if (!pred) throw Error("compute_reward: nonempty prompt set requires the executed mask");
        r.iou = gt.empty() ? 0.0 : iou(*pred, gt);
    }
    r.total = w.format * r.format + w.iou * r.iou;
    return r;
}

GroupAdvantages compute_advantages(std::span<const double> rewards) {
    if (rewards.size() < 2) throw Error("advantages need a group of at least 2 rewards");
    GroupAdvantages g;
    g.rewards.assign(rewards.begin(), rewards.end());
    const double n = double(rewards.size());
    g.mean = std::accumulate(rewards.begin(), rewards.end(), 0.0) / n;
    double ss = 0.0;
    for (double r : rewards) ss += (r - g.mean) * (r - g.mean);
    g.std = std::sqrt(ss / n);
    g.advantages.assign(rewards.size(), 0.0);
    if (g.std > kAdvantageStdEpsilon)
        for (std::size_t i = 0; i < rewards.size(); ++i) g.advantages[i] = (rewards[i] - g.mean) / g.std;
    return g;
}

double surrogate_value(double ratio, double advantage, double clip_eps) {
    double clipped = std::clamp(ratio, 1.0 - clip_eps, 1.0 + clip_eps);
    return std::min(ratio * advantage, clipped * advantage);
}

double categorical_kl(std::span<const double> p, std::span<const double> q) {
    if (p.size() != q.size()) throw Error("KL: distributions differ in size");
    double kl = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i)
        if (p[i] > 0.0) kl += p[i] * (std::log(p[i]) - std::log(q[i]));
    return std::max(0.0, kl);
}

namespace {

double kl_from_logp(std::span<const double> logp, std::span<const double> logq) {
    double kl = 0.0;
    for (std::size_t i = 0; i < logp.size(); ++i) kl += std::exp(logp[i]) * (logp[i] - logq[i]);
    return std::max(0.0, kl);
}

}  // namespace

double kl_divergence(const PolicyParams& p, const PolicyParams& q, std::span<const double> features) {
    if (p.rows() != q.rows() || p.cols() != q.cols()) throw Error("KL: policies have different shapes");
    return kl_from_logp(log_softmax(step_logits(p, features)), log_softmax(step_logits(q, features)));
}

void GrpoConfig::validate() const {
    if (group_size < 2) throw Error("config: group_size must be at least 2");
    if (!(clip_eps > 0.0 && clip_eps < 1.0)) throw Error("config: clip_eps must lie in (0, 1)");
    if (beta < 0.0) throw Error("config: beta must be non-negative");
    if (!(learning_rate > 0.0)) throw Error("config: learning_rate must be positive");
    if (inner_epochs < 1) throw Error("config: inner_epochs must be at least 1");
    if (iterations < 0) throw Error("config: iterations must be non-negative");
    if (batch_size < 1) throw Error("config: batch_size must be at least 1");
    if (init_scale < 0.0) throw Error("config: init_scale must be non-negative");
    if (!(init_stop_probability > 0.0 && init_stop_probability < 1.0))
        throw Error("config: init_stop_probability must lie in (0, 1)");
    if (weights.format < 0.0 || weights.iou < 0.0) throw Error("config: reward weights must be non-negative");
}

nlohmann::ordered_json GrpoConfig::to_json() const {
    nlohmann::ordered_json j;
    j["group_size"] = group_size;
    j["clip_eps"] = clip_eps;
    j["beta"] = beta;
    j["learning_rate"] = learning_rate;
    j["inner_epochs"] = inner_epochs;
    j["iterations"] = iterations;
    j["batch_size"] = batch_size;
    j["seed"] = seed;
    j["update_rule"] = update_rule == UpdateRule::adam ? "adam" : "gradient_ascent";
    j["init_scale"] = init_scale;
    j["init_stop_probability"] = init_stop_probability;
    j["reward_weights"] = {{"format", weights.format}, {"iou", weights.iou}};
    j["adam"] = {{"beta1", adam_beta1}, {"beta2", adam_beta2}, {"epsilon", adam_epsilon}};
    return j;
}

GrpoConfig GrpoConfig::from_json(const json& j, GrpoConfig c) {
    try {
        c.group_size = j.value("group_size", c.group_size);
        c.clip_eps = j.value("clip_eps", c.clip_eps);
        c.beta = j.value("beta", c.beta);
        c.learning_rate = j.value("learning_rate", c.learning_rate);
        c.inner_epochs = j.value("inner_epochs", c.inner_epochs);
        c.iterations = j.value("iterations", c.iterations);
        c.batch_size = j.value("batch_size", c.batch_size);
        c.seed = j.value("seed", c.seed);
        c.init_scale = j.value("init_scale", c.init_scale);
        c.init_stop_probability = j.value("init_stop_probability", c.init_stop_probability);
        if (j.contains("update_rule")) {
            auto rule = j.at("update_rule").get<std::string>();
            if (rule == "adam")
                c.update_rule = UpdateRule::adam;
            else if (rule == "gradient_ascent")
                c.update_rule = UpdateRule::gradient_ascent;
            else
                throw Error("config: unknown update_rule '" + rule + "'");
        }
        if (j.contains("reward_weights")) {
            c.weights.format = j.at("reward_weights").value("format", c.weights.format);
            c.weights.iou = j.at("reward_weights").value("iou", c.weights.iou);
        }
        if (j.contains("adam")) {
            c.adam_beta1 = j.at("adam").value("beta1", c.adam_beta1);
            c.adam_beta2 = j.at("adam").value("beta2", c.adam_beta2);
            c.adam_epsilon = j.at("adam").value("epsilon", c.adam_epsilon);
        }
    } catch (const json::exception& e) {
        throw Error(std::string("config: ") + e.what());
    }
    c.validate();
    return c;
}

ObjectiveResult grpo_objective(const PolicyParams& params, const PolicyParams& ref, const ActionSpace& space,
                               std::span<const GroupData> groups, const GrpoConfig& cfg) {
    if (groups.empty()) throw Error("objective needs at least one group");
    ObjectiveResult out;
    out.gradient = PolicyParams(params.rows(), params.cols());
    const double inv_groups = 1.0 / double(groups.size());
    std::size_t clipped = 0, total = 0;

    for (const auto& g : groups) {
        const std::size_t G = g.actions.size();
        if (G == 0 || g.old_logprobs.size() != G || g.advantages.size() != G)
            throw Error("objective: group arrays disagree in length");
        auto logp = log_softmax(step_logits(params, g.features));
        auto logq = log_softmax(step_logits(ref, g.features));
        std::vector<double> p(logp.size());
        for (std::size_t k = 0; k < p.size(); ++k) p[k] = std::exp(logp[k]);

        // Gradient w.r.t. the step logits, accumulated then expanded once.
        std::vector<double> coeff(p.size(), 0.0);
        double surrogate = 0.0;
        for (std::size_t i = 0; i < G; ++i) {
            const auto& acts = g.actions[i];
            validate_actions(space, acts);
            double lp = 0.0;
            for (int a : acts) lp += logp[std::size_t(a)];
            const double ratio = std::exp(lp - g.old_logprobs[i]);
            const double a = g.advantages[i];
            const double unclipped = ratio * a;
            const double clipped_term = std::clamp(ratio, 1.0 - cfg.clip_eps, 1.0 + cfg.clip_eps) * a;
            surrogate += std::min(unclipped, clipped_term);
            ++total;
            if (clipped_term < unclipped) {
                ++clipped;
                continue;
            }
            const double w = unclipped / double(G);
            if (w == 0.0) continue;
            for (int act : acts) coeff[std::size_t(act)] += w;
            const double steps = double(acts.size());
            for (std::size_t k = 0; k < p.size(); ++k) coeff[k] -= w * steps * p[k];
        }
        surrogate /= double(G);

        const double kl = kl_from_logp(logp, logq);
        if (cfg.beta != 0.0) {
            double raw_kl = 0.0;
            for (std::size_t k = 0; k < p.size(); ++k) raw_kl += p[k] * (logp[k] - logq[k]);
            for (std::size_t k = 0; k < p.size(); ++k)
                coeff[k] -= cfg.beta * p[k] * (logp[k] - logq[k] - raw_kl);
        }
        out.value += inv_groups * (surrogate - cfg.beta * kl);
        out.kl += inv_groups * kl;
        out.gradient.add_outer(inv_groups, coeff, g.features);
    }
    out.clip_fraction = total ? double(clipped) / double(total) : 0.0;
    return out;
}

void AdamState::ascend(PolicyParams& params, const PolicyParams& grad, const GrpoConfig& cfg) {
    auto v = params.values();
    auto g = grad.values();
    if (m_.size() != v.size()) {
        m_.assign(v.size(), 0.0);
        v_.assign(v.size(), 0.0);
        step_ = 0;
    }
    ++step_;
    const double c1 = 1.0 - std::pow(cfg.adam_beta1, double(step_));
    const double c2 = 1.0 - std::pow(cfg.adam_beta2, double(step_));
    for (std::size_t i = 0; i < v.size(); ++i) {
        m_[i] = cfg.adam_beta1 * m_[i] + (1.0 - cfg.adam_beta1) * g[i];
        v_[i] = cfg.adam_beta2 * v_[i] + (1.0 - cfg.adam_beta2) * g[i] * g[i];
        v[i] += cfg.learning_rate * (m_[i] / c1) / (std::sqrt(v_[i] / c2) + cfg.adam_epsilon);
    }
}

ScoredRollout score_rollout(const Rollout& r, const TrainSample& sample, const SegmenterBackend& segmenter,
                            const PromptSchema& schema, const RewardWeights& w) {
    const BinaryMask& gt = sample.query->gt_mask;
    ParseResult pr = parse_response(r.text, schema);
    ScoredRollout s;
    if (pr.ok() && !pr.prompts().empty()) {
        SegmentationTarget target{*sample.scene, sample.image_path};
        BinaryMask pred = segmenter.execute_prompt_set(target, pr.prompts(), schema);
        s.reward = compute_reward(pr, &pred, gt, w);
        s.iou = iou(pred, gt);
    } else {
        s.reward = compute_reward(pr, nullptr, gt, w);
        s.iou = iou(BinaryMask(gt.canvas()), gt);
    }
    return s;
}

TrainStepResult train_step(std::span<const TrainSample> batch, const PolicyParams& params,
                           const PolicyParams& old_params, const PolicyParams& ref_params, const GrpoConfig& cfg,
                           const SegmenterBackend& segmenter, const PromptSchema& schema, const ActionSpace& space,
                           std::uint64_t step_seed, AdamState* adam, int jobs) {
    cfg.validate();
    if (batch.empty()) throw Error("train_step: empty batch");

    struct SampleOutcome {
        GroupData group;
        double reward_sum = 0.0;
        double iou_sum = 0.0;
    };
    std::vector<SampleOutcome> outcomes(batch.size());
    parallel_for(batch.size(), jobs, [&](std::size_t b) {
        const TrainSample& s = batch[b];
        auto rollouts = sample_rollouts(old_params, space, s.features, cfg.group_size, schema,
                                        derive_seed(step_seed, std::uint64_t(b)));
        std::vector<double> rewards;
        SampleOutcome& o = outcomes[b];
        for (auto& r : rollouts) {
            ScoredRollout sc = score_rollout(r, s, segmenter, schema, cfg.weights);
            rewards.push_back(sc.reward.total);
            o.reward_sum += sc.reward.total;
            o.iou_sum += sc.iou;
            o.group.actions.push_back(std::move(r.actions));
            o.group.old_logprobs.push_back(r.logprob);
        }
        o.group.features = s.features;
        o.group.advantages = compute_advantages(rewards).advantages;
    });

    std::vector<GroupData> groups;
    groups.reserve(outcomes.size());
    TrainStats stats;
    for (auto& o : outcomes) {
        stats.mean_reward += o.reward_sum;
        stats.mean_giou += o.iou_sum;
        groups.push_back(std::move(o.group));
    }
    const double rollouts = double(batch.size()) * double(cfg.group_size);
    stats.mean_reward /= rollouts;
    stats.mean_giou /= rollouts;

    TrainStepResult out{params, stats};
    double clip_sum = 0.0;
    for (int epoch = 0; epoch < cfg.inner_epochs; ++epoch) {
        ObjectiveResult obj = grpo_objective(out.params, ref_params, space, groups, cfg);
        clip_sum += obj.clip_fraction;
        if (cfg.update_rule == UpdateRule::adam) {
            if (!adam) throw Error("train_step: moment-based update needs optimizer state");
            adam->ascend(out.params, obj.gradient, cfg);
        } else {
            out.params.axpy(cfg.learning_rate, obj.gradient);
        }
    }
    out.stats.clip_frac = clip_sum / double(cfg.inner_epochs);
    double kl = 0.0;
    for (const auto& g : groups) kl += kl_divergence(out.params, ref_params, g.features);
    out.stats.kl = kl / double(groups.size());
    return out;
}

nlohmann::ordered_json IterationRecord::to_json() const {
    nlohmann::ordered_json j;
    j["iter"] = iter;
    j["mean_reward"] = stats.mean_reward;
    j["mean_giou"] = stats.mean_giou;
    j["clip_frac"] = stats.clip_frac;
    j["kl"] = stats.kl;
    j["wall_ms"] = wall_ms;
    return j;
}

TrainResult train(const Dataset& data, const GrpoConfig& cfg, const PromptSchema& schema, const ActionSpace& space,
                  const FeatureConfig& features, const SegmenterBackend& segmenter, const PolicyParams& init,
                  const std::function<void(const IterationRecord&)>& on_iteration, int jobs) {
    cfg.validate();
    if (data.queries.empty()) throw Error("train: dataset has no queries");
    if (init.rows() != space.num_outputs() || init.cols() != features.dim())
        throw Error("train: initial parameters do not match the action space / feature config");

    std::vector<TrainSample> samples;
    samples.reserve(data.queries.size());
    for (const auto& r : data.queries) {
        const Scene& scene = data.scenes[std::size_t(r.scene)];
        samples.push_back({&scene, &r.query, featurize(scene, r.query, features), data.image_path(r.scene)});
    }

    TrainResult result{init, {}};
    AdamState adam;
    std::vector<std::size_t> order;
    std::size_t cursor = 0;
    int epoch = 0;
    auto refill = [&] {
        order.resize(samples.size());
        std::iota(order.begin(), order.end(), std::size_t{0});
        Rng rng(derive_seed(cfg.seed, 0x5eed, std::uint64_t(epoch++)));
        for (std::size_t i = order.size(); i > 1; --i)
            std::swap(order[i - 1], order[std::size_t(rng.uniform_int(0, std::int64_t(i) - 1))]);
        cursor = 0;
    };
    refill();

    for (int it = 0; it < cfg.iterations; ++it) {
        auto t0 = std::chrono::steady_clock::now();
        std::vector<TrainSample> batch;
        for (int b = 0; b < cfg.batch_size; ++b) {
            if (cursor == order.size()) refill();
            batch.push_back(samples[order[cursor++]]);
        }
        const PolicyParams old = result.params;
        auto step = train_step(batch, result.params, old, init, cfg, segmenter, schema, space,
                               derive_seed(cfg.seed, 0x7a1, std::uint64_t(it)), &adam, jobs);
        result.params = std::move(step.params);
        IterationRecord rec{it, step.stats,
                            std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count()};
        if (on_iteration) on_iteration(rec);
        result.log.push_back(rec);
    }
    return result;
}

}  // namespace promptseg
