#include "promptseg/policy.hpp"

#include "promptseg/error.hpp"
#include "promptseg/rng.hpp"
#include "promptseg/segmenter.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>

namespace promptseg {

using json = nlohmann::json;

void ActionSpace::validate() const {
    if (grid < 1) throw Error("action space: grid must be positive");
    if (half_extents.empty()) throw Error("action space: at least one size class is required");
    for (int h : half_extents)
        if (h < 1) throw Error("action space: half extents must be positive");
    if (max_steps < 1) throw Error("action space: max_steps must be positive");
    if (canvas.width < 1 || canvas.height < 1) throw Error("action space: canvas must be positive");
}

BBox ActionSpace::box(int action) const {
    if (action < 0 || action >= num_actions()) throw Error("action id " + std::to_string(action) + " is not a box action");
    const int sizes = int(half_extents.size());
    const int size = action % sizes;
    const int cell = action / sizes;
    const int row = cell / grid, col = cell % grid;
    const int cx = (2 * col + 1) * canvas.width / (2 * grid);
    const int cy = (2 * row + 1) * canvas.height / (2 * grid);
    const int hx = std::max(1, (half_extents[std::size_t(size)] * canvas.width + 128) / 256);
    const int hy = std::max(1, (half_extents[std::size_t(size)] * canvas.height + 128) / 256);
    return {std::max(0, cx - hx), std::max(0, cy - hy), std::min(canvas.width - 1, cx + hx),
            std::min(canvas.height - 1, cy + hy)};
}

InstancePrompt ActionSpace::decode(int action, const PromptSchema& schema) const {
    const BBox b = box(action);
    const int sizes = int(half_extents.size());
    const int cell = action / sizes;
    const int cx = (2 * (cell % grid) + 1) * canvas.width / (2 * grid);
    const int cy = (2 * (cell / grid) + 1) * canvas.height / (2 * grid);
    auto clamp_pt = [&](int x, int y, Polarity pol) {
        return PointPx{std::clamp(x, b.x1, b.x2), std::clamp(y, b.y1, b.y2), pol};
    };
    const int dx = b.width() / 4, dy = b.height() / 4;

    InstancePrompt p;
    if (schema.has_box()) p.bbox = b;
    if (schema.positive_points() >= 2) {
        p.points.push_back(clamp_pt(cx - dx, cy, Polarity::positive));
        p.points.push_back(clamp_pt(cx + dx, cy, Polarity::positive));
    }
    if (schema.positive_points() >= 4) {
        p.points.push_back(clamp_pt(cx, cy - dy, Polarity::positive));
        p.points.push_back(clamp_pt(cx, cy + dy, Polarity::positive));
    }
    if (schema.negative_points() == 2) {
        p.points.push_back({b.x1, b.y1, Polarity::negative});
        p.points.push_back({b.x2, b.y2, Polarity::negative});
    }
    return p;
}

json ActionSpace::to_json() const {
    return {{"grid", grid},
            {"half_extents", half_extents},
            {"max_steps", max_steps},
            {"canvas", {{"width", canvas.width}, {"height", canvas.height}}}};
}

ActionSpace ActionSpace::from_json(const json& j) {
    ActionSpace s;
    s.grid = j.value("grid", s.grid);
    if (j.contains("half_extents")) s.half_extents = j.at("half_extents").get<std::vector<int>>();
    s.max_steps = j.value("max_steps", s.max_steps);
    if (j.contains("canvas")) {
        s.canvas.width = j.at("canvas").at("width").get<int>();
        s.canvas.height = j.at("canvas").at("height").get<int>();
    }
    s.validate();
    return s;
}

int FeatureConfig::dim() const {
    const int cells = occupancy_grid * occupancy_grid;
    return categories + categories * cells + (query_block ? query_grid * query_grid : 0) + 1;
}

json FeatureConfig::to_json() const {
    return {{"categories", categories},
            {"occupancy_grid", occupancy_grid},
            {"query_block", query_block},
            {"query_grid", query_grid}};
}

FeatureConfig FeatureConfig::from_json(const json& j) {
    FeatureConfig f;
    f.categories = j.value("categories", f.categories);
    f.occupancy_grid = j.value("occupancy_grid", f.occupancy_grid);
    f.query_block = j.value("query_block", f.query_block);
    f.query_grid = j.value("query_grid", f.query_grid);
    if (f.categories < 1 || f.occupancy_grid < 1 || f.query_grid < 1) throw Error("feature config: sizes must be positive");
    return f;
}

Features featurize(const Scene& scene, const Query& query, const FeatureConfig& cfg) {
    const int G = cfg.occupancy_grid, cells = G * G, C = cfg.categories;
    if (int(scene.category_names.size()) > C)
        throw Error("featurize: scene has " + std::to_string(scene.category_names.size()) +
                    " categories but features are configured for " + std::to_string(C));
    Features f(std::size_t(cfg.dim()), 0.0);
    const std::size_t occ0 = std::size_t(C), query0 = occ0 + std::size_t(C * cells);
    int target = query.target_category.value_or(-1);
    if (target >= C) throw Error("featurize: query category out of range");
    if (target >= 0) f[std::size_t(target)] = 1.0;

    std::vector<double> counts(std::size_t(C * cells), 0.0);
    double total = 0.0;
    for (const auto& inst : scene.instances) {
        for (std::int64_t p = 0; p < inst.mask.size(); ++p) {
            if (!inst.mask.test(p)) continue;
            int x = int(p % scene.width), y = int(p / scene.width);
            int cell = (y * G / scene.height) * G + (x * G / scene.width);
            counts[std::size_t(inst.category * cells + cell)] += 1.0;
            total += 1.0;
        }
    }
    if (total > 0)
        for (std::size_t i = 0; i < counts.size(); ++i) f[occ0 + i] = counts[i] / total;
    if (cfg.query_block && target >= 0) {
        // Fraction of each cell covered by the queried category, scaled so the
        // fullest cell reads 1.
        const int Q = cfg.query_grid;
        std::vector<double> covered(std::size_t(Q * Q), 0.0), area(std::size_t(Q * Q), 0.0);
        for (int y = 0; y < scene.height; ++y)
            for (int x = 0; x < scene.width; ++x) area[std::size_t((y * Q / scene.height) * Q + x * Q / scene.width)] += 1.0;
        for (const auto& inst : scene.instances) {
            if (inst.category != target) continue;
            for (std::int64_t p = 0; p < inst.mask.size(); ++p) {
                if (!inst.mask.test(p)) continue;
                int x = int(p % scene.width), y = int(p / scene.width);
                covered[std::size_t((y * Q / scene.height) * Q + x * Q / scene.width)] += 1.0;
            }
        }
        double peak = 0.0;
        for (int c = 0; c < Q * Q; ++c) {
            if (area[std::size_t(c)] > 0) covered[std::size_t(c)] /= area[std::size_t(c)];
            peak = std::max(peak, covered[std::size_t(c)]);
        }
        if (peak > 0)
            for (int c = 0; c < Q * Q; ++c) f[query0 + std::size_t(c)] = covered[std::size_t(c)] / peak;
    }
    f.back() = 1.0;
    return f;
}

PolicyParams::PolicyParams(int rows, int cols, double fill)
    : rows_(rows), cols_(cols), values_(std::size_t(rows) * std::size_t(cols), fill) {
    if (rows < 1 || cols < 1) throw Error("policy params: shape must be positive");
}

void PolicyParams::axpy(double scale, const PolicyParams& other) {
    if (other.rows_ != rows_ || other.cols_ != cols_) throw Error("policy params: shape mismatch");
    for (std::size_t i = 0; i < values_.size(); ++i) values_[i] += scale * other.values_[i];
}

void PolicyParams::add_outer(double scale, std::span<const double> coeffs, std::span<const double> features) {
    if (int(coeffs.size()) != rows_ || int(features.size()) != cols_) throw Error("policy params: outer shape mismatch");
    for (int r = 0; r < rows_; ++r) {
        double c = scale * coeffs[std::size_t(r)];
        if (c == 0.0) continue;
        double* row = &values_[std::size_t(r) * std::size_t(cols_)];
        for (int k = 0; k < cols_; ++k) row[k] += c * features[std::size_t(k)];
    }
}

double stop_bias_for(const ActionSpace& space, double stop_probability) {
    if (!(stop_probability > 0.0 && stop_probability < 1.0))
        throw Error("initial STOP probability must lie in (0, 1)");
    return std::log(stop_probability * double(space.num_actions()) / (1.0 - stop_probability));
}

PolicyParams init_params(const ActionSpace& space, const FeatureConfig& features, double scale, std::uint64_t seed,
                         std::optional<double> stop_probability) {
    space.validate();
    PolicyParams p(space.num_outputs(), features.dim());
    if (scale != 0.0) {
        Rng rng(seed);
        for (double& v : p.values()) v = rng.uniform(-scale, scale);
    }
    if (stop_probability) p.at(space.stop_action(), p.cols() - 1) += stop_bias_for(space, *stop_probability);
    return p;
}

std::vector<double> step_logits(const PolicyParams& params, std::span<const double> features) {
    if (int(features.size()) != params.cols())
        throw Error("feature length " + std::to_string(features.size()) + " does not match policy width " +
                    std::to_string(params.cols()));
    std::vector<double> z(std::size_t(params.rows()));
    auto v = params.values();
    for (int r = 0; r < params.rows(); ++r) {
        const double* row = &v[std::size_t(r) * std::size_t(params.cols())];
        double s = 0.0;
        for (int k = 0; k < params.cols(); ++k) s += row[k] * features[std::size_t(k)];
        z[std::size_t(r)] = s;
    }
    return z;
}

std::vector<double> log_softmax(std::span<const double> logits) {
    double m = *std::max_element(logits.begin(), logits.end());
    double s = 0.0;
    for (double z : logits) s += std::exp(z - m);
    double lse = m + std::log(s);
    std::vector<double> out(logits.size());
    for (std::size_t i = 0; i < logits.size(); ++i) out[i] = logits[i] - lse;
    return out;
}

std::vector<double> softmax(std::span<const double> logits) {
    auto out = log_softmax(logits);
    for (double& v : out) v = std::exp(v);
    return out;
}

void validate_actions(const ActionSpace& space, std::span<const int> actions) {
    int boxes = 0;
    for (std::size_t t = 0; t < actions.size(); ++t) {
        int a = actions[t];
        if (a < 0 || a > space.stop_action()) throw Error("invalid action id " + std::to_string(a));
        if (a == space.stop_action()) {
            if (t + 1 != actions.size()) throw Error("STOP must be the last action");
        } else if (++boxes > space.max_steps) {
            throw Error("action sequence exceeds max_steps");
        }
    }
}

PromptSet decode_actions(const ActionSpace& space, std::span<const int> actions, const PromptSchema& schema) {
    validate_actions(space, actions);
    PromptSet out;
    for (int a : actions)
        if (a != space.stop_action()) out.instances.push_back(space.decode(a, schema));
    return out;
}

namespace {

std::string rollout_think(const PromptSet& p) {
    if (p.empty()) return "no instance of the queried concept is visible";
    return "proposing " + std::to_string(p.instances.size()) + " instance prompt(s)";
}

double sum_logprob(std::span<const double> logp, std::span<const int> actions) {
    double s = 0.0;
    for (int a : actions) s += logp[std::size_t(a)];
    return s;
}

}  // namespace

Rollout make_rollout(const PolicyParams& params, const ActionSpace& space, std::span<const double> features,
                     std::vector<int> actions, const PromptSchema& schema) {
    Rollout r;
    r.prompts = decode_actions(space, actions, schema);
    r.text = serialize_prompt_set(r.prompts, rollout_think(r.prompts), schema);
    auto logp = log_softmax(step_logits(params, features));
    r.logprob = sum_logprob(logp, actions);
    r.actions = std::move(actions);
    return r;
}

std::vector<Rollout> sample_rollouts(const PolicyParams& params, const ActionSpace& space,
                                     std::span<const double> features, int group_size, const PromptSchema& schema,
                                     std::uint64_t seed) {
    if (group_size < 2) throw Error("group size must be at least 2");
    if (params.rows() != space.num_outputs()) throw Error("policy rows do not match the action space");
    auto logp = log_softmax(step_logits(params, features));
    std::vector<double> cdf(logp.size());
    double acc = 0.0;
    for (std::size_t i = 0; i < logp.size(); ++i) cdf[i] = (acc += std::exp(logp[i]));

    std::vector<Rollout> out;
    out.reserve(std::size_t(group_size));
    for (int g = 0; g < group_size; ++g) {
        Rng rng(derive_seed(seed, std::uint64_t(g)));
        std::vector<int> actions;
        for (int step = 0; step < space.max_steps; ++step) {
            double u = rng.uniform() * acc;
            auto it = std::upper_bound(cdf.begin(), cdf.end(), u);
            int a = int(std::min<std::ptrdiff_t>(it - cdf.begin(), std::ptrdiff_t(cdf.size()) - 1));
            actions.push_back(a);
            if (a == space.stop_action()) break;
        }
        Rollout r;
        r.prompts = decode_actions(space, actions, schema);
        r.text = serialize_prompt_set(r.prompts, rollout_think(r.prompts), schema);
        r.logprob = sum_logprob(logp, actions);
        r.actions = std::move(actions);
        out.push_back(std::move(r));
    }
    return out;
}

double logprob(const PolicyParams& params, const ActionSpace& space, std::span<const double> features,
               std::span<const int> actions) {
    validate_actions(space, actions);
    return sum_logprob(log_softmax(step_logits(params, features)), actions);
}

PolicyParams grad_logprob(const PolicyParams& params, const ActionSpace& space, std::span<const double> features,
                          std::span<const int> actions) {
    validate_actions(space, actions);
    auto p = softmax(step_logits(params, features));
    std::vector<double> coeff(p.size());
    const double steps = double(actions.size());
    for (std::size_t i = 0; i < p.size(); ++i) coeff[i] = -steps * p[i];
    for (int a : actions) coeff[std::size_t(a)] += 1.0;
    PolicyParams g(params.rows(), params.cols());
    g.add_outer(1.0, coeff, features);
    return g;
}

std::vector<int> greedy_actions(const PolicyParams& params, const ActionSpace& space, std::span<const double> features) {
    auto p = softmax(step_logits(params, features));
    const std::size_t stop = std::size_t(space.stop_action());
    std::vector<std::size_t> order(stop);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return p[a] > p[b]; });
    double unused = 0.0;
    for (std::size_t a = 0; a < stop; ++a) unused += p[a];
    std::vector<int> actions;
    for (int step = 0; step < space.max_steps; ++step) {
        if (p[stop] > unused) {
            actions.push_back(int(stop));
            break;
        }
        std::size_t a = order[std::size_t(step)];
        actions.push_back(int(a));
        unused -= p[a];
    }
    return actions;
}

namespace {

// Foreground (want = true) or background pixel of `m` closest to (tx, ty),
// skipping `exclude`; row-major tie-break.
std::optional<PointPx> nearest_pixel(const BinaryMask& m, bool want, double tx, double ty,
                                     std::span<const PointPx> exclude, Polarity pol) {
    std::optional<PointPx> best;
    double best_d = std::numeric_limits<double>::infinity();
    for (int y = 0; y < m.height(); ++y)
        for (int x = 0; x < m.width(); ++x) {
            if (m.at(x, y) != want) continue;
            bool skip = std::any_of(exclude.begin(), exclude.end(),
                                    [&](const PointPx& e) { return e.x == x && e.y == y; });
            if (skip) continue;
            double d = (x - tx) * (x - tx) + (y - ty) * (y - ty);
            if (d < best_d) {
                best_d = d;
                best = PointPx{x, y, pol};
            }
        }
    return best;
}

}  // namespace

PromptSet oracle_prompts(const Scene& scene, const Query& query, const PromptSchema& schema) {
    PromptSet out;
    if (query.kind == QueryKind::empty_target || !query.target_category) return out;
    const BinaryMask gt = scene.category_mask(*query.target_category);
    for (const auto& inst : scene.instances) {
        if (inst.category != *query.target_category) continue;
        BoxPoints bp = derive_box_points(inst.mask);
        InstancePrompt p;
        if (schema.has_box()) p.bbox = bp.box;
        if (schema.positive_points() >= 2) p.points = {bp.interior, bp.central};
        if (schema.positive_points() >= 4) {
            double cy = (bp.box.y1 + bp.box.y2) / 2.0;
            double qx = bp.box.width() / 4.0;
            for (double tx : {bp.box.x1 + qx, bp.box.x2 - qx}) {
                auto extra = nearest_pixel(inst.mask, true, tx, cy, p.points, Polarity::positive);
                p.points.push_back(extra.value_or(bp.interior));
            }
        }
        if (schema.negative_points() == 2) {
            for (auto [tx, ty] : {std::pair{bp.box.x1, bp.box.y1}, std::pair{bp.box.x2, bp.box.y2}}) {
                auto neg = nearest_pixel(gt, false, tx, ty, {}, Polarity::negative);
                if (!neg) throw Error("oracle: no background pixel available for a negative point");
                p.points.push_back(*neg);
            }
        }
        out.instances.push_back(std::move(p));
    }
    return out;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
    json j = {{"format", "promptseg-checkpoint/1"},
              {"shape", {ckpt.params.rows(), ckpt.params.cols()}},
              {"action_space", ckpt.space.to_json()},
              {"features", ckpt.features.to_json()},
              {"schema", to_string(ckpt.schema)},
              {"seed_lineage", ckpt.seed_lineage},
              {"config", ckpt.config},
              {"values", std::vector<double>(ckpt.params.values().begin(), ckpt.params.values().end())}};
    std::ofstream out(path);
    if (!out) throw IoError("cannot write checkpoint: " + path.string());
    out << j.dump() << "\n";
    if (!out) throw IoError("failed writing checkpoint: " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("checkpoint not found: " + path.string());
    json j = json::parse(in, nullptr, false);
    if (j.is_discarded()) throw IoError("malformed checkpoint JSON: " + path.string());
    try {
        Checkpoint c;
        auto shape = j.at("shape").get<std::vector<int>>();
        if (shape.size() != 2) throw IoError(path.string() + ": shape must have two entries");
        c.space = ActionSpace::from_json(j.at("action_space"));
        c.features = FeatureConfig::from_json(j.at("features"));
        c.schema = parse_prompt_mode(j.at("schema").get<std::string>());
        c.seed_lineage = j.value("seed_lineage", std::vector<std::uint64_t>{});
        c.config = j.value("config", json::object());
        auto values = j.at("values").get<std::vector<double>>();
        if (shape[0] != c.space.num_outputs() || shape[1] != c.features.dim() ||
            values.size() != std::size_t(shape[0]) * std::size_t(shape[1]))
            throw IoError(path.string() + ": parameter shape does not match its action space / feature config");
        c.params = PolicyParams(shape[0], shape[1]);
        std::copy(values.begin(), values.end(), c.params.values().begin());
        return c;
    } catch (const json::exception& e) {
        throw IoError(path.string() + ": " + e.what());
    } catch (const IoError&) {
        throw;
    } catch (const Error& e) {
        throw IoError(path.string() + ": " + e.what());
    }
}

}  // namespace promptseg
