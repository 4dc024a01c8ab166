#include "promptseg/segmenter.hpp"

#include "promptseg/error.hpp"

#include <algorithm>
#include <array>
#include <optional>
#include <deque>
#include <limits>

namespace promptseg {

BinaryMask SegmenterBackend::execute_prompt_set(const SegmentationTarget& target, const PromptSet& prompts,
                                                const PromptSchema& schema) const {
    BinaryMask out(target.canvas());
    for (const auto& p : prompts.instances) out |= execute(target, p, schema);
    return out;
}

void SyntheticSegmenterParams::validate() const {
    if (!(inside_threshold > 0.0 && inside_threshold <= 1.0))
        throw Error("synthetic segmenter: inside threshold must lie in (0, 1]");
    if (!(strong_threshold > 0.0 && strong_threshold <= 1.0))
        throw Error("synthetic segmenter: strong threshold must lie in (0, 1]");
}

SyntheticSegmenter::SyntheticSegmenter(SyntheticSegmenterParams params) : params_(params) { params_.validate(); }

std::vector<int> SyntheticSegmenter::select(const Scene& scene, const InstancePrompt& prompt,
                                            const PromptSchema& schema) const {
    struct Candidate {
        int id;
        std::int64_t inside;
        std::int64_t area;
    };
    const bool use_box = schema.has_box() && prompt.bbox.has_value();
    std::vector<Candidate> candidates;
    for (const auto& inst : scene.instances) {
        std::int64_t area = inst.mask.count();
        if (area == 0) continue;
        std::int64_t inside = use_box ? inst.mask.count_in_box(*prompt.bbox) : area;
        if (use_box && double(inside) < params_.inside_threshold * double(area)) continue;
        bool vetoed = std::any_of(prompt.points.begin(), prompt.points.end(), [&](const PointPx& p) {
            return p.polarity == Polarity::negative && scene.canvas().contains(p.x, p.y) && inst.mask.at(p.x, p.y);
        });
        if (!vetoed) candidates.push_back({inst.id, inside, area});
    }

    std::vector<int> hits;
    for (const auto& c : candidates) {
        const auto& mask = scene.instances[std::size_t(c.id)].mask;
        bool hit = std::any_of(prompt.points.begin(), prompt.points.end(), [&](const PointPx& p) {
            return p.polarity == Polarity::positive && scene.canvas().contains(p.x, p.y) && mask.at(p.x, p.y);
        });
        if (hit) hits.push_back(c.id);
    }
    if (!hits.empty() || !use_box || candidates.empty()) return hits;

    // Lexicographic max of (inside fraction, area, -id); fractions compared exactly.
    const Candidate* best = &candidates.front();
    for (const auto& c : candidates) {
        __int128 lhs = __int128(c.inside) * best->area, rhs = __int128(best->inside) * c.area;
        if (lhs > rhs || (lhs == rhs && (c.area > best->area || (c.area == best->area && c.id < best->id))))
            best = &c;
    }
    return {best->id};
}

BinaryMask SyntheticSegmenter::execute(const SegmentationTarget& target, const InstancePrompt& prompt,
                                       const PromptSchema& schema) const {
    BinaryMask out(target.canvas());
    for (int id : select(target.scene, prompt, schema)) out |= target.scene.instances[std::size_t(id)].mask;
    return out;
}

BinaryMask FillBoxSegmenter::execute(const SegmentationTarget& target, const InstancePrompt& prompt,
                                     const PromptSchema&) const {
    BinaryMask out(target.canvas());
    if (prompt.bbox) {
        out.fill_box(*prompt.bbox);
    } else {
        for (const auto& p : prompt.points)
            if (p.polarity == Polarity::positive && out.canvas().contains(p.x, p.y)) out.set(p.x, p.y);
    }
    return out;
}

std::vector<BinaryMask> decompose_mask(const BinaryMask& m, int eps, int min_pts) {
    if (eps < 1 || min_pts < 1) throw Error("decompose_mask: eps and min_pts must be at least 1");
    const int W = m.width(), H = m.height();
    auto idx = [W](int x, int y) { return std::size_t(y) * std::size_t(W) + std::size_t(x); };

    // Summed-area table for neighborhood counts.
    std::vector<std::int64_t> sat(std::size_t(W + 1) * std::size_t(H + 1), 0);
    auto sidx = [W](int x, int y) { return std::size_t(y) * std::size_t(W + 1) + std::size_t(x); };
    for (int y = 0; y < H; ++y) {
        std::int64_t row = 0;
        for (int x = 0; x < W; ++x) {
            row += m.at(x, y) ? 1 : 0;
            sat[sidx(x + 1, y + 1)] = sat[sidx(x + 1, y)] + row;
        }
    }
    auto window = [&](int x, int y) {
        int x1 = std::max(0, x - eps), y1 = std::max(0, y - eps);
        int x2 = std::min(W - 1, x + eps), y2 = std::min(H - 1, y + eps);
        return std::array<int, 4>{x1, y1, x2, y2};
    };
    std::vector<std::uint8_t> core(std::size_t(W) * std::size_t(H), 0);
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
            if (!m.at(x, y)) continue;
            auto [x1, y1, x2, y2] = window(x, y);
            std::int64_t n = sat[sidx(x2 + 1, y2 + 1)] - sat[sidx(x1, y2 + 1)] - sat[sidx(x2 + 1, y1)] + sat[sidx(x1, y1)];
            core[idx(x, y)] = n >= min_pts ? 1 : 0;
        }

    std::vector<int> label(std::size_t(W) * std::size_t(H), -1);
    int clusters = 0;
    std::deque<std::pair<int, int>> queue;
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
            if (!core[idx(x, y)] || label[idx(x, y)] >= 0) continue;
            int c = clusters++;
            label[idx(x, y)] = c;
            queue.emplace_back(x, y);
            while (!queue.empty()) {
                auto [qx, qy] = queue.front();
                queue.pop_front();
                auto [x1, y1, x2, y2] = window(qx, qy);
                for (int ny = y1; ny <= y2; ++ny)
                    for (int nx = x1; nx <= x2; ++nx) {
                        if (!m.at(nx, ny) || label[idx(nx, ny)] >= 0) continue;
                        label[idx(nx, ny)] = c;
                        if (core[idx(nx, ny)]) queue.emplace_back(nx, ny);
                    }
            }
        }

    std::vector<BinaryMask> out(std::size_t(clusters), BinaryMask(W, H));
    std::vector<std::int64_t> first(std::size_t(clusters), -1);
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
            int c = label[idx(x, y)];
            if (c < 0) continue;
            out[std::size_t(c)].set(x, y);
            if (first[std::size_t(c)] < 0) first[std::size_t(c)] = std::int64_t(idx(x, y));
        }
    std::vector<std::size_t> order(out.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::vector<std::int64_t> area(out.size());
    for (std::size_t i = 0; i < out.size(); ++i) area[i] = out[i].count();
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        if (area[a] != area[b]) return area[a] > area[b];
        return first[a] < first[b];
    });
    std::vector<BinaryMask> sorted;
    sorted.reserve(out.size());
    for (auto i : order) sorted.push_back(std::move(out[i]));
    return sorted;
}

std::vector<int> chebyshev_distance_transform(const BinaryMask& m) {
    const int W = m.width(), H = m.height();
    constexpr int kInf = std::numeric_limits<int>::max() / 2;
    std::vector<int> d(std::size_t(W) * std::size_t(H));
    auto at = [&](int x, int y) -> int {
        if (x < 0 || y < 0 || x >= W || y >= H) return 0;
        return d[std::size_t(y) * std::size_t(W) + std::size_t(x)];
    };
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) d[std::size_t(y) * std::size_t(W) + std::size_t(x)] = m.at(x, y) ? kInf : 0;
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
            int& v = d[std::size_t(y) * std::size_t(W) + std::size_t(x)];
            if (v == 0) continue;
            v = std::min({v, at(x - 1, y) + 1, at(x - 1, y - 1) + 1, at(x, y - 1) + 1, at(x + 1, y - 1) + 1});
        }
    for (int y = H - 1; y >= 0; --y)
        for (int x = W - 1; x >= 0; --x) {
            int& v = d[std::size_t(y) * std::size_t(W) + std::size_t(x)];
            if (v == 0) continue;
            v = std::min({v, at(x + 1, y) + 1, at(x + 1, y + 1) + 1, at(x, y + 1) + 1, at(x - 1, y + 1) + 1});
        }
    return d;
}

BoxPoints derive_box_points(const BinaryMask& instance) {
    auto bounds = instance.bounds();
    if (!bounds) throw Error("derive_box_points: instance mask is empty");
    const int W = instance.width(), H = instance.height();
    auto dt = chebyshev_distance_transform(instance);

    std::int64_t n = 0, sx = 0, sy = 0;
    int best_dt = -1;
    PointPx interior;
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
            if (!instance.at(x, y)) continue;
            ++n;
            sx += x;
            sy += y;
            int v = dt[std::size_t(y) * std::size_t(W) + std::size_t(x)];
            if (v > best_dt) {
                best_dt = v;
                interior = {x, y, Polarity::positive};
            }
        }

    // Squared distance to the centroid scaled by n^2 keeps the comparison exact.
    auto dist = [&](int x, int y) {
        std::int64_t dx = n * x - sx, dy = n * y - sy;
        return dx * dx + dy * dy;
    };
    std::optional<PointPx> central;
    std::int64_t best = 0;
    for (int y = bounds->y1; y <= bounds->y2; ++y)
        for (int x = bounds->x1; x <= bounds->x2; ++x) {
            if (!instance.at(x, y)) continue;
            if (n >= 2 && x == interior.x && y == interior.y) continue;
            std::int64_t v = dist(x, y);
            if (!central || v < best) {
                best = v;
                central = PointPx{x, y, Polarity::positive};
            }
        }
    return {*bounds, interior, *central};
}

}  // namespace promptseg
