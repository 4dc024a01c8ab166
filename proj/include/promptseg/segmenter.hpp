#pragma once

#include "promptseg/mask.hpp"
#include "promptseg/protocol.hpp"
#include "promptseg/scene.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace promptseg {

/// What a backend executes against: the labeled scene (synthetic backends)
/// and/or the image on disk (out-of-process backends).
struct SegmentationTarget {
    const Scene& scene;
    std::filesystem::path image_path;

    Canvas canvas() const { return scene.canvas(); }
};

/// Promptable executor contract. Implementations are deterministic for
/// identical inputs and never mutate the target.
class SegmenterBackend {
public:
    virtual ~SegmenterBackend() = default;

    virtual BinaryMask execute(const SegmentationTarget& target, const InstancePrompt& prompt,
                               const PromptSchema& schema) const = 0;

    /// Union of execute() over every instance; all-background for an empty set.
    virtual BinaryMask execute_prompt_set(const SegmentationTarget& target, const PromptSet& prompts,
                                          const PromptSchema& schema) const;

    virtual std::string name() const = 0;
};

/// Version of the synthetic selection rules; reports cite it.
inline constexpr std::string_view kSyntheticRulesVersion = "synthetic-rules-v1";

struct SyntheticSegmenterParams {
    double inside_threshold = 0.5;  // min fraction of an instance inside the box
    double strong_threshold = 0.9;  // reserved for bbox_only tuning; unused by v1 rules

    void validate() const;
};

/// Selects whole scene instances:
///  1. candidates: instances with |mask ∩ box| / |mask| >= inside_threshold
///     (every instance when the schema has no box);
///  2. candidates containing a negative point are dropped;
///  3. candidates containing a positive point are returned (union);
///  4. otherwise, with a box, the single candidate maximizing
///     (inside fraction, area, -id);
///  5. otherwise nothing.
class SyntheticSegmenter final : public SegmenterBackend {
public:
    explicit SyntheticSegmenter(SyntheticSegmenterParams params = {});

    /// Instance ids chosen by the rules, ascending.
    std::vector<int> select(const Scene& scene, const InstancePrompt& prompt, const PromptSchema& schema) const;

    BinaryMask execute(const SegmentationTarget& target, const InstancePrompt& prompt,
                       const PromptSchema& schema) const override;
    std::string name() const override { return std::string(kSyntheticRulesVersion); }

    const SyntheticSegmenterParams& params() const { return params_; }

private:
    SyntheticSegmenterParams params_;
};

/// Fills every box; without a box, marks each positive point's pixel.
/// Mirrors the stub bridge so in-process and bridged evaluation can be
/// compared.
class FillBoxSegmenter final : public SegmenterBackend {
public:
    BinaryMask execute(const SegmentationTarget& target, const InstancePrompt& prompt,
                       const PromptSchema& schema) const override;
    std::string name() const override { return "fill-box"; }
};

/// DBSCAN over foreground pixels with a Chebyshev neighborhood of radius
/// `eps`; a pixel is core when its neighborhood (itself included) holds at
/// least `min_pts` foreground pixels. Noise is dropped. Clusters are sorted
/// by descending area, then by first pixel in row-major order.
std::vector<BinaryMask> decompose_mask(const BinaryMask& m, int eps = 3, int min_pts = 5);

struct BoxPoints {
    BBox box;
    PointPx interior;   // Chebyshev distance-transform peak
    PointPx central;    // foreground pixel nearest the centroid
};

/// Chebyshev distance of each pixel to the nearest background pixel, where
/// everything outside the canvas counts as background. Background pixels
/// get 0. Row-major.
std::vector<int> chebyshev_distance_transform(const BinaryMask& m);

/// Tight box plus two interior points (distinct whenever the instance has at
/// least two pixels). Ties resolve to the first pixel in row-major order.
/// Throws Error on an empty mask.
BoxPoints derive_box_points(const BinaryMask& instance);

}  // namespace promptseg
