#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

namespace promptseg {

struct Canvas {
    int width = 0;
    int height = 0;

    bool contains(int x, int y) const { return x >= 0 && y >= 0 && x < width && y < height; }
    std::int64_t area() const { return std::int64_t(width) * height; }
    friend bool operator==(const Canvas&, const Canvas&) = default;
};

// Inclusive pixel corners, origin top-left, x = column.
struct BBox {
    int x1 = 0;
    int y1 = 0;
    int x2 = 0;
    int y2 = 0;

    int width() const { return x2 - x1 + 1; }
    int height() const { return y2 - y1 + 1; }
    std::int64_t area() const { return std::int64_t(width()) * height(); }
    bool contains(int x, int y) const { return x >= x1 && x <= x2 && y >= y1 && y <= y2; }
    bool well_formed() const { return x1 <= x2 && y1 <= y2; }
    bool inside(const Canvas& c) const {
        return well_formed() && x1 >= 0 && y1 >= 0 && x2 < c.width && y2 < c.height;
    }
    friend bool operator==(const BBox&, const BBox&) = default;
};

enum class Polarity : std::uint8_t { positive, negative };

struct PointPx {
    int x = 0;
    int y = 0;
    Polarity polarity = Polarity::positive;

    friend bool operator==(const PointPx&, const PointPx&) = default;
};

/// Row-major H x W foreground map. Bits are packed 64 per word in linear
/// index order (index = y * width + x); padding bits of the last word are
/// always zero so word-wise counts are exact.
class BinaryMask {
public:
    BinaryMask(int width, int height);
    explicit BinaryMask(const Canvas& canvas) : BinaryMask(canvas.width, canvas.height) {}

    /// Builds a mask from one byte per pixel (nonzero = foreground).
    static BinaryMask from_bytes(int width, int height, std::span<const std::uint8_t> pixels);

    int width() const { return width_; }
    int height() const { return height_; }
    Canvas canvas() const { return {width_, height_}; }
    std::int64_t size() const { return std::int64_t(width_) * height_; }

    bool at(int x, int y) const { return test(std::int64_t(y) * width_ + x); }
    bool test(std::int64_t index) const {
        return (words_[std::size_t(index >> 6)] >> (index & 63)) & 1u;
    }
    void set(int x, int y, bool value = true);
    void fill_box(const BBox& box);

    std::int64_t count() const;
    bool empty() const;
    /// Number of foreground pixels inside the inclusive box (clipped to canvas).
    std::int64_t count_in_box(const BBox& box) const;
    /// Tight box of the foreground; nullopt for an empty mask.
    std::optional<BBox> bounds() const;

    BinaryMask& operator|=(const BinaryMask& other);
    std::span<const std::uint64_t> words() const { return words_; }
    std::vector<std::uint8_t> to_bytes() const;

    friend bool operator==(const BinaryMask&, const BinaryMask&) = default;

private:
    int width_;
    int height_;
    std::vector<std::uint64_t> words_;
};

std::int64_t intersection_count(const BinaryMask& a, const BinaryMask& b);
std::int64_t union_count(const BinaryMask& a, const BinaryMask& b);

/// |a ∩ b| / |a ∪ b|; two empty masks score 1.0. Throws on size mismatch.
double iou(const BinaryMask& a, const BinaryMask& b);

/// Pixelwise OR. An empty list needs `canvas` and yields an all-background mask.
BinaryMask mask_union(std::span<const BinaryMask> masks, std::optional<Canvas> canvas = std::nullopt);

/// Uncompressed run-length counts, row-major, alternating background and
/// foreground, background first (possibly a zero-length leading run).
struct RleMask {
    int width = 0;
    int height = 0;
    std::vector<std::int64_t> counts;

    friend bool operator==(const RleMask&, const RleMask&) = default;
};

RleMask rle_encode(const BinaryMask& m);
BinaryMask rle_decode(const RleMask& r);

/// Binary PGM (P5). Foreground is written as 255; on read any value >= 128
/// (after scaling to 8 bits) is foreground.
BinaryMask read_pgm(const std::filesystem::path& path);
void write_pgm(const BinaryMask& m, const std::filesystem::path& path);

}  // namespace promptseg
