#include "promptseg/mask.hpp"

#include "promptseg/error.hpp"

#include <algorithm>
#include <bit>
#include <cctype>
#include <fstream>
#include <sstream>
#include <string>

namespace promptseg {

namespace {

std::size_t word_count(int width, int height) {
    return std::size_t((std::int64_t(width) * height + 63) / 64);
}

void require_same_size(const BinaryMask& a, const BinaryMask& b, const char* what) {
    if (a.width() != b.width() || a.height() != b.height()) {
        std::ostringstream os;
        os << what << ": mask size mismatch " << a.width() << "x" << a.height() << " vs "
           << b.width() << "x" << b.height();
        throw Error(os.str());
    }
}

// Popcount of linear bit range [begin, end).
std::int64_t count_range(std::span<const std::uint64_t> words, std::int64_t begin, std::int64_t end) {
    if (begin >= end) return 0;
    std::int64_t first = begin >> 6;
    std::int64_t last = (end - 1) >> 6;
    std::uint64_t head = ~std::uint64_t{0} << (begin & 63);
    std::uint64_t tail = ~std::uint64_t{0} >> (63 - ((end - 1) & 63));
    if (first == last) return std::popcount(words[first] & head & tail);
    std::int64_t n = std::popcount(words[first] & head);
    for (std::int64_t w = first + 1; w < last; ++w) n += std::popcount(words[w]);
    return n + std::popcount(words[last] & tail);
}

}  // namespace

BinaryMask::BinaryMask(int width, int height) : width_(width), height_(height) {
    if (width < 1 || height < 1) {
        throw Error("mask dimensions must be positive, got " + std::to_string(width) + "x" +
                    std::to_string(height));
    }
    words_.assign(word_count(width, height), 0);
}

BinaryMask BinaryMask::from_bytes(int width, int height, std::span<const std::uint8_t> pixels) {
    BinaryMask m(width, height);
    if (std::int64_t(pixels.size()) != m.size()) {
        throw Error("pixel buffer length " + std::to_string(pixels.size()) + " does not match " +
                    std::to_string(width) + "x" + std::to_string(height));
    }
    for (std::int64_t i = 0; i < m.size(); ++i) {
        if (pixels[std::size_t(i)]) m.words_[std::size_t(i >> 6)] |= std::uint64_t{1} << (i & 63);
    }
    return m;
}

void BinaryMask::set(int x, int y, bool value) {
    std::int64_t i = std::int64_t(y) * width_ + x;
    std::uint64_t bit = std::uint64_t{1} << (i & 63);
    if (value)
        words_[std::size_t(i >> 6)] |= bit;
    else
        words_[std::size_t(i >> 6)] &= ~bit;
}

void BinaryMask::fill_box(const BBox& box) {
    int x1 = std::max(box.x1, 0), x2 = std::min(box.x2, width_ - 1);
    int y1 = std::max(box.y1, 0), y2 = std::min(box.y2, height_ - 1);
    for (int y = y1; y <= y2; ++y)
        for (int x = x1; x <= x2; ++x) set(x, y);
}

std::int64_t BinaryMask::count() const {
    std::int64_t n = 0;
    for (auto w : words_) n += std::popcount(w);
    return n;
}

bool BinaryMask::empty() const {
    return std::all_of(words_.begin(), words_.end(), [](std::uint64_t w) { return w == 0; });
}

std::int64_t BinaryMask::count_in_box(const BBox& box) const {
    int x1 = std::max(box.x1, 0), x2 = std::min(box.x2, width_ - 1);
    int y1 = std::max(box.y1, 0), y2 = std::min(box.y2, height_ - 1);
    if (x1 > x2 || y1 > y2) return 0;
    std::int64_t n = 0;
    for (int y = y1; y <= y2; ++y) {
        std::int64_t row = std::int64_t(y) * width_;
        n += count_range(words_, row + x1, row + x2 + 1);
    }
    return n;
}

std::optional<BBox> BinaryMask::bounds() const {
    std::optional<BBox> box;
    for (std::size_t w = 0; w < words_.size(); ++w) {
        std::uint64_t bits = words_[w];
        while (bits) {
            std::int64_t i = std::int64_t(w) * 64 + std::countr_zero(bits);
            bits &= bits - 1;
            int x = int(i % width_), y = int(i / width_);
            if (!box) {
                box = BBox{x, y, x, y};
            } else {
                box->x1 = std::min(box->x1, x);
                box->x2 = std::max(box->x2, x);
                box->y2 = std::max(box->y2, y);
            }
        }
    }
    return box;
}

BinaryMask& BinaryMask::operator|=(const BinaryMask& other) {
    require_same_size(*this, other, "union");
    for (std::size_t i = 0; i < words_.size(); ++i) words_[i] |= other.words_[i];
    return *this;
}

std::vector<std::uint8_t> BinaryMask::to_bytes() const {
    std::vector<std::uint8_t> out(static_cast<std::size_t>(size()));
    for (std::int64_t i = 0; i < size(); ++i) out[std::size_t(i)] = test(i) ? 1 : 0;
    return out;
}

std::int64_t intersection_count(const BinaryMask& a, const BinaryMask& b) {
    require_same_size(a, b, "intersection");
    auto wa = a.words(), wb = b.words();
    std::int64_t n = 0;
    for (std::size_t i = 0; i < wa.size(); ++i) n += std::popcount(wa[i] & wb[i]);
    return n;
}

std::int64_t union_count(const BinaryMask& a, const BinaryMask& b) {
    require_same_size(a, b, "union");
    auto wa = a.words(), wb = b.words();
    std::int64_t n = 0;
    for (std::size_t i = 0; i < wa.size(); ++i) n += std::popcount(wa[i] | wb[i]);
    return n;
}

double iou(const BinaryMask& a, const BinaryMask& b) {
    std::int64_t u = union_count(a, b);
    if (u == 0) return 1.0;
    return double(intersection_count(a, b)) / double(u);
}

BinaryMask mask_union(std::span<const BinaryMask> masks, std::optional<Canvas> canvas) {
    if (masks.empty()) {
        if (!canvas) throw Error("union of an empty mask list needs a canvas size");
        return BinaryMask(*canvas);
    }
    BinaryMask out = masks.front();
    if (canvas && out.canvas() != *canvas) throw Error("union: mask size does not match canvas");
    for (std::size_t i = 1; i < masks.size(); ++i) out |= masks[i];
    return out;
}

RleMask rle_encode(const BinaryMask& m) {
    RleMask r{m.width(), m.height(), {}};
    bool current = false;
    std::int64_t run = 0;
    for (std::int64_t i = 0; i < m.size(); ++i) {
        bool v = m.test(i);
        if (v != current) {
            r.counts.push_back(run);
            run = 0;
            current = v;
        }
        ++run;
    }
    r.counts.push_back(run);
    return r;
}

BinaryMask rle_decode(const RleMask& r) {
    if (r.width < 1 || r.height < 1) throw Error("rle: dimensions must be positive");
    std::int64_t total = 0;
    for (std::size_t i = 0; i < r.counts.size(); ++i) {
        if (r.counts[i] < 0) throw Error("rle: negative run length at index " + std::to_string(i));
        if (r.counts[i] == 0 && i != 0) throw Error("rle: empty run at index " + std::to_string(i));
        total += r.counts[i];
    }
    std::int64_t expected = std::int64_t(r.width) * r.height;
    if (total != expected) {
        throw Error("rle: counts sum to " + std::to_string(total) + ", expected " +
                    std::to_string(expected));
    }
    BinaryMask m(r.width, r.height);
    std::int64_t pos = 0;
    for (std::size_t i = 0; i < r.counts.size(); ++i) {
        if (i % 2 == 1) {
            for (std::int64_t k = pos; k < pos + r.counts[i]; ++k)
                m.set(int(k % r.width), int(k / r.width));
        }
        pos += r.counts[i];
    }
    return m;
}

namespace {

// Reads one header token, skipping whitespace and '#' comments.
std::string pgm_token(std::istream& in) {
    std::string tok;
    int c;
    while ((c = in.get()) != EOF) {
        if (c == '#') {
            while ((c = in.get()) != EOF && c != '\n') {
            }
            continue;
        }
        if (std::isspace(c)) {
            if (!tok.empty()) break;
            continue;
        }
        tok.push_back(char(c));
    }
    return tok;
}

}  // namespace

BinaryMask read_pgm(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open mask file: " + path.string());
    auto fail = [&](const std::string& why) { return IoError(path.string() + ": " + why); };
    if (pgm_token(in) != "P5") throw fail("not a binary PGM (expected P5 magic)");
    int w = 0, h = 0, maxval = 0;
    try {
        w = std::stoi(pgm_token(in));
        h = std::stoi(pgm_token(in));
        maxval = std::stoi(pgm_token(in));
    } catch (const std::exception&) {
        throw fail("malformed PGM header");
    }
    if (w < 1 || h < 1 || maxval < 1 || maxval > 65535) throw fail("invalid PGM header values");
    std::size_t bytes_per = maxval > 255 ? 2 : 1;
    std::vector<unsigned char> raw(std::size_t(w) * std::size_t(h) * bytes_per);
    in.read(reinterpret_cast<char*>(raw.data()), std::streamsize(raw.size()));
    if (std::size_t(in.gcount()) != raw.size()) throw fail("truncated PGM pixel data");
    std::vector<std::uint8_t> px(std::size_t(w) * std::size_t(h));
    for (std::size_t i = 0; i < px.size(); ++i) {
        unsigned v = bytes_per == 1 ? raw[i] : (unsigned(raw[2 * i]) << 8) | raw[2 * i + 1];
        unsigned scaled = maxval == 255 ? v : unsigned((std::uint64_t(v) * 255) / unsigned(maxval));
        px[i] = scaled >= 128 ? 1 : 0;
    }
    return BinaryMask::from_bytes(w, h, px);
}

void write_pgm(const BinaryMask& m, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write mask file: " + path.string());
    out << "P5\n" << m.width() << " " << m.height() << "\n255\n";
    std::vector<char> px(std::size_t(m.size()));
    for (std::int64_t i = 0; i < m.size(); ++i) px[std::size_t(i)] = m.test(i) ? char(255) : char(0);
    out.write(px.data(), std::streamsize(px.size()));
    if (!out) throw IoError("failed writing mask file: " + path.string());
}

}  // namespace promptseg
