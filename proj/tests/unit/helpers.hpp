#pragma once

#include "promptseg/mask.hpp"
#include "promptseg/rng.hpp"

#include <unistd.h>

#include <filesystem>
#include <string>
#include <vector>

namespace testutil {

inline promptseg::BinaryMask random_mask(promptseg::Rng& rng, int w, int h, double density) {
    promptseg::BinaryMask m(w, h);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            if (rng.bernoulli(density)) m.set(x, y);
    return m;
}

inline promptseg::BinaryMask mask_from_rows(const std::vector<std::string>& rows) {
    promptseg::BinaryMask m(int(rows.front().size()), int(rows.size()));
    for (int y = 0; y < int(rows.size()); ++y)
        for (int x = 0; x < int(rows[std::size_t(y)].size()); ++x)
            if (rows[std::size_t(y)][std::size_t(x)] == '#') m.set(x, y);
    return m;
}

// Per-pixel reference counts.
struct PixelCounts {
    long inter = 0;
    long uni = 0;
};
inline PixelCounts brute_counts(const promptseg::BinaryMask& a, const promptseg::BinaryMask& b) {
    PixelCounts c;
    for (int y = 0; y < a.height(); ++y)
        for (int x = 0; x < a.width(); ++x) {
            bool p = a.at(x, y), q = b.at(x, y);
            c.inter += p && q;
            c.uni += p || q;
        }
    return c;
}

class TempDir {
public:
    explicit TempDir(const std::string& tag) {
        static int counter = 0;
        path_ = std::filesystem::temp_directory_path() /
                ("promptseg-test-" + tag + "-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
        std::filesystem::remove_all(path_);
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    const std::filesystem::path& path() const { return path_; }

private:
    std::filesystem::path path_;
};

}  // namespace testutil
