#include "promptseg/image.hpp"

#include "promptseg/error.hpp"

#include <zlib.h>

#include <array>
#include <fstream>

namespace promptseg {

namespace {

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    out.push_back(std::uint8_t(v >> 24));
    out.push_back(std::uint8_t(v >> 16));
    out.push_back(std::uint8_t(v >> 8));
    out.push_back(std::uint8_t(v));
}

void put_chunk(std::vector<std::uint8_t>& out, const char* type, const std::vector<std::uint8_t>& data) {
    put_u32(out, std::uint32_t(data.size()));
    std::size_t start = out.size();
    out.insert(out.end(), type, type + 4);
    out.insert(out.end(), data.begin(), data.end());
    uLong crc = crc32(0L, out.data() + start, uInt(out.size() - start));
    put_u32(out, std::uint32_t(crc));
}

constexpr std::array<std::uint8_t, 8> kSignature = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};

}  // namespace

void write_png_rgb(const std::filesystem::path& path, int width, int height, std::span<const std::uint8_t> rgb) {
    if (rgb.size() != std::size_t(width) * std::size_t(height) * 3) throw Error("png: pixel buffer size mismatch");
    std::vector<std::uint8_t> raw;
    raw.reserve(std::size_t(height) * (std::size_t(width) * 3 + 1));
    for (int y = 0; y < height; ++y) {
        raw.push_back(0);
        auto row = rgb.subspan(std::size_t(y) * std::size_t(width) * 3, std::size_t(width) * 3);
        raw.insert(raw.end(), row.begin(), row.end());
    }
    uLongf zlen = compressBound(uLong(raw.size()));
    std::vector<std::uint8_t> z(zlen);
    if (compress2(z.data(), &zlen, raw.data(), uLong(raw.size()), 6) != Z_OK) throw Error("png: deflate failed");
    z.resize(zlen);

    std::vector<std::uint8_t> out(kSignature.begin(), kSignature.end());
    std::vector<std::uint8_t> ihdr;
    put_u32(ihdr, std::uint32_t(width));
    put_u32(ihdr, std::uint32_t(height));
    ihdr.insert(ihdr.end(), {8, 2, 0, 0, 0});  // depth 8, RGB, deflate, filter 0, no interlace
    put_chunk(out, "IHDR", ihdr);
    put_chunk(out, "IDAT", z);
    put_chunk(out, "IEND", {});

    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot write image: " + path.string());
    f.write(reinterpret_cast<const char*>(out.data()), std::streamsize(out.size()));
    if (!f) throw IoError("failed writing image: " + path.string());
}

Canvas read_png_size(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open image: " + path.string());
    std::array<std::uint8_t, 24> head{};
    f.read(reinterpret_cast<char*>(head.data()), head.size());
    if (f.gcount() != std::streamsize(head.size()) || !std::equal(kSignature.begin(), kSignature.end(), head.begin()) ||
        std::string(head.begin() + 12, head.begin() + 16) != "IHDR")
        throw IoError(path.string() + ": not a PNG file");
    auto u32 = [&](std::size_t o) {
        return int((std::uint32_t(head[o]) << 24) | (std::uint32_t(head[o + 1]) << 16) |
                   (std::uint32_t(head[o + 2]) << 8) | head[o + 3]);
    };
    return {u32(16), u32(20)};
}

std::vector<std::uint8_t> render_scene_rgb(const Scene& scene) {
    static constexpr std::array<std::array<std::uint8_t, 3>, 5> kPalette = {{
        {205, 205, 215},  // tank
        {230, 242, 250},  // greenhouse
        {58, 58, 62},     // runway
        {38, 82, 160},    // water
        {180, 62, 58},    // helipad
    }};
    std::vector<std::uint8_t> rgb(std::size_t(scene.width) * std::size_t(scene.height) * 3);
    for (std::size_t i = 0; i < rgb.size(); i += 3) {
        rgb[i] = 98;
        rgb[i + 1] = 112;
        rgb[i + 2] = 84;
    }
    for (const auto& inst : scene.instances) {
        std::array<std::uint8_t, 3> color;
        if (std::size_t(inst.category) < kPalette.size()) {
            color = kPalette[std::size_t(inst.category)];
        } else {
            std::uint32_t h = std::uint32_t(inst.category) * 2654435761u;
            color = {std::uint8_t(h >> 24), std::uint8_t(h >> 16), std::uint8_t(h >> 8)};
        }
        for (std::int64_t p = 0; p < inst.mask.size(); ++p) {
            if (!inst.mask.test(p)) continue;
            std::size_t o = std::size_t(p) * 3;
            rgb[o] = color[0];
            rgb[o + 1] = color[1];
            rgb[o + 2] = color[2];
        }
    }
    return rgb;
}

}  // namespace promptseg
