#pragma once

#include "promptseg/mask.hpp"
#include "promptseg/scene.hpp"

#include <cstdint>
#include <filesystem>
#include <span>

namespace promptseg {

/// 8-bit RGB PNG, no interlace, filter 0 on every row.
void write_png_rgb(const std::filesystem::path& path, int width, int height,
                   std::span<const std::uint8_t> rgb);

/// Width and height from the IHDR chunk; throws IoError if not a PNG.
Canvas read_png_size(const std::filesystem::path& path);

/// Flat-colored rendering of a scene, one color per category.
std::vector<std::uint8_t> render_scene_rgb(const Scene& scene);

}  // namespace promptseg
