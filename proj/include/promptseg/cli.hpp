#pragma once

#include "promptseg/segmenter.hpp"

#include <iosfwd>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

namespace promptseg {

/// Exit codes: 0 success, 1 domain failure (e.g. `eval --assert` miss),
/// 2 usage or I/O error.
inline constexpr int kExitOk = 0;
inline constexpr int kExitDomain = 1;
inline constexpr int kExitUsage = 2;

/// `synthetic`, `fill-box`, or `bridge:<command line>`.
std::unique_ptr<SegmenterBackend> make_segmenter(std::string_view spec);

/// args excludes the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace promptseg
