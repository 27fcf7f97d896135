#pragma once

// Minimal RGB8 PNG writer (zlib-backed) for classification maps.

#include <array>
#include <cstdint>
#include <string>
#include <vector>

namespace specfuse {

// rgb is row-major [height*width*3].
void write_png(const std::string& path, int width, int height,
               const std::vector<uint8_t>& rgb);

// Colorizes a label map (0 = unlabeled, black) with the given palette.
std::vector<uint8_t> colorize_labels(const std::vector<int32_t>& labels,
                                     const std::vector<std::array<uint8_t, 3>>& palette);

}  // namespace specfuse
