#pragma once

// PNG encode/decode (libpng) plus raster-to-image conversion for map exports.

#include <filesystem>
#include <optional>

#include "m3net/raster.hpp"

namespace m3net {

struct ImageU8 {
    int64_t width = 0;
    int64_t height = 0;
    int64_t channels = 0;  // 1 (gray), 3 (rgb), or 4 (rgba)
    std::vector<uint8_t> pixels;  // row-major, interleaved
};

void write_png(const std::filesystem::path& path, const ImageU8& img);
ImageU8 read_png(const std::filesystem::path& path);

struct ScaleRange {
    double lo = 0.0;
    double hi = 1.0;
};

// Converts a 1- or 3-band raster to an 8-bit image, min-max scaled unless a
// fixed range is given. Returns the range actually applied (for the sidecar).
ImageU8 raster_to_image(const RasterBundle& bundle, std::optional<ScaleRange> fixed_range,
                        ScaleRange* applied = nullptr);

}  // namespace m3net
