#pragma once

// Vector labels (polygon footprints with class tags), GeoJSON-subset I/O, and
// rasterization to pixel grids by the pixel-center even-odd rule.

#include <array>
#include <filesystem>

#include "m3net/raster.hpp"

namespace m3net {

inline constexpr const char* kClassBuilding = "building";
inline constexpr const char* kClassFloodedBuilding = "flooded_building";

using Ring = std::vector<std::array<double, 2>>;  // closed: first vertex == last

struct LabeledPolygon {
    std::vector<Ring> rings;  // exterior first, then holes
    std::string cls;
};

struct VectorLabels {
    std::vector<LabeledPolygon> polygons;
};

// Pixel grid geometry. Pixel (row r, col c) has its center at
// (origin_x + (c+0.5)*pixel_size, origin_y - (r+0.5)*pixel_size).
struct GridSpec {
    int64_t width = 0;
    int64_t height = 0;
    double origin_x = 0.0;
    double origin_y = 0.0;
    double pixel_size = 1.0;
};

struct LabelGrid {
    GridSpec spec;
    std::vector<uint8_t> v;  // 0/1, row-major
};

void validate_labels(const VectorLabels& labels);

VectorLabels load_geojson(const std::filesystem::path& path);
void save_geojson(const std::filesystem::path& path, const VectorLabels& labels);

// pixel = 1 iff the pixel center lies inside any polygon of `cls`
// (even-odd rule over all rings, so holes are respected)
LabelGrid rasterize(const VectorLabels& labels, const GridSpec& grid, const std::string& cls);

}  // namespace m3net
