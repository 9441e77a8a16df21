#pragma once

// Georeferenced raster container: a directory with meta.json and data.bin
// (band-major, row-major, little-endian). North-up grids; origin is the map
// coordinate of the top-left corner, y decreases with row index.

#include <complex>
#include <filesystem>

#include "m3net/common.hpp"

namespace m3net {

enum class Dtype { f32, c64, u8 };

inline size_t dtype_size(Dtype d) {
    switch (d) {
        case Dtype::f32: return 4;
        case Dtype::c64: return 8;
        case Dtype::u8: return 1;
    }
    return 0;
}

std::string dtype_name(Dtype d);
Dtype dtype_from_name(const std::string& s);

struct RasterMeta {
    int64_t width = 0;
    int64_t height = 0;
    int64_t bands = 1;
    Dtype dtype = Dtype::f32;
    double origin_x = 0.0;
    double origin_y = 0.0;
    double pixel_size = 1.0;
    std::string crs = "local";
    std::vector<std::string> band_names;

    int64_t pixels() const { return width * height; }
    bool same_geometry(const RasterMeta& o, double eps = 1e-6) const {
        return width == o.width && height == o.height && std::abs(pixel_size - o.pixel_size) < eps &&
               std::abs(origin_x - o.origin_x) < eps && std::abs(origin_y - o.origin_y) < eps;
    }
    void validate() const;
};

struct RasterBundle {
    RasterMeta meta;
    std::vector<std::byte> data;

    float* f32() { return reinterpret_cast<float*>(data.data()); }
    const float* f32() const { return reinterpret_cast<const float*>(data.data()); }
    std::complex<float>* c64() { return reinterpret_cast<std::complex<float>*>(data.data()); }
    const std::complex<float>* c64() const { return reinterpret_cast<const std::complex<float>*>(data.data()); }
    uint8_t* u8() { return reinterpret_cast<uint8_t*>(data.data()); }
    const uint8_t* u8() const { return reinterpret_cast<const uint8_t*>(data.data()); }

    static RasterBundle create(RasterMeta meta);
};

void write_bundle(const std::filesystem::path& dir, const RasterBundle& bundle);
RasterBundle read_bundle(const std::filesystem::path& dir);

}  // namespace m3net
