#include "m3net/tiles.hpp"

#include <algorithm>
#include <cmath>

namespace m3net {

std::string split_name(Split s) {
    switch (s) {
        case Split::train: return "train";
        case Split::val: return "val";
        case Split::test: return "test";
    }
    return "?";
}

Split split_from_name(const std::string& s) {
    if (s == "train") return Split::train;
    if (s == "val") return Split::val;
    if (s == "test") return Split::test;
    throw ValidationError("unknown split '" + s + "'");
}

std::vector<double> anchor_offsets(double extent, double tile, double stride) {
    if (!(tile > 0) || !(stride > 0)) throw ValidationError("tile size and stride must be positive");
    std::vector<double> offsets;
    // anchors at k*stride for all k where the tile fits entirely
    for (int64_t k = 0;; ++k) {
        double off = static_cast<double>(k) * stride;
        if (off + tile > extent + 1e-6) break;
        offsets.push_back(off);
    }
    return offsets;
}

std::vector<TileSpec> extract_tile_specs(double origin_x, double origin_y, double extent_x, double extent_y,
                                         double tile_m, double stride_m, bool* warned_empty) {
    std::vector<double> xs = anchor_offsets(extent_x, tile_m, stride_m);
    std::vector<double> ys = anchor_offsets(extent_y, tile_m, stride_m);
    if (warned_empty) *warned_empty = xs.empty() || ys.empty();
    std::vector<TileSpec> tiles;
    tiles.reserve(xs.size() * ys.size());
    int64_t id = 0;
    for (double dy : ys)
        for (double dx : xs) {
            TileSpec t;
            t.id = id++;
            t.x = origin_x + dx;
            t.y = origin_y - dy;  // map y decreases with row
            tiles.push_back(t);
        }
    return tiles;
}

namespace {

int64_t aligned_index(double offset, double gsd, const char* what) {
    double idx = offset / gsd;
    double rounded = std::round(idx);
    if (std::abs(idx - rounded) > 1e-6)
        throw ValidationError(std::string(what) + ": tile footprint is not aligned to the pixel grid (offset " +
                              std::to_string(offset) + " m at " + std::to_string(gsd) + " m/px)");
    return static_cast<int64_t>(rounded);
}

}  // namespace

SensorPatch crop_patch(const RasterBundle& bundle, double x, double y, double tile_m) {
    const RasterMeta& m = bundle.meta;
    int64_t col0 = aligned_index(x - m.origin_x, m.pixel_size, "crop_patch");
    int64_t row0 = aligned_index(m.origin_y - y, m.pixel_size, "crop_patch");
    int64_t px = aligned_index(tile_m, m.pixel_size, "crop_patch");
    if (col0 < 0 || row0 < 0 || col0 + px > m.width || row0 + px > m.height)
        throw ValidationError("crop_patch: tile outside raster extent");
    SensorPatch patch;
    patch.channels = m.bands;
    patch.px = px;
    patch.gsd = m.pixel_size;
    patch.chw.resize(static_cast<size_t>(m.bands * px * px));
    for (int64_t b = 0; b < m.bands; ++b) {
        for (int64_t r = 0; r < px; ++r) {
            int64_t src = (b * m.height + row0 + r) * m.width + col0;
            float* dst = patch.chw.data() + (b * px + r) * px;
            switch (m.dtype) {
                case Dtype::f32: {
                    const float* sp = bundle.f32() + src;
                    std::copy(sp, sp + px, dst);
                    break;
                }
                case Dtype::u8: {
                    const uint8_t* sp = bundle.u8() + src;
                    for (int64_t c = 0; c < px; ++c) dst[c] = static_cast<float>(sp[c]) / 255.0f;
                    break;
                }
                case Dtype::c64:
                    throw ValidationError("crop_patch: complex rasters must be preprocessed before tiling");
            }
        }
    }
    return patch;
}

LabelGrid crop_label(const LabelGrid& full, double x, double y, double tile_m) {
    const GridSpec& g = full.spec;
    int64_t col0 = aligned_index(x - g.origin_x, g.pixel_size, "crop_label");
    int64_t row0 = aligned_index(g.origin_y - y, g.pixel_size, "crop_label");
    int64_t px = aligned_index(tile_m, g.pixel_size, "crop_label");
    if (col0 < 0 || row0 < 0 || col0 + px > g.width || row0 + px > g.height)
        throw ValidationError("crop_label: tile outside grid extent");
    LabelGrid out;
    out.spec = {px, px, x, y, g.pixel_size};
    out.v.resize(static_cast<size_t>(px * px));
    for (int64_t r = 0; r < px; ++r)
        std::copy(full.v.begin() + (row0 + r) * g.width + col0,
                  full.v.begin() + (row0 + r) * g.width + col0 + px, out.v.begin() + r * px);
    return out;
}

namespace {

// source index for output position (r, c) under op
inline std::pair<int64_t, int64_t> dihedral_src(int op, int64_t n, int64_t r, int64_t c) {
    switch (op) {
        case 0: return {r, c};
        case 1: return {n - 1 - c, r};          // rot90 cw
        case 2: return {n - 1 - r, n - 1 - c};  // rot180
        case 3: return {c, n - 1 - r};          // rot270 cw
        case 4: return {r, n - 1 - c};          // flip horizontal
        case 5: return {n - 1 - r, c};          // flip vertical
        case 6: return {c, r};                  // transpose
        case 7: return {n - 1 - c, n - 1 - r};  // anti-transpose
        default: throw ValidationError("dihedral op must be in [0,8), got " + std::to_string(op));
    }
}

}  // namespace

void apply_dihedral_chw(int op, int64_t channels, int64_t n, std::vector<float>& chw) {
    if (op == 0) return;
    std::vector<float> src = chw;
    for (int64_t ch = 0; ch < channels; ++ch) {
        const float* in = src.data() + ch * n * n;
        float* out = chw.data() + ch * n * n;
        for (int64_t r = 0; r < n; ++r)
            for (int64_t c = 0; c < n; ++c) {
                auto [sr, sc] = dihedral_src(op, n, r, c);
                out[r * n + c] = in[sr * n + sc];
            }
    }
}

void apply_dihedral_grid(int op, int64_t n, std::vector<uint8_t>& grid) {
    if (op == 0) return;
    std::vector<uint8_t> src = grid;
    for (int64_t r = 0; r < n; ++r)
        for (int64_t c = 0; c < n; ++c) {
            auto [sr, sc] = dihedral_src(op, n, r, c);
            grid[r * n + c] = src[sr * n + sc];
        }
}

TileSample augment(const TileSample& sample, int op) {
    if (op < 0 || op >= kDihedralOps)
        throw ValidationError("dihedral op must be in [0,8), got " + std::to_string(op));
    TileSample out = sample;
    for (auto& [name, patch] : out.sensors) {
        if (patch.px * patch.px * patch.channels != static_cast<int64_t>(patch.chw.size()) ||
            patch.px <= 0)
            throw ValidationError("augment: sensor '" + name + "' tile is not square");
        apply_dihedral_chw(op, patch.channels, patch.px, patch.chw);
    }
    if (!out.label.v.empty()) {
        if (out.label.spec.width != out.label.spec.height)
            throw ValidationError("augment: label grid is not square");
        apply_dihedral_grid(op, out.label.spec.width, out.label.v);
    }
    return out;
}

std::optional<std::string> split_partitions(std::vector<TileSpec>& tiles, double tile_m,
                                            const PartitionSpec& boundary, Rng rng) {
    std::vector<size_t> rest;
    size_t test_count = 0;
    for (size_t i = 0; i < tiles.size(); ++i) {
        double lo, hi;
        if (boundary.axis == 'x') {
            lo = tiles[i].x;
            hi = tiles[i].x + tile_m;
        } else if (boundary.axis == 'y') {
            hi = tiles[i].y;
            lo = tiles[i].y - tile_m;
        } else {
            throw ValidationError("partition axis must be 'x' or 'y'");
        }
        // interior overlap with the test half-plane; straddlers go to test
        bool in_test = boundary.test_low ? (lo < boundary.value - 1e-9) : (hi > boundary.value + 1e-9);
        if (in_test) {
            tiles[i].split = Split::test;
            ++test_count;
        } else {
            rest.push_back(i);
        }
    }
    // deterministic shuffle, then 4:1
    for (size_t i = rest.size(); i > 1; --i) {
        size_t j = static_cast<size_t>(rng.uniform_int(0, static_cast<int64_t>(i) - 1));
        std::swap(rest[i - 1], rest[j]);
    }
    size_t train_count = (rest.size() * 4 + 4) / 5;  // round(0.8 n)
    for (size_t k = 0; k < rest.size(); ++k)
        tiles[rest[k]].split = k < train_count ? Split::train : Split::val;

    if (test_count == 0) return "partition boundary leaves no test tiles";
    if (rest.empty()) return "partition boundary leaves no train/val tiles";
    return std::nullopt;
}

}  // namespace m3net
