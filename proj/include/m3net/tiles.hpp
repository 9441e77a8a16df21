#pragma once

// Tile extraction over aligned sensor rasters, dihedral augmentation, and the
// train/val/test partition protocol.

#include <map>
#include <optional>

#include "m3net/labels.hpp"
#include "m3net/raster.hpp"

namespace m3net {

enum class Split { train, val, test };

std::string split_name(Split s);
Split split_from_name(const std::string& s);

struct TileSpec {
    int64_t id = 0;
    double x = 0.0;  // map coordinates of the tile's top-left corner
    double y = 0.0;
    Split split = Split::train;
};

// Anchor grid: origin + k*stride wherever the tile fits entirely, row-major.
// Returns the (x offsets, y offsets) relative to the extent origin.
std::vector<double> anchor_offsets(double extent, double tile, double stride);

// Full anchor list over a raster extent; empty (with warning=true) if the tile
// does not fit.
std::vector<TileSpec> extract_tile_specs(double origin_x, double origin_y, double extent_x, double extent_y,
                                         double tile_m, double stride_m, bool* warned_empty = nullptr);

// Per-sensor tile content, channel-major (CHW), pixel counts footprint/gsd.
struct SensorPatch {
    int64_t channels = 0;
    int64_t px = 0;  // pixels per side
    double gsd = 0.0;
    std::vector<float> chw;
};

struct TileSample {
    int64_t id = 0;
    double x = 0.0;
    double y = 0.0;
    Split split = Split::train;
    std::map<std::string, SensorPatch> sensors;
    LabelGrid label;
};

// Crops one tile from a bundle; u8 data is scaled to [0,1]. The tile footprint
// must align to the pixel grid.
SensorPatch crop_patch(const RasterBundle& bundle, double x, double y, double tile_m);

// Crops a label grid tile.
LabelGrid crop_label(const LabelGrid& full, double x, double y, double tile_m);

// The 8 symmetries of a square tile, indexed 0..7:
// 0 identity, 1 rot90cw, 2 rot180, 3 rot270cw, 4 flip-horizontal,
// 5 flip-vertical, 6 transpose, 7 anti-transpose.
inline constexpr int kDihedralOps = 8;

void apply_dihedral_chw(int op, int64_t channels, int64_t n, std::vector<float>& chw);
void apply_dihedral_grid(int op, int64_t n, std::vector<uint8_t>& grid);

// Applies one op to every sensor tensor and the label grid; tiles must be square.
TileSample augment(const TileSample& sample, int op);

struct PartitionSpec {
    char axis = 'x';       // 'x' or 'y'
    double value = 0.0;    // boundary coordinate in map units
    bool test_low = true;  // test region is the low-coordinate side
};

// Tags tiles: footprint intersecting the test region -> test (straddlers
// conservatively included); the rest is randomly split train:val = 4:1 under
// the seed. Returns a warning string when a side is empty.
std::optional<std::string> split_partitions(std::vector<TileSpec>& tiles, double tile_m,
                                            const PartitionSpec& boundary, Rng rng);

}  // namespace m3net
