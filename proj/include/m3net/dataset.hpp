#pragma once

// Scene-level dataset: preprocessed sensor rasters plus vector labels, tiled
// into aligned per-sensor training samples with task-specific label grids.

#include "m3net/sar.hpp"
#include "m3net/synth.hpp"
#include "m3net/tiles.hpp"

namespace m3net {

struct SceneDataset {
    // preprocessed sensors; any subset may be present
    RasterBundle s1_pre, s1_post;  // three-band radar stacks
    RasterBundle s2_pre, s2_post;  // ten-band optical
    RasterBundle vhr;              // three-band post-event
    bool has_s1 = false, has_s2 = false, has_vhr = false;
    VectorLabels labels;

    double origin_x = 0.0, origin_y = 0.0;
    double extent_x = 0.0, extent_y = 0.0;

    // reads s1_pre_stack/, s1_post_stack/, s2_pre/, s2_post/, vhr/ bundles and
    // labels.geojson from a dataset directory
    static SceneDataset load(const std::filesystem::path& dir);

    // in-memory assembly: radar stacks built from the synthetic SLC series
    static SceneDataset from_synth(const SynthScene& scene, int64_t window);

    void require_sensors(const std::vector<std::string>& sensors) const;

    // full-scene rasterization of one label class
    LabelGrid label_grid(const std::string& cls, double gsd) const;
};

// Task name ("footprint" | "flood") to label class.
std::string task_class(const std::string& task);

// Builds aligned tile samples: per-sensor patches (pre/post early-fused along
// channels, pre first) and the task's label grid at the common resolution.
std::vector<TileSample> build_tiles(const SceneDataset& scene, const std::vector<TileSpec>& specs,
                                    double tile_m, const std::vector<std::string>& sensors,
                                    const std::string& task, double common_gsd);

std::vector<TileSample> filter_split(const std::vector<TileSample>& tiles, Split split);

}  // namespace m3net
