#pragma once

// Synthetic multi-sensor scene generator. Produces a consistent scene where
// each modality carries distinct information: VHR shows crisp building shapes
// but no flood cue, Sentinel-2 shows coarse buildings (and, when enabled, a
// post-event band darkening over the flood region), and the Sentinel-1 SLC
// series loses inter-pair correlation at flooded pixels so the flood cue lives
// in the post-event coherence.

#include <map>

#include "m3net/labels.hpp"
#include "m3net/raster.hpp"

namespace m3net {

struct SynthConfig {
    uint64_t seed = 0;

    double scene_w = 1600.0;  // meters
    double scene_h = 960.0;
    double origin_x = 0.0;
    double origin_y = 0.0;

    double s1_gsd = 5.0;
    double s2_gsd = 10.0;
    double vhr_gsd = 2.0;  // 0.5 for the full-resolution geometry

    int building_count = 60;
    double building_min = 20.0;  // meters per side
    double building_max = 60.0;
    double flood_fraction = 0.4;  // fraction of the scene height covered by the flood band

    int slc_count = 4;  // acquisitions t0..t{n-1}; the last is post-event

    // radar correlation structure
    double coherence_base = 0.92;           // intact scene between acquisitions
    double coherence_flood_ground = 0.15;   // inundated ground
    double coherence_flooded_building = 0.05;

    // backscatter power
    double sigma_ground = 0.3;
    double sigma_building = 1.2;
    double sigma_flooded_ground = 0.08;
    double sigma_flooded_building = 1.5;

    // optical cues and noise
    double s2_noise = 0.02;
    double s2_building_albedo = 0.15;
    double s2_flood_darkening = 0.35;  // 0 disables the optical flood cue
    double vhr_noise = 0.03;
};

struct SynthScene {
    // keys: s1_slc_t0..t{n-1} (c64), s2_pre, s2_post (f32), vhr (u8)
    std::map<std::string, RasterBundle> rasters;
    VectorLabels labels;  // flooded buildings appear under both classes
};

SynthScene synth_scene(const SynthConfig& config);

}  // namespace m3net
