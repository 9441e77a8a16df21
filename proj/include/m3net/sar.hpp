#pragma once

// Single-look-complex radar preprocessing: intensity, spatial and temporal
// multi-looking, interferometric coherence, and the three-band radar stacks
// fed to the network.

#include "m3net/raster.hpp"

namespace m3net {

struct ComplexRaster {
    RasterMeta meta;  // bands=1, dtype c64
    std::vector<std::complex<float>> samples;

    static ComplexRaster create(RasterMeta meta);
};

struct FloatRaster {
    RasterMeta meta;  // bands=1, dtype f32
    std::vector<float> v;

    static FloatRaster create(RasterMeta meta);
};

ComplexRaster complex_from_bundle(const RasterBundle& b);
RasterBundle bundle_from_complex(const ComplexRaster& r);
RasterBundle bundle_from_float(const FloatRaster& r, const std::string& band_name = "band");

// Per-pixel I = Re(z)^2 + Im(z)^2 (linear power).
FloatRaster intensity(const ComplexRaster& z);

// Boxcar mean with symmetric reflective borders; window must be odd, 1 = identity.
FloatRaster multilook(const FloatRaster& raster, int64_t window);

// Per-pixel arithmetic mean across co-registered acquisitions.
FloatRaster temporal_multilook(const std::vector<FloatRaster>& intensities);

// Coherence magnitude |E[z1 conj(z2)]| / sqrt(E[|z1|^2] E[|z2|^2]) with boxcar
// expectations over `window`; pixels with a zero denominator map to 0.
FloatRaster coherence(const ComplexRaster& z1, const ComplexRaster& z2, int64_t window);

// Double-precision compute cores behind the f32 rasters above; these carry the
// full accuracy before storage rounding.
std::vector<double> multilook_values(const FloatRaster& raster, int64_t window);
std::vector<double> temporal_multilook_values(const std::vector<FloatRaster>& intensities);
std::vector<double> coherence_values(const ComplexRaster& z1, const ComplexRaster& z2, int64_t window);

// Three co-registered single-band rasters sharing one geometry.
struct RadarStack {
    FloatRaster intensity;       // linear power, multi-looked
    FloatRaster multitemporal;   // temporal mean of multi-looked intensities
    FloatRaster coherence;       // |gamma| in [0,1]

    RasterBundle to_bundle() const;
    static RadarStack from_bundle(const RasterBundle& b);
};

// Builds the pre/post-event stacks. The pre stack pairs the no-change
// coherence of (pre_a, pre_b) with the intensity of pre_b (the earlier of the
// two event-straddling acquisitions); the post stack pairs the change
// coherence of (pre_b, post) with the intensity of post. Both share the
// multitemporal band: the temporal mean of the multi-looked intensities of
// `history`.
std::pair<RadarStack, RadarStack> build_radar_stack(const ComplexRaster& pre_a, const ComplexRaster& pre_b,
                                                    const ComplexRaster& post,
                                                    const std::vector<ComplexRaster>& history,
                                                    int64_t window);

}  // namespace m3net
