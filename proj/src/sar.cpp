#include "m3net/sar.hpp"

#include <cstring>

namespace m3net {

namespace {

void check_window(int64_t window) {
    if (window < 1 || window % 2 == 0)
        throw ValidationError("boxcar window must be odd and >= 1, got " + std::to_string(window));
}

void check_coregistered(const RasterMeta& a, const RasterMeta& b, const char* what) {
    if (!a.same_geometry(b))
        throw ValidationError(std::string(what) + ": rasters are not co-registered (" +
                              std::to_string(a.width) + "x" + std::to_string(a.height) + " @" +
                              std::to_string(a.pixel_size) + "m vs " + std::to_string(b.width) + "x" +
                              std::to_string(b.height) + " @" + std::to_string(b.pixel_size) + "m)");
}

// symmetric reflection: ..., 1, 0 | 0, 1, ..., n-1 | n-1, n-2, ...
int64_t reflect(int64_t i, int64_t n) {
    while (i < 0 || i >= n) {
        if (i < 0) i = -i - 1;
        if (i >= n) i = 2 * n - i - 1;
    }
    return i;
}

RasterMeta single_band_meta(const RasterMeta& src, Dtype dtype) {
    RasterMeta m = src;
    m.bands = 1;
    m.dtype = dtype;
    m.band_names.clear();
    return m;
}

}  // namespace

ComplexRaster ComplexRaster::create(RasterMeta meta) {
    meta.bands = 1;
    meta.dtype = Dtype::c64;
    meta.validate();
    ComplexRaster r;
    r.samples.assign(static_cast<size_t>(meta.pixels()), {0.0f, 0.0f});
    r.meta = std::move(meta);
    return r;
}

FloatRaster FloatRaster::create(RasterMeta meta) {
    meta.bands = 1;
    meta.dtype = Dtype::f32;
    meta.validate();
    FloatRaster r;
    r.v.assign(static_cast<size_t>(meta.pixels()), 0.0f);
    r.meta = std::move(meta);
    return r;
}

ComplexRaster complex_from_bundle(const RasterBundle& b) {
    if (b.meta.dtype != Dtype::c64 || b.meta.bands != 1)
        throw ValidationError("expected a single-band c64 raster, got " + std::to_string(b.meta.bands) +
                              " bands of " + dtype_name(b.meta.dtype));
    ComplexRaster r = ComplexRaster::create(b.meta);
    std::memcpy(r.samples.data(), b.data.data(), b.data.size());
    return r;
}

RasterBundle bundle_from_complex(const ComplexRaster& r) {
    RasterBundle b = RasterBundle::create(single_band_meta(r.meta, Dtype::c64));
    std::memcpy(b.data.data(), r.samples.data(), b.data.size());
    return b;
}

RasterBundle bundle_from_float(const FloatRaster& r, const std::string& band_name) {
    RasterMeta m = single_band_meta(r.meta, Dtype::f32);
    m.band_names = {band_name};
    RasterBundle b = RasterBundle::create(m);
    std::memcpy(b.data.data(), r.v.data(), b.data.size());
    return b;
}

FloatRaster intensity(const ComplexRaster& z) {
    FloatRaster out = FloatRaster::create(single_band_meta(z.meta, Dtype::f32));
    for (size_t i = 0; i < z.samples.size(); ++i) {
        double re = z.samples[i].real(), im = z.samples[i].imag();
        out.v[i] = static_cast<float>(re * re + im * im);
    }
    return out;
}

std::vector<double> multilook_values(const FloatRaster& raster, int64_t window) {
    check_window(window);
    int64_t h = raster.meta.height, w = raster.meta.width, r = window / 2;
    std::vector<double> out(raster.v.size());
    const double count = static_cast<double>(window) * static_cast<double>(window);
    for (int64_t y = 0; y < h; ++y)
        for (int64_t x = 0; x < w; ++x) {
            double acc = 0.0;
            for (int64_t dy = -r; dy <= r; ++dy)
                for (int64_t dx = -r; dx <= r; ++dx)
                    acc += raster.v[reflect(y + dy, h) * w + reflect(x + dx, w)];
            out[y * w + x] = acc / count;
        }
    return out;
}

FloatRaster multilook(const FloatRaster& raster, int64_t window) {
    check_window(window);
    if (window == 1) return raster;
    FloatRaster out = FloatRaster::create(raster.meta);
    std::vector<double> vals = multilook_values(raster, window);
    for (size_t i = 0; i < vals.size(); ++i) out.v[i] = static_cast<float>(vals[i]);
    return out;
}

std::vector<double> temporal_multilook_values(const std::vector<FloatRaster>& intensities) {
    if (intensities.empty()) throw ValidationError("temporal_multilook: empty acquisition list");
    for (size_t i = 1; i < intensities.size(); ++i)
        check_coregistered(intensities[0].meta, intensities[i].meta, "temporal_multilook");
    std::vector<double> out(intensities[0].v.size());
    const double count = static_cast<double>(intensities.size());
    for (size_t px = 0; px < out.size(); ++px) {
        double acc = 0.0;
        for (const FloatRaster& r : intensities) acc += r.v[px];
        out[px] = acc / count;
    }
    return out;
}

FloatRaster temporal_multilook(const std::vector<FloatRaster>& intensities) {
    std::vector<double> vals = temporal_multilook_values(intensities);
    FloatRaster out = FloatRaster::create(intensities[0].meta);
    for (size_t i = 0; i < vals.size(); ++i) out.v[i] = static_cast<float>(vals[i]);
    return out;
}

std::vector<double> coherence_values(const ComplexRaster& z1, const ComplexRaster& z2, int64_t window) {
    check_window(window);
    check_coregistered(z1.meta, z2.meta, "coherence");
    int64_t h = z1.meta.height, w = z1.meta.width, r = window / 2;
    std::vector<double> out(z1.samples.size());
    for (int64_t y = 0; y < h; ++y)
        for (int64_t x = 0; x < w; ++x) {
            double cr = 0.0, ci = 0.0, p1 = 0.0, p2 = 0.0;
            for (int64_t dy = -r; dy <= r; ++dy)
                for (int64_t dx = -r; dx <= r; ++dx) {
                    int64_t idx = reflect(y + dy, h) * w + reflect(x + dx, w);
                    double a_re = z1.samples[idx].real(), a_im = z1.samples[idx].imag();
                    double b_re = z2.samples[idx].real(), b_im = z2.samples[idx].imag();
                    // a * conj(b)
                    cr += a_re * b_re + a_im * b_im;
                    ci += a_im * b_re - a_re * b_im;
                    p1 += a_re * a_re + a_im * a_im;
                    p2 += b_re * b_re + b_im * b_im;
                }
            double denom = std::sqrt(p1 * p2);
            out[y * w + x] = denom > 0.0 ? std::min(std::sqrt(cr * cr + ci * ci) / denom, 1.0) : 0.0;
        }
    return out;
}

FloatRaster coherence(const ComplexRaster& z1, const ComplexRaster& z2, int64_t window) {
    std::vector<double> vals = coherence_values(z1, z2, window);
    FloatRaster out = FloatRaster::create(single_band_meta(z1.meta, Dtype::f32));
    for (size_t i = 0; i < vals.size(); ++i) out.v[i] = static_cast<float>(vals[i]);
    return out;
}

RasterBundle RadarStack::to_bundle() const {
    RasterMeta m = intensity.meta;
    m.bands = 3;
    m.dtype = Dtype::f32;
    m.band_names = {"intensity", "intensity_multitemporal", "coherence"};
    RasterBundle b = RasterBundle::create(m);
    size_t plane = static_cast<size_t>(m.pixels());
    std::memcpy(b.f32(), intensity.v.data(), plane * 4);
    std::memcpy(b.f32() + plane, multitemporal.v.data(), plane * 4);
    std::memcpy(b.f32() + 2 * plane, coherence.v.data(), plane * 4);
    return b;
}

RadarStack RadarStack::from_bundle(const RasterBundle& b) {
    if (b.meta.bands != 3 || b.meta.dtype != Dtype::f32)
        throw ValidationError("radar stack bundle must have 3 f32 bands, got " + std::to_string(b.meta.bands) +
                              " of " + dtype_name(b.meta.dtype));
    RadarStack s;
    RasterMeta m = b.meta;
    m.bands = 1;
    m.band_names.clear();
    size_t plane = static_cast<size_t>(m.pixels());
    s.intensity = FloatRaster::create(m);
    s.multitemporal = FloatRaster::create(m);
    s.coherence = FloatRaster::create(m);
    std::memcpy(s.intensity.v.data(), b.f32(), plane * 4);
    std::memcpy(s.multitemporal.v.data(), b.f32() + plane, plane * 4);
    std::memcpy(s.coherence.v.data(), b.f32() + 2 * plane, plane * 4);
    return s;
}

std::pair<RadarStack, RadarStack> build_radar_stack(const ComplexRaster& pre_a, const ComplexRaster& pre_b,
                                                    const ComplexRaster& post,
                                                    const std::vector<ComplexRaster>& history,
                                                    int64_t window) {
    check_window(window);
    check_coregistered(pre_a.meta, pre_b.meta, "build_radar_stack");
    check_coregistered(pre_a.meta, post.meta, "build_radar_stack");
    if (history.empty()) throw ValidationError("build_radar_stack: empty history");
    for (const auto& h : history) check_coregistered(pre_a.meta, h.meta, "build_radar_stack");

    std::vector<FloatRaster> looked;
    looked.reserve(history.size());
    for (const auto& h : history) looked.push_back(multilook(intensity(h), window));
    FloatRaster temporal = temporal_multilook(looked);

    RadarStack pre;
    pre.intensity = multilook(intensity(pre_b), window);
    pre.multitemporal = temporal;
    pre.coherence = coherence(pre_a, pre_b, window);

    RadarStack post_stack;
    post_stack.intensity = multilook(intensity(post), window);
    post_stack.multitemporal = temporal;
    post_stack.coherence = coherence(pre_b, post, window);
    return {pre, post_stack};
}

}  // namespace m3net
