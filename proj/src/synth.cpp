#include "m3net/synth.hpp"

#include <algorithm>

namespace m3net {

namespace {

struct Rect {
    double x0, y0, x1, y1;  // map coords, y0 < y1
    bool flooded = false;
    double albedo = 1.0;

    bool contains(double x, double y) const { return x >= x0 && x < x1 && y >= y0 && y < y1; }
    bool overlaps(const Rect& o) const { return x0 < o.x1 && o.x0 < x1 && y0 < o.y1 && o.y0 < y1; }
};

RasterMeta grid_meta(const SynthConfig& c, double gsd, Dtype dtype, int64_t bands) {
    RasterMeta m;
    m.width = static_cast<int64_t>(std::llround(c.scene_w / gsd));
    m.height = static_cast<int64_t>(std::llround(c.scene_h / gsd));
    m.bands = bands;
    m.dtype = dtype;
    m.origin_x = c.origin_x;
    m.origin_y = c.origin_y;
    m.pixel_size = gsd;
    m.crs = "local";
    return m;
}

// smooth low-frequency texture from a coarse random lattice, bilinear sampled
struct TextureField {
    int64_t nx, ny;
    double cell;
    std::vector<double> values;

    TextureField(const SynthConfig& c, Rng& rng, double cell_m) : cell(cell_m) {
        nx = static_cast<int64_t>(c.scene_w / cell) + 2;
        ny = static_cast<int64_t>(c.scene_h / cell) + 2;
        values.resize(static_cast<size_t>(nx * ny));
        for (auto& v : values) v = rng.normal();
    }

    double at(double x, double y) const {
        double fx = x / cell, fy = y / cell;
        int64_t ix = std::clamp<int64_t>(static_cast<int64_t>(fx), 0, nx - 2);
        int64_t iy = std::clamp<int64_t>(static_cast<int64_t>(fy), 0, ny - 2);
        double tx = fx - ix, ty = fy - iy;
        double v00 = values[iy * nx + ix], v01 = values[iy * nx + ix + 1];
        double v10 = values[(iy + 1) * nx + ix], v11 = values[(iy + 1) * nx + ix + 1];
        return (1 - ty) * ((1 - tx) * v00 + tx * v01) + ty * ((1 - tx) * v10 + tx * v11);
    }
};

}  // namespace

SynthScene synth_scene(const SynthConfig& c) {
    if (c.flood_fraction < 0.0 || c.flood_fraction > 1.0)
        throw ValidationError("flood fraction must be in [0,1], got " + std::to_string(c.flood_fraction));
    if (c.building_max > std::min(c.scene_w, c.scene_h))
        throw ValidationError("building size " + std::to_string(c.building_max) +
                              " m exceeds scene extent; degenerate config");
    if (c.building_min > c.building_max || c.building_min <= 0)
        throw ValidationError("bad building size range");
    if (c.slc_count < 3) throw ValidationError("slc_count must be >= 3 (two pre-event plus one post-event)");

    Rng root(c.seed);
    Rng rng_buildings = root.stream("buildings");
    Rng rng_flood = root.stream("flood");
    Rng rng_speckle = root.stream("speckle");
    Rng rng_s2 = root.stream("s2");
    Rng rng_vhr = root.stream("vhr");

    // The scene occupies map x in [origin_x, origin_x + scene_w] and map y in
    // [origin_y - scene_h, origin_y] (north-up, origin at the top-left).
    // flood band: horizontal stripe spanning the full width so every map-x
    // column (and therefore every spatial partition) contains flooded area
    double flood_h = c.flood_fraction * c.scene_h;
    double flood_d0 = (c.scene_h - flood_h) * rng_flood.uniform();  // depth below origin_y
    double flood_d1 = flood_d0 + flood_h;
    auto in_flood = [&](double /*x*/, double y) {
        double d = c.origin_y - y;
        return c.flood_fraction > 0.0 && d >= flood_d0 && d < flood_d1;
    };

    // buildings: non-overlapping axis-aligned rectangles
    std::vector<Rect> buildings;
    int attempts = 0;
    while (static_cast<int>(buildings.size()) < c.building_count && attempts < c.building_count * 50) {
        ++attempts;
        double w = rng_buildings.uniform(c.building_min, c.building_max);
        double h = rng_buildings.uniform(c.building_min, c.building_max);
        double depth = rng_buildings.uniform(0.0, c.scene_h - h);
        Rect r;
        r.x0 = c.origin_x + rng_buildings.uniform(0.0, c.scene_w - w);
        r.x1 = r.x0 + w;
        r.y1 = c.origin_y - depth;       // top edge
        r.y0 = r.y1 - h;                 // bottom edge
        r.albedo = rng_buildings.uniform(0.6, 1.0);
        bool clash = false;
        for (const Rect& o : buildings)
            if (r.overlaps(o)) {
                clash = true;
                break;
            }
        if (clash) continue;
        double cx = (r.x0 + r.x1) / 2, cy = (r.y0 + r.y1) / 2;
        r.flooded = in_flood(cx, cy);
        buildings.push_back(r);
    }

    auto building_at = [&](double x, double y) -> const Rect* {
        for (const Rect& b : buildings)
            if (b.contains(x, y)) return &b;
        return nullptr;
    };

    SynthScene scene;

    // labels: every building under "building"; flooded ones additionally under
    // "flooded_building" (the footprint task sees all buildings)
    for (const Rect& b : buildings) {
        Ring ring = {{b.x0, b.y0}, {b.x1, b.y0}, {b.x1, b.y1}, {b.x0, b.y1}, {b.x0, b.y0}};
        scene.labels.polygons.push_back({{ring}, kClassBuilding});
        if (b.flooded) scene.labels.polygons.push_back({{ring}, kClassFloodedBuilding});
    }

    // ---- Sentinel-1 SLC series -------------------------------------------------
    // z_t = sqrt(sigma_t) * (sqrt(rho_t) g + sqrt(1-rho_t) n_t) with a shared
    // reflectivity g; the post-event acquisition decorrelates flooded pixels.
    {
        RasterMeta m = grid_meta(c, c.s1_gsd, Dtype::c64, 1);
        int64_t w = m.width, h = m.height;
        std::vector<std::complex<double>> g(static_cast<size_t>(w * h));
        for (auto& v : g) v = {rng_speckle.normal() * M_SQRT1_2, rng_speckle.normal() * M_SQRT1_2};

        for (int t = 0; t < c.slc_count; ++t) {
            bool post = (t == c.slc_count - 1);
            RasterBundle b = RasterBundle::create(m);
            std::complex<float>* z = b.c64();
            for (int64_t r = 0; r < h; ++r)
                for (int64_t col = 0; col < w; ++col) {
                    double x = c.origin_x + (col + 0.5) * c.s1_gsd;
                    double y = c.origin_y - (r + 0.5) * c.s1_gsd;
                    const Rect* bld = building_at(x, y);
                    bool flooded_px = bld ? bld->flooded : in_flood(x, y);
                    double sigma, rho;
                    if (post && flooded_px) {
                        sigma = bld ? c.sigma_flooded_building : c.sigma_flooded_ground;
                        rho = bld ? c.coherence_flooded_building : c.coherence_flood_ground;
                    } else {
                        sigma = bld ? c.sigma_building : c.sigma_ground;
                        rho = c.coherence_base;
                    }
                    std::complex<double> n{rng_speckle.normal() * M_SQRT1_2, rng_speckle.normal() * M_SQRT1_2};
                    std::complex<double> v =
                        std::sqrt(sigma) * (std::sqrt(rho) * g[r * w + col] + std::sqrt(1.0 - rho) * n);
                    z[r * w + col] = {static_cast<float>(v.real()), static_cast<float>(v.imag())};
                }
            scene.rasters["s1_slc_t" + std::to_string(t)] = std::move(b);
        }
    }

    // ---- Sentinel-2 pre/post -----------------------------------------------------
    // 10 bands at 10 m; building coverage raises reflectance (sub-pixel area
    // weighting), the flood band darkens the upper bands post-event.
    {
        RasterMeta m = grid_meta(c, c.s2_gsd, Dtype::f32, 10);
        m.band_names = {"b1", "b2", "b3", "b4", "b5", "b6", "b7", "b8", "b9", "b10"};
        int64_t w = m.width, h = m.height;
        TextureField ground(c, rng_s2, 80.0);

        const int ss = 5;  // sub-pixel sampling per axis
        std::vector<float> cover(static_cast<size_t>(w * h), 0.0f);
        std::vector<float> flood_cover(static_cast<size_t>(w * h), 0.0f);
        for (int64_t r = 0; r < h; ++r)
            for (int64_t col = 0; col < w; ++col) {
                int inside = 0, flood_in = 0;
                for (int sy = 0; sy < ss; ++sy)
                    for (int sx = 0; sx < ss; ++sx) {
                        double x = c.origin_x + (col + (sx + 0.5) / ss) * c.s2_gsd;
                        double y = c.origin_y - (r + (sy + 0.5) / ss) * c.s2_gsd;
                        if (building_at(x, y)) ++inside;
                        if (in_flood(x, y)) ++flood_in;
                    }
                cover[r * w + col] = static_cast<float>(inside) / (ss * ss);
                flood_cover[r * w + col] = static_cast<float>(flood_in) / (ss * ss);
            }

        for (int epoch = 0; epoch < 2; ++epoch) {
            bool post = epoch == 1;
            RasterBundle b = RasterBundle::create(m);
            float* data = b.f32();
            for (int64_t band = 0; band < 10; ++band) {
                double base = 0.10 + 0.02 * static_cast<double>(band);
                for (int64_t r = 0; r < h; ++r)
                    for (int64_t col = 0; col < w; ++col) {
                        double x = c.origin_x + (col + 0.5) * c.s2_gsd;
                        double y = c.origin_y - (r + 0.5) * c.s2_gsd;
                        double v = base + 0.02 * ground.at(x - c.origin_x, c.origin_y - y);
                        v += c.s2_building_albedo * cover[r * w + col];
                        if (post && band >= 6)
                            v *= 1.0 - c.s2_flood_darkening * flood_cover[r * w + col];
                        v += c.s2_noise * rng_s2.normal();
                        data[(band * h + r) * w + col] = static_cast<float>(std::max(v, 0.0));
                    }
            }
            scene.rasters[post ? "s2_post" : "s2_pre"] = std::move(b);
        }
    }

    // ---- VHR post-event ------------------------------------------------------------
    // crisp building shapes with per-building albedo and outline; no flood cue
    {
        RasterMeta m = grid_meta(c, c.vhr_gsd, Dtype::u8, 3);
        m.band_names = {"red", "green", "blue"};
        int64_t w = m.width, h = m.height;
        TextureField ground(c, rng_vhr, 40.0);
        RasterBundle b = RasterBundle::create(m);
        uint8_t* data = b.u8();
        for (int64_t r = 0; r < h; ++r)
            for (int64_t col = 0; col < w; ++col) {
                double x = c.origin_x + (col + 0.5) * c.vhr_gsd;
                double y = c.origin_y - (r + 0.5) * c.vhr_gsd;
                const Rect* bld = building_at(x, y);
                double rch, gch, bch;
                if (bld) {
                    double edge = std::min(std::min(x - bld->x0, bld->x1 - x), std::min(y - bld->y0, bld->y1 - y));
                    double shade = edge < 1.5 * c.vhr_gsd ? 0.55 : 1.0;  // dark outline
                    double a = bld->albedo * shade;
                    rch = 0.55 + 0.35 * a;
                    gch = 0.50 + 0.30 * a;
                    bch = 0.45 + 0.30 * a;
                } else {
                    double t = 0.05 * ground.at(x - c.origin_x, c.origin_y - y);
                    rch = 0.30 + t;
                    gch = 0.36 + t;
                    bch = 0.26 + t;
                }
                double chans[3] = {rch, gch, bch};
                for (int band = 0; band < 3; ++band) {
                    double v = chans[band] + c.vhr_noise * rng_vhr.normal();
                    data[(band * h + r) * w + col] =
                        static_cast<uint8_t>(std::clamp(v, 0.0, 1.0) * 255.0 + 0.5);
                }
            }
        scene.rasters["vhr"] = std::move(b);
    }

    return scene;
}

}  // namespace m3net
