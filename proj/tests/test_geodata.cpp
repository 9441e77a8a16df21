#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>

#include "m3net/labels.hpp"
#include "m3net/sar.hpp"
#include "m3net/synth.hpp"
#include "m3net/tiles.hpp"
#include "oracles.hpp"

using namespace m3net;

TEST_CASE("rasterize covers an edge-aligned square exactly") {
    // 4x4-pixel block at 2 m/px: square from (2,-2) to (10,-10) in a grid with
    // origin (0,0)
    VectorLabels labels;
    Ring ring = {{2, -10}, {10, -10}, {10, -2}, {2, -2}, {2, -10}};
    labels.polygons.push_back({{ring}, kClassBuilding});
    GridSpec grid{8, 8, 0.0, 0.0, 2.0};
    LabelGrid g = rasterize(labels, grid, kClassBuilding);
    int64_t ones = 0;
    for (uint8_t v : g.v) ones += v;
    CHECK(ones == 16);
    // the block sits at rows 1..4, cols 1..4
    CHECK(g.v[1 * 8 + 1] == 1);
    CHECK(g.v[4 * 8 + 4] == 1);
    CHECK(g.v[0] == 0);
    CHECK(g.v[5 * 8 + 5] == 0);
}

TEST_CASE("rasterize of an empty label set is all zeros") {
    VectorLabels labels;
    GridSpec grid{16, 16, 0.0, 0.0, 2.0};
    LabelGrid g = rasterize(labels, grid, kClassBuilding);
    for (uint8_t v : g.v) CHECK(v == 0);
}

TEST_CASE("rasterize matches point-in-polygon oracle on random triangles") {
    Rng rng(201);
    GridSpec grid{24, 24, 0.0, 0.0, 2.0};
    for (int trial = 0; trial < 25; ++trial) {
        Ring tri;
        for (int k = 0; k < 3; ++k) tri.push_back({rng.uniform(0.0, 48.0), rng.uniform(-48.0, 0.0)});
        tri.push_back(tri.front());
        VectorLabels labels;
        labels.polygons.push_back({{tri}, kClassFloodedBuilding});
        LabelGrid g = rasterize(labels, grid, kClassFloodedBuilding);
        for (int64_t r = 0; r < 24; ++r)
            for (int64_t c = 0; c < 24; ++c) {
                double px = 0.0 + (c + 0.5) * 2.0;
                double py = 0.0 - (r + 0.5) * 2.0;
                bool want = oracles::point_in_rings(px, py, {tri});
                CHECK(static_cast<bool>(g.v[r * 24 + c]) == want);
            }
    }
}

TEST_CASE("rasterize respects holes via the even-odd rule") {
    VectorLabels labels;
    Ring outer = {{0, -16}, {16, -16}, {16, 0}, {0, 0}, {0, -16}};
    Ring hole = {{4, -12}, {12, -12}, {12, -4}, {4, -4}, {4, -12}};
    labels.polygons.push_back({{outer, hole}, kClassBuilding});
    GridSpec grid{8, 8, 0.0, 0.0, 2.0};
    LabelGrid g = rasterize(labels, grid, kClassBuilding);
    CHECK(g.v[0] == 1);           // corner inside outer only
    CHECK(g.v[3 * 8 + 3] == 0);   // center inside the hole
}

TEST_CASE("unclosed rings are rejected at load") {
    auto path = std::filesystem::temp_directory_path() / "m3net_bad_ring.geojson";
    std::ofstream os(path);
    os << R"({"type":"FeatureCollection","features":[{"type":"Feature",
        "properties":{"class":"building"},
        "geometry":{"type":"Polygon","coordinates":[[[0,0],[4,0],[4,4],[0,4]]]}}]})";
    os.close();
    CHECK_THROWS_AS(load_geojson(path), ValidationError);
    std::filesystem::remove(path);
}

TEST_CASE("geojson round-trip preserves polygons and classes") {
    VectorLabels labels;
    Ring a = {{0, 0}, {10, 0}, {10, 10}, {0, 10}, {0, 0}};
    Ring b = {{20, 20}, {30, 20}, {25, 30}, {20, 20}};
    labels.polygons.push_back({{a}, kClassBuilding});
    labels.polygons.push_back({{b}, kClassFloodedBuilding});
    auto path = std::filesystem::temp_directory_path() / "m3net_labels.geojson";
    save_geojson(path, labels);
    VectorLabels back = load_geojson(path);
    REQUIRE(back.polygons.size() == 2);
    CHECK(back.polygons[0].cls == kClassBuilding);
    CHECK(back.polygons[1].cls == kClassFloodedBuilding);
    CHECK(back.polygons[0].rings[0] == a);
    CHECK(back.polygons[1].rings[0] == b);
    std::filesystem::remove(path);
}

TEST_CASE("rasterized pixel area equals polygon area for edge-aligned rectangles") {
    Rng rng(202);
    GridSpec grid{40, 40, 0.0, 0.0, 2.0};
    for (int trial = 0; trial < 10; ++trial) {
        int64_t c0 = rng.uniform_int(0, 30), r0 = rng.uniform_int(0, 30);
        int64_t cw = rng.uniform_int(1, 9), rh = rng.uniform_int(1, 9);
        double x0 = c0 * 2.0, x1 = (c0 + cw) * 2.0;
        double y0 = -(r0 + rh) * 2.0, y1 = -r0 * 2.0;
        VectorLabels labels;
        Ring ring = {{x0, y0}, {x1, y0}, {x1, y1}, {x0, y1}, {x0, y0}};
        labels.polygons.push_back({{ring}, kClassBuilding});
        LabelGrid g = rasterize(labels, grid, kClassBuilding);
        int64_t ones = 0;
        for (uint8_t v : g.v) ones += v;
        CHECK(static_cast<double>(ones) * 4.0 == doctest::Approx((x1 - x0) * (y1 - y0)));
    }
}

TEST_CASE("tile counts follow the anchor formula") {
    // 2000 m x 1000 m extent, 960 m tiles, 100 m stride -> 11 x 1
    bool warned = false;
    auto tiles = extract_tile_specs(0, 0, 2000, 1000, 960, 100, &warned);
    CHECK(tiles.size() == 11);
    CHECK_FALSE(warned);
    CHECK(anchor_offsets(2000, 960, 100).size() == 11);
    CHECK(anchor_offsets(1000, 960, 100).size() == 1);

    auto one = extract_tile_specs(0, 0, 960, 960, 960, 100, &warned);
    CHECK(one.size() == 1);

    auto none = extract_tile_specs(0, 0, 500, 500, 960, 100, &warned);
    CHECK(none.empty());
    CHECK(warned);
}

TEST_CASE("anchor enumeration is closed under the fit condition") {
    Rng rng(203);
    for (int trial = 0; trial < 20; ++trial) {
        double extent = rng.uniform(300.0, 3000.0);
        double tile = rng.uniform(100.0, 900.0);
        double stride = rng.uniform(50.0, 400.0);
        auto offs = anchor_offsets(extent, tile, stride);
        size_t want = 0;
        for (int64_t k = 0; static_cast<double>(k) * stride + tile <= extent + 1e-6; ++k) ++want;
        CHECK(offs.size() == want);
        for (size_t i = 0; i < offs.size(); ++i) {
            CHECK(offs[i] == doctest::Approx(static_cast<double>(i) * stride));
            CHECK(offs[i] + tile <= extent + 1e-6);
        }
    }
}

namespace {

TileSample make_sample(Rng& rng, int64_t px) {
    TileSample s;
    s.id = 1;
    SensorPatch p1;
    p1.channels = 3;
    p1.px = px;
    p1.gsd = 10.0;
    p1.chw.resize(3 * px * px);
    for (auto& v : p1.chw) v = static_cast<float>(rng.normal());
    s.sensors["s2"] = p1;
    SensorPatch p2 = p1;
    p2.channels = 1;
    p2.chw.resize(px * px);
    for (auto& v : p2.chw) v = static_cast<float>(rng.normal());
    s.sensors["s1"] = p2;
    s.label.spec = {px, px, 0, 0, 10.0};
    s.label.v.resize(px * px);
    for (auto& v : s.label.v) v = rng.uniform() < 0.3 ? 1 : 0;
    return s;
}

bool samples_equal(const TileSample& a, const TileSample& b) {
    if (a.label.v != b.label.v) return false;
    for (const auto& [name, patch] : a.sensors)
        if (patch.chw != b.sensors.at(name).chw) return false;
    return true;
}

}  // namespace

TEST_CASE("augmentation identity, involutions, and rotation order") {
    Rng rng(204);
    TileSample s = make_sample(rng, 6);
    CHECK(samples_equal(augment(s, 0), s));
    CHECK(samples_equal(augment(augment(s, 4), 4), s));  // two horizontal flips
    CHECK(samples_equal(augment(augment(s, 5), 5), s));  // two vertical flips
    TileSample r = s;
    for (int k = 0; k < 4; ++k) r = augment(r, 1);  // rot90 four times
    CHECK(samples_equal(r, s));
}

TEST_CASE("augmentation preserves per-class pixel counts for every op") {
    Rng rng(205);
    TileSample s = make_sample(rng, 8);
    int64_t ones = 0;
    for (uint8_t v : s.label.v) ones += v;
    double sum0 = 0;
    for (float v : s.sensors.at("s2").chw) sum0 += v;
    for (int op = 0; op < kDihedralOps; ++op) {
        TileSample t = augment(s, op);
        int64_t ones_t = 0;
        for (uint8_t v : t.label.v) ones_t += v;
        CHECK(ones_t == ones);
        double sum_t = 0;
        for (float v : t.sensors.at("s2").chw) sum_t += v;
        CHECK(sum_t == doctest::Approx(sum0).epsilon(1e-9));
    }
}

TEST_CASE("each dihedral op is a distinct permutation") {
    Rng rng(206);
    TileSample s = make_sample(rng, 5);
    for (int a = 0; a < kDihedralOps; ++a)
        for (int b = a + 1; b < kDihedralOps; ++b)
            CHECK_FALSE(samples_equal(augment(s, a), augment(s, b)));
}

TEST_CASE("split tags straddling tiles as test and divides the rest 4:1") {
    std::vector<TileSpec> tiles;
    // 10 columns x 10 rows of 100 m tiles anchored every 100 m
    for (int r = 0; r < 10; ++r)
        for (int c = 0; c < 10; ++c) {
            TileSpec t;
            t.id = r * 10 + c;
            t.x = c * 100.0;
            t.y = -(r * 100.0);
            tiles.push_back(t);
        }
    PartitionSpec boundary{'x', 450.0, true};
    auto warning = split_partitions(tiles, 100.0, boundary, Rng(5));
    CHECK_FALSE(warning.has_value());
    int test_count = 0, train_count = 0, val_count = 0;
    for (const auto& t : tiles) {
        bool intersects_test = t.x < 450.0 - 1e-9;
        if (intersects_test) CHECK(t.split == Split::test);
        switch (t.split) {
            case Split::test: ++test_count; break;
            case Split::train: ++train_count; break;
            case Split::val: ++val_count; break;
        }
    }
    // columns 0..4 intersect x<450 (col 4 straddles 400..500) -> 50 test tiles
    CHECK(test_count == 50);
    CHECK(train_count == 40);
    CHECK(val_count == 10);
}

TEST_CASE("split boundary outside the extent leaves all tiles train/val with warning") {
    std::vector<TileSpec> tiles;
    for (int c = 0; c < 100; ++c) {
        TileSpec t;
        t.id = c;
        t.x = c * 10.0;
        t.y = 0.0;
        tiles.push_back(t);
    }
    PartitionSpec boundary{'x', -500.0, true};
    auto warning = split_partitions(tiles, 10.0, boundary, Rng(7));
    CHECK(warning.has_value());
    int train_count = 0, val_count = 0;
    for (const auto& t : tiles) {
        CHECK(t.split != Split::test);
        if (t.split == Split::train) ++train_count;
        if (t.split == Split::val) ++val_count;
    }
    CHECK(train_count == 80);
    CHECK(val_count == 20);
}

TEST_CASE("crop_patch slices the right window and scales u8") {
    RasterMeta m;
    m.width = 8;
    m.height = 8;
    m.bands = 2;
    m.dtype = Dtype::u8;
    m.pixel_size = 10.0;
    m.origin_x = 100.0;
    m.origin_y = 200.0;
    RasterBundle b = RasterBundle::create(m);
    for (int64_t i = 0; i < 128; ++i) b.u8()[i] = static_cast<uint8_t>(i);
    SensorPatch p = crop_patch(b, 120.0, 180.0, 40.0);  // col0=2, row0=2, 4 px
    CHECK(p.px == 4);
    CHECK(p.channels == 2);
    CHECK(p.chw[0] == doctest::Approx((2 * 8 + 2) / 255.0f));
    CHECK(p.chw[4 * 4 * 2 - 1] == doctest::Approx((64 + 5 * 8 + 5) / 255.0f));
    CHECK_THROWS_AS(crop_patch(b, 125.0, 180.0, 40.0), ValidationError);  // misaligned
    CHECK_THROWS_AS(crop_patch(b, 160.0, 180.0, 40.0), ValidationError);  // outside
}

TEST_CASE("synthetic scene with zero flood fraction has no flooded features") {
    SynthConfig cfg;
    cfg.seed = 31;
    cfg.scene_w = 400;
    cfg.scene_h = 400;
    cfg.building_count = 10;
    cfg.flood_fraction = 0.0;
    SynthScene scene = synth_scene(cfg);
    for (const auto& poly : scene.labels.polygons) CHECK(poly.cls == kClassBuilding);
    GridSpec grid{40, 40, cfg.origin_x, cfg.origin_y, 10.0};
    LabelGrid flood = rasterize(scene.labels, grid, kClassFloodedBuilding);
    for (uint8_t v : flood.v) CHECK(v == 0);
}

TEST_CASE("synthetic scene is byte-identical under the same seed") {
    SynthConfig cfg;
    cfg.seed = 77;
    cfg.scene_w = 400;
    cfg.scene_h = 400;
    cfg.building_count = 12;
    SynthScene a = synth_scene(cfg);
    SynthScene b = synth_scene(cfg);
    REQUIRE(a.rasters.size() == b.rasters.size());
    for (const auto& [name, bundle] : a.rasters) {
        CHECK(bundle.data == b.rasters.at(name).data);
    }
    CHECK(a.labels.polygons.size() == b.labels.polygons.size());
    SynthConfig cfg2 = cfg;
    cfg2.seed = 78;
    SynthScene c = synth_scene(cfg2);
    CHECK(a.rasters.at("vhr").data != c.rasters.at("vhr").data);
}

TEST_CASE("synthetic flooded building loses post-event coherence") {
    SynthConfig cfg;
    cfg.seed = 41;
    cfg.scene_w = 640;
    cfg.scene_h = 640;
    cfg.building_count = 16;
    cfg.flood_fraction = 0.5;
    cfg.s2_noise = 0.0;
    cfg.vhr_noise = 0.0;
    SynthScene scene = synth_scene(cfg);

    std::vector<ComplexRaster> slcs;
    for (int t = 0; t < cfg.slc_count; ++t)
        slcs.push_back(complex_from_bundle(scene.rasters.at("s1_slc_t" + std::to_string(t))));
    auto [pre, post] = build_radar_stack(slcs[cfg.slc_count - 3], slcs[cfg.slc_count - 2],
                                         slcs[cfg.slc_count - 1], slcs, 5);

    // compare mean coherence over flooded-building pixels
    GridSpec s1grid{pre.coherence.meta.width, pre.coherence.meta.height, cfg.origin_x, cfg.origin_y,
                    cfg.s1_gsd};
    LabelGrid flooded = rasterize(scene.labels, s1grid, kClassFloodedBuilding);
    double pre_mean = 0, post_mean = 0;
    int64_t count = 0;
    for (size_t i = 0; i < flooded.v.size(); ++i)
        if (flooded.v[i]) {
            pre_mean += pre.coherence.v[i];
            post_mean += post.coherence.v[i];
            ++count;
        }
    REQUIRE(count > 0);
    CHECK(post_mean / count < pre_mean / count - 0.2);
}

TEST_CASE("synthetic generator rejects degenerate configs") {
    SynthConfig cfg;
    cfg.scene_w = 100;
    cfg.scene_h = 100;
    cfg.building_max = 500;
    CHECK_THROWS_AS(synth_scene(cfg), ValidationError);
    SynthConfig cfg2;
    cfg2.flood_fraction = 1.5;
    CHECK_THROWS_AS(synth_scene(cfg2), ValidationError);
}
