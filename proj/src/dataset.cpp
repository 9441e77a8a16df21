#include "m3net/dataset.hpp"

namespace m3net {

namespace {

void note_extent(SceneDataset& ds, const RasterMeta& m) {
    ds.origin_x = m.origin_x;
    ds.origin_y = m.origin_y;
    ds.extent_x = static_cast<double>(m.width) * m.pixel_size;
    ds.extent_y = static_cast<double>(m.height) * m.pixel_size;
}

}  // namespace

SceneDataset SceneDataset::load(const std::filesystem::path& dir) {
    SceneDataset ds;
    auto try_read = [&](const char* name, RasterBundle& out) {
        if (std::filesystem::exists(dir / name / "meta.json")) {
            out = read_bundle(dir / name);
            note_extent(ds, out.meta);
            return true;
        }
        return false;
    };
    bool pre = try_read("s1_pre_stack", ds.s1_pre);
    bool post = try_read("s1_post_stack", ds.s1_post);
    if (pre != post)
        throw ValidationError("dataset has only one of s1_pre_stack/s1_post_stack in " + dir.string());
    ds.has_s1 = pre && post;
    bool s2a = try_read("s2_pre", ds.s2_pre);
    bool s2b = try_read("s2_post", ds.s2_post);
    if (s2a != s2b) throw ValidationError("dataset has only one of s2_pre/s2_post in " + dir.string());
    ds.has_s2 = s2a && s2b;
    ds.has_vhr = try_read("vhr", ds.vhr);
    if (!ds.has_s1 && !ds.has_s2 && !ds.has_vhr)
        throw ValidationError("no sensor bundles found in " + dir.string());
    ds.labels = load_geojson(dir / "labels.geojson");
    return ds;
}

SceneDataset SceneDataset::from_synth(const SynthScene& scene, int64_t window) {
    SceneDataset ds;
    std::vector<ComplexRaster> slcs;
    for (int t = 0;; ++t) {
        auto it = scene.rasters.find("s1_slc_t" + std::to_string(t));
        if (it == scene.rasters.end()) break;
        slcs.push_back(complex_from_bundle(it->second));
    }
    if (slcs.size() >= 3) {
        size_t n = slcs.size();
        auto [pre, post] = build_radar_stack(slcs[n - 3], slcs[n - 2], slcs[n - 1], slcs, window);
        ds.s1_pre = pre.to_bundle();
        ds.s1_post = post.to_bundle();
        ds.has_s1 = true;
        note_extent(ds, ds.s1_pre.meta);
    }
    if (scene.rasters.count("s2_pre")) {
        ds.s2_pre = scene.rasters.at("s2_pre");
        ds.s2_post = scene.rasters.at("s2_post");
        ds.has_s2 = true;
        note_extent(ds, ds.s2_pre.meta);
    }
    if (scene.rasters.count("vhr")) {
        ds.vhr = scene.rasters.at("vhr");
        ds.has_vhr = true;
        note_extent(ds, ds.vhr.meta);
    }
    ds.labels = scene.labels;
    return ds;
}

void SceneDataset::require_sensors(const std::vector<std::string>& sensors) const {
    for (const auto& s : sensors) {
        bool ok = (s == "s1" && has_s1) || (s == "s2" && has_s2) || (s == "vhr" && has_vhr);
        if (!ok) throw ValidationError("requested stream '" + s + "' but its sensor data is absent");
    }
}

LabelGrid SceneDataset::label_grid(const std::string& cls, double gsd) const {
    GridSpec grid;
    grid.origin_x = origin_x;
    grid.origin_y = origin_y;
    grid.pixel_size = gsd;
    grid.width = static_cast<int64_t>(std::llround(extent_x / gsd));
    grid.height = static_cast<int64_t>(std::llround(extent_y / gsd));
    return rasterize(labels, grid, cls);
}

std::string task_class(const std::string& task) {
    if (task == "footprint") return kClassBuilding;
    if (task == "flood") return kClassFloodedBuilding;
    throw ValidationError("unknown task '" + task + "' (expected footprint or flood)");
}

std::vector<TileSample> build_tiles(const SceneDataset& scene, const std::vector<TileSpec>& specs,
                                    double tile_m, const std::vector<std::string>& sensors,
                                    const std::string& task, double common_gsd) {
    scene.require_sensors(sensors);
    LabelGrid full_label = scene.label_grid(task_class(task), common_gsd);

    std::vector<TileSample> tiles;
    tiles.reserve(specs.size());
    for (const TileSpec& spec : specs) {
        TileSample sample;
        sample.id = spec.id;
        sample.x = spec.x;
        sample.y = spec.y;
        sample.split = spec.split;
        for (const auto& s : sensors) {
            if (s == "s1") {
                SensorPatch pre = crop_patch(scene.s1_pre, spec.x, spec.y, tile_m);
                SensorPatch post = crop_patch(scene.s1_post, spec.x, spec.y, tile_m);
                pre.chw.insert(pre.chw.end(), post.chw.begin(), post.chw.end());
                pre.channels += post.channels;
                sample.sensors["s1"] = std::move(pre);
            } else if (s == "s2") {
                SensorPatch pre = crop_patch(scene.s2_pre, spec.x, spec.y, tile_m);
                SensorPatch post = crop_patch(scene.s2_post, spec.x, spec.y, tile_m);
                pre.chw.insert(pre.chw.end(), post.chw.begin(), post.chw.end());
                pre.channels += post.channels;
                sample.sensors["s2"] = std::move(pre);
            } else if (s == "vhr") {
                sample.sensors["vhr"] = crop_patch(scene.vhr, spec.x, spec.y, tile_m);
            } else {
                throw ValidationError("unknown sensor '" + s + "'");
            }
        }
        sample.label = crop_label(full_label, spec.x, spec.y, tile_m);
        tiles.push_back(std::move(sample));
    }
    return tiles;
}

std::vector<TileSample> filter_split(const std::vector<TileSample>& tiles, Split split) {
    std::vector<TileSample> out;
    for (const auto& t : tiles)
        if (t.split == split) out.push_back(t);
    return out;
}

}  // namespace m3net
