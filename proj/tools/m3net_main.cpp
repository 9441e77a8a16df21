// m3net: synthesize multi-sensor scenes, preprocess radar, tile, train the
// fusion segmentation network, evaluate, and render map artifacts.

#include <CLI11.hpp>
#include <fstream>
#include <iostream>
#include <nlohmann/json.hpp>

#include "m3net/dataset.hpp"
#include "m3net/image_io.hpp"
#include "m3net/metrics.hpp"
#include "m3net/training.hpp"

using namespace m3net;
using nlohmann::json;

namespace {

constexpr const char* kToolVersion = "1.0.0";

uint64_t fnv1a(const std::string& s) {
    uint64_t h = 1469598103934665603ull;
    for (char c : s) h = (h ^ static_cast<uint8_t>(c)) * 1099511628211ull;
    return h;
}

std::string run_id(const std::string& command, const json& config, uint64_t seed) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx",
                  static_cast<unsigned long long>(fnv1a(command + config.dump() + std::to_string(seed))));
    return buf;
}

void write_manifest(const std::filesystem::path& dir, const std::string& command, const json& config,
                    uint64_t seed, const std::vector<std::string>& artifacts) {
    json manifest = {
        {"run_id", run_id(command, config, seed)}, {"command", command},   {"config", config},
        {"seed", seed},                            {"tool_version", kToolVersion}, {"artifacts", artifacts},
    };
    std::ofstream os(dir / "manifest.json");
    os << manifest.dump(2) << "\n";
}

void ensure_out_dir(const std::filesystem::path& dir, bool force) {
    if (std::filesystem::exists(dir) && !std::filesystem::is_empty(dir) && !force)
        throw ValidationError("output directory " + dir.string() +
                              " exists and is not empty; pass --force to overwrite");
    std::filesystem::create_directories(dir);
}

std::vector<std::string> parse_streams(const std::string& spec) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : spec + "+") {
        if (c == '+') {
            if (!cur.empty()) out.push_back(cur);
            cur.clear();
        } else {
            cur += c;
        }
    }
    if (out.empty()) throw ValidationError("empty --streams");
    for (const auto& s : out)
        if (s != "s1" && s != "s2" && s != "vhr")
            throw ValidationError("unknown stream '" + s + "' in --streams (expected s1, s2, vhr)");
    return out;
}

// ---------------------------------------------------------------------------
// synth

struct SynthArgs {
    std::string out;
    bool force = false;
    SynthConfig cfg;
};

json synth_config_json(const SynthConfig& c) {
    return {{"scene_w", c.scene_w},
            {"scene_h", c.scene_h},
            {"s1_gsd", c.s1_gsd},
            {"s2_gsd", c.s2_gsd},
            {"vhr_gsd", c.vhr_gsd},
            {"building_count", c.building_count},
            {"building_min", c.building_min},
            {"building_max", c.building_max},
            {"flood_fraction", c.flood_fraction},
            {"slc_count", c.slc_count},
            {"s2_noise", c.s2_noise},
            {"s2_building_albedo", c.s2_building_albedo},
            {"s2_flood_darkening", c.s2_flood_darkening},
            {"vhr_noise", c.vhr_noise}};
}

int cmd_synth(const SynthArgs& args) {
    ensure_out_dir(args.out, args.force);
    SynthScene scene = synth_scene(args.cfg);
    std::vector<std::string> artifacts;
    for (const auto& [name, bundle] : scene.rasters) {
        write_bundle(std::filesystem::path(args.out) / name, bundle);
        artifacts.push_back(name + "/");
    }
    save_geojson(std::filesystem::path(args.out) / "labels.geojson", scene.labels);
    artifacts.push_back("labels.geojson");
    write_manifest(args.out, "synth", synth_config_json(args.cfg), args.cfg.seed, artifacts);
    std::cout << "synth: wrote " << artifacts.size() << " artifacts to " << args.out << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// prep

int cmd_prep(const std::string& in_dir, const std::string& out_dir, int64_t window, bool force,
             uint64_t seed) {
    std::filesystem::path in(in_dir), out(out_dir);
    if (out != in) ensure_out_dir(out, force);
    std::filesystem::create_directories(out);

    std::vector<ComplexRaster> slcs;
    for (int t = 0;; ++t) {
        auto dir = in / ("s1_slc_t" + std::to_string(t));
        if (!std::filesystem::exists(dir / "meta.json")) break;
        slcs.push_back(complex_from_bundle(read_bundle(dir)));
    }
    if (slcs.empty()) throw ValidationError("missing acquisition: no s1_slc_t* bundles in " + in.string());
    if (slcs.size() < 3)
        throw ValidationError("missing acquisition: need at least 3 SLCs (two pre-event for the no-change "
                              "pair plus the post-event image), found " +
                              std::to_string(slcs.size()));

    size_t n = slcs.size();
    auto [pre, post] = build_radar_stack(slcs[n - 3], slcs[n - 2], slcs[n - 1], slcs, window);
    write_bundle(out / "s1_pre_stack", pre.to_bundle());
    write_bundle(out / "s1_post_stack", post.to_bundle());
    std::vector<std::string> artifacts = {"s1_pre_stack/", "s1_post_stack/"};

    if (out != in) {
        for (const char* name : {"s2_pre", "s2_post", "vhr"}) {
            if (std::filesystem::exists(in / name / "meta.json")) {
                std::filesystem::copy(in / name, out / name,
                                      std::filesystem::copy_options::recursive |
                                          std::filesystem::copy_options::overwrite_existing);
                artifacts.push_back(std::string(name) + "/");
            }
        }
        if (std::filesystem::exists(in / "labels.geojson")) {
            std::filesystem::copy_file(in / "labels.geojson", out / "labels.geojson",
                                       std::filesystem::copy_options::overwrite_existing);
            artifacts.push_back("labels.geojson");
        }
    }
    write_manifest(out, "prep", {{"in", in_dir}, {"window", window}}, seed, artifacts);
    std::cout << "prep: wrote radar stacks (window " << window << ") to " << out_dir << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// tile

json tiles_to_json(const std::vector<TileSpec>& tiles, double tile_m, double stride_m,
                   const PartitionSpec& boundary, uint64_t seed) {
    json list = json::array();
    for (const auto& t : tiles)
        list.push_back({{"id", t.id}, {"x", t.x}, {"y", t.y}, {"split", split_name(t.split)}});
    return {{"tile_m", tile_m},
            {"stride_m", stride_m},
            {"boundary", {{"axis", std::string(1, boundary.axis)},
                          {"value", boundary.value},
                          {"test_side", boundary.test_low ? "low" : "high"}}},
            {"seed", seed},
            {"tiles", list}};
}

std::pair<std::vector<TileSpec>, double> tiles_from_json(const json& doc) {
    std::vector<TileSpec> tiles;
    for (const auto& t : doc.at("tiles")) {
        TileSpec spec;
        spec.id = t.at("id").get<int64_t>();
        spec.x = t.at("x").get<double>();
        spec.y = t.at("y").get<double>();
        spec.split = split_from_name(t.at("split").get<std::string>());
        tiles.push_back(spec);
    }
    return {tiles, doc.at("tile_m").get<double>()};
}

json make_tiles_file(const SceneDataset& scene, double tile_m, double stride_m, char axis, double boundary,
                     bool test_low, uint64_t seed) {
    bool warned = false;
    auto tiles =
        extract_tile_specs(scene.origin_x, scene.origin_y, scene.extent_x, scene.extent_y, tile_m, stride_m,
                           &warned);
    if (warned) std::cerr << "warning: tile size exceeds the scene extent; no tiles\n";
    PartitionSpec part{axis, boundary, test_low};
    auto warning = split_partitions(tiles, tile_m, part, Rng(seed).stream("split"));
    if (warning) std::cerr << "warning: " << *warning << "\n";
    return tiles_to_json(tiles, tile_m, stride_m, part, seed);
}

int cmd_tile(const std::string& data_dir, double tile_m, double stride_m, char axis, double boundary,
             bool boundary_set, bool test_low, uint64_t seed) {
    SceneDataset scene = SceneDataset::load(data_dir);
    if (!boundary_set) boundary = scene.origin_x + 0.3 * scene.extent_x;
    json doc = make_tiles_file(scene, tile_m, stride_m, axis, boundary, test_low, seed);
    std::ofstream os(std::filesystem::path(data_dir) / "tiles.json");
    os << doc.dump(2) << "\n";
    write_manifest(data_dir, "tile",
                   {{"tile_m", tile_m}, {"stride_m", stride_m}, {"boundary", boundary}}, seed,
                   {"tiles.json"});
    std::cout << "tile: " << doc.at("tiles").size() << " tiles (" << tile_m << " m every " << stride_m
              << " m) in " << data_dir << "\n";
    return 0;
}

std::pair<std::vector<TileSpec>, double> load_or_make_tiles(const SceneDataset& scene,
                                                            const std::string& data_dir, uint64_t seed) {
    auto path = std::filesystem::path(data_dir) / "tiles.json";
    if (!std::filesystem::exists(path)) {
        double tile_m = 320.0, stride_m = 160.0;
        json doc = make_tiles_file(scene, tile_m, stride_m, 'x', scene.origin_x + 0.3 * scene.extent_x,
                                   true, seed);
        std::ofstream os(path);
        os << doc.dump(2) << "\n";
        std::cerr << "note: no tiles.json found, wrote default tiling (320 m tiles every 160 m)\n";
    }
    std::ifstream is(path);
    return tiles_from_json(json::parse(is));
}

// ---------------------------------------------------------------------------
// train

struct TrainArgs {
    std::string data, out, streams = "s2", task = "footprint", preset = "desk", init, config_file;
    TrainConfig cfg;
    bool force = false;
};

int cmd_train(TrainArgs& args, CLI::App* sub) {
    // config file mirrors TrainConfig field names; explicit CLI flags override
    if (!args.config_file.empty()) {
        std::ifstream is(args.config_file);
        if (!is) throw ValidationError("cannot open config file " + args.config_file);
        json cfg = json::parse(is);
        auto maybe = [&](const char* key, auto& field, const char* flag) {
            if (cfg.contains(key) && sub->count(flag) == 0)
                field = cfg.at(key).get<std::decay_t<decltype(field)>>();
        };
        maybe("base_lr", args.cfg.base_lr, "--lr");
        maybe("poly_power", args.cfg.poly_power, "--power");
        maybe("batch_size", args.cfg.batch_size, "--batch");
        maybe("max_iter", args.cfg.max_iter, "--iters");
        maybe("convergence_window", args.cfg.convergence_window, "--convergence-window");
        maybe("convergence_delta", args.cfg.convergence_delta, "--convergence-delta");
        maybe("weight_decay", args.cfg.weight_decay, "--weight-decay");
        maybe("grad_clip", args.cfg.grad_clip, "--grad-clip");
        maybe("eval_interval", args.cfg.eval_interval, "--eval-interval");
        maybe("checkpoint_interval", args.cfg.checkpoint_interval, "--checkpoint-interval");
        maybe("task", args.task, "--task");
        maybe("streams", args.streams, "--streams");
        if (cfg.contains("seed") && sub->count("--seed") == 0) args.cfg.seed = cfg.at("seed").get<uint64_t>();
    }
    ensure_out_dir(args.out, args.force);
    args.cfg.out_dir = args.out;
    args.cfg.task = args.task;

    SceneDataset scene = SceneDataset::load(args.data);
    std::vector<std::string> sensors = parse_streams(args.streams);
    scene.require_sensors(sensors);
    auto [specs, tile_m] = load_or_make_tiles(scene, args.data, args.cfg.seed);

    FusionConfig fusion = make_fusion_config(sensors, args.preset, tile_m);
    auto tiles = build_tiles(scene, specs, tile_m, sensors, args.task, fusion.common_gsd);
    auto train_tiles = filter_split(tiles, Split::train);
    auto val_tiles = filter_split(tiles, Split::val);

    FusionModel<float> model(fusion, args.cfg.seed);
    if (!args.init.empty()) {
        TransferReport rep = transfer_init(model, load_checkpoint(args.init));
        std::cout << "transfer_init: loaded " << rep.loaded.size() << ", extended " << rep.extended.size()
                  << ", unmatched checkpoint " << rep.unmatched_checkpoint.size() << ", unmatched model "
                  << rep.unmatched_model.size() << "\n";
        for (const auto& name : rep.unmatched_model) std::cout << "  unmatched model param: " << name << "\n";
    }

    std::cout << "train: task " << args.task << ", streams " << args.streams << ", "
              << train_tiles.size() << " train / " << val_tiles.size() << " val tiles, "
              << model.params().trainable_count() << " trainable values\n";
    TrainResult result = train(model, train_tiles, val_tiles, args.cfg, [](const LogEntry& e) {
        if (e.iteration % 50 == 0 || e.val_miou >= 0) {
            std::cout << "iter " << e.iteration << " loss " << e.loss << " lr " << e.lr;
            if (e.val_miou >= 0) std::cout << " val_miou " << e.val_miou;
            std::cout << "\n";
        }
    });

    json config_snapshot = {{"data", args.data},     {"streams", args.streams},
                            {"task", args.task},     {"preset", args.preset},
                            {"init", args.init},     {"base_lr", args.cfg.base_lr},
                            {"poly_power", args.cfg.poly_power}, {"batch_size", args.cfg.batch_size},
                            {"max_iter", args.cfg.max_iter},     {"tile_m", tile_m}};
    write_manifest(args.out, "train", config_snapshot, args.cfg.seed,
                   {"checkpoint.m3nc", "model.json", "metrics.jsonl"});
    std::cout << "train: finished after " << result.iterations << " iterations (final loss "
              << result.final_loss << (result.converged ? ", converged" : "") << ")\n";
    return 0;
}

// ---------------------------------------------------------------------------
// eval

LabelGrid predict_tile(FusionModel<float>& model, const TileSample& tile) {
    NoGradGuard guard;
    std::map<std::string, Tensor<float>> inputs;
    for (const auto& sc : model.config().streams) inputs[sc.sensor] = batch_input<float>({&tile}, sc.sensor);
    Tensor<float> logits = model.forward(inputs, false);
    return argmax_binary(logits.data(), logits.dim(2), logits.dim(3), tile.label.spec);
}

FusionModel<float> load_model(const std::string& checkpoint_path) {
    std::filesystem::path ckpt(checkpoint_path);
    std::filesystem::path meta;
    if (std::filesystem::is_directory(ckpt)) {
        meta = ckpt / "model.json";
        ckpt = ckpt / "checkpoint.m3nc";
    } else {
        meta = ckpt.parent_path() / "model.json";
    }
    if (!std::filesystem::exists(meta))
        throw ValidationError("model metadata not found next to checkpoint: " + meta.string());
    std::ifstream is(meta);
    json doc = json::parse(is);
    FusionConfig cfg = fusion_config_from_json(doc.at("fusion"));
    FusionModel<float> model(cfg, 0);
    model.load(load_checkpoint(ckpt));
    return model;
}

int cmd_eval(const std::string& data_dir, const std::string& checkpoint, const std::string& out_dir,
             const std::string& split_name_arg, const std::string& task, const std::string& diff_ckpt,
             bool force, uint64_t seed) {
    ensure_out_dir(out_dir, force);
    FusionModel<float> model = load_model(checkpoint);
    std::vector<std::string> sensors;
    for (const auto& sc : model.config().streams) sensors.push_back(sc.sensor);

    SceneDataset scene = SceneDataset::load(data_dir);
    scene.require_sensors(sensors);
    auto [specs, tile_m] = load_or_make_tiles(scene, data_dir, seed);
    double want_tile_m = model.config().common_px * model.config().common_gsd;
    if (std::abs(tile_m - want_tile_m) > 1e-6)
        throw ValidationError("checkpoint expects " + std::to_string(want_tile_m) + " m tiles but tiles.json has " +
                              std::to_string(tile_m) + " m");

    Split split = split_from_name(split_name_arg);
    auto tiles =
        filter_split(build_tiles(scene, specs, tile_m, sensors, task, model.config().common_gsd), split);
    if (tiles.empty())
        throw ValidationError("split '" + split_name_arg + "' has zero tiles; nothing to evaluate");

    std::optional<FusionModel<float>> other;
    if (!diff_ckpt.empty()) other.emplace(load_model(diff_ckpt));

    ConfusionMatrix cm;
    std::vector<std::string> artifacts;
    std::filesystem::path out(out_dir);
    for (const auto& tile : tiles) {
        LabelGrid pred = predict_tile(model, tile);
        cm += confusion(pred, tile.label);
        std::string stem = "tile_" + std::to_string(tile.id);
        write_map_png(out / (stem + "_pred.png"), pred);
        // prediction grid as a georeferenced bundle for later diffing
        RasterMeta pm;
        pm.width = pred.spec.width;
        pm.height = pred.spec.height;
        pm.bands = 1;
        pm.dtype = Dtype::u8;
        pm.origin_x = pred.spec.origin_x;
        pm.origin_y = pred.spec.origin_y;
        pm.pixel_size = pred.spec.pixel_size;
        pm.band_names = {"class"};
        RasterBundle pb = RasterBundle::create(pm);
        std::copy(pred.v.begin(), pred.v.end(), pb.u8());
        write_bundle(out / (stem + "_pred"), pb);
        artifacts.push_back(stem + "_pred.png");
        artifacts.push_back(stem + "_pred/");
        if (other) {
            LabelGrid pred_b = predict_tile(*other, tile);
            write_png(out / (stem + "_diff.png"), diff_overlay(pred, pred_b));
            artifacts.push_back(stem + "_diff.png");
        }
    }

    IouMetrics metrics = iou_metrics(cm);
    json report = {
        {"task", task},
        {"split", split_name_arg},
        {"streams", sensors},
        {"tiles", tiles.size()},
        {"counts", {{"tp", cm.tp}, {"fp", cm.fp}, {"tn", cm.tn}, {"fn", cm.fn}}},
        {"metrics",
         {{"biou", metrics.biou},
          {"background_iou", metrics.background_iou},
          {"miou", metrics.miou},
          {"accuracy", metrics.accuracy}}},
    };
    std::ofstream os(out / "metrics.json");
    os << report.dump(2) << "\n";
    artifacts.push_back("metrics.json");
    write_manifest(out, "eval",
                   {{"data", data_dir}, {"checkpoint", checkpoint}, {"split", split_name_arg}, {"task", task}},
                   seed, artifacts);
    std::cout << "eval: " << tiles.size() << " tiles, mIoU " << metrics.miou << ", bIoU " << metrics.biou
              << ", accuracy " << metrics.accuracy << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// render / diff

int cmd_render(const std::string& bundle_dir, const std::string& out_png, double lo, double hi,
               bool fixed) {
    RasterBundle b = read_bundle(bundle_dir);
    ScaleRange applied;
    ImageU8 img = raster_to_image(b, fixed ? std::optional<ScaleRange>({lo, hi}) : std::nullopt, &applied);
    write_png(out_png, img);
    json sidecar = {{"source", bundle_dir},
                    {"scaling", fixed ? "fixed" : "min-max"},
                    {"lo", applied.lo},
                    {"hi", applied.hi},
                    {"origin_x", b.meta.origin_x},
                    {"origin_y", b.meta.origin_y},
                    {"pixel_size", b.meta.pixel_size}};
    std::ofstream os(out_png + ".json");
    os << sidecar.dump(2) << "\n";
    std::cout << "render: " << out_png << " (range " << applied.lo << ".." << applied.hi << ")\n";
    return 0;
}

LabelGrid grid_from_bundle(const std::string& dir) {
    RasterBundle b = read_bundle(dir);
    if (b.meta.dtype != Dtype::u8 || b.meta.bands != 1)
        throw ValidationError("prediction bundle must be single-band u8: " + dir);
    LabelGrid g;
    g.spec = {b.meta.width, b.meta.height, b.meta.origin_x, b.meta.origin_y, b.meta.pixel_size};
    g.v.assign(b.u8(), b.u8() + b.meta.pixels());
    return g;
}

int cmd_diff(const std::string& pred_a, const std::string& pred_b, const std::string& out_png) {
    ImageU8 overlay = diff_overlay(grid_from_bundle(pred_a), grid_from_bundle(pred_b));
    write_png(out_png, overlay);
    std::cout << "diff: " << out_png << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"multisensor flood segmentation pipeline"};
    app.require_subcommand(1);

    uint64_t seed = 0;
    int threads = 0;
    bool json_errors = false;
    std::string workdir;
    app.add_option("--seed", seed, "run seed");
    app.add_option("--threads", threads, "worker cap; 1 = bit-exact single-threaded mode");
    app.add_flag("--json", json_errors, "machine-readable errors on stderr");
    app.add_option("--workdir", workdir, "base directory for relative paths");

    // synth
    SynthArgs synth_args;
    auto* synth = app.add_subcommand("synth", "generate a synthetic multi-sensor scene");
    synth->add_option("--out", synth_args.out, "output dataset directory")->required();
    synth->add_flag("--force", synth_args.force, "overwrite a non-empty output directory");
    synth->add_option("--scene-w", synth_args.cfg.scene_w, "scene width in meters");
    synth->add_option("--scene-h", synth_args.cfg.scene_h, "scene height in meters");
    synth->add_option("--building-count", synth_args.cfg.building_count);
    synth->add_option("--flood-fraction", synth_args.cfg.flood_fraction);
    synth->add_option("--vhr-gsd", synth_args.cfg.vhr_gsd, "VHR ground resolution (2 desk, 0.5 full)");
    synth->add_option("--slc-count", synth_args.cfg.slc_count);
    synth->add_option("--s2-noise", synth_args.cfg.s2_noise);
    synth->add_option("--s2-flood-cue", synth_args.cfg.s2_flood_darkening,
                      "post-event darkening strength; 0 keeps the flood cue out of the optical bands");
    synth->add_option("--vhr-noise", synth_args.cfg.vhr_noise);

    // prep
    std::string prep_in, prep_out;
    int64_t prep_window = 5;
    bool prep_force = false;
    auto* prep = app.add_subcommand("prep", "build three-band radar stacks from SLC series");
    prep->add_option("--in", prep_in, "dataset directory with s1_slc_t* bundles")->required();
    prep->add_option("--out", prep_out, "output directory (may equal --in)")->required();
    prep->add_option("--window", prep_window, "boxcar window (odd)");
    prep->add_flag("--force", prep_force);

    // tile
    std::string tile_data;
    double tile_m = 320.0, stride_m = 160.0, boundary_value = 0.0;
    std::string boundary_axis = "x", test_side = "low";
    auto* tile = app.add_subcommand("tile", "compute the overlapping tile grid and splits");
    tile->add_option("--data", tile_data, "dataset directory")->required();
    tile->add_option("--tile-m", tile_m, "tile footprint in meters");
    tile->add_option("--stride-m", stride_m, "anchor stride in meters");
    auto* bopt = tile->add_option("--boundary", boundary_value, "test partition boundary coordinate");
    tile->add_option("--boundary-axis", boundary_axis)->check(CLI::IsMember({"x", "y"}));
    tile->add_option("--test-side", test_side)->check(CLI::IsMember({"low", "high"}));

    // train
    TrainArgs train_args;
    auto* train_cmd = app.add_subcommand("train", "train the fusion network");
    train_cmd->add_option("--data", train_args.data, "dataset directory")->required();
    train_cmd->add_option("--out", train_args.out, "run output directory")->required();
    train_cmd->add_option("--streams", train_args.streams, "e.g. s2 or s1+s2+vhr");
    train_cmd->add_option("--task", train_args.task)->check(CLI::IsMember({"footprint", "flood"}));
    train_cmd->add_option("--preset", train_args.preset)->check(CLI::IsMember({"desk", "full"}));
    train_cmd->add_option("--init", train_args.init, "checkpoint for transfer initialization");
    train_cmd->add_option("--config", train_args.config_file, "JSON config mirroring the train fields");
    train_cmd->add_option("--lr", train_args.cfg.base_lr);
    train_cmd->add_option("--power", train_args.cfg.poly_power);
    train_cmd->add_option("--batch", train_args.cfg.batch_size);
    train_cmd->add_option("--iters", train_args.cfg.max_iter);
    train_cmd->add_option("--convergence-window", train_args.cfg.convergence_window);
    train_cmd->add_option("--convergence-delta", train_args.cfg.convergence_delta);
    train_cmd->add_option("--weight-decay", train_args.cfg.weight_decay);
    train_cmd->add_option("--grad-clip", train_args.cfg.grad_clip);
    train_cmd->add_option("--eval-interval", train_args.cfg.eval_interval);
    train_cmd->add_option("--checkpoint-interval", train_args.cfg.checkpoint_interval);
    train_cmd->add_flag("--force", train_args.force);

    // eval
    std::string eval_data, eval_ckpt, eval_out, eval_split = "test", eval_task = "flood", eval_diff;
    bool eval_force = false;
    auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint on a split");
    eval_cmd->add_option("--data", eval_data)->required();
    eval_cmd->add_option("--checkpoint", eval_ckpt, "checkpoint file or training output directory")
        ->required();
    eval_cmd->add_option("--out", eval_out)->required();
    eval_cmd->add_option("--split", eval_split)->check(CLI::IsMember({"train", "val", "test"}));
    eval_cmd->add_option("--task", eval_task)->check(CLI::IsMember({"footprint", "flood"}));
    eval_cmd->add_option("--diff", eval_diff, "second checkpoint for change overlays");
    eval_cmd->add_flag("--force", eval_force);

    // render
    std::string render_in, render_out;
    double render_lo = 0.0, render_hi = 1.0;
    auto* render = app.add_subcommand("render", "export a 1- or 3-band raster as PNG");
    render->add_option("--bundle", render_in)->required();
    render->add_option("--out", render_out)->required();
    auto* lo_opt = render->add_option("--lo", render_lo, "fixed-range low");
    render->add_option("--hi", render_hi, "fixed-range high");

    // diff
    std::string diff_a, diff_b, diff_out;
    auto* diff = app.add_subcommand("diff", "overlay two prediction grids");
    diff->add_option("--pred-a", diff_a)->required();
    diff->add_option("--pred-b", diff_b)->required();
    diff->add_option("--out", diff_out)->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (threads > 0) set_thread_cap(threads);
        if (!workdir.empty()) std::filesystem::current_path(workdir);
        if (synth->parsed()) {
            synth_args.cfg.seed = seed;
            return cmd_synth(synth_args);
        }
        if (prep->parsed()) return cmd_prep(prep_in, prep_out, prep_window, prep_force, seed);
        if (tile->parsed())
            return cmd_tile(tile_data, tile_m, stride_m, boundary_axis[0], boundary_value,
                            bopt->count() > 0, test_side == "low", seed);
        if (train_cmd->parsed()) {
            train_args.cfg.seed = seed;
            return cmd_train(train_args, train_cmd);
        }
        if (eval_cmd->parsed())
            return cmd_eval(eval_data, eval_ckpt, eval_out, eval_split, eval_task, eval_diff, eval_force,
                            seed);
        if (render->parsed())
            return cmd_render(render_in, render_out, render_lo, render_hi, lo_opt->count() > 0);
        if (diff->parsed()) return cmd_diff(diff_a, diff_b, diff_out);
        return 2;
    } catch (const ValidationError& e) {
        if (json_errors)
            std::cerr << json({{"error", {{"type", "validation"}, {"message", e.what()}}}}).dump() << "\n";
        else
            std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        if (json_errors)
            std::cerr << json({{"error", {{"type", "runtime"}, {"message", e.what()}}}}).dump() << "\n";
        else
            std::cerr << "error: " << e.what() << "\n";
        return 3;
    }
}
