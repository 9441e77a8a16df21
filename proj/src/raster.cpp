#include "m3net/raster.hpp"

#include <fstream>
#include <nlohmann/json.hpp>

namespace m3net {

using nlohmann::json;

std::string dtype_name(Dtype d) {
    switch (d) {
        case Dtype::f32: return "f32";
        case Dtype::c64: return "c64";
        case Dtype::u8: return "u8";
    }
    return "?";
}

Dtype dtype_from_name(const std::string& s) {
    if (s == "f32") return Dtype::f32;
    if (s == "c64") return Dtype::c64;
    if (s == "u8") return Dtype::u8;
    throw ValidationError("unknown raster dtype '" + s + "' (expected f32, c64, or u8)");
}

void RasterMeta::validate() const {
    if (width < 1 || height < 1 || bands < 1)
        throw ValidationError("raster dimensions must be positive: " + std::to_string(width) + "x" +
                              std::to_string(height) + "x" + std::to_string(bands));
    if (!(pixel_size > 0)) throw ValidationError("raster pixel_size must be > 0");
    if (!band_names.empty()) {
        if (static_cast<int64_t>(band_names.size()) != bands)
            throw ValidationError("band_names count does not match band count");
        for (size_t i = 0; i < band_names.size(); ++i)
            for (size_t j = i + 1; j < band_names.size(); ++j)
                if (band_names[i] == band_names[j])
                    throw ValidationError("duplicate band name '" + band_names[i] + "'");
    }
}

RasterBundle RasterBundle::create(RasterMeta meta) {
    meta.validate();
    RasterBundle b;
    b.data.assign(static_cast<size_t>(meta.width * meta.height * meta.bands) * dtype_size(meta.dtype),
                  std::byte{0});
    b.meta = std::move(meta);
    return b;
}

void write_bundle(const std::filesystem::path& dir, const RasterBundle& bundle) {
    bundle.meta.validate();
    size_t expect = static_cast<size_t>(bundle.meta.width * bundle.meta.height * bundle.meta.bands) *
                    dtype_size(bundle.meta.dtype);
    if (bundle.data.size() != expect)
        throw ValidationError("raster data length " + std::to_string(bundle.data.size()) +
                              " does not match meta (" + std::to_string(expect) + " bytes expected)");
    std::filesystem::create_directories(dir);
    json meta = {
        {"width", bundle.meta.width},
        {"height", bundle.meta.height},
        {"bands", bundle.meta.bands},
        {"dtype", dtype_name(bundle.meta.dtype)},
        {"origin_x", bundle.meta.origin_x},
        {"origin_y", bundle.meta.origin_y},
        {"pixel_size", bundle.meta.pixel_size},
        {"crs", bundle.meta.crs},
        {"band_names", bundle.meta.band_names},
    };
    std::ofstream ms(dir / "meta.json");
    ms << meta.dump(2) << "\n";
    std::ofstream ds(dir / "data.bin", std::ios::binary | std::ios::trunc);
    ds.write(reinterpret_cast<const char*>(bundle.data.data()), static_cast<std::streamsize>(bundle.data.size()));
    if (!ds) throw std::runtime_error("failed writing raster data to " + (dir / "data.bin").string());
}

RasterBundle read_bundle(const std::filesystem::path& dir) {
    std::ifstream ms(dir / "meta.json");
    if (!ms) throw ValidationError("missing raster metadata: " + (dir / "meta.json").string());
    json meta = json::parse(ms);
    RasterBundle b;
    b.meta.width = meta.at("width").get<int64_t>();
    b.meta.height = meta.at("height").get<int64_t>();
    b.meta.bands = meta.at("bands").get<int64_t>();
    b.meta.dtype = dtype_from_name(meta.at("dtype").get<std::string>());
    b.meta.origin_x = meta.at("origin_x").get<double>();
    b.meta.origin_y = meta.at("origin_y").get<double>();
    b.meta.pixel_size = meta.at("pixel_size").get<double>();
    b.meta.crs = meta.at("crs").get<std::string>();
    if (meta.contains("band_names")) b.meta.band_names = meta.at("band_names").get<std::vector<std::string>>();
    b.meta.validate();

    std::ifstream ds(dir / "data.bin", std::ios::binary | std::ios::ate);
    if (!ds) throw ValidationError("missing raster data: " + (dir / "data.bin").string());
    size_t bytes = static_cast<size_t>(ds.tellg());
    size_t expect = static_cast<size_t>(b.meta.width * b.meta.height * b.meta.bands) * dtype_size(b.meta.dtype);
    if (bytes != expect)
        throw ValidationError("raster data length " + std::to_string(bytes) + " does not match meta (" +
                              std::to_string(expect) + " bytes expected) in " + dir.string());
    b.data.resize(bytes);
    ds.seekg(0);
    ds.read(reinterpret_cast<char*>(b.data.data()), static_cast<std::streamsize>(bytes));
    return b;
}

}  // namespace m3net
