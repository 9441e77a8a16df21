#include "m3net/image_io.hpp"

#include <png.h>

#include <cstdio>

namespace m3net {

namespace {

struct FileCloser {
    void operator()(FILE* f) const {
        if (f) std::fclose(f);
    }
};

int color_type_for(int64_t channels) {
    switch (channels) {
        case 1: return PNG_COLOR_TYPE_GRAY;
        case 3: return PNG_COLOR_TYPE_RGB;
        case 4: return PNG_COLOR_TYPE_RGBA;
    }
    throw ValidationError("png image must have 1, 3, or 4 channels, got " + std::to_string(channels));
}

}  // namespace

void write_png(const std::filesystem::path& path, const ImageU8& img) {
    if (img.width < 1 || img.height < 1) throw ValidationError("png image is empty");
    int color_type = color_type_for(img.channels);
    std::unique_ptr<FILE, FileCloser> fp(std::fopen(path.c_str(), "wb"));
    if (!fp) throw std::runtime_error("cannot open for writing: " + path.string());

    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png_create_info_struct(png);
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw std::runtime_error("png write failed: " + path.string());
    }
    png_init_io(png, fp.get());
    png_set_IHDR(png, info, static_cast<png_uint_32>(img.width), static_cast<png_uint_32>(img.height), 8,
                 color_type, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    std::vector<png_bytep> rows(static_cast<size_t>(img.height));
    for (int64_t r = 0; r < img.height; ++r)
        rows[r] = const_cast<png_bytep>(img.pixels.data() + r * img.width * img.channels);
    png_write_image(png, rows.data());
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

ImageU8 read_png(const std::filesystem::path& path) {
    std::unique_ptr<FILE, FileCloser> fp(std::fopen(path.c_str(), "rb"));
    if (!fp) throw ValidationError("cannot open png: " + path.string());
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png_create_info_struct(png);
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw ValidationError("not a readable png: " + path.string());
    }
    png_init_io(png, fp.get());
    png_read_info(png, info);
    png_set_expand(png);
    png_set_strip_16(png);
    png_read_update_info(png, info);

    ImageU8 img;
    img.width = png_get_image_width(png, info);
    img.height = png_get_image_height(png, info);
    img.channels = png_get_channels(png, info);
    img.pixels.resize(static_cast<size_t>(img.width * img.height * img.channels));
    std::vector<png_bytep> rows(static_cast<size_t>(img.height));
    for (int64_t r = 0; r < img.height; ++r) rows[r] = img.pixels.data() + r * img.width * img.channels;
    png_read_image(png, rows.data());
    png_destroy_read_struct(&png, &info, nullptr);
    return img;
}

ImageU8 raster_to_image(const RasterBundle& bundle, std::optional<ScaleRange> fixed_range,
                        ScaleRange* applied) {
    const RasterMeta& m = bundle.meta;
    if (m.bands != 1 && m.bands != 3)
        throw ValidationError("png export supports 1- or 3-band rasters, got " + std::to_string(m.bands));
    if (m.dtype == Dtype::c64) throw ValidationError("png export does not support complex rasters");

    int64_t plane = m.pixels();
    auto value_at = [&](int64_t band, int64_t i) -> double {
        return m.dtype == Dtype::f32 ? static_cast<double>(bundle.f32()[band * plane + i])
                                     : static_cast<double>(bundle.u8()[band * plane + i]);
    };

    ScaleRange range;
    if (fixed_range) {
        range = *fixed_range;
    } else {
        double lo = 1e300, hi = -1e300;
        for (int64_t b = 0; b < m.bands; ++b)
            for (int64_t i = 0; i < plane; ++i) {
                double v = value_at(b, i);
                lo = std::min(lo, v);
                hi = std::max(hi, v);
            }
        range = {lo, hi};
    }
    if (applied) *applied = range;
    double span = range.hi - range.lo;
    if (!(span > 0)) span = 1.0;

    ImageU8 img;
    img.width = m.width;
    img.height = m.height;
    img.channels = m.bands;
    img.pixels.resize(static_cast<size_t>(plane * m.bands));
    for (int64_t i = 0; i < plane; ++i)
        for (int64_t b = 0; b < m.bands; ++b) {
            double v = (value_at(b, i) - range.lo) / span;
            img.pixels[i * m.bands + b] = static_cast<uint8_t>(std::clamp(v, 0.0, 1.0) * 255.0 + 0.5);
        }
    return img;
}

}  // namespace m3net
