#include "m3net/metrics.hpp"

#include <fstream>
#include <nlohmann/json.hpp>

namespace m3net {

ConfusionMatrix confusion(const LabelGrid& pred, const LabelGrid& target) {
    if (pred.spec.width != target.spec.width || pred.spec.height != target.spec.height)
        throw ValidationError("confusion: shape mismatch " + std::to_string(pred.spec.width) + "x" +
                              std::to_string(pred.spec.height) + " vs " + std::to_string(target.spec.width) +
                              "x" + std::to_string(target.spec.height));
    ConfusionMatrix cm;
    for (size_t i = 0; i < pred.v.size(); ++i) {
        bool p = pred.v[i] != 0, t = target.v[i] != 0;
        if (p && t)
            ++cm.tp;
        else if (p && !t)
            ++cm.fp;
        else if (!p && t)
            ++cm.fn;
        else
            ++cm.tn;
    }
    return cm;
}

namespace {

// zero denominator: 1 when the class is absent from both prediction and
// target, else 0
double safe_iou(uint64_t inter, uint64_t denom, uint64_t in_pred, uint64_t in_target) {
    if (denom == 0) return (in_pred == 0 && in_target == 0) ? 1.0 : 0.0;
    return static_cast<double>(inter) / static_cast<double>(denom);
}

}  // namespace

IouMetrics iou_metrics(const ConfusionMatrix& cm) {
    if (cm.total() == 0) throw ValidationError("iou_metrics: empty confusion matrix");
    IouMetrics m;
    m.biou = safe_iou(cm.tp, cm.fp + cm.tp + cm.fn, cm.tp + cm.fp, cm.tp + cm.fn);
    m.background_iou = safe_iou(cm.tn, cm.tn + cm.fp + cm.fn, cm.tn + cm.fn, cm.tn + cm.fp);
    m.miou = (m.biou + m.background_iou) / 2.0;
    m.accuracy = static_cast<double>(cm.tp + cm.tn) / static_cast<double>(cm.total());
    return m;
}

LabelGrid argmax_binary(const std::vector<float>& logits, int64_t h, int64_t w, const GridSpec& spec) {
    if (static_cast<int64_t>(logits.size()) != 2 * h * w)
        throw ValidationError("argmax_binary: logits length does not match 2xHxW");
    LabelGrid out;
    out.spec = spec;
    out.spec.width = w;
    out.spec.height = h;
    out.v.resize(static_cast<size_t>(h * w));
    for (int64_t i = 0; i < h * w; ++i) out.v[i] = logits[h * w + i] > logits[i] ? 1 : 0;
    return out;
}

ImageU8 render_map(const LabelGrid& grid, const Palette& palette) {
    if (grid.v.empty()) throw ValidationError("render_map: empty grid");
    ImageU8 img;
    img.width = grid.spec.width;
    img.height = grid.spec.height;
    img.channels = 3;
    img.pixels.resize(grid.v.size() * 3);
    for (size_t i = 0; i < grid.v.size(); ++i) {
        const auto& c = grid.v[i] ? palette.foreground : palette.background;
        img.pixels[i * 3] = c[0];
        img.pixels[i * 3 + 1] = c[1];
        img.pixels[i * 3 + 2] = c[2];
    }
    return img;
}

void write_map_png(const std::filesystem::path& path, const LabelGrid& grid, const Palette& palette) {
    write_png(path, render_map(grid, palette));
    nlohmann::json sidecar = {
        {"origin_x", grid.spec.origin_x},
        {"origin_y", grid.spec.origin_y},
        {"pixel_size", grid.spec.pixel_size},
        {"width", grid.spec.width},
        {"height", grid.spec.height},
        {"palette",
         {{"background", {palette.background[0], palette.background[1], palette.background[2]}},
          {"foreground", {palette.foreground[0], palette.foreground[1], palette.foreground[2]}}}},
    };
    std::ofstream os(path.string() + ".json");
    os << sidecar.dump(2) << "\n";
}

ImageU8 diff_overlay(const LabelGrid& pred_a, const LabelGrid& pred_b) {
    if (pred_a.spec.width != pred_b.spec.width || pred_a.spec.height != pred_b.spec.height)
        throw ValidationError("diff_overlay: shape mismatch");
    ImageU8 img;
    img.width = pred_a.spec.width;
    img.height = pred_a.spec.height;
    img.channels = 4;
    img.pixels.assign(pred_a.v.size() * 4, 0);
    for (size_t i = 0; i < pred_a.v.size(); ++i) {
        bool a = pred_a.v[i] != 0, b = pred_b.v[i] != 0;
        uint8_t* px = img.pixels.data() + i * 4;
        if (a && b) {  // yellow: present in both
            px[0] = 255;
            px[1] = 255;
            px[2] = 0;
            px[3] = 255;
        } else if (!a && b) {  // magenta: added by b
            px[0] = 255;
            px[1] = 0;
            px[2] = 255;
            px[3] = 255;
        } else if (a && !b) {  // green: removed in b
            px[0] = 0;
            px[1] = 255;
            px[2] = 0;
            px[3] = 255;
        }
    }
    return img;
}

}  // namespace m3net
