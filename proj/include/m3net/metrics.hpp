#pragma once

// Confusion-matrix evaluation metrics and rendered map artifacts.

#include "m3net/image_io.hpp"
#include "m3net/labels.hpp"

namespace m3net {

struct ConfusionMatrix {
    uint64_t tp = 0;
    uint64_t fp = 0;
    uint64_t tn = 0;
    uint64_t fn = 0;

    uint64_t total() const { return tp + fp + tn + fn; }
    ConfusionMatrix& operator+=(const ConfusionMatrix& o) {
        tp += o.tp;
        fp += o.fp;
        tn += o.tn;
        fn += o.fn;
        return *this;
    }
};

// Pixelwise counts of a binary prediction against a binary target.
ConfusionMatrix confusion(const LabelGrid& pred, const LabelGrid& target);

struct IouMetrics {
    double biou = 0.0;            // TP / (FP + TP + FN)
    double background_iou = 0.0;  // TN / (TN + FP + FN)
    double miou = 0.0;            // mean of the two
    double accuracy = 0.0;        // (TP + TN) / total
};

IouMetrics iou_metrics(const ConfusionMatrix& cm);

// Argmax over two-class logit planes; ties go to background (class 0).
LabelGrid argmax_binary(const std::vector<float>& logits, int64_t h, int64_t w, const GridSpec& spec);

struct Palette {
    std::array<uint8_t, 3> background = {20, 20, 20};
    std::array<uint8_t, 3> foreground = {240, 220, 60};
};

// Deterministic color mapping of a class grid.
ImageU8 render_map(const LabelGrid& grid, const Palette& palette = {});

// Writes the PNG plus a georeferencing sidecar <path>.json.
void write_map_png(const std::filesystem::path& path, const LabelGrid& grid, const Palette& palette = {});

// Change overlay between two predictions: pixels only in b are magenta, only
// in a green, in both yellow, in neither transparent.
ImageU8 diff_overlay(const LabelGrid& pred_a, const LabelGrid& pred_b);

}  // namespace m3net
