#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "error.hpp"
#include "types.hpp"

namespace coninfer {

/// Patch layout of a batch: num_tiles tiles of rows x cols patches each, in
/// raster order (tile by tile, then row-major within a tile).
struct PatchGrid {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::size_t patch_px = 1;
    std::size_t num_tiles = 1;

    std::size_t patches() const { return rows * cols * num_tiles; }
};

/// Index of the largest entry in each row; ties go to the lowest index.
inline std::vector<std::size_t> argmax_rows(const Matrix& m) {
    std::vector<std::size_t> out(static_cast<std::size_t>(m.rows()), 0);
    for (Index i = 0; i < m.rows(); ++i) {
        Index best = 0;
        for (Index k = 1; k < m.cols(); ++k) {
            if (m(i, k) > m(i, best)) best = k;
        }
        out[static_cast<std::size_t>(i)] = static_cast<std::size_t>(best);
    }
    return out;
}

/// One full-resolution mask per tile: each patch's argmax class fills its
/// patch_px x patch_px block.
inline std::vector<LabelMask> assemble_masks(const ProbMatrix& z, const PatchGrid& grid) {
    if (static_cast<std::size_t>(z.rows()) != grid.patches()) {
        throw ShapeError("assemble_masks: " + std::to_string(z.rows()) + " rows for " + std::to_string(grid.num_tiles) +
                         " tiles of " + std::to_string(grid.rows) + "x" + std::to_string(grid.cols) + " patches");
    }
    if (z.cols() > 256) throw ShapeError("assemble_masks: more than 256 classes cannot be stored in a uint8 mask");
    if (grid.patch_px == 0) throw ShapeError("assemble_masks: patch_px must be positive");

    const auto labels = argmax_rows(z);
    const std::size_t px = grid.patch_px;
    std::vector<LabelMask> masks;
    masks.reserve(grid.num_tiles);
    std::size_t patch = 0;
    for (std::size_t t = 0; t < grid.num_tiles; ++t) {
        LabelMask mask(grid.rows * px, grid.cols * px);
        for (std::size_t r = 0; r < grid.rows; ++r) {
            for (std::size_t c = 0; c < grid.cols; ++c, ++patch) {
                const auto label = static_cast<std::uint8_t>(labels[patch]);
                for (std::size_t dr = 0; dr < px; ++dr) {
                    std::fill_n(mask.pixels.begin() + static_cast<std::ptrdiff_t>((r * px + dr) * mask.cols + c * px), px,
                                label);
                }
            }
        }
        masks.push_back(std::move(mask));
    }
    return masks;
}

/// counts[g * C + p]: pixels with ground truth g predicted as p.
struct ConfusionMatrix {
    std::size_t num_classes = 0;
    std::vector<std::uint64_t> counts;

    explicit ConfusionMatrix(std::size_t c = 0) : num_classes(c), counts(c * c, 0) {}

    std::uint64_t& at(std::size_t gt, std::size_t pred) { return counts[gt * num_classes + pred]; }
    std::uint64_t at(std::size_t gt, std::size_t pred) const { return counts[gt * num_classes + pred]; }

    std::uint64_t total() const {
        std::uint64_t s = 0;
        for (auto v : counts) s += v;
        return s;
    }

    ConfusionMatrix& operator+=(const ConfusionMatrix& other) {
        if (other.num_classes != num_classes) throw ShapeError("cannot merge confusion matrices of different size");
        for (std::size_t i = 0; i < counts.size(); ++i) counts[i] += other.counts[i];
        return *this;
    }

    friend bool operator==(const ConfusionMatrix&, const ConfusionMatrix&) = default;
};

/// Adds every pixel of (pred, gt) into cm, skipping gt == ignore_label.
inline void accumulate_confusion(ConfusionMatrix& cm, const LabelMask& pred, const LabelMask& gt,
                                 std::optional<int> ignore_label = std::nullopt) {
    if (pred.rows != gt.rows || pred.cols != gt.cols) {
        throw ShapeError("prediction is " + std::to_string(pred.rows) + "x" + std::to_string(pred.cols) +
                         ", ground truth is " + std::to_string(gt.rows) + "x" + std::to_string(gt.cols));
    }
    const std::size_t c = cm.num_classes;
    for (std::size_t i = 0; i < gt.pixels.size(); ++i) {
        const std::size_t g = gt.pixels[i];
        if (ignore_label && static_cast<int>(g) == *ignore_label) continue;
        const std::size_t p = pred.pixels[i];
        if (g >= c) throw LabelRangeError("ground-truth label " + std::to_string(g) + " >= class count " + std::to_string(c));
        if (p >= c) throw LabelRangeError("predicted label " + std::to_string(p) + " >= class count " + std::to_string(c));
        ++cm.at(g, p);
    }
}

inline ConfusionMatrix accumulate_confusion(const LabelMask& pred, const LabelMask& gt, std::size_t num_classes,
                                            std::optional<int> ignore_label = std::nullopt) {
    ConfusionMatrix cm(num_classes);
    accumulate_confusion(cm, pred, gt, ignore_label);
    return cm;
}

struct IouReport {
    /// NaN where the class has an empty union (neither present nor predicted).
    std::vector<double> iou;
    std::vector<bool> included;
    double miou = std::numeric_limits<double>::quiet_NaN();
    std::vector<std::uint64_t> gt_pixels;
    std::vector<std::uint64_t> pred_pixels;
    std::uint64_t total_pixels = 0;

    std::vector<std::size_t> excluded() const {
        std::vector<std::size_t> out;
        for (std::size_t k = 0; k < included.size(); ++k) {
            if (!included[k]) out.push_back(k);
        }
        return out;
    }
};

/// IoU_c = TP / (TP + FP + FN); mIoU averages the classes with a nonempty union.
inline IouReport iou_scores(const ConfusionMatrix& cm) {
    const std::size_t c = cm.num_classes;
    IouReport r;
    r.iou.assign(c, std::numeric_limits<double>::quiet_NaN());
    r.included.assign(c, false);
    r.gt_pixels.assign(c, 0);
    r.pred_pixels.assign(c, 0);
    for (std::size_t g = 0; g < c; ++g) {
        for (std::size_t p = 0; p < c; ++p) {
            r.gt_pixels[g] += cm.at(g, p);
            r.pred_pixels[p] += cm.at(g, p);
        }
    }
    r.total_pixels = cm.total();

    double sum = 0.0;
    std::size_t used = 0;
    for (std::size_t k = 0; k < c; ++k) {
        const std::uint64_t tp = cm.at(k, k);
        const std::uint64_t uni = r.gt_pixels[k] + r.pred_pixels[k] - tp;
        if (uni == 0) continue;
        r.iou[k] = static_cast<double>(tp) / static_cast<double>(uni);
        r.included[k] = true;
        sum += r.iou[k];
        ++used;
    }
    if (used > 0) r.miou = sum / static_cast<double>(used);
    return r;
}

/// Pixel accuracy of a confusion matrix (trace / total).
inline double pixel_accuracy(const ConfusionMatrix& cm) {
    std::uint64_t hit = 0;
    for (std::size_t k = 0; k < cm.num_classes; ++k) hit += cm.at(k, k);
    const auto total = cm.total();
    return total == 0 ? std::numeric_limits<double>::quiet_NaN() : static_cast<double>(hit) / static_cast<double>(total);
}

inline nlohmann::json report_to_json(const IouReport& r, const std::vector<std::string>& class_names) {
    nlohmann::json classes = nlohmann::json::array();
    for (std::size_t k = 0; k < r.iou.size(); ++k) {
        nlohmann::json e;
        e["name"] = k < class_names.size() ? class_names[k] : std::to_string(k);
        e["iou"] = r.included[k] ? nlohmann::json(r.iou[k]) : nlohmann::json(nullptr);
        e["gt_pixels"] = r.gt_pixels[k];
        e["pred_pixels"] = r.pred_pixels[k];
        classes.push_back(std::move(e));
    }
    nlohmann::json doc;
    doc["classes"] = std::move(classes);
    doc["miou"] = std::isnan(r.miou) ? nlohmann::json(nullptr) : nlohmann::json(r.miou);
    doc["total_pixels"] = r.total_pixels;
    doc["excluded_classes"] = r.excluded();
    return doc;
}

} // namespace coninfer
