#pragma once

// Shared plain types: boxes, detections, ground truth and raw head outputs.

#include <vector>

#include "goelan/tensor.hpp"

namespace goelan {

// Axis-aligned box in pixel units, corner convention (x1 < x2, y1 < y2).
struct BBox {
    double x1 = 0, y1 = 0, x2 = 0, y2 = 0;

    double width() const { return x2 - x1; }
    double height() const { return y2 - y1; }
    double area() const { return width() * height(); }
    bool valid() const {
        return std::isfinite(x1) && std::isfinite(y1) && std::isfinite(x2) &&
               std::isfinite(y2) && x2 > x1 && y2 > y1;
    }

    static BBox from_center(double cx, double cy, double w, double h) {
        return {cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2};
    }

    BBox clipped(double w, double h) const {
        return {std::max(0.0, std::min(x1, w)), std::max(0.0, std::min(y1, h)),
                std::max(0.0, std::min(x2, w)), std::max(0.0, std::min(y2, h))};
    }
};

struct Detection {
    BBox box;
    int class_id = 0;
    double score = 0;  // in [0,1]
};

// Annotation record, normalized center format (all coords in [0,1]).
struct GroundTruthObject {
    int class_id = 0;
    double cx = 0, cy = 0, w = 0, h = 0;

    BBox to_pixels(double img_w, double img_h) const {
        return BBox::from_center(cx * img_w, cy * img_h, w * img_w, h * img_h);
    }
};

// Raw head outputs: one (batch, 4+1+C [+4*dfl_bins], H_s, W_s) tensor per
// head stride s. Channel layout: box logits (tx,ty,tw,th), objectness,
// class logits, then optional per-side DFL bin logits.
template <class T>
struct RawPrediction {
    std::vector<Tensor<T>> scales;
    std::vector<int> strides;
    int class_count = 0;
    int dfl_bins = 0;  // 0 when the DFL head is disabled

    bool empty() const { return scales.empty(); }
    int channels() const { return 4 + 1 + class_count + 4 * dfl_bins; }
};

inline constexpr int kBoxChannels = 4;
inline constexpr int kObjChannel = 4;
inline constexpr int kClassChannelOffset = 5;

}  // namespace goelan
