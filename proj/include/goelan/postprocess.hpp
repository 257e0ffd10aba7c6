#pragma once

// Raw head outputs -> final detections: decode, confidence filtering and
// greedy non-maximum suppression with deterministic tie-breaking.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "goelan/types.hpp"

namespace goelan {

inline double iou(const BBox& a, const BBox& b) {
    const double ix1 = std::max(a.x1, b.x1);
    const double iy1 = std::max(a.y1, b.y1);
    const double ix2 = std::min(a.x2, b.x2);
    const double iy2 = std::min(a.y2, b.y2);
    const double iw = std::max(0.0, ix2 - ix1);
    const double ih = std::max(0.0, iy2 - iy1);
    const double inter = iw * ih;
    const double uni = a.area() + b.area() - inter;
    return uni > 0 ? inter / uni : 0.0;
}

namespace detail {

// score desc, then class asc, then x1 asc: platform-stable ordering.
inline bool detection_order(const Detection& a, const Detection& b) {
    if (a.score != b.score) return a.score > b.score;
    if (a.class_id != b.class_id) return a.class_id < b.class_id;
    return a.box.x1 < b.box.x1;
}

}  // namespace detail

// Greedy NMS: keep a detection iff its IoU with every previously kept
// detection (of the same class, when class_aware) stays below iou_thresh.
inline std::vector<Detection> nms(std::vector<Detection> dets, double iou_thresh,
                                  bool class_aware = true) {
    if (iou_thresh <= 0.0 || iou_thresh > 1.0) fail_config("nms: iou_thresh must be in (0,1]");
    std::stable_sort(dets.begin(), dets.end(), detail::detection_order);
    std::vector<Detection> kept;
    kept.reserve(dets.size());
    for (const auto& d : dets) {
        bool keep = true;
        for (const auto& k : kept) {
            if (class_aware && k.class_id != d.class_id) continue;
            if (iou(d.box, k.box) >= iou_thresh) {
                keep = false;
                break;
            }
        }
        if (keep) kept.push_back(d);
    }
    return kept;
}

namespace detail {

template <class T>
inline double sigmoid_d(T v) {
    return 1.0 / (1.0 + std::exp(-double(v)));
}

}  // namespace detail

// Decode one image of a raw prediction. Per cell: score = objectness x max
// class probability (softmax); box mapped from cell-relative units to pixel
// corners and clipped to image bounds; entries below conf_thresh dropped.
template <class T>
std::vector<Detection> decode_image(const RawPrediction<T>& raw, int image_index,
                                    double conf_thresh, int input_size) {
    if (conf_thresh < 0.0 || conf_thresh > 1.0) fail_config("decode: conf_thresh must be in [0,1]");
    std::vector<Detection> out;
    const int C = raw.class_count;
    for (std::size_t si = 0; si < raw.scales.size(); ++si) {
        const Tensor<T>& t = raw.scales[si];
        const int stride = raw.strides[si];
        const int H = t.h(), W = t.w();
        if (image_index < 0 || image_index >= t.n()) fail_shape("decode: bad image index");
        for (int y = 0; y < H; ++y)
            for (int x = 0; x < W; ++x) {
                const double obj = detail::sigmoid_d(t.at(image_index, kObjChannel, y, x));
                // softmax over class logits
                double mx = -1e30;
                for (int c = 0; c < C; ++c)
                    mx = std::max(mx, double(t.at(image_index, kClassChannelOffset + c, y, x)));
                double denom = 0.0;
                for (int c = 0; c < C; ++c)
                    denom += std::exp(double(t.at(image_index, kClassChannelOffset + c, y, x)) - mx);
                int best_c = 0;
                double best_p = 0.0;
                for (int c = 0; c < C; ++c) {
                    const double p =
                        std::exp(double(t.at(image_index, kClassChannelOffset + c, y, x)) - mx) /
                        denom;
                    if (p > best_p) {
                        best_p = p;
                        best_c = c;
                    }
                }
                const double score = obj * best_p;
                if (score < conf_thresh) continue;
                const double ox = detail::sigmoid_d(t.at(image_index, 0, y, x));
                const double oy = detail::sigmoid_d(t.at(image_index, 1, y, x));
                const double sw = detail::sigmoid_d(t.at(image_index, 2, y, x));
                const double sh = detail::sigmoid_d(t.at(image_index, 3, y, x));
                const double cx = (x + ox) * stride;
                const double cy = (y + oy) * stride;
                const double bw = sw * sw * input_size;  // sqrt-parameterized width
                const double bh = sh * sh * input_size;
                BBox box = BBox::from_center(cx, cy, bw, bh).clipped(input_size, input_size);
                if (!box.valid()) continue;
                out.push_back({box, best_c, score});
            }
    }
    return out;
}

// Single-image convenience (the common unit-test surface).
template <class T>
std::vector<Detection> decode(const RawPrediction<T>& raw, double conf_thresh, int input_size) {
    return decode_image(raw, 0, conf_thresh, input_size);
}

template <class T>
std::vector<std::vector<Detection>> decode_batch(const RawPrediction<T>& raw, double conf_thresh,
                                                 int input_size) {
    std::vector<std::vector<Detection>> out;
    if (raw.empty()) return out;
    const int B = raw.scales[0].n();
    out.reserve(B);
    for (int b = 0; b < B; ++b) out.push_back(decode_image(raw, b, conf_thresh, input_size));
    return out;
}

}  // namespace goelan
