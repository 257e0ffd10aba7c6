#pragma once

// Evaluation suite: greedy detection/GT matching, per-class average
// precision with all-points interpolation, mAP over an IoU range, macro
// precision/recall/F1 and the (C+1)x(C+1) detection confusion matrix.

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include "goelan/postprocess.hpp"

namespace goelan {

struct MatchResult {
    std::vector<int> det_to_gt;  // aligned with the input detection order; -1 = FP
    std::vector<int> gt_to_det;  // -1 = FN
    int tp = 0, fp = 0, fn = 0;
};

// Greedy one-to-one matching: detections in descending score order, each
// takes the unmatched same-class GT with the highest IoU >= iou_thresh
// (ties by lowest GT index).
inline MatchResult match_detections(const std::vector<Detection>& dets,
                                    const std::vector<GroundTruthObject>& gts,
                                    double iou_thresh, int image_size) {
    MatchResult r;
    r.det_to_gt.assign(dets.size(), -1);
    r.gt_to_det.assign(gts.size(), -1);

    std::vector<int> order(dets.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = int(i);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
        return detail::detection_order(dets[a], dets[b]);
    });

    std::vector<BBox> gt_boxes(gts.size());
    for (std::size_t g = 0; g < gts.size(); ++g)
        gt_boxes[g] = gts[g].to_pixels(image_size, image_size);

    for (int di : order) {
        const Detection& d = dets[di];
        double best = iou_thresh;
        int best_g = -1;
        for (std::size_t g = 0; g < gts.size(); ++g) {
            if (r.gt_to_det[g] >= 0 || gts[g].class_id != d.class_id) continue;
            const double v = iou(d.box, gt_boxes[g]);
            if (v > best || (v == best && v >= iou_thresh && best_g == -1)) {
                best = v;
                best_g = int(g);
            }
        }
        if (best_g >= 0) {
            r.det_to_gt[di] = best_g;
            r.gt_to_det[best_g] = di;
            ++r.tp;
        } else {
            ++r.fp;
        }
    }
    r.fn = int(gts.size()) - r.tp;
    return r;
}

struct ScoredFlag {
    double score = 0;
    bool tp = false;
};

// Area under the precision-recall curve, all-points interpolation with the
// monotone precision envelope. Undefined (throws) when n_gt == 0.
inline double average_precision(std::vector<ScoredFlag> records, std::int64_t n_gt) {
    if (n_gt <= 0) fail_config("average_precision: no ground truth instances for this class");
    if (records.empty()) return 0.0;
    std::stable_sort(records.begin(), records.end(),
                     [](const ScoredFlag& a, const ScoredFlag& b) { return a.score > b.score; });
    const std::size_t n = records.size();
    std::vector<double> precision(n), recall(n);
    std::int64_t tp = 0, fp = 0;
    for (std::size_t i = 0; i < n; ++i) {
        records[i].tp ? ++tp : ++fp;
        precision[i] = double(tp) / double(tp + fp);
        recall[i] = double(tp) / double(n_gt);
    }
    for (std::size_t i = n - 1; i-- > 0;)
        precision[i] = std::max(precision[i], precision[i + 1]);
    double ap = 0.0, prev_r = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        ap += (recall[i] - prev_r) * precision[i];
        prev_r = recall[i];
    }
    return ap;
}

struct PrPoint {
    int class_id = 0;
    double score = 0, recall = 0, precision = 0;
};

struct EvalReport {
    std::vector<double> iou_thresholds;            // 0.50 .. 0.95 step 0.05
    std::vector<std::vector<double>> ap;           // [threshold][class]; NaN = no GT
    std::vector<std::int64_t> gt_per_class;
    std::vector<double> map_at;                    // mean AP per threshold
    double map50 = 0;
    double map5095 = 0;   // mean over the 0.50:0.95 range
    double map95 = 0;     // single-threshold AP at IoU 0.95
    double precision = 0; // macro, at conf_thresh / IoU 0.5
    double recall = 0;
    double f1 = 0;
    double conf_thresh = 0.25;
    std::vector<std::vector<double>> confusion;    // (C+1)x(C+1), background last
    std::vector<PrPoint> pr_curve;                 // raw staircase at IoU 0.5
    int class_count = 0;
    int images = 0;

    std::string to_kv_text(const std::vector<std::string>& names = {}) const {
        std::ostringstream os;
        os << std::setprecision(10);
        os << "images: " << images << "\n";
        os << "classes: " << class_count << "\n";
        os << "conf_thresh: " << conf_thresh << "\n";
        os << "precision: " << precision << "\n";
        os << "recall: " << recall << "\n";
        os << "f1: " << f1 << "\n";
        os << "map50: " << map50 << "\n";
        os << "map50_95: " << map5095 << "\n";
        os << "map95: " << map95 << "\n";
        for (std::size_t t = 0; t < iou_thresholds.size(); ++t)
            os << "map@" << iou_thresholds[t] << ": " << map_at[t] << "\n";
        for (int c = 0; c < class_count; ++c) {
            os << "ap50.class" << c;
            if (!names.empty()) os << "." << names[c];
            if (std::isnan(ap[0][c]))
                os << ": excluded (no ground truth)\n";
            else
                os << ": " << ap[0][c] << "\n";
        }
        return os.str();
    }

    std::string confusion_csv(const std::vector<std::string>& names = {}) const {
        std::ostringstream os;
        auto label = [&](int i) {
            if (i == class_count) return std::string("background");
            return names.empty() ? "class" + std::to_string(i) : names[i];
        };
        os << "predicted\\true";
        for (int j = 0; j <= class_count; ++j) os << "," << label(j);
        os << "\n";
        for (int i = 0; i <= class_count; ++i) {
            os << label(i);
            for (int j = 0; j <= class_count; ++j) os << "," << confusion[i][j];
            os << "\n";
        }
        return os.str();
    }

    std::string pr_curve_csv() const {
        std::ostringstream os;
        os << "class,score,recall,precision\n" << std::setprecision(10);
        for (const auto& p : pr_curve)
            os << p.class_id << "," << p.score << "," << p.recall << "," << p.precision << "\n";
        return os.str();
    }
};

// Detection confusion matrix. Matching here is class-agnostic (greedy by
// score, IoU >= iou_thresh); a cross-class match lands off the diagonal,
// unmatched GTs land in the background row, unmatched detections in the
// background column.
inline std::vector<std::vector<double>> confusion_matrix(
    const std::vector<std::vector<Detection>>& dets_per_image,
    const std::vector<std::vector<GroundTruthObject>>& gts_per_image, int class_count,
    int image_size, double conf_thresh, double iou_thresh, bool normalize_columns = false) {
    std::vector<std::vector<double>> cm(class_count + 1,
                                        std::vector<double>(class_count + 1, 0.0));
    for (std::size_t img = 0; img < gts_per_image.size(); ++img) {
        std::vector<Detection> dets;
        if (img < dets_per_image.size())
            for (const auto& d : dets_per_image[img])
                if (d.score >= conf_thresh) dets.push_back(d);
        std::stable_sort(dets.begin(), dets.end(), detail::detection_order);
        const auto& gts = gts_per_image[img];
        std::vector<BBox> gt_boxes(gts.size());
        for (std::size_t g = 0; g < gts.size(); ++g)
            gt_boxes[g] = gts[g].to_pixels(image_size, image_size);
        std::vector<bool> gt_used(gts.size(), false);
        for (const auto& d : dets) {
            double best = iou_thresh;
            int best_g = -1;
            for (std::size_t g = 0; g < gts.size(); ++g) {
                if (gt_used[g]) continue;
                const double v = iou(d.box, gt_boxes[g]);
                if (v > best || (v == best && v >= iou_thresh && best_g == -1)) {
                    best = v;
                    best_g = int(g);
                }
            }
            if (best_g >= 0) {
                gt_used[best_g] = true;
                cm[d.class_id][gts[best_g].class_id] += 1.0;
            } else {
                cm[d.class_id][class_count] += 1.0;
            }
        }
        for (std::size_t g = 0; g < gts.size(); ++g)
            if (!gt_used[g]) cm[class_count][gts[g].class_id] += 1.0;
    }
    if (normalize_columns) {
        for (int j = 0; j <= class_count; ++j) {
            double s = 0;
            for (int i = 0; i <= class_count; ++i) s += cm[i][j];
            if (s > 0)
                for (int i = 0; i <= class_count; ++i) cm[i][j] /= s;
        }
    }
    return cm;
}

inline double f1_score(double precision, double recall) {
    const double s = precision + recall;
    return s > 0 ? 2.0 * precision * recall / s : 0.0;
}

// Full evaluation. Detections should be decoded at a low threshold so the
// PR curve is well populated; precision/recall/F1 and the confusion matrix
// are computed at `conf_thresh`. Classes without GT instances are excluded
// from every mAP mean but stay in the confusion matrix.
inline EvalReport evaluate(const std::vector<std::vector<Detection>>& dets_per_image,
                           const std::vector<std::vector<GroundTruthObject>>& gts_per_image,
                           int class_count, int image_size, double conf_thresh,
                           double confusion_iou = 0.5) {
    if (gts_per_image.empty()) fail_config("evaluate: empty dataset");
    if (dets_per_image.size() != gts_per_image.size())
        fail_shape("evaluate: detections for ", dets_per_image.size(), " images vs ",
                   gts_per_image.size(), " ground-truth images");

    EvalReport rep;
    rep.class_count = class_count;
    rep.images = int(gts_per_image.size());
    rep.conf_thresh = conf_thresh;
    for (int t = 0; t < 10; ++t) rep.iou_thresholds.push_back(0.50 + 0.05 * t);

    rep.gt_per_class.assign(class_count, 0);
    for (const auto& gts : gts_per_image)
        for (const auto& g : gts) {
            if (g.class_id < 0 || g.class_id >= class_count)
                fail_config("evaluate: ground-truth class ", g.class_id, " out of range");
            ++rep.gt_per_class[g.class_id];
        }

    rep.ap.assign(rep.iou_thresholds.size(), std::vector<double>(class_count, 0.0));
    rep.map_at.assign(rep.iou_thresholds.size(), 0.0);

    for (std::size_t t = 0; t < rep.iou_thresholds.size(); ++t) {
        const double tau = rep.iou_thresholds[t];
        std::vector<std::vector<ScoredFlag>> per_class(class_count);
        for (std::size_t img = 0; img < gts_per_image.size(); ++img) {
            const auto& dets = dets_per_image[img];
            const auto m = match_detections(dets, gts_per_image[img], tau, image_size);
            for (std::size_t d = 0; d < dets.size(); ++d)
                per_class[dets[d].class_id].push_back({dets[d].score, m.det_to_gt[d] >= 0});
        }
        double sum = 0;
        int counted = 0;
        for (int c = 0; c < class_count; ++c) {
            if (rep.gt_per_class[c] == 0) {
                rep.ap[t][c] = std::nan("");
                continue;
            }
            rep.ap[t][c] = average_precision(per_class[c], rep.gt_per_class[c]);
            sum += rep.ap[t][c];
            ++counted;
        }
        rep.map_at[t] = counted > 0 ? sum / counted : 0.0;

        if (t == 0) {
            // PR staircase at IoU 0.5 for plotting
            for (int c = 0; c < class_count; ++c) {
                if (rep.gt_per_class[c] == 0) continue;
                auto recs = per_class[c];
                std::stable_sort(recs.begin(), recs.end(),
                                 [](const ScoredFlag& a, const ScoredFlag& b) {
                                     return a.score > b.score;
                                 });
                std::int64_t tp = 0, fp = 0;
                for (const auto& r : recs) {
                    r.tp ? ++tp : ++fp;
                    rep.pr_curve.push_back({c, r.score, double(tp) / rep.gt_per_class[c],
                                            double(tp) / double(tp + fp)});
                }
            }
        }
    }
    rep.map50 = rep.map_at[0];
    rep.map95 = rep.map_at[9];
    double s = 0;
    for (double m : rep.map_at) s += m;
    rep.map5095 = s / double(rep.map_at.size());

    // macro precision / recall / F1 at conf_thresh, IoU 0.5
    std::vector<std::int64_t> tp_c(class_count, 0), fp_c(class_count, 0);
    for (std::size_t img = 0; img < gts_per_image.size(); ++img) {
        std::vector<Detection> kept;
        for (const auto& d : dets_per_image[img])
            if (d.score >= conf_thresh) kept.push_back(d);
        const auto m = match_detections(kept, gts_per_image[img], 0.5, image_size);
        for (std::size_t d = 0; d < kept.size(); ++d)
            m.det_to_gt[d] >= 0 ? ++tp_c[kept[d].class_id] : ++fp_c[kept[d].class_id];
    }
    double psum = 0, rsum = 0;
    int counted = 0;
    for (int c = 0; c < class_count; ++c) {
        if (rep.gt_per_class[c] == 0) continue;
        const std::int64_t den = tp_c[c] + fp_c[c];
        psum += den > 0 ? double(tp_c[c]) / double(den) : 0.0;
        rsum += double(tp_c[c]) / double(rep.gt_per_class[c]);
        ++counted;
    }
    rep.precision = counted > 0 ? psum / counted : 0.0;
    rep.recall = counted > 0 ? rsum / counted : 0.0;
    rep.f1 = f1_score(rep.precision, rep.recall);

    rep.confusion = confusion_matrix(dets_per_image, gts_per_image, class_count, image_size,
                                     conf_thresh, confusion_iou);
    return rep;
}

}  // namespace goelan
