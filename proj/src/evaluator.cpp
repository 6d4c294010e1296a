#include "centerface/evaluator.hpp"

#include <algorithm>

namespace centerface {

double iou(const BBox& a, const BBox& b) {
    const double iw = std::min(a.x2, b.x2) - std::max(a.x1, b.x1);
    const double ih = std::min(a.y2, b.y2) - std::max(a.y1, b.y1);
    if (iw <= 0 || ih <= 0) return 0.0;
    const double inter = iw * ih;
    const double uni = a.area() + b.area() - inter;
    return uni > 0 ? inter / uni : 0.0;
}

MatchCounts& MatchCounts::operator+=(const MatchCounts& o) {
    if (per_class.size() < o.per_class.size()) per_class.resize(o.per_class.size());
    for (std::size_t c = 0; c < o.per_class.size(); ++c) per_class[c] += o.per_class[c];
    return *this;
}

MatchCounts match_detections(std::vector<Detection> detections, const std::vector<BBox>& gts,
                             double iou_threshold, int num_classes) {
    MatchCounts counts(num_classes);
    std::stable_sort(detections.begin(), detections.end(),
                     [](const Detection& a, const Detection& b) { return a.score > b.score; });
    std::vector<bool> taken(gts.size(), false);
    for (const Detection& d : detections) {
        const int c = d.box.class_id;
        if (c < 0 || c >= num_classes) throw InputError("detection class outside [0, num_classes)");
        int best = -1;
        double best_iou = -1;
        for (std::size_t g = 0; g < gts.size(); ++g) {
            if (taken[g] || gts[g].class_id != c) continue;
            const double v = iou(d.box, gts[g]);
            if (v >= iou_threshold && v > best_iou) {
                best = static_cast<int>(g);
                best_iou = v;
            }
        }
        if (best >= 0) {
            taken[best] = true;
            ++counts.per_class[c].tp;
        } else {
            ++counts.per_class[c].fp;
        }
    }
    for (std::size_t g = 0; g < gts.size(); ++g) {
        const int c = gts[g].class_id;
        if (c < 0 || c >= num_classes) throw InputError("groundtruth class outside [0, num_classes)");
        if (!taken[g]) ++counts.per_class[c].fn;
    }
    return counts;
}

double ClassMetrics::f1() const {
    return precision + recall > 0 ? 2 * precision * recall / (precision + recall) : 0.0;
}

double EvalReport::mean_f1() const {
    if (per_class.empty()) return 0.0;
    double acc = 0;
    for (const auto& m : per_class) acc += m.f1();
    return acc / static_cast<double>(per_class.size());
}

double EvalReport::min_precision() const {
    double v = 1.0;
    for (const auto& m : per_class) v = std::min(v, m.precision);
    return v;
}

double EvalReport::min_recall() const {
    double v = 1.0;
    for (const auto& m : per_class) v = std::min(v, m.recall);
    return v;
}

EvalReport precision_recall(const MatchCounts& counts, double iou_threshold) {
    EvalReport report;
    report.iou_threshold = iou_threshold;
    for (const ClassCounts& c : counts.per_class) {
        if (c.tp < 0 || c.fp < 0 || c.fn < 0) throw InputError("negative match counts");
        ClassMetrics m;
        m.counts = c;
        m.precision = c.tp + c.fp == 0 ? 1.0 : static_cast<double>(c.tp) / (c.tp + c.fp);
        m.recall = c.tp + c.fn == 0 ? 1.0 : static_cast<double>(c.tp) / (c.tp + c.fn);
        report.per_class.push_back(m);
    }
    return report;
}

}  // namespace centerface
