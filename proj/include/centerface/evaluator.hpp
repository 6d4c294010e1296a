#pragma once

#include <vector>

#include "centerface/decoder.hpp"
#include "centerface/grid.hpp"

namespace centerface {

double iou(const BBox& a, const BBox& b);

struct ClassCounts {
    int tp = 0;
    int fp = 0;
    int fn = 0;

    ClassCounts& operator+=(const ClassCounts& o) {
        tp += o.tp;
        fp += o.fp;
        fn += o.fn;
        return *this;
    }
    bool operator==(const ClassCounts&) const = default;
};

struct MatchCounts {
    std::vector<ClassCounts> per_class;

    explicit MatchCounts(int num_classes = kDefaultNumClasses) : per_class(num_classes) {}
    MatchCounts& operator+=(const MatchCounts& o);
};

/// Greedy score-ordered matching within each class. A detection takes the
/// highest-IoU unmatched groundtruth with IoU >= threshold (TP) or counts as
/// FP; leftover groundtruth counts as FN. Equal scores keep input order.
MatchCounts match_detections(std::vector<Detection> detections, const std::vector<BBox>& gts,
                             double iou_threshold, int num_classes = kDefaultNumClasses);

struct ClassMetrics {
    ClassCounts counts;
    double precision = 1;
    double recall = 1;
    double f1() const;
};

struct EvalReport {
    std::vector<ClassMetrics> per_class;
    double iou_threshold = 0.5;

    double mean_f1() const;
    double min_precision() const;
    double min_recall() const;
};

/// TP / (TP + FP) and TP / (TP + FN); 0/0 is 1.
EvalReport precision_recall(const MatchCounts& counts, double iou_threshold);

}  // namespace centerface
