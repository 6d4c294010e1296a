#pragma once

#include <vector>

#include "centerface/grid.hpp"
#include "centerface/tensor.hpp"

namespace centerface {

struct Detection {
    BBox box;
    double score = 0;
};

struct DecodeConfig {
    double score_threshold = 0.3;
    int top_k = 100;
    int peak_window = 3;  // odd

    void validate() const;
};

struct Peak {
    GridIndex cell;
    int class_id = 0;
    double score = 0;
};

/// Cells equal to the max of their window (same channel) and >= threshold,
/// by descending score then (class, i, j). Plateaus keep every cell.
std::vector<Peak> peak_extract(const Heatmap& heatmap, const DecodeConfig& cfg);

/// Box per peak: center ((j, i) + offset) * stride, extent +/- size / 2,
/// clamped to the image. No box-level suppression.
std::vector<Detection> decode(const PredictionPack& pred, const DecodeConfig& cfg,
                              const GridConfig& grid);

}  // namespace centerface
