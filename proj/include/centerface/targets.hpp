#pragma once

#include <vector>

#include "centerface/grid.hpp"
#include "centerface/tensor.hpp"

namespace centerface {

inline constexpr double kDefaultMinOverlap = 0.7;

/// One encoded object: its center cell, sub-cell residue and pixel size.
struct ObjectTarget {
    GridIndex cell;
    int class_id = 0;
    Offset offset;
    double width = 0;   // pixels
    double height = 0;  // pixels
};

struct TargetPack {
    Heatmap heatmap;                   // c x H' x W'
    std::vector<ObjectTarget> objects; // one per clamped annotation
    std::vector<bool> mask;            // H' x W', row-major
    int grid_height = 0;
    int grid_width = 0;
    int stride = kDefaultStride;

    int n_objects() const { return static_cast<int>(objects.size()); }
    bool mask_at(int i, int j) const { return mask[static_cast<std::size_t>(i) * grid_width + j]; }
    int mask_count() const;
};

struct EncoderOptions {
    double min_overlap = kDefaultMinOverlap;
    // Grows the foreground mask by this many cells (Chebyshev). 0 keeps the plain box union.
    int mask_dilation = 0;
};

/// Largest corner displacement r that keeps IoU >= min_overlap under the
/// translate / shrink / grow corner configurations. Dimensions in grid cells.
double corner_radius(double box_w, double box_h, double min_overlap = kDefaultMinOverlap);

/// Gaussian std-dev for a box of the given grid size: corner_radius / 3.
double gaussian_sigma(double box_w, double box_h, double min_overlap = kDefaultMinOverlap);

/// Writes max(old, exp(-((i-ci)^2 + (j-cj)^2) / (2 sigma^2))) into channel class_id.
void splat_gaussian(Heatmap& heatmap, const GridIndex& center, int class_id, double sigma);

/// Annotations are clamped to the image first; degenerate boxes are dropped.
TargetPack encode_targets(const std::vector<BBox>& annotations, const GridConfig& cfg,
                          const EncoderOptions& opts = {});

}  // namespace centerface
