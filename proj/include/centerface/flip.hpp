#pragma once

#include <vector>

#include "centerface/grid.hpp"
#include "centerface/tensor.hpp"

namespace centerface {

/// Center cell of one object in the original image and in its mirror.
struct CenterPair {
    GridIndex original;
    GridIndex flipped;
    bool operator==(const CenterPair&) const = default;
};

struct FlipPair {
    ImageTensor image;
    std::vector<BBox> boxes;
    ImageTensor flipped_image;
    std::vector<BBox> flipped_boxes;
    std::vector<CenterPair> center_pairs;
};

/// Column j -> W-1-j on every channel.
ImageTensor flip_image(const ImageTensor& image);

/// x1' = W - x2, x2' = W - x1; y and class unchanged.
BBox flip_box(const BBox& box, int image_width);
std::vector<BBox> flip_boxes(const std::vector<BBox>& boxes, int image_width);

/// Pairs each box's center cell with the center cell of its mirrored box.
/// The flipped side uses the mirrored box's own projection, not j -> W'-1-j.
std::vector<CenterPair> match_centers(const std::vector<BBox>& boxes, const GridConfig& cfg);

/// Offsets are measured from the cell corner, so a center at j + f mirrors to
/// j' + f' with (j + f) + (j' + f') = W'. Under the plain negation rule an exactly
/// mirrored predictor still pays for the residue W' - j - j' (1 unless f == 0).
/// Returns a 2-channel field holding that residue in channel 0 at each flipped
/// center cell; subtracting it from the flipped offsets makes the negation exact.
Field2 flip_offset_residue(const std::vector<CenterPair>& pairs, int grid_height, int grid_width);

/// Boxes are clamped first so the pair list matches encode_targets object order.
FlipPair flip_sample(const ImageTensor& image, const std::vector<BBox>& boxes,
                     const GridConfig& cfg);

/// Mirrors heatmap columns; class channels are untouched.
Heatmap flip_back_heatmap(const Heatmap& flipped);

struct RegressionFields {
    Field2 offsets;
    Field2 sizes;
};

/// Mirrors both fields and negates the horizontal offset channel.
RegressionFields flip_back_regression(const Field2& offsets_flipped, const Field2& sizes_flipped);

}  // namespace centerface
