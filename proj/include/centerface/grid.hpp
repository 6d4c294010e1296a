#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace centerface {

// Input that violates a documented precondition (bad box, out-of-bounds point, bad dims).
class InputError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

// Internal misuse: mismatched shapes, ops mixed across tapes.
class ContractError : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

enum class ClassId : int { Face = 0, MaskedFace = 1 };

inline constexpr int kDefaultNumClasses = 2;
inline constexpr int kDefaultStride = 4;

/// Axis-aligned box in image pixels. Origin top-left, max edges exclusive.
struct BBox {
    double x1 = 0, y1 = 0, x2 = 0, y2 = 0;
    int class_id = 0;

    double width() const { return x2 - x1; }
    double height() const { return y2 - y1; }
    double area() const { return width() * height(); }
    bool operator==(const BBox&) const = default;
};

/// Throws InputError unless x1 < x2, y1 < y2, coordinates finite and class in [0, num_classes).
void validate(const BBox& box, int num_classes = kDefaultNumClasses);

struct Keypoint {
    double px = 0, py = 0;
    bool operator==(const Keypoint&) const = default;
};

/// Cell on the stride grid: i is the row (y), j the column (x).
struct GridIndex {
    int i = 0, j = 0;
    auto operator<=>(const GridIndex&) const = default;
};

/// Sub-cell residue; dx is horizontal, dy vertical. Both in [0, 1).
struct Offset {
    double dx = 0, dy = 0;
    bool operator==(const Offset&) const = default;
};

struct GridConfig {
    int height = 64;
    int width = 64;
    int stride = kDefaultStride;
    int num_classes = kDefaultNumClasses;

    int grid_height() const { return height / stride; }
    int grid_width() const { return width / stride; }
    void validate() const;
};

Keypoint center_of(const BBox& box);

/// Floor-divides by the stride. The residue lands in the offset.
std::pair<GridIndex, Offset> project_to_grid(const Keypoint& p, const GridConfig& cfg);

Keypoint grid_to_image(const GridIndex& idx, const Offset& offset, const GridConfig& cfg);

/// Clamps to [0,W]x[0,H]; returns false when the clamped box is degenerate.
bool clamp_to_image(BBox& box, const GridConfig& cfg);

/// Clamps every box and drops the degenerate ones.
std::vector<BBox> clamp_annotations(const std::vector<BBox>& boxes, const GridConfig& cfg);

/// Grid cells touched by the box: columns floor(x1/s) .. ceil(x2/s)-1, same for rows.
struct CellRange {
    int i0 = 0, i1 = 0;  // rows [i0, i1)
    int j0 = 0, j1 = 0;  // cols [j0, j1)
    bool empty() const { return i0 >= i1 || j0 >= j1; }
};
CellRange box_cells(const BBox& box, const GridConfig& cfg);

}  // namespace centerface
