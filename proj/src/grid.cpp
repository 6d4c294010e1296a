#include "centerface/grid.hpp"

#include <algorithm>
#include <cmath>

namespace centerface {

void validate(const BBox& box, int num_classes) {
    if (!std::isfinite(box.x1) || !std::isfinite(box.y1) || !std::isfinite(box.x2) ||
        !std::isfinite(box.y2)) {
        throw InputError("box has non-finite coordinates");
    }
    if (!(box.x1 < box.x2) || !(box.y1 < box.y2)) {
        throw InputError("box requires x1 < x2 and y1 < y2");
    }
    if (box.class_id < 0 || box.class_id >= num_classes) {
        throw InputError("box class_id " + std::to_string(box.class_id) + " outside [0, " +
                         std::to_string(num_classes) + ")");
    }
}

void GridConfig::validate() const {
    if (stride < 1) throw InputError("stride must be >= 1");
    if (num_classes < 1) throw InputError("num_classes must be >= 1");
    if (height <= 0 || width <= 0) throw InputError("image dimensions must be positive");
    if (height % stride != 0 || width % stride != 0) {
        throw InputError("image dimensions " + std::to_string(height) + "x" +
                         std::to_string(width) + " not divisible by stride " +
                         std::to_string(stride));
    }
}

Keypoint center_of(const BBox& box) {
    return {(box.x1 + box.x2) / 2.0, (box.y1 + box.y2) / 2.0};
}

std::pair<GridIndex, Offset> project_to_grid(const Keypoint& p, const GridConfig& cfg) {
    if (!(p.px >= 0 && p.px < cfg.width && p.py >= 0 && p.py < cfg.height)) {
        throw InputError("keypoint (" + std::to_string(p.px) + ", " + std::to_string(p.py) +
                         ") outside image bounds");
    }
    const double s = cfg.stride;
    const double gx = p.px / s;
    const double gy = p.py / s;
    const double fx = std::floor(gx);
    const double fy = std::floor(gy);
    return {GridIndex{static_cast<int>(fy), static_cast<int>(fx)}, Offset{gx - fx, gy - fy}};
}

Keypoint grid_to_image(const GridIndex& idx, const Offset& offset, const GridConfig& cfg) {
    const double s = cfg.stride;
    return {(idx.j + offset.dx) * s, (idx.i + offset.dy) * s};
}

bool clamp_to_image(BBox& box, const GridConfig& cfg) {
    box.x1 = std::clamp(box.x1, 0.0, static_cast<double>(cfg.width));
    box.x2 = std::clamp(box.x2, 0.0, static_cast<double>(cfg.width));
    box.y1 = std::clamp(box.y1, 0.0, static_cast<double>(cfg.height));
    box.y2 = std::clamp(box.y2, 0.0, static_cast<double>(cfg.height));
    return box.x1 < box.x2 && box.y1 < box.y2;
}

std::vector<BBox> clamp_annotations(const std::vector<BBox>& boxes, const GridConfig& cfg) {
    std::vector<BBox> out;
    out.reserve(boxes.size());
    for (BBox b : boxes) {
        if (clamp_to_image(b, cfg)) out.push_back(b);
    }
    return out;
}

CellRange box_cells(const BBox& box, const GridConfig& cfg) {
    const double s = cfg.stride;
    CellRange r;
    r.j0 = std::max(0, static_cast<int>(std::floor(box.x1 / s)));
    r.j1 = std::min(cfg.grid_width(), static_cast<int>(std::ceil(box.x2 / s)));
    r.i0 = std::max(0, static_cast<int>(std::floor(box.y1 / s)));
    r.i1 = std::min(cfg.grid_height(), static_cast<int>(std::ceil(box.y2 / s)));
    return r;
}

}  // namespace centerface
