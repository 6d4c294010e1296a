#include "centerface/flip.hpp"

namespace centerface {

namespace {

Tensor mirror_columns(const Tensor& t, int negate_channel) {
    Tensor out(t.channels, t.height, t.width);
    const int w = t.width;
    for (int c = 0; c < t.channels; ++c) {
        const double sign = c == negate_channel ? -1.0 : 1.0;
        for (int i = 0; i < t.height; ++i) {
            for (int j = 0; j < w; ++j) out(c, i, j) = sign * t(c, i, w - 1 - j);
        }
    }
    return out;
}

}  // namespace

ImageTensor flip_image(const ImageTensor& image) { return mirror_columns(image, -1); }

BBox flip_box(const BBox& box, int image_width) {
    BBox out = box;
    out.x1 = image_width - box.x2;
    out.x2 = image_width - box.x1;
    return out;
}

std::vector<BBox> flip_boxes(const std::vector<BBox>& boxes, int image_width) {
    std::vector<BBox> out;
    out.reserve(boxes.size());
    for (const BBox& b : boxes) out.push_back(flip_box(b, image_width));
    return out;
}

std::vector<CenterPair> match_centers(const std::vector<BBox>& boxes, const GridConfig& cfg) {
    std::vector<CenterPair> pairs;
    pairs.reserve(boxes.size());
    for (const BBox& b : boxes) {
        const GridIndex orig = project_to_grid(center_of(b), cfg).first;
        const GridIndex mirrored = project_to_grid(center_of(flip_box(b, cfg.width)), cfg).first;
        pairs.push_back({orig, mirrored});
    }
    return pairs;
}

Field2 flip_offset_residue(const std::vector<CenterPair>& pairs, int grid_height, int grid_width) {
    Field2 r(2, grid_height, grid_width, 0.0);
    for (const CenterPair& p : pairs) {
        r(0, p.flipped.i, p.flipped.j) = grid_width - p.original.j - p.flipped.j;
    }
    return r;
}

FlipPair flip_sample(const ImageTensor& image, const std::vector<BBox>& boxes,
                     const GridConfig& cfg) {
    if (image.width != cfg.width || image.height != cfg.height) {
        throw InputError("image size does not match grid config");
    }
    FlipPair pair;
    pair.image = image;
    pair.boxes = clamp_annotations(boxes, cfg);
    pair.flipped_image = flip_image(image);
    pair.flipped_boxes = flip_boxes(pair.boxes, cfg.width);
    pair.center_pairs = match_centers(pair.boxes, cfg);
    return pair;
}

Heatmap flip_back_heatmap(const Heatmap& flipped) { return mirror_columns(flipped, -1); }

RegressionFields flip_back_regression(const Field2& offsets_flipped, const Field2& sizes_flipped) {
    return {mirror_columns(offsets_flipped, 0), mirror_columns(sizes_flipped, -1)};
}

}  // namespace centerface
