#include "centerface/targets.hpp"

#include <algorithm>
#include <cmath>

namespace centerface {

namespace {

double smaller_root(double a, double b, double c) {
    // a r^2 + b r + c = 0, a > 0
    const double disc = std::max(0.0, b * b - 4.0 * a * c);
    return (-b - std::sqrt(disc)) / (2.0 * a);
}

}  // namespace

int TargetPack::mask_count() const {
    return static_cast<int>(std::count(mask.begin(), mask.end(), true));
}

double corner_radius(double box_w, double box_h, double min_overlap) {
    if (!(box_w > 0) || !(box_h > 0)) {
        throw InputError("gaussian radius needs positive box dimensions");
    }
    if (!(min_overlap > 0 && min_overlap < 1)) {
        throw InputError("min_overlap must lie in (0, 1)");
    }
    const double w = box_w, h = box_h, m = min_overlap;
    const double area = w * h;

    // Both corners shifted the same way: (w-r)(h-r)(1+m) >= 2m wh.
    const double keep = 2.0 * m * area / (1.0 + m);
    const double r_shift = smaller_root(1.0, -(w + h), area - keep);

    // Both corners pulled inward: (w-2r)(h-2r) >= m wh.
    const double r_shrink = smaller_root(4.0, -2.0 * (w + h), (1.0 - m) * area);

    // Both corners pushed outward: wh >= m (w+2r)(h+2r).
    const double a = 4.0 * m, b = 2.0 * m * (w + h), c = (m - 1.0) * area;
    const double r_grow = (-b + std::sqrt(b * b - 4.0 * a * c)) / (2.0 * a);

    return std::min({r_shift, r_shrink, r_grow});
}

double gaussian_sigma(double box_w, double box_h, double min_overlap) {
    return corner_radius(box_w, box_h, min_overlap) / 3.0;
}

void splat_gaussian(Heatmap& heatmap, const GridIndex& center, int class_id, double sigma) {
    if (!(sigma > 0)) throw InputError("gaussian sigma must be positive");
    if (class_id < 0 || class_id >= heatmap.channels) throw InputError("class_id out of range");
    if (center.i < 0 || center.i >= heatmap.height || center.j < 0 ||
        center.j >= heatmap.width) {
        throw InputError("gaussian center outside heatmap");
    }
    const double denom = 2.0 * sigma * sigma;
    for (int i = 0; i < heatmap.height; ++i) {
        const double di = i - center.i;
        for (int j = 0; j < heatmap.width; ++j) {
            const double dj = j - center.j;
            double& y = heatmap(class_id, i, j);
            y = std::max(y, std::exp(-(di * di + dj * dj) / denom));
        }
    }
}

TargetPack encode_targets(const std::vector<BBox>& annotations, const GridConfig& cfg,
                          const EncoderOptions& opts) {
    cfg.validate();
    const int gh = cfg.grid_height();
    const int gw = cfg.grid_width();

    TargetPack pack;
    pack.grid_height = gh;
    pack.grid_width = gw;
    pack.stride = cfg.stride;
    pack.heatmap = Heatmap(cfg.num_classes, gh, gw, 0.0);
    pack.mask.assign(static_cast<std::size_t>(gh) * gw, false);

    for (const BBox& raw : annotations) {
        BBox box = raw;
        if (!clamp_to_image(box, cfg)) continue;
        validate(box, cfg.num_classes);

        const auto [cell, offset] = project_to_grid(center_of(box), cfg);
        const double s = cfg.stride;
        splat_gaussian(pack.heatmap, cell, box.class_id,
                       gaussian_sigma(box.width() / s, box.height() / s, opts.min_overlap));
        pack.objects.push_back({cell, box.class_id, offset, box.width(), box.height()});

        const CellRange r = box_cells(box, cfg);
        const int d = opts.mask_dilation;
        for (int i = std::max(0, r.i0 - d); i < std::min(gh, r.i1 + d); ++i) {
            for (int j = std::max(0, r.j0 - d); j < std::min(gw, r.j1 + d); ++j) {
                pack.mask[static_cast<std::size_t>(i) * gw + j] = true;
            }
        }
    }
    return pack;
}

}  // namespace centerface
