#include "centerface/decoder.hpp"

#include <algorithm>
#include <tuple>

namespace centerface {

void DecodeConfig::validate() const {
    if (!(score_threshold >= 0 && score_threshold <= 1)) {
        throw InputError("score threshold must lie in [0, 1]");
    }
    if (top_k < 1) throw InputError("top_k must be >= 1");
    if (peak_window < 1 || peak_window % 2 == 0) throw InputError("peak window must be odd and >= 1");
}

std::vector<Peak> peak_extract(const Heatmap& heatmap, const DecodeConfig& cfg) {
    cfg.validate();
    const int r = cfg.peak_window / 2;
    std::vector<Peak> peaks;
    for (int c = 0; c < heatmap.channels; ++c) {
        for (int i = 0; i < heatmap.height; ++i) {
            for (int j = 0; j < heatmap.width; ++j) {
                const double v = heatmap(c, i, j);
                if (v < cfg.score_threshold) continue;
                bool is_peak = true;
                for (int di = -r; di <= r && is_peak; ++di) {
                    const int ii = i + di;
                    if (ii < 0 || ii >= heatmap.height) continue;
                    for (int dj = -r; dj <= r; ++dj) {
                        const int jj = j + dj;
                        if (jj < 0 || jj >= heatmap.width) continue;
                        if (heatmap(c, ii, jj) > v) {
                            is_peak = false;
                            break;
                        }
                    }
                }
                if (is_peak) peaks.push_back({{i, j}, c, v});
            }
        }
    }
    std::sort(peaks.begin(), peaks.end(), [](const Peak& a, const Peak& b) {
        if (a.score != b.score) return a.score > b.score;
        return std::tie(a.class_id, a.cell.i, a.cell.j) < std::tie(b.class_id, b.cell.i, b.cell.j);
    });
    if (peaks.size() > static_cast<std::size_t>(cfg.top_k)) peaks.resize(cfg.top_k);
    return peaks;
}

std::vector<Detection> decode(const PredictionPack& pred, const DecodeConfig& cfg,
                              const GridConfig& grid) {
    grid.validate();
    const Heatmap& hm = pred.heatmap;
    if (hm.height != grid.grid_height() || hm.width != grid.grid_width()) {
        throw ContractError("decode: heatmap does not match grid");
    }
    require_same_shape(pred.offsets, pred.sizes, "decode offsets/sizes");
    if (pred.offsets.channels != 2 || pred.offsets.height != hm.height ||
        pred.offsets.width != hm.width) {
        throw ContractError("decode: regression fields do not match heatmap");
    }

    std::vector<Detection> out;
    for (const Peak& p : peak_extract(hm, cfg)) {
        const auto [i, j] = p.cell;
        const Keypoint c = grid_to_image(p.cell, {pred.offsets(0, i, j), pred.offsets(1, i, j)}, grid);
        const double w = pred.sizes(0, i, j);
        const double h = pred.sizes(1, i, j);
        BBox box{c.px - w / 2, c.py - h / 2, c.px + w / 2, c.py + h / 2, p.class_id};
        if (!clamp_to_image(box, grid)) continue;
        out.push_back({box, p.score});
    }
    return out;
}

}  // namespace centerface
