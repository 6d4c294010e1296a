#include "centerface/losses.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <string>

namespace centerface {

namespace {

double clamp_prob(double p) { return std::clamp(p, kProbabilityClamp, 1.0 - kProbabilityClamp); }

bool in_clamp_range(double p) { return p > kProbabilityClamp && p < 1.0 - kProbabilityClamp; }

double regression_penalty(double d, RegressionMode mode, double beta) {
    const double a = std::abs(d);
    if (mode == RegressionMode::L1) return a;
    return a < beta ? 0.5 * d * d / beta : a - 0.5 * beta;
}

double regression_slope(double d, RegressionMode mode, double beta) {
    if (mode == RegressionMode::SmoothL1 && std::abs(d) < beta) return d / beta;
    return d > 0 ? 1.0 : (d < 0 ? -1.0 : 0.0);
}

void check_cell(const Tensor& field, const GridIndex& cell, const char* what) {
    if (cell.i < 0 || cell.i >= field.height || cell.j < 0 || cell.j >= field.width) {
        throw ContractError(std::string(what) + ": target cell outside field");
    }
}

void check_field2(const Tensor& field, const char* what) {
    if (field.channels != 2) throw ContractError(std::string(what) + ": expected 2 channels");
}

// Target value per channel for offset / size regression.
using TargetOf = double (*)(const ObjectTarget&, int channel);

double offset_target(const ObjectTarget& o, int c) { return c == 0 ? o.offset.dx : o.offset.dy; }
double size_target(const ObjectTarget& o, int c) { return c == 0 ? o.width : o.height; }

double regression_loss(const Field2& pred, std::span<const ObjectTarget> objects,
                       RegressionMode mode, double beta, TargetOf target, const char* what) {
    check_field2(pred, what);
    if (objects.empty()) return 0.0;
    double total = 0;
    for (const ObjectTarget& o : objects) {
        check_cell(pred, o.cell, what);
        for (int c = 0; c < 2; ++c) {
            total += regression_penalty(pred(c, o.cell.i, o.cell.j) - target(o, c), mode, beta);
        }
    }
    return total / static_cast<double>(objects.size());
}

double bernoulli_entropy(double p) { return -p * std::log(p) - (1.0 - p) * std::log(1.0 - p); }

// d/dp of bernoulli_jsd(p, q).
double bernoulli_jsd_slope(double p, double q) {
    const double m = 0.5 * (p + q);
    return 0.5 * (std::log((1.0 - m) / m) - std::log((1.0 - p) / p));
}

void check_mask(const Heatmap& h, const std::vector<bool>& mask) {
    if (mask.size() != h.plane()) throw ContractError("consistency mask does not match heatmap");
}

double squared_distance(std::span<const double> a, std::span<const double> b) {
    double acc = 0;
    for (std::size_t k = 0; k < a.size(); ++k) acc += (a[k] - b[k]) * (a[k] - b[k]);
    return acc;
}

}  // namespace

void LossWeights::validate() const {
    for (double v : {lambda_pix, lambda_off, lambda_s, lambda_tri, lambda_con}) {
        if (!(v >= 0) || !std::isfinite(v)) throw InputError("loss weights must be finite and >= 0");
    }
    if (!(margin > 0)) throw InputError("triplet margin must be > 0");
    if (!(smooth_l1_beta > 0)) throw InputError("smooth-L1 threshold must be > 0");
    if (!(alpha >= 0) || !(beta >= 0)) throw InputError("focal exponents must be >= 0");
}

double focal_pixel_loss(const Heatmap& pred, const Heatmap& target, int n_objects, double alpha,
                        double beta) {
    require_same_shape(pred, target, "focal_pixel_loss");
    double total = 0;
    for (std::size_t k = 0; k < pred.size(); ++k) {
        const double p = clamp_prob(pred.data[k]);
        const double y = target.data[k];
        if (y == 1.0) {
            total += std::pow(1.0 - p, alpha) * std::log(p);
        } else {
            total += std::pow(1.0 - y, beta) * std::pow(p, alpha) * std::log(1.0 - p);
        }
    }
    return -total / std::max(n_objects, 1);
}

double offset_loss(const Field2& pred, std::span<const ObjectTarget> objects, RegressionMode mode,
                   double smooth_beta) {
    return regression_loss(pred, objects, mode, smooth_beta, offset_target, "offset_loss");
}

double size_loss(const Field2& pred, std::span<const ObjectTarget> objects, RegressionMode mode,
                 double smooth_beta) {
    return regression_loss(pred, objects, mode, smooth_beta, size_target, "size_loss");
}

double center_loss(double pix, double off, double size, const LossWeights& w) {
    return w.lambda_pix * pix + w.lambda_off * off + w.lambda_s * size;
}

double triplet_loss(const TripletBatch& batch, double margin) {
    if (batch.positives.size() != batch.size() || batch.negatives.size() != batch.size()) {
        throw ContractError("triplet batch has unequal lengths");
    }
    double total = 0;
    for (std::size_t i = 0; i < batch.size(); ++i) {
        const double ap = squared_distance(batch.anchors[i], batch.positives[i]);
        const double an = squared_distance(batch.anchors[i], batch.negatives[i]);
        total += std::max(0.0, ap - an + margin);
    }
    return total;
}

double bernoulli_jsd(double p, double q) {
    p = clamp_prob(p);
    q = clamp_prob(q);
    return bernoulli_entropy(0.5 * (p + q)) - 0.5 * bernoulli_entropy(p) -
           0.5 * bernoulli_entropy(q);
}

double consistency_cls_loss(const Heatmap& pred, const Heatmap& pred_flipped_back,
                            const std::vector<bool>& mask, ConsistencyMode mode) {
    require_same_shape(pred, pred_flipped_back, "consistency_cls_loss");
    check_mask(pred, mask);
    const auto n_mask = std::count(mask.begin(), mask.end(), true);
    if (n_mask == 0) return 0.0;
    double total = 0;
    for (int c = 0; c < pred.channels; ++c) {
        auto a = pred.channel(c);
        auto b = pred_flipped_back.channel(c);
        for (std::size_t p = 0; p < a.size(); ++p) {
            if (!mask[p]) continue;
            total += mode == ConsistencyMode::L2 ? (a[p] - b[p]) * (a[p] - b[p])
                                                 : bernoulli_jsd(a[p], b[p]);
        }
    }
    const double denom = mode == ConsistencyMode::L2
                             ? static_cast<double>(n_mask)
                             : static_cast<double>(n_mask) * pred.channels;
    return total / denom;
}

double consistency_loc_loss(const Field2& offsets, const Field2& sizes,
                            const Field2& offsets_flipped, const Field2& sizes_flipped,
                            std::span<const CenterPair> pairs) {
    check_field2(offsets, "consistency_loc_loss");
    check_field2(sizes, "consistency_loc_loss");
    require_same_shape(offsets, offsets_flipped, "consistency_loc_loss offsets");
    require_same_shape(sizes, sizes_flipped, "consistency_loc_loss sizes");
    if (pairs.empty()) return 0.0;
    double total = 0;
    for (const CenterPair& pr : pairs) {
        check_cell(offsets, pr.original, "consistency_loc_loss");
        check_cell(offsets, pr.flipped, "consistency_loc_loss");
        const auto [i, j] = pr.original;
        const auto [fi, fj] = pr.flipped;
        const double dx = offsets(0, i, j) + offsets_flipped(0, fi, fj);
        const double dy = offsets(1, i, j) - offsets_flipped(1, fi, fj);
        const double dw = sizes(0, i, j) - sizes_flipped(0, fi, fj);
        const double dh = sizes(1, i, j) - sizes_flipped(1, fi, fj);
        total += dx * dx + dy * dy + dw * dw + dh * dh;
    }
    return total / static_cast<double>(pairs.size());
}

double total_loss(double center, double triplet, double consistency, const LossWeights& w) {
    return center + w.lambda_tri * triplet + w.lambda_con * consistency;
}

// ---------------------------------------------------------------------------
// Triplet mining

BBox object_box(const ObjectTarget& obj, int stride) {
    const double cx = (obj.cell.j + obj.offset.dx) * stride;
    const double cy = (obj.cell.i + obj.offset.dy) * stride;
    return {cx - obj.width / 2, cy - obj.height / 2, cx + obj.width / 2, cy + obj.height / 2,
            obj.class_id};
}

namespace {

std::vector<GridIndex> cells_of(const CellRange& r) {
    std::vector<GridIndex> cells;
    for (int i = r.i0; i < r.i1; ++i) {
        for (int j = r.j0; j < r.j1; ++j) cells.push_back({i, j});
    }
    return cells;
}

template <class Rng>
std::size_t pick(Rng& rng, std::size_t n) {
    return std::uniform_int_distribution<std::size_t>(0, n - 1)(rng);
}

}  // namespace

std::vector<TripletRegions> plan_triplets(const TargetPack& targets, std::uint64_t seed) {
    std::vector<TripletRegions> plan;
    const int n = targets.n_objects();
    if (n == 0) return plan;

    GridConfig grid;
    grid.stride = targets.stride;
    grid.height = targets.grid_height * targets.stride;
    grid.width = targets.grid_width * targets.stride;
    grid.num_classes = targets.heatmap.channels;

    std::mt19937_64 rng(seed);
    std::vector<CellRange> ranges;
    for (const ObjectTarget& o : targets.objects) {
        BBox box = object_box(o, targets.stride);
        clamp_to_image(box, grid);
        CellRange r = box_cells(box, grid);
        if (r.empty()) r = {o.cell.i, o.cell.i + 1, o.cell.j, o.cell.j + 1};
        ranges.push_back(r);
    }

    for (int a = 0; a < n; ++a) {
        const ObjectTarget& anchor = targets.objects[a];
        TripletRegions t;
        t.anchor = cells_of(ranges[a]);

        std::vector<int> same, other;
        for (int b = 0; b < n; ++b) {
            if (b == a) continue;
            (targets.objects[b].class_id == anchor.class_id ? same : other).push_back(b);
        }

        if (!same.empty()) {
            t.positive = cells_of(ranges[same[pick(rng, same.size())]]);
        } else {
            BBox box = object_box(anchor, targets.stride);
            std::uniform_real_distribution<double> u(-0.1, 0.1);
            const double dx = u(rng) * box.width();
            const double dy = u(rng) * box.height();
            box.x1 += dx;
            box.x2 += dx;
            box.y1 += dy;
            box.y2 += dy;
            CellRange r = clamp_to_image(box, grid) ? box_cells(box, grid) : ranges[a];
            t.positive = cells_of(r.empty() ? ranges[a] : r);
        }

        if (!other.empty()) {
            t.negative = cells_of(ranges[other[pick(rng, other.size())]]);
        } else {
            const int rh = ranges[a].i1 - ranges[a].i0;
            const int rw = ranges[a].j1 - ranges[a].j0;
            for (int attempt = 0; attempt < 16 && t.negative.empty(); ++attempt) {
                const int i0 = static_cast<int>(pick(rng, targets.grid_height - rh + 1));
                const int j0 = static_cast<int>(pick(rng, targets.grid_width - rw + 1));
                for (int i = i0; i < i0 + rh; ++i) {
                    for (int j = j0; j < j0 + rw; ++j) {
                        if (!targets.mask_at(i, j)) t.negative.push_back({i, j});
                    }
                }
            }
            if (t.negative.empty()) {
                for (int i = 0; i < targets.grid_height; ++i) {
                    for (int j = 0; j < targets.grid_width; ++j) {
                        if (!targets.mask_at(i, j)) t.negative.push_back({i, j});
                    }
                }
            }
            if (t.negative.empty()) continue;
        }
        plan.push_back(std::move(t));
    }
    return plan;
}

std::vector<double> pool_embedding(const Tensor& embeddings, std::span<const GridIndex> cells) {
    if (cells.empty()) throw ContractError("pool_embedding over an empty region");
    std::vector<double> v(embeddings.channels, 0.0);
    for (const GridIndex& cell : cells) {
        check_cell(embeddings, cell, "pool_embedding");
        for (int c = 0; c < embeddings.channels; ++c) v[c] += embeddings(c, cell.i, cell.j);
    }
    double ss = 0;
    for (double& x : v) {
        x /= static_cast<double>(cells.size());
        ss += x * x;
    }
    const double norm = std::max(std::sqrt(ss), 1e-12);
    for (double& x : v) x /= norm;
    return v;
}

TripletBatch mine_triplets(const Tensor& embeddings, const TargetPack& targets, std::uint64_t seed) {
    TripletBatch batch;
    for (const TripletRegions& t : plan_triplets(targets, seed)) {
        batch.anchors.push_back(pool_embedding(embeddings, t.anchor));
        batch.positives.push_back(pool_embedding(embeddings, t.positive));
        batch.negatives.push_back(pool_embedding(embeddings, t.negative));
    }
    return batch;
}

// ---------------------------------------------------------------------------
// Tape operations

namespace ad {

namespace {

Var regression_op(Var pred, std::span<const ObjectTarget> objects, RegressionMode mode,
                  double beta, TargetOf target, const char* what) {
    const double value = regression_loss(pred.value(), objects, mode, beta, target, what);
    std::vector<ObjectTarget> objs(objects.begin(), objects.end());
    return pred.tape->record(
        scalar_tensor(value), {pred},
        [pred, objs = std::move(objs), mode, beta, target](const Tensor& go,
                                                           std::span<Tensor* const> g) {
            if (!g[0] || objs.empty()) return;
            const Tensor& p = pred.value();
            const double k = go.data[0] / static_cast<double>(objs.size());
            for (const ObjectTarget& o : objs) {
                for (int c = 0; c < 2; ++c) {
                    const double d = p(c, o.cell.i, o.cell.j) - target(o, c);
                    (*g[0])(c, o.cell.i, o.cell.j) += k * regression_slope(d, mode, beta);
                }
            }
        });
}

Tape& tape_of(Var a, Var b) {
    if (a.tape == nullptr || a.tape != b.tape) throw ContractError("operands live on different tapes");
    return *a.tape;
}

}  // namespace

Var focal_pixel_loss(Var pred, const Heatmap& target, int n_objects, double alpha, double beta) {
    const double value = centerface::focal_pixel_loss(pred.value(), target, n_objects, alpha, beta);
    return pred.tape->record(
        scalar_tensor(value), {pred},
        [pred, target, n_objects, alpha, beta](const Tensor& go, std::span<Tensor* const> g) {
            if (!g[0]) return;
            const Tensor& pv = pred.value();
            const double k = -go.data[0] / std::max(n_objects, 1);
            for (std::size_t idx = 0; idx < pv.size(); ++idx) {
                const double p = pv.data[idx];
                if (!in_clamp_range(p)) continue;
                const double y = target.data[idx];
                double d;
                if (y == 1.0) {
                    d = -alpha * std::pow(1.0 - p, alpha - 1.0) * std::log(p) +
                        std::pow(1.0 - p, alpha) / p;
                } else {
                    d = std::pow(1.0 - y, beta) * (alpha * std::pow(p, alpha - 1.0) * std::log(1.0 - p) -
                                                   std::pow(p, alpha) / (1.0 - p));
                }
                g[0]->data[idx] += k * d;
            }
        });
}

Var offset_loss(Var pred, std::span<const ObjectTarget> objects, RegressionMode mode,
                double smooth_beta) {
    return regression_op(pred, objects, mode, smooth_beta, offset_target, "offset_loss");
}

Var size_loss(Var pred, std::span<const ObjectTarget> objects, RegressionMode mode,
              double smooth_beta) {
    return regression_op(pred, objects, mode, smooth_beta, size_target, "size_loss");
}

Var triplet_loss(std::span<const Var> anchors, std::span<const Var> positives,
                 std::span<const Var> negatives, double margin) {
    if (anchors.size() != positives.size() || anchors.size() != negatives.size()) {
        throw ContractError("triplet batch has unequal lengths");
    }
    if (anchors.empty()) throw ContractError("tape triplet_loss needs at least one triplet");
    TripletBatch batch;
    std::vector<Var> parents;
    for (std::size_t i = 0; i < anchors.size(); ++i) {
        batch.anchors.push_back(anchors[i].value().data);
        batch.positives.push_back(positives[i].value().data);
        batch.negatives.push_back(negatives[i].value().data);
        parents.insert(parents.end(), {anchors[i], positives[i], negatives[i]});
    }
    const double value = centerface::triplet_loss(batch, margin);
    return anchors.front().tape->record(
        scalar_tensor(value), parents,
        [batch = std::move(batch), margin](const Tensor& go, std::span<Tensor* const> g) {
            for (std::size_t i = 0; i < batch.size(); ++i) {
                const auto& a = batch.anchors[i];
                const auto& p = batch.positives[i];
                const auto& n = batch.negatives[i];
                if (squared_distance(a, p) - squared_distance(a, n) + margin <= 0) continue;
                Tensor* ga = g[3 * i];
                Tensor* gp = g[3 * i + 1];
                Tensor* gn = g[3 * i + 2];
                for (std::size_t k = 0; k < a.size(); ++k) {
                    if (ga) ga->data[k] += go.data[0] * 2.0 * (n[k] - p[k]);
                    if (gp) gp->data[k] += go.data[0] * -2.0 * (a[k] - p[k]);
                    if (gn) gn->data[k] += go.data[0] * 2.0 * (a[k] - n[k]);
                }
            }
        });
}

Var consistency_cls_loss(Var pred, Var pred_flipped_back, const std::vector<bool>& mask,
                         ConsistencyMode mode) {
    Tape& t = tape_of(pred, pred_flipped_back);
    const double value =
        centerface::consistency_cls_loss(pred.value(), pred_flipped_back.value(), mask, mode);
    return t.record(
        scalar_tensor(value), {pred, pred_flipped_back},
        [pred, pred_flipped_back, mask, mode](const Tensor& go, std::span<Tensor* const> g) {
            const Tensor& a = pred.value();
            const Tensor& b = pred_flipped_back.value();
            const auto n_mask = std::count(mask.begin(), mask.end(), true);
            if (n_mask == 0) return;
            const double denom = mode == ConsistencyMode::L2
                                     ? static_cast<double>(n_mask)
                                     : static_cast<double>(n_mask) * a.channels;
            const double k = go.data[0] / denom;
            const std::size_t plane = a.plane();
            for (int c = 0; c < a.channels; ++c) {
                for (std::size_t p = 0; p < plane; ++p) {
                    if (!mask[p]) continue;
                    const std::size_t idx = c * plane + p;
                    const double x = a.data[idx];
                    const double y = b.data[idx];
                    if (mode == ConsistencyMode::L2) {
                        if (g[0]) g[0]->data[idx] += k * 2.0 * (x - y);
                        if (g[1]) g[1]->data[idx] -= k * 2.0 * (x - y);
                    } else {
                        const double xc = clamp_prob(x);
                        const double yc = clamp_prob(y);
                        if (g[0] && in_clamp_range(x)) g[0]->data[idx] += k * bernoulli_jsd_slope(xc, yc);
                        if (g[1] && in_clamp_range(y)) g[1]->data[idx] += k * bernoulli_jsd_slope(yc, xc);
                    }
                }
            }
        });
}

Var consistency_loc_loss(Var offsets, Var sizes, Var offsets_flipped, Var sizes_flipped,
                         std::span<const CenterPair> pairs) {
    Tape& t = tape_of(offsets, sizes);
    tape_of(offsets, offsets_flipped);
    tape_of(offsets, sizes_flipped);
    const double value = centerface::consistency_loc_loss(
        offsets.value(), sizes.value(), offsets_flipped.value(), sizes_flipped.value(), pairs);
    std::vector<CenterPair> prs(pairs.begin(), pairs.end());
    return t.record(
        scalar_tensor(value), {offsets, sizes, offsets_flipped, sizes_flipped},
        [offsets, sizes, offsets_flipped, sizes_flipped, prs = std::move(prs)](
            const Tensor& go, std::span<Tensor* const> g) {
            if (prs.empty()) return;
            const Tensor& o = offsets.value();
            const Tensor& s = sizes.value();
            const Tensor& of = offsets_flipped.value();
            const Tensor& sf = sizes_flipped.value();
            const double k = 2.0 * go.data[0] / static_cast<double>(prs.size());
            for (const CenterPair& pr : prs) {
                const auto [i, j] = pr.original;
                const auto [fi, fj] = pr.flipped;
                const double dx = o(0, i, j) + of(0, fi, fj);
                const double dy = o(1, i, j) - of(1, fi, fj);
                if (g[0]) {
                    (*g[0])(0, i, j) += k * dx;
                    (*g[0])(1, i, j) += k * dy;
                }
                if (g[2]) {
                    (*g[2])(0, fi, fj) += k * dx;
                    (*g[2])(1, fi, fj) -= k * dy;
                }
                for (int c = 0; c < 2; ++c) {
                    const double d = s(c, i, j) - sf(c, fi, fj);
                    if (g[1]) (*g[1])(c, i, j) += k * d;
                    if (g[3]) (*g[3])(c, fi, fj) -= k * d;
                }
            }
        });
}

Var pool_embedding(Var embeddings, std::span<const GridIndex> cells) {
    return l2_normalize_cells(region_mean(embeddings, cells));
}

}  // namespace ad

}  // namespace centerface
