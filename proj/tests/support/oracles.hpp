#pragma once
// Independent reference implementations used by the unit and acceptance
// tests. Nothing here calls into the library code it is checking.

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <span>
#include <vector>

#include "centerface/autodiff.hpp"
#include "centerface/targets.hpp"
#include "centerface/tensor.hpp"

namespace centerface::oracle {

/// Plain rectangle IoU, written out separately from the evaluator's.
inline double rect_iou(double ax1, double ay1, double ax2, double ay2, double bx1, double by1,
                       double bx2, double by2) {
    const double iw = std::max(0.0, std::min(ax2, bx2) - std::max(ax1, bx1));
    const double ih = std::max(0.0, std::min(ay2, by2) - std::max(ay1, by1));
    const double inter = iw * ih;
    const double uni = (ax2 - ax1) * (ay2 - ay1) + (bx2 - bx1) * (by2 - by1) - inter;
    return uni > 0 ? inter / uni : 0.0;
}

/// Largest r (scanned in `step` increments) such that every one of the three
/// corner-displaced boxes keeps IoU >= min_overlap with the w x h box.
inline double brute_force_radius(double w, double h, double min_overlap, double step = 0.01) {
    auto ok = [&](double r) {
        // both corners shifted diagonally by r
        const double t = rect_iou(0, 0, w, h, r, r, w + r, h + r);
        // both corners pulled inward by r
        const double s = (w > 2 * r && h > 2 * r) ? rect_iou(0, 0, w, h, r, r, w - r, h - r) : 0.0;
        // both corners pushed outward by r
        const double g = rect_iou(0, 0, w, h, -r, -r, w + r, h + r);
        return std::min({t, s, g}) >= min_overlap;
    };
    double r = 0;
    while (ok(r + step)) r += step;
    return r;
}

/// Relative error with a floor on the denominator so near-zero gradients are
/// compared absolutely.
inline double relative_error(double a, double b, double floor = 1e-3) {
    return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

struct GradReport {
    double max_error = 0;
    int checked = 0;
};

using TapeBuilder = std::function<ad::Var(ad::Tape&, std::span<const ad::Var>)>;

/// Compares tape gradients of a scalar built from `inputs` against central
/// finite differences, element by element.
inline GradReport check_gradients(const std::vector<Tensor>& inputs, const TapeBuilder& build,
                                  double h = 1e-6, double floor = 1e-3) {
    std::vector<Tensor> analytic;
    {
        ad::Tape tape;
        std::vector<ad::Var> leaves;
        for (const Tensor& t : inputs) leaves.push_back(tape.leaf(t));
        const ad::Var out = build(tape, leaves);
        tape.backward(out);
        for (std::size_t k = 0; k < leaves.size(); ++k) {
            try {
                analytic.push_back(leaves[k].grad());
            } catch (const ContractError&) {  // leaf not reached by backward
                analytic.emplace_back(inputs[k].channels, inputs[k].height, inputs[k].width, 0.0);
            }
        }
    }
    auto eval = [&](const std::vector<Tensor>& xs) {
        ad::Tape tape;
        std::vector<ad::Var> leaves;
        for (const Tensor& t : xs) leaves.push_back(tape.constant(t));
        return build(tape, leaves).scalar();
    };
    GradReport rep;
    std::vector<Tensor> xs = inputs;
    for (std::size_t k = 0; k < xs.size(); ++k) {
        for (std::size_t e = 0; e < xs[k].data.size(); ++e) {
            const double x0 = xs[k].data[e];
            xs[k].data[e] = x0 + h;
            const double fp = eval(xs);
            xs[k].data[e] = x0 - h;
            const double fm = eval(xs);
            xs[k].data[e] = x0;
            const double fd = (fp - fm) / (2 * h);
            rep.max_error = std::max(rep.max_error, relative_error(analytic[k].data[e], fd, floor));
            ++rep.checked;
        }
    }
    return rep;
}

inline Tensor random_tensor(int c, int h, int w, std::mt19937_64& rng, double lo = -1,
                            double hi = 1) {
    std::uniform_real_distribution<double> u(lo, hi);
    Tensor t(c, h, w);
    for (double& v : t.data) v = u(rng);
    return t;
}

/// Direct-loop cross-correlation, no im2col.
inline Tensor naive_conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias, int k,
                           int stride, int pad, int dilation = 1) {
    const int span = dilation * (k - 1) + 1;
    const int ho = (x.height + 2 * pad - span) / stride + 1;
    const int wo = (x.width + 2 * pad - span) / stride + 1;
    Tensor y(weight.channels, ho, wo);
    for (int o = 0; o < weight.channels; ++o) {
        for (int oy = 0; oy < ho; ++oy) {
            for (int ox = 0; ox < wo; ++ox) {
                double acc = bias.data[o];
                for (int c = 0; c < x.channels; ++c) {
                    for (int ky = 0; ky < k; ++ky) {
                        for (int kx = 0; kx < k; ++kx) {
                            const int iy = oy * stride - pad + ky * dilation;
                            const int ix = ox * stride - pad + kx * dilation;
                            if (iy < 0 || iy >= x.height || ix < 0 || ix >= x.width) continue;
                            acc += weight(o, c, ky * k + kx) * x(c, iy, ix);
                        }
                    }
                }
                y(o, oy, ox) = acc;
            }
        }
    }
    return y;
}

/// Predictions that exactly reproduce an encoded target pack: the target
/// heatmap, and groundtruth offsets and sizes at every center cell.
inline PredictionPack ideal_prediction(const TargetPack& t) {
    PredictionPack p;
    p.heatmap = t.heatmap;
    p.offsets = Tensor(2, t.grid_height, t.grid_width, 0.0);
    p.sizes = Tensor(2, t.grid_height, t.grid_width, 0.0);
    p.embeddings = Tensor(1, t.grid_height, t.grid_width, 1.0);
    for (const ObjectTarget& o : t.objects) {
        p.offsets(0, o.cell.i, o.cell.j) = o.offset.dx;
        p.offsets(1, o.cell.i, o.cell.j) = o.offset.dy;
        p.sizes(0, o.cell.i, o.cell.j) = o.width;
        p.sizes(1, o.cell.i, o.cell.j) = o.height;
    }
    return p;
}

}  // namespace centerface::oracle
