#pragma once

// Minimal reverse-mode automatic differentiation over channel-major tensors.
//
// A Tape owns every intermediate value. Operations append records in
// creation order; backward() walks them once in reverse. One tape belongs to
// one logical thread; separate tapes share nothing.

#include <functional>
#include <span>
#include <vector>

#include "centerface/grid.hpp"
#include "centerface/tensor.hpp"

namespace centerface::ad {

class Tape;

struct Var {
    Tape* tape = nullptr;
    int id = -1;

    const Tensor& value() const;
    const Tensor& grad() const;
    double scalar() const;
};

/// Receives d(out) and one accumulator per parent (nullptr when the parent
/// does not need a gradient). Implementations must add, never assign.
using BackwardFn = std::function<void(const Tensor& grad_out, std::span<Tensor* const> grads)>;

class Tape {
public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    Var leaf(Tensor value, bool requires_grad = true);
    Var constant(Tensor value) { return leaf(std::move(value), false); }

    Var record(Tensor value, std::vector<Var> parents, BackwardFn backward);

    const Tensor& value(Var v) const;
    const Tensor& grad(Var v) const;
    bool requires_grad(Var v) const;

    /// Seeds d(root)/d(root) = 1 and propagates. root must be a 1x1x1 scalar.
    void backward(Var root);

    int size() const { return static_cast<int>(nodes_.size()); }

private:
    struct Node {
        Tensor value;
        Tensor grad;
        std::vector<int> parents;
        BackwardFn backward;
        bool requires_grad = false;
    };
    Node& node(Var v);
    const Node& node(Var v) const;
    Tensor& ensure_grad(Node& n);

    std::vector<Node> nodes_;
};

Tensor scalar_tensor(double v);

// Elementwise.
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double k);
Var relu(Var a);
Var sigmoid(Var a);
Var softplus(Var a);

/// Sum of all elements -> scalar.
Var sum(Var a);
/// Sum of scalars (or same-shape tensors).
Var add_n(std::span<const Var> terms);

struct Conv2dSpec {
    int kernel = 3;
    int stride = 1;
    int padding = 1;
    int dilation = 1;
};

/// x: Cin x H x W; weight: Cout x Cin x (k*k); bias: Cout x 1 x 1.
Var conv2d(Var x, Var weight, Var bias, const Conv2dSpec& spec);

/// x: in x 1 x 1; weight: out x in x 1; bias: out x 1 x 1.
Var dense(Var x, Var weight, Var bias);

/// Global pools over the spatial plane: C x H x W -> C x 1 x 1.
Var spatial_avg_pool(Var x);
Var spatial_max_pool(Var x);

/// Pools along the channel axis: C x H x W -> 1 x H x W.
Var channel_avg_pool(Var x);
Var channel_max_pool(Var x);

Var concat_channels(Var a, Var b);

/// x * w[c] for every cell; w is C x 1 x 1.
Var scale_channels(Var x, Var w);
/// x * m[i,j] for every channel; m is 1 x H x W.
Var scale_cells(Var x, Var m);

/// Divides each cell's channel vector by its L2 norm.
Var l2_normalize_cells(Var x);

/// Channelwise mean over the listed cells -> C x 1 x 1.
Var region_mean(Var x, std::span<const GridIndex> cells);

/// Mirrors columns (j -> W-1-j). Channel negate_channel, if >= 0, is negated.
Var flip_width(Var x, int negate_channel = -1);

}  // namespace centerface::ad
