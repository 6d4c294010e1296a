#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "centerface/grid.hpp"

namespace centerface {

/// Dense channel-major (C x H x W) block of doubles.
///
/// Used for images (3 channels in [0,1]), heatmaps (one channel per class),
/// offset/size fields (channel 0 horizontal, channel 1 vertical) and
/// embedding fields.
struct Tensor {
    int channels = 0;
    int height = 0;
    int width = 0;
    std::vector<double> data;

    Tensor() = default;
    Tensor(int c, int h, int w, double fill = 0.0)
        : channels(c), height(h), width(w),
          data(static_cast<std::size_t>(c) * h * w, fill) {}

    std::size_t size() const { return data.size(); }
    std::size_t plane() const { return static_cast<std::size_t>(height) * width; }
    std::size_t index(int c, int i, int j) const {
        return (static_cast<std::size_t>(c) * height + i) * width + j;
    }

    double& operator()(int c, int i, int j) { return data[index(c, i, j)]; }
    double operator()(int c, int i, int j) const { return data[index(c, i, j)]; }

    std::span<double> channel(int c) { return {data.data() + c * plane(), plane()}; }
    std::span<const double> channel(int c) const { return {data.data() + c * plane(), plane()}; }

    bool same_shape(const Tensor& o) const {
        return channels == o.channels && height == o.height && width == o.width;
    }
    bool operator==(const Tensor&) const = default;
};

using ImageTensor = Tensor;  // 3 x H x W, values in [0,1]
using Heatmap = Tensor;      // c x H' x W'
using Field2 = Tensor;       // 2 x H' x W'

void require_same_shape(const Tensor& a, const Tensor& b, const char* what);

/// Network outputs at grid resolution.
struct PredictionPack {
    Heatmap heatmap;    // sigmoid activated
    Field2 offsets;     // channel 0 horizontal
    Field2 sizes;       // pixels, channel 0 width
    Tensor embeddings;  // d x H' x W', unit norm per cell
};

}  // namespace centerface
