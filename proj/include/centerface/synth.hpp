#pragma once

#include <cstdint>
#include <vector>

#include "centerface/grid.hpp"
#include "centerface/tensor.hpp"

namespace centerface {

/// Synthetic face / masked-face scenes.
struct SceneSpec {
    int height = 64;
    int width = 64;
    int stride = kDefaultStride;
    int min_objects = 1;
    int max_objects = 4;
    int min_size = 12;  // face width range, pixels
    int max_size = 22;
    double masked_probability = 0.5;
    // Chance that an unmasked face gets a skin-tone hand over the lower face.
    double confuser_probability = 0.3;
    double noise = 0.05;
    std::uint64_t seed = 0;

    void validate() const;
    GridConfig grid() const { return {height, width, stride, kDefaultNumClasses}; }
};

struct Sample {
    ImageTensor image;
    std::vector<BBox> boxes;
    std::vector<bool> occluded;  // per box: carries a confuser
};

/// Sample k depends only on (spec, k): the first n images of a larger
/// dataset equal the smaller one.
Sample generate_scene(const SceneSpec& spec, std::uint64_t index);
std::vector<Sample> generate_dataset(const SceneSpec& spec, int n_images);

}  // namespace centerface
