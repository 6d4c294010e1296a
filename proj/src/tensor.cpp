#include "centerface/tensor.hpp"

#include <string>

namespace centerface {

void require_same_shape(const Tensor& a, const Tensor& b, const char* what) {
    if (!a.same_shape(b)) {
        throw ContractError(std::string(what) + ": shape mismatch " + std::to_string(a.channels) +
                            "x" + std::to_string(a.height) + "x" + std::to_string(a.width) +
                            " vs " + std::to_string(b.channels) + "x" + std::to_string(b.height) +
                            "x" + std::to_string(b.width));
    }
}

}  // namespace centerface
