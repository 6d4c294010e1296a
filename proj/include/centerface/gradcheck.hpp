#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace centerface {

/// Tape gradients of every loss against central finite differences of the
/// matching pure forward function, on seeded random instances placed away
/// from hinge and branch kinks.
struct GradCheckOptions {
    int instances = 10;
    std::uint64_t seed = 0;
    double step = 1e-6;
    double loss_tolerance = 1e-5;
    double model_tolerance = 1e-4;  // end-to-end through the micro-model
};

struct GradCheckEntry {
    std::string name;
    double max_error = 0;  // |analytic - fd| / max(|analytic|, |fd|, 1e-3)
    double tolerance = 0;
    int instances = 0;
    long long checked = 0;  // scalar partial derivatives compared
    bool passed() const { return max_error <= tolerance; }
};

double gradient_relative_error(double analytic, double numeric);

std::vector<GradCheckEntry> run_gradient_suite(const GradCheckOptions& opts = {});

}  // namespace centerface
