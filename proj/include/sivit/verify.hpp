#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace sivit {

// A named finite-difference check for one differentiable op. run(seed) draws
// random inputs, compares analytic vs. central-difference gradients for every
// tensor argument of the op, and returns the worst relative error seen.
struct GradCheckCase {
    std::string name;
    std::function<double(uint64_t)> run;
};

// One entry per differentiable op in the tensor engine. The CLI gradient
// report and the test suite both iterate this list so nothing falls through.
const std::vector<GradCheckCase>& gradcheck_cases();

}  // namespace sivit
