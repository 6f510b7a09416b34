#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "concrete/autodiff.hpp"
#include "concrete/noise.hpp"

// Reverse-mode versus central-difference comparison for tape primitives.
namespace concrete::gradcheck {

struct InputSpec {
    std::size_t rows = 1;
    std::size_t cols = 1;
    double lo = -2.0;
    double hi = 2.0;
};

using GraphBuilder = std::function<ad::NodeRef(std::span<const ad::NodeRef>)>;

struct PrimitiveCase {
    std::string name;
    std::vector<InputSpec> inputs;
    GraphBuilder build;
};

/// Every tape primitive, each wrapped so its output is a tensor of any shape.
std::vector<PrimitiveCase> primitive_cases();

/// Projects the output onto fixed random weights, sum(W * f(inputs)), and
/// returns the worst relative error of the reverse-mode gradient against
/// central differences over `points` random input draws. Relative error is
/// measured per draw as max_i |a_i - b_i| / max(max_i |b_i|, 1e-8).
double max_gradient_error(const PrimitiveCase& c, RngStream& rng, std::size_t points, double h = 1e-5);

}  // namespace concrete::gradcheck
