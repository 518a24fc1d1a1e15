#pragma once

#include <string>
#include <vector>

namespace rae::testing {

struct GradCheck {
    std::string name;
    double err32 = 0.0;  // float analytic gradient vs 64-bit central differences, h = 1e-3
    double err64 = 0.0;  // double analytic gradient vs 64-bit central differences, h = 1e-5
    std::size_t elements = 0;

    bool pass() const { return err32 < 1e-3 && err64 < 1e-6; }
};

// Every differentiable primitive, then three composed networks.
std::vector<GradCheck> primitive_gradient_checks();
std::vector<GradCheck> network_gradient_checks();

}  // namespace rae::testing
