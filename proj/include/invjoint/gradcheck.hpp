#pragma once
//
// Central finite-difference checks of the autodiff gradients of every loss.
//

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "invjoint/tensor.hpp"

namespace invjoint {

struct GradcheckOptions {
    int configs = 20;           // random configurations per case
    double eps = 1e-5;
    double tolerance = 1e-4;    // elementwise relative error bound
    double theta_tolerance = 1e-6;
    // Relative error is |a - n| / max(|a|, |n|, floor).
    double floor = 1e-6;
    std::uint64_t seed = 0;
};

struct GradcheckCase {
    std::string name;
    int configs = 0;
    double max_rel_error = 0.0;
    double tolerance = 0.0;
    bool passed = false;
};

using ScalarFn = std::function<Tensor(const std::vector<Tensor>&)>;

// Largest elementwise relative error between the autodiff gradient of `f`
// at `inputs` and central differences. Inputs must be leaves requiring grad.
double gradcheck(const ScalarFn& f, const std::vector<Tensor>& inputs, double eps = 1e-5, double floor = 1e-6);

std::vector<GradcheckCase> run_gradcheck_suite(const GradcheckOptions& opts = {});

}  // namespace invjoint
