#pragma once

#include <multisem/tensor.hpp>

#include <functional>
#include <string>
#include <utility>
#include <vector>

namespace multisem {

using NamedTensor = std::pair<std::string, Tensor>;

/// Scalar function of the current parameter values, evaluated on the given graph.
using LossFunction = std::function<Tensor(Graph&)>;

struct ParamGradError {
    std::string name;
    double max_relative_error = 0.0;
    std::size_t worst_index = 0;
    double analytic = 0.0;
    double numeric = 0.0;
};

struct GradCheckResult {
    double max_relative_error = 0.0;
    std::string worst_param;
    std::vector<ParamGradError> per_param;
};

/// Compares recorded gradients with central differences
/// (f(theta + eps) - f(theta - eps)) / (2 eps) for every element of every
/// parameter. Relative error is |a - n| / max(1e-8, |a| + |n|).
///
/// Parameters are restored bit-exactly after each probe; their grad buffers
/// are left holding the analytic gradient.
GradCheckResult finite_diff_check(const LossFunction& f, std::vector<NamedTensor> params, double eps = 1e-5);

double relative_error(double analytic, double numeric);

} // namespace multisem
