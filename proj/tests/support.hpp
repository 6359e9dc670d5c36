#pragma once

#include <multisem/tensor.hpp>

#include <cstdint>
#include <random>
#include <vector>

namespace multisem::test {

inline std::vector<double> uniform_values(std::size_t n, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0)
{
    std::uniform_real_distribution<double> dist(lo, hi);
    std::vector<double> v(n);
    for (double& x : v)
        x = dist(rng);
    return v;
}

inline Tensor random_tensor(Shape shape, std::mt19937_64& rng, bool requires_grad = false, double lo = -1.0, double hi = 1.0)
{
    const auto n = shape_size(shape);
    return Tensor::from(std::move(shape), uniform_values(n, rng, lo, hi), requires_grad);
}

inline std::size_t uniform_size(std::mt19937_64& rng, std::size_t lo, std::size_t hi)
{
    return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
}

inline std::vector<double> to_vector(std::span<const double> s) { return { s.begin(), s.end() }; }

} // namespace multisem::test
