#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <span>
#include <vector>

#include "polypseg/tensor.hpp"

namespace polypseg {

/// Compares an analytic gradient of a scalar function against central
/// differences, probing up to max_probes coordinates. The step is relative:
/// h_i = rel_step * max(|x_i|, 1). Returns the maximum relative error over
/// the probed coordinates, with the relative error of a pair (a, b) defined
/// as |a - b| / max(|a|, |b|, 1e-12).
template <class T, class ScalarFn>
T max_rel_error_fd(ScalarFn f, std::span<T> x, std::span<const T> analytic, T rel_step,
                   int max_probes, std::uint64_t seed) {
    const std::int64_t n = static_cast<std::int64_t>(x.size());
    std::vector<std::int64_t> idx;
    if (max_probes <= 0 || n <= max_probes) {
        idx.resize(static_cast<std::size_t>(n));
        for (std::int64_t i = 0; i < n; ++i) idx[static_cast<std::size_t>(i)] = i;
    } else {
        std::mt19937_64 rng(seed);
        std::uniform_int_distribution<std::int64_t> pick(0, n - 1);
        idx.reserve(static_cast<std::size_t>(max_probes));
        for (int i = 0; i < max_probes; ++i) idx.push_back(pick(rng));
        std::sort(idx.begin(), idx.end());
        idx.erase(std::unique(idx.begin(), idx.end()), idx.end());
    }

    T worst = T(0);
    for (std::int64_t i : idx) {
        const T orig = x[static_cast<std::size_t>(i)];
        const T h = rel_step * std::max(std::abs(orig), T(1));
        x[static_cast<std::size_t>(i)] = orig + h;
        const T fp = f();
        x[static_cast<std::size_t>(i)] = orig - h;
        const T fm = f();
        x[static_cast<std::size_t>(i)] = orig;
        const T numeric = (fp - fm) / (T(2) * h);
        const T ana = analytic[static_cast<std::size_t>(i)];
        const T denom = std::max({std::abs(numeric), std::abs(ana), T(1e-12)});
        worst = std::max(worst, std::abs(numeric - ana) / denom);
    }
    return worst;
}

template <class T>
struct GradCheckResult {
    T max_rel_error = T(0);
    int probes = 0;
};

/// Checks a layer's backward pass against finite differences of the weighted
/// output sum s(x) = sum_i w_i * f(x)_i, where w is a fixed random weighting.
/// forward: x -> y;  backward: (x, dy) -> dx.
template <class T>
GradCheckResult<T> grad_check(
    const std::function<Tensor<T>(const Tensor<T>&)>& forward,
    const std::function<Tensor<T>(const Tensor<T>&, const Tensor<T>&)>& backward,
    Tensor<T> input, T rel_step = T(1e-3), int max_probes = 64, std::uint64_t seed = 7) {
    Tensor<T> probe_out = forward(input);
    Tensor<T> weights(probe_out.shape());
    std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ull);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    for (std::int64_t i = 0; i < weights.size(); ++i) weights[i] = static_cast<T>(u(rng));

    Tensor<T> analytic = backward(input, weights);
    if (!analytic.same_shape(input))
        throw DimensionError("backward returned gradient of shape " + analytic.shape().str() +
                             " for input " + input.shape().str());

    auto scalar = [&]() {
        Tensor<T> y = forward(input);
        T acc = T(0);
        for (std::int64_t i = 0; i < y.size(); ++i) acc += weights[i] * y[i];
        return acc;
    };
    GradCheckResult<T> r;
    r.probes = max_probes > 0 ? static_cast<int>(std::min<std::int64_t>(max_probes, input.size()))
                              : static_cast<int>(input.size());
    r.max_rel_error = max_rel_error_fd<T>(scalar, std::span<T>(input.data(), input.size()),
                                          std::span<const T>(analytic.data(), analytic.size()),
                                          rel_step, max_probes, seed);
    return r;
}

}  // namespace polypseg
