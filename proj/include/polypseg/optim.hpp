#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "polypseg/tensor.hpp"

namespace polypseg {

/// A named parameter tensor with its learning-rate multiplier. Convolution
/// biases default to 2x, scoring layers and the RGB-D first layer to 10x.
template <class T>
struct Parameter {
    std::string name;
    Tensor<T> value;
    double lr_mult = 1.0;
};

/// SGD-with-momentum state: one velocity tensor per parameter, shape-identical.
template <class T>
struct OptimizerState {
    T base_lr = T(0);
    T momentum = T(0.99);
    std::vector<Tensor<T>> velocity;

    static OptimizerState make(T base_lr, T momentum, const std::vector<Parameter<T>>& params) {
        if (base_lr < T(0)) throw ConfigError("base learning rate must be >= 0");
        if (momentum < T(0) || momentum >= T(1))
            throw ConfigError("momentum must lie in [0, 1)");
        OptimizerState s;
        s.base_lr = base_lr;
        s.momentum = momentum;
        s.velocity.reserve(params.size());
        for (const auto& p : params) s.velocity.emplace_back(p.value.shape());
        return s;
    }
};

/// v <- momentum * v - base_lr * lr_mult * g;  p <- p + v.
/// A non-finite gradient rejects the whole step so the parameters stay at
/// their last finite values.
template <class T>
void sgd_momentum_step(std::vector<Parameter<T>>& params, const std::vector<Tensor<T>>& grads,
                       OptimizerState<T>& opt) {
    if (params.size() != grads.size() || params.size() != opt.velocity.size())
        throw DimensionError("optimizer step: params/grads/velocity counts differ");
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (!params[i].value.same_shape(grads[i]))
            throw DimensionError("gradient shape " + grads[i].shape().str() +
                                 " does not match parameter '" + params[i].name + "' " +
                                 params[i].value.shape().str());
        for (std::int64_t j = 0; j < grads[i].size(); ++j)
            if (!std::isfinite(static_cast<double>(grads[i][j])))
                throw DivergenceError("non-finite gradient in parameter '" + params[i].name +
                                      "'; step rejected");
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
        const T lr = opt.base_lr * static_cast<T>(params[i].lr_mult);
        Tensor<T>& v = opt.velocity[i];
        Tensor<T>& p = params[i].value;
        for (std::int64_t j = 0; j < p.size(); ++j) {
            v[j] = opt.momentum * v[j] - lr * grads[i][j];
            p[j] += v[j];
        }
    }
}

}  // namespace polypseg
