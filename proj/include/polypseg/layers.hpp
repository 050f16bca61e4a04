#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <vector>

#include "polypseg/tensor.hpp"

namespace polypseg {

enum class Mode { Train, Infer };

/// Label value for pixels that contribute neither loss nor gradient.
inline constexpr std::uint8_t kIgnoreLabel = 255;

template <class T>
Tensor<T> relu_forward(const Tensor<T>& x) {
    Tensor<T> y(x.shape());
    for (std::int64_t i = 0; i < x.size(); ++i) y[i] = x[i] > T(0) ? x[i] : T(0);
    return y;
}

/// Passes gradient only where the saved input was strictly positive.
template <class T>
Tensor<T> relu_backward(const Tensor<T>& grad_out, const Tensor<T>& saved_input) {
    Tensor<T> g(saved_input.shape());
    for (std::int64_t i = 0; i < g.size(); ++i)
        g[i] = saved_input[i] > T(0) ? grad_out[i] : T(0);
    return g;
}

template <class T>
struct MaxPoolResult {
    Tensor<T> output;
    std::vector<std::int64_t> argmax;  // flat input index per output element
};

/// Window maximum with stored argmax for routing the backward pass. Ties go to
/// the first element in row-major scan order. In strict mode the window/stride
/// must tile the input exactly; with clip_border the windows may overhang the
/// input (output extent = ceil((H - window)/stride) + 1) and are clipped,
/// which is how the networks pool odd-sized maps.
template <class T>
MaxPoolResult<T> maxpool_forward(const Tensor<T>& x, int window, int stride,
                                 bool clip_border = false) {
    if (window < 1 || stride < 1) throw ConfigError("maxpool window and stride must be >= 1");
    auto extent = [&](int in, const char* axis) {
        const int span = in - window;
        if (span < 0)
            throw DimensionError(std::string("maxpool window exceeds input along ") + axis +
                                 " axis");
        if (!clip_border && span % stride != 0)
            throw DimensionError(std::string("maxpool window/stride incompatible with ") + axis +
                                 " axis extent " + std::to_string(in));
        return span / stride + 1 + (clip_border && span % stride != 0 ? 1 : 0);
    };
    const int oh = extent(x.h(), "row");
    const int ow = extent(x.w(), "col");

    MaxPoolResult<T> r{Tensor<T>({x.n(), x.c(), oh, ow}), {}};
    r.argmax.resize(static_cast<std::size_t>(r.output.size()));
    std::int64_t o = 0;
    for (int n = 0; n < x.n(); ++n) {
        for (int c = 0; c < x.c(); ++c) {
            for (int oy = 0; oy < oh; ++oy) {
                const int y0 = oy * stride;
                const int y1 = std::min(y0 + window, x.h());
                for (int ox = 0; ox < ow; ++ox) {
                    const int x0 = ox * stride;
                    const int x1 = std::min(x0 + window, x.w());
                    T best = x.at(n, c, y0, x0);
                    std::int64_t best_idx = x.index(n, c, y0, x0);
                    for (int iy = y0; iy < y1; ++iy) {
                        for (int ix = x0; ix < x1; ++ix) {
                            const T v = x.at(n, c, iy, ix);
                            if (v > best) {
                                best = v;
                                best_idx = x.index(n, c, iy, ix);
                            }
                        }
                    }
                    r.output[o] = best;
                    r.argmax[static_cast<std::size_t>(o)] = best_idx;
                    ++o;
                }
            }
        }
    }
    return r;
}

template <class T>
Tensor<T> maxpool_backward(const Tensor<T>& grad_out, const std::vector<std::int64_t>& argmax,
                           const Shape& input_shape) {
    Tensor<T> g(input_shape);
    for (std::int64_t o = 0; o < grad_out.size(); ++o)
        g[argmax[static_cast<std::size_t>(o)]] += grad_out[o];
    return g;
}

/// Per-channel scale/shift with running statistics for inference.
template <class T>
struct BatchNormState {
    std::vector<T> gamma;
    std::vector<T> beta;
    std::vector<T> running_mean;
    std::vector<T> running_var;
    T epsilon = T(1e-5);
    T momentum = T(0.9);  // weight on the previous running statistic

    static BatchNormState identity(int channels) {
        BatchNormState s;
        s.gamma.assign(channels, T(1));
        s.beta.assign(channels, T(0));
        s.running_mean.assign(channels, T(0));
        s.running_var.assign(channels, T(1));
        return s;
    }
};

template <class T>
struct BatchNormCache {
    std::vector<T> mean;
    std::vector<T> inv_std;
    Tensor<T> x_hat;
};

/// Train mode normalizes by batch moments (biased variance) and updates the
/// running statistics; infer mode is a fixed affine map from the running
/// statistics and never looks at batch content.
template <class T>
Tensor<T> batchnorm_forward(const Tensor<T>& x, BatchNormState<T>& state, Mode mode,
                            BatchNormCache<T>* cache = nullptr) {
    const int C = x.c();
    if (static_cast<int>(state.gamma.size()) != C)
        throw DimensionError("batchnorm state has " + std::to_string(state.gamma.size()) +
                             " channels, input has " + std::to_string(C));
    const std::int64_t m = static_cast<std::int64_t>(x.n()) * x.h() * x.w();
    Tensor<T> y(x.shape());

    if (mode == Mode::Infer) {
        for (int c = 0; c < C; ++c) {
            if (state.running_var[c] < T(0))
                throw ValidationError("negative running variance in channel " + std::to_string(c));
            const T inv = T(1) / std::sqrt(state.running_var[c] + state.epsilon);
            const T scale = state.gamma[c] * inv;
            const T shift = state.beta[c] - state.running_mean[c] * scale;
            for (int n = 0; n < x.n(); ++n) {
                const T* src = x.data() + x.index(n, c, 0, 0);
                T* dst = y.data() + y.index(n, c, 0, 0);
                for (std::int64_t i = 0; i < static_cast<std::int64_t>(x.h()) * x.w(); ++i)
                    dst[i] = src[i] * scale + shift;
            }
        }
        return y;
    }

    if (m < 2)
        throw ValidationError("batchnorm train mode needs at least 2 samples per channel, got " +
                              std::to_string(m));

    std::vector<T> mean(C, T(0)), var(C, T(0)), inv_std(C, T(0));
    for (int c = 0; c < C; ++c) {
        T acc = T(0);
        for (int n = 0; n < x.n(); ++n) {
            const T* src = x.data() + x.index(n, c, 0, 0);
            for (std::int64_t i = 0; i < static_cast<std::int64_t>(x.h()) * x.w(); ++i)
                acc += src[i];
        }
        mean[c] = acc / T(m);
        T vacc = T(0);
        for (int n = 0; n < x.n(); ++n) {
            const T* src = x.data() + x.index(n, c, 0, 0);
            for (std::int64_t i = 0; i < static_cast<std::int64_t>(x.h()) * x.w(); ++i) {
                const T d = src[i] - mean[c];
                vacc += d * d;
            }
        }
        var[c] = vacc / T(m);
        inv_std[c] = T(1) / std::sqrt(var[c] + state.epsilon);
    }

    Tensor<T> x_hat(x.shape());
    for (int c = 0; c < C; ++c) {
        for (int n = 0; n < x.n(); ++n) {
            const T* src = x.data() + x.index(n, c, 0, 0);
            T* xh = x_hat.data() + x_hat.index(n, c, 0, 0);
            T* dst = y.data() + y.index(n, c, 0, 0);
            for (std::int64_t i = 0; i < static_cast<std::int64_t>(x.h()) * x.w(); ++i) {
                xh[i] = (src[i] - mean[c]) * inv_std[c];
                dst[i] = xh[i] * state.gamma[c] + state.beta[c];
            }
        }
        state.running_mean[c] = state.momentum * state.running_mean[c] + (T(1) - state.momentum) * mean[c];
        state.running_var[c] = state.momentum * state.running_var[c] + (T(1) - state.momentum) * var[c];
    }

    if (cache) {
        cache->mean = std::move(mean);
        cache->inv_std = std::move(inv_std);
        cache->x_hat = std::move(x_hat);
    }
    return y;
}

template <class T>
struct BatchNormGrads {
    Tensor<T> input;
    std::vector<T> gamma;
    std::vector<T> beta;
};

template <class T>
BatchNormGrads<T> batchnorm_backward(const Tensor<T>& grad_out, const BatchNormState<T>& state,
                                     const BatchNormCache<T>& cache) {
    const Shape s = cache.x_hat.shape();
    const int C = s.c;
    const std::int64_t m = static_cast<std::int64_t>(s.n) * s.h * s.w;
    BatchNormGrads<T> g{Tensor<T>(s), std::vector<T>(C, T(0)), std::vector<T>(C, T(0))};

    for (int c = 0; c < C; ++c) {
        T dgamma = T(0), dbeta = T(0);
        for (int n = 0; n < s.n; ++n) {
            const T* dy = grad_out.data() + grad_out.index(n, c, 0, 0);
            const T* xh = cache.x_hat.data() + cache.x_hat.index(n, c, 0, 0);
            for (std::int64_t i = 0; i < static_cast<std::int64_t>(s.h) * s.w; ++i) {
                dgamma += dy[i] * xh[i];
                dbeta += dy[i];
            }
        }
        g.gamma[c] = dgamma;
        g.beta[c] = dbeta;

        const T scale = state.gamma[c] * cache.inv_std[c] / T(m);
        for (int n = 0; n < s.n; ++n) {
            const T* dy = grad_out.data() + grad_out.index(n, c, 0, 0);
            const T* xh = cache.x_hat.data() + cache.x_hat.index(n, c, 0, 0);
            T* dx = g.input.data() + g.input.index(n, c, 0, 0);
            for (std::int64_t i = 0; i < static_cast<std::int64_t>(s.h) * s.w; ++i)
                dx[i] = scale * (T(m) * dy[i] - dbeta - xh[i] * dgamma);
        }
    }
    return g;
}

template <class T>
struct LossResult {
    T loss = T(0);
    Tensor<T> grad;
    std::int64_t valid_count = 0;
};

/// Pixelwise 2-class softmax cross-entropy. Labels are 0 (background),
/// 1 (polyp), or kIgnoreLabel; ignored pixels contribute neither loss nor
/// gradient. By default the loss is the mean over valid pixels; with
/// normalize=false it is the raw sum.
template <class T>
LossResult<T> softmax_xent(const Tensor<T>& scores, const Tensor<std::uint8_t>& labels,
                           bool normalize = true) {
    if (scores.c() != 2)
        throw DimensionError("softmax_xent expects 2 score channels, got " +
                             std::to_string(scores.c()));
    if (labels.n() != scores.n() || labels.h() != scores.h() || labels.w() != scores.w())
        throw DimensionError("label map " + labels.shape().str() +
                             " does not match scores " + scores.shape().str() +
                             " on batch/row/col axes");

    LossResult<T> r{T(0), Tensor<T>(scores.shape()), 0};
    for (int n = 0; n < scores.n(); ++n)
        for (int y = 0; y < scores.h(); ++y)
            for (int x = 0; x < scores.w(); ++x) {
                const std::uint8_t lab = labels.at(n, 0, y, x);
                if (lab == kIgnoreLabel) continue;
                if (lab > 1)
                    throw ValidationError("label " + std::to_string(int(lab)) +
                                          " outside {0, 1, ignore} at pixel (" +
                                          std::to_string(y) + "," + std::to_string(x) + ")");
                ++r.valid_count;
            }
    if (r.valid_count == 0) return r;

    const T norm = normalize ? T(1) / T(r.valid_count) : T(1);
    T loss = T(0);
    for (int n = 0; n < scores.n(); ++n)
        for (int y = 0; y < scores.h(); ++y)
            for (int x = 0; x < scores.w(); ++x) {
                const std::uint8_t lab = labels.at(n, 0, y, x);
                if (lab == kIgnoreLabel) continue;
                const T s0 = scores.at(n, 0, y, x);
                const T s1 = scores.at(n, 1, y, x);
                const T mx = std::max(s0, s1);
                const T e0 = std::exp(s0 - mx);
                const T e1 = std::exp(s1 - mx);
                const T z = e0 + e1;
                const T p0 = e0 / z;
                const T p1 = e1 / z;
                loss -= std::log(lab == 0 ? p0 : p1);
                r.grad.at(n, 0, y, x) = (p0 - (lab == 0 ? T(1) : T(0))) * norm;
                r.grad.at(n, 1, y, x) = (p1 - (lab == 1 ? T(1) : T(0))) * norm;
            }
    r.loss = loss * norm;
    return r;
}

}  // namespace polypseg
