#pragma once

#include <cmath>
#include <span>
#include <utility>
#include <vector>

#include "polypseg/tensor.hpp"

namespace polypseg {

namespace detail {

// C (MxN) += A (MxK) * B (KxN), row-major. Each row of C is owned by one
// thread and k runs in ascending order, so results do not depend on the
// thread count.
template <class T>
void gemm_nn(int M, int N, int K, const T* A, const T* B, T* C) {
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
    for (int i = 0; i < M; ++i) {
        T* crow = C + static_cast<std::int64_t>(i) * N;
        const T* arow = A + static_cast<std::int64_t>(i) * K;
        for (int k = 0; k < K; ++k) {
            const T a = arow[k];
            if (a == T(0)) continue;
            const T* brow = B + static_cast<std::int64_t>(k) * N;
            for (int j = 0; j < N; ++j) crow[j] += a * brow[j];
        }
    }
}

// C (MxN) += A^T * B where A is KxM and B is KxN.
template <class T>
void gemm_tn(int M, int N, int K, const T* A, const T* B, T* C) {
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
    for (int i = 0; i < M; ++i) {
        T* crow = C + static_cast<std::int64_t>(i) * N;
        for (int k = 0; k < K; ++k) {
            const T a = A[static_cast<std::int64_t>(k) * M + i];
            if (a == T(0)) continue;
            const T* brow = B + static_cast<std::int64_t>(k) * N;
            for (int j = 0; j < N; ++j) crow[j] += a * brow[j];
        }
    }
}

// C (MxN) += A * B^T where A is MxK and B is NxK.
template <class T>
void gemm_nt(int M, int N, int K, const T* A, const T* B, T* C) {
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
    for (int i = 0; i < M; ++i) {
        const T* arow = A + static_cast<std::int64_t>(i) * K;
        T* crow = C + static_cast<std::int64_t>(i) * N;
        for (int j = 0; j < N; ++j) {
            const T* brow = B + static_cast<std::int64_t>(j) * K;
            T acc = T(0);
            for (int k = 0; k < K; ++k) acc += arow[k] * brow[k];
            crow[j] += acc;
        }
    }
}

// Unfolds one sample (C,H,W) into a (C*Kh*Kw) x (OH*OW) column matrix.
// Rows are channel-major so a trailing channel contributes the trailing
// accumulation terms in the GEMM.
template <class T>
void im2col(const T* src, int C, int H, int W, int kh, int kw, int stride,
            int pad, int oh, int ow, T* col) {
    for (int c = 0; c < C; ++c) {
        const T* plane = src + static_cast<std::int64_t>(c) * H * W;
        for (int ki = 0; ki < kh; ++ki) {
            for (int kj = 0; kj < kw; ++kj) {
                T* dst = col + ((static_cast<std::int64_t>(c) * kh + ki) * kw + kj) *
                                   (static_cast<std::int64_t>(oh) * ow);
                for (int oy = 0; oy < oh; ++oy) {
                    const int iy = oy * stride - pad + ki;
                    for (int ox = 0; ox < ow; ++ox) {
                        const int ix = ox * stride - pad + kj;
                        *dst++ = (iy >= 0 && iy < H && ix >= 0 && ix < W)
                                     ? plane[static_cast<std::int64_t>(iy) * W + ix]
                                     : T(0);
                    }
                }
            }
        }
    }
}

// Adjoint of im2col: scatter-adds a column matrix back into a (C,H,W) plane.
template <class T>
void col2im(const T* col, int C, int H, int W, int kh, int kw, int stride,
            int pad, int oh, int ow, T* dst) {
    for (int c = 0; c < C; ++c) {
        T* plane = dst + static_cast<std::int64_t>(c) * H * W;
        for (int ki = 0; ki < kh; ++ki) {
            for (int kj = 0; kj < kw; ++kj) {
                const T* src = col + ((static_cast<std::int64_t>(c) * kh + ki) * kw + kj) *
                                         (static_cast<std::int64_t>(oh) * ow);
                for (int oy = 0; oy < oh; ++oy) {
                    const int iy = oy * stride - pad + ki;
                    for (int ox = 0; ox < ow; ++ox) {
                        const int ix = ox * stride - pad + kj;
                        if (iy >= 0 && iy < H && ix >= 0 && ix < W)
                            plane[static_cast<std::int64_t>(iy) * W + ix] += src[oy * ow + ox];
                    }
                }
            }
        }
    }
}

inline int conv_out_extent(int in, int kernel, int stride, int pad, const char* axis) {
    const int span = in + 2 * pad - kernel;
    if (span < 0)
        throw DimensionError(std::string("kernel exceeds padded input along ") + axis +
                             " axis (" + std::to_string(kernel) + " > " +
                             std::to_string(in + 2 * pad) + ")");
    if (span % stride != 0)
        throw ConfigError(std::string("non-integral output size along ") + axis +
                          " axis: (" + std::to_string(in) + "+2*" + std::to_string(pad) +
                          "-" + std::to_string(kernel) + ") not divisible by stride " +
                          std::to_string(stride));
    return span / stride + 1;
}

}  // namespace detail

/// Strided 2-D convolution. input (N,C,H,W), kernel (F,C,Kh,Kw), bias length F.
/// Output shape (N, F, (H+2p-Kh)/S+1, (W+2p-Kw)/S+1); sizes that do not divide
/// evenly are rejected rather than floored.
template <class T>
Tensor<T> conv2d_forward(const Tensor<T>& input, const Tensor<T>& kernel,
                         std::span<const T> bias, int stride, int padding) {
    if (stride < 1) throw ConfigError("stride must be >= 1");
    if (padding < 0) throw ConfigError("padding must be >= 0");
    if (input.c() != kernel.c())
        throw DimensionError("channel axis mismatch: input has " + std::to_string(input.c()) +
                             " channels, kernel expects " + std::to_string(kernel.c()));
    const int F = kernel.n();
    if (!bias.empty() && static_cast<int>(bias.size()) != F)
        throw DimensionError("bias length " + std::to_string(bias.size()) +
                             " does not match filter axis " + std::to_string(F));

    const int oh = detail::conv_out_extent(input.h(), kernel.h(), stride, padding, "row");
    const int ow = detail::conv_out_extent(input.w(), kernel.w(), stride, padding, "col");
    const int ck = input.c() * kernel.h() * kernel.w();
    const std::int64_t opix = static_cast<std::int64_t>(oh) * ow;

    Tensor<T> out({input.n(), F, oh, ow});
    std::vector<T> col(static_cast<std::size_t>(ck) * opix);
    for (int n = 0; n < input.n(); ++n) {
        detail::im2col(input.data() + input.index(n, 0, 0, 0), input.c(), input.h(), input.w(),
                       kernel.h(), kernel.w(), stride, padding, oh, ow, col.data());
        T* dst = out.data() + out.index(n, 0, 0, 0);
        if (!bias.empty()) {
            for (int f = 0; f < F; ++f)
                for (std::int64_t o = 0; o < opix; ++o) dst[f * opix + o] = bias[f];
        }
        detail::gemm_nn(F, static_cast<int>(opix), ck, kernel.data(), col.data(), dst);
    }
    return out;
}

template <class T>
struct ConvGrads {
    Tensor<T> input;
    Tensor<T> kernel;
    std::vector<T> bias;
};

/// Gradients of conv2d_forward with respect to input, kernel, and bias.
template <class T>
ConvGrads<T> conv2d_backward(const Tensor<T>& input, const Tensor<T>& kernel,
                             const Tensor<T>& grad_out, int stride, int padding) {
    const int F = kernel.n();
    const int oh = grad_out.h();
    const int ow = grad_out.w();
    const int ck = input.c() * kernel.h() * kernel.w();
    const std::int64_t opix = static_cast<std::int64_t>(oh) * ow;

    ConvGrads<T> g{Tensor<T>(input.shape()), Tensor<T>(kernel.shape()),
                   std::vector<T>(F, T(0))};
    std::vector<T> col(static_cast<std::size_t>(ck) * opix);
    std::vector<T> dcol(static_cast<std::size_t>(ck) * opix);
    for (int n = 0; n < input.n(); ++n) {
        const T* dout = grad_out.data() + grad_out.index(n, 0, 0, 0);

        // d/d input: dcol = W^T * dout, folded back with col2im.
        std::fill(dcol.begin(), dcol.end(), T(0));
        detail::gemm_tn(ck, static_cast<int>(opix), F, kernel.data(), dout, dcol.data());
        detail::col2im(dcol.data(), input.c(), input.h(), input.w(), kernel.h(), kernel.w(),
                       stride, padding, oh, ow, g.input.data() + g.input.index(n, 0, 0, 0));

        // d/d kernel: dW += dout * col^T, accumulated over the batch in order.
        detail::im2col(input.data() + input.index(n, 0, 0, 0), input.c(), input.h(), input.w(),
                       kernel.h(), kernel.w(), stride, padding, oh, ow, col.data());
        detail::gemm_nt(F, ck, static_cast<int>(opix), dout, col.data(), g.kernel.data());

        for (int f = 0; f < F; ++f) {
            T acc = T(0);
            for (std::int64_t o = 0; o < opix; ++o) acc += dout[f * opix + o];
            g.bias[f] += acc;
        }
    }
    return g;
}

/// Sparse matrix realization of single-channel strided convolution:
/// vec(psi) = C vec(omega) with C of size D x (W*H).
template <class T>
class ConvMatrix {
public:
    struct Entry {
        int col;
        T value;
    };

    ConvMatrix(int rows, int cols) : cols_(cols), rows_(rows) {}

    int rows() const { return static_cast<int>(rows_); }
    int cols() const { return cols_; }
    int row_nonzeros(int r) const { return static_cast<int>(entries_[r].size()); }

    std::vector<T> multiply(std::span<const T> x) const {
        if (static_cast<int>(x.size()) != cols_)
            throw DimensionError("ConvMatrix multiply: vector length " + std::to_string(x.size()) +
                                 " != cols " + std::to_string(cols_));
        std::vector<T> y(entries_.size(), T(0));
        for (std::size_t r = 0; r < entries_.size(); ++r) {
            T acc = T(0);
            for (const Entry& e : entries_[r]) acc += e.value * x[e.col];
            y[r] = acc;
        }
        return y;
    }

    std::vector<T> multiply_transpose(std::span<const T> y) const {
        if (y.size() != entries_.size())
            throw DimensionError("ConvMatrix transpose multiply: vector length " +
                                 std::to_string(y.size()) + " != rows " +
                                 std::to_string(entries_.size()));
        std::vector<T> x(cols_, T(0));
        for (std::size_t r = 0; r < entries_.size(); ++r)
            for (const Entry& e : entries_[r]) x[e.col] += e.value * y[r];
        return x;
    }

    void push_row(std::vector<Entry> row) { entries_.push_back(std::move(row)); }

private:
    int cols_;
    int rows_;
    std::vector<std::vector<Entry>> entries_;
};

/// Builds the D x (W*H) matrix for a single-channel kernel over a W x H map.
/// Rows follow the row-major order of the output map.
template <class T>
ConvMatrix<T> conv2d_as_matrix(const Tensor<T>& kernel, int in_w, int in_h, int stride) {
    if (kernel.n() != 1 || kernel.c() != 1)
        throw DimensionError("conv2d_as_matrix expects a single-channel kernel, got " +
                             kernel.shape().str());
    if (in_w < kernel.w() || in_h < kernel.h())
        throw DimensionError("kernel exceeds input map");
    if ((in_w - kernel.w()) % stride != 0 || (in_h - kernel.h()) % stride != 0)
        throw ConfigError("indivisible stride: (" + std::to_string(in_w) + "-" +
                          std::to_string(kernel.w()) + ") and (" + std::to_string(in_h) + "-" +
                          std::to_string(kernel.h()) + ") must both divide by " +
                          std::to_string(stride));

    const int ow = (in_w - kernel.w()) / stride + 1;
    const int oh = (in_h - kernel.h()) / stride + 1;
    ConvMatrix<T> m(oh * ow, in_w * in_h);
    for (int oy = 0; oy < oh; ++oy) {
        for (int ox = 0; ox < ow; ++ox) {
            std::vector<typename ConvMatrix<T>::Entry> row;
            row.reserve(static_cast<std::size_t>(kernel.h()) * kernel.w());
            for (int ki = 0; ki < kernel.h(); ++ki)
                for (int kj = 0; kj < kernel.w(); ++kj)
                    row.push_back({(oy * stride + ki) * in_w + (ox * stride + kj),
                                   kernel.at(0, 0, ki, kj)});
            m.push_row(std::move(row));
        }
    }
    return m;
}

/// Transpose convolution (deconvolution). input (N,C,H,W), kernel (C,F,Kh,Kw),
/// output (N, F, (H-1)*S+Kh, (W-1)*S+Kw). Equals C^T vec(input) for the
/// matching forward convolution. A kernel smaller than the stride leaves
/// uncovered output gaps and is flagged through the warning sink.
template <class T>
Tensor<T> conv2d_transpose(const Tensor<T>& input, const Tensor<T>& kernel, int stride) {
    if (stride < 1) throw ConfigError("stride must be >= 1");
    if (input.c() != kernel.n())
        throw DimensionError("channel axis mismatch: input has " + std::to_string(input.c()) +
                             " channels, transpose kernel expects " + std::to_string(kernel.n()));
    if (kernel.h() < stride || kernel.w() < stride)
        warn("transpose convolution kernel " + std::to_string(kernel.h()) + "x" +
             std::to_string(kernel.w()) + " smaller than stride " + std::to_string(stride) +
             " leaves output gaps");

    const int C = input.c();
    const int F = kernel.c();
    const int oh = (input.h() - 1) * stride + kernel.h();
    const int ow = (input.w() - 1) * stride + kernel.w();
    Tensor<T> out({input.n(), F, oh, ow});

#ifdef _OPENMP
#pragma omp parallel for collapse(2) schedule(static)
#endif
    for (int n = 0; n < input.n(); ++n) {
        for (int f = 0; f < F; ++f) {
            T* dst = out.data() + out.index(n, f, 0, 0);
            for (int c = 0; c < C; ++c) {
                const T* src = input.data() + input.index(n, c, 0, 0);
                const T* ker = kernel.data() + kernel.index(c, f, 0, 0);
                for (int iy = 0; iy < input.h(); ++iy) {
                    for (int ix = 0; ix < input.w(); ++ix) {
                        const T v = src[iy * input.w() + ix];
                        if (v == T(0)) continue;
                        T* base = dst + static_cast<std::int64_t>(iy) * stride * ow + ix * stride;
                        for (int ki = 0; ki < kernel.h(); ++ki)
                            for (int kj = 0; kj < kernel.w(); ++kj)
                                base[static_cast<std::int64_t>(ki) * ow + kj] +=
                                    v * ker[ki * kernel.w() + kj];
                    }
                }
            }
        }
    }
    return out;
}

template <class T>
struct DeconvGrads {
    Tensor<T> input;
    Tensor<T> kernel;
};

/// Gradients of conv2d_transpose. The input gradient is the matching strided
/// correlation of grad_out; the kernel gradient correlates input with grad_out.
template <class T>
DeconvGrads<T> conv2d_transpose_backward(const Tensor<T>& input, const Tensor<T>& kernel,
                                         const Tensor<T>& grad_out, int stride) {
    const int C = input.c();
    const int F = kernel.c();
    DeconvGrads<T> g{Tensor<T>(input.shape()), Tensor<T>(kernel.shape())};

#ifdef _OPENMP
#pragma omp parallel for collapse(2) schedule(static)
#endif
    for (int n = 0; n < input.n(); ++n) {
        for (int c = 0; c < C; ++c) {
            T* dsrc = g.input.data() + g.input.index(n, c, 0, 0);
            for (int f = 0; f < F; ++f) {
                const T* dout = grad_out.data() + grad_out.index(n, f, 0, 0);
                const T* ker = kernel.data() + kernel.index(c, f, 0, 0);
                for (int iy = 0; iy < input.h(); ++iy) {
                    for (int ix = 0; ix < input.w(); ++ix) {
                        const T* base =
                            dout + static_cast<std::int64_t>(iy) * stride * grad_out.w() +
                            ix * stride;
                        T acc = T(0);
                        for (int ki = 0; ki < kernel.h(); ++ki)
                            for (int kj = 0; kj < kernel.w(); ++kj)
                                acc += base[static_cast<std::int64_t>(ki) * grad_out.w() + kj] *
                                       ker[ki * kernel.w() + kj];
                        dsrc[iy * input.w() + ix] += acc;
                    }
                }
            }
        }
    }

    for (int n = 0; n < input.n(); ++n) {
        for (int c = 0; c < C; ++c) {
            const T* src = input.data() + input.index(n, c, 0, 0);
            for (int f = 0; f < F; ++f) {
                const T* dout = grad_out.data() + grad_out.index(n, f, 0, 0);
                T* dker = g.kernel.data() + g.kernel.index(c, f, 0, 0);
                for (int iy = 0; iy < input.h(); ++iy) {
                    for (int ix = 0; ix < input.w(); ++ix) {
                        const T v = src[iy * input.w() + ix];
                        if (v == T(0)) continue;
                        const T* base =
                            dout + static_cast<std::int64_t>(iy) * stride * grad_out.w() +
                            ix * stride;
                        for (int ki = 0; ki < kernel.h(); ++ki)
                            for (int kj = 0; kj < kernel.w(); ++kj)
                                dker[ki * kernel.w() + kj] +=
                                    v * base[static_cast<std::int64_t>(ki) * grad_out.w() + kj];
                    }
                }
            }
        }
    }
    return g;
}

/// Separable tent-filter kernel for bilinear upsampling, (channels, channels,
/// size, size), nonzero only on the channel diagonal. The 1-D factor is
/// 1 - |i - c| / f with c = (size-1)/2 and f = ceil(size/2).
template <class T>
Tensor<T> bilinear_kernel(int size, int channels) {
    if (size < 2) throw ConfigError("bilinear kernel size must be >= 2");
    if (channels < 1) throw ConfigError("bilinear kernel needs >= 1 channel");

    const T center = T(size - 1) / T(2);
    const T factor = T((size + 1) / 2);
    std::vector<T> tent(size);
    for (int i = 0; i < size; ++i) tent[i] = T(1) - std::abs(T(i) - center) / factor;

    Tensor<T> k({channels, channels, size, size});
    for (int c = 0; c < channels; ++c)
        for (int i = 0; i < size; ++i)
            for (int j = 0; j < size; ++j) k.at(c, c, i, j) = tent[i] * tent[j];
    return k;
}

}  // namespace polypseg
