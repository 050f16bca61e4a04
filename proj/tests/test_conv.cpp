#include <catch2/catch_amalgamated.hpp>

#include <random>

#include "polypseg/conv.hpp"
#include "polypseg/gradcheck.hpp"
#include "test_util.hpp"

using namespace polypseg;
using testutil::random_tensor;

namespace {

// Reshapes a ConvMatrix product back into a (1, 1, oh, ow) tensor.
Tensor<double> as_map(const std::vector<double>& v, int oh, int ow) {
    return Tensor<double>({1, 1, oh, ow}, v);
}

}  // namespace

TEST_CASE("identity 1x1 kernel reproduces the input") {
    Tensor<double> x = random_tensor({2, 1, 4, 4}, 11);
    Tensor<double> k({1, 1, 1, 1});
    k[0] = 1.0;
    std::vector<double> bias{0.0};
    Tensor<double> y = conv2d_forward(x, k, bias, 1, 0);
    REQUIRE(y.shape() == x.shape());
    REQUIRE(testutil::max_abs_diff(x, y) == 0.0);
}

TEST_CASE("all-ones 3x3 kernel on all-ones 3x3 image sums to 9") {
    Tensor<double> x = Tensor<double>::full({1, 1, 3, 3}, 1.0);
    Tensor<double> k = Tensor<double>::full({1, 1, 3, 3}, 1.0);
    std::vector<double> bias{0.0};
    Tensor<double> y = conv2d_forward(x, k, bias, 1, 0);
    REQUIRE(y.shape() == Shape{1, 1, 1, 1});
    REQUIRE(y[0] == Catch::Approx(9.0));
}

TEST_CASE("forward matches the sparse-matrix route on a 5x5 input") {
    Tensor<double> x = random_tensor({1, 1, 5, 5}, 21);
    Tensor<double> k = random_tensor({1, 1, 3, 3}, 22);
    std::vector<double> bias{0.0};
    Tensor<double> dense = conv2d_forward(x, k, bias, 1, 0);
    ConvMatrix<double> m = conv2d_as_matrix(k, 5, 5, 1);
    auto y = m.multiply(std::span<const double>(x.data(), x.size()));
    REQUIRE(testutil::max_abs_diff(dense, as_map(y, 3, 3)) < 1e-10);
}

TEST_CASE("forward shape errors name the offending axis") {
    Tensor<double> x({1, 3, 6, 6});
    Tensor<double> k({4, 2, 3, 3});
    std::vector<double> bias(4, 0.0);
    REQUIRE_THROWS_MATCHES(conv2d_forward(x, k, bias, 1, 0), DimensionError,
                           Catch::Matchers::MessageMatches(
                               Catch::Matchers::ContainsSubstring("channel")));

    Tensor<double> k2({4, 3, 3, 3});
    std::vector<double> bias2(4, 0.0);
    // (6 - 3) not divisible by 2
    REQUIRE_THROWS_AS(conv2d_forward(x, k2, bias2, 2, 0), ConfigError);
}

TEST_CASE("matrix dimensions follow the output-size formula") {
    Tensor<double> k3 = random_tensor({1, 1, 3, 3}, 31);
    ConvMatrix<double> m1 = conv2d_as_matrix(k3, 5, 5, 1);
    REQUIRE(m1.rows() == 9);
    REQUIRE(m1.cols() == 25);

    Tensor<double> k2 = random_tensor({1, 1, 2, 2}, 32);
    ConvMatrix<double> m2 = conv2d_as_matrix(k2, 4, 4, 2);
    REQUIRE(m2.rows() == 4);
    for (int r = 0; r < m2.rows(); ++r) REQUIRE(m2.row_nonzeros(r) == 4);

    REQUIRE_THROWS_AS(conv2d_as_matrix(k3, 6, 6, 2), ConfigError);
}

TEST_CASE("matrix multiply equals dense convolution on a 6x6 input") {
    Tensor<double> x = random_tensor({1, 1, 6, 6}, 41);
    Tensor<double> k = random_tensor({1, 1, 3, 3}, 42);
    std::vector<double> bias{0.0};
    Tensor<double> dense = conv2d_forward(x, k, bias, 1, 0);
    ConvMatrix<double> m = conv2d_as_matrix(k, 6, 6, 1);
    auto y = m.multiply(std::span<const double>(x.data(), x.size()));
    REQUIRE(testutil::max_abs_diff(dense, as_map(y, 4, 4)) < 1e-10);
}

TEST_CASE("single-pixel scatter through a 2x2 kernel") {
    Tensor<double> x({1, 1, 1, 1});
    x[0] = 3.25;
    Tensor<double> k = Tensor<double>::full({1, 1, 2, 2}, 1.0);
    Tensor<double> y = conv2d_transpose(x, k, 2);
    REQUIRE(y.shape() == Shape{1, 1, 2, 2});
    for (std::int64_t i = 0; i < y.size(); ++i) REQUIRE(y[i] == Catch::Approx(3.25));
}

TEST_CASE("transpose convolution equals the transposed matrix route") {
    Tensor<double> coarse = random_tensor({1, 1, 3, 3}, 51);
    Tensor<double> k = random_tensor({1, 1, 4, 4}, 52);
    Tensor<double> up = conv2d_transpose(coarse, k, 2);
    REQUIRE(up.shape() == Shape{1, 1, 8, 8});

    // The matching forward maps 8x8 -> 3x3, so C^T maps 3x3 back to 8x8.
    ConvMatrix<double> m = conv2d_as_matrix(k, 8, 8, 2);
    auto y = m.multiply_transpose(std::span<const double>(coarse.data(), coarse.size()));
    REQUIRE(testutil::max_abs_diff(up, as_map(y, 8, 8)) < 1e-10);
}

TEST_CASE("bilinear deconvolution preserves constants in the interior") {
    const int stride = 4;
    Tensor<double> x = Tensor<double>::full({1, 1, 5, 5}, 2.5);
    Tensor<double> k = bilinear_kernel<double>(2 * stride, 1);
    Tensor<double> y = conv2d_transpose(x, k, stride);
    // Interior excludes the kernel-overhang border of one stride on each side.
    for (int iy = stride; iy < y.h() - stride; ++iy)
        for (int ix = stride; ix < y.w() - stride; ++ix)
            REQUIRE(y.at(0, 0, iy, ix) == Catch::Approx(2.5).epsilon(1e-12));
}

TEST_CASE("undersized transpose kernel is flagged through the warning sink") {
    std::vector<std::string> seen;
    WarnHandler old = warn_handler();
    warn_handler() = [&](const std::string& m) { seen.push_back(m); };
    Tensor<double> x = random_tensor({1, 1, 3, 3}, 61);
    Tensor<double> k = random_tensor({1, 1, 1, 1}, 62);
    conv2d_transpose(x, k, 2);
    warn_handler() = old;
    REQUIRE(seen.size() == 1);
    REQUIRE(seen[0].find("gaps") != std::string::npos);
}

TEST_CASE("bilinear kernel values") {
    Tensor<double> k2 = bilinear_kernel<double>(2, 1);
    for (std::int64_t i = 0; i < k2.size(); ++i) REQUIRE(k2[i] == Catch::Approx(0.25));

    // Tent factor for size 4, computed from 1 - |i - c|/f with c = 1.5, f = 2.
    const double expect[4] = {0.25, 0.75, 0.75, 0.25};
    Tensor<double> k4 = bilinear_kernel<double>(4, 1);
    for (int i = 0; i < 4; ++i)
        for (int j = 0; j < 4; ++j)
            REQUIRE(k4.at(0, 0, i, j) == Catch::Approx(expect[i] * expect[j]));
}

TEST_CASE("bilinear kernel is symmetric under flips") {
    for (int size : {2, 3, 4, 6, 8, 16}) {
        Tensor<double> k = bilinear_kernel<double>(size, 2);
        for (int c = 0; c < 2; ++c)
            for (int i = 0; i < size; ++i)
                for (int j = 0; j < size; ++j) {
                    REQUIRE(k.at(c, c, i, j) == k.at(c, c, size - 1 - i, j));
                    REQUIRE(k.at(c, c, i, j) == k.at(c, c, i, size - 1 - j));
                }
        // channel-diagonal: no cross-channel weight
        for (int i = 0; i < size; ++i)
            for (int j = 0; j < size; ++j) {
                REQUIRE(k.at(0, 1, i, j) == 0.0);
                REQUIRE(k.at(1, 0, i, j) == 0.0);
            }
    }
}

TEST_CASE("randomized corpus: dense conv equals matrix multiply, transpose equals C^T") {
    std::mt19937_64 rng(777);
    std::uniform_int_distribution<int> ks(1, 4), ss(1, 3), extra(0, 4);
    for (int trial = 0; trial < 40; ++trial) {
        const int kh = ks(rng), kw = ks(rng), s = ss(rng);
        const int h = kh + s * extra(rng), w = kw + s * extra(rng);
        Tensor<double> k = random_tensor({1, 1, kh, kw}, 1000 + trial);
        Tensor<double> x = random_tensor({1, 1, h, w}, 2000 + trial);
        const int oh = (h - kh) / s + 1, ow = (w - kw) / s + 1;

        ConvMatrix<double> m = conv2d_as_matrix(k, w, h, s);
        REQUIRE(m.rows() == oh * ow);

        std::vector<double> bias{0.0};
        Tensor<double> dense = conv2d_forward(x, k, bias, s, 0);
        auto via_matrix = m.multiply(std::span<const double>(x.data(), x.size()));
        REQUIRE(testutil::max_abs_diff(dense, as_map(via_matrix, oh, ow)) < 1e-10);

        Tensor<double> coarse = random_tensor({1, 1, oh, ow}, 3000 + trial);
        Tensor<double> up = conv2d_transpose(coarse, k, s);
        REQUIRE((up.h() == h && up.w() == w));
        auto via_t = m.multiply_transpose(std::span<const double>(coarse.data(), coarse.size()));
        REQUIRE(testutil::max_abs_diff(up, as_map(via_t, h, w)) < 1e-10);
    }
}

TEST_CASE("conv backward matches finite differences") {
    Tensor<double> x = random_tensor({2, 3, 6, 6}, 71);
    Tensor<double> k = random_tensor({4, 3, 3, 3}, 72, -0.5, 0.5);
    std::vector<double> bias{0.1, -0.2, 0.3, 0.0};

    auto fwd = [&](const Tensor<double>& in) {
        return conv2d_forward(in, k, std::span<const double>(bias), 1, 1);
    };
    auto bwd = [&](const Tensor<double>& in, const Tensor<double>& dy) {
        return conv2d_backward(in, k, dy, 1, 1).input;
    };
    auto res = grad_check<double>(fwd, bwd, x);
    REQUIRE(res.max_rel_error < 1e-6);
}

TEST_CASE("conv kernel and bias gradients match finite differences") {
    Tensor<double> x = random_tensor({1, 2, 5, 5}, 81);
    Tensor<double> k = random_tensor({3, 2, 3, 3}, 82, -0.5, 0.5);
    std::vector<double> bias{0.0, 0.5, -0.25};
    Tensor<double> w = random_tensor({1, 3, 5, 5}, 83);

    auto scalar = [&]() {
        Tensor<double> y = conv2d_forward(x, k, std::span<const double>(bias), 1, 1);
        double acc = 0.0;
        for (std::int64_t i = 0; i < y.size(); ++i) acc += w[i] * y[i];
        return acc;
    };
    ConvGrads<double> g = conv2d_backward(x, k, w, 1, 1);

    double err_k = max_rel_error_fd<double>(scalar, std::span<double>(k.data(), k.size()),
                                            std::span<const double>(g.kernel.data(), g.kernel.size()),
                                            1e-5, 0, 5);
    REQUIRE(err_k < 1e-6);
    double err_b = max_rel_error_fd<double>(scalar, std::span<double>(bias.data(), bias.size()),
                                            std::span<const double>(g.bias.data(), g.bias.size()),
                                            1e-5, 0, 6);
    REQUIRE(err_b < 1e-6);
}

TEST_CASE("deconv backward matches finite differences") {
    Tensor<double> x = random_tensor({1, 2, 3, 3}, 91);
    Tensor<double> k = random_tensor({2, 3, 4, 4}, 92, -0.5, 0.5);

    auto fwd = [&](const Tensor<double>& in) { return conv2d_transpose(in, k, 2); };
    auto bwd = [&](const Tensor<double>& in, const Tensor<double>& dy) {
        return conv2d_transpose_backward(in, k, dy, 2).input;
    };
    auto res = grad_check<double>(fwd, bwd, x);
    REQUIRE(res.max_rel_error < 1e-6);

    Tensor<double> w = random_tensor({1, 3, 8, 8}, 93);
    auto scalar = [&]() {
        Tensor<double> y = conv2d_transpose(x, k, 2);
        double acc = 0.0;
        for (std::int64_t i = 0; i < y.size(); ++i) acc += w[i] * y[i];
        return acc;
    };
    DeconvGrads<double> g = conv2d_transpose_backward(x, k, w, 2);
    double err_k = max_rel_error_fd<double>(scalar, std::span<double>(k.data(), k.size()),
                                            std::span<const double>(g.kernel.data(), g.kernel.size()),
                                            1e-5, 0, 7);
    REQUIRE(err_k < 1e-6);
}
