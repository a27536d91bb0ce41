#include "doctest.h"
#include "grc/checks.hpp"
#include "grc/convops.hpp"
#include "grc/gradcheck.hpp"
#include "grc/parallel.hpp"

using namespace grc;

namespace {

FilterBank bank(Shape4 shape, std::uint64_t seed, bool with_bias = false) {
    FilterBank f(shape, with_bias);
    f.weights = random_tensor(shape, seed);
    if (with_bias) {
        const Tensor4 b = random_tensor({shape.n, 1, 1, 1}, seed + 1);
        f.bias.assign(b.data().begin(), b.data().end());
    }
    return f;
}

}  // namespace

TEST_CASE("neighborhoods") {
    const std::vector<Offset> n3 = neighborhood(3);
    REQUIRE(n3.size() == 9);
    CHECK(n3.front() == Offset{-1, -1});
    CHECK(n3[1] == Offset{-1, 0});
    CHECK(n3.back() == Offset{1, 1});
    CHECK(neighborhood(1) == std::vector<Offset>{{0, 0}});
    const std::vector<Offset> d2 = dilated_neighborhood(3, 2);
    CHECK(d2.front() == Offset{-2, -2});
    CHECK(d2[1] == Offset{-2, 0});
    CHECK(d2.back() == Offset{2, 2});
    CHECK(dilated_neighborhood(3, 4).back() == Offset{4, 4});
}

TEST_CASE("output size") {
    CHECK(ConvSpec{3, 1, 1, 1}.out_size(7) == 7);
    CHECK(ConvSpec{3, 2, 1, 1}.out_size(7) == 4);
    CHECK(ConvSpec{3, 1, 2, 2}.out_size(7) == 7);
    CHECK(ConvSpec{5, 2, 4, 0}.out_size(20) == 2);
    CHECK_THROWS_AS(validate(ConvSpec{2, 1, 1, 0}), std::invalid_argument);
    CHECK_THROWS_AS(validate(ConvSpec{3, 0, 1, 0}), std::invalid_argument);
    CHECK_THROWS(conv_output_shape({1, 3, 4, 4}, FilterBank({2, 2, 3, 3}, false), ConvSpec::same(3)));
    CHECK_THROWS(conv_output_shape({1, 2, 2, 2}, FilterBank({2, 2, 5, 5}, false), ConvSpec{5, 1, 1, 0}));
}

TEST_CASE("identity kernel reproduces the input") {
    const Tensor4 x = random_tensor({2, 3, 5, 6}, 1);
    FilterBank id({3, 3, 3, 3}, false);
    for (int c = 0; c < 3; ++c) id.weights.at(c, c, 1, 1) = 1;
    CHECK(conv2d(x, id, ConvSpec::same(3)) == x);
    FilterBank id1({3, 3, 1, 1}, false);
    for (int c = 0; c < 3; ++c) id1.weights.at(c, c, 0, 0) = 1;
    CHECK(conv2d(x, id1, ConvSpec::same(1)) == x);
}

TEST_CASE("bias is added per filter") {
    const Tensor4 x = zeros({1, 2, 3, 3});
    FilterBank f({2, 2, 3, 3}, true);
    f.bias = {1.5, -2};
    const Tensor4 y = conv2d(x, f, ConvSpec::same(3));
    CHECK(y.at(0, 0, 1, 1) == 1.5);
    CHECK(y.at(0, 1, 2, 0) == -2);
}

TEST_CASE("convolution is linear in the input") {
    const FilterBank f = bank({4, 3, 3, 3}, 2);
    const Tensor4 a = random_tensor({1, 3, 6, 6}, 3), b = random_tensor({1, 3, 6, 6}, 4);
    Tensor4 mix = a;
    for (std::size_t i = 0; i < mix.size(); ++i) mix[i] = 2 * a[i] - 3 * b[i];
    const Tensor4 ya = conv2d(a, f, ConvSpec::same(3)), yb = conv2d(b, f, ConvSpec::same(3));
    Tensor4 expected = ya;
    for (std::size_t i = 0; i < expected.size(); ++i) expected[i] = 2 * ya[i] - 3 * yb[i];
    CHECK(max_relative_difference(conv2d(mix, f, ConvSpec::same(3)), expected) < 1e-13);
}

TEST_CASE("a standard convolution only sees its window") {
    const FilterBank f = bank({2, 2, 3, 3}, 5);
    const Tensor4 x = random_tensor({1, 2, 9, 9}, 6);
    Tensor4 moved = x;
    moved.at(0, 1, 0, 0) += 1;
    const Tensor4 y0 = conv2d(x, f, ConvSpec::same(3)), y1 = conv2d(moved, f, ConvSpec::same(3));
    for (int y = 0; y < 9; ++y) {
        for (int xx = 0; xx < 9; ++xx) {
            const bool near = y <= 1 && xx <= 1;
            for (int o = 0; o < 2; ++o) {
                if (!near) CHECK(y0.at(0, o, y, xx) == y1.at(0, o, y, xx));
            }
        }
    }
    CHECK(y0.at(0, 0, 1, 1) != y1.at(0, 0, 1, 1));
}

TEST_CASE("batch items are independent") {
    const FilterBank f = bank({3, 2, 3, 3}, 7, true);
    const Tensor4 x = random_tensor({3, 2, 5, 5}, 8);
    const Tensor4 y = conv2d(x, f, ConvSpec{3, 2, 1, 1});
    for (int b = 0; b < 3; ++b) {
        CHECK(slice_batch(y, b, b + 1) == conv2d(slice_batch(x, b, b + 1), f, ConvSpec{3, 2, 1, 1}));
    }
}

TEST_CASE("fast convolution matches the nested-loop oracle") {
    const EquivalenceStats s = conv_equivalence(60, 17);
    CHECK(s.cases == 60);
    CHECK(s.max_relative_error < 1e-10);
}

TEST_CASE("hand-computed window sums") {
    // 3x3 input 1..9, 3x3 all-ones kernel, padding 1.
    Tensor4 x({1, 1, 3, 3});
    for (int i = 0; i < 9; ++i) x[i] = i + 1;
    FilterBank ones({1, 1, 3, 3}, false);
    for (Real& v : ones.weights.data()) v = 1;
    const Tensor4 y = conv2d(x, ones, ConvSpec{3, 1, 1, 1});
    CHECK(y.at(0, 0, 0, 0) == 12);
    CHECK(y.at(0, 0, 1, 1) == 45);
    CHECK(y.at(0, 0, 2, 2) == 28);
    CHECK(conv2d_oracle(x, ones, ConvSpec{3, 1, 1, 1}) == y);
}

TEST_CASE("backward matches finite differences including stride and dilation") {
    for (const auto& entry : gradcheck_registry()) {
        if (entry.covers != "conv2d") continue;
        CAPTURE(entry.op.name);
        CHECK(check_op(entry.op, 3).passes(1e-5));
    }
}

TEST_CASE("convolution is deterministic across thread counts") {
    const FilterBank f = bank({4, 3, 3, 3}, 9);
    const Tensor4 x = random_tensor({4, 3, 8, 8}, 10);
    const Tensor4 g = random_tensor({4, 4, 8, 8}, 11);
    set_thread_count(1);
    const ConvGrads a = conv2d_backward(x, f, ConvSpec::same(3), g);
    set_thread_count(3);
    const ConvGrads b = conv2d_backward(x, f, ConvSpec::same(3), g);
    set_thread_count(0);
    CHECK(a.input == b.input);
    CHECK(a.filters.weights == b.filters.weights);
}
