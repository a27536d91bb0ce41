#include <cmath>

#include "doctest.h"
#include "grc/gradcheck.hpp"
#include "grc/layers.hpp"

using namespace grc;

TEST_CASE("relu and its gradient") {
    Tensor4 x({1, 1, 1, 4}, std::vector<Real>{-1, 0, 2, -3});
    const Tensor4 y = relu(x);
    CHECK(y == Tensor4({1, 1, 1, 4}, std::vector<Real>{0, 0, 2, 0}));
    const Tensor4 g = relu_backward(y, Tensor4({1, 1, 1, 4}, 5.0));
    CHECK(g == Tensor4({1, 1, 1, 4}, std::vector<Real>{0, 0, 5, 0}));
}

TEST_CASE("batch norm in train mode standardises each channel") {
    const Tensor4 x = random_tensor({4, 3, 5, 5}, 1, -3, 7);
    BatchNorm bn(3);
    bn.scale = {2, 1, 0.5};
    bn.shift = {1, 0, -1};
    const Tensor4 y = batch_norm(x, bn, true);
    for (int c = 0; c < 3; ++c) {
        double mean = 0, sq = 0;
        const double count = 4 * 25;
        for (int b = 0; b < 4; ++b) {
            for (Real v : y.plane(b, c)) {
                mean += v;
                sq += v * v;
            }
        }
        mean /= count;
        const double var = sq / count - mean * mean;
        CHECK(mean == doctest::Approx(bn.shift[c]).epsilon(1e-9));
        CHECK(std::sqrt(var) == doctest::Approx(bn.scale[c]).epsilon(1e-4));
    }
}

TEST_CASE("batch norm running statistics") {
    // One channel, values {1, 3}: mean 2, unbiased variance 2.
    Tensor4 x({2, 1, 1, 1}, std::vector<Real>{1, 3});
    BatchNorm bn(1);
    batch_norm(x, bn, true);
    CHECK(bn.running_mean[0] == doctest::Approx(0.2));
    CHECK(bn.running_var[0] == doctest::Approx(0.9 + 0.1 * 2));
    // eval mode uses the running statistics only
    const Tensor4 y = batch_norm(Tensor4({1, 1, 1, 1}, 0.2), bn, false);
    CHECK(y[0] == doctest::Approx(0.0));
    CHECK(bn.running_mean[0] == doctest::Approx(0.2));
}

TEST_CASE("bilinear upsampling of a ramp") {
    Tensor4 x({1, 1, 1, 4}, std::vector<Real>{0, 1, 2, 3});
    const Tensor4 y = bilinear_upsample(x, 1, 8);
    const std::vector<Real> expected{0, 0.25, 0.75, 1.25, 1.75, 2.25, 2.75, 3};
    for (int i = 0; i < 8; ++i) CHECK(y.at(0, 0, 0, i) == doctest::Approx(expected[i]).epsilon(1e-15));
    CHECK(bilinear_upsample(x, 1, 4) == x);
    CHECK_THROWS(bilinear_upsample(x, 1, 3));
}

TEST_CASE("bilinear upsampling keeps constants") {
    const Tensor4 x({2, 3, 3, 5}, 0.7);
    const Tensor4 y = bilinear_upsample(x, 12, 17);
    for (Real v : y.data()) CHECK(v == doctest::Approx(0.7));
}

TEST_CASE("bilinear backward is the adjoint") {
    const Tensor4 x = random_tensor({1, 2, 3, 4}, 2);
    const Tensor4 g = random_tensor({1, 2, 7, 9}, 3);
    const Tensor4 y = bilinear_upsample(x, 7, 9);
    const Tensor4 gx = bilinear_upsample_backward(g, 3, 4);
    double lhs = 0, rhs = 0;
    for (std::size_t i = 0; i < y.size(); ++i) lhs += y[i] * g[i];
    for (std::size_t i = 0; i < x.size(); ++i) rhs += x[i] * gx[i];
    CHECK(lhs == doctest::Approx(rhs).epsilon(1e-12));
}

TEST_CASE("cross-entropy of uniform logits") {
    const Tensor4 two({1, 2, 2, 2}, 0.3);
    CHECK(softmax_cross_entropy(two, LabelMap(1, 2, 2, 1)).loss == doctest::Approx(std::log(2.0)).epsilon(1e-14));
    const Tensor4 three({1, 3, 2, 2}, -1.0);
    CHECK(softmax_cross_entropy(three, LabelMap(1, 2, 2, 2)).loss == doctest::Approx(std::log(3.0)).epsilon(1e-14));
}

TEST_CASE("cross-entropy ignores 255 and validates labels") {
    Tensor4 logits = random_tensor({1, 3, 1, 2}, 4);
    LabelMap labels(1, 1, 2, 0);
    labels.at(0, 0, 1) = kIgnoreLabel;
    const LossResult r = softmax_cross_entropy(logits, labels);
    CHECK(r.counted == 1);
    for (int c = 0; c < 3; ++c) CHECK(r.grad_logits.at(0, c, 0, 1) == 0);
    const LossResult none = softmax_cross_entropy(logits, LabelMap(1, 1, 2, kIgnoreLabel));
    CHECK(none.loss == 0);
    CHECK(none.grad_logits.sum() == 0);
    CHECK_THROWS(softmax_cross_entropy(logits, LabelMap(1, 1, 2, 3)));
}

TEST_CASE("cross-entropy is stable for large logits") {
    Tensor4 logits({1, 2, 1, 1}, std::vector<Real>{1000, -1000});
    const LossResult r = softmax_cross_entropy(logits, LabelMap(1, 1, 1, 1));
    CHECK(r.loss == doctest::Approx(2000));
    CHECK(r.grad_logits.all_finite());
}

TEST_CASE("argmax is invariant to adding a constant per pixel") {
    Tensor4 logits = random_tensor({2, 3, 4, 4}, 5);
    const LabelMap a = argmax_labels(logits);
    for (int b = 0; b < 2; ++b) {
        for (int c = 0; c < 3; ++c) {
            for (int y = 0; y < 4; ++y) {
                for (int x = 0; x < 4; ++x) logits.at(b, c, y, x) += static_cast<Real>(y * 10 - x);
            }
        }
    }
    CHECK(argmax_labels(logits) == a);
}
