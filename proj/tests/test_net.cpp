#include <cmath>

#include "doctest.h"
#include "grc/checks.hpp"
#include "grc/net.hpp"

using namespace grc;

TEST_CASE("default spec validates and builds") {
    const NetworkSpec spec = toy_fcn_spec(true);
    CHECK_NOTHROW(validate(spec));
    CHECK(spec.downsampling() == 4);
    const Network net = build_network(spec, 1);
    CHECK(net.stages.size() == 4);
    CHECK(net.head.size() == 3);
    CHECK(net.stages[3][0].spatial.conv.grc.has_value());
    CHECK_FALSE(net.stages[2][0].spatial.conv.grc.has_value());
    CHECK_FALSE(build_network(toy_fcn_spec(false), 1).stages[3][0].spatial.conv.grc.has_value());
}

TEST_CASE("invalid specs name the problem") {
    NetworkSpec spec = toy_fcn_spec(true);
    spec.grc_stages = {9};
    CHECK_THROWS_AS(validate(spec), std::invalid_argument);
    spec = toy_fcn_spec(true);
    spec.grc_layer_position = 4;
    CHECK_THROWS_AS(validate(spec), std::invalid_argument);
    spec = toy_fcn_spec(true);
    spec.g_h = 8;
    spec.g_w = 8;  // 64 sub-groups, more than the global channels
    CHECK_THROWS_AS(validate(spec), std::invalid_argument);
    spec = toy_fcn_spec(true);
    spec.head_stages = {1};
    CHECK_THROWS_AS(validate(spec), std::invalid_argument);
}

TEST_CASE("FCN and FCN+ have identical parameter and MAC counts") {
    const CheckResult r = parameter_parity();
    CHECK(r.pass);
    const Network a = build_network(one_by_one_spec(false), 2);
    const Network b = build_network(one_by_one_spec(true), 2);
    CHECK(parameter_count(a) == parameter_count(b));
    CHECK(multiply_accumulates(a, 32, 32) == multiply_accumulates(b, 32, 32));
}

TEST_CASE("parameter count by hand for a one-block network") {
    NetworkSpec spec;
    spec.in_channels = 3;
    spec.stem_width = 4;
    spec.kernel = 3;
    spec.bottleneck_ratio = 2;
    spec.stages = {{1, 8, 1, 1}};
    spec.grc_stages = {};
    spec.head_stages = {2};
    spec.num_classes = 3;
    const Network net = build_network(spec, 1);
    const std::size_t stem = 4 * 3 * 9 + 2 * 4;
    const std::size_t reduce = 4 * 4 + 2 * 4;
    const std::size_t spatial = 4 * 4 * 9 + 2 * 4;
    const std::size_t expand = 8 * 4 + 2 * 8;
    const std::size_t projection = 8 * 4 + 2 * 8;
    const std::size_t head = 3 * 8 + 3;
    CHECK(parameter_count(net) == stem + reduce + spatial + expand + projection + head);
}

TEST_CASE("forward gives full-resolution logits and rejects bad sizes") {
    Network net = build_network(toy_fcn_spec(true), 3);
    const Tensor4 x = random_tensor({2, 3, 32, 32}, 4, 0, 1);
    const Tensor4 y = forward(net, x, false);
    CHECK(y.shape() == Shape4{2, 3, 32, 32});
    CHECK(y.all_finite());
    CHECK_THROWS(forward(net, random_tensor({1, 3, 30, 30}, 5), false));
}

TEST_CASE("forward is deterministic and batch-independent in eval mode") {
    Network net = build_network(toy_fcn_spec(true), 3);
    const Tensor4 x = random_tensor({2, 3, 16, 16}, 6, 0, 1);
    const Tensor4 y = forward(net, x, false);
    CHECK(forward(net, x, false) == y);
    CHECK(slice_batch(y, 1, 2) == forward(net, slice_batch(x, 1, 2), false));
    CHECK(build_network(toy_fcn_spec(true), 3).stem.conv.filters.weights == net.stem.conv.filters.weights);
}

TEST_CASE("uniform logits give ln(num_classes)") {
    Network net = build_network(toy_fcn_spec(true), 3);
    for (FilterBank& h : net.head) {
        for (Real& v : h.weights.data()) v = 0;
        for (Real& v : h.bias) v = 0;
    }
    const Tensor4 x = random_tensor({1, 3, 16, 16}, 7, 0, 1);
    const LossResult r = softmax_cross_entropy(forward(net, x, false), LabelMap(1, 16, 16, 1));
    CHECK(r.loss == doctest::Approx(std::log(3.0)).epsilon(1e-12));
}

TEST_CASE("a 1x1 network with GRC sees distant pixels, without it does not") {
    const PerturbationResult p = network_receptive_field_probe(3);
    CHECK(p.grc_change > 0);
    CHECK(p.standard_change == 0);
}

TEST_CASE("poly schedule closed form") {
    TrainConfig cfg;
    cfg.base_lr = 0.01;
    cfg.total_iters = 300;
    CHECK(std::abs(poly_lr(cfg, 0) - 0.01) < 1e-12);
    CHECK(std::abs(poly_lr(cfg, 150) - 0.01 * std::pow(0.5, 0.9)) < 1e-12);
    CHECK(std::abs(poly_lr(cfg, 300)) < 1e-12);
    CHECK_THROWS(poly_lr(cfg, 301));
    CHECK_THROWS(poly_lr(cfg, -1));
}

TEST_CASE("momentum SGD two-step closed form") {
    std::vector<Real> p{1}, v{0};
    const std::vector<Real> g{0.5};
    sgd_update(p, g, v, 0.1, 0.9, 0);
    CHECK(p[0] == doctest::Approx(0.95).epsilon(1e-14));
    sgd_update(p, g, v, 0.1, 0.9, 0);
    CHECK(v[0] == doctest::Approx(0.95).epsilon(1e-14));
    CHECK(p[0] == doctest::Approx(0.855).epsilon(1e-14));
}

TEST_CASE("weight decay shrinks weights with zero gradient") {
    std::vector<Real> p{2, -4}, v{0, 0};
    const std::vector<Real> g{0, 0};
    sgd_update(p, g, v, 0.1, 0, 0.1);
    CHECK(p[0] == doctest::Approx(1.98));
    CHECK(p[1] == doctest::Approx(-3.96));
}

TEST_CASE("non-finite gradients abort the step with the parameter name") {
    Network net = build_network(toy_fcn_spec(true), 1);
    Network grads = zeros_like(net);
    grads.head[0].bias[0] = std::nan("");
    SgdState state;
    TrainConfig cfg;
    try {
        sgd_step(net, grads, cfg, 7, state);
        FAIL("expected an exception");
    } catch (const std::runtime_error& e) {
        const std::string what = e.what();
        CHECK(what.find("head") != std::string::npos);
        CHECK(what.find('7') != std::string::npos);
    }
}

TEST_CASE("parameters and state enumerate consistently") {
    Network net = build_network(toy_fcn_spec(true), 1);
    std::size_t total = 0;
    for (const ParamRef& p : parameters(net)) {
        CHECK(p.values.size() == p.shape.numel());
        total += p.values.size();
    }
    CHECK(total == parameter_count(net));
    CHECK(state(net).size() > parameters(net).size());
}

TEST_CASE("network and bottleneck gradient checks") {
    for (const auto& entry : gradcheck_registry()) {
        if (entry.covers != "network" && entry.covers != "bottleneck") continue;
        CAPTURE(entry.op.name);
        CHECK(check_op(entry.op, 12).passes(entry.tol));
    }
}
