#include <cmath>

#include "doctest.h"
#include "grc/checks.hpp"
#include "grc/gradcheck.hpp"

using namespace grc;

TEST_CASE("finite differences of a sum are all ones") {
    const Tensor4 x = random_tensor({1, 2, 3, 3}, 1);
    const Tensor4 g = finite_diff([](const Tensor4& t) { return static_cast<double>(t.sum()); }, x);
    for (Real v : g.data()) CHECK(v == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("finite differences of a quadratic") {
    const Tensor4 x = random_tensor({1, 1, 2, 3}, 2);
    const Tensor4 g = finite_diff(
        [](const Tensor4& t) {
            double s = 0;
            for (Real v : t.data()) s += 1.5 * v * v;
            return s;
        },
        x);
    for (std::size_t i = 0; i < x.size(); ++i) CHECK(g[i] == doctest::Approx(3 * x[i]).epsilon(1e-8));
}

TEST_CASE("non-finite losses are reported") {
    const Tensor4 x({1, 1, 1, 1}, 0.0);
    CHECK_THROWS_AS(finite_diff([](const Tensor4& t) { return std::log(t[0]); }, x), std::runtime_error);
}

TEST_CASE("relative error") {
    CHECK(relative_error(1.0, 1.0) == 0);
    CHECK(relative_error(2.0, 1.0) == doctest::Approx(0.5));
    CHECK(relative_error(0.0, 0.0) == 0);
    CHECK(relative_error(1e-14, 0.0) == doctest::Approx(1e-2));
}

TEST_CASE("a wrong backward is caught") {
    DifferentiableOp op;
    op.name = "square";
    op.input_names = {"x"};
    op.make_inputs = [](std::uint64_t seed) { return std::vector<Tensor4>{random_tensor({1, 1, 2, 2}, seed)}; };
    op.forward = [](std::span<const Tensor4> in) {
        Tensor4 y = in[0];
        for (Real& v : y.data()) v *= v;
        return y;
    };
    op.backward = [](std::span<const Tensor4> in, const Tensor4& g) {
        Tensor4 dx = g;
        for (std::size_t i = 0; i < dx.size(); ++i) dx[i] *= 2 * in[0][i];
        return std::vector<Tensor4>{dx};
    };
    CHECK(check_op(op, 1).passes(1e-6));
    op.backward = [](std::span<const Tensor4> in, const Tensor4& g) {
        Tensor4 dx = g;
        for (std::size_t i = 0; i < dx.size(); ++i) dx[i] *= 2.01 * in[0][i];
        return std::vector<Tensor4>{dx};
    };
    const GradReport bad = check_op(op, 1);
    CHECK_FALSE(bad.passes(1e-3));
    CHECK(bad.worst_tensor == "x");
    CHECK(bad.worst_coordinate.size() == 4);
}

TEST_CASE("the registry covers every hand-written backward") {
    const auto registry = gradcheck_registry();
    CHECK(missing_gradchecks(registry).empty());
    auto trimmed = registry;
    std::erase_if(trimmed, [](const RegisteredGradCheck& r) { return r.covers == "batch_norm"; });
    CHECK(missing_gradchecks(trimmed) == std::vector<std::string>{"batch_norm"});
}

TEST_CASE("all registered gradient checks pass") {
    for (const RegisteredGradCheck& r : gradcheck_registry()) {
        const GradReport rep = check_op(r.op, 21);
        CAPTURE(r.op.name);
        CAPTURE(rep.max_relative_error);
        CHECK(rep.passes(r.tol));
    }
}
