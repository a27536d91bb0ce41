#include "grc/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "grc/rng.hpp"

namespace grc {

Tensor4 random_tensor(Shape4 shape, std::uint64_t seed, double lo, double hi) {
    Tensor4 t(shape);
    CounterRng rng(seed);
    for (Real& v : t.data()) v = static_cast<Real>(rng.uniform(lo, hi));
    return t;
}

Tensor4 finite_diff(const std::function<double(const Tensor4&)>& loss_fn, const Tensor4& x, double eps) {
    if (!(eps > 0)) throw std::invalid_argument("finite difference step must be > 0");
    Tensor4 probe = x;
    Tensor4 grad(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) {
        const Real saved = probe[i];
        probe[i] = static_cast<Real>(saved + eps);
        const double up = loss_fn(probe);
        probe[i] = static_cast<Real>(saved - eps);
        const double down = loss_fn(probe);
        probe[i] = saved;
        if (!std::isfinite(up) || !std::isfinite(down)) {
            throw std::runtime_error("non-finite loss during finite differencing at element " + std::to_string(i));
        }
        grad[i] = static_cast<Real>((up - down) / (2 * eps));
    }
    return grad;
}

double relative_error(double a, double b) {
    return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-12});
}

GradReport check_op(const DifferentiableOp& op, std::uint64_t seed, double eps) {
    GradReport report;
    report.op = op.name;
    const std::vector<Tensor4> inputs = op.make_inputs(seed);
    const Tensor4 y = op.forward(inputs);
    const Tensor4 projection = random_tensor(y.shape(), derive_key(seed, 0xC0FFEE));

    auto projected_loss = [&](std::span<const Tensor4> xs) {
        const Tensor4 out = op.forward(xs);
        double loss = 0;
        for (std::size_t i = 0; i < out.size(); ++i) loss += static_cast<double>(projection[i]) * out[i];
        return loss;
    };

    const std::vector<Tensor4> analytic = op.backward(inputs, projection);
    if (analytic.size() != inputs.size()) {
        throw std::logic_error(op.name + ": backward returned " + std::to_string(analytic.size()) +
                               " gradients for " + std::to_string(inputs.size()) + " inputs");
    }
    for (std::size_t k = 0; k < inputs.size(); ++k) {
        std::vector<Tensor4> xs = inputs;
        Tensor4 numeric;
        try {
            numeric = finite_diff(
                [&](const Tensor4& probe) {
                    xs[k] = probe;
                    return projected_loss(xs);
                },
                inputs[k], eps);
        } catch (const std::runtime_error&) {
            report.finite = false;
            continue;
        }
        const Tensor4& a = analytic[k];
        if (a.shape() != numeric.shape()) {
            throw std::logic_error(op.name + ": gradient shape mismatch for input " + std::to_string(k));
        }
        const std::string label = k < op.input_names.size() ? op.input_names[k] : "input" + std::to_string(k);
        for (std::size_t i = 0; i < a.size(); ++i) {
            if (!std::isfinite(a[i]) || !std::isfinite(numeric[i])) {
                report.finite = false;
                continue;
            }
            const double err = relative_error(a[i], numeric[i]);
            ++report.num_checked;
            if (err >= report.max_relative_error) {
                report.max_relative_error = err;
                report.worst_tensor = label;
                const Shape4 s = a.shape();
                const int x = static_cast<int>(i % s.w);
                const int yy = static_cast<int>((i / s.w) % s.h);
                const int c = static_cast<int>((i / s.plane()) % s.c);
                const int b = static_cast<int>(i / (s.plane() * s.c));
                report.worst_coordinate = {b, c, yy, x};
            }
        }
    }
    return report;
}

}  // namespace grc
