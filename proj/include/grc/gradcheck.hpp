#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "grc/tensor.hpp"

namespace grc {

inline constexpr double kFiniteDiffEps = 1e-5;

/// Central differences (loss(x + eps e_i) - loss(x - eps e_i)) / (2 eps) for every element.
/// Throws std::runtime_error if the loss is non-finite at any probe.
Tensor4 finite_diff(const std::function<double(const Tensor4&)>& loss_fn, const Tensor4& x,
                    double eps = kFiniteDiffEps);

/// |a - b| / max(|a|, |b|, 1e-12).
double relative_error(double a, double b);

struct GradReport {
    std::string op;
    double max_relative_error = 0;
    std::string worst_tensor;
    std::vector<int> worst_coordinate;  // (b, c, y, x) within worst_tensor
    std::size_t num_checked = 0;
    bool finite = true;

    bool passes(double tol) const { return finite && num_checked > 0 && max_relative_error < tol; }
};

/// An operation y = f(x_0, ..., x_k) with a hand-written vector-Jacobian product.
struct DifferentiableOp {
    std::string name;
    std::vector<std::string> input_names;
    /// Evaluation point, one tensor per differentiable input (data and weights).
    std::function<std::vector<Tensor4>(std::uint64_t seed)> make_inputs;
    std::function<Tensor4(std::span<const Tensor4>)> forward;
    /// Gradients for every input, given dL/dy.
    std::function<std::vector<Tensor4>(std::span<const Tensor4>, const Tensor4& grad_out)> backward;
};

/// Compares analytic and central-difference gradients of the scalar loss
/// sum(r * f(x)), with r a fixed random projection, over every input element.
GradReport check_op(const DifferentiableOp& op, std::uint64_t seed, double eps = kFiniteDiffEps);

/// Tensor of i.i.d. uniform values in [lo, hi).
Tensor4 random_tensor(Shape4 shape, std::uint64_t seed, double lo = -1.0, double hi = 1.0);

}  // namespace grc
