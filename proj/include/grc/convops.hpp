#pragma once

#include <vector>

#include "grc/tensor.hpp"

namespace grc {

struct Offset {
    int dh = 0;
    int dw = 0;
    bool operator==(const Offset&) const = default;
};

struct ConvSpec {
    int kernel = 3;    // odd
    int stride = 1;
    int dilation = 1;
    int padding = 0;

    /// Grid radius d*(K-1)/2 (equals floor(K/2) when d = 1).
    int radius() const { return dilation * (kernel - 1) / 2; }
    int extent() const { return dilation * (kernel - 1) + 1; }
    int out_size(int in) const { return (in + 2 * padding - extent()) / stride + 1; }

    /// Kernel K with "same" padding for stride 1.
    static ConvSpec same(int kernel, int dilation = 1, int stride = 1) {
        return ConvSpec{kernel, stride, dilation, dilation * (kernel - 1) / 2};
    }
    bool operator==(const ConvSpec&) const = default;
};

/// Throws std::invalid_argument for even/non-positive K, stride < 1, d < 1 or padding < 0.
void validate(const ConvSpec& spec);

/// K*K offsets {-r..r}^2 with r = floor(K/2), row-major.
std::vector<Offset> neighborhood(int kernel);

/// K*K offsets {-r, -r+d, ..., r}^2 with r = floor((d(K-1)+1)/2), row-major.
std::vector<Offset> dilated_neighborhood(int kernel, int dilation);

Shape4 conv_output_shape(const Shape4& input, const FilterBank& filters, const ConvSpec& spec);

/// Patch-unrolled convolution: explicit zero padding, im2col, blocked matrix product.
Tensor4 conv2d(const Tensor4& input, const FilterBank& filters, const ConvSpec& spec);

/// Literal nested-loop convolution used as ground truth for conv2d.
Tensor4 conv2d_oracle(const Tensor4& input, const FilterBank& filters, const ConvSpec& spec);

struct ConvGrads {
    Tensor4 input;
    FilterBank filters;  // weight gradient; bias gradient present iff the bank has a bias
};

ConvGrads conv2d_backward(const Tensor4& input, const FilterBank& filters, const ConvSpec& spec,
                          const Tensor4& grad_out);

/// max|a-b| / max(max|a|, max|b|, 1e-300); shapes must match.
double max_relative_difference(const Tensor4& a, const Tensor4& b);

}  // namespace grc
