#include "grc/convops.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#include "grc/parallel.hpp"

namespace grc {

void validate(const ConvSpec& spec) {
    if (spec.kernel < 1 || spec.kernel % 2 == 0) {
        throw std::invalid_argument("kernel size must be odd and positive, got " +
                                    std::to_string(spec.kernel));
    }
    if (spec.stride < 1) throw std::invalid_argument("stride must be >= 1");
    if (spec.dilation < 1) throw std::invalid_argument("dilation must be >= 1");
    if (spec.padding < 0) throw std::invalid_argument("padding must be >= 0");
}

std::vector<Offset> neighborhood(int kernel) { return dilated_neighborhood(kernel, 1); }

std::vector<Offset> dilated_neighborhood(int kernel, int dilation) {
    validate(ConvSpec{kernel, 1, dilation, 0});
    const int r = (dilation * (kernel - 1) + 1) / 2;
    std::vector<Offset> grid;
    grid.reserve(static_cast<std::size_t>(kernel) * kernel);
    for (int dh = -r; dh <= r; dh += dilation) {
        for (int dw = -r; dw <= r; dw += dilation) grid.push_back({dh, dw});
    }
    return grid;
}

Shape4 conv_output_shape(const Shape4& input, const FilterBank& filters, const ConvSpec& spec) {
    validate(spec);
    if (filters.kernel() != spec.kernel) {
        throw std::invalid_argument("filter kernel " + std::to_string(filters.kernel()) +
                                    " does not match spec kernel " + std::to_string(spec.kernel));
    }
    if (filters.c_in() != input.c) {
        throw std::invalid_argument("channel mismatch: input has " + std::to_string(input.c) +
                                    " channels, filters expect " + std::to_string(filters.c_in()));
    }
    const int extent = spec.extent();
    if (input.h + 2 * spec.padding < extent || input.w + 2 * spec.padding < extent) {
        throw std::invalid_argument("kernel extent " + std::to_string(extent) +
                                    " exceeds padded input " + to_string(input));
    }
    return {input.n, filters.c_out(), spec.out_size(input.h), spec.out_size(input.w)};
}

namespace {

constexpr int kColBlock = 512;
constexpr int kDepthBlock = 64;

// out (m x n) += a (m x depth) * b (depth x n); all row-major, leading dims = widths.
void gemm_acc(int m, int n, int depth, const Real* a, const Real* b, Real* out) {
    for (int p0 = 0; p0 < n; p0 += kColBlock) {
        const int p1 = std::min(n, p0 + kColBlock);
        for (int k0 = 0; k0 < depth; k0 += kDepthBlock) {
            const int k1 = std::min(depth, k0 + kDepthBlock);
            for (int i = 0; i < m; ++i) {
                Real* out_row = out + static_cast<std::size_t>(i) * n;
                const Real* a_row = a + static_cast<std::size_t>(i) * depth;
                for (int k = k0; k < k1; ++k) {
                    const Real coeff = a_row[k];
                    if (coeff == Real(0)) continue;
                    const Real* b_row = b + static_cast<std::size_t>(k) * n;
                    for (int p = p0; p < p1; ++p) out_row[p] += coeff * b_row[p];
                }
            }
        }
    }
}

// out (depth x n) += a^T * b with a (m x depth), b (m x n).
void gemm_at_acc(int m, int n, int depth, const Real* a, const Real* b, Real* out) {
    for (int p0 = 0; p0 < n; p0 += kColBlock) {
        const int p1 = std::min(n, p0 + kColBlock);
        for (int i = 0; i < m; ++i) {
            const Real* a_row = a + static_cast<std::size_t>(i) * depth;
            const Real* b_row = b + static_cast<std::size_t>(i) * n;
            for (int k = 0; k < depth; ++k) {
                const Real coeff = a_row[k];
                if (coeff == Real(0)) continue;
                Real* out_row = out + static_cast<std::size_t>(k) * n;
                for (int p = p0; p < p1; ++p) out_row[p] += coeff * b_row[p];
            }
        }
    }
}

// out (m x depth) += a * b^T with a (m x n), b (depth x n).
void gemm_bt_acc(int m, int n, int depth, const Real* a, const Real* b, Real* out) {
    for (int i = 0; i < m; ++i) {
        const Real* a_row = a + static_cast<std::size_t>(i) * n;
        for (int k = 0; k < depth; ++k) {
            const Real* b_row = b + static_cast<std::size_t>(k) * n;
            Real acc = 0;
            for (int p = 0; p < n; ++p) acc += a_row[p] * b_row[p];
            out[static_cast<std::size_t>(i) * depth + k] += acc;
        }
    }
}

struct Geometry {
    int channels, kernel, stride, dilation;
    int in_h, in_w;    // padded extents
    int out_h, out_w;
    int rows() const { return channels * kernel * kernel; }
    int cols() const { return out_h * out_w; }
    bool direct() const { return kernel == 1 && stride == 1 && in_h == out_h && in_w == out_w; }
};

// Column matrix (C*K*K) x (OH*OW) of one padded batch item.
void im2col(const Real* item, const Geometry& g, Real* col) {
    for (int c = 0; c < g.channels; ++c) {
        const Real* plane = item + static_cast<std::size_t>(c) * g.in_h * g.in_w;
        for (int kh = 0; kh < g.kernel; ++kh) {
            for (int kw = 0; kw < g.kernel; ++kw) {
                Real* row = col + static_cast<std::size_t>((c * g.kernel + kh) * g.kernel + kw) * g.cols();
                for (int oy = 0; oy < g.out_h; ++oy) {
                    const Real* src = plane + static_cast<std::size_t>(oy * g.stride + kh * g.dilation) * g.in_w +
                                      kw * g.dilation;
                    Real* dst = row + static_cast<std::size_t>(oy) * g.out_w;
                    if (g.stride == 1) {
                        std::copy(src, src + g.out_w, dst);
                    } else {
                        for (int ox = 0; ox < g.out_w; ++ox) dst[ox] = src[ox * g.stride];
                    }
                }
            }
        }
    }
}

// Adjoint of im2col: scatters column gradients into a padded batch item.
void col2im(const Real* col, const Geometry& g, Real* item) {
    for (int c = 0; c < g.channels; ++c) {
        Real* plane = item + static_cast<std::size_t>(c) * g.in_h * g.in_w;
        for (int kh = 0; kh < g.kernel; ++kh) {
            for (int kw = 0; kw < g.kernel; ++kw) {
                const Real* row =
                    col + static_cast<std::size_t>((c * g.kernel + kh) * g.kernel + kw) * g.cols();
                for (int oy = 0; oy < g.out_h; ++oy) {
                    Real* dst = plane + static_cast<std::size_t>(oy * g.stride + kh * g.dilation) * g.in_w +
                                kw * g.dilation;
                    const Real* src = row + static_cast<std::size_t>(oy) * g.out_w;
                    for (int ox = 0; ox < g.out_w; ++ox) dst[ox * g.stride] += src[ox];
                }
            }
        }
    }
}

Geometry geometry_of(const Tensor4& padded, const ConvSpec& spec, const Shape4& out) {
    return Geometry{padded.c(), spec.kernel, spec.stride, spec.dilation,
                    padded.h(), padded.w(), out.h, out.w};
}

}  // namespace

Tensor4 conv2d(const Tensor4& input, const FilterBank& filters, const ConvSpec& spec) {
    const Shape4 out_shape = conv_output_shape(input.shape(), filters, spec);
    const Tensor4 padded = pad_zero(input, spec.padding);
    const Geometry g = geometry_of(padded, spec, out_shape);
    Tensor4 out(out_shape);

    const std::size_t in_item = static_cast<std::size_t>(g.channels) * g.in_h * g.in_w;
    const std::size_t out_item = static_cast<std::size_t>(out_shape.c) * g.cols();
    parallel_for(input.n(), [&](int b) {
        const Real* item = padded.data().data() + b * in_item;
        std::vector<Real> col;
        const Real* cols = item;
        if (!g.direct()) {
            col.assign(static_cast<std::size_t>(g.rows()) * g.cols(), Real(0));
            im2col(item, g, col.data());
            cols = col.data();
        }
        Real* dst = out.data().data() + b * out_item;
        if (filters.has_bias()) {
            for (int co = 0; co < out_shape.c; ++co) {
                std::fill_n(dst + static_cast<std::size_t>(co) * g.cols(), g.cols(), filters.bias[co]);
            }
        }
        gemm_acc(out_shape.c, g.cols(), g.rows(), filters.weights.data().data(), cols, dst);
    });
    return out;
}

Tensor4 conv2d_oracle(const Tensor4& input, const FilterBank& filters, const ConvSpec& spec) {
    const Shape4 out_shape = conv_output_shape(input.shape(), filters, spec);
    Tensor4 out(out_shape);
    const int K = spec.kernel;
    for (int b = 0; b < out_shape.n; ++b) {
        for (int co = 0; co < out_shape.c; ++co) {
            for (int oy = 0; oy < out_shape.h; ++oy) {
                for (int ox = 0; ox < out_shape.w; ++ox) {
                    Real acc = filters.has_bias() ? filters.bias[co] : Real(0);
                    for (int ci = 0; ci < input.c(); ++ci) {
                        for (int kh = 0; kh < K; ++kh) {
                            for (int kw = 0; kw < K; ++kw) {
                                const int y = oy * spec.stride - spec.padding + kh * spec.dilation;
                                const int x = ox * spec.stride - spec.padding + kw * spec.dilation;
                                if (y < 0 || y >= input.h() || x < 0 || x >= input.w()) continue;
                                acc += filters.weights.at(co, ci, kh, kw) * input.at(b, ci, y, x);
                            }
                        }
                    }
                    out.at(b, co, oy, ox) = acc;
                }
            }
        }
    }
    return out;
}

ConvGrads conv2d_backward(const Tensor4& input, const FilterBank& filters, const ConvSpec& spec,
                          const Tensor4& grad_out) {
    const Shape4 out_shape = conv_output_shape(input.shape(), filters, spec);
    if (grad_out.shape() != out_shape) {
        throw std::invalid_argument("grad_out shape " + to_string(grad_out.shape()) +
                                    " does not match conv output " + to_string(out_shape));
    }
    const Tensor4 padded = pad_zero(input, spec.padding);
    const Geometry g = geometry_of(padded, spec, out_shape);
    const std::size_t in_item = static_cast<std::size_t>(g.channels) * g.in_h * g.in_w;
    const std::size_t out_item = static_cast<std::size_t>(out_shape.c) * g.cols();
    const std::size_t weight_len = filters.weights.size();

    Tensor4 grad_padded(padded.shape());
    // Per-item weight gradients are reduced in batch order afterwards so the
    // result does not depend on the thread count.
    std::vector<std::vector<Real>> partial(input.n(), std::vector<Real>(weight_len, Real(0)));
    parallel_for(input.n(), [&](int b) {
        const Real* item = padded.data().data() + b * in_item;
        const Real* gout = grad_out.data().data() + b * out_item;
        std::vector<Real> col;
        const Real* cols = item;
        if (!g.direct()) {
            col.assign(static_cast<std::size_t>(g.rows()) * g.cols(), Real(0));
            im2col(item, g, col.data());
            cols = col.data();
        }
        gemm_bt_acc(out_shape.c, g.cols(), g.rows(), gout, cols, partial[b].data());

        Real* gin = grad_padded.data().data() + b * in_item;
        if (g.direct()) {
            gemm_at_acc(out_shape.c, g.cols(), g.rows(), filters.weights.data().data(), gout, gin);
        } else {
            std::vector<Real> gcol(static_cast<std::size_t>(g.rows()) * g.cols(), Real(0));
            gemm_at_acc(out_shape.c, g.cols(), g.rows(), filters.weights.data().data(), gout, gcol.data());
            col2im(gcol.data(), g, gin);
        }
    });

    ConvGrads grads{crop_border(grad_padded, spec.padding),
                    FilterBank(filters.weights.shape(), filters.has_bias())};
    auto gw = grads.filters.weights.data();
    for (int b = 0; b < input.n(); ++b) {
        for (std::size_t i = 0; i < weight_len; ++i) gw[i] += partial[b][i];
    }
    if (filters.has_bias()) {
        for (int b = 0; b < out_shape.n; ++b) {
            for (int co = 0; co < out_shape.c; ++co) {
                Real s = 0;
                for (Real v : grad_out.plane(b, co)) s += v;
                grads.filters.bias[co] += s;
            }
        }
    }
    return grads;
}

double max_relative_difference(const Tensor4& a, const Tensor4& b) {
    if (a.shape() != b.shape()) {
        throw std::invalid_argument("shape mismatch " + to_string(a.shape()) + " vs " + to_string(b.shape()));
    }
    double diff = 0, scale = 1e-300;
    for (std::size_t i = 0; i < a.size(); ++i) {
        diff = std::max(diff, std::abs(static_cast<double>(a[i]) - static_cast<double>(b[i])));
        scale = std::max({scale, std::abs(static_cast<double>(a[i])), std::abs(static_cast<double>(b[i]))});
    }
    return diff / scale;
}

}  // namespace grc
