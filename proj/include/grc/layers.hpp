#pragma once

#include <cstdint>
#include <vector>

#include "grc/tensor.hpp"

namespace grc {

inline constexpr std::uint8_t kIgnoreLabel = 255;

/// Integer label map (n, h, w); 255 marks ignored pixels.
struct LabelMap {
    int n = 1;
    int h = 1;
    int w = 1;
    std::vector<std::uint8_t> data;

    LabelMap() = default;
    LabelMap(int n_, int h_, int w_, std::uint8_t fill = 0)
        : n(n_), h(h_), w(w_), data(static_cast<std::size_t>(n_) * h_ * w_, fill) {}

    std::size_t index(int b, int y, int x) const {
        return (static_cast<std::size_t>(b) * h + y) * w + x;
    }
    std::uint8_t& at(int b, int y, int x) { return data[index(b, y, x)]; }
    std::uint8_t at(int b, int y, int x) const { return data[index(b, y, x)]; }
    bool operator==(const LabelMap&) const = default;
};

// ReLU

Tensor4 relu(const Tensor4& x);
/// Gradient through ReLU given its output (zero where the output is zero).
Tensor4 relu_backward(const Tensor4& output, const Tensor4& grad_out);

// Batch normalisation

inline constexpr double kBatchNormEps = 1e-5;
inline constexpr double kBatchNormMomentum = 0.1;

struct BatchNorm {
    std::vector<Real> scale;
    std::vector<Real> shift;
    std::vector<Real> running_mean;
    std::vector<Real> running_var;

    BatchNorm() = default;
    explicit BatchNorm(int channels)
        : scale(channels, Real(1)), shift(channels, Real(0)),
          running_mean(channels, Real(0)), running_var(channels, Real(1)) {}
    int channels() const { return static_cast<int>(scale.size()); }
    std::size_t parameter_count() const { return scale.size() + shift.size(); }
};

struct BatchNormCache {
    Tensor4 normalized;         // x_hat
    std::vector<Real> inv_std;  // per channel
    bool train_mode = false;
};

/// Train mode normalises each channel over (batch, spatial) and updates the
/// running statistics; eval mode applies the running statistics.
Tensor4 batch_norm(const Tensor4& x, BatchNorm& bn, bool train_mode, BatchNormCache* cache = nullptr);

struct BatchNormGrads {
    Tensor4 input;
    std::vector<Real> scale;
    std::vector<Real> shift;
};

BatchNormGrads batch_norm_backward(const BatchNormCache& cache, const BatchNorm& bn,
                                   const Tensor4& grad_out);

// Bilinear resize (align_corners = false)

Tensor4 bilinear_upsample(const Tensor4& t, int out_h, int out_w);
/// Adjoint of bilinear_upsample from an (in_h, in_w) map.
Tensor4 bilinear_upsample_backward(const Tensor4& grad_out, int in_h, int in_w);

// Pixel-wise softmax cross-entropy

struct LossResult {
    double loss = 0;
    Tensor4 grad_logits;
    std::size_t counted = 0;  // non-ignored pixels
};

/// Mean over non-ignored pixels of -log softmax at the true class.
LossResult softmax_cross_entropy(const Tensor4& logits, const LabelMap& labels);

/// Per-pixel argmax over channels.
LabelMap argmax_labels(const Tensor4& logits);

}  // namespace grc
