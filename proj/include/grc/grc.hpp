#pragma once

#include <cstddef>
#include <vector>

#include "grc/convops.hpp"
#include "grc/tensor.hpp"

namespace grc {

/// Channel grouping of a global receptive convolution.
///
/// Channels [0, c_local) are convolved in place. Channels [c_local, C) form
/// the global group, which is split into g_h*g_w equal sub-groups (any
/// remainder joins the last one); sub-group n samples around the central
/// location displaced by the n-th entry of the offset set.
struct GrcConfig {
    int g_h = 1;
    int g_w = 1;
    int c_local = 1;
    int c_global = 0;
    ConvSpec conv{};

    int channels() const { return c_local + c_global; }
    int groups() const { return g_h * g_w; }
    /// Channels per sub-group before the remainder is added to the last one.
    int subgroup_width() const { return c_global / groups(); }
    /// First channel of sub-group n; n == groups() gives C.
    int subgroup_begin(int n) const {
        return n >= groups() ? channels() : c_local + n * subgroup_width();
    }
    bool operator==(const GrcConfig&) const = default;
};

/// (ceil(C/2), floor(C/2)).
std::pair<int, int> split_channels(int channels);

/// Builds and validates a config for `channels` input channels.
/// Throws std::invalid_argument when g_h*g_w exceeds the global group size.
GrcConfig make_grc_config(int channels, int g_h, int g_w, ConvSpec conv);

void validate(const GrcConfig& cfg);

struct OffsetSet {
    int g_h = 1;
    int g_w = 1;
    std::vector<Offset> entries;  // row-major in (i, j)

    std::size_t size() const { return entries.size(); }
    const Offset& operator[](std::size_t n) const { return entries[n]; }
};

/// Patch-corner offsets (i*floor(H/g_h), j*floor(W/g_w)) for all (i, j), row-major.
OffsetSet offset_set(int height, int width, int g_h, int g_w);

/// Sub-group index of a global-group channel. Throws for local channels.
int subgroup_of_channel(int channel, int channels, int g_h, int g_w);

/// Offset applied to a global-group channel on an H x W map.
Offset shift_of_channel(int channel, int channels, int height, int width, int g_h, int g_w);

/// Location sampled by `channel` when the filter is centred on (h0, w0):
/// unchanged for local channels, displaced and wrapped for global ones.
Offset sampling_center(int h0, int w0, int channel, int channels, int height, int width, int g_h,
                       int g_w);

/// Circularly shifts channels [c_begin, c_end) in place so that
/// out(y, x) = in((y + dh) mod H, (x + dw) mod W). Negative shifts are allowed.
void circular_shift_channels(Tensor4& t, int c_begin, int c_end, int dh, int dw);

/// Feature transform of the fast path: local channels copied, each global
/// sub-group circularly shifted by its offset. Performs exactly g_h*g_w
/// sub-group shifts; the count is added to *shift_ops when given.
Tensor4 shift_features(const Tensor4& input, const GrcConfig& cfg, std::size_t* shift_ops = nullptr);

/// Exact inverse of shift_features.
Tensor4 unshift_features(const Tensor4& shifted, const GrcConfig& cfg);

/// Two-term definition evaluated literally: every output element sums the
/// local-group convolution at its own centre plus, per sub-group, the
/// convolution centred on the displaced location. Padding applies to the
/// unshifted map; in-range samples wrap modulo (H, W).
Tensor4 grc_forward_reference(const Tensor4& input, const FilterBank& filters, const GrcConfig& cfg);

/// shift_features followed by one standard conv2d over all channels.
Tensor4 grc_forward_fast(const Tensor4& input, const FilterBank& filters, const GrcConfig& cfg,
                         std::size_t* shift_ops = nullptr);

/// Adjoint of grc_forward_fast. Weight gradients are taken against the shifted
/// features; the input gradient is unshifted.
ConvGrads grc_backward(const Tensor4& input, const FilterBank& filters, const GrcConfig& cfg,
                       const Tensor4& grad_out);

}  // namespace grc
