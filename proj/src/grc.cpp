#include "grc/grc.hpp"

#include <algorithm>
#include <stdexcept>
#include <string>

namespace grc {

namespace {

int wrap(int v, int n) {
    const int r = v % n;
    return r < 0 ? r + n : r;
}

void check_input(const Tensor4& input, const FilterBank& filters, const GrcConfig& cfg) {
    validate(cfg);
    if (input.c() != cfg.channels()) {
        throw std::invalid_argument("GRC config expects " + std::to_string(cfg.channels()) +
                                    " channels, input has " + std::to_string(input.c()));
    }
    if (filters.c_in() != input.c()) {
        throw std::invalid_argument("filters expect " + std::to_string(filters.c_in()) +
                                    " channels, input has " + std::to_string(input.c()));
    }
    if (filters.kernel() != cfg.conv.kernel) {
        throw std::invalid_argument("filter kernel does not match GRC conv spec");
    }
}

}  // namespace

std::pair<int, int> split_channels(int channels) {
    if (channels < 1) throw std::invalid_argument("channel count must be >= 1");
    return {(channels + 1) / 2, channels / 2};
}

void validate(const GrcConfig& cfg) {
    validate(cfg.conv);
    if (cfg.g_h < 1 || cfg.g_w < 1) throw std::invalid_argument("g_h and g_w must be >= 1");
    const auto [local, global] = split_channels(cfg.channels());
    if (cfg.c_local != local || cfg.c_global != global) {
        throw std::invalid_argument("GRC channel split must be (ceil(C/2), floor(C/2))");
    }
    if (cfg.c_global > 0 && cfg.groups() > cfg.c_global) {
        throw std::invalid_argument("g_h*g_w = " + std::to_string(cfg.groups()) +
                                    " sub-groups exceed the " + std::to_string(cfg.c_global) +
                                    " global-group channels");
    }
}

GrcConfig make_grc_config(int channels, int g_h, int g_w, ConvSpec conv) {
    const auto [local, global] = split_channels(channels);
    GrcConfig cfg{g_h, g_w, local, global, conv};
    validate(cfg);
    return cfg;
}

OffsetSet offset_set(int height, int width, int g_h, int g_w) {
    if (g_h < 1 || g_w < 1) throw std::invalid_argument("group counts must be >= 1");
    if (g_h > height || g_w > width) {
        throw std::invalid_argument("group counts (" + std::to_string(g_h) + "," + std::to_string(g_w) +
                                    ") exceed spatial extent (" + std::to_string(height) + "," +
                                    std::to_string(width) + ")");
    }
    OffsetSet set{g_h, g_w, {}};
    set.entries.reserve(static_cast<std::size_t>(g_h) * g_w);
    const int patch_h = height / g_h;
    const int patch_w = width / g_w;
    for (int i = 0; i < g_h; ++i) {
        for (int j = 0; j < g_w; ++j) set.entries.push_back({i * patch_h, j * patch_w});
    }
    return set;
}

int subgroup_of_channel(int channel, int channels, int g_h, int g_w) {
    const auto [local, global] = split_channels(channels);
    if (channel < local || channel >= channels) {
        throw std::invalid_argument("channel " + std::to_string(channel) +
                                    " is not in the global group [" + std::to_string(local) + ", " +
                                    std::to_string(channels) + ")");
    }
    if (g_h < 1 || g_w < 1) throw std::invalid_argument("group counts must be >= 1");
    const int groups = g_h * g_w;
    const int width = global / groups;
    if (width < 1) {
        throw std::invalid_argument("g_h*g_w exceeds the global-group channel count");
    }
    return std::min((channel - local) / width, groups - 1);
}

Offset shift_of_channel(int channel, int channels, int height, int width, int g_h, int g_w) {
    const int n = subgroup_of_channel(channel, channels, g_h, g_w);
    return offset_set(height, width, g_h, g_w)[n];
}

Offset sampling_center(int h0, int w0, int channel, int channels, int height, int width, int g_h,
                       int g_w) {
    if (channel < split_channels(channels).first) return {h0, w0};
    const Offset s = shift_of_channel(channel, channels, height, width, g_h, g_w);
    return {wrap(h0 + s.dh, height), wrap(w0 + s.dw, width)};
}

void circular_shift_channels(Tensor4& t, int c_begin, int c_end, int dh, int dw) {
    const int H = t.h(), W = t.w();
    dh = wrap(dh, H);
    dw = wrap(dw, W);
    if (dh == 0 && dw == 0) return;
    std::vector<Real> scratch(t.shape().plane());
    for (int b = 0; b < t.n(); ++b) {
        for (int c = c_begin; c < c_end; ++c) {
            auto plane = t.plane(b, c);
            std::copy(plane.begin(), plane.end(), scratch.begin());
            for (int y = 0; y < H; ++y) {
                const Real* src = scratch.data() + static_cast<std::size_t>((y + dh) % H) * W;
                Real* dst = plane.data() + static_cast<std::size_t>(y) * W;
                std::copy(src + dw, src + W, dst);
                std::copy(src, src + dw, dst + (W - dw));
            }
        }
    }
}

Tensor4 shift_features(const Tensor4& input, const GrcConfig& cfg, std::size_t* shift_ops) {
    validate(cfg);
    if (input.c() != cfg.channels()) {
        throw std::invalid_argument("GRC config expects " + std::to_string(cfg.channels()) +
                                    " channels, input has " + std::to_string(input.c()));
    }
    Tensor4 out = input;
    if (cfg.c_global == 0) return out;
    const OffsetSet offsets = offset_set(input.h(), input.w(), cfg.g_h, cfg.g_w);
    for (int n = 0; n < cfg.groups(); ++n) {
        circular_shift_channels(out, cfg.subgroup_begin(n), cfg.subgroup_begin(n + 1), offsets[n].dh,
                                offsets[n].dw);
        if (shift_ops) ++*shift_ops;
    }
    return out;
}

Tensor4 unshift_features(const Tensor4& shifted, const GrcConfig& cfg) {
    validate(cfg);
    Tensor4 out = shifted;
    if (cfg.c_global == 0) return out;
    const OffsetSet offsets = offset_set(shifted.h(), shifted.w(), cfg.g_h, cfg.g_w);
    for (int n = 0; n < cfg.groups(); ++n) {
        circular_shift_channels(out, cfg.subgroup_begin(n), cfg.subgroup_begin(n + 1), -offsets[n].dh,
                                -offsets[n].dw);
    }
    return out;
}

Tensor4 grc_forward_reference(const Tensor4& input, const FilterBank& filters, const GrcConfig& cfg) {
    check_input(input, filters, cfg);
    const ConvSpec& spec = cfg.conv;
    const Shape4 out_shape = conv_output_shape(input.shape(), filters, spec);
    const int H = input.h(), W = input.w();
    const int r = spec.radius();
    const std::vector<Offset> grid = dilated_neighborhood(spec.kernel, spec.dilation);
    const OffsetSet offsets =
        cfg.c_global > 0 ? offset_set(H, W, cfg.g_h, cfg.g_w) : OffsetSet{1, 1, {{0, 0}}};

    // Zero outside the unpadded plane; displaced samples inside it wrap.
    auto sample = [&](int b, int c, int y, int x, Offset displacement) -> Real {
        if (y < 0 || y >= H || x < 0 || x >= W) return Real(0);
        return input.at(b, c, wrap(y + displacement.dh, H), wrap(x + displacement.dw, W));
    };
    auto weight = [&](int co, int c, Offset g) {
        return filters.weights.at(co, c, (g.dh + r) / spec.dilation, (g.dw + r) / spec.dilation);
    };

    Tensor4 out(out_shape);
    for (int b = 0; b < out_shape.n; ++b) {
        for (int co = 0; co < out_shape.c; ++co) {
            for (int oy = 0; oy < out_shape.h; ++oy) {
                for (int ox = 0; ox < out_shape.w; ++ox) {
                    const int h0 = oy * spec.stride - spec.padding + r;
                    const int w0 = ox * spec.stride - spec.padding + r;
                    Real acc = filters.has_bias() ? filters.bias[co] : Real(0);
                    // First term: local group at the original centre.
                    for (int c = 0; c < cfg.c_local; ++c) {
                        for (const Offset& g : grid) {
                            acc += weight(co, c, g) * sample(b, c, h0 + g.dh, w0 + g.dw, {0, 0});
                        }
                    }
                    // Second term: sub-group n samples around the centre displaced by offsets[n].
                    if (cfg.c_global > 0) {
                        for (int n = 0; n < cfg.groups(); ++n) {
                            for (int c = cfg.subgroup_begin(n); c < cfg.subgroup_begin(n + 1); ++c) {
                                for (const Offset& g : grid) {
                                    acc += weight(co, c, g) * sample(b, c, h0 + g.dh, w0 + g.dw, offsets[n]);
                                }
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

Tensor4 grc_forward_fast(const Tensor4& input, const FilterBank& filters, const GrcConfig& cfg,
                         std::size_t* shift_ops) {
    check_input(input, filters, cfg);
    return conv2d(shift_features(input, cfg, shift_ops), filters, cfg.conv);
}

ConvGrads grc_backward(const Tensor4& input, const FilterBank& filters, const GrcConfig& cfg,
                       const Tensor4& grad_out) {
    check_input(input, filters, cfg);
    ConvGrads grads = conv2d_backward(shift_features(input, cfg), filters, cfg.conv, grad_out);
    grads.input = unshift_features(grads.input, cfg);
    return grads;
}

}  // namespace grc
