#pragma once

// Independent ground truth for the tests. Nothing here calls into the
// library's convolution, shifting or evaluation code.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <vector>

#include "grc/dataeval.hpp"
#include "grc/tensor.hpp"

namespace oracle {

using grc::Real;
using grc::Tensor4;

inline int wrap(int v, int n) { return ((v % n) + n) % n; }

struct ChannelShift {
    int dh = 0;
    int dw = 0;
};

// Shift read by channel c of a C-channel, H x W map under g_h x g_w groups.
inline ChannelShift channel_shift(int c, int C, int H, int W, int g_h, int g_w) {
    const int c_local = (C + 1) / 2;
    if (c < c_local) return {};
    const int groups = g_h * g_w;
    const int width = (C / 2) / groups;
    const int n = std::min((c - c_local) / width, groups - 1);
    return {(n / g_w) * (H / g_h), (n % g_w) * (W / g_w)};
}

// Stride-1 global receptive convolution, one tap at a time: the tap at grid
// position (y - pad + ky, x - pad + kx) is zero outside the map and otherwise
// reads channel c at that position moved by the channel's shift, modulo the map.
inline Tensor4 grc(const Tensor4& x, const Tensor4& w, const std::vector<Real>& bias, int g_h, int g_w, int pad) {
    const int N = x.n(), C = x.c(), H = x.h(), W = x.w();
    const int O = w.n(), K = w.h();
    const int out_h = H + 2 * pad - K + 1, out_w = W + 2 * pad - K + 1;
    Tensor4 out({N, O, out_h, out_w});
    for (int b = 0; b < N; ++b) {
        for (int o = 0; o < O; ++o) {
            for (int y = 0; y < out_h; ++y) {
                for (int xx = 0; xx < out_w; ++xx) {
                    double acc = bias.empty() ? 0.0 : bias[o];
                    for (int c = 0; c < C; ++c) {
                        const ChannelShift s = channel_shift(c, C, H, W, g_h, g_w);
                        for (int ky = 0; ky < K; ++ky) {
                            for (int kx = 0; kx < K; ++kx) {
                                const int py = y - pad + ky, px = xx - pad + kx;
                                if (py < 0 || py >= H || px < 0 || px >= W) continue;
                                acc += w.at(o, c, ky, kx) * x.at(b, c, wrap(py + s.dh, H), wrap(px + s.dw, W));
                            }
                        }
                    }
                    out.at(b, o, y, xx) = static_cast<Real>(acc);
                }
            }
        }
    }
    return out;
}

// Nearest of the four colours used by the context images.
inline int palette_index(const Tensor4& img, int y, int x) {
    static constexpr std::array<std::array<double, 3>, 4> kPalette{
        {{0.35, 0.35, 0.35}, {0.90, 0.80, 0.10}, {0.90, 0.10, 0.10}, {0.10, 0.20, 0.90}}};
    int best = 0;
    double best_d = 1e300;
    for (int k = 0; k < 4; ++k) {
        double d = 0;
        for (int c = 0; c < 3; ++c) d += std::pow(img.at(0, c, y, x) - kPalette[k][c], 2);
        if (d < best_d) {
            best_d = d;
            best = k;
        }
    }
    return best;
}

// Best achievable accuracy on square pixels for any classifier that sees only
// the (2r+1)^2 window around each pixel (colours quantised): majority class
// per window content, fitted on `fit` and scored on `score`. Unseen windows
// fall back to the overall majority.
inline double local_window_bayes_accuracy(const std::vector<grc::Sample>& fit,
                                          const std::vector<grc::Sample>& score, int r) {
    auto key = [r](const grc::Sample& s, int y, int x) {
        std::vector<int> k;
        for (int dy = -r; dy <= r; ++dy) {
            for (int dx = -r; dx <= r; ++dx) {
                const int yy = y + dy, xx = x + dx;
                const bool inside = yy >= 0 && yy < s.image.h() && xx >= 0 && xx < s.image.w();
                k.push_back(inside ? palette_index(s.image, yy, xx) : -1);
            }
        }
        return k;
    };
    std::map<std::vector<int>, std::array<int, 3>> votes;
    std::array<int, 3> overall{};
    for (const grc::Sample& s : fit) {
        for (int y = 0; y < s.mask.h; ++y) {
            for (int x = 0; x < s.mask.w; ++x) {
                const int l = s.mask.at(0, y, x);
                if (l != 1 && l != 2) continue;
                ++votes[key(s, y, x)][l];
                ++overall[l];
            }
        }
    }
    const int fallback = overall[2] > overall[1] ? 2 : 1;
    long hit = 0, total = 0;
    for (const grc::Sample& s : score) {
        for (int y = 0; y < s.mask.h; ++y) {
            for (int x = 0; x < s.mask.w; ++x) {
                const int l = s.mask.at(0, y, x);
                if (l != 1 && l != 2) continue;
                const auto it = votes.find(key(s, y, x));
                const int guess = it == votes.end() ? fallback : (it->second[2] > it->second[1] ? 2 : 1);
                hit += guess == l;
                ++total;
            }
        }
    }
    return total == 0 ? 0.0 : static_cast<double>(hit) / static_cast<double>(total);
}

}  // namespace oracle
