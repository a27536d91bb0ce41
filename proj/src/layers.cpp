#include "grc/layers.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace grc {

Tensor4 relu(const Tensor4& x) {
    Tensor4 y = x;
    for (Real& v : y.data()) v = std::max(v, Real(0));
    return y;
}

Tensor4 relu_backward(const Tensor4& output, const Tensor4& grad_out) {
    if (output.shape() != grad_out.shape()) throw std::invalid_argument("relu_backward shape mismatch");
    Tensor4 g = grad_out;
    for (std::size_t i = 0; i < g.size(); ++i) {
        if (output[i] <= Real(0)) g[i] = 0;
    }
    return g;
}

Tensor4 batch_norm(const Tensor4& x, BatchNorm& bn, bool train_mode, BatchNormCache* cache) {
    const int C = x.c();
    if (bn.channels() != C) {
        throw std::invalid_argument("batch norm has " + std::to_string(bn.channels()) +
                                    " channels, input has " + std::to_string(C));
    }
    const std::size_t count = static_cast<std::size_t>(x.n()) * x.shape().plane();
    Tensor4 y(x.shape());
    Tensor4 normalized(x.shape());
    std::vector<Real> inv_std(C);
    for (int c = 0; c < C; ++c) {
        double mean, var;
        if (train_mode) {
            double s = 0;
            for (int b = 0; b < x.n(); ++b) {
                for (Real v : x.plane(b, c)) s += v;
            }
            mean = s / static_cast<double>(count);
            double ss = 0;
            for (int b = 0; b < x.n(); ++b) {
                for (Real v : x.plane(b, c)) ss += (v - mean) * (v - mean);
            }
            var = ss / static_cast<double>(count);
            const double unbiased = count > 1 ? var * count / static_cast<double>(count - 1) : var;
            bn.running_mean[c] = static_cast<Real>((1 - kBatchNormMomentum) * bn.running_mean[c] +
                                                   kBatchNormMomentum * mean);
            bn.running_var[c] = static_cast<Real>((1 - kBatchNormMomentum) * bn.running_var[c] +
                                                  kBatchNormMomentum * unbiased);
        } else {
            mean = bn.running_mean[c];
            var = bn.running_var[c];
        }
        const Real istd = static_cast<Real>(1.0 / std::sqrt(var + kBatchNormEps));
        inv_std[c] = istd;
        for (int b = 0; b < x.n(); ++b) {
            auto src = x.plane(b, c);
            auto xh = normalized.plane(b, c);
            auto dst = y.plane(b, c);
            for (std::size_t i = 0; i < src.size(); ++i) {
                xh[i] = (src[i] - static_cast<Real>(mean)) * istd;
                dst[i] = bn.scale[c] * xh[i] + bn.shift[c];
            }
        }
    }
    if (cache) {
        cache->normalized = std::move(normalized);
        cache->inv_std = std::move(inv_std);
        cache->train_mode = train_mode;
    }
    return y;
}

BatchNormGrads batch_norm_backward(const BatchNormCache& cache, const BatchNorm& bn,
                                   const Tensor4& grad_out) {
    const Tensor4& xh = cache.normalized;
    if (xh.shape() != grad_out.shape()) throw std::invalid_argument("batch_norm_backward shape mismatch");
    const int C = xh.c();
    const double count = static_cast<double>(xh.n()) * xh.shape().plane();
    BatchNormGrads g{Tensor4(xh.shape()), std::vector<Real>(C, 0), std::vector<Real>(C, 0)};
    for (int c = 0; c < C; ++c) {
        double sum_g = 0, sum_gx = 0;
        for (int b = 0; b < xh.n(); ++b) {
            auto go = grad_out.plane(b, c);
            auto xp = xh.plane(b, c);
            for (std::size_t i = 0; i < go.size(); ++i) {
                sum_g += go[i];
                sum_gx += go[i] * xp[i];
            }
        }
        g.shift[c] = static_cast<Real>(sum_g);
        g.scale[c] = static_cast<Real>(sum_gx);
        const double k = static_cast<double>(bn.scale[c]) * cache.inv_std[c];
        for (int b = 0; b < xh.n(); ++b) {
            auto go = grad_out.plane(b, c);
            auto xp = xh.plane(b, c);
            auto gi = g.input.plane(b, c);
            for (std::size_t i = 0; i < go.size(); ++i) {
                if (cache.train_mode) {
                    gi[i] = static_cast<Real>(k * (go[i] - sum_g / count - xp[i] * sum_gx / count));
                } else {
                    gi[i] = static_cast<Real>(k * go[i]);
                }
            }
        }
    }
    return g;
}

namespace {

struct Tap {
    int lo, hi;
    Real frac;  // weight of hi
};

// align_corners=false source coordinates for each output index.
std::vector<Tap> bilinear_taps(int in, int out) {
    std::vector<Tap> taps(out);
    const double ratio = static_cast<double>(in) / out;
    for (int i = 0; i < out; ++i) {
        double src = (i + 0.5) * ratio - 0.5;
        if (src < 0) src = 0;
        int lo = static_cast<int>(src);
        if (lo > in - 1) lo = in - 1;
        const int hi = std::min(lo + 1, in - 1);
        taps[i] = {lo, hi, static_cast<Real>(src - lo)};
    }
    return taps;
}

}  // namespace

Tensor4 bilinear_upsample(const Tensor4& t, int out_h, int out_w) {
    if (out_h < t.h() || out_w < t.w()) {
        throw std::invalid_argument("bilinear_upsample target must not be smaller than the input");
    }
    const auto ty = bilinear_taps(t.h(), out_h);
    const auto tx = bilinear_taps(t.w(), out_w);
    Tensor4 out({t.n(), t.c(), out_h, out_w});
    for (int b = 0; b < t.n(); ++b) {
        for (int c = 0; c < t.c(); ++c) {
            for (int y = 0; y < out_h; ++y) {
                const Tap& a = ty[y];
                for (int x = 0; x < out_w; ++x) {
                    const Tap& e = tx[x];
                    const Real top = t.at(b, c, a.lo, e.lo) * (1 - e.frac) + t.at(b, c, a.lo, e.hi) * e.frac;
                    const Real bot = t.at(b, c, a.hi, e.lo) * (1 - e.frac) + t.at(b, c, a.hi, e.hi) * e.frac;
                    out.at(b, c, y, x) = top * (1 - a.frac) + bot * a.frac;
                }
            }
        }
    }
    return out;
}

Tensor4 bilinear_upsample_backward(const Tensor4& grad_out, int in_h, int in_w) {
    const auto ty = bilinear_taps(in_h, grad_out.h());
    const auto tx = bilinear_taps(in_w, grad_out.w());
    Tensor4 g({grad_out.n(), grad_out.c(), in_h, in_w});
    for (int b = 0; b < grad_out.n(); ++b) {
        for (int c = 0; c < grad_out.c(); ++c) {
            for (int y = 0; y < grad_out.h(); ++y) {
                const Tap& a = ty[y];
                for (int x = 0; x < grad_out.w(); ++x) {
                    const Tap& e = tx[x];
                    const Real v = grad_out.at(b, c, y, x);
                    g.at(b, c, a.lo, e.lo) += v * (1 - a.frac) * (1 - e.frac);
                    g.at(b, c, a.lo, e.hi) += v * (1 - a.frac) * e.frac;
                    g.at(b, c, a.hi, e.lo) += v * a.frac * (1 - e.frac);
                    g.at(b, c, a.hi, e.hi) += v * a.frac * e.frac;
                }
            }
        }
    }
    return g;
}

LossResult softmax_cross_entropy(const Tensor4& logits, const LabelMap& labels) {
    if (labels.n != logits.n() || labels.h != logits.h() || labels.w != logits.w()) {
        throw std::invalid_argument("label map does not match logits " + to_string(logits.shape()));
    }
    const int K = logits.c();
    LossResult result{0.0, Tensor4(logits.shape()), 0};
    for (std::uint8_t l : labels.data) {
        if (l != kIgnoreLabel && l >= K) {
            throw std::invalid_argument("label " + std::to_string(l) + " out of range for " +
                                        std::to_string(K) + " classes");
        }
        if (l != kIgnoreLabel) ++result.counted;
    }
    if (result.counted == 0) return result;
    const double inv_count = 1.0 / static_cast<double>(result.counted);
    std::vector<double> prob(K);
    double total = 0;
    for (int b = 0; b < logits.n(); ++b) {
        for (int y = 0; y < logits.h(); ++y) {
            for (int x = 0; x < logits.w(); ++x) {
                const std::uint8_t label = labels.at(b, y, x);
                if (label == kIgnoreLabel) continue;
                double top = -INFINITY;
                for (int k = 0; k < K; ++k) top = std::max(top, static_cast<double>(logits.at(b, k, y, x)));
                double z = 0;
                for (int k = 0; k < K; ++k) {
                    prob[k] = std::exp(static_cast<double>(logits.at(b, k, y, x)) - top);
                    z += prob[k];
                }
                total += std::log(z) + top - logits.at(b, label, y, x);
                for (int k = 0; k < K; ++k) {
                    const double p = prob[k] / z;
                    result.grad_logits.at(b, k, y, x) =
                        static_cast<Real>((p - (k == label ? 1.0 : 0.0)) * inv_count);
                }
            }
        }
    }
    result.loss = total * inv_count;
    return result;
}

LabelMap argmax_labels(const Tensor4& logits) {
    LabelMap out(logits.n(), logits.h(), logits.w());
    for (int b = 0; b < logits.n(); ++b) {
        for (int y = 0; y < logits.h(); ++y) {
            for (int x = 0; x < logits.w(); ++x) {
                int best = 0;
                for (int k = 1; k < logits.c(); ++k) {
                    if (logits.at(b, k, y, x) > logits.at(b, best, y, x)) best = k;
                }
                out.at(b, y, x) = static_cast<std::uint8_t>(best);
            }
        }
    }
    return out;
}

}  // namespace grc
