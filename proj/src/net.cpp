#include "grc/net.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#include "grc/rng.hpp"

namespace grc {

int NetworkSpec::downsampling() const {
    int factor = 1;
    for (const StageSpec& s : stages) factor *= s.stride;
    return factor;
}

namespace {

std::string stage_label(int stage) { return "stage " + std::to_string(stage); }

int stage_input_width(const NetworkSpec& spec, int stage_index, int block) {
    if (block > 0) return spec.stages[stage_index].width;
    return stage_index == 0 ? spec.stem_width : spec.stages[stage_index - 1].width;
}

// Input channels of the conv that a GRC block replaces.
int replaced_conv_channels(const NetworkSpec& spec, int stage_index, int block) {
    const int mid = spec.stages[stage_index].width / spec.bottleneck_ratio;
    return spec.grc_layer_position == 1 ? stage_input_width(spec, stage_index, block) : mid;
}

}  // namespace

void validate(const NetworkSpec& spec) {
    if (spec.in_channels < 1) throw std::invalid_argument("in_channels must be >= 1");
    if (spec.stem_width < 1) throw std::invalid_argument("stem_width must be >= 1");
    if (spec.kernel < 1 || spec.kernel % 2 == 0) throw std::invalid_argument("kernel must be odd");
    if (spec.bottleneck_ratio < 1) throw std::invalid_argument("bottleneck_ratio must be >= 1");
    if (spec.stages.empty()) throw std::invalid_argument("network needs at least one stage");
    if (spec.num_classes < 2) throw std::invalid_argument("num_classes must be >= 2");
    if (spec.grc_layer_position < 1 || spec.grc_layer_position > 3) {
        throw std::invalid_argument("grc_layer_position must be 1, 2 or 3");
    }
    if (spec.g_h < 1 || spec.g_w < 1) throw std::invalid_argument("g_h and g_w must be >= 1");
    for (std::size_t i = 0; i < spec.stages.size(); ++i) {
        const StageSpec& s = spec.stages[i];
        const std::string label = stage_label(kFirstStage + static_cast<int>(i));
        if (s.blocks < 1) throw std::invalid_argument(label + ": blocks must be >= 1");
        if (s.stride < 1 || s.dilation < 1) throw std::invalid_argument(label + ": stride/dilation must be >= 1");
        if (s.width < spec.bottleneck_ratio || s.width % spec.bottleneck_ratio != 0) {
            throw std::invalid_argument(label + ": width " + std::to_string(s.width) +
                                        " is not a positive multiple of bottleneck_ratio " +
                                        std::to_string(spec.bottleneck_ratio));
        }
    }
    for (int s : spec.grc_stages) {
        if (s < kFirstStage || s > spec.last_stage()) {
            throw std::invalid_argument("GRC stage " + std::to_string(s) + " does not exist");
        }
        const int idx = s - kFirstStage;
        for (int block = 0; block < spec.stages[idx].blocks; ++block) {
            const int channels = replaced_conv_channels(spec, idx, block);
            const auto [local, global] = split_channels(channels);
            if (global > 0 && spec.g_h * spec.g_w > global) {
                throw std::invalid_argument(stage_label(s) + ": GRC conv has " + std::to_string(channels) +
                                            " input channels, too few for g_h*g_w = " +
                                            std::to_string(spec.g_h * spec.g_w) + " sub-groups");
            }
        }
    }
    if (spec.head_stages.empty()) throw std::invalid_argument("head_stages must not be empty");
    for (int s : spec.head_stages) {
        if (s < kFirstStage || s > spec.last_stage()) {
            throw std::invalid_argument("head stage " + std::to_string(s) + " does not exist");
        }
    }
}

NetworkSpec toy_fcn_spec(bool with_grc) {
    NetworkSpec spec;
    if (!with_grc) spec.grc_stages.clear();
    return spec;
}

NetworkSpec one_by_one_spec(bool with_grc, std::vector<int> widths) {
    NetworkSpec spec;
    spec.kernel = 1;
    spec.stem_width = widths.front();
    spec.stages.clear();
    for (int w : widths) spec.stages.push_back({1, w, 1, 1});
    spec.head_stages = {spec.last_stage()};
    spec.grc_stages.clear();
    if (with_grc) spec.grc_stages = {spec.last_stage() - 1, spec.last_stage()};
    spec.grc_layer_position = 2;
    return spec;
}

void validate(const TrainConfig& cfg) {
    if (!(cfg.base_lr > 0)) throw std::invalid_argument("train.base_lr must be > 0");
    if (!(cfg.momentum >= 0 && cfg.momentum < 1)) throw std::invalid_argument("train.momentum must be in [0, 1)");
    if (!(cfg.power > 0)) throw std::invalid_argument("train.power must be > 0");
    if (!(cfg.weight_decay >= 0)) throw std::invalid_argument("train.weight_decay must be >= 0");
    if (cfg.total_iters < 1) throw std::invalid_argument("train.total_iters must be >= 1");
    if (cfg.batch_size < 1) throw std::invalid_argument("train.batch_size must be >= 1");
    if (cfg.crop_h < 1 || cfg.crop_w < 1) throw std::invalid_argument("train crop must be >= 1");
}

namespace {

struct Seeder {
    std::uint64_t seed;
    std::uint64_t next = 0;
    std::uint64_t operator()() { return derive_key(seed, next++); }
};

ConvUnit make_unit(int c_in, int c_out, ConvSpec spec, bool with_bias, bool use_grc, const NetworkSpec& net,
                   Seeder& seeder) {
    ConvUnit unit{fan_in_init({c_out, c_in, spec.kernel, spec.kernel}, seeder(), with_bias), spec, std::nullopt};
    if (use_grc) unit.grc = make_grc_config(c_in, net.g_h, net.g_w, spec);
    return unit;
}

NormConv make_norm_conv(int c_in, int c_out, ConvSpec spec, bool use_grc, const NetworkSpec& net,
                        Seeder& seeder) {
    return NormConv{make_unit(c_in, c_out, spec, false, use_grc, net, seeder), BatchNorm(c_out)};
}

Bottleneck make_block(const NetworkSpec& net, int c_in, const StageSpec& stage, int stride, bool use_grc,
                      Seeder& seeder) {
    const int mid = stage.width / net.bottleneck_ratio;
    const int pos = use_grc ? net.grc_layer_position : 0;
    Bottleneck block{
        make_norm_conv(c_in, mid, ConvSpec::same(1), pos == 1, net, seeder),
        make_norm_conv(mid, mid, ConvSpec::same(net.kernel, stage.dilation, stride), pos == 2, net, seeder),
        make_norm_conv(mid, stage.width, ConvSpec::same(1), pos == 3, net, seeder),
        std::nullopt};
    if (c_in != stage.width || stride != 1) {
        block.projection = make_norm_conv(c_in, stage.width, ConvSpec{1, stride, 1, 0}, false, net, seeder);
    }
    return block;
}

}  // namespace

Network build_network(const NetworkSpec& spec, std::uint64_t seed) {
    validate(spec);
    Seeder seeder{seed};
    Network net;
    net.spec = spec;
    net.stem = make_norm_conv(spec.in_channels, spec.stem_width, ConvSpec::same(spec.kernel), false, spec, seeder);
    int c_in = spec.stem_width;
    for (std::size_t i = 0; i < spec.stages.size(); ++i) {
        const StageSpec& stage = spec.stages[i];
        const bool use_grc = spec.grc_stages.contains(kFirstStage + static_cast<int>(i));
        std::vector<Bottleneck> blocks;
        for (int b = 0; b < stage.blocks; ++b) {
            blocks.push_back(make_block(spec, c_in, stage, b == 0 ? stage.stride : 1, use_grc, seeder));
            c_in = stage.width;
        }
        net.stages.push_back(std::move(blocks));
    }
    for (int s : spec.head_stages) {
        const int width = spec.stages[s - kFirstStage].width;
        net.head.push_back(fan_in_init({spec.num_classes, width, 1, 1}, seeder(), true));
    }
    return net;
}

namespace {

template <typename Fn>
void visit_norm_conv(NormConv& nc, const std::string& prefix, bool with_stats, Fn&& fn) {
    fn(prefix + ".conv.weight", nc.conv.filters.weights.shape(), nc.conv.filters.weights.data());
    if (nc.conv.filters.has_bias()) {
        fn(prefix + ".conv.bias", Shape4{nc.conv.filters.c_out(), 1, 1, 1}, std::span<Real>(nc.conv.filters.bias));
    }
    const Shape4 vec{nc.bn.channels(), 1, 1, 1};
    fn(prefix + ".bn.scale", vec, std::span<Real>(nc.bn.scale));
    fn(prefix + ".bn.shift", vec, std::span<Real>(nc.bn.shift));
    if (with_stats) {
        fn(prefix + ".bn.running_mean", vec, std::span<Real>(nc.bn.running_mean));
        fn(prefix + ".bn.running_var", vec, std::span<Real>(nc.bn.running_var));
    }
}

template <typename Fn>
void visit(Network& net, bool with_stats, Fn&& fn) {
    visit_norm_conv(net.stem, "stem", with_stats, fn);
    for (std::size_t s = 0; s < net.stages.size(); ++s) {
        for (std::size_t b = 0; b < net.stages[s].size(); ++b) {
            Bottleneck& block = net.stages[s][b];
            const std::string prefix =
                "stage" + std::to_string(kFirstStage + static_cast<int>(s)) + ".block" + std::to_string(b);
            visit_norm_conv(block.reduce, prefix + ".reduce", with_stats, fn);
            visit_norm_conv(block.spatial, prefix + ".spatial", with_stats, fn);
            visit_norm_conv(block.expand, prefix + ".expand", with_stats, fn);
            if (block.projection) visit_norm_conv(*block.projection, prefix + ".projection", with_stats, fn);
        }
    }
    for (std::size_t k = 0; k < net.head.size(); ++k) {
        FilterBank& f = net.head[k];
        const std::string prefix = "head" + std::to_string(net.spec.head_stages[k]);
        fn(prefix + ".weight", f.weights.shape(), f.weights.data());
        fn(prefix + ".bias", Shape4{f.c_out(), 1, 1, 1}, std::span<Real>(f.bias));
    }
}

std::vector<ParamRef> collect(Network& net, bool with_stats) {
    std::vector<ParamRef> refs;
    visit(net, with_stats, [&](std::string name, Shape4 shape, std::span<Real> values) {
        refs.push_back({std::move(name), shape, values});
    });
    return refs;
}

}  // namespace

Network zeros_like(const Network& net) {
    Network z = net;
    visit(z, true, [](const std::string&, Shape4, std::span<Real> values) {
        std::fill(values.begin(), values.end(), Real(0));
    });
    return z;
}

std::vector<ParamRef> parameters(Network& net) { return collect(net, false); }
std::vector<ParamRef> state(Network& net) { return collect(net, true); }

std::size_t parameter_count(const Network& net) {
    std::size_t total = 0;
    visit(const_cast<Network&>(net), false,
          [&](const std::string&, Shape4, std::span<Real> values) { total += values.size(); });
    return total;
}

std::size_t multiply_accumulates(const Network& net, int height, int width) {
    std::size_t macs = 0;
    auto conv = [&](const ConvUnit& u, int& h, int& w) {
        h = u.spec.out_size(h);
        w = u.spec.out_size(w);
        macs += static_cast<std::size_t>(u.filters.weights.size()) * h * w;
    };
    int h = height, w = width;
    conv(net.stem.conv, h, w);
    std::vector<std::pair<int, int>> stage_sizes;
    for (const auto& blocks : net.stages) {
        for (const Bottleneck& block : blocks) {
            int bh = h, bw = w;
            conv(block.reduce.conv, bh, bw);
            conv(block.spatial.conv, bh, bw);
            conv(block.expand.conv, bh, bw);
            if (block.projection) {
                int ph = h, pw = w;
                conv(block.projection->conv, ph, pw);
            }
            h = bh;
            w = bw;
        }
        stage_sizes.emplace_back(h, w);
    }
    for (std::size_t k = 0; k < net.head.size(); ++k) {
        const auto [sh, sw] = stage_sizes[net.spec.head_stages[k] - kFirstStage];
        macs += net.head[k].weights.size() * static_cast<std::size_t>(sh) * sw;
    }
    return macs;
}

Tensor4 conv_unit_forward(const ConvUnit& unit, const Tensor4& x) {
    return unit.grc ? grc_forward_fast(x, unit.filters, *unit.grc) : conv2d(x, unit.filters, unit.spec);
}

ConvGrads conv_unit_backward(const ConvUnit& unit, const Tensor4& x, const Tensor4& grad_out) {
    return unit.grc ? grc_backward(x, unit.filters, *unit.grc, grad_out)
                    : conv2d_backward(x, unit.filters, unit.spec, grad_out);
}

namespace {

void add_into(std::span<Real> dst, std::span<const Real> src) {
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

void add_into(Tensor4& dst, const Tensor4& src) { add_into(dst.data(), src.data()); }

Tensor4 norm_conv_forward(NormConv& nc, const Tensor4& x, bool train_mode, bool apply_relu, NormConvCache* cache) {
    Tensor4 y = conv_unit_forward(nc.conv, x);
    BatchNormCache* bn_cache = cache ? &cache->bn : nullptr;
    Tensor4 z = batch_norm(y, nc.bn, train_mode, bn_cache);
    if (apply_relu) z = relu(z);
    if (cache) {
        cache->input = x;
        cache->output = z;
        cache->relu = apply_relu;
    }
    return z;
}

Tensor4 norm_conv_backward(const NormConv& nc, const NormConvCache& cache, const Tensor4& grad_out,
                           NormConv& grads) {
    const Tensor4 g = cache.relu ? relu_backward(cache.output, grad_out) : grad_out;
    BatchNormGrads bg = batch_norm_backward(cache.bn, nc.bn, g);
    add_into(std::span<Real>(grads.bn.scale), std::span<const Real>(bg.scale));
    add_into(std::span<Real>(grads.bn.shift), std::span<const Real>(bg.shift));
    ConvGrads cg = conv_unit_backward(nc.conv, cache.input, bg.input);
    add_into(grads.conv.filters.weights, cg.filters.weights);
    if (nc.conv.filters.has_bias()) {
        add_into(std::span<Real>(grads.conv.filters.bias), std::span<const Real>(cg.filters.bias));
    }
    return std::move(cg.input);
}

}  // namespace

Tensor4 bottleneck_forward(Bottleneck& block, const Tensor4& x, bool train_mode, BottleneckCache* cache) {
    auto sub = [&](NormConvCache BottleneckCache::*member) { return cache ? &(cache->*member) : nullptr; };
    Tensor4 a = norm_conv_forward(block.reduce, x, train_mode, true, sub(&BottleneckCache::reduce));
    Tensor4 b = norm_conv_forward(block.spatial, a, train_mode, true, sub(&BottleneckCache::spatial));
    Tensor4 out = norm_conv_forward(block.expand, b, train_mode, false, sub(&BottleneckCache::expand));
    if (block.projection) {
        NormConvCache* pc = nullptr;
        if (cache) pc = &cache->projection.emplace();
        add_into(out, norm_conv_forward(*block.projection, x, train_mode, false, pc));
    } else {
        if (x.shape() != out.shape()) throw std::logic_error("identity shortcut shape mismatch");
        add_into(out, x);
    }
    out = relu(out);
    if (cache) cache->output = out;
    return out;
}

Tensor4 bottleneck_backward(const Bottleneck& block, const BottleneckCache& cache, const Tensor4& grad_out,
                            Bottleneck& grads) {
    const Tensor4 g = relu_backward(cache.output, grad_out);
    Tensor4 gb = norm_conv_backward(block.expand, cache.expand, g, grads.expand);
    Tensor4 ga = norm_conv_backward(block.spatial, cache.spatial, gb, grads.spatial);
    Tensor4 gx = norm_conv_backward(block.reduce, cache.reduce, ga, grads.reduce);
    if (block.projection) {
        add_into(gx, norm_conv_backward(*block.projection, *cache.projection, g, *grads.projection));
    } else {
        add_into(gx, g);
    }
    return gx;
}

Tensor4 forward(Network& net, const Tensor4& input, bool train_mode, ForwardCache* cache) {
    const NetworkSpec& spec = net.spec;
    if (input.c() != spec.in_channels) {
        throw std::invalid_argument("network expects " + std::to_string(spec.in_channels) +
                                    " input channels, got " + std::to_string(input.c()));
    }
    const int factor = spec.downsampling();
    if (input.h() % factor != 0 || input.w() % factor != 0) {
        throw std::invalid_argument("input size " + std::to_string(input.h()) + "x" + std::to_string(input.w()) +
                                    " is not divisible by the downsampling factor " + std::to_string(factor));
    }
    if (cache) {
        *cache = ForwardCache{};
        cache->input_shape = input.shape();
        cache->stages.resize(net.stages.size());
    }
    Tensor4 x = norm_conv_forward(net.stem, input, train_mode, true, cache ? &cache->stem : nullptr);
    std::vector<Tensor4> taps(net.head.size());
    for (std::size_t s = 0; s < net.stages.size(); ++s) {
        for (Bottleneck& block : net.stages[s]) {
            BottleneckCache* bc = nullptr;
            if (cache) bc = &cache->stages[s].emplace_back();
            x = bottleneck_forward(block, x, train_mode, bc);
        }
        for (std::size_t k = 0; k < spec.head_stages.size(); ++k) {
            if (spec.head_stages[k] == kFirstStage + static_cast<int>(s)) taps[k] = x;
        }
    }
    Tensor4 logits({input.n(), spec.num_classes, input.h(), input.w()});
    for (std::size_t k = 0; k < net.head.size(); ++k) {
        const Tensor4 z = conv2d(taps[k], net.head[k], ConvSpec::same(1));
        add_into(logits, bilinear_upsample(z, input.h(), input.w()));
        if (cache) cache->head_logit_shapes.push_back(z.shape());
    }
    if (cache) cache->head_inputs = std::move(taps);
    return logits;
}

Tensor4 backward(const Network& net, const ForwardCache& cache, const Tensor4& grad_logits, Network& grads) {
    const NetworkSpec& spec = net.spec;
    std::vector<Tensor4> tap_grads(net.head.size());
    for (std::size_t k = 0; k < net.head.size(); ++k) {
        const Shape4 zs = cache.head_logit_shapes[k];
        const Tensor4 gz = bilinear_upsample_backward(grad_logits, zs.h, zs.w);
        ConvGrads cg = conv2d_backward(cache.head_inputs[k], net.head[k], ConvSpec::same(1), gz);
        add_into(grads.head[k].weights, cg.filters.weights);
        add_into(std::span<Real>(grads.head[k].bias), std::span<const Real>(cg.filters.bias));
        tap_grads[k] = std::move(cg.input);
    }
    Tensor4 g;
    for (int s = static_cast<int>(net.stages.size()) - 1; s >= 0; --s) {
        for (std::size_t k = 0; k < spec.head_stages.size(); ++k) {
            if (spec.head_stages[k] != kFirstStage + s) continue;
            if (g.empty()) {
                g = tap_grads[k];
            } else {
                add_into(g, tap_grads[k]);
            }
        }
        for (int b = static_cast<int>(net.stages[s].size()) - 1; b >= 0; --b) {
            if (g.empty()) continue;  // nothing downstream of this block reaches the loss
            g = bottleneck_backward(net.stages[s][b], cache.stages[s][b], g, grads.stages[s][b]);
        }
    }
    if (g.empty()) return Tensor4(cache.input_shape);
    return norm_conv_backward(net.stem, cache.stem, g, grads.stem);
}

double poly_lr(const TrainConfig& cfg, int iter) {
    if (iter < 0 || iter > cfg.total_iters) {
        throw std::out_of_range("iteration " + std::to_string(iter) + " outside [0, " +
                                std::to_string(cfg.total_iters) + "]");
    }
    return cfg.base_lr * std::pow(1.0 - static_cast<double>(iter) / cfg.total_iters, cfg.power);
}

void sgd_update(std::span<Real> param, std::span<const Real> grad, std::span<Real> velocity, double lr,
                double momentum, double weight_decay) {
    for (std::size_t i = 0; i < param.size(); ++i) {
        velocity[i] = static_cast<Real>(momentum * velocity[i] + grad[i] + weight_decay * param[i]);
        param[i] = static_cast<Real>(param[i] - lr * velocity[i]);
    }
}

void sgd_step(Network& net, Network& grads, const TrainConfig& cfg, int iter, SgdState& state) {
    std::vector<ParamRef> params = parameters(net);
    const std::vector<ParamRef> g = parameters(grads);
    if (g.size() != params.size()) throw std::invalid_argument("gradient structure does not match network");
    for (const ParamRef& ref : g) {
        for (Real v : ref.values) {
            if (!std::isfinite(v)) {
                throw std::runtime_error("non-finite gradient in " + ref.name + " at iteration " +
                                         std::to_string(iter));
            }
        }
    }
    if (state.velocity.empty()) {
        for (const ParamRef& p : params) state.velocity.emplace_back(p.values.size(), Real(0));
    }
    const double lr = poly_lr(cfg, iter);
    for (std::size_t i = 0; i < params.size(); ++i) {
        sgd_update(params[i].values, g[i].values, state.velocity[i], lr, cfg.momentum, cfg.weight_decay);
        for (Real v : params[i].values) {
            if (!std::isfinite(v)) {
                throw std::runtime_error("non-finite update of " + params[i].name + " at iteration " +
                                         std::to_string(iter));
            }
        }
    }
}

}  // namespace grc
