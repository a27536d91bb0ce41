#include "grc/checks.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "grc/convops.hpp"
#include "grc/layers.hpp"
#include "grc/net.hpp"
#include "grc/rng.hpp"

namespace grc {

namespace {

std::string fmt_err(double v) {
    std::ostringstream os;
    os.precision(3);
    os << std::scientific << v;
    return os.str();
}

FilterBank bank_from(const Tensor4& weights, const Tensor4* bias) {
    FilterBank f;
    f.weights = weights;
    if (bias) f.bias.assign(bias->data().begin(), bias->data().end());
    return f;
}

Tensor4 vec_tensor(const std::vector<Real>& v) {
    return Tensor4({static_cast<int>(v.size()), 1, 1, 1}, v);
}

Tensor4 random_filters(Shape4 shape, std::uint64_t seed) { return random_tensor(shape, seed, -1.0, 1.0); }

}  // namespace

EquivalenceStats grc_equivalence(int cases, std::uint64_t seed, const GrcForwardFn& fast) {
    static constexpr int kChannels[] = {2, 4, 8, 16, 64};
    static constexpr int kGroups[] = {1, 2, 4};
    CounterRng rng(seed);
    EquivalenceStats stats;
    while (stats.cases < cases) {
        const int C = kChannels[rng.below(5)];
        const int H = 4 + static_cast<int>(rng.below(13));
        const int W = 4 + static_cast<int>(rng.below(13));
        const int K = rng.bernoulli(0.5) ? 1 : 3;
        const int g_h = kGroups[rng.below(3)];
        const int g_w = kGroups[rng.below(3)];
        if (g_h * g_w > C / 2 || g_h > H || g_w > W) continue;
        const int pad = K == 3 && rng.bernoulli(0.7) ? 1 : 0;
        const GrcConfig cfg = make_grc_config(C, g_h, g_w, ConvSpec{K, 1, 1, pad});
        const int n = 1 + static_cast<int>(rng.below(2));
        const int c_out = 1 + static_cast<int>(rng.below(4));
        const Tensor4 x = random_tensor({n, C, H, W}, rng.next_u64());
        const Tensor4 bias = random_tensor({c_out, 1, 1, 1}, rng.next_u64());
        const FilterBank f = bank_from(random_filters({c_out, C, K, K}, rng.next_u64()),
                                       rng.bernoulli(0.5) ? &bias : nullptr);
        const double err = max_relative_difference(fast(x, f, cfg), grc_forward_reference(x, f, cfg));
        stats.max_relative_error = std::max(stats.max_relative_error, err);
        ++stats.cases;
    }
    return stats;
}

EquivalenceStats conv_equivalence(int cases, std::uint64_t seed) {
    static constexpr int kKernels[] = {1, 3, 5};
    static constexpr int kDilations[] = {1, 2, 4};
    CounterRng rng(seed);
    EquivalenceStats stats;
    for (int i = 0; i < cases; ++i) {
        ConvSpec spec;
        spec.kernel = kKernels[rng.below(3)];
        spec.dilation = kDilations[rng.below(3)];
        spec.stride = 1 + static_cast<int>(rng.below(2));
        spec.padding = static_cast<int>(rng.below(static_cast<std::uint64_t>(spec.radius()) + 2));
        const int min_side = std::max(1, spec.extent() - 2 * spec.padding);
        const int H = min_side + static_cast<int>(rng.below(10));
        const int W = min_side + static_cast<int>(rng.below(10));
        const int n = 1 + static_cast<int>(rng.below(2));
        const int c_in = 1 + static_cast<int>(rng.below(4));
        const int c_out = 1 + static_cast<int>(rng.below(4));
        const Tensor4 x = random_tensor({n, c_in, H, W}, rng.next_u64());
        const Tensor4 bias = random_tensor({c_out, 1, 1, 1}, rng.next_u64());
        const FilterBank f = bank_from(random_filters({c_out, c_in, spec.kernel, spec.kernel}, rng.next_u64()),
                                       rng.bernoulli(0.5) ? &bias : nullptr);
        const double err = max_relative_difference(conv2d(x, f, spec), conv2d_oracle(x, f, spec));
        stats.max_relative_error = std::max(stats.max_relative_error, err);
        ++stats.cases;
    }
    return stats;
}

namespace {

DifferentiableOp conv_op(std::string name, Shape4 x_shape, int c_out, ConvSpec spec) {
    DifferentiableOp op;
    op.name = std::move(name);
    op.input_names = {"input", "weights", "bias"};
    op.make_inputs = [=](std::uint64_t seed) {
        return std::vector<Tensor4>{random_tensor(x_shape, derive_key(seed, 1)),
                                    random_tensor({c_out, x_shape.c, spec.kernel, spec.kernel}, derive_key(seed, 2)),
                                    random_tensor({c_out, 1, 1, 1}, derive_key(seed, 3))};
    };
    op.forward = [=](std::span<const Tensor4> in) { return conv2d(in[0], bank_from(in[1], &in[2]), spec); };
    op.backward = [=](std::span<const Tensor4> in, const Tensor4& g) {
        ConvGrads cg = conv2d_backward(in[0], bank_from(in[1], &in[2]), spec, g);
        return std::vector<Tensor4>{cg.input, cg.filters.weights, vec_tensor(cg.filters.bias)};
    };
    return op;
}

DifferentiableOp grc_op() {
    const Shape4 x_shape{2, 8, 6, 6};
    const GrcConfig cfg = make_grc_config(8, 2, 2, ConvSpec::same(3));
    DifferentiableOp op;
    op.name = "grc";
    op.input_names = {"input", "weights", "bias"};
    op.make_inputs = [=](std::uint64_t seed) {
        return std::vector<Tensor4>{random_tensor(x_shape, derive_key(seed, 1)),
                                    random_tensor({3, 8, 3, 3}, derive_key(seed, 2)),
                                    random_tensor({3, 1, 1, 1}, derive_key(seed, 3))};
    };
    op.forward = [=](std::span<const Tensor4> in) { return grc_forward_fast(in[0], bank_from(in[1], &in[2]), cfg); };
    op.backward = [=](std::span<const Tensor4> in, const Tensor4& g) {
        ConvGrads cg = grc_backward(in[0], bank_from(in[1], &in[2]), cfg, g);
        return std::vector<Tensor4>{cg.input, cg.filters.weights, vec_tensor(cg.filters.bias)};
    };
    return op;
}

BatchNorm bn_from(const Tensor4& scale, const Tensor4& shift) {
    BatchNorm bn(scale.n());
    bn.scale.assign(scale.data().begin(), scale.data().end());
    bn.shift.assign(shift.data().begin(), shift.data().end());
    return bn;
}

DifferentiableOp batch_norm_op() {
    DifferentiableOp op;
    op.name = "batch_norm";
    op.input_names = {"input", "scale", "shift"};
    op.make_inputs = [](std::uint64_t seed) {
        return std::vector<Tensor4>{random_tensor({3, 4, 3, 3}, derive_key(seed, 1), -2.0, 2.0),
                                    random_tensor({4, 1, 1, 1}, derive_key(seed, 2), 0.5, 1.5),
                                    random_tensor({4, 1, 1, 1}, derive_key(seed, 3))};
    };
    op.forward = [](std::span<const Tensor4> in) {
        BatchNorm bn = bn_from(in[1], in[2]);
        return batch_norm(in[0], bn, true);
    };
    op.backward = [](std::span<const Tensor4> in, const Tensor4& g) {
        BatchNorm bn = bn_from(in[1], in[2]);
        BatchNormCache cache;
        batch_norm(in[0], bn, true, &cache);
        BatchNormGrads bg = batch_norm_backward(cache, bn, g);
        return std::vector<Tensor4>{bg.input, vec_tensor(bg.scale), vec_tensor(bg.shift)};
    };
    return op;
}

DifferentiableOp relu_op() {
    DifferentiableOp op;
    op.name = "relu";
    op.input_names = {"input"};
    op.make_inputs = [](std::uint64_t seed) {
        // Keep every element at least 0.1 away from the kink.
        Tensor4 x = random_tensor({2, 3, 4, 4}, derive_key(seed, 1), 0.1, 1.0);
        CounterRng signs(derive_key(seed, 2));
        for (Real& v : x.data()) {
            if (signs.bernoulli(0.5)) v = -v;
        }
        return std::vector<Tensor4>{x};
    };
    op.forward = [](std::span<const Tensor4> in) { return relu(in[0]); };
    op.backward = [](std::span<const Tensor4> in, const Tensor4& g) {
        return std::vector<Tensor4>{relu_backward(relu(in[0]), g)};
    };
    return op;
}

DifferentiableOp bilinear_op() {
    DifferentiableOp op;
    op.name = "bilinear_upsample";
    op.input_names = {"input"};
    op.make_inputs = [](std::uint64_t seed) {
        return std::vector<Tensor4>{random_tensor({2, 3, 3, 4}, derive_key(seed, 1))};
    };
    op.forward = [](std::span<const Tensor4> in) { return bilinear_upsample(in[0], 7, 9); };
    op.backward = [](std::span<const Tensor4> in, const Tensor4& g) {
        return std::vector<Tensor4>{bilinear_upsample_backward(g, in[0].h(), in[0].w())};
    };
    return op;
}

DifferentiableOp softmax_ce_op() {
    const Shape4 shape{2, 3, 4, 5};
    LabelMap labels(2, 4, 5);
    CounterRng rng(0x5EED);
    for (auto& l : labels.data) l = rng.bernoulli(0.15) ? kIgnoreLabel : static_cast<std::uint8_t>(rng.below(3));
    DifferentiableOp op;
    op.name = "softmax_cross_entropy";
    op.input_names = {"logits"};
    op.make_inputs = [=](std::uint64_t seed) {
        return std::vector<Tensor4>{random_tensor(shape, derive_key(seed, 1), -3.0, 3.0)};
    };
    op.forward = [=](std::span<const Tensor4> in) {
        return Tensor4({1, 1, 1, 1}, static_cast<Real>(softmax_cross_entropy(in[0], labels).loss));
    };
    op.backward = [=](std::span<const Tensor4> in, const Tensor4& g) {
        Tensor4 grad = softmax_cross_entropy(in[0], labels).grad_logits;
        for (Real& v : grad.data()) v *= g[0];
        return std::vector<Tensor4>{grad};
    };
    return op;
}

NetworkSpec tiny_spec() {
    NetworkSpec spec;
    spec.stem_width = 8;
    spec.bottleneck_ratio = 2;
    spec.stages = {{1, 8, 1, 1}, {1, 16, 2, 2}};
    spec.grc_stages = {3};
    spec.g_h = 2;
    spec.g_w = 2;
    spec.head_stages = {2, 3};
    return spec;
}

DifferentiableOp bottleneck_op() {
    // GRC in the spatial conv, projection shortcut, train-mode batch norm.
    NetworkSpec spec = tiny_spec();
    const Network base = build_network(spec, 11);
    const Bottleneck block = base.stages[1][0];
    DifferentiableOp op;
    op.name = "bottleneck";
    op.input_names = {"input", "spatial.weight", "expand.bn.scale"};
    op.make_inputs = [=](std::uint64_t seed) {
        return std::vector<Tensor4>{random_tensor({2, 8, 6, 6}, derive_key(seed, 1)),
                                    block.spatial.conv.filters.weights, vec_tensor(block.expand.bn.scale)};
    };
    auto assemble = [=](std::span<const Tensor4> in) {
        Bottleneck b = block;
        b.spatial.conv.filters.weights = in[1];
        b.expand.bn.scale.assign(in[2].data().begin(), in[2].data().end());
        return b;
    };
    op.forward = [=](std::span<const Tensor4> in) {
        Bottleneck b = assemble(in);
        return bottleneck_forward(b, in[0], true, nullptr);
    };
    op.backward = [=](std::span<const Tensor4> in, const Tensor4& g) {
        Bottleneck b = assemble(in);
        BottleneckCache cache;
        bottleneck_forward(b, in[0], true, &cache);
        Network zero = zeros_like(base);
        Bottleneck grads = zero.stages[1][0];
        Tensor4 gx = bottleneck_backward(b, cache, g, grads);
        return std::vector<Tensor4>{gx, grads.spatial.conv.filters.weights, vec_tensor(grads.expand.bn.scale)};
    };
    return op;
}

DifferentiableOp network_op() {
    const Network base = build_network(tiny_spec(), 5);
    DifferentiableOp op;
    op.name = "network";
    op.input_names = {"input", "stem.weight", "head3.weight", "head3.bias"};
    op.make_inputs = [=](std::uint64_t seed) {
        return std::vector<Tensor4>{random_tensor({2, 3, 8, 8}, derive_key(seed, 1)), base.stem.conv.filters.weights,
                                    base.head[1].weights, vec_tensor(base.head[1].bias)};
    };
    auto assemble = [=](std::span<const Tensor4> in) {
        Network net = base;
        net.stem.conv.filters.weights = in[1];
        net.head[1].weights = in[2];
        net.head[1].bias.assign(in[3].data().begin(), in[3].data().end());
        return net;
    };
    op.forward = [=](std::span<const Tensor4> in) {
        Network net = assemble(in);
        return forward(net, in[0], true);
    };
    op.backward = [=](std::span<const Tensor4> in, const Tensor4& g) {
        Network net = assemble(in);
        ForwardCache cache;
        forward(net, in[0], true, &cache);
        Network grads = zeros_like(net);
        Tensor4 gx = backward(net, cache, g, grads);
        return std::vector<Tensor4>{gx, grads.stem.conv.filters.weights, grads.head[1].weights,
                                    vec_tensor(grads.head[1].bias)};
    };
    return op;
}

}  // namespace

std::vector<RegisteredGradCheck> gradcheck_registry() {
    return {
        {conv_op("conv2d", {2, 3, 6, 6}, 4, ConvSpec::same(3)), "conv2d", 1e-5},
        {conv_op("conv2d_strided_dilated", {2, 2, 9, 8}, 3, ConvSpec{3, 2, 2, 2}), "conv2d", 1e-5},
        {grc_op(), "grc", 1e-5},
        {batch_norm_op(), "batch_norm", 1e-4},
        {relu_op(), "relu", 1e-5},
        {bilinear_op(), "bilinear_upsample", 1e-5},
        {softmax_ce_op(), "softmax_cross_entropy", 1e-5},
        {bottleneck_op(), "bottleneck", 1e-4},
        {network_op(), "network", 1e-4},
    };
}

std::vector<std::string> missing_gradchecks(const std::vector<RegisteredGradCheck>& registry) {
    std::vector<std::string> missing;
    for (std::string_view name : kDifferentiableOps) {
        const bool covered = std::any_of(registry.begin(), registry.end(),
                                         [&](const RegisteredGradCheck& r) { return r.covers == name; });
        if (!covered) missing.emplace_back(name);
    }
    return missing;
}

PerturbationResult grc_receptive_field_probe() {
    const int C = 8, H = 6, W = 6;
    const Tensor4 x = random_tensor({1, C, H, W}, 42);
    Tensor4 moved = x;
    moved.at(0, 7, 4, 4) += 1;
    const FilterBank ones{Shape4{1, C, 1, 1}, false};
    FilterBank f = ones;
    std::fill(f.weights.data().begin(), f.weights.data().end(), Real(1));
    const GrcConfig cfg = make_grc_config(C, 2, 2, ConvSpec::same(1));
    PerturbationResult r;
    r.grc_change = std::abs(grc_forward_fast(moved, f, cfg).at(0, 0, 1, 1) - grc_forward_fast(x, f, cfg).at(0, 0, 1, 1));
    r.standard_change =
        std::abs(conv2d(moved, f, ConvSpec::same(1)).at(0, 0, 1, 1) - conv2d(x, f, ConvSpec::same(1)).at(0, 0, 1, 1));
    return r;
}

PerturbationResult network_receptive_field_probe(std::uint64_t seed) {
    const int side = 32;
    const Tensor4 x = random_tensor({1, 3, side, side}, derive_key(seed, 1), 0.0, 1.0);
    Tensor4 moved = x;
    for (int c = 0; c < 3; ++c) moved.at(0, c, 0, 0) += 1;
    // A single random network can gate the path off with a dead ReLU, so sum over a few.
    auto centre_change = [&](bool with_grc) {
        double change = 0;
        for (std::uint64_t t = 0; t < 4; ++t) {
            Network net = build_network(one_by_one_spec(with_grc), derive_key(seed, 100 + t));
            const Tensor4 a = forward(net, x, false);
            const Tensor4 b = forward(net, moved, false);
            for (int k = 0; k < a.c(); ++k) {
                change += std::abs(a.at(0, k, side / 2, side / 2) - b.at(0, k, side / 2, side / 2));
            }
        }
        return change;
    };
    return {centre_change(true), centre_change(false)};
}

std::string worked_example_mismatch() {
    const int C = 8, H = 6, W = 6;
    const OffsetSet set = offset_set(H, W, 2, 2);
    const std::vector<Offset> expected{{0, 0}, {0, 3}, {3, 0}, {3, 3}};
    if (set.entries != expected) return "offset set differs from {(0,0),(0,3),(3,0),(3,3)}";
    if (subgroup_of_channel(5, C, 2, 2) != 1) return "channel 5 is not in sub-group 1";
    if (shift_of_channel(5, C, H, W, 2, 2) != Offset{0, 3}) return "channel 5 offset is not (0,3)";
    if (sampling_center(1, 1, 5, C, H, W, 2, 2) != Offset{1, 4}) return "centre (1,1) does not move to (1,4)";

    // The reference 3x3 GRC output at (1,1) must read channel 5 at (1,4):
    // a filter that is nonzero only at the centre tap of channel 5 isolates it.
    FilterBank probe({1, C, 3, 3}, false);
    probe.weights.at(0, 5, 1, 1) = 1;
    const GrcConfig cfg = make_grc_config(C, 2, 2, ConvSpec::same(3));
    const Tensor4 x = random_tensor({1, C, H, W}, 7);
    const Tensor4 out = grc_forward_reference(x, probe, cfg);
    if (out.at(0, 0, 1, 1) != x.at(0, 5, 1, 4)) return "reference GRC at (1,1) does not sample channel 5 at (1,4)";
    return {};
}

CheckResult parameter_parity() {
    CheckResult r{"parameter_parity", true, {}};
    const Network fcn = build_network(toy_fcn_spec(false), 1);
    const std::size_t params = parameter_count(fcn);
    const std::size_t macs = multiply_accumulates(fcn, 64, 64);
    std::ostringstream detail;
    detail << "FCN params=" << params;
    for (int pos : {1, 2, 3}) {
        NetworkSpec spec = toy_fcn_spec(true);
        spec.grc_layer_position = pos;
        const Network plus = build_network(spec, 1);
        const std::size_t p = parameter_count(plus);
        const std::size_t m = multiply_accumulates(plus, 64, 64);
        detail << " FCN+(conv" << pos << ") params=" << p;
        if (p != params || m != macs) r.pass = false;
    }
    r.detail = detail.str();
    return r;
}

std::vector<CheckResult> run_checks(const CheckHooks& hooks) {
    std::vector<CheckResult> results;
    auto guarded = [&](const std::string& name, const std::function<CheckResult()>& fn) {
        try {
            results.push_back(fn());
        } catch (const std::exception& e) {
            results.push_back({name, false, std::string("exception: ") + e.what()});
        }
    };

    guarded("conv_oracle_equivalence", [] {
        const EquivalenceStats s = conv_equivalence(100, 2024);
        return CheckResult{"conv_oracle_equivalence", s.max_relative_error < 1e-10,
                           std::to_string(s.cases) + " cases, max rel err " + fmt_err(s.max_relative_error)};
    });
    guarded("grc_equivalence", [&] {
        const EquivalenceStats s = grc_equivalence(200, 2025, hooks.grc_fast);
        return CheckResult{"grc_equivalence", s.max_relative_error < 1e-10,
                           std::to_string(s.cases) + " cases, max rel err " + fmt_err(s.max_relative_error)};
    });
    guarded("worked_example", [] {
        const std::string mismatch = worked_example_mismatch();
        return CheckResult{"worked_example", mismatch.empty(), mismatch.empty() ? "offsets (0,0),(0,3),(3,0),(3,3); channel 5 -> sub-group 1 -> (0,3); (1,1) -> (1,4)" : mismatch};
    });
    const auto registry = gradcheck_registry();
    for (const RegisteredGradCheck& entry : registry) {
        guarded("gradcheck:" + entry.op.name, [&] {
            const GradReport rep = check_op(entry.op, 99);
            std::ostringstream d;
            d << "max rel err " << fmt_err(rep.max_relative_error) << " over " << rep.num_checked
              << " coords (tol " << fmt_err(entry.tol) << ")";
            if (!rep.finite) d << ", non-finite values";
            return CheckResult{"gradcheck:" + entry.op.name, rep.passes(entry.tol), d.str()};
        });
    }
    guarded("gradcheck_registry_complete", [&] {
        const auto missing = missing_gradchecks(registry);
        std::string d = missing.empty() ? "all backward ops registered" : "missing:";
        for (const auto& m : missing) d += " " + m;
        return CheckResult{"gradcheck_registry_complete", missing.empty(), d};
    });
    guarded("parameter_parity", [] { return parameter_parity(); });
    guarded("receptive_field_grc", [] {
        const PerturbationResult p = grc_receptive_field_probe();
        return CheckResult{"receptive_field_grc", p.grc_change > 0 && p.standard_change == 0,
                           "GRC change " + fmt_err(p.grc_change) + ", standard change " + fmt_err(p.standard_change)};
    });
    guarded("receptive_field_network", [] {
        const PerturbationResult p = network_receptive_field_probe(3);
        return CheckResult{"receptive_field_network", p.grc_change > 0 && p.standard_change == 0,
                           "FCN+ change " + fmt_err(p.grc_change) + ", FCN change " + fmt_err(p.standard_change)};
    });
    return results;
}

}  // namespace grc
