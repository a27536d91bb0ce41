#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "grc/convops.hpp"
#include "grc/grc.hpp"
#include "grc/layers.hpp"
#include "grc/tensor.hpp"

namespace grc {

/// One residual stage. Stages are numbered from 2 (stage 1 is the stem).
struct StageSpec {
    int blocks = 2;
    int width = 16;
    int stride = 1;
    int dilation = 1;
    bool operator==(const StageSpec&) const = default;
};

inline constexpr int kFirstStage = 2;

struct NetworkSpec {
    int in_channels = 3;
    int stem_width = 16;
    int kernel = 3;  // stem and 2nd bottleneck conv; 1 gives the 1x1-only variant
    int bottleneck_ratio = 4;
    std::vector<StageSpec> stages{{2, 16, 1, 1}, {2, 32, 2, 1}, {2, 64, 2, 1}, {2, 128, 1, 2}};
    std::set<int> grc_stages{5};
    int grc_layer_position = 2;  // which conv of the bottleneck is replaced: 1, 2 or 3
    int g_h = 2;
    int g_w = 2;
    int num_classes = 3;
    std::vector<int> head_stages{3, 4, 5};

    int last_stage() const { return kFirstStage + static_cast<int>(stages.size()) - 1; }
    int downsampling() const;
    bool operator==(const NetworkSpec&) const = default;
};

/// Throws std::invalid_argument describing the first inconsistency.
void validate(const NetworkSpec& spec);

/// Default toy backbone: widths 16/32/64/128, strides 1/2/2/1, dilation 2 in the last stage.
NetworkSpec toy_fcn_spec(bool with_grc = true);

/// Every convolution 1x1, no striding; a plain FCN of this shape sees one pixel.
NetworkSpec one_by_one_spec(bool with_grc, std::vector<int> widths = {16, 32, 32, 32});

struct TrainConfig {
    double base_lr = 0.01;
    double momentum = 0.9;
    double weight_decay = 1e-4;
    double power = 0.9;
    int total_iters = 300;
    int batch_size = 4;
    int crop_h = 64;
    int crop_w = 64;
    std::uint64_t seed = 0;
    bool operator==(const TrainConfig&) const = default;
};

void validate(const TrainConfig& cfg);

/// Convolution or GRC with its filters.
struct ConvUnit {
    FilterBank filters;
    ConvSpec spec;
    std::optional<GrcConfig> grc;
};

struct NormConv {
    ConvUnit conv;
    BatchNorm bn;
};

struct Bottleneck {
    NormConv reduce;   // 1x1
    NormConv spatial;  // KxK, carries stride and dilation
    NormConv expand;   // 1x1
    std::optional<NormConv> projection;
};

/// Parameters of an FCN / FCN+ network. A zero-filled clone of the same
/// structure holds gradients.
struct Network {
    NetworkSpec spec;
    NormConv stem;
    std::vector<std::vector<Bottleneck>> stages;
    std::vector<FilterBank> head;  // one 1x1 classifier per tapped stage, with bias
};

Network build_network(const NetworkSpec& spec, std::uint64_t seed);

/// Same structure, all parameters and statistics zero.
Network zeros_like(const Network& net);

struct ParamRef {
    std::string name;
    Shape4 shape;
    std::span<Real> values;
};

/// Learnable parameters in a fixed order.
std::vector<ParamRef> parameters(Network& net);
/// Parameters plus batch-norm running statistics (checkpoint contents).
std::vector<ParamRef> state(Network& net);

std::size_t parameter_count(const Network& net);

/// Multiply-accumulates of one forward pass at the given input size. Shifts add none.
std::size_t multiply_accumulates(const Network& net, int height, int width);

struct NormConvCache {
    Tensor4 input;
    BatchNormCache bn;
    Tensor4 output;
    bool relu = true;
};

struct BottleneckCache {
    NormConvCache reduce, spatial, expand;
    std::optional<NormConvCache> projection;
    Tensor4 output;
};

struct ForwardCache {
    Shape4 input_shape;
    NormConvCache stem;
    std::vector<std::vector<BottleneckCache>> stages;
    std::vector<Tensor4> head_inputs;
    std::vector<Shape4> head_logit_shapes;
};

/// Logits at full input resolution. Input sides must be divisible by spec.downsampling().
Tensor4 forward(Network& net, const Tensor4& input, bool train_mode, ForwardCache* cache = nullptr);

/// Accumulates parameter gradients into `grads` and returns the input gradient.
Tensor4 backward(const Network& net, const ForwardCache& cache, const Tensor4& grad_logits, Network& grads);

/// Differentiable building blocks, exposed for gradient checking.
Tensor4 conv_unit_forward(const ConvUnit& unit, const Tensor4& x);
ConvGrads conv_unit_backward(const ConvUnit& unit, const Tensor4& x, const Tensor4& grad_out);

/// Every operation with a hand-written backward pass.
inline constexpr std::array<std::string_view, 8> kDifferentiableOps{
    "conv2d", "grc", "batch_norm", "relu", "bilinear_upsample", "softmax_cross_entropy",
    "bottleneck", "network"};

Tensor4 bottleneck_forward(Bottleneck& block, const Tensor4& x, bool train_mode, BottleneckCache* cache);
Tensor4 bottleneck_backward(const Bottleneck& block, const BottleneckCache& cache, const Tensor4& grad_out,
                            Bottleneck& grads);

// Optimisation

/// base_lr * (1 - iter/total_iters)^power.
double poly_lr(const TrainConfig& cfg, int iter);

/// v <- momentum*v + grad + weight_decay*param; param <- param - lr*v.
void sgd_update(std::span<Real> param, std::span<const Real> grad, std::span<Real> velocity, double lr,
                double momentum, double weight_decay);

struct SgdState {
    std::vector<std::vector<Real>> velocity;
};

/// One momentum-SGD step with the poly schedule. Throws std::runtime_error
/// naming the parameter when a gradient or updated value is non-finite.
void sgd_step(Network& net, Network& grads, const TrainConfig& cfg, int iter, SgdState& state);

}  // namespace grc
