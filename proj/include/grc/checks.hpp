#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "grc/gradcheck.hpp"
#include "grc/grc.hpp"

namespace grc {

struct CheckResult {
    std::string name;
    bool pass = false;
    std::string detail;
};

using GrcForwardFn = std::function<Tensor4(const Tensor4&, const FilterBank&, const GrcConfig&)>;

/// Replaceable pieces of the oracle suite, so tests can inject faulty implementations.
struct CheckHooks {
    GrcForwardFn grc_fast = [](const Tensor4& x, const FilterBank& f, const GrcConfig& c) {
        return grc_forward_fast(x, f, c);
    };
};

struct EquivalenceStats {
    int cases = 0;
    double max_relative_error = 0;
};

/// Random GRC configurations (C in {2,4,8,16,64}, H,W in 4..16, K in {1,3},
/// g_h,g_w in {1,2,4}, stride 1) comparing a fast path to the reference.
EquivalenceStats grc_equivalence(int cases, std::uint64_t seed, const GrcForwardFn& fast);

/// Random shapes with K in {1,3,5}, d in {1,2,4}, stride in {1,2}: conv2d vs conv2d_oracle.
EquivalenceStats conv_equivalence(int cases, std::uint64_t seed);

struct RegisteredGradCheck {
    DifferentiableOp op;
    std::string covers;  // entry of kDifferentiableOps
    double tol;
};

/// One or more checks per hand-written backward pass.
std::vector<RegisteredGradCheck> gradcheck_registry();

/// Names from kDifferentiableOps that no registered check covers.
std::vector<std::string> missing_gradchecks(const std::vector<RegisteredGradCheck>& registry);

struct PerturbationResult {
    double grc_change = 0;       // |delta output| at the probed location under GRC
    double standard_change = 0;  // same under the plain convolution
};

/// 1x1 GRC, g_h = g_w = 2, on a 1x8x6x6 input with all-ones filters: perturb
/// pixel (4,4) of global channel 7 and measure the change at output (1,1).
PerturbationResult grc_receptive_field_probe();

/// 1x1-only network on a 32x32 input: perturb pixel (0,0) and measure the
/// change of the centre logits with and without GRC blocks (eval mode),
/// summed over four randomly initialised networks.
PerturbationResult network_receptive_field_probe(std::uint64_t seed);

/// Six-by-six, eight-channel, g = 2 walk-through. Empty string on success.
std::string worked_example_mismatch();

/// Parameter and multiply-accumulate counts of FCN vs FCN+ for every GRC layer position.
CheckResult parameter_parity();

/// The full oracle suite, one result per check.
std::vector<CheckResult> run_checks(const CheckHooks& hooks = {});

}  // namespace grc
