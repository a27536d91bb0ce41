#pragma once

#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "grc/config.hpp"
#include "grc/dataeval.hpp"
#include "grc/net.hpp"

namespace grc {

// Checkpoints: `path` holds concatenated tensor dumps, `path.manifest` one
// "name n c h w offset" line per tensor.

void save_checkpoint(Network& net, const std::string& path);
/// Loads into a network built from the same spec. Throws std::runtime_error
/// naming the first tensor whose name or shape does not match.
void load_checkpoint(Network& net, const std::string& path);

struct MetricsRow {
    int iter = 0;
    double lr = 0;
    double train_loss = 0;
    std::optional<double> val_miou;
};

inline constexpr const char* kMetricsHeader = "iter,lr,train_loss,val_miou";
std::string to_csv(const MetricsRow& row);

struct TrainOptions {
    int eval_every = 0;  // 0: evaluate only after the last iteration
    bool augment = true;
    std::function<void(const MetricsRow&)> on_row;
};

struct TrainResult {
    std::vector<MetricsRow> rows;
    double initial_loss = 0;
    double final_loss = 0;
};

/// Momentum SGD with the poly schedule. Batches and augmentations are drawn
/// from counter streams keyed by cfg.seed, so runs are reproducible.
/// Throws std::runtime_error on a non-finite loss, naming the iteration.
TrainResult train_network(Network& net, const std::vector<Sample>& train, const std::vector<Sample>& val,
                          const TrainConfig& cfg, const TrainOptions& options = {});

struct EvalReport {
    ConfusionMatrix confusion{kContextClasses};
    std::vector<double> class_iou;  // negative when the class is absent from gt and prediction
    double miou = 0;
    double center_accuracy = 0;
};

using Predictor = std::function<LabelMap(const Sample&)>;

EvalReport evaluate(const Predictor& predict, const std::vector<Sample>& samples, int num_classes);

/// Single-scale eval-mode prediction; logits are resized to the input size before argmax.
EvalReport evaluate_network(Network& net, const std::vector<Sample>& samples);

std::string format_report(const EvalReport& report);

struct Datasets {
    std::vector<Sample> train;
    std::vector<Sample> val;
};

/// Loads data.dir when it holds a dataset, otherwise generates from data.seed
/// (and persists to data.dir when set).
Datasets prepare_data(const DataConfig& cfg);

struct RunSummary {
    std::size_t parameter_count = 0;
    TrainResult train;
    EvalReport eval;
};

/// `grc train`: writes metrics.csv, model.ckpt(+.manifest), config.json into out_dir.
RunSummary run_train(const ExperimentConfig& cfg, const std::string& out_dir, std::ostream& log);

/// `grc eval`: evaluates the validation split with a checkpoint.
EvalReport run_eval(const ExperimentConfig& cfg, const std::string& ckpt_path, std::ostream& log);

struct BenchRow {
    std::string op;
    int repetitions = 0;
    double mean_ms = 0;
    double stddev_ms = 0;
};

struct BenchReport {
    Shape4 input;
    int out_channels = 0;
    int kernel = 0;
    int g = 0;
    std::vector<BenchRow> rows;  // conv2d, shift_features, grc_fast, grc_reference
    std::size_t shift_ops_per_forward = 0;

    const BenchRow& row(const std::string& op) const;
    bool fast_beats_reference() const { return row("grc_fast").mean_ms < row("grc_reference").mean_ms; }
};

inline constexpr const char* kBenchHeader = "op,n,c,h,w,c_out,kernel,g,reps,mean_ms,stddev_ms";

/// Warmed wall-clock timing of the GRC paths and the plain convolution.
BenchReport run_bench(const BenchConfig& cfg);
std::string to_csv(const BenchReport& report);

}  // namespace grc
