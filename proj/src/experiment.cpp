#include "grc/experiment.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <sstream>
#include <stdexcept>

#include "grc/checks.hpp"
#include "grc/gradcheck.hpp"
#include "grc/parallel.hpp"
#include "grc/rng.hpp"

namespace grc {

namespace fs = std::filesystem;

void save_checkpoint(Network& net, const std::string& path) {
    std::ofstream data(path, std::ios::binary);
    std::ofstream manifest(path + ".manifest");
    if (!data || !manifest) throw std::runtime_error("cannot write checkpoint " + path);
    std::size_t offset = 0;
    for (const ParamRef& ref : state(net)) {
        const Tensor4 t(ref.shape, std::vector<Real>(ref.values.begin(), ref.values.end()));
        write_tensor(data, t);
        manifest << ref.name << ' ' << ref.shape.n << ' ' << ref.shape.c << ' ' << ref.shape.h << ' '
                 << ref.shape.w << ' ' << offset << '\n';
        offset += dump_size(ref.shape);
    }
}

void load_checkpoint(Network& net, const std::string& path) {
    std::ifstream data(path, std::ios::binary);
    std::ifstream manifest(path + ".manifest");
    if (!data) throw std::runtime_error("cannot open checkpoint " + path);
    if (!manifest) throw std::runtime_error("cannot open checkpoint manifest " + path + ".manifest");
    std::vector<ParamRef> refs = state(net);
    std::string line;
    std::size_t i = 0;
    while (std::getline(manifest, line)) {
        if (line.empty()) continue;
        std::istringstream fields(line);
        std::string name;
        Shape4 shape;
        std::size_t offset = 0;
        if (!(fields >> name >> shape.n >> shape.c >> shape.h >> shape.w >> offset)) {
            throw std::runtime_error("malformed manifest line: " + line);
        }
        if (i >= refs.size()) throw std::runtime_error("checkpoint has extra tensor " + name);
        ParamRef& ref = refs[i++];
        if (name != ref.name) {
            throw std::runtime_error("checkpoint tensor " + name + " where the network expects " + ref.name);
        }
        if (shape != ref.shape) {
            throw std::runtime_error("shape mismatch for " + name + ": checkpoint " + to_string(shape) +
                                     ", network " + to_string(ref.shape));
        }
        data.seekg(static_cast<std::streamoff>(offset));
        const Tensor4 t = read_tensor(data);
        if (t.shape() != shape) throw std::runtime_error("checkpoint payload shape mismatch for " + name);
        std::copy(t.data().begin(), t.data().end(), ref.values.begin());
    }
    if (i != refs.size()) {
        throw std::runtime_error("checkpoint is missing tensor " + refs[i].name);
    }
}

std::string to_csv(const MetricsRow& row) {
    char buf[128];
    std::snprintf(buf, sizeof buf, "%d,%.10g,%.10g,", row.iter, row.lr, row.train_loss);
    std::string s = buf;
    if (row.val_miou) {
        std::snprintf(buf, sizeof buf, "%.10g", *row.val_miou);
        s += buf;
    }
    return s;
}

TrainResult train_network(Network& net, const std::vector<Sample>& train, const std::vector<Sample>& val,
                          const TrainConfig& cfg, const TrainOptions& options) {
    validate(cfg);
    if (train.empty()) throw std::invalid_argument("empty training set");
    TrainResult result;
    SgdState sgd;
    for (int iter = 0; iter < cfg.total_iters; ++iter) {
        const std::uint64_t iter_key = derive_key(cfg.seed, static_cast<std::uint64_t>(iter));
        CounterRng pick(iter_key);
        std::vector<Sample> batch;
        batch.reserve(cfg.batch_size);
        for (int b = 0; b < cfg.batch_size; ++b) {
            const Sample& s = train[pick.below(train.size())];
            const std::uint64_t aug_key = derive_key(iter_key, 1000 + static_cast<std::uint64_t>(b));
            if (options.augment) {
                batch.push_back(augment(s, aug_key, cfg.crop_h, cfg.crop_w));
            } else if (s.image.h() == cfg.crop_h && s.image.w() == cfg.crop_w) {
                batch.push_back(s);
            } else {
                AugmentParams p = draw_augment(aug_key);
                p.flip = false;
                p.scale = 1.0;
                batch.push_back(apply_augment(s, p, cfg.crop_h, cfg.crop_w));
            }
        }
        const auto [images, labels] = make_batch(batch);

        ForwardCache cache;
        const Tensor4 logits = forward(net, images, true, &cache);
        const LossResult loss = softmax_cross_entropy(logits, labels);
        if (!std::isfinite(loss.loss)) {
            throw std::runtime_error("non-finite training loss at iteration " + std::to_string(iter));
        }
        Network grads = zeros_like(net);
        backward(net, cache, loss.grad_logits, grads);
        const double lr = poly_lr(cfg, iter);
        sgd_step(net, grads, cfg, iter, sgd);

        MetricsRow row{iter, lr, loss.loss, std::nullopt};
        const bool last = iter + 1 == cfg.total_iters;
        const bool periodic = options.eval_every > 0 && (iter + 1) % options.eval_every == 0;
        if (!val.empty() && (last || periodic)) row.val_miou = evaluate_network(net, val).miou;
        if (iter == 0) result.initial_loss = loss.loss;
        result.final_loss = loss.loss;
        if (options.on_row) options.on_row(row);
        result.rows.push_back(row);
    }
    return result;
}

EvalReport evaluate(const Predictor& predict, const std::vector<Sample>& samples, int num_classes) {
    EvalReport report{ConfusionMatrix(num_classes), {}, 0, 0};
    std::size_t hit = 0, total = 0;
    for (const Sample& s : samples) {
        const LabelMap pred = predict(s);
        report.confusion.accumulate(pred, s.mask);
        for (std::size_t i = 0; i < s.mask.data.size(); ++i) {
            if (s.mask.data[i] != 1 && s.mask.data[i] != 2) continue;
            ++total;
            if (pred.data[i] == s.mask.data[i]) ++hit;
        }
    }
    for (int c = 0; c < num_classes; ++c) report.class_iou.push_back(class_iou(report.confusion, c));
    report.miou = miou(report.confusion);
    report.center_accuracy = total == 0 ? 0.0 : static_cast<double>(hit) / static_cast<double>(total);
    return report;
}

EvalReport evaluate_network(Network& net, const std::vector<Sample>& samples) {
    return evaluate(
        [&](const Sample& s) {
            Tensor4 logits = forward(net, s.image, false);
            if (logits.h() != s.image.h() || logits.w() != s.image.w()) {
                logits = bilinear_upsample(logits, s.image.h(), s.image.w());
            }
            return argmax_labels(logits);
        },
        samples, net.spec.num_classes);
}

std::string format_report(const EvalReport& report) {
    std::ostringstream os;
    os << std::fixed << std::setprecision(4);
    for (std::size_t c = 0; c < report.class_iou.size(); ++c) {
        os << "class " << c << " IoU: ";
        if (report.class_iou[c] < 0) {
            os << "n/a";
        } else {
            os << report.class_iou[c];
        }
        os << '\n';
    }
    os << "mIoU: " << report.miou << '\n';
    os << "center-square accuracy: " << report.center_accuracy << '\n';
    return os.str();
}

Datasets prepare_data(const DataConfig& cfg) {
    if (!cfg.dir.empty() && fs::exists(fs::path(cfg.dir) / "train" / "index.txt") &&
        fs::exists(fs::path(cfg.dir) / "val" / "index.txt")) {
        return {load_dataset((fs::path(cfg.dir) / "train").string()),
                load_dataset((fs::path(cfg.dir) / "val").string())};
    }
    Datasets d{gen_context_dataset(cfg.seed, cfg.train_samples, cfg.height, cfg.width),
               gen_context_dataset(derive_key(cfg.seed, 0x7A1), cfg.val_samples, cfg.height, cfg.width)};
    if (!cfg.dir.empty()) {
        save_dataset((fs::path(cfg.dir) / "train").string(), d.train);
        save_dataset((fs::path(cfg.dir) / "val").string(), d.val);
    }
    return d;
}

RunSummary run_train(const ExperimentConfig& cfg, const std::string& out_dir, std::ostream& log) {
    validate(cfg);
    fs::create_directories(out_dir);
    const NetworkSpec spec = cfg.network_spec();
    Network net = build_network(spec, cfg.train.seed);
    RunSummary summary;
    summary.parameter_count = parameter_count(net);

    std::ostringstream header;
    header << "# params=" << summary.parameter_count
           << " macs=" << multiply_accumulates(net, cfg.train.crop_h, cfg.train.crop_w)
           << " grc=" << (spec.grc_stages.empty() ? "off" : "on");
    if (!spec.grc_stages.empty()) {
        header << " stages=";
        for (int s : spec.grc_stages) header << s << (s == *spec.grc_stages.rbegin() ? "" : "+");
        header << " g=" << spec.g_h << "x" << spec.g_w << " position=" << spec.grc_layer_position;
    }
    log << header.str() << '\n';
    std::ofstream(fs::path(out_dir) / "run_header.txt") << header.str() << '\n';
    std::ofstream(fs::path(out_dir) / "config.json") << to_json(cfg) << '\n';

    const Datasets data = prepare_data(cfg.data);
    std::ofstream csv(fs::path(out_dir) / "metrics.csv");
    if (!csv) throw std::runtime_error("cannot write metrics.csv in " + out_dir);
    csv << kMetricsHeader << '\n';
    log << kMetricsHeader << '\n';
    TrainOptions options;
    options.eval_every = cfg.eval_every;
    options.augment = cfg.data.augment;
    options.on_row = [&](const MetricsRow& row) {
        csv << to_csv(row) << '\n';
        if (row.val_miou || row.iter % 10 == 0) log << to_csv(row) << std::endl;
    };
    summary.train = train_network(net, data.train, data.val, cfg.train, options);
    save_checkpoint(net, (fs::path(out_dir) / "model.ckpt").string());
    summary.eval = evaluate_network(net, data.val);
    log << format_report(summary.eval);
    return summary;
}

EvalReport run_eval(const ExperimentConfig& cfg, const std::string& ckpt_path, std::ostream& log) {
    validate(cfg);
    Network net = build_network(cfg.network_spec(), cfg.train.seed);
    load_checkpoint(net, ckpt_path);
    const Datasets data = prepare_data(cfg.data);
    EvalReport report = evaluate_network(net, data.val);
    log << format_report(report);
    return report;
}

const BenchRow& BenchReport::row(const std::string& op) const {
    for (const BenchRow& r : rows) {
        if (r.op == op) return r;
    }
    throw std::out_of_range("no bench row " + op);
}

namespace {

template <typename Fn>
BenchRow time_op(const std::string& name, int warmup, int reps, Fn&& fn) {
    for (int i = 0; i < warmup; ++i) fn();
    std::vector<double> ms;
    ms.reserve(reps);
    for (int i = 0; i < reps; ++i) {
        const auto t0 = std::chrono::steady_clock::now();
        fn();
        const auto t1 = std::chrono::steady_clock::now();
        ms.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
    }
    double mean = 0;
    for (double v : ms) mean += v;
    mean /= reps;
    double var = 0;
    for (double v : ms) var += (v - mean) * (v - mean);
    const double stddev = reps > 1 ? std::sqrt(var / (reps - 1)) : 0.0;
    return {name, reps, mean, stddev};
}

}  // namespace

BenchReport run_bench(const BenchConfig& cfg) {
    set_thread_count(cfg.threads);
    BenchReport report;
    report.input = {1, cfg.channels, cfg.height, cfg.width};
    report.out_channels = cfg.out_channels;
    report.kernel = cfg.kernel;
    report.g = cfg.g;

    const Tensor4 x = random_tensor(report.input, derive_key(cfg.seed, 1));
    FilterBank filters;
    filters.weights = random_tensor({cfg.out_channels, cfg.channels, cfg.kernel, cfg.kernel}, derive_key(cfg.seed, 2));
    const GrcConfig grc_cfg = make_grc_config(cfg.channels, cfg.g, cfg.g, ConvSpec::same(cfg.kernel));

    volatile Real sink = 0;
    report.rows.push_back(time_op("conv2d", cfg.warmup, cfg.repetitions,
                                  [&] { sink = conv2d(x, filters, grc_cfg.conv)[0]; }));
    report.rows.push_back(time_op("shift_features", cfg.warmup, cfg.repetitions,
                                  [&] { sink = shift_features(x, grc_cfg)[0]; }));
    report.rows.push_back(time_op("grc_fast", cfg.warmup, cfg.repetitions,
                                  [&] { sink = grc_forward_fast(x, filters, grc_cfg)[0]; }));
    report.rows.push_back(time_op("grc_reference", cfg.warmup, cfg.repetitions,
                                  [&] { sink = grc_forward_reference(x, filters, grc_cfg)[0]; }));
    (void)sink;
    grc_forward_fast(x, filters, grc_cfg, &report.shift_ops_per_forward);
    set_thread_count(0);
    return report;
}

std::string to_csv(const BenchReport& report) {
    std::ostringstream os;
    os << kBenchHeader << '\n';
    os << std::fixed << std::setprecision(4);
    for (const BenchRow& r : report.rows) {
        os << r.op << ',' << report.input.n << ',' << report.input.c << ',' << report.input.h << ','
           << report.input.w << ',' << report.out_channels << ',' << report.kernel << ',' << report.g << ','
           << r.repetitions << ',' << r.mean_ms << ',' << r.stddev_ms << '\n';
    }
    return os.str();
}

}  // namespace grc
