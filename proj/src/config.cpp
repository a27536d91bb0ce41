#include "grc/config.hpp"

#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "json.hpp"

namespace grc {

using json = nlohmann::json;

NetworkSpec ExperimentConfig::network_spec() const {
    NetworkSpec spec = network;
    if (!grc_enabled) spec.grc_stages.clear();
    return spec;
}

namespace {

struct Field {
    std::function<json(const ExperimentConfig&)> get;
    std::function<void(ExperimentConfig&, const json&)> set;
    bool is_string = false;
};

template <typename T>
T as(const json& v, const std::string& key) {
    try {
        if constexpr (std::is_same_v<T, bool>) {
            if (!v.is_boolean()) throw ConfigError("expected boolean");
        } else if constexpr (std::is_integral_v<T>) {
            if (!v.is_number_integer()) throw ConfigError("expected integer");
        } else if constexpr (std::is_floating_point_v<T>) {
            if (!v.is_number()) throw ConfigError("expected number");
        } else if constexpr (std::is_same_v<T, std::string>) {
            if (!v.is_string()) throw ConfigError("expected string");
        }
        return v.get<T>();
    } catch (const ConfigError& e) {
        throw ConfigError("field '" + key + "': " + e.what() + ", got " + v.dump());
    } catch (const json::exception& e) {
        throw ConfigError("field '" + key + "': " + e.what());
    }
}

std::vector<int> int_list(const json& v, const std::string& key) {
    if (!v.is_array()) throw ConfigError("field '" + key + "': expected array of integers, got " + v.dump());
    std::vector<int> out;
    for (const json& e : v) out.push_back(as<int>(e, key));
    return out;
}

// Per-stage arrays must all have one entry per stage.
void set_stage_column(ExperimentConfig& cfg, const json& v, const std::string& key, int StageSpec::*member) {
    const std::vector<int> values = int_list(v, key);
    if (values.empty()) throw ConfigError("field '" + key + "': needs at least one stage");
    cfg.network.stages.resize(values.size());
    for (std::size_t i = 0; i < values.size(); ++i) cfg.network.stages[i].*member = values[i];
}

json stage_column(const ExperimentConfig& cfg, int StageSpec::*member) {
    json arr = json::array();
    for (const StageSpec& s : cfg.network.stages) arr.push_back(s.*member);
    return arr;
}

template <typename T, typename Owner>
Field scalar(T Owner::*member, Owner ExperimentConfig::*section, const std::string& key) {
    return Field{[=](const ExperimentConfig& c) { return json((c.*section).*member); },
                 [=](ExperimentConfig& c, const json& v) { (c.*section).*member = as<T>(v, key); },
                 std::is_same_v<T, std::string>};
}

const std::map<std::string, Field>& fields() {
    static const std::map<std::string, Field> table = [] {
        std::map<std::string, Field> f;
        using EC = ExperimentConfig;
        f["network.in_channels"] = scalar(&NetworkSpec::in_channels, &EC::network, "network.in_channels");
        f["network.stem_width"] = scalar(&NetworkSpec::stem_width, &EC::network, "network.stem_width");
        f["network.kernel"] = scalar(&NetworkSpec::kernel, &EC::network, "network.kernel");
        f["network.bottleneck_ratio"] =
            scalar(&NetworkSpec::bottleneck_ratio, &EC::network, "network.bottleneck_ratio");
        f["network.num_classes"] = scalar(&NetworkSpec::num_classes, &EC::network, "network.num_classes");
        const std::pair<const char*, int StageSpec::*> columns[] = {{"network.blocks", &StageSpec::blocks},
                                                                    {"network.widths", &StageSpec::width},
                                                                    {"network.strides", &StageSpec::stride},
                                                                    {"network.dilations", &StageSpec::dilation}};
        for (const auto& [key, member] : columns) {
            const std::string k = key;
            const auto m = member;
            f[k] = Field{[m](const EC& c) { return stage_column(c, m); },
                         [k, m](EC& c, const json& v) { set_stage_column(c, v, k, m); }};
        }
        f["network.head_stages"] = Field{[](const EC& c) { return json(c.network.head_stages); },
                                         [](EC& c, const json& v) {
                                             c.network.head_stages = int_list(v, "network.head_stages");
                                         }};
        f["grc.enabled"] = Field{[](const EC& c) { return json(c.grc_enabled); },
                                 [](EC& c, const json& v) { c.grc_enabled = as<bool>(v, "grc.enabled"); }};
        f["grc.g_h"] = scalar(&NetworkSpec::g_h, &EC::network, "grc.g_h");
        f["grc.g_w"] = scalar(&NetworkSpec::g_w, &EC::network, "grc.g_w");
        f["grc.layer_position"] =
            scalar(&NetworkSpec::grc_layer_position, &EC::network, "grc.layer_position");
        f["grc.stages"] = Field{[](const EC& c) {
                                    return json(std::vector<int>(c.network.grc_stages.begin(),
                                                                 c.network.grc_stages.end()));
                                },
                                [](EC& c, const json& v) {
                                    const auto list = int_list(v, "grc.stages");
                                    c.network.grc_stages = std::set<int>(list.begin(), list.end());
                                }};
        f["train.base_lr"] = scalar(&TrainConfig::base_lr, &EC::train, "train.base_lr");
        f["train.momentum"] = scalar(&TrainConfig::momentum, &EC::train, "train.momentum");
        f["train.weight_decay"] = scalar(&TrainConfig::weight_decay, &EC::train, "train.weight_decay");
        f["train.power"] = scalar(&TrainConfig::power, &EC::train, "train.power");
        f["train.total_iters"] = scalar(&TrainConfig::total_iters, &EC::train, "train.total_iters");
        f["train.batch_size"] = scalar(&TrainConfig::batch_size, &EC::train, "train.batch_size");
        f["train.crop_h"] = scalar(&TrainConfig::crop_h, &EC::train, "train.crop_h");
        f["train.crop_w"] = scalar(&TrainConfig::crop_w, &EC::train, "train.crop_w");
        f["train.seed"] = scalar(&TrainConfig::seed, &EC::train, "train.seed");
        f["train.eval_every"] = Field{[](const EC& c) { return json(c.eval_every); },
                                      [](EC& c, const json& v) { c.eval_every = as<int>(v, "train.eval_every"); }};
        f["data.seed"] = scalar(&DataConfig::seed, &EC::data, "data.seed");
        f["data.train_samples"] = scalar(&DataConfig::train_samples, &EC::data, "data.train_samples");
        f["data.val_samples"] = scalar(&DataConfig::val_samples, &EC::data, "data.val_samples");
        f["data.height"] = scalar(&DataConfig::height, &EC::data, "data.height");
        f["data.width"] = scalar(&DataConfig::width, &EC::data, "data.width");
        f["data.augment"] = scalar(&DataConfig::augment, &EC::data, "data.augment");
        f["data.dir"] = scalar(&DataConfig::dir, &EC::data, "data.dir");
        f["bench.channels"] = scalar(&BenchConfig::channels, &EC::bench, "bench.channels");
        f["bench.out_channels"] = scalar(&BenchConfig::out_channels, &EC::bench, "bench.out_channels");
        f["bench.height"] = scalar(&BenchConfig::height, &EC::bench, "bench.height");
        f["bench.width"] = scalar(&BenchConfig::width, &EC::bench, "bench.width");
        f["bench.kernel"] = scalar(&BenchConfig::kernel, &EC::bench, "bench.kernel");
        f["bench.g"] = scalar(&BenchConfig::g, &EC::bench, "bench.g");
        f["bench.repetitions"] = scalar(&BenchConfig::repetitions, &EC::bench, "bench.repetitions");
        f["bench.warmup"] = scalar(&BenchConfig::warmup, &EC::bench, "bench.warmup");
        f["bench.threads"] = scalar(&BenchConfig::threads, &EC::bench, "bench.threads");
        f["bench.seed"] = scalar(&BenchConfig::seed, &EC::bench, "bench.seed");
        return f;
    }();
    return table;
}

const Field& field(const std::string& key) {
    const auto it = fields().find(key);
    if (it == fields().end()) throw ConfigError("unknown config key '" + key + "'");
    return it->second;
}

}  // namespace

std::vector<std::string> config_keys() {
    std::vector<std::string> keys;
    for (const auto& [k, f] : fields()) keys.push_back(k);
    return keys;
}

void validate(const ExperimentConfig& cfg) {
    try {
        validate(cfg.network_spec());
        validate(cfg.train);
    } catch (const std::invalid_argument& e) {
        throw ConfigError(e.what());
    }
    if (cfg.eval_every < 0) throw ConfigError("field 'train.eval_every': must be >= 0");
    if (cfg.data.train_samples < 1 || cfg.data.val_samples < 1) {
        throw ConfigError("field 'data.train_samples'/'data.val_samples': must be >= 1");
    }
    if (cfg.data.height < 32 || cfg.data.width < 32) {
        throw ConfigError("field 'data.height'/'data.width': context dataset needs >= 32");
    }
    const int factor = cfg.network.downsampling();
    if (cfg.train.crop_h % factor != 0 || cfg.train.crop_w % factor != 0) {
        throw ConfigError("field 'train.crop_h'/'train.crop_w': must be divisible by the downsampling factor " +
                          std::to_string(factor));
    }
    if (cfg.data.height % factor != 0 || cfg.data.width % factor != 0) {
        throw ConfigError("field 'data.height'/'data.width': must be divisible by the downsampling factor " +
                          std::to_string(factor));
    }
    if (cfg.bench.repetitions < 1 || cfg.bench.warmup < 0 || cfg.bench.threads < 0) {
        throw ConfigError("field 'bench.*': repetitions >= 1, warmup >= 0, threads >= 0 required");
    }
}

ExperimentConfig parse_config(const std::string& json_text) {
    json doc;
    try {
        doc = json::parse(json_text);
    } catch (const json::parse_error& e) {
        throw ConfigError(std::string("config is not valid JSON: ") + e.what());
    }
    if (!doc.is_object()) throw ConfigError("config must be a JSON object of dotted keys");
    ExperimentConfig cfg;
    std::size_t stage_count = 0;
    std::string stage_key;
    for (const char* key : {"network.blocks", "network.widths", "network.strides", "network.dilations"}) {
        if (!doc.contains(key) || !doc[key].is_array()) continue;
        if (stage_count != 0 && doc[key].size() != stage_count) {
            throw ConfigError("field '" + std::string(key) + "': has " + std::to_string(doc[key].size()) +
                              " stages but '" + stage_key + "' has " + std::to_string(stage_count));
        }
        stage_count = doc[key].size();
        stage_key = key;
    }
    for (const auto& [key, value] : doc.items()) field(key).set(cfg, value);
    validate(cfg);
    return cfg;
}

ExperimentConfig load_config(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw ConfigError("cannot read config file " + path);
    std::stringstream buf;
    buf << is.rdbuf();
    return parse_config(buf.str());
}

void apply_override(ExperimentConfig& cfg, const std::string& key, const std::string& value) {
    const Field& f = field(key);
    json v;
    if (f.is_string) {
        v = value;
    } else {
        try {
            v = json::parse(value);
        } catch (const json::parse_error&) {
            throw ConfigError("field '" + key + "': cannot parse value '" + value + "'");
        }
    }
    f.set(cfg, v);
}

std::string to_json(const ExperimentConfig& cfg) {
    json doc = json::object();
    for (const auto& [key, f] : fields()) doc[key] = f.get(cfg);
    return doc.dump(2);
}

}  // namespace grc
