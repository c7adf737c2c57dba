#include "ssda/config.hpp"

#include "ssda/errors.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

namespace ssda {

namespace {

std::string trim(const std::string& s) {
    const auto begin = s.find_first_not_of(" \t");
    if (begin == std::string::npos) return "";
    const auto end = s.find_last_not_of(" \t");
    return s.substr(begin, end - begin + 1);
}

std::string unquote(const std::string& s) {
    if (s.size() >= 2 && ((s.front() == '"' && s.back() == '"') || (s.front() == '\'' && s.back() == '\''))) {
        return s.substr(1, s.size() - 2);
    }
    return s;
}

double to_double(const std::string& key, const std::string& value) {
    double v = 0.0;
    auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), v);
    if (ec != std::errc() || ptr != value.data() + value.size()) {
        throw ConfigError("config: key '" + key + "' expects a number, got '" + value + "'");
    }
    return v;
}

std::uint64_t to_u64(const std::string& key, const std::string& value) {
    std::uint64_t v = 0;
    auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), v);
    if (ec != std::errc() || ptr != value.data() + value.size()) {
        throw ConfigError("config: key '" + key + "' expects a nonnegative integer, got '" + value + "'");
    }
    return v;
}

bool to_bool(const std::string& key, const std::string& value) {
    if (value == "true" || value == "1") return true;
    if (value == "false" || value == "0") return false;
    throw ConfigError("config: key '" + key + "' expects true/false, got '" + value + "'");
}

Vec to_vec(const std::string& key, const std::string& value) {
    Vec out;
    std::stringstream ss(value);
    std::string item;
    while (std::getline(ss, item, ',')) {
        item = trim(item);
        if (item.empty()) continue;
        out.push_back(to_double(key, item));
    }
    return out;
}

std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

std::string format_vec(const Vec& v) {
    std::string out;
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (i > 0) out += ",";
        out += format_double(v[i]);
    }
    return out;
}

using Setter = std::function<void(RunConfig&, const std::string&, const std::string&)>;
using Getter = std::function<std::string(const RunConfig&)>;

struct KeySpec {
    Setter set;
    Getter get;
};

const std::map<std::string, KeySpec>& key_table() {
    static const std::map<std::string, KeySpec> table = [] {
        std::map<std::string, KeySpec> t;
        auto num = [&t](const std::string& key, auto member) {
            t[key] = {[member, key](RunConfig& c, const std::string&, const std::string& v) {
                          c.*member = to_double(key, v);
                      },
                      [member](const RunConfig& c) { return format_double(c.*member); }};
        };
        auto count = [&t](const std::string& key, auto member) {
            t[key] = {[member, key](RunConfig& c, const std::string&, const std::string& v) {
                          c.*member = static_cast<std::size_t>(to_u64(key, v));
                      },
                      [member](const RunConfig& c) { return std::to_string(c.*member); }};
        };
        auto flag = [&t](const std::string& key, auto member) {
            t[key] = {[member, key](RunConfig& c, const std::string&, const std::string& v) {
                          c.*member = to_bool(key, v);
                      },
                      [member](const RunConfig& c) { return (c.*member) ? "true" : "false"; }};
        };

        t["data.csv_path"] = {[](RunConfig& c, const std::string&, const std::string& v) { c.csv_path = unquote(v); },
                              [](const RunConfig& c) { return c.csv_path; }};
        t["out_dir"] = {[](RunConfig& c, const std::string&, const std::string& v) { c.out_dir = unquote(v); },
                        [](const RunConfig& c) { return c.out_dir; }};
        t["seed"] = {[](RunConfig& c, const std::string&, const std::string& v) { c.seed = to_u64("seed", v); },
                     [](const RunConfig& c) { return std::to_string(c.seed); }};

        t["scenario.class_count"] = {[](RunConfig& c, const std::string&, const std::string& v) {
                                         c.scenario.class_count = static_cast<std::size_t>(to_u64("scenario.class_count", v));
                                     },
                                     [](const RunConfig& c) { return std::to_string(c.scenario.class_count); }};
        t["scenario.input_dim"] = {[](RunConfig& c, const std::string&, const std::string& v) {
                                       c.scenario.input_dim = static_cast<std::size_t>(to_u64("scenario.input_dim", v));
                                   },
                                   [](const RunConfig& c) { return std::to_string(c.scenario.input_dim); }};
        t["scenario.class_radius"] = {[](RunConfig& c, const std::string&, const std::string& v) {
                                          c.scenario.class_radius = to_double("scenario.class_radius", v);
                                      },
                                      [](const RunConfig& c) { return format_double(c.scenario.class_radius); }};
        t["scenario.class_sigma"] = {[](RunConfig& c, const std::string&, const std::string& v) {
                                         c.scenario.class_sigma = to_double("scenario.class_sigma", v);
                                     },
                                     [](const RunConfig& c) { return format_double(c.scenario.class_sigma); }};
        t["scenario.rotation_degrees"] = {[](RunConfig& c, const std::string&, const std::string& v) {
                                              c.scenario.rotation_degrees = to_double("scenario.rotation_degrees", v);
                                          },
                                          [](const RunConfig& c) { return format_double(c.scenario.rotation_degrees); }};
        t["scenario.translation"] = {[](RunConfig& c, const std::string&, const std::string& v) {
                                         c.scenario.translation = to_vec("scenario.translation", unquote(v));
                                     },
                                     [](const RunConfig& c) { return format_vec(c.scenario.translation); }};
        t["scenario.scale"] = {[](RunConfig& c, const std::string&, const std::string& v) {
                                   c.scenario.scale = to_double("scenario.scale", v);
                               },
                               [](const RunConfig& c) { return format_double(c.scenario.scale); }};
        t["scenario.source_count"] = {[](RunConfig& c, const std::string&, const std::string& v) {
                                          c.scenario.source_count = static_cast<std::size_t>(to_u64("scenario.source_count", v));
                                      },
                                      [](const RunConfig& c) { return std::to_string(c.scenario.source_count); }};
        t["scenario.target_count"] = {[](RunConfig& c, const std::string&, const std::string& v) {
                                          c.scenario.target_count = static_cast<std::size_t>(to_u64("scenario.target_count", v));
                                      },
                                      [](const RunConfig& c) { return std::to_string(c.scenario.target_count); }};
        t["scenario.shots"] = {[](RunConfig& c, const std::string&, const std::string& v) {
                                   c.scenario.shots = static_cast<std::size_t>(to_u64("scenario.shots", v));
                               },
                               [](const RunConfig& c) { return std::to_string(c.scenario.shots); }};

        t["pseudo.tau1"] = {[](RunConfig& c, const std::string&, const std::string& v) { c.pseudo.tau1 = to_double("pseudo.tau1", v); },
                            [](const RunConfig& c) { return format_double(c.pseudo.tau1); }};
        t["pseudo.tau2"] = {[](RunConfig& c, const std::string&, const std::string& v) { c.pseudo.tau2 = to_double("pseudo.tau2", v); },
                            [](const RunConfig& c) { return format_double(c.pseudo.tau2); }};
        t["sim.t1"] = {[](RunConfig& c, const std::string&, const std::string& v) { c.sim.temperature_t1 = to_double("sim.t1", v); },
                       [](const RunConfig& c) { return format_double(c.sim.temperature_t1); }};
        t["sharpen.t2"] = {[](RunConfig& c, const std::string&, const std::string& v) { c.sharpen.temperature_t2 = to_double("sharpen.t2", v); },
                           [](const RunConfig& c) { return format_double(c.sharpen.temperature_t2); }};

        num("prototype.momentum", &RunConfig::prototype_momentum);
        flag("prototype.route_gradients", &RunConfig::route_prototype_gradients);

        t["inter.norm_axis"] = {[](RunConfig& c, const std::string&, const std::string& v) {
                                    const std::string axis = unquote(v);
                                    if (axis == "samples") {
                                        c.inter_norm_axis = SimilarityAxis::Samples;
                                    } else if (axis == "classes") {
                                        c.inter_norm_axis = SimilarityAxis::Classes;
                                    } else {
                                        throw ConfigError("config: inter.norm_axis expects "
                                                          "'samples' or 'classes'");
                                    }
                                },
                                [](const RunConfig& c) {
                                    return c.inter_norm_axis == SimilarityAxis::Samples
                                               ? "samples"
                                               : "classes";
                                }};

        num("ot.epsilon", &RunConfig::ot_epsilon);
        count("ot.max_iters", &RunConfig::ot_max_iters);
        num("ot.tolerance", &RunConfig::ot_tolerance);
        flag("ot.full_dataset", &RunConfig::ot_full_dataset);

        t["loss.lambda_intra"] = {[](RunConfig& c, const std::string&, const std::string& v) { c.weights.lambda_intra = to_double("loss.lambda_intra", v); },
                                  [](const RunConfig& c) { return format_double(c.weights.lambda_intra); }};
        t["loss.lambda_inter"] = {[](RunConfig& c, const std::string&, const std::string& v) { c.weights.lambda_inter = to_double("loss.lambda_inter", v); },
                                  [](const RunConfig& c) { return format_double(c.weights.lambda_inter); }};
        t["loss.lambda_batch"] = {[](RunConfig& c, const std::string&, const std::string& v) { c.weights.lambda_batch = to_double("loss.lambda_batch", v); },
                                  [](const RunConfig& c) { return format_double(c.weights.lambda_batch); }};

        t["augment.weak_sigma"] = {[](RunConfig& c, const std::string&, const std::string& v) { c.augment.weak_noise_sigma = to_double("augment.weak_sigma", v); },
                                   [](const RunConfig& c) { return format_double(c.augment.weak_noise_sigma); }};
        t["augment.strong_sigma"] = {[](RunConfig& c, const std::string&, const std::string& v) { c.augment.strong_noise_sigma = to_double("augment.strong_sigma", v); },
                                     [](const RunConfig& c) { return format_double(c.augment.strong_noise_sigma); }};
        t["augment.dropout"] = {[](RunConfig& c, const std::string&, const std::string& v) { c.augment.strong_dropout_prob = to_double("augment.dropout", v); },
                                [](const RunConfig& c) { return format_double(c.augment.strong_dropout_prob); }};

        t["mask.intra"] = {[](RunConfig& c, const std::string&, const std::string& v) { c.mask.intra = to_bool("mask.intra", v); },
                           [](const RunConfig& c) { return c.mask.intra ? "true" : "false"; }};
        t["mask.inter"] = {[](RunConfig& c, const std::string&, const std::string& v) { c.mask.inter = to_bool("mask.inter", v); },
                           [](const RunConfig& c) { return c.mask.inter ? "true" : "false"; }};
        t["mask.batch"] = {[](RunConfig& c, const std::string&, const std::string& v) { c.mask.batch = to_bool("mask.batch", v); },
                           [](const RunConfig& c) { return c.mask.batch ? "true" : "false"; }};
        t["mask.prototype_ema"] = {[](RunConfig& c, const std::string&, const std::string& v) { c.mask.prototype_ema = to_bool("mask.prototype_ema", v); },
                                   [](const RunConfig& c) { return c.mask.prototype_ema ? "true" : "false"; }};
        t["mask.prototype_branch"] = {[](RunConfig& c, const std::string&, const std::string& v) { c.mask.prototype_branch = to_bool("mask.prototype_branch", v); },
                                      [](const RunConfig& c) { return c.mask.prototype_branch ? "true" : "false"; }};
        t["mask.linear_branch"] = {[](RunConfig& c, const std::string&, const std::string& v) { c.mask.linear_branch = to_bool("mask.linear_branch", v); },
                                   [](const RunConfig& c) { return c.mask.linear_branch ? "true" : "false"; }};

        t["optim.learning_rate"] = {[](RunConfig& c, const std::string&, const std::string& v) { c.sgd.learning_rate = to_double("optim.learning_rate", v); },
                                    [](const RunConfig& c) { return format_double(c.sgd.learning_rate); }};
        t["optim.momentum"] = {[](RunConfig& c, const std::string&, const std::string& v) { c.sgd.momentum = to_double("optim.momentum", v); },
                               [](const RunConfig& c) { return format_double(c.sgd.momentum); }};
        t["optim.classifier_lr_scale"] = {[](RunConfig& c, const std::string&, const std::string& v) { c.sgd.classifier_lr_scale = to_double("optim.classifier_lr_scale", v); },
                                          [](const RunConfig& c) { return format_double(c.sgd.classifier_lr_scale); }};
        t["optim.lr_decay_gamma"] = {[](RunConfig& c, const std::string&, const std::string& v) { c.sgd.lr_decay_gamma = to_double("optim.lr_decay_gamma", v); },
                                     [](const RunConfig& c) { return format_double(c.sgd.lr_decay_gamma); }};
        t["optim.lr_decay_power"] = {[](RunConfig& c, const std::string&, const std::string& v) { c.sgd.lr_decay_power = to_double("optim.lr_decay_power", v); },
                                     [](const RunConfig& c) { return format_double(c.sgd.lr_decay_power); }};

        count("train.steps", &RunConfig::steps);
        count("train.warmup_steps", &RunConfig::warmup_steps);
        count("train.batch_source", &RunConfig::batch_source);
        count("train.batch_labeled", &RunConfig::batch_labeled);
        count("train.batch_unlabeled", &RunConfig::batch_unlabeled);
        count("train.metrics_every", &RunConfig::metrics_every);

        t["model.hidden_dim"] = {[](RunConfig& c, const std::string&, const std::string& v) {
                                     c.mlp.hidden_dim = static_cast<std::size_t>(to_u64("model.hidden_dim", v));
                                 },
                                 [](const RunConfig& c) { return std::to_string(c.mlp.hidden_dim); }};
        t["model.feature_dim"] = {[](RunConfig& c, const std::string&, const std::string& v) {
                                      c.mlp.feature_dim = static_cast<std::size_t>(to_u64("model.feature_dim", v));
                                  },
                                  [](const RunConfig& c) { return std::to_string(c.mlp.feature_dim); }};
        return t;
    }();
    return table;
}

} // namespace

void apply_override(RunConfig& cfg, const std::string& key, const std::string& value) {
    const auto& table = key_table();
    const auto it = table.find(key);
    if (it == table.end()) throw ConfigError("config: unknown key '" + key + "'");
    it->second.set(cfg, key, trim(value));
}

RunConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("load_config: cannot open " + path);
    RunConfig cfg;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.resize(hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw ConfigError(path + ":" + std::to_string(line_no) + ": expected 'key = value'");
        }
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        try {
            apply_override(cfg, key, value);
        } catch (const ConfigError& e) {
            throw ConfigError(path + ":" + std::to_string(line_no) + ": " + e.what());
        }
    }
    return cfg;
}

void validate(const RunConfig& cfg) {
    try {
        validate(cfg.pseudo);
        if (cfg.csv_path.empty()) validate(cfg.scenario);
        validate(cfg.weights);
        validate(cfg.augment);
    } catch (const std::invalid_argument& e) {
        throw ConfigError(e.what());
    }
    if (cfg.sim.temperature_t1 <= 0.0) throw ConfigError("config: sim.t1 must be > 0");
    if (cfg.sharpen.temperature_t2 <= 0.0) throw ConfigError("config: sharpen.t2 must be > 0");
    if (!(cfg.prototype_momentum > 0.0 && cfg.prototype_momentum < 1.0)) {
        throw ConfigError("config: prototype.momentum must lie in (0,1)");
    }
    if (cfg.ot_epsilon <= 0.0) throw ConfigError("config: ot.epsilon must be > 0");
    if (cfg.ot_tolerance <= 0.0) throw ConfigError("config: ot.tolerance must be > 0");
    if (cfg.ot_max_iters == 0) throw ConfigError("config: ot.max_iters must be >= 1");
    if (cfg.sgd.learning_rate <= 0.0) throw ConfigError("config: optim.learning_rate must be > 0");
    if (cfg.sgd.classifier_lr_scale <= 0.0) {
        throw ConfigError("config: optim.classifier_lr_scale must be > 0");
    }
    if (cfg.sgd.momentum < 0.0 || cfg.sgd.momentum >= 1.0) {
        throw ConfigError("config: optim.momentum must lie in [0,1)");
    }
    if (cfg.batch_source == 0 || cfg.batch_labeled == 0 || cfg.batch_unlabeled == 0) {
        throw ConfigError("config: batch sizes must be >= 1");
    }
    if (cfg.metrics_every == 0) throw ConfigError("config: train.metrics_every must be >= 1");
    if (cfg.mlp.hidden_dim == 0 || cfg.mlp.feature_dim == 0) {
        throw ConfigError("config: model dimensions must be >= 1");
    }
}

std::string serialize_config(const RunConfig& cfg) {
    std::string out;
    for (const auto& [key, spec] : key_table()) { // std::map iterates sorted
        out += key;
        out += " = ";
        out += spec.get(cfg);
        out += "\n";
    }
    return out;
}

std::string config_hash(const RunConfig& cfg) {
    const std::string canon = serialize_config(cfg);
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char ch : canon) {
        h ^= ch;
        h *= 0x100000001b3ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

} // namespace ssda
