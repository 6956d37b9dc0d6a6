#pragma once

// Run configuration: a small TOML-like key/value format with a
// [reservoirs] table of per-member rows. Parsing is total: every invalid
// or unknown key is collected and reported at once.

#include "resformer/fusion.hpp"
#include "resformer/model.hpp"
#include "resformer/reservoir.hpp"
#include "resformer/training.hpp"

#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace resformer {

struct ConfigError : std::runtime_error {
    std::vector<std::string> issues;
    explicit ConfigError(std::vector<std::string> list)
        : std::runtime_error(join(list)), issues(std::move(list)) {}

  private:
    static std::string join(const std::vector<std::string>& v) {
        std::string s = "configuration errors:";
        for (const auto& e : v) s += "\n  - " + e;
        return s;
    }
};

struct RunConfig {
    std::uint64_t seed = 42;
    std::string profile = "desk_scale";  // or "paper_defaults"
    std::string combine = "cross_attention";
    std::string data_path;
    std::string val_data_path;
    std::string out_dir = "out";

    // model
    int d = 128;
    int n_layers = 2;
    int n_heads = 4;
    int d_ff = 0;   // 0 -> 4*d at desk scale, 768 in paper profile
    int d_k = 0;    // 0 -> d
    int j_max = 64;
    int readout_dim = 64;
    int history_k = 2;
    double dropout = 0.1;

    // train
    TrainConfig train;
    int min_count = 1;

    // reservoirs
    std::vector<ReservoirConfig> reservoirs;  // empty -> per-profile defaults
    double input_scaling = 0.1;
    std::string readout_activation = "relu";

    bool paper_profile() const { return profile == "paper_defaults"; }

    ModelConfig model_config(int vocab_size, int n_classes) const {
        ModelConfig mc;
        mc.d = d;
        mc.n_layers = n_layers;
        mc.n_heads = n_heads;
        mc.d_ff = d_ff > 0 ? d_ff : (paper_profile() ? 768 : 4 * d);
        mc.d_k = d_k > 0 ? d_k : d;
        mc.vocab_size = vocab_size;
        mc.j_max = j_max;
        mc.n_classes = n_classes;
        mc.readout_dim = readout_dim;
        mc.history_window = history_k;
        mc.dropout = dropout;
        mc.combine = combination_from_string(combine);
        return mc;
    }

    std::vector<ReservoirConfig> reservoir_configs() const {
        std::vector<ReservoirConfig> rcs =
            reservoirs.empty()
                ? default_group_configs(!paper_profile(), d, readout_dim, seed)
                : reservoirs;
        for (auto& rc : rcs) {
            rc.input_dim = d;
            rc.readout_dim = readout_dim;
            rc.input_scaling = input_scaling;
            rc.readout_activation = activation_from_string(readout_activation);
        }
        return rcs;
    }
};

namespace detail_config {

inline std::string trim(const std::string& s) {
    std::size_t a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    std::size_t b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

struct Value {
    std::string raw;
    long line;
};

}  // namespace detail_config

inline RunConfig parse_run_config(std::istream& in, const std::string& origin = "<config>") {
    RunConfig cfg;
    std::vector<std::string> errors;
    std::string section;
    std::string line;
    long line_no = 0;

    auto err = [&](long ln, const std::string& msg) {
        errors.push_back(origin + ":" + std::to_string(ln) + ": " + msg);
    };
    auto parse_double = [&](const std::string& raw, long ln, double& out) {
        try {
            std::size_t pos;
            out = std::stod(raw, &pos);
            if (pos != raw.size()) throw std::invalid_argument("trailing");
            return true;
        } catch (...) {
            err(ln, "expected a number, got '" + raw + "'");
            return false;
        }
    };
    auto parse_int = [&](const std::string& raw, long ln, long long& out) {
        try {
            std::size_t pos;
            out = std::stoll(raw, &pos);
            if (pos != raw.size()) throw std::invalid_argument("trailing");
            return true;
        } catch (...) {
            err(ln, "expected an integer, got '" + raw + "'");
            return false;
        }
    };
    auto parse_string = [&](const std::string& raw, long ln, std::string& out) {
        if (raw.size() >= 2 && raw.front() == '"' && raw.back() == '"') {
            out = raw.substr(1, raw.size() - 2);
            return true;
        }
        err(ln, "expected a quoted string, got '" + raw + "'");
        return false;
    };

    while (std::getline(in, line)) {
        ++line_no;
        std::size_t hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = detail_config::trim(line);
        if (line.empty()) continue;
        if (line.front() == '[') {
            if (line.back() != ']') {
                err(line_no, "unterminated section header");
                continue;
            }
            section = detail_config::trim(line.substr(1, line.size() - 2));
            if (section != "model" && section != "train" && section != "reservoirs")
                err(line_no, "unknown section [" + section + "]");
            continue;
        }
        std::size_t eq = line.find('=');
        if (eq == std::string::npos) {
            err(line_no, "expected key = value");
            continue;
        }
        std::string key = detail_config::trim(line.substr(0, eq));
        std::string raw = detail_config::trim(line.substr(eq + 1));
        long long iv;
        double dv;
        std::string sv;

        if (section.empty()) {
            if (key == "seed") {
                if (parse_int(raw, line_no, iv)) cfg.train.seed = cfg.seed = static_cast<std::uint64_t>(iv);
            } else if (key == "profile") {
                if (parse_string(raw, line_no, sv)) {
                    if (sv != "desk_scale" && sv != "paper_defaults")
                        err(line_no, "profile must be desk_scale or paper_defaults");
                    else
                        cfg.profile = sv;
                }
            } else if (key == "combine") {
                if (parse_string(raw, line_no, sv)) {
                    try {
                        combination_from_string(sv);
                        cfg.combine = sv;
                    } catch (const std::exception& e) {
                        err(line_no, e.what());
                    }
                }
            } else if (key == "data") {
                if (parse_string(raw, line_no, sv)) cfg.data_path = sv;
            } else if (key == "val_data") {
                if (parse_string(raw, line_no, sv)) cfg.val_data_path = sv;
            } else if (key == "out_dir") {
                if (parse_string(raw, line_no, sv)) cfg.out_dir = sv;
            } else {
                err(line_no, "unknown key '" + key + "'");
            }
        } else if (section == "model") {
            auto set_int = [&](int& slot) {
                if (parse_int(raw, line_no, iv)) slot = static_cast<int>(iv);
            };
            if (key == "d") set_int(cfg.d);
            else if (key == "n_layers") set_int(cfg.n_layers);
            else if (key == "n_heads") set_int(cfg.n_heads);
            else if (key == "d_ff") set_int(cfg.d_ff);
            else if (key == "d_k") set_int(cfg.d_k);
            else if (key == "j_max") set_int(cfg.j_max);
            else if (key == "readout_dim") set_int(cfg.readout_dim);
            else if (key == "history_k") set_int(cfg.history_k);
            else if (key == "dropout") {
                if (parse_double(raw, line_no, dv)) cfg.dropout = dv;
            } else err(line_no, "unknown key 'model." + key + "'");
        } else if (section == "train") {
            if (key == "learning_rate") {
                if (parse_double(raw, line_no, dv)) cfg.train.learning_rate = dv;
            } else if (key == "weight_decay") {
                if (parse_double(raw, line_no, dv)) cfg.train.weight_decay = dv;
            } else if (key == "batch_size") {
                if (parse_int(raw, line_no, iv)) cfg.train.batch_size = static_cast<int>(iv);
            } else if (key == "epochs") {
                if (parse_int(raw, line_no, iv)) cfg.train.epochs = static_cast<int>(iv);
            } else if (key == "clip_norm") {
                if (parse_double(raw, line_no, dv)) cfg.train.clip_norm = dv;
            } else if (key == "eval_every") {
                if (parse_int(raw, line_no, iv)) cfg.train.eval_every = static_cast<int>(iv);
            } else if (key == "threads") {
                if (parse_int(raw, line_no, iv)) cfg.train.n_threads = static_cast<int>(iv);
            } else if (key == "min_count") {
                if (parse_int(raw, line_no, iv)) cfg.min_count = static_cast<int>(iv);
            } else err(line_no, "unknown key 'train." + key + "'");
        } else if (section == "reservoirs") {
            if (key == "member") {
                // member = [size, spectral_radius, leaky_alpha, sparsity]
                std::string body = raw;
                if (body.size() < 2 || body.front() != '[' || body.back() != ']') {
                    err(line_no, "member row must be [size, rho, alpha, sparsity]");
                    continue;
                }
                body = body.substr(1, body.size() - 2);
                std::vector<double> vals;
                std::stringstream ss(body);
                std::string item;
                bool ok = true;
                while (std::getline(ss, item, ',')) {
                    double x;
                    if (!parse_double(detail_config::trim(item), line_no, x)) {
                        ok = false;
                        break;
                    }
                    vals.push_back(x);
                }
                if (!ok) continue;
                if (vals.size() != 4) {
                    err(line_no, "member row needs exactly 4 values");
                    continue;
                }
                ReservoirConfig rc;
                rc.size = static_cast<int>(vals[0]);
                rc.spectral_radius = vals[1];
                rc.leaky_alpha = vals[2];
                rc.sparsity = vals[3];
                rc.seed = cfg.seed + 101 * (cfg.reservoirs.size() + 1);
                cfg.reservoirs.push_back(rc);
            } else if (key == "input_scaling") {
                if (parse_double(raw, line_no, dv)) cfg.input_scaling = dv;
            } else if (key == "readout_activation") {
                if (parse_string(raw, line_no, sv)) {
                    try {
                        activation_from_string(sv);
                        cfg.readout_activation = sv;
                    } catch (const std::exception& e) {
                        err(line_no, e.what());
                    }
                }
            } else err(line_no, "unknown key 'reservoirs." + key + "'");
        }
    }
    if (!errors.empty()) throw ConfigError(std::move(errors));
    return cfg;
}

inline RunConfig load_run_config(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw ConfigError({"cannot open config file: " + path});
    return parse_run_config(f, path);
}

}  // namespace resformer
