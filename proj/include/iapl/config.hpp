#pragma once

#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "iapl/errors.hpp"
#include "iapl/model.hpp"
#include "iapl/train.hpp"
#include "iapl/tta.hpp"

namespace iapl {

// Flat "key = value" text config. '#' starts a comment; keys are namespaced
// (encoder.depth, tta.n_views, ...). Unknown keys are hard errors, surfaced
// when the consumer calls ConfigView::finish().
inline std::map<std::string, std::string> parse_config_text(const std::string& text) {
    std::map<std::string, std::string> out;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    auto trim = [](std::string s) {
        size_t a = s.find_first_not_of(" \t\r");
        size_t b = s.find_last_not_of(" \t\r");
        return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
    };
    while (std::getline(in, line)) {
        ++lineno;
        size_t hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        size_t eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError("config line " + std::to_string(lineno) + ": expected key = value");
        std::string key = trim(line.substr(0, eq));
        std::string value = trim(line.substr(eq + 1));
        if (key.empty()) throw ConfigError("config line " + std::to_string(lineno) + ": empty key");
        if (!out.emplace(key, value).second)
            throw ConfigError("config: duplicate key " + key);
    }
    return out;
}

inline std::map<std::string, std::string> load_config_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw ConfigError("cannot open config file " + path);
    std::stringstream ss;
    ss << f.rdbuf();
    return parse_config_text(ss.str());
}

class ConfigView {
public:
    ConfigView() = default;
    explicit ConfigView(std::map<std::string, std::string> kv) : kv_(std::move(kv)) {}

    bool has(const std::string& key) const { return kv_.count(key) > 0; }

    std::string get_string(const std::string& key, const std::string& dflt) {
        auto it = kv_.find(key);
        if (it == kv_.end()) return dflt;
        used_.insert(key);
        return it->second;
    }

    int get_int(const std::string& key, int dflt) {
        auto it = kv_.find(key);
        if (it == kv_.end()) return dflt;
        used_.insert(key);
        try {
            size_t pos = 0;
            int v = std::stoi(it->second, &pos);
            if (pos != it->second.size()) throw std::invalid_argument("trailing");
            return v;
        } catch (const std::exception&) {
            throw ConfigError("config: " + key + " wants an integer, got '" + it->second + "'");
        }
    }

    uint64_t get_u64(const std::string& key, uint64_t dflt) {
        auto it = kv_.find(key);
        if (it == kv_.end()) return dflt;
        used_.insert(key);
        try {
            size_t pos = 0;
            uint64_t v = std::stoull(it->second, &pos);
            if (pos != it->second.size()) throw std::invalid_argument("trailing");
            return v;
        } catch (const std::exception&) {
            throw ConfigError("config: " + key + " wants an unsigned integer, got '" + it->second +
                              "'");
        }
    }

    double get_double(const std::string& key, double dflt) {
        auto it = kv_.find(key);
        if (it == kv_.end()) return dflt;
        used_.insert(key);
        try {
            size_t pos = 0;
            double v = std::stod(it->second, &pos);
            if (pos != it->second.size()) throw std::invalid_argument("trailing");
            return v;
        } catch (const std::exception&) {
            throw ConfigError("config: " + key + " wants a number, got '" + it->second + "'");
        }
    }

    bool get_bool(const std::string& key, bool dflt) {
        auto it = kv_.find(key);
        if (it == kv_.end()) return dflt;
        used_.insert(key);
        const std::string& v = it->second;
        if (v == "on" || v == "true" || v == "1") return true;
        if (v == "off" || v == "false" || v == "0") return false;
        throw ConfigError("config: " + key + " wants on/off, got '" + v + "'");
    }

    std::vector<int> get_int_list(const std::string& key, std::vector<int> dflt) {
        auto it = kv_.find(key);
        if (it == kv_.end()) return dflt;
        used_.insert(key);
        std::vector<int> out;
        std::stringstream ss(it->second);
        std::string tok;
        while (std::getline(ss, tok, ',')) {
            try {
                out.push_back(std::stoi(tok));
            } catch (const std::exception&) {
                throw ConfigError("config: " + key + " wants a comma list of integers");
            }
        }
        return out;
    }

    // Every key must have been consumed by now.
    void finish() const {
        for (const auto& [k, v] : kv_)
            if (!used_.count(k)) throw ConfigError("config: unknown key " + k);
    }

    const std::map<std::string, std::string>& raw() const { return kv_; }

private:
    std::map<std::string, std::string> kv_;
    std::set<std::string> used_;
};

struct ExperimentSetup {
    EncoderConfig enc;
    CilConfig cil;
    ModelFlags flags;
    TrainConfig train;
    TtaConfig tta;
};

inline EntropyKind entropy_kind_from_string(const std::string& s) {
    if (s == "averaged") return EntropyKind::Averaged;
    if (s == "pointwise") return EntropyKind::Pointwise;
    throw ConfigError("config: loss must be averaged|pointwise, got '" + s + "'");
}

inline ExperimentSetup setup_from_config(ConfigView& cfg) {
    ExperimentSetup s;
    s.enc.depth = cfg.get_int("encoder.depth", s.enc.depth);
    s.enc.dim = cfg.get_int("encoder.dim", s.enc.dim);
    s.enc.heads = cfg.get_int("encoder.heads", s.enc.heads);
    s.enc.patch = cfg.get_int("encoder.patch", s.enc.patch);
    s.enc.view_size = cfg.get_int("encoder.view_size", s.enc.view_size);
    s.enc.adapter_dim = cfg.get_int("encoder.adapter_dim", s.enc.adapter_dim);
    s.enc.adapter_scale = cfg.get_double("encoder.adapter_scale", s.enc.adapter_scale);
    s.enc.adapter_blocks = cfg.get_int("encoder.adapter_blocks", s.enc.adapter_blocks);
    s.enc.token_blocks = cfg.get_int("encoder.token_blocks", s.enc.token_blocks);
    s.enc.tokens_per_block = cfg.get_int("encoder.tokens_per_block", s.enc.tokens_per_block);
    s.enc.dropout_p = cfg.get_double("encoder.dropout", s.enc.dropout_p);
    s.enc.adapter_range = cfg.get_int_list("encoder.adapter_range", s.enc.adapter_range);

    s.cil.cond_patch = cfg.get_int("cil.cond_patch", s.cil.cond_patch);
    s.cil.channels = cfg.get_int_list("cil.channels", s.cil.channels);

    s.flags.adapters = cfg.get_bool("ablation.adapters", s.flags.adapters);
    s.flags.tokens = cfg.get_bool("ablation.tokens", s.flags.tokens);
    s.flags.prompts = cfg.get_bool("ablation.prompts", s.flags.prompts);

    s.train.lr = cfg.get_double("train.lr", s.train.lr);
    s.train.batch = cfg.get_int("train.batch", s.train.batch);
    s.train.epochs = cfg.get_int("train.epochs", s.train.epochs);
    s.train.beta1 = cfg.get_double("train.beta1", s.train.beta1);
    s.train.beta2 = cfg.get_double("train.beta2", s.train.beta2);
    s.train.eps = cfg.get_double("train.eps", s.train.eps);
    s.train.lambda_aux = cfg.get_double("train.lambda_aux", s.train.lambda_aux);
    s.train.seed = cfg.get_u64("train.seed", s.train.seed);
    s.train.freeze_backbone = cfg.get_bool("train.freeze_backbone", s.train.freeze_backbone);

    s.tta.n_views = cfg.get_int("tta.n_views", s.tta.n_views);
    s.tta.m = cfg.get_int("tta.m", s.tta.m);
    s.tta.steps = cfg.get_int("tta.steps", s.tta.steps);
    s.tta.lr = cfg.get_double("tta.lr", s.tta.lr);
    s.tta.loss_kind = entropy_kind_from_string(
        cfg.get_string("tta.loss", s.tta.loss_kind == EntropyKind::Averaged ? "averaged"
                                                                            : "pointwise"));
    s.tta.enabled = cfg.get_bool("tta.enabled", s.tta.enabled);
    s.tta.ovs = cfg.get_bool("tta.ovs", s.tta.ovs);
    s.tta.conf_sel = cfg.get_bool("tta.conf_sel", s.tta.conf_sel);

    try {
        s.enc.validate();
        s.cil.validate(s.enc);
        s.train.validate();
        s.tta.validate();
    } catch (const ArgumentError& e) {
        throw ConfigError(std::string("config: ") + e.what());
    }
    return s;
}

}  // namespace iapl
