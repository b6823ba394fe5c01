#pragma once

#include <json.hpp>

#include <chrono>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "iapl/checkpoint.hpp"
#include "iapl/config.hpp"
#include "iapl/data.hpp"
#include "iapl/metrics.hpp"
#include "iapl/threadpool.hpp"
#include "iapl/train.hpp"
#include "iapl/tta.hpp"

namespace iapl {

struct ExperimentConfig {
    ExperimentSetup setup;
    DatasetSpec train_data;
    DatasetSpec test_data;
    uint64_t eval_seed = 0;
    std::optional<std::string> checkpoint;  // evaluate this instead of training
};

// Per-sample evaluation: episodes are independent, each one seeded from
// (eval_seed, index), so results do not depend on evaluation order or the
// worker count.
template <typename T>
std::vector<Prediction> evaluate_model(const ModelParams<T>& params,
                                       const std::vector<Sample>& samples, const TtaConfig& tta,
                                       uint64_t eval_seed) {
    std::vector<Prediction> preds(samples.size());
    Rng base(eval_seed);
    parallel_for(static_cast<int>(samples.size()), [&](int i) {
        Rng rng = base.fork("eval").fork(static_cast<uint64_t>(i));
        preds[i] = predict_image(params, samples[i].image, tta, rng);
    });
    return preds;
}

template <typename T>
MetricsReport report_from_predictions(const std::vector<Prediction>& preds,
                                      const std::vector<Sample>& samples, uint64_t seed) {
    std::vector<double> probs;
    std::vector<int> labels;
    std::vector<Family> fams;
    for (size_t i = 0; i < samples.size(); ++i) {
        probs.push_back(preds[i].prob);
        labels.push_back(samples[i].label);
        fams.push_back(samples[i].family);
    }
    MetricsReport r = compute_metrics(probs, labels, fams);
    r.seed = seed;
    return r;
}

template <typename T>
struct ExperimentResult {
    MetricsReport report;
    ModelParams<T> params;
    std::vector<Prediction> predictions;
};

template <typename T>
ExperimentResult<T> run_experiment_full(const ExperimentConfig& cfg) {
    auto t0 = std::chrono::steady_clock::now();
    ExperimentResult<T> res{{}, ModelParams<T>{}, {}};
    if (cfg.checkpoint) {
        res.params = load_checkpoint<T>(*cfg.checkpoint);
    } else {
        std::vector<Sample> train_set = build_dataset(cfg.train_data);
        res.params = init_params<T>(cfg.setup.enc, cfg.setup.cil, cfg.setup.flags,
                                    cfg.setup.train.seed);
        train(train_set, res.params, cfg.setup.train);
    }
    std::vector<Sample> test_set = build_dataset(cfg.test_data);
    res.predictions = evaluate_model(res.params, test_set, cfg.setup.tta, cfg.eval_seed);
    res.report = report_from_predictions<T>(res.predictions, test_set, cfg.eval_seed);

    auto echo = [&](const std::string& k, const std::string& v) { res.report.config_echo[k] = v; };
    echo("encoder.depth", std::to_string(cfg.setup.enc.depth));
    echo("encoder.dim", std::to_string(cfg.setup.enc.dim));
    echo("encoder.view_size", std::to_string(cfg.setup.enc.view_size));
    echo("ablation.adapters", cfg.setup.flags.adapters ? "on" : "off");
    echo("ablation.tokens", cfg.setup.flags.tokens ? "on" : "off");
    echo("ablation.prompts", cfg.setup.flags.prompts ? "on" : "off");
    echo("tta.enabled", cfg.setup.tta.enabled ? "on" : "off");
    echo("tta.ovs", cfg.setup.tta.ovs ? "on" : "off");
    echo("tta.conf_sel", cfg.setup.tta.conf_sel ? "on" : "off");
    echo("tta.n_views", std::to_string(cfg.setup.tta.n_views));
    echo("tta.m", std::to_string(cfg.setup.tta.m));
    echo("tta.steps", std::to_string(cfg.setup.tta.steps));
    echo("train.seed", std::to_string(cfg.setup.train.seed));

    res.report.wall_time_sec =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return res;
}

inline MetricsReport run_experiment(const ExperimentConfig& cfg) {
    return run_experiment_full<float>(cfg).report;
}

// ---- report emission ----

inline void emit_report_csv(const MetricsReport& r, std::ostream& out) {
    out << "family,acc,ap,count\n";
    for (const auto& [fam, m] : r.per_family)
        out << fam << "," << m.acc << "," << m.ap << "," << m.count << "\n";
    out << "overall," << r.acc << "," << r.ap << "," << r.n_samples << "\n";
    out << "macro," << r.macro_acc << "," << r.macro_ap << "," << r.n_samples << "\n";
}

inline nlohmann::json report_to_json(const MetricsReport& r) {
    nlohmann::json j;
    j["acc"] = r.acc;
    j["ap"] = r.ap;
    j["macro_acc"] = r.macro_acc;
    j["macro_ap"] = r.macro_ap;
    j["n_samples"] = r.n_samples;
    j["seed"] = r.seed;
    j["wall_time_sec"] = r.wall_time_sec;
    j["config"] = r.config_echo;
    nlohmann::json fams = nlohmann::json::object();
    for (const auto& [fam, m] : r.per_family)
        fams[fam] = {{"acc", m.acc}, {"ap", m.ap}, {"count", m.count}};
    j["per_family"] = fams;
    return j;
}

inline void emit_report_json(const MetricsReport& r, std::ostream& out) {
    out << report_to_json(r).dump(2) << "\n";
}

inline std::string xml_escape(const std::string& s) {
    std::string out;
    for (char c : s) {
        switch (c) {
            case '&': out += "&amp;"; break;
            case '<': out += "&lt;"; break;
            case '>': out += "&gt;"; break;
            case '"': out += "&quot;"; break;
            default: out += c;
        }
    }
    return out;
}

// Bar chart of per-family accuracy.
inline void emit_report_svg(const MetricsReport& r, std::ostream& out) {
    int n = static_cast<int>(r.per_family.size());
    int bar_w = 80, gap = 30, h = 260, base = 200, left = 50;
    int w = left + n * (bar_w + gap) + gap;
    out << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n";
    out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h
        << "\">\n";
    out << "  <rect x=\"0\" y=\"0\" width=\"" << w << "\" height=\"" << h
        << "\" fill=\"white\"/>\n";
    out << "  <line x1=\"" << left - 10 << "\" y1=\"" << base << "\" x2=\"" << w - 10 << "\" y2=\""
        << base << "\" stroke=\"black\"/>\n";
    int x = left;
    for (const auto& [fam, m] : r.per_family) {
        int bh = static_cast<int>(m.acc * 160.0);
        out << "  <rect x=\"" << x << "\" y=\"" << base - bh << "\" width=\"" << bar_w
            << "\" height=\"" << bh << "\" fill=\"#4878cf\"/>\n";
        out << "  <text x=\"" << x + bar_w / 2 << "\" y=\"" << base + 18
            << "\" text-anchor=\"middle\" font-size=\"13\">" << xml_escape(fam) << "</text>\n";
        char buf[32];
        std::snprintf(buf, sizeof(buf), "%.3f", m.acc);
        out << "  <text x=\"" << x + bar_w / 2 << "\" y=\"" << base - bh - 6
            << "\" text-anchor=\"middle\" font-size=\"12\">" << buf << "</text>\n";
        x += bar_w + gap;
    }
    out << "  <text x=\"" << left - 10 << "\" y=\"24\" font-size=\"14\">per-family accuracy (acc="
        << r.acc << ", ap=" << r.ap << ")</text>\n";
    out << "</svg>\n";
}

inline void emit_report(const MetricsReport& r, const std::string& path,
                        const std::string& format) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write report " + path);
    if (format == "csv")
        emit_report_csv(r, out);
    else if (format == "json")
        emit_report_json(r, out);
    else if (format == "svg")
        emit_report_svg(r, out);
    else
        throw ArgumentError("emit_report: format must be csv|json|svg");
    if (!out) throw IoError("short write to " + path);
}

}  // namespace iapl
