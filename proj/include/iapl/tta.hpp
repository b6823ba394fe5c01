#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <vector>

#include "iapl/conditioner.hpp"
#include "iapl/encoder.hpp"
#include "iapl/losses.hpp"
#include "iapl/optimizer.hpp"
#include "iapl/views.hpp"

namespace iapl {

enum class EntropyKind { Averaged, Pointwise };

struct TtaConfig {
    int n_views = 32;
    int m = 6;       // confident views kept for tuning
    int steps = 2;   // T
    double lr = 5e-3;
    EntropyKind loss_kind = EntropyKind::Averaged;
    bool enabled = true;
    bool ovs = true;
    bool conf_sel = true;

    void validate() const {
        if (n_views < 1) throw ArgumentError("tta: n_views must be >= 1");
        if (m < 1 || m > n_views) throw ArgumentError("tta: m must be in [1, n_views]");
        if (steps < 0) throw ArgumentError("tta: steps must be >= 0");
        if (lr <= 0) throw ArgumentError("tta: lr must be > 0");
    }
};

struct Prediction {
    double logit = 0.0;
    double prob = 0.5;
    double confidence = 0.0;  // S_c
    int view_index = 0;       // view that produced the final decision
    int label_hat = 0;        // [prob >= 0.5]
    double entropy_before = 0.0;
    double entropy_after = 0.0;
    bool tta_applied = false;
    bool tta_fallback = false;
};

// Indices of the m most confident logits, ordered by descending S_c; ties
// break toward the lower index.
inline std::vector<int> select_confident(const std::vector<double>& logits, int m) {
    if (m < 0 || static_cast<size_t>(m) > logits.size())
        throw ArgumentError("select_confident: m out of range");
    std::vector<int> idx(logits.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::vector<double> conf(logits.size());
    for (size_t i = 0; i < logits.size(); ++i) conf[i] = confidence(logits[i]);
    std::sort(idx.begin(), idx.end(), [&](int a, int b) {
        if (conf[a] != conf[b]) return conf[a] > conf[b];
        return a < b;
    });
    idx.resize(m);
    return idx;
}

inline double entropy_of(const std::vector<double>& logits, EntropyKind kind) {
    return kind == EntropyKind::Averaged ? averaged_entropy(logits) : pointwise_entropy(logits);
}

template <typename T>
int entropy_loss_g(Graph<T>& g, int logits_col, EntropyKind kind) {
    int probs = g.sigmoid(logits_col);
    if (kind == EntropyKind::Averaged) return g.binary_entropy(g.mean_all(probs));
    return g.mean_all(g.binary_entropy(probs));
}

// The prompt actually fed to the encoder: conditions gated into the adaptive
// tokens when the conditioner exists, the bare tokens otherwise.
template <typename T>
std::optional<Tensor<T>> prompt_for_view(const ModelParams<T>& p,
                                         const ConditionPair<T>* cond,
                                         const Tensor<T>& adaptive) {
    if (p.flags.prompts) {
        if (!cond) throw ArgumentError("prompt_for_view: missing conditions");
        return build_prompt(*cond, adaptive, p.gate_f, p.gate_i);
    }
    if (p.flags.has_prompt_rows()) return adaptive;
    return std::nullopt;
}

// Episodic tuning: copies the adaptive tokens and runs `steps` Adam updates
// of the entropy objective over the selected views, all other tensors
// untouched. Conditions are fixed inputs here; only the token rows move.
template <typename T>
Tensor<T> tune_tokens(const ModelParams<T>& params, const std::vector<const Image*>& views,
                      const std::vector<const ConditionPair<T>*>& conds, const TtaConfig& cfg) {
    if (!params.flags.has_prompt_rows())
        throw ArgumentError("tune_tokens: model has no adaptive tokens");
    if (views.empty()) throw ArgumentError("tune_tokens: no views selected");
    if (params.flags.prompts && conds.size() != views.size())
        throw ArgumentError("tune_tokens: conditions/views mismatch");
    Tensor<T> tuned = params.adaptive;
    if (cfg.steps <= 0) return tuned;

    int d = params.enc.dim;
    std::vector<Tensor<T>> gated;  // per view: alpha (.) C rows, zero without conditioner
    for (size_t k = 0; k < views.size(); ++k) {
        Tensor<T> gc({2, d});
        if (params.flags.prompts) {
            for (int j = 0; j < d; ++j) {
                gc(0, j) = params.gate_f.data[j] * conds[k]->forgery.data[j];
                gc(1, j) = params.gate_i.data[j] * conds[k]->image.data[j];
            }
        }
        gated.push_back(std::move(gc));
    }

    AdamState<T> st;
    AdamConfig acfg{cfg.lr, 0.9, 0.999, 1e-8};
    std::vector<Tensor<T>*> pvec{&tuned};
    std::vector<std::string> names{"adaptive_tokens"};

    for (int step = 0; step < cfg.steps; ++step) {
        Graph<T> g;
        ModelVars<T> v = make_vars(g, params, GradMode::AdaptiveOnly, false, &tuned);
        std::vector<int> logit_ids;
        for (size_t k = 0; k < views.size(); ++k) {
            int prompt = g.add(g.value(gated[k]), v.adaptive);
            EncoderGraphOut<T> enc = encoder_forward_g(g, v, params, *views[k], prompt);
            logit_ids.push_back(enc.logit);
        }
        int cat = logit_ids.size() == 1 ? logit_ids[0] : g.concat_rows(logit_ids);
        int loss = entropy_loss_g(g, cat, cfg.loss_kind);
        if (!std::isfinite(static_cast<double>(g.val(loss).data[0])))
            throw TtaError("non-finite entropy loss during token tuning");
        g.backward(loss);
        Tensor<T> grad = g.has_grad(v.adaptive) ? g.grad(v.adaptive) : Tensor<T>(tuned.shape);
        std::vector<const Tensor<T>*> gvec{&grad};
        adam_step(pvec, gvec, names, st, acfg);
    }
    return tuned;
}

// Multi-view inference with confidence selection, optional per-sample token
// tuning and optimal view selection. The tuned tokens live and die inside
// this call; `params` is never modified.
template <typename T>
Prediction predict_image(const ModelParams<T>& params, const Image& img, const TtaConfig& cfg,
                         Rng& rng) {
    if (cfg.n_views < 1) throw ArgumentError("predict_image: n_views must be >= 1");
    int m = std::min(cfg.m, cfg.n_views);
    if (m < 1) throw ArgumentError("predict_image: m must be >= 1");

    ViewSet vs = generate_views(img, cfg.n_views, params.enc.view_size, rng);
    int n = static_cast<int>(vs.count());
    bool has_rows = params.flags.has_prompt_rows();

    std::vector<ConditionPair<T>> conds(params.flags.prompts ? n : 0);
    std::vector<double> logits(n);
    for (int i = 0; i < n; ++i) {
        const ConditionPair<T>* cond = nullptr;
        if (params.flags.prompts) {
            conds[i] = extract_conditions(vs.views[i], params);
            cond = &conds[i];
        }
        std::optional<Tensor<T>> prompt = prompt_for_view(params, cond, params.adaptive);
        logits[i] = encoder_forward(vs.views[i], prompt, params).logit;
    }

    std::vector<int> selected;
    if (cfg.conf_sel) {
        selected = select_confident(logits, m);
    } else {
        selected.resize(n);
        std::iota(selected.begin(), selected.end(), 0);
    }

    std::vector<double> sel_logits;
    for (int i : selected) sel_logits.push_back(logits[i]);

    Prediction pred;
    pred.entropy_before = entropy_of(sel_logits, cfg.loss_kind);

    Tensor<T> tuned;
    bool tuned_applied = false;
    if (cfg.enabled && cfg.steps > 0 && has_rows) {
        std::vector<const Image*> view_ptrs;
        std::vector<const ConditionPair<T>*> cond_ptrs;
        for (int i : selected) {
            view_ptrs.push_back(&vs.views[i]);
            if (params.flags.prompts) cond_ptrs.push_back(&conds[i]);
        }
        try {
            tuned = tune_tokens(params, view_ptrs, cond_ptrs, cfg);
            tuned_applied = true;
            pred.tta_applied = true;
        } catch (const TtaError&) {
            pred.tta_fallback = true;
        }
    }

    std::vector<double> post = sel_logits;
    if (tuned_applied) {
        for (size_t k = 0; k < selected.size(); ++k) {
            int i = selected[k];
            const ConditionPair<T>* cond = params.flags.prompts ? &conds[i] : nullptr;
            std::optional<Tensor<T>> prompt = prompt_for_view(params, cond, tuned);
            post[k] = encoder_forward(vs.views[i], prompt, params).logit;
        }
    }
    pred.entropy_after = entropy_of(post, cfg.loss_kind);

    double final_logit;
    int final_view;
    if (cfg.ovs) {
        size_t best = 0;
        double best_conf = -1.0;
        for (size_t k = 0; k < selected.size(); ++k) {
            double c = confidence(post[k]);
            if (c > best_conf || (c == best_conf && selected[k] < selected[best])) {
                best = k;
                best_conf = c;
            }
        }
        final_logit = post[best];
        final_view = selected[best];
    } else {
        final_view = 0;
        if (!tuned_applied) {
            final_logit = logits[0];
        } else {
            auto it = std::find(selected.begin(), selected.end(), 0);
            if (it != selected.end()) {
                final_logit = post[it - selected.begin()];
            } else {
                const ConditionPair<T>* cond = params.flags.prompts ? &conds[0] : nullptr;
                std::optional<Tensor<T>> prompt = prompt_for_view(params, cond, tuned);
                final_logit = encoder_forward(vs.views[0], prompt, params).logit;
            }
        }
    }

    pred.logit = final_logit;
    pred.prob = sigmoid_scalar(final_logit);
    pred.confidence = confidence(final_logit);
    pred.view_index = final_view;
    pred.label_hat = pred.prob >= 0.5 ? 1 : 0;
    return pred;
}

}  // namespace iapl
