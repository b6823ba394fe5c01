#pragma once

#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "iapl/conditioner.hpp"
#include "iapl/data.hpp"
#include "iapl/encoder.hpp"
#include "iapl/losses.hpp"
#include "iapl/optimizer.hpp"
#include "iapl/threadpool.hpp"

namespace iapl {

struct TrainConfig {
    double lr = 1e-3;
    int batch = 16;
    int epochs = 3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double lambda_aux = 1.0;
    uint64_t seed = 0;
    bool freeze_backbone = false;

    void validate() const {
        if (lr <= 0) throw ArgumentError("train: lr must be > 0");
        if (batch < 1) throw ArgumentError("train: batch must be >= 1");
        if (epochs < 1) throw ArgumentError("train: epochs must be >= 1");
        if (lambda_aux < 0) throw ArgumentError("train: lambda_aux must be >= 0");
    }
};

struct TrainLogRow {
    int step = 0;
    double l_cls = 0.0;
    double l_aux = 0.0;
    double total = 0.0;
};

template <typename T>
struct LossGraph {
    int total = -1;
    int l_cls = -1;
    int l_aux = -1;  // -1 when the model has no conditioner
};

// Classification loss (+ weighted auxiliary loss when the conditioner is
// present) for a single already-sized view.
template <typename T>
LossGraph<T> build_total_loss_g(Graph<T>& g, const ModelVars<T>& v, const ModelParams<T>& p,
                                const Image& view, int label, double lambda_aux,
                                bool train_mode = false, Rng* dropout_rng = nullptr) {
    LossGraph<T> out;
    int prompt = -1;
    if (p.flags.prompts) {
        ConditionGraphOut<T> cond = extract_conditions_g(g, v, p, view);
        prompt = build_prompt_g(g, v, cond.forgery, cond.image);
        int aux = aux_logit_g(g, v, cond.forgery, p.enc.dim);
        out.l_aux = g.bce_with_logits(aux, label);
    } else if (p.flags.has_prompt_rows()) {
        prompt = v.adaptive;
    }
    EncoderGraphOut<T> enc = encoder_forward_g(g, v, p, view, prompt, train_mode, dropout_rng);
    out.l_cls = g.bce_with_logits(enc.logit, label);
    out.total = out.l_aux >= 0 ? g.add(out.l_cls, g.scale(out.l_aux, lambda_aux)) : out.l_cls;
    return out;
}

// One epoch walks the shuffled dataset in batches; every sample contributes
// a gradient computed against the same pre-step parameters, accumulated in
// sample-index order so results do not depend on the worker count.
template <typename T>
std::vector<TrainLogRow> train(const std::vector<Sample>& dataset, ModelParams<T>& params,
                               const TrainConfig& cfg) {
    if (dataset.empty()) throw ArgumentError("train: empty dataset");
    for (const auto& s : dataset)
        if (s.label != 0 && s.label != 1) throw ArgumentError("train: labels must be 0/1");
    if (cfg.batch < 1) throw ArgumentError("train: batch must be >= 1");

    // Registration-order probe for optimizer slots and gradient buffers.
    std::vector<VarEntry<T>> probe;
    {
        Graph<T> g0;
        make_vars<T>(g0, params, GradMode::Trainable, cfg.freeze_backbone, nullptr, &probe);
    }
    std::vector<Tensor<T>*> train_params;
    std::vector<std::string> train_names;
    for (const auto& e : probe)
        if (e.requires_grad) {
            train_params.push_back(const_cast<Tensor<T>*>(e.tensor));
            train_names.push_back(e.name);
        }

    AdamState<T> opt_state;
    opt_state.init_like(train_params);
    AdamConfig adam{cfg.lr, cfg.beta1, cfg.beta2, cfg.eps};

    int batch = std::min<int>(cfg.batch, static_cast<int>(dataset.size()));
    std::vector<std::vector<Tensor<T>>> sample_grads(batch);
    std::vector<LossValues> sample_losses(batch);
    for (auto& buf : sample_grads) {
        buf.reserve(train_params.size());
        for (auto* t : train_params) buf.push_back(Tensor<T>(t->shape));
    }
    std::vector<Tensor<T>> grad_sum;
    for (auto* t : train_params) grad_sum.push_back(Tensor<T>(t->shape));

    Rng base(cfg.seed);
    std::vector<TrainLogRow> log;
    int step = 0;
    std::vector<int> order(dataset.size());
    std::iota(order.begin(), order.end(), 0);

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        Rng shuffle_rng = base.fork("shuffle").fork(static_cast<uint64_t>(epoch));
        for (int i = static_cast<int>(order.size()) - 1; i > 0; --i)
            std::swap(order[i], order[shuffle_rng.uniform_int(0, i)]);

        for (size_t start = 0; start < order.size(); start += batch) {
            int bs = static_cast<int>(std::min<size_t>(batch, order.size() - start));
            parallel_for(bs, [&](int k) {
                const Sample& s = dataset[order[start + k]];
                Rng srng = base.fork("sample").fork(
                    (static_cast<uint64_t>(epoch) << 32) ^ static_cast<uint64_t>(order[start + k]));
                Image view = resize_bilinear(s.image, params.enc.view_size, params.enc.view_size);
                if (srng.bernoulli(0.5)) view = hflip(view);
                Graph<T> g;
                std::vector<VarEntry<T>> entries;
                ModelVars<T> v =
                    make_vars<T>(g, params, GradMode::Trainable, cfg.freeze_backbone, nullptr, &entries);
                LossGraph<T> loss = build_total_loss_g(g, v, params, view, s.label, cfg.lambda_aux,
                                                       true, &srng);
                g.backward(loss.total);
                sample_losses[k].l_cls = g.val(loss.l_cls).data[0];
                sample_losses[k].l_aux = loss.l_aux >= 0 ? g.val(loss.l_aux).data[0] : 0.0;
                sample_losses[k].total = g.val(loss.total).data[0];
                size_t slot = 0;
                for (const auto& e : entries) {
                    if (!e.requires_grad) continue;
                    Tensor<T>& dst = sample_grads[k][slot++];
                    if (g.has_grad(e.id))
                        dst = g.grad(e.id);
                    else
                        dst.fill(T(0));
                }
            });

            for (auto& t : grad_sum) t.fill(T(0));
            for (int k = 0; k < bs; ++k)
                for (size_t i = 0; i < grad_sum.size(); ++i)
                    for (size_t j = 0; j < grad_sum[i].data.size(); ++j)
                        grad_sum[i].data[j] += sample_grads[k][i].data[j];
            T inv = static_cast<T>(1.0 / bs);
            for (auto& t : grad_sum)
                for (auto& x : t.data) x *= inv;

            std::vector<const Tensor<T>*> grad_ptrs;
            for (auto& t : grad_sum) grad_ptrs.push_back(&t);
            adam_step(train_params, grad_ptrs, train_names, opt_state, adam);

            TrainLogRow row;
            row.step = step++;
            for (int k = 0; k < bs; ++k) {
                row.l_cls += sample_losses[k].l_cls / bs;
                row.l_aux += sample_losses[k].l_aux / bs;
                row.total += sample_losses[k].total / bs;
            }
            log.push_back(row);
        }
    }
    return log;
}

inline void write_train_log(const std::vector<TrainLogRow>& log, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write training log " + path);
    out << "step,L_cls,L_aux,total\n";
    for (const auto& r : log)
        out << r.step << "," << r.l_cls << "," << r.l_aux << "," << r.total << "\n";
}

struct GradCheckRow {
    std::string name;
    double max_rel_err = 0.0;
};

struct GradCheckReport {
    std::vector<GradCheckRow> rows;
    double max_rel_err = 0.0;
};

inline double rel_err(double a, double b) {
    return std::abs(a - b) / std::max({1.0, std::abs(a), std::abs(b)});
}

// Central finite differences against the analytic gradient of total_loss,
// parameter by parameter, always in double precision. Parameters are nudged
// off their structured initial values (zero up-projections, tiny gates) so
// every path carries signal.
inline GradCheckReport grad_check(const EncoderConfig& enc, const CilConfig& cil,
                                  const ModelFlags& flags, uint64_t seed, double eps) {
    if (eps <= 0) throw ArgumentError("grad_check: eps must be > 0");
    ModelParams<double> p = init_params<double>(enc, cil, flags, seed);
    if (param_count(p) > 10000)
        throw ArgumentError("grad_check: config too large (> 1e4 parameters)");
    Rng noise(splitmix64(seed ^ 0x9e3779b9u));
    visit_params(p, [&](const std::string&, Tensor<double>& t, ParamKind) {
        for (auto& v : t.data) v += noise.uniform(-0.2, 0.2);
    });

    Rng img_rng = Rng(seed).fork("gradcheck.image");
    Image view(enc.view_size, enc.view_size);
    for (auto& v : view.data) v = static_cast<float>(img_rng.uniform());
    const int label = 1;
    const double lambda_aux = 1.0;

    auto loss_at = [&]() {
        Graph<double> g;
        ModelVars<double> v = make_vars(g, p, GradMode::None);
        LossGraph<double> lg = build_total_loss_g(g, v, p, view, label, lambda_aux);
        return g.val(lg.total).data[0];
    };

    Graph<double> g;
    std::vector<VarEntry<double>> entries;
    ModelVars<double> v = make_vars<double>(g, p, GradMode::Trainable, false, nullptr, &entries);
    LossGraph<double> lg = build_total_loss_g(g, v, p, view, label, lambda_aux);
    g.backward(lg.total);

    GradCheckReport report;
    for (const auto& e : entries) {
        Tensor<double>& t = *const_cast<Tensor<double>*>(e.tensor);
        GradCheckRow row{e.name, 0.0};
        for (size_t i = 0; i < t.data.size(); ++i) {
            double keep = t.data[i];
            t.data[i] = keep + eps;
            double up = loss_at();
            t.data[i] = keep - eps;
            double down = loss_at();
            t.data[i] = keep;
            double numeric = (up - down) / (2.0 * eps);
            double analytic = g.has_grad(e.id) ? g.grad(e.id).data[i] : 0.0;
            row.max_rel_err = std::max(row.max_rel_err, rel_err(analytic, numeric));
        }
        report.max_rel_err = std::max(report.max_rel_err, row.max_rel_err);
        report.rows.push_back(std::move(row));
    }
    return report;
}

}  // namespace iapl
