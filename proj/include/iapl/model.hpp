#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "iapl/errors.hpp"
#include "iapl/residual.hpp"
#include "iapl/rng.hpp"
#include "iapl/tensor.hpp"

namespace iapl {

struct EncoderConfig {
    int depth = 6;
    int dim = 64;   // D
    int heads = 4;
    int patch = 8;
    int view_size = 64;
    int adapter_dim = 8;         // D_hat
    double adapter_scale = 0.1;  // s
    int adapter_blocks = 3;      // N_a
    int token_blocks = 4;        // N_t
    int tokens_per_block = 2;    // M
    double dropout_p = 0.1;
    std::vector<int> adapter_range;  // optional {start, end, stride} override

    int token_count() const {
        int g = view_size / patch;
        return g * g;
    }

    void validate() const {
        if (depth < 1) throw ArgumentError("encoder: depth must be >= 1");
        if (dim < 1 || dim % heads != 0) throw ArgumentError("encoder: dim must divide by heads");
        if (adapter_dim < 1 || adapter_dim >= dim)
            throw ArgumentError("encoder: adapter_dim must be in [1, dim)");
        if (adapter_blocks < 1 || adapter_blocks > depth)
            throw ArgumentError("encoder: adapter_blocks must be in [1, depth]");
        if (token_blocks < 2 || token_blocks > depth)
            throw ArgumentError("encoder: token_blocks must be in [2, depth]");
        if (tokens_per_block < 1) throw ArgumentError("encoder: tokens_per_block must be >= 1");
        if (view_size < 1 || patch < 1 || view_size % patch != 0)
            throw ArgumentError("encoder: view_size must divide by patch");
        if (dropout_p < 0 || dropout_p >= 1) throw ArgumentError("encoder: dropout_p out of range");
        if (!adapter_range.empty() && adapter_range.size() != 3)
            throw ArgumentError("encoder: adapter_range must be start,end,stride");
    }
};

struct CilConfig {
    int cond_patch = 32;
    std::vector<int> channels = {16, 32, 64, 64};

    void validate(const EncoderConfig& enc) const {
        if (cond_patch < 1 || enc.view_size % cond_patch != 0)
            throw ArgumentError("cil: cond_patch must divide the view size");
        if (channels.empty()) throw ArgumentError("cil: need at least one CNN stage");
    }
};

// Structural ablation switches. Off means the corresponding tensors do not
// exist in the model at all.
struct ModelFlags {
    bool adapters = true;
    bool tokens = true;
    bool prompts = true;

    bool has_prompt_rows() const { return tokens || prompts; }
};

// Blocks that carry an adapter: round(k*depth/n_a) for k = 1..n_a, 1-based.
inline std::vector<int> adapter_schedule(int depth, int n_a) {
    if (n_a < 1 || n_a > depth) throw ArgumentError("adapter_schedule: n_a must be in [1, depth]");
    std::vector<int> out;
    for (int k = 1; k <= n_a; ++k) {
        int idx = static_cast<int>(std::llround(static_cast<double>(k) * depth / n_a));
        idx = std::max(1, std::min(depth, idx));
        if (out.empty() || out.back() != idx) out.push_back(idx);
    }
    return out;
}

// Explicit [start, end, stride] placement.
inline std::vector<int> adapter_schedule_range(int start, int end, int stride, int depth) {
    if (start < 1 || end > depth || start > end || stride < 1)
        throw ArgumentError("adapter_schedule_range: bad range");
    std::vector<int> out;
    for (int i = start; i <= end; i += stride) out.push_back(i);
    return out;
}

inline std::vector<int> resolve_adapter_schedule(const EncoderConfig& cfg) {
    if (!cfg.adapter_range.empty())
        return adapter_schedule_range(cfg.adapter_range[0], cfg.adapter_range[1],
                                      cfg.adapter_range[2], cfg.depth);
    return adapter_schedule(cfg.depth, cfg.adapter_blocks);
}

enum class ParamKind { Backbone, Adapter, Token, Gate, Adaptive, Conditioner, AuxHead, Classifier };

template <typename T>
struct AdapterParams {
    Tensor<T> down;  // [D, D_hat]
    Tensor<T> up;    // [D_hat, D]
};

template <typename T>
struct BlockParams {
    Tensor<T> ln1_g, ln1_b;
    Tensor<T> wq, bq, wk, bk, wv, bv, wo, bo;
    Tensor<T> ln2_g, ln2_b;
    Tensor<T> w1, b1, w2, b2;
    bool has_adapter = false;
    AdapterParams<T> adapter;
};

template <typename T>
struct CnnParams {
    struct Stage {
        Tensor<T> w;  // [C_out, C_in, 3, 3]
        Tensor<T> b;  // [C_out]
    };
    std::vector<Stage> stages;
    Tensor<T> fc_w;  // [C_last, D]
    Tensor<T> fc_b;  // [D]
};

template <typename T>
struct ModelParams {
    EncoderConfig enc;
    CilConfig cil;
    ModelFlags flags;

    Tensor<T> patch_w;  // [D, 3*patch^2]
    Tensor<T> patch_b;  // [D]
    Tensor<T> cls;      // [1, D]
    Tensor<T> pos;      // [N+1, D]
    std::vector<BlockParams<T>> blocks;

    std::vector<Tensor<T>> tokens;       // [M, D] for blocks 2..N_t
    std::vector<Tensor<T>> token_gates;  // [D]
    Tensor<T> adaptive;                  // [2, D]
    Tensor<T> gate_f, gate_i;            // [D]
    CnnParams<T> cil_f, cil_i;
    Tensor<T> aux_w;  // [D]
    Tensor<T> aux_b;  // scalar
    Tensor<T> clf_w;  // [D]
    Tensor<T> clf_b;  // scalar
};

template <typename P, typename F>
void visit_cnn(P& cnn, const std::string& prefix, F&& f) {
    for (size_t s = 0; s < cnn.stages.size(); ++s) {
        f(prefix + ".conv" + std::to_string(s) + ".weight", cnn.stages[s].w, ParamKind::Conditioner);
        f(prefix + ".conv" + std::to_string(s) + ".bias", cnn.stages[s].b, ParamKind::Conditioner);
    }
    f(prefix + ".fc.weight", cnn.fc_w, ParamKind::Conditioner);
    f(prefix + ".fc.bias", cnn.fc_b, ParamKind::Conditioner);
}

// Deterministic enumeration of every tensor in the model. Checkpoint layout,
// optimizer slot order and the gradient check all follow this order.
template <typename P, typename F>
void visit_params(P& p, F&& f) {
    using T = typename std::remove_reference_t<decltype(p.patch_w.data[0])>;
    (void)sizeof(T);
    f("embed.proj", p.patch_w, ParamKind::Backbone);
    f("embed.bias", p.patch_b, ParamKind::Backbone);
    f("embed.cls", p.cls, ParamKind::Backbone);
    f("embed.pos", p.pos, ParamKind::Backbone);
    for (size_t i = 0; i < p.blocks.size(); ++i) {
        auto& b = p.blocks[i];
        std::string pre = "blocks." + std::to_string(i) + ".";
        f(pre + "ln1.gamma", b.ln1_g, ParamKind::Backbone);
        f(pre + "ln1.beta", b.ln1_b, ParamKind::Backbone);
        f(pre + "attn.wq", b.wq, ParamKind::Backbone);
        f(pre + "attn.bq", b.bq, ParamKind::Backbone);
        f(pre + "attn.wk", b.wk, ParamKind::Backbone);
        f(pre + "attn.bk", b.bk, ParamKind::Backbone);
        f(pre + "attn.wv", b.wv, ParamKind::Backbone);
        f(pre + "attn.bv", b.bv, ParamKind::Backbone);
        f(pre + "attn.wo", b.wo, ParamKind::Backbone);
        f(pre + "attn.bo", b.bo, ParamKind::Backbone);
        f(pre + "ln2.gamma", b.ln2_g, ParamKind::Backbone);
        f(pre + "ln2.beta", b.ln2_b, ParamKind::Backbone);
        f(pre + "mlp.w1", b.w1, ParamKind::Backbone);
        f(pre + "mlp.b1", b.b1, ParamKind::Backbone);
        f(pre + "mlp.w2", b.w2, ParamKind::Backbone);
        f(pre + "mlp.b2", b.b2, ParamKind::Backbone);
        if (b.has_adapter) {
            f(pre + "adapter.down", b.adapter.down, ParamKind::Adapter);
            f(pre + "adapter.up", b.adapter.up, ParamKind::Adapter);
        }
    }
    if (p.flags.tokens) {
        for (size_t j = 0; j < p.tokens.size(); ++j) {
            std::string blk = std::to_string(j + 2);
            f("tokens." + blk, p.tokens[j], ParamKind::Token);
            f("gates.alpha." + blk, p.token_gates[j], ParamKind::Gate);
        }
    }
    if (p.flags.has_prompt_rows()) f("adaptive_tokens", p.adaptive, ParamKind::Adaptive);
    if (p.flags.prompts) {
        f("gates.alpha_f", p.gate_f, ParamKind::Gate);
        f("gates.alpha_i", p.gate_i, ParamKind::Gate);
        visit_cnn(p.cil_f, "cil.forgery", f);
        visit_cnn(p.cil_i, "cil.image", f);
        f("cil.aux.weight", p.aux_w, ParamKind::AuxHead);
        f("cil.aux.bias", p.aux_b, ParamKind::AuxHead);
    }
    f("classifier.weight", p.clf_w, ParamKind::Classifier);
    f("classifier.bias", p.clf_b, ParamKind::Classifier);
}

template <typename T>
size_t param_count(const ModelParams<T>& p) {
    size_t n = 0;
    visit_params(p, [&](const std::string&, const Tensor<T>& t, ParamKind) { n += t.numel(); });
    return n;
}

namespace detail {

template <typename T>
void init_uniform(Tensor<T>& t, const Rng& base, const std::string& name, double bound) {
    Rng r = base.fork(name);
    t.fill_uniform(r, -bound, bound);
}

template <typename T>
void init_cnn(CnnParams<T>& cnn, const CilConfig& cil, int dim, const Rng& base,
              const std::string& prefix) {
    int c_in = 3 * static_cast<int>(highpass_kernels().size());
    cnn.stages.clear();
    for (size_t s = 0; s < cil.channels.size(); ++s) {
        int c_out = cil.channels[s];
        typename CnnParams<T>::Stage st;
        st.w = Tensor<T>({c_out, c_in, 3, 3});
        st.b = Tensor<T>({c_out});
        double bound = 1.0 / std::sqrt(static_cast<double>(c_in) * 9.0);
        init_uniform(st.w, base, prefix + ".conv" + std::to_string(s) + ".weight", bound);
        cnn.stages.push_back(std::move(st));
        c_in = c_out;
    }
    cnn.fc_w = Tensor<T>({c_in, dim});
    cnn.fc_b = Tensor<T>({dim});
    init_uniform(cnn.fc_w, base, prefix + ".fc.weight", 1.0 / std::sqrt(static_cast<double>(c_in)));
}

}  // namespace detail

// Fresh model. Every tensor gets its own stream forked from (seed, name), so
// the same seed produces the same backbone no matter which optional parts
// exist. Up-projections, gate-carried classifier and aux head start at zero;
// gates start at 1e-6.
template <typename T>
ModelParams<T> init_params(const EncoderConfig& enc, const CilConfig& cil, const ModelFlags& flags,
                           const Rng& rng) {
    enc.validate();
    cil.validate(enc);
    ModelParams<T> p;
    p.enc = enc;
    p.cil = cil;
    p.flags = flags;

    int d = enc.dim;
    int n = enc.token_count();
    double bound = 1.0 / std::sqrt(static_cast<double>(d));

    p.patch_w = Tensor<T>({d, 3 * enc.patch * enc.patch});
    p.patch_b = Tensor<T>({d});
    p.cls = Tensor<T>({1, d});
    p.pos = Tensor<T>({n + 1, d});
    detail::init_uniform(p.patch_w, rng, "embed.proj", bound);
    detail::init_uniform(p.cls, rng, "embed.cls", bound);
    detail::init_uniform(p.pos, rng, "embed.pos", bound);

    std::vector<int> adapters = resolve_adapter_schedule(enc);
    p.blocks.resize(enc.depth);
    for (int i = 0; i < enc.depth; ++i) {
        auto& b = p.blocks[i];
        std::string pre = "blocks." + std::to_string(i) + ".";
        b.ln1_g = Tensor<T>::full({d}, T(1));
        b.ln1_b = Tensor<T>({d});
        b.ln2_g = Tensor<T>::full({d}, T(1));
        b.ln2_b = Tensor<T>({d});
        b.wq = Tensor<T>({d, d});
        b.wk = Tensor<T>({d, d});
        b.wv = Tensor<T>({d, d});
        b.wo = Tensor<T>({d, d});
        b.bq = Tensor<T>({d});
        b.bk = Tensor<T>({d});
        b.bv = Tensor<T>({d});
        b.bo = Tensor<T>({d});
        b.w1 = Tensor<T>({d, 4 * d});
        b.b1 = Tensor<T>({4 * d});
        b.w2 = Tensor<T>({4 * d, d});
        b.b2 = Tensor<T>({d});
        detail::init_uniform(b.wq, rng, pre + "attn.wq", bound);
        detail::init_uniform(b.wk, rng, pre + "attn.wk", bound);
        detail::init_uniform(b.wv, rng, pre + "attn.wv", bound);
        detail::init_uniform(b.wo, rng, pre + "attn.wo", bound);
        detail::init_uniform(b.w1, rng, pre + "mlp.w1", bound);
        detail::init_uniform(b.w2, rng, pre + "mlp.w2", bound);
        if (flags.adapters &&
            std::find(adapters.begin(), adapters.end(), i + 1) != adapters.end()) {
            b.has_adapter = true;
            b.adapter.down = Tensor<T>({d, enc.adapter_dim});
            b.adapter.up = Tensor<T>({enc.adapter_dim, d});
            // Kaiming uniform over fan-in D for the down-projection; the
            // up-projection starts at zero so a fresh adapter is a no-op.
            detail::init_uniform(b.adapter.down, rng, pre + "adapter.down",
                                 std::sqrt(6.0 / static_cast<double>(d)));
        }
    }

    if (flags.tokens) {
        for (int j = 2; j <= enc.token_blocks; ++j) {
            Tensor<T> t({enc.tokens_per_block, d});
            detail::init_uniform(t, rng, "tokens." + std::to_string(j), bound);
            p.tokens.push_back(std::move(t));
            p.token_gates.push_back(Tensor<T>::full({d}, T(1e-6)));
        }
    }
    if (flags.has_prompt_rows()) {
        p.adaptive = Tensor<T>({2, d});
        detail::init_uniform(p.adaptive, rng, "adaptive_tokens", bound);
    }
    if (flags.prompts) {
        p.gate_f = Tensor<T>::full({d}, T(1e-6));
        p.gate_i = Tensor<T>::full({d}, T(1e-6));
        detail::init_cnn(p.cil_f, cil, d, rng, "cil.forgery");
        detail::init_cnn(p.cil_i, cil, d, rng, "cil.image");
        p.aux_w = Tensor<T>({d});
        p.aux_b = Tensor<T>(std::vector<int>{});
    }
    p.clf_w = Tensor<T>({d});
    p.clf_b = Tensor<T>(std::vector<int>{});
    return p;
}

template <typename T>
ModelParams<T> init_params(const EncoderConfig& enc, const CilConfig& cil, const ModelFlags& flags,
                           uint64_t seed) {
    return init_params<T>(enc, cil, flags, Rng(seed));
}

}  // namespace iapl
