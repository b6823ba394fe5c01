#pragma once

#include <optional>
#include <string>
#include <vector>

#include "iapl/graph.hpp"
#include "iapl/image.hpp"
#include "iapl/model.hpp"
#include "iapl/rng.hpp"

namespace iapl {

// Prompt rows (if any) come first, then the CLS row, then image tokens.
template <typename T>
struct TokenSeq {
    int prompt_rows = 0;
    Tensor<T> rows;  // [prompt_rows + 1 + N, D]

    int cls_index() const { return prompt_rows; }
};

// delta = s * dropout(relu(x W_down)) W_up. Dropout is inverted (scaled by
// 1/keep) and only applied when a dropout rng is supplied.
template <typename T>
Tensor<T> adapter_forward(const Tensor<T>& x, const AdapterParams<T>& a, double s,
                          double dropout_p = 0.0, Rng* dropout_rng = nullptr) {
    if (x.rank() != 2 || x.shape[1] != a.down.shape[0])
        throw ArgumentError("adapter_forward: last dim must match down-projection");
    int m = x.shape[0], d = a.down.shape[0], dh = a.down.shape[1];
    Tensor<T> hid({m, dh});
    typename Graph<T>::MatMap(hid.data.data(), m, dh).noalias() =
        typename Graph<T>::CMatMap(x.data.data(), m, d) *
        typename Graph<T>::CMatMap(a.down.data.data(), d, dh);
    for (auto& v : hid.data) v = v > T(0) ? v : T(0);
    if (dropout_rng && dropout_p > 0.0) {
        double keep = 1.0 - dropout_p;
        for (auto& v : hid.data) v = dropout_rng->bernoulli(dropout_p) ? T(0) : static_cast<T>(v / keep);
    }
    Tensor<T> out({m, d});
    typename Graph<T>::MatMap(out.data.data(), m, d).noalias() =
        typename Graph<T>::CMatMap(hid.data.data(), m, dh) *
        typename Graph<T>::CMatMap(a.up.data.data(), dh, d);
    for (auto& v : out.data) v = static_cast<T>(v * s);
    return out;
}

// P_i = alpha (.) P_o + T, with alpha broadcast over rows.
template <typename T>
Tensor<T> gated_fuse(const Tensor<T>& prev_prompts, const Tensor<T>& tokens,
                     const Tensor<T>& alpha) {
    if (!prev_prompts.same_shape(tokens) || prev_prompts.rank() != 2 ||
        static_cast<int>(alpha.numel()) != prev_prompts.shape[1])
        throw ArgumentError("gated_fuse: shape mismatch");
    Tensor<T> out(prev_prompts.shape);
    int m = out.shape[0], d = out.shape[1];
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < d; ++j) out(i, j) = alpha.data[j] * prev_prompts(i, j) + tokens(i, j);
    return out;
}

// Row-major patch scan; each row is one patch flattened as (y, x, channel).
template <typename T>
Tensor<T> flatten_patches(const Image& view, int patch) {
    if (view.height != view.width || view.height % patch != 0)
        throw ArgumentError("flatten_patches: view must be square and divisible by patch");
    int g = view.height / patch;
    Tensor<T> out({g * g, 3 * patch * patch});
    for (int gy = 0; gy < g; ++gy)
        for (int gx = 0; gx < g; ++gx) {
            int row = gy * g + gx;
            int c = 0;
            for (int py = 0; py < patch; ++py)
                for (int px = 0; px < patch; ++px)
                    for (int ch = 0; ch < 3; ++ch)
                        out(row, c++) = static_cast<T>(view.at(gy * patch + py, gx * patch + px, ch));
        }
    return out;
}

// [cls; image tokens] + positional embeddings; prompts are injected later.
template <typename T>
TokenSeq<T> patch_embed(const Image& view, const ModelParams<T>& p) {
    const EncoderConfig& cfg = p.enc;
    if (view.height != cfg.view_size || view.width != cfg.view_size)
        throw ArgumentError("patch_embed: view must be view_size x view_size");
    Tensor<T> x = flatten_patches<T>(view, cfg.patch);
    int n = x.shape[0], d = cfg.dim;
    TokenSeq<T> ts;
    ts.rows = Tensor<T>({n + 1, d});
    typename Graph<T>::MatMap(ts.rows.data.data() + d, n, d).noalias() =
        typename Graph<T>::CMatMap(x.data.data(), n, x.shape[1]) *
        typename Graph<T>::CMatMap(p.patch_w.data.data(), d, x.shape[1]).transpose();
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < d; ++j) ts.rows(i + 1, j) += p.patch_b.data[j];
    for (int j = 0; j < d; ++j) ts.rows(0, j) = p.cls(0, j);
    for (int i = 0; i <= n; ++i)
        for (int j = 0; j < d; ++j) ts.rows(i, j) += p.pos(i, j);
    return ts;
}

// Graph-side handles for every model tensor.
template <typename T>
struct BlockVars {
    int ln1_g, ln1_b, wq, bq, wk, bk, wv, bv, wo, bo, ln2_g, ln2_b, w1, b1, w2, b2;
    int adapter_down = -1, adapter_up = -1;
};

template <typename T>
struct CnnVars {
    std::vector<std::pair<int, int>> stages;  // (w, b)
    int fc_w = -1, fc_b = -1;
};

template <typename T>
struct ModelVars {
    int patch_w, patch_b, cls, pos;
    std::vector<BlockVars<T>> blocks;
    std::vector<int> tokens, token_gates;
    int adaptive = -1;
    int gate_f = -1, gate_i = -1;
    CnnVars<T> cil_f, cil_i;
    int aux_w = -1, aux_b = -1;
    int clf_w = -1, clf_b = -1;
};

enum class GradMode {
    None,          // pure evaluation
    Trainable,     // every tensor, minus the backbone when frozen
    AdaptiveOnly,  // test-time tuning: only the adaptive tokens
};

// One registered leaf: ties the graph node back to the parameter tensor.
template <typename T>
struct VarEntry {
    int id;
    const Tensor<T>* tensor;
    std::string name;
    ParamKind kind;
    bool requires_grad;
};

// Registers leaves for all model tensors. adaptive_override lets test-time
// tuning substitute its episodic copy of the adaptive tokens. When `entries`
// is given, it receives every leaf in registration order; gradient buffers
// and optimizer slots key off that order.
template <typename T>
ModelVars<T> make_vars(Graph<T>& g, const ModelParams<T>& p, GradMode mode,
                       bool freeze_backbone = false, const Tensor<T>* adaptive_override = nullptr,
                       std::vector<VarEntry<T>>* entries = nullptr) {
    auto want = [&](ParamKind k) {
        switch (mode) {
            case GradMode::None:
                return false;
            case GradMode::AdaptiveOnly:
                return k == ParamKind::Adaptive;
            case GradMode::Trainable:
                return !(freeze_backbone && k == ParamKind::Backbone);
        }
        return false;
    };
    auto reg = [&](const char* name, const Tensor<T>& t, ParamKind k) {
        bool rg = want(k);
        int id = g.leaf(t, rg);
        if (entries) entries->push_back(VarEntry<T>{id, &t, name, k, rg});
        return id;
    };
    auto reg_s = [&](const std::string& name, const Tensor<T>& t, ParamKind k) {
        return reg(name.c_str(), t, k);
    };
    ModelVars<T> v;
    v.patch_w = reg("embed.proj", p.patch_w, ParamKind::Backbone);
    v.patch_b = reg("embed.bias", p.patch_b, ParamKind::Backbone);
    v.cls = reg("embed.cls", p.cls, ParamKind::Backbone);
    v.pos = reg("embed.pos", p.pos, ParamKind::Backbone);
    for (size_t i = 0; i < p.blocks.size(); ++i) {
        const auto& b = p.blocks[i];
        std::string pre = "blocks." + std::to_string(i) + ".";
        BlockVars<T> bv;
        bv.ln1_g = reg_s(pre + "ln1.gamma", b.ln1_g, ParamKind::Backbone);
        bv.ln1_b = reg_s(pre + "ln1.beta", b.ln1_b, ParamKind::Backbone);
        bv.wq = reg_s(pre + "attn.wq", b.wq, ParamKind::Backbone);
        bv.bq = reg_s(pre + "attn.bq", b.bq, ParamKind::Backbone);
        bv.wk = reg_s(pre + "attn.wk", b.wk, ParamKind::Backbone);
        bv.bk = reg_s(pre + "attn.bk", b.bk, ParamKind::Backbone);
        bv.wv = reg_s(pre + "attn.wv", b.wv, ParamKind::Backbone);
        bv.bv = reg_s(pre + "attn.bv", b.bv, ParamKind::Backbone);
        bv.wo = reg_s(pre + "attn.wo", b.wo, ParamKind::Backbone);
        bv.bo = reg_s(pre + "attn.bo", b.bo, ParamKind::Backbone);
        bv.ln2_g = reg_s(pre + "ln2.gamma", b.ln2_g, ParamKind::Backbone);
        bv.ln2_b = reg_s(pre + "ln2.beta", b.ln2_b, ParamKind::Backbone);
        bv.w1 = reg_s(pre + "mlp.w1", b.w1, ParamKind::Backbone);
        bv.b1 = reg_s(pre + "mlp.b1", b.b1, ParamKind::Backbone);
        bv.w2 = reg_s(pre + "mlp.w2", b.w2, ParamKind::Backbone);
        bv.b2 = reg_s(pre + "mlp.b2", b.b2, ParamKind::Backbone);
        if (b.has_adapter) {
            bv.adapter_down = reg_s(pre + "adapter.down", b.adapter.down, ParamKind::Adapter);
            bv.adapter_up = reg_s(pre + "adapter.up", b.adapter.up, ParamKind::Adapter);
        }
        v.blocks.push_back(bv);
    }
    for (size_t j = 0; j < p.tokens.size(); ++j) {
        std::string blk = std::to_string(j + 2);
        v.tokens.push_back(reg_s("tokens." + blk, p.tokens[j], ParamKind::Token));
        v.token_gates.push_back(reg_s("gates.alpha." + blk, p.token_gates[j], ParamKind::Gate));
    }
    if (p.flags.has_prompt_rows())
        v.adaptive = reg("adaptive_tokens", adaptive_override ? *adaptive_override : p.adaptive,
                         ParamKind::Adaptive);
    if (p.flags.prompts) {
        v.gate_f = reg("gates.alpha_f", p.gate_f, ParamKind::Gate);
        v.gate_i = reg("gates.alpha_i", p.gate_i, ParamKind::Gate);
        auto reg_cnn = [&](const CnnParams<T>& c, CnnVars<T>& cv, const std::string& prefix) {
            for (size_t s = 0; s < c.stages.size(); ++s) {
                std::string sp = prefix + ".conv" + std::to_string(s);
                cv.stages.emplace_back(
                    reg_s(sp + ".weight", c.stages[s].w, ParamKind::Conditioner),
                    reg_s(sp + ".bias", c.stages[s].b, ParamKind::Conditioner));
            }
            cv.fc_w = reg_s(prefix + ".fc.weight", c.fc_w, ParamKind::Conditioner);
            cv.fc_b = reg_s(prefix + ".fc.bias", c.fc_b, ParamKind::Conditioner);
        };
        reg_cnn(p.cil_f, v.cil_f, "cil.forgery");
        reg_cnn(p.cil_i, v.cil_i, "cil.image");
        v.aux_w = reg("cil.aux.weight", p.aux_w, ParamKind::AuxHead);
        v.aux_b = reg("cil.aux.bias", p.aux_b, ParamKind::AuxHead);
    }
    v.clf_w = reg("classifier.weight", p.clf_w, ParamKind::Classifier);
    v.clf_b = reg("classifier.bias", p.clf_b, ParamKind::Classifier);
    return v;
}

struct EncoderTrace {
    std::vector<int> block_input_rows;
};

template <typename T>
int patch_embed_g(Graph<T>& g, const ModelVars<T>& v, const ModelParams<T>& p, const Image& view) {
    const EncoderConfig& cfg = p.enc;
    if (view.height != cfg.view_size || view.width != cfg.view_size)
        throw ArgumentError("patch_embed: view must be view_size x view_size");
    int x = g.value(flatten_patches<T>(view, cfg.patch));
    int tok = g.add_rowvec(g.matmul_nt(x, v.patch_w), v.patch_b);
    int seq = g.concat_rows({v.cls, tok});
    return g.add(seq, v.pos);
}

template <typename T>
int block_forward_g(Graph<T>& g, int seq, const BlockVars<T>& bv, const EncoderConfig& cfg,
                    bool train, Rng* dropout_rng) {
    int d = cfg.dim;
    int dh = d / cfg.heads;
    int h = g.layernorm(seq, bv.ln1_g, bv.ln1_b);
    int q = g.add_rowvec(g.matmul(h, bv.wq), bv.bq);
    int k = g.add_rowvec(g.matmul(h, bv.wk), bv.bk);
    int vv = g.add_rowvec(g.matmul(h, bv.wv), bv.bv);
    std::vector<int> heads_out;
    double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(dh));
    for (int hd = 0; hd < cfg.heads; ++hd) {
        int qh = g.slice_cols(q, hd * dh, (hd + 1) * dh);
        int kh = g.slice_cols(k, hd * dh, (hd + 1) * dh);
        int vh = g.slice_cols(vv, hd * dh, (hd + 1) * dh);
        int att = g.softmax_rows(g.scale(g.matmul_nt(qh, kh), inv_sqrt_dh));
        heads_out.push_back(g.matmul(att, vh));
    }
    int cat = cfg.heads == 1 ? heads_out[0] : g.concat_cols(heads_out);
    int attn = g.add_rowvec(g.matmul(cat, bv.wo), bv.bo);
    seq = g.add(seq, attn);

    int h2 = g.layernorm(seq, bv.ln2_g, bv.ln2_b);
    int m = g.add_rowvec(g.matmul(h2, bv.w1), bv.b1);
    m = g.gelu(m);
    m = g.add_rowvec(g.matmul(m, bv.w2), bv.b2);
    if (bv.adapter_down >= 0) {
        int a = g.relu(g.matmul(h2, bv.adapter_down));
        if (train && cfg.dropout_p > 0.0 && dropout_rng) {
            const Tensor<T>& av = g.val(a);
            Tensor<T> mask(av.shape);
            T keep_scale = static_cast<T>(1.0 / (1.0 - cfg.dropout_p));
            for (auto& mv : mask.data)
                mv = dropout_rng->bernoulli(cfg.dropout_p) ? T(0) : keep_scale;
            a = g.mul(a, g.value(std::move(mask)));
        }
        a = g.matmul(a, bv.adapter_up);
        m = g.add(m, g.scale(a, cfg.adapter_scale));
    }
    return g.add(seq, m);
}

template <typename T>
struct EncoderGraphOut {
    int logit = -1;        // [1,1]
    int cls_feature = -1;  // [1,D]
};

// Full encoder pass. `prompt` (node id or -1) is the block-1 prompt pair;
// prompt rows are re-fused with the per-block learnable tokens through block
// N_t and dropped afterwards.
template <typename T>
EncoderGraphOut<T> encoder_forward_g(Graph<T>& g, const ModelVars<T>& v, const ModelParams<T>& p,
                                     const Image& view, int prompt, bool train = false,
                                     Rng* dropout_rng = nullptr, EncoderTrace* trace = nullptr) {
    const EncoderConfig& cfg = p.enc;
    if (p.flags.prompts && prompt < 0)
        throw ArgumentError("encoder_forward: model expects a prompt");
    int m_rows = 0;
    int seq = patch_embed_g(g, v, p, view);
    if (prompt >= 0) {
        const Tensor<T>& pr = g.val(prompt);
        if (pr.rank() != 2 || pr.shape[1] != cfg.dim)
            throw ArgumentError("encoder_forward: bad prompt shape");
        m_rows = pr.shape[0];
        seq = g.concat_rows({prompt, seq});
    }
    int nt_eff = (p.flags.tokens && !p.tokens.empty()) ? cfg.token_blocks : 1;
    bool have_rows = m_rows > 0;
    for (int j = 1; j <= cfg.depth; ++j) {
        if (have_rows && j >= 2 && j <= nt_eff) {
            if (m_rows != cfg.tokens_per_block)
                throw ArgumentError("encoder_forward: prompt rows must match tokens_per_block");
            int total = g.val(seq).shape[0];
            int prev = g.slice_rows(seq, 0, m_rows);
            int fused = g.add(g.colgate(prev, v.token_gates[j - 2]), v.tokens[j - 2]);
            seq = g.concat_rows({fused, g.slice_rows(seq, m_rows, total)});
        } else if (have_rows && j == nt_eff + 1) {
            seq = g.slice_rows(seq, m_rows, g.val(seq).shape[0]);
            have_rows = false;
        }
        if (trace) trace->block_input_rows.push_back(g.val(seq).shape[0]);
        seq = block_forward_g(g, seq, v.blocks[j - 1], cfg, train, dropout_rng);
    }
    int cls_at = have_rows ? m_rows : 0;
    EncoderGraphOut<T> out;
    out.cls_feature = g.slice_rows(seq, cls_at, cls_at + 1);
    int w_col = g.reshape(v.clf_w, {cfg.dim, 1});
    int b11 = g.reshape(v.clf_b, {1, 1});
    out.logit = g.add(g.matmul(out.cls_feature, w_col), b11);
    return out;
}

template <typename T>
struct EncoderOut {
    double logit = 0.0;
    Tensor<T> cls_feature;
};

// Evaluation-mode convenience wrapper running its own local graph.
template <typename T>
EncoderOut<T> encoder_forward(const Image& view, const std::optional<Tensor<T>>& prompt,
                              const ModelParams<T>& p, bool train = false,
                              Rng* dropout_rng = nullptr, EncoderTrace* trace = nullptr) {
    Graph<T> g;
    ModelVars<T> v = make_vars(g, p, GradMode::None);
    int prompt_id = prompt ? g.value(*prompt) : -1;
    EncoderGraphOut<T> got = encoder_forward_g(g, v, p, view, prompt_id, train, dropout_rng, trace);
    EncoderOut<T> out;
    out.logit = static_cast<double>(g.val(got.logit).data[0]);
    out.cls_feature = g.val(got.cls_feature);
    return out;
}

}  // namespace iapl
