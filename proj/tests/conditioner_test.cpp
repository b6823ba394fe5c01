#include <gtest/gtest.h>

#include <cmath>

#include "iapl/conditioner.hpp"
#include "iapl/train.hpp"

using namespace iapl;

namespace {

EncoderConfig tiny_cfg() {
    EncoderConfig e;
    e.depth = 2;
    e.dim = 8;
    e.heads = 2;
    e.patch = 8;
    e.view_size = 16;
    e.adapter_dim = 4;
    e.adapter_blocks = 1;
    e.token_blocks = 2;
    e.tokens_per_block = 2;
    return e;
}

CilConfig tiny_cil() {
    CilConfig c;
    c.cond_patch = 16;
    c.channels = {4, 4, 8, 8};
    return c;
}

Image random_view(int side, uint64_t seed) {
    Rng rng(seed);
    Image img(side, side);
    for (auto& v : img.data) v = static_cast<float>(rng.uniform());
    return img;
}

}  // namespace

TEST(CnnForward, ZeroResidualsGiveBiasPath) {
    auto p = init_params<double>(tiny_cfg(), tiny_cil(), ModelFlags{}, 1);
    // zero every bias so the bias path is exactly zero
    for (auto& st : p.cil_f.stages) st.b.fill(0.0);
    p.cil_f.fc_b.fill(0.0);
    ResidualStack rs = highpass_residual(Image(16, 16));  // all-zero patch
    Tensor<double> out = cnn_forward(rs, p.cil_f);
    for (double v : out.data) EXPECT_EQ(v, 0.0);
}

TEST(CnnForward, IdenticalWeightsSameOutput) {
    auto p = init_params<double>(tiny_cfg(), tiny_cil(), ModelFlags{}, 2);
    p.cil_i = p.cil_f;
    ResidualStack rs = highpass_residual(random_view(16, 3));
    Tensor<double> a = cnn_forward(rs, p.cil_f);
    Tensor<double> b = cnn_forward(rs, p.cil_i);
    EXPECT_EQ(a.data, b.data);
}

TEST(CnnForward, OneStageToyMatchesLoopOracle) {
    // single conv stage, 1 -> 1 channel, then GAP and a 1x1 fc
    CnnParams<double> cnn;
    CnnParams<double>::Stage st;
    st.w = Tensor<double>({1, 1, 3, 3}, {0.1, -0.2, 0.3, 0.0, 0.5, -0.1, 0.2, 0.4, -0.3});
    st.b = Tensor<double>({1}, {0.05});
    cnn.stages.push_back(st);
    cnn.fc_w = Tensor<double>({1, 2}, {2.0, -1.0});
    cnn.fc_b = Tensor<double>({2}, {0.1, 0.2});

    Rng rng(4);
    Tensor<double> x({1, 6, 6});
    x.fill_uniform(rng, -1, 1);

    Graph<double> g;
    CnnVars<double> cv;
    cv.stages.emplace_back(g.leaf(st.w, false), g.leaf(st.b, false));
    cv.fc_w = g.leaf(cnn.fc_w, false);
    cv.fc_b = g.leaf(cnn.fc_b, false);
    int out = cnn_forward_g(g, cv, g.value(x));

    // direct loops: conv stride 2 pad 1 -> relu -> mean -> fc
    double pooled = 0.0;
    int oh = 3, ow = 3;
    for (int oy = 0; oy < oh; ++oy)
        for (int ox = 0; ox < ow; ++ox) {
            double acc = 0.05;
            for (int ky = 0; ky < 3; ++ky)
                for (int kx = 0; kx < 3; ++kx) {
                    int iy = oy * 2 + ky - 1, ix = ox * 2 + kx - 1;
                    if (iy < 0 || iy >= 6 || ix < 0 || ix >= 6) continue;
                    acc += st.w.data[ky * 3 + kx] * x.data[iy * 6 + ix];
                }
            pooled += std::max(0.0, acc);
        }
    pooled /= oh * ow;
    EXPECT_NEAR(g.val(out)(0, 0), pooled * 2.0 + 0.1, 1e-12);
    EXPECT_NEAR(g.val(out)(0, 1), pooled * -1.0 + 0.2, 1e-12);
}

TEST(CnnForward, ChannelMismatchRejected) {
    auto p = init_params<double>(tiny_cfg(), tiny_cil(), ModelFlags{}, 5);
    ResidualStack rs;
    rs.side = 16;
    rs.kernel_count = 2;
    rs.planes.assign(6, std::vector<double>(256, 0.0));
    EXPECT_THROW(cnn_forward(rs, p.cil_f), ArgumentError);
}

TEST(ExtractConditions, ConstantViewTakesBiasPath) {
    auto p = init_params<double>(tiny_cfg(), tiny_cil(), ModelFlags{}, 6);
    Image view(16, 16);
    for (auto& v : view.data) v = 0.5f;
    ConditionPair<double> cond = extract_conditions(view, p);
    // residuals are all zero, so conditions equal the extractors' bias-path
    // output on a zero input
    ResidualStack zero_rs = highpass_residual(Image(16, 16));
    Tensor<double> want_f = cnn_forward(zero_rs, p.cil_f);
    Tensor<double> want_i = cnn_forward(zero_rs, p.cil_i);
    EXPECT_EQ(cond.forgery.data, want_f.data);
    EXPECT_EQ(cond.image.data, want_i.data);
}

TEST(ExtractConditions, PureFunction) {
    auto p = init_params<double>(tiny_cfg(), tiny_cil(), ModelFlags{}, 7);
    Image view = random_view(16, 8);
    ConditionPair<double> a = extract_conditions(view, p);
    ConditionPair<double> b = extract_conditions(view, p);
    EXPECT_EQ(a.forgery.data, b.forgery.data);
    EXPECT_EQ(a.image.data, b.image.data);
    EXPECT_EQ(a.source_position, b.source_position);
}

TEST(ExtractConditions, PicksBruteForceRichestPatch) {
    EncoderConfig e = tiny_cfg();
    e.view_size = 64;
    e.patch = 8;
    CilConfig c;
    c.cond_patch = 32;
    c.channels = {4, 4, 8, 8};
    auto p = init_params<double>(e, c, ModelFlags{}, 9);
    // texture only in the bottom-right 32x32 corner
    Image view(64, 64);
    for (auto& v : view.data) v = 0.4f;
    for (int y = 32; y < 64; ++y)
        for (int x = 32; x < 64; ++x)
            for (int ch = 0; ch < 3; ++ch) view.at(y, x, ch) = ((x ^ y) & 1) ? 0.9f : 0.1f;
    ConditionPair<double> cond = extract_conditions(view, p);
    PatchGrid grid = partition_patches(view, 32);
    size_t best = 0;
    double best_score = -1;
    for (size_t i = 0; i < grid.patches.size(); ++i) {
        double s = dct_richness(grid.patches[i]);
        if (s > best_score) {
            best_score = s;
            best = i;
        }
    }
    EXPECT_EQ(cond.source_position, grid.positions[best]);
    EXPECT_EQ(cond.source_position, std::make_pair(1, 1));
}

TEST(ExtractConditions, SmallViewRejected) {
    auto p = init_params<double>(tiny_cfg(), tiny_cil(), ModelFlags{}, 10);
    EXPECT_THROW(extract_conditions(Image(8, 8), p), ArgumentError);
}

TEST(AuxLogit, Values) {
    Tensor<double> zero_w({4}), zero_b({});
    Tensor<double> cf({1, 4}, {0.5, -1.0, 2.0, 0.1});
    EXPECT_EQ(aux_logit(cf, zero_w, zero_b), 0.0);
    Tensor<double> w({4}, {1.0, 2.0, -0.5, 3.0});
    Tensor<double> b({});
    b.data[0] = 0.7;
    Tensor<double> zero_c({1, 4});
    EXPECT_EQ(aux_logit(zero_c, w, b), 0.7);
    double want = 0.7 + 0.5 * 1.0 + -1.0 * 2.0 + 2.0 * -0.5 + 0.1 * 3.0;
    EXPECT_NEAR(aux_logit(cf, w, b), want, 1e-15);
}

TEST(BuildPrompt, GateIdentities) {
    Rng rng(11);
    ConditionPair<double> cond;
    cond.forgery = Tensor<double>({1, 8});
    cond.image = Tensor<double>({1, 8});
    cond.forgery.fill_uniform(rng, -1, 1);
    cond.image.fill_uniform(rng, -1, 1);
    Tensor<double> adaptive({2, 8});
    adaptive.fill_uniform(rng, -1, 1);
    Tensor<double> zero_gate({8}), one_gate({8});
    one_gate.fill(1.0);

    Tensor<double> closed = build_prompt(cond, adaptive, zero_gate, zero_gate);
    EXPECT_EQ(closed.data, adaptive.data);

    Tensor<double> zero_adaptive({2, 8});
    Tensor<double> open = build_prompt(cond, zero_adaptive, one_gate, one_gate);
    for (int j = 0; j < 8; ++j) {
        EXPECT_EQ(open(0, j), cond.forgery.data[j]);
        EXPECT_EQ(open(1, j), cond.image.data[j]);
    }
}

TEST(BuildPrompt, TinyGateBound) {
    Rng rng(12);
    ConditionPair<double> cond;
    cond.forgery = Tensor<double>({1, 8});
    cond.image = Tensor<double>({1, 8});
    cond.forgery.fill_uniform(rng, -1, 1);
    cond.forgery.data[0] = 1.0;
    cond.image.fill_uniform(rng, -1, 1);
    cond.image.data[0] = -1.0;
    Tensor<double> adaptive({2, 8});
    adaptive.fill_uniform(rng, -1, 1);
    Tensor<double> tiny = Tensor<double>::full({8}, 1e-6);
    Tensor<double> out = build_prompt(cond, adaptive, tiny, tiny);
    double max_dev = 0;
    for (size_t i = 0; i < out.data.size(); ++i)
        max_dev = std::max(max_dev, std::abs(out.data[i] - adaptive.data[i]));
    EXPECT_LE(max_dev, 1e-6);
}

TEST(BuildPrompt, LinearInConditions) {
    Rng rng(13);
    Tensor<double> adaptive({2, 8}), gf({8}), gi({8});
    adaptive.fill_uniform(rng, -1, 1);
    gf.fill_uniform(rng, -1, 1);
    gi.fill_uniform(rng, -1, 1);
    auto mk = [&](double scale) {
        ConditionPair<double> c;
        c.forgery = Tensor<double>({1, 8});
        c.image = Tensor<double>({1, 8});
        for (int j = 0; j < 8; ++j) {
            c.forgery.data[j] = scale * (j + 1);
            c.image.data[j] = scale * (8 - j);
        }
        return c;
    };
    Tensor<double> p1 = build_prompt(mk(1.0), adaptive, gf, gi);
    Tensor<double> p2 = build_prompt(mk(2.0), adaptive, gf, gi);
    // doubling the conditions doubles the gated part exactly
    for (size_t i = 0; i < p1.data.size(); ++i) {
        double lhs = p2.data[i] - adaptive.data[i];
        double rhs = 2.0 * (p1.data[i] - adaptive.data[i]);
        EXPECT_NEAR(lhs, rhs, 1e-12);
    }
}

TEST(BuildPrompt, ShapeMismatchRejected) {
    ConditionPair<double> cond;
    cond.forgery = Tensor<double>({1, 8});
    cond.image = Tensor<double>({1, 8});
    Tensor<double> adaptive({2, 4});
    Tensor<double> gate({8});
    EXPECT_THROW(build_prompt(cond, adaptive, gate, gate), ArgumentError);
}

TEST(Extractors, SeparateParameterStorage) {
    auto p = init_params<double>(tiny_cfg(), tiny_cil(), ModelFlags{}, 14);
    Image view = random_view(16, 15);
    ConditionPair<double> before = extract_conditions(view, p);
    // perturb only the forgery extractor
    p.cil_f.stages[0].w.data[0] += 0.5;
    ConditionPair<double> after = extract_conditions(view, p);
    EXPECT_NE(before.forgery.data, after.forgery.data);
    EXPECT_EQ(before.image.data, after.image.data);
}

// With only the auxiliary loss, gradient reaches the forgery extractor and
// aux head; the image extractor is touched only through the prompt path.
TEST(Gradients, AuxLossPattern) {
    auto p = init_params<double>(tiny_cfg(), tiny_cil(), ModelFlags{}, 16);
    Image view = random_view(16, 17);
    Rng noise(18);
    visit_params(p, [&](const std::string&, Tensor<double>& t, ParamKind) {
        for (auto& v : t.data) v += noise.uniform(-0.1, 0.1);
    });

    Graph<double> g;
    std::vector<VarEntry<double>> entries;
    ModelVars<double> v = make_vars<double>(g, p, GradMode::Trainable, false, nullptr, &entries);
    ConditionGraphOut<double> cond = extract_conditions_g(g, v, p, view);
    int aux = aux_logit_g(g, v, cond.forgery, p.enc.dim);
    int laux = g.bce_with_logits(aux, 1.0);
    g.backward(laux);

    auto grad_norm_for = [&](const std::string& prefix) {
        double norm = 0;
        for (const auto& e : entries)
            if (e.name.rfind(prefix, 0) == 0 && g.has_grad(e.id))
                for (double gv : g.grad(e.id).data) norm += gv * gv;
        return norm;
    };
    EXPECT_GT(grad_norm_for("cil.forgery"), 0.0);
    EXPECT_GT(grad_norm_for("cil.aux"), 0.0);
    EXPECT_EQ(grad_norm_for("cil.image"), 0.0);
    EXPECT_EQ(grad_norm_for("blocks."), 0.0);
    EXPECT_EQ(grad_norm_for("classifier"), 0.0);
}

// Through the full loss, the image extractor receives gradient via the
// prompt path.
TEST(Gradients, PromptPathReachesImageExtractor) {
    auto p = init_params<double>(tiny_cfg(), tiny_cil(), ModelFlags{}, 19);
    Rng noise(20);
    visit_params(p, [&](const std::string&, Tensor<double>& t, ParamKind) {
        for (auto& v : t.data) v += noise.uniform(-0.1, 0.1);
    });
    Image view = random_view(16, 21);
    Graph<double> g;
    std::vector<VarEntry<double>> entries;
    ModelVars<double> v = make_vars<double>(g, p, GradMode::Trainable, false, nullptr, &entries);
    LossGraph<double> lg = build_total_loss_g(g, v, p, view, 1, 0.0);
    g.backward(lg.total);
    double norm = 0;
    for (const auto& e : entries)
        if (e.name.rfind("cil.image", 0) == 0 && g.has_grad(e.id))
            for (double gv : g.grad(e.id).data) norm += gv * gv;
    EXPECT_GT(norm, 0.0);
}
