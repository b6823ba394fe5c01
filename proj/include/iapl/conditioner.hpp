#pragma once

#include <utility>

#include "iapl/dct.hpp"
#include "iapl/encoder.hpp"
#include "iapl/graph.hpp"
#include "iapl/image.hpp"
#include "iapl/model.hpp"
#include "iapl/residual.hpp"

namespace iapl {

template <typename T>
struct ConditionPair {
    Tensor<T> forgery;  // C_f, [1, D]
    Tensor<T> image;    // C_i, [1, D]
    std::pair<int, int> source_position{0, 0};
};

// Residual planes as a [3K, side, side] tensor, channel-major.
template <typename T>
Tensor<T> residual_to_tensor(const ResidualStack& rs) {
    Tensor<T> out({rs.plane_count(), rs.side, rs.side});
    size_t off = 0;
    for (const auto& plane : rs.planes) {
        for (double v : plane) out.data[off++] = static_cast<T>(v);
    }
    return out;
}

// Conv(3x3, stride 2) + ReLU stages, global average pool, linear map to D.
template <typename T>
int cnn_forward_g(Graph<T>& g, const CnnVars<T>& cv, int input) {
    int x = input;
    for (const auto& [w, b] : cv.stages) x = g.relu(g.conv3x3_s2(x, w, b));
    int pooled = g.global_avg_pool(x);
    return g.add_rowvec(g.matmul(pooled, cv.fc_w), cv.fc_b);
}

template <typename T>
Tensor<T> cnn_forward(const ResidualStack& rs, const CnnParams<T>& cnn) {
    if (rs.plane_count() != cnn.stages.at(0).w.shape[1])
        throw ArgumentError("cnn_forward: residual plane count does not match extractor input");
    Graph<T> g;
    CnnVars<T> cv;
    for (const auto& st : cnn.stages) cv.stages.emplace_back(g.leaf(st.w, false), g.leaf(st.b, false));
    cv.fc_w = g.leaf(cnn.fc_w, false);
    cv.fc_b = g.leaf(cnn.fc_b, false);
    int out = cnn_forward_g(g, cv, g.value(residual_to_tensor<T>(rs)));
    return g.val(out);
}

// Richest-texture patch of the view, filtered and pushed through both
// extractors.
template <typename T>
ConditionPair<T> extract_conditions(const Image& view, const ModelParams<T>& p) {
    if (view.height < p.cil.cond_patch || view.width < p.cil.cond_patch)
        throw ArgumentError("extract_conditions: view smaller than cond_patch");
    PatchGrid grid = partition_patches(view, p.cil.cond_patch);
    size_t best = select_richest_patch(grid);
    ResidualStack rs = highpass_residual(grid.patches[best]);
    ConditionPair<T> out;
    out.forgery = cnn_forward(rs, p.cil_f);
    out.image = cnn_forward(rs, p.cil_i);
    out.source_position = grid.positions[best];
    return out;
}

template <typename T>
struct ConditionGraphOut {
    int forgery = -1;  // [1, D]
    int image = -1;    // [1, D]
    std::pair<int, int> source_position{0, 0};
};

template <typename T>
ConditionGraphOut<T> extract_conditions_g(Graph<T>& g, const ModelVars<T>& v,
                                          const ModelParams<T>& p, const Image& view) {
    if (view.height < p.cil.cond_patch || view.width < p.cil.cond_patch)
        throw ArgumentError("extract_conditions: view smaller than cond_patch");
    PatchGrid grid = partition_patches(view, p.cil.cond_patch);
    size_t best = select_richest_patch(grid);
    int residual = g.value(residual_to_tensor<T>(highpass_residual(grid.patches[best])));
    ConditionGraphOut<T> out;
    out.forgery = cnn_forward_g(g, v.cil_f, residual);
    out.image = cnn_forward_g(g, v.cil_i, residual);
    out.source_position = grid.positions[best];
    return out;
}

template <typename T>
double aux_logit(const Tensor<T>& forgery_cond, const Tensor<T>& w, const Tensor<T>& b) {
    if (forgery_cond.numel() != w.numel()) throw ArgumentError("aux_logit: dimension mismatch");
    double acc = static_cast<double>(b.data[0]);
    for (size_t i = 0; i < w.numel(); ++i)
        acc += static_cast<double>(forgery_cond.data[i]) * static_cast<double>(w.data[i]);
    return acc;
}

template <typename T>
int aux_logit_g(Graph<T>& g, const ModelVars<T>& v, int forgery_cond, int dim) {
    int w_col = g.reshape(v.aux_w, {dim, 1});
    return g.add(g.matmul(forgery_cond, w_col), g.reshape(v.aux_b, {1, 1}));
}

// P = { alpha_f (.) C_f + A[0,:], alpha_i (.) C_i + A[1,:] }
template <typename T>
Tensor<T> build_prompt(const ConditionPair<T>& cond, const Tensor<T>& adaptive,
                       const Tensor<T>& alpha_f, const Tensor<T>& alpha_i) {
    int d = static_cast<int>(cond.forgery.numel());
    if (adaptive.rank() != 2 || adaptive.shape[0] != 2 || adaptive.shape[1] != d ||
        static_cast<int>(alpha_f.numel()) != d || static_cast<int>(alpha_i.numel()) != d ||
        cond.image.numel() != cond.forgery.numel())
        throw ArgumentError("build_prompt: shape mismatch");
    Tensor<T> out({2, d});
    for (int j = 0; j < d; ++j) {
        out(0, j) = alpha_f.data[j] * cond.forgery.data[j] + adaptive(0, j);
        out(1, j) = alpha_i.data[j] * cond.image.data[j] + adaptive(1, j);
    }
    return out;
}

template <typename T>
int build_prompt_g(Graph<T>& g, const ModelVars<T>& v, int forgery_cond, int image_cond) {
    int row0 = g.add(g.colgate(forgery_cond, v.gate_f), g.slice_rows(v.adaptive, 0, 1));
    int row1 = g.add(g.colgate(image_cond, v.gate_i), g.slice_rows(v.adaptive, 1, 2));
    return g.concat_rows({row0, row1});
}

}  // namespace iapl
