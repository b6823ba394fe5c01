#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "iapl/errors.hpp"
#include "iapl/tensor.hpp"

namespace iapl {

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

template <typename T>
struct AdamState {
    std::vector<Tensor<T>> m, v;
    long step = 0;

    template <typename PtrVec>
    void init_like(const PtrVec& params) {
        m.clear();
        v.clear();
        for (const auto* p : params) {
            m.push_back(Tensor<T>(p->shape));
            v.push_back(Tensor<T>(p->shape));
        }
        step = 0;
    }
};

// Standard Adam with bias correction. Moment math runs in double so float
// models do not lose the bias-correction terms early on.
template <typename T>
void adam_step(const std::vector<Tensor<T>*>& params, const std::vector<const Tensor<T>*>& grads,
               const std::vector<std::string>& names, AdamState<T>& st, const AdamConfig& cfg) {
    if (params.size() != grads.size() || (!names.empty() && names.size() != params.size()))
        throw ArgumentError("adam_step: parameter/gradient count mismatch");
    if (st.m.size() != params.size()) st.init_like(params);
    st.step += 1;
    double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(st.step));
    double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(st.step));
    for (size_t i = 0; i < params.size(); ++i) {
        Tensor<T>& p = *params[i];
        const Tensor<T>& g = *grads[i];
        if (!p.same_shape(g) || !p.same_shape(st.m[i]))
            throw ArgumentError("adam_step: shape mismatch at tensor " +
                                (names.empty() ? std::to_string(i) : names[i]));
        for (size_t k = 0; k < p.data.size(); ++k) {
            double gv = static_cast<double>(g.data[k]);
            if (!std::isfinite(gv))
                throw TrainError("non-finite gradient in tensor " +
                                 (names.empty() ? std::to_string(i) : names[i]));
            double m = cfg.beta1 * st.m[i].data[k] + (1.0 - cfg.beta1) * gv;
            double v = cfg.beta2 * st.v[i].data[k] + (1.0 - cfg.beta2) * gv * gv;
            st.m[i].data[k] = static_cast<T>(m);
            st.v[i].data[k] = static_cast<T>(v);
            double update = cfg.lr * (m / bc1) / (std::sqrt(v / bc2) + cfg.eps);
            p.data[k] = static_cast<T>(p.data[k] - update);
        }
    }
}

}  // namespace iapl
