#pragma once

#include <cmath>
#include <optional>
#include <vector>

#include "iapl/errors.hpp"
#include "iapl/graph.hpp"

namespace iapl {

// -(y log s(z) + (1-y) log(1-s(z))), evaluated in the stable log-sum-exp form.
inline double bce_loss(double logit, int label) {
    if (!std::isfinite(logit)) throw ArgumentError("bce_loss: non-finite logit");
    if (label != 0 && label != 1) throw ArgumentError("bce_loss: label must be 0 or 1");
    return std::max(logit, 0.0) - logit * label + std::log1p(std::exp(-std::abs(logit)));
}

struct LossValues {
    double l_cls = 0.0;
    double l_aux = 0.0;
    double total = 0.0;
};

inline LossValues total_loss(double cls_logit, std::optional<double> aux_logit, int label,
                             double lambda_aux) {
    LossValues lv;
    lv.l_cls = bce_loss(cls_logit, label);
    lv.l_aux = aux_logit ? bce_loss(*aux_logit, label) : 0.0;
    lv.total = lv.l_cls + lambda_aux * lv.l_aux;
    return lv;
}

inline double clamp_prob(double p) {
    return std::clamp(p, kEntropyClamp, 1.0 - kEntropyClamp);
}

inline double binary_entropy_scalar(double p) {
    double pc = clamp_prob(p);
    return -(pc * std::log(pc) + (1.0 - pc) * std::log(1.0 - pc));
}

// Entropy of the mean sigmoid across views.
inline double averaged_entropy(const std::vector<double>& logits) {
    if (logits.empty()) throw ArgumentError("averaged_entropy: empty input");
    double mean = 0.0;
    for (double z : logits) mean += sigmoid_scalar(z);
    mean /= static_cast<double>(logits.size());
    return binary_entropy_scalar(mean);
}

// Mean of per-view entropies.
inline double pointwise_entropy(const std::vector<double>& logits) {
    if (logits.empty()) throw ArgumentError("pointwise_entropy: empty input");
    double acc = 0.0;
    for (double z : logits) acc += binary_entropy_scalar(sigmoid_scalar(z));
    return acc / static_cast<double>(logits.size());
}

// S_c = 2 |s(z) - 0.5|
inline double confidence(double logit) {
    if (!std::isfinite(logit)) throw ArgumentError("confidence: non-finite logit");
    return 2.0 * std::abs(sigmoid_scalar(logit) - 0.5);
}

}  // namespace iapl
