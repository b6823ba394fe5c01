#pragma once

#include <algorithm>
#include <map>
#include <numeric>
#include <string>
#include <vector>

#include "iapl/data.hpp"
#include "iapl/errors.hpp"

namespace iapl {

// Fraction of samples where [prob >= threshold] matches the label.
inline double accuracy(const std::vector<double>& probs, const std::vector<int>& labels,
                       double threshold = 0.5) {
    if (probs.size() != labels.size()) throw ArgumentError("accuracy: length mismatch");
    if (probs.empty()) throw ArgumentError("accuracy: empty input");
    size_t hit = 0;
    for (size_t i = 0; i < probs.size(); ++i) {
        int pred = probs[i] >= threshold ? 1 : 0;
        if (pred == labels[i]) ++hit;
    }
    return static_cast<double>(hit) / probs.size();
}

// Rank-based average precision, no interpolation. Scores sorted descending
// with a stable tie-break on the original order; AP is the mean of
// precision-at-rank over the positives.
inline double average_precision(const std::vector<double>& scores, const std::vector<int>& labels) {
    if (scores.size() != labels.size()) throw ArgumentError("average_precision: length mismatch");
    int positives = 0;
    for (int l : labels) positives += l ? 1 : 0;
    if (positives == 0) throw MetricError("average_precision: no positive labels");
    std::vector<int> idx(scores.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(),
                     [&](int a, int b) { return scores[a] > scores[b]; });
    double ap = 0.0;
    int seen_pos = 0;
    for (size_t rank = 0; rank < idx.size(); ++rank) {
        if (labels[idx[rank]]) {
            ++seen_pos;
            ap += static_cast<double>(seen_pos) / static_cast<double>(rank + 1);
        }
    }
    return ap / positives;
}

struct FamilyMetrics {
    double acc = 0.0;
    double ap = 0.0;  // versus the real samples; 0 for the real row itself
    int count = 0;
};

struct MetricsReport {
    double acc = 0.0;       // micro accuracy over all samples
    double ap = 0.0;        // micro AP over all samples
    double macro_acc = 0.0; // mean of per-family accuracies
    double macro_ap = 0.0;  // mean of per-fake-family APs
    std::map<std::string, FamilyMetrics> per_family;
    int n_samples = 0;
    std::map<std::string, std::string> config_echo;
    uint64_t seed = 0;
    double wall_time_sec = 0.0;
};

// Per-family breakdown. A fake family's AP is measured against the pool of
// real samples, mirroring the per-generator splits of detection benchmarks.
inline MetricsReport compute_metrics(const std::vector<double>& probs,
                                     const std::vector<int>& labels,
                                     const std::vector<Family>& families) {
    if (probs.size() != labels.size() || probs.size() != families.size())
        throw ArgumentError("compute_metrics: length mismatch");
    if (probs.empty()) throw ArgumentError("compute_metrics: empty input");
    MetricsReport r;
    r.n_samples = static_cast<int>(probs.size());
    r.acc = accuracy(probs, labels);
    bool any_pos = std::any_of(labels.begin(), labels.end(), [](int l) { return l == 1; });
    r.ap = any_pos ? average_precision(probs, labels) : 0.0;

    std::map<Family, std::vector<size_t>> groups;
    for (size_t i = 0; i < probs.size(); ++i) groups[families[i]].push_back(i);

    std::vector<size_t> real_idx;
    if (groups.count(Family::Real)) real_idx = groups[Family::Real];

    double acc_sum = 0.0, ap_sum = 0.0;
    int fam_n = 0, fake_fam_n = 0;
    for (const auto& [fam, idx] : groups) {
        FamilyMetrics fm;
        fm.count = static_cast<int>(idx.size());
        std::vector<double> p;
        std::vector<int> l;
        for (size_t i : idx) {
            p.push_back(probs[i]);
            l.push_back(labels[i]);
        }
        fm.acc = accuracy(p, l);
        if (fam != Family::Real) {
            std::vector<double> p2 = p;
            std::vector<int> l2 = l;
            for (size_t i : real_idx) {
                p2.push_back(probs[i]);
                l2.push_back(labels[i]);
            }
            bool pos = std::any_of(l2.begin(), l2.end(), [](int x) { return x == 1; });
            fm.ap = pos ? average_precision(p2, l2) : 0.0;
            ap_sum += fm.ap;
            ++fake_fam_n;
        }
        acc_sum += fm.acc;
        ++fam_n;
        r.per_family[family_name(fam)] = fm;
    }
    r.macro_acc = fam_n ? acc_sum / fam_n : 0.0;
    r.macro_ap = fake_fam_n ? ap_sum / fake_fam_n : 0.0;
    return r;
}

}  // namespace iapl
