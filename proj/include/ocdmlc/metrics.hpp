#pragma once

#include <algorithm>
#include <cstddef>
#include <iomanip>
#include <iterator>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "ocdmlc/data.hpp"

namespace ocdmlc {

struct MetricsReport {
    double acc = 0.0;
    double ha = 0.0;
    double ebf1 = 0.0;
    double maf1 = 0.0;
    double mif1 = 0.0;
    double average = 0.0;
};

struct ConfusionCounts {
    std::vector<std::size_t> tp, fp, fn;

    explicit ConfusionCounts(int label_count = 0)
        : tp(static_cast<std::size_t>(label_count)), fp(tp.size()), fn(tp.size()) {}
};

namespace detail {
inline void require_same_length(std::size_t a, std::size_t b) {
    if (a != b) throw std::invalid_argument("metrics: golds and preds differ in length");
}
inline std::size_t intersection_size(const LabelSet& a, const LabelSet& b) {
    std::vector<int> out;
    std::set_intersection(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(out));
    return out.size();
}
}  // namespace detail

inline double subset_accuracy(const std::vector<LabelSet>& golds, const std::vector<LabelSet>& preds) {
    detail::require_same_length(golds.size(), preds.size());
    if (golds.empty()) return 0.0;
    std::size_t hits = 0;
    for (std::size_t i = 0; i < golds.size(); ++i) hits += golds[i] == preds[i];
    return static_cast<double>(hits) / static_cast<double>(golds.size());
}

inline double hamming_accuracy(const std::vector<LabelSet>& golds, const std::vector<LabelSet>& preds, int L) {
    detail::require_same_length(golds.size(), preds.size());
    if (golds.empty() || L < 1) return 0.0;
    double total = 0.0;
    for (std::size_t i = 0; i < golds.size(); ++i) {
        // Disagreements are the symmetric difference.
        const std::size_t common = detail::intersection_size(golds[i], preds[i]);
        const std::size_t wrong = golds[i].size() + preds[i].size() - 2 * common;
        total += static_cast<double>(L - static_cast<int>(wrong)) / L;
    }
    return total / static_cast<double>(golds.size());
}

/// Mean of 2|G n P| / (|G| + |P|); an instance with both sets empty scores 1.
inline double example_f1(const LabelSet& gold, const LabelSet& pred) {
    const std::size_t denom = gold.size() + pred.size();
    if (denom == 0) return 1.0;
    return 2.0 * static_cast<double>(detail::intersection_size(gold, pred)) / static_cast<double>(denom);
}

inline double example_f1(const std::vector<LabelSet>& golds, const std::vector<LabelSet>& preds) {
    detail::require_same_length(golds.size(), preds.size());
    if (golds.empty()) return 0.0;
    double total = 0.0;
    for (std::size_t i = 0; i < golds.size(); ++i) total += example_f1(golds[i], preds[i]);
    return total / static_cast<double>(golds.size());
}

inline ConfusionCounts confusion_counts(const std::vector<LabelSet>& golds, const std::vector<LabelSet>& preds,
                                        int L) {
    detail::require_same_length(golds.size(), preds.size());
    ConfusionCounts c(L);
    for (std::size_t i = 0; i < golds.size(); ++i) {
        for (int l : preds[i]) {
            if (l < 0 || l >= L) throw std::invalid_argument("metrics: predicted label out of range");
            if (std::binary_search(golds[i].begin(), golds[i].end(), l)) ++c.tp[static_cast<std::size_t>(l)];
            else ++c.fp[static_cast<std::size_t>(l)];
        }
        for (int l : golds[i]) {
            if (l < 0 || l >= L) throw std::invalid_argument("metrics: gold label out of range");
            if (!std::binary_search(preds[i].begin(), preds[i].end(), l)) ++c.fn[static_cast<std::size_t>(l)];
        }
    }
    return c;
}

/// Per-label F1 averaged over labels; a label with 2tp+fp+fn = 0 contributes 0.
inline double macro_f1(const ConfusionCounts& c) {
    if (c.tp.empty()) return 0.0;
    double total = 0.0;
    for (std::size_t i = 0; i < c.tp.size(); ++i) {
        const double denom = 2.0 * c.tp[i] + c.fp[i] + c.fn[i];
        if (denom > 0) total += 2.0 * c.tp[i] / denom;
    }
    return total / static_cast<double>(c.tp.size());
}

inline double micro_f1(const ConfusionCounts& c) {
    double tp = 0, fp = 0, fn = 0;
    for (std::size_t i = 0; i < c.tp.size(); ++i) {
        tp += c.tp[i];
        fp += c.fp[i];
        fn += c.fn[i];
    }
    const double denom = 2 * tp + fp + fn;
    return denom > 0 ? 2 * tp / denom : 0.0;
}

inline MetricsReport evaluate_predictions(const std::vector<LabelSet>& golds, const std::vector<LabelSet>& preds,
                                          int L) {
    MetricsReport r;
    const ConfusionCounts counts = confusion_counts(golds, preds, L);
    r.acc = subset_accuracy(golds, preds);
    r.ha = hamming_accuracy(golds, preds, L);
    r.ebf1 = example_f1(golds, preds);
    r.maf1 = macro_f1(counts);
    r.mif1 = micro_f1(counts);
    r.average = (r.acc + r.ha + r.ebf1 + r.maf1 + r.mif1) / 5.0;
    return r;
}

inline std::string metrics_csv_header() { return "model,split,acc,ha,ebf1,maf1,mif1,average"; }

inline std::string metrics_csv_row(const std::string& model, const std::string& split, const MetricsReport& r) {
    std::ostringstream os;
    os << std::fixed << std::setprecision(6) << model << ',' << split << ',' << r.acc << ',' << r.ha << ','
       << r.ebf1 << ',' << r.maf1 << ',' << r.mif1 << ',' << r.average;
    return os.str();
}

inline std::string metrics_table(const std::vector<std::pair<std::string, MetricsReport>>& rows,
                                 const std::string& split) {
    std::ostringstream os;
    std::size_t width = 5;
    for (const auto& [name, _] : rows) width = std::max(width, name.size());
    os << std::left << std::setw(static_cast<int>(width)) << "model" << "  split           ACC      HA    ebF1    maF1    miF1  Average\n";
    for (const auto& [name, r] : rows) {
        os << std::left << std::setw(static_cast<int>(width)) << name << "  " << std::setw(11) << split << std::right
           << std::fixed << std::setprecision(4) << std::setw(8) << r.acc << std::setw(8) << r.ha << std::setw(8)
           << r.ebf1 << std::setw(8) << r.maf1 << std::setw(8) << r.mif1 << std::setw(9) << r.average << '\n';
    }
    return os.str();
}

}  // namespace ocdmlc
