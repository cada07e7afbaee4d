#pragma once

#include <algorithm>
#include <cstddef>
#include <limits>
#include <map>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "ocdmlc/data.hpp"
#include "ocdmlc/metrics.hpp"

namespace ocdmlc {

struct CombinationStats {
    std::size_t s_test = 0;        // distinct label sets
    std::size_t s_test_train = 0;  // of those, sets never seen in training
};

inline CombinationStats combination_stats(const std::vector<LabelSet>& sets, const std::vector<LabelSet>& train) {
    std::set<LabelSet> seen;
    for (const auto& s : train) seen.insert(make_label_set(s));
    std::set<LabelSet> distinct;
    for (const auto& s : sets) distinct.insert(make_label_set(s));
    CombinationStats out;
    out.s_test = distinct.size();
    for (const auto& s : distinct)
        if (!seen.count(s)) ++out.s_test_train;
    return out;
}

/// acc[t] = fraction of instances whose t-th predicted label is in the gold
/// set, over instances whose horizon max(|pred|, |gold|) exceeds t. A missing
/// prediction inside the horizon counts as wrong.
inline std::vector<double> positionwise_accuracy(const std::vector<LabelSequence>& preds,
                                                 const std::vector<LabelSet>& golds) {
    detail::require_same_length(preds.size(), golds.size());
    std::size_t horizon = 0;
    for (std::size_t i = 0; i < preds.size(); ++i) horizon = std::max({horizon, preds[i].size(), golds[i].size()});
    std::vector<double> hits(horizon, 0.0), counts(horizon, 0.0);
    for (std::size_t i = 0; i < preds.size(); ++i) {
        const std::size_t h = std::max(preds[i].size(), golds[i].size());
        for (std::size_t t = 0; t < h; ++t) {
            counts[t] += 1.0;
            if (t < preds[i].size() && std::binary_search(golds[i].begin(), golds[i].end(), preds[i][t])) hits[t] += 1.0;
        }
    }
    std::vector<double> acc(horizon, 0.0);
    for (std::size_t t = 0; t < horizon; ++t) acc[t] = counts[t] > 0.0 ? hits[t] / counts[t] : 0.0;
    return acc;
}

struct FrequencyBucket {
    std::size_t lo = 0;
    std::size_t hi = 0;  // inclusive; max() for an open bucket
    std::size_t instances = 0;
    double mean_ebf1 = 0.0;

    std::string label() const {
        if (lo == hi) return std::to_string(lo);
        if (hi == std::numeric_limits<std::size_t>::max()) return std::to_string(lo) + "+";
        return std::to_string(lo) + "-" + std::to_string(hi);
    }
};

/// Lower edges of the default buckets {0, 1-5, 6-20, 21+}.
inline std::vector<std::size_t> default_bucket_edges() { return {0, 1, 6, 21}; }

/// Mean instance ebF1 grouped by how often the gold combination occurs in
/// training. `edges` are ascending bucket lower bounds starting at 0; empty
/// buckets are omitted.
inline std::vector<FrequencyBucket> ebf1_vs_frequency(const std::vector<LabelSet>& preds,
                                                      const std::vector<LabelSet>& golds,
                                                      const std::vector<LabelSet>& train,
                                                      const std::vector<std::size_t>& edges = default_bucket_edges()) {
    detail::require_same_length(preds.size(), golds.size());
    if (edges.empty() || edges.front() != 0 || !std::is_sorted(edges.begin(), edges.end()) ||
        std::adjacent_find(edges.begin(), edges.end()) != edges.end()) {
        throw std::invalid_argument("ebf1_vs_frequency: edges must be strictly ascending and start at 0");
    }
    std::map<LabelSet, std::size_t> freq;
    for (const auto& s : train) ++freq[make_label_set(s)];

    std::vector<FrequencyBucket> buckets(edges.size());
    std::vector<double> sums(edges.size(), 0.0);
    for (std::size_t b = 0; b < edges.size(); ++b) {
        buckets[b].lo = edges[b];
        buckets[b].hi = b + 1 < edges.size() ? edges[b + 1] - 1 : std::numeric_limits<std::size_t>::max();
    }
    for (std::size_t i = 0; i < golds.size(); ++i) {
        auto it = freq.find(make_label_set(golds[i]));
        const std::size_t f = it == freq.end() ? 0 : it->second;
        const auto b = static_cast<std::size_t>(std::upper_bound(edges.begin(), edges.end(), f) - edges.begin()) - 1;
        ++buckets[b].instances;
        sums[b] += example_f1(golds[i], preds[i]);
    }
    std::vector<FrequencyBucket> out;
    for (std::size_t b = 0; b < buckets.size(); ++b) {
        if (buckets[b].instances == 0) continue;
        buckets[b].mean_ebf1 = sums[b] / static_cast<double>(buckets[b].instances);
        out.push_back(buckets[b]);
    }
    return out;
}

}  // namespace ocdmlc
