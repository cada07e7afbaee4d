#pragma once

// Brute-force references for the analytic OCD targets and the beam search.
// Everything here enumerates literally; nothing calls optimal_q or beam_search.

#include <algorithm>
#include <cmath>
#include <compare>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <vector>

#include "ocdmlc/data.hpp"
#include "ocdmlc/graph.hpp"
#include "ocdmlc/model.hpp"
#include "ocdmlc/ocd.hpp"

namespace ocdmlc::oracle {

class BudgetError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct OracleBudget {
    int max_labels = 5;
    int max_targets = 3;
    int max_prefix = 5;
    std::size_t max_enumeration = 100000;
};

/// sum_{k=0}^{n} n!/(n-k)!: the number of distinct-label sequences over n labels.
inline std::size_t sequence_count(int n) {
    std::size_t total = 0, perm = 1;
    for (int k = 0; k <= n; ++k) {
        total += perm;
        perm *= static_cast<std::size_t>(n - k);
    }
    return total;
}

inline void check_budget(int label_count, const OracleBudget& budget) {
    if (label_count > budget.max_labels) {
        throw BudgetError("oracle: L=" + std::to_string(label_count) + " exceeds budget " +
                          std::to_string(budget.max_labels));
    }
    if (sequence_count(label_count) >= budget.max_enumeration) throw BudgetError("oracle: enumeration too large");
}

/// Visit every ordered sequence of distinct labels drawn from `pool`
/// (including the empty one), in ascending-label DFS order.
inline void for_each_sequence(const std::vector<int>& pool, const std::function<void(const std::vector<int>&)>& visit) {
    std::vector<int> current;
    std::vector<bool> used(pool.size(), false);
    std::function<void()> rec = [&] {
        visit(current);
        for (std::size_t i = 0; i < pool.size(); ++i) {
            if (used[i]) continue;
            used[i] = true;
            current.push_back(pool[i]);
            rec();
            current.pop_back();
            used[i] = false;
        }
    };
    rec();
}

namespace detail {

inline std::vector<int> unused_labels(const std::vector<int>& taken, int L) {
    std::vector<int> pool;
    for (int l = 0; l < L; ++l)
        if (std::find(taken.begin(), taken.end(), l) == taken.end()) pool.push_back(l);
    return pool;
}

template <class Score, class T>
T best_completion(const PrefixState& prefix, int action, const OracleBudget& budget, Score score, T worst) {
    check_budget(prefix.label_count(), budget);
    if (static_cast<int>(prefix.emitted().size()) > budget.max_prefix) throw BudgetError("oracle: prefix too long");
    if (static_cast<int>(prefix.targets().size()) > budget.max_targets) throw BudgetError("oracle: too many targets");
    const int L = prefix.label_count();
    if (action < 0 || action > L) throw std::invalid_argument("oracle: action out of range");
    std::vector<int> head = prefix.emitted();
    if (std::find(head.begin(), head.end(), action) != head.end()) {
        throw std::invalid_argument("oracle: action already emitted");
    }
    if (action == L) return score(head);
    head.push_back(action);
    T best = worst;
    for_each_sequence(unused_labels(head, L), [&](const std::vector<int>& tail) {
        std::vector<int> full = head;
        full.insert(full.end(), tail.begin(), tail.end());
        best = std::max(best, score(full));
    });
    return best;
}

}  // namespace detail

/// Reward of the best completion after `action`, by exhaustive enumeration.
inline int brute_q(const PrefixState& prefix, int action, const OracleBudget& budget = {}) {
    const auto& targets = prefix.targets();
    auto score = [&](const std::vector<int>& seq) {
        int missing = 0, false_alarms = 0;
        for (int t : targets)
            if (std::find(seq.begin(), seq.end(), t) == seq.end()) ++missing;
        for (int s : seq)
            if (std::find(targets.begin(), targets.end(), s) == targets.end()) ++false_alarms;
        return -missing - false_alarms;
    };
    return detail::best_completion(prefix, action, budget, score, std::numeric_limits<int>::min());
}

/// Exact nonnegative fraction with a positive denominator.
struct Rational {
    std::int64_t num = 0;
    std::int64_t den = 1;

    Rational() = default;
    Rational(std::int64_t n, std::int64_t d) : num(n), den(d) {
        if (den <= 0) throw std::invalid_argument("Rational: denominator must be positive");
        const auto g = std::gcd(num, den);
        if (g > 1) {
            num /= g;
            den /= g;
        }
    }

    friend bool operator==(const Rational& a, const Rational& b) { return a.num * b.den == b.num * a.den; }
    friend std::strong_ordering operator<=>(const Rational& a, const Rational& b) {
        return a.num * b.den <=> b.num * a.den;
    }
    double value() const { return static_cast<double>(num) / static_cast<double>(den); }
};

/// Best achievable example-based F1 after `action`, by exhaustive enumeration.
inline Rational brute_q_ebf1(const PrefixState& prefix, int action, const OracleBudget& budget = {}) {
    const auto& targets = prefix.targets();
    auto score = [&](const std::vector<int>& seq) {
        std::int64_t hits = 0;
        for (int s : seq)
            if (std::find(targets.begin(), targets.end(), s) != targets.end()) ++hits;
        const auto denom = static_cast<std::int64_t>(targets.size() + seq.size());
        return denom == 0 ? Rational(1, 1) : Rational(2 * hits, denom);
    };
    return detail::best_completion(prefix, action, budget, score, Rational(0, 1));
}

/// Actions (labels not yet emitted, plus eos) attaining the maximum of `q`.
template <class Q>
std::vector<int> argmax_actions(const PrefixState& prefix, Q q) {
    std::vector<int> best_actions;
    bool first = true;
    decltype(q(0)) best{};
    for (int a = 0; a <= prefix.label_count(); ++a) {
        if (a < prefix.label_count() && prefix.is_emitted(a)) continue;
        const auto v = q(a);
        if (first || v > best) {
            best = v;
            best_actions.assign(1, a);
            first = false;
        } else if (v == best) {
            best_actions.push_back(a);
        }
    }
    return best_actions;
}

enum class BruteScorer { path, br, joint };

struct BruteResult {
    LabelSequence sequence;  // ends with eos
    double score = -std::numeric_limits<double>::infinity();
    std::size_t evaluated = 0;
};

/// Exact argmax over every distinct-label sequence followed by eos of
/// log P_path, log P_br, or log P_path + log P_br. Ties follow the decoder's
/// order: shorter first, then lexicographic.
inline BruteResult brute_best_hypothesis(const Model& model, std::span<const int> tokens, BruteScorer scorer,
                                         const OracleBudget& budget = {}) {
    const int L = model.label_count();
    check_budget(L, budget);
    Graph g;
    const EncoderStates enc = model.encode(g, tokens);
    const std::vector<double> yhat = g.value(model.br_forward(g, enc).probs).values();

    auto log_br = [&](const std::vector<int>& labels) {
        double s = 0.0;
        for (int l = 0; l < L; ++l) {
            const bool in = std::find(labels.begin(), labels.end(), l) != labels.end();
            s += std::log(in ? yhat[static_cast<std::size_t>(l)] : 1.0 - yhat[static_cast<std::size_t>(l)]);
        }
        return s;
    };

    BruteResult best;
    auto consider = [&](LabelSequence seq, double score) {
        ++best.evaluated;
        const bool better = score > best.score ||
                            (score == best.score && (seq.size() < best.sequence.size() ||
                                                     (seq.size() == best.sequence.size() && seq < best.sequence)));
        if (best.sequence.empty() || better) {
            best.sequence = std::move(seq);
            best.score = score;
        }
    };

    // Depth-first walk sharing decoder states between sequences with a common prefix.
    std::function<void(const DecoderState&, std::vector<int>&, double)> walk =
        [&](const DecoderState& state, std::vector<int>& prefix, double log_path) {
            const int prev = prefix.empty() ? model.bos() : prefix.back();
            StepOutput step = model.decoder_step(g, state, prev, enc);
            const std::vector<double> raw = g.value(step.logprobs).values();
            // Renormalize over labels not in the prefix, plus eos.
            double mx = -std::numeric_limits<double>::infinity();
            for (int a = 0; a <= L; ++a)
                if (a == L || std::find(prefix.begin(), prefix.end(), a) == prefix.end())
                    mx = std::max(mx, raw[static_cast<std::size_t>(a)]);
            double z = 0.0;
            for (int a = 0; a <= L; ++a)
                if (a == L || std::find(prefix.begin(), prefix.end(), a) == prefix.end())
                    z += std::exp(raw[static_cast<std::size_t>(a)] - mx);
            const double lse = mx + std::log(z);

            const double finish = log_path + (raw[static_cast<std::size_t>(L)] - lse);
            LabelSequence seq = prefix;
            seq.push_back(L);
            double score = finish;
            if (scorer == BruteScorer::br) score = log_br(prefix);
            else if (scorer == BruteScorer::joint) score = finish + log_br(prefix);
            consider(std::move(seq), score);

            for (int a = 0; a < L; ++a) {
                if (std::find(prefix.begin(), prefix.end(), a) != prefix.end()) continue;
                prefix.push_back(a);
                walk(step.state, prefix, log_path + (raw[static_cast<std::size_t>(a)] - lse));
                prefix.pop_back();
            }
        };
    std::vector<int> prefix;
    walk(model.initial_state(g, enc), prefix, 0.0);
    return best;
}

}  // namespace ocdmlc::oracle
