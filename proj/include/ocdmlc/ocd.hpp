#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <iterator>
#include <limits>
#include <span>
#include <stdexcept>
#include <vector>

#include "ocdmlc/data.hpp"
#include "ocdmlc/graph.hpp"
#include "ocdmlc/model.hpp"
#include "ocdmlc/rng.hpp"

namespace ocdmlc {

/// R = -|targets \ generated| - |generated \ targets|. Occurrences of `eos`
/// (when given) are ignored, and duplicates count once.
inline int reward(const LabelSet& targets, std::span<const int> generated, int eos = -1) {
    std::vector<int> gen;
    for (int l : generated)
        if (l != eos) gen.push_back(l);
    const LabelSet g = make_label_set(std::move(gen));
    std::vector<int> diff;
    std::set_difference(targets.begin(), targets.end(), g.begin(), g.end(), std::back_inserter(diff));
    const auto missing = diff.size();
    diff.clear();
    std::set_difference(g.begin(), g.end(), targets.begin(), targets.end(), std::back_inserter(diff));
    return -static_cast<int>(missing) - static_cast<int>(diff.size());
}

/// Decoder prefix together with the bookkeeping Q* needs.
class PrefixState {
public:
    PrefixState(LabelSequence emitted, LabelSet targets, int label_count)
        : emitted_(std::move(emitted)), targets_(std::move(targets)), label_count_(label_count) {
        targets_ = make_label_set(targets_);
        for (int t : targets_)
            if (t < 0 || t >= label_count_) throw std::invalid_argument("PrefixState: target out of range");
        std::vector<bool> seen(static_cast<std::size_t>(label_count_), false);
        for (int l : emitted_) {
            if (l < 0 || l >= label_count_) throw std::invalid_argument("PrefixState: emitted id is not a label");
            if (seen[static_cast<std::size_t>(l)]) throw std::invalid_argument("PrefixState: repeated label");
            seen[static_cast<std::size_t>(l)] = true;
            if (!std::binary_search(targets_.begin(), targets_.end(), l)) ++false_alarms_;
        }
        for (int t : targets_)
            if (!seen[static_cast<std::size_t>(t)]) remaining_.push_back(t);
    }

    const LabelSequence& emitted() const noexcept { return emitted_; }
    const LabelSet& targets() const noexcept { return targets_; }
    const LabelSet& remaining() const noexcept { return remaining_; }
    int false_alarms() const noexcept { return false_alarms_; }
    int label_count() const noexcept { return label_count_; }
    int eos() const noexcept { return label_count_; }

    bool is_emitted(int a) const { return std::find(emitted_.begin(), emitted_.end(), a) != emitted_.end(); }
    bool is_remaining(int a) const { return std::binary_search(remaining_.begin(), remaining_.end(), a); }

    PrefixState extended(int label) const {
        LabelSequence e = emitted_;
        e.push_back(label);
        return PrefixState(std::move(e), targets_, label_count_);
    }

private:
    LabelSequence emitted_;
    LabelSet targets_;
    LabelSet remaining_;
    int false_alarms_ = 0;
    int label_count_ = 0;
};

/// Best terminal reward reachable after taking `action` from `prefix`,
/// completing optimally with distinct labels and then eos.
inline int optimal_q(const PrefixState& prefix, int action) {
    if (action < 0 || action > prefix.eos()) throw std::invalid_argument("optimal_q: action out of range");
    if (action == prefix.eos()) return -prefix.false_alarms() - static_cast<int>(prefix.remaining().size());
    if (prefix.is_emitted(action)) throw std::invalid_argument("optimal_q: action already emitted (mask violation)");
    if (prefix.is_remaining(action)) return -prefix.false_alarms();
    return -prefix.false_alarms() - 1;
}

struct OcdConfig {
    double tau = 1e-8;
};

inline constexpr double kHardTargetTau = 1e-6;

struct OptimalTarget {
    std::vector<double> probs;  // over L labels + eos
    std::vector<int> support;   // argmax-Q actions, ascending
};

/// exp(Q*/tau) normalized over actions not yet emitted. For tau at or below
/// kHardTargetTau the limit is taken exactly: uniform over the argmax set.
inline OptimalTarget optimal_policy(const PrefixState& prefix, double tau) {
    if (tau < 0.0) throw std::invalid_argument("optimal_policy: tau must be >= 0");
    const int A = prefix.eos() + 1;
    std::vector<int> q(static_cast<std::size_t>(A), 0);
    std::vector<bool> allowed(static_cast<std::size_t>(A), true);
    int best = std::numeric_limits<int>::min();
    for (int a = 0; a < A; ++a) {
        if (a != prefix.eos() && prefix.is_emitted(a)) {
            allowed[static_cast<std::size_t>(a)] = false;
            continue;
        }
        q[static_cast<std::size_t>(a)] = optimal_q(prefix, a);
        best = std::max(best, q[static_cast<std::size_t>(a)]);
    }
    OptimalTarget out;
    out.probs.assign(static_cast<std::size_t>(A), 0.0);
    for (int a = 0; a < A; ++a)
        if (allowed[static_cast<std::size_t>(a)] && q[static_cast<std::size_t>(a)] == best) out.support.push_back(a);
    if (tau <= kHardTargetTau) {
        const double p = 1.0 / static_cast<double>(out.support.size());
        for (int a : out.support) out.probs[static_cast<std::size_t>(a)] = p;
        return out;
    }
    double z = 0.0;
    for (int a = 0; a < A; ++a) {
        if (!allowed[static_cast<std::size_t>(a)]) continue;
        z += out.probs[static_cast<std::size_t>(a)] = std::exp((q[static_cast<std::size_t>(a)] - best) / tau);
    }
    for (double& p : out.probs) p /= z;
    return out;
}

/// KL(target || exp(logprobs)) as a graph node; the target is a constant.
inline NodeId kl_to_target(Graph& g, NodeId logprobs, const std::vector<double>& target) {
    std::vector<NodeId> terms;
    for (std::size_t a = 0; a < target.size(); ++a) {
        const double p = target[a];
        if (p <= 0.0) continue;
        terms.push_back(g.affine(g.pick(logprobs, a), -p, p * std::log(p)));
    }
    return g.sum(terms);
}

/// Chooses the next action from the masked log-probabilities at step t.
using ActionChooser = std::function<int(std::size_t step, const std::vector<double>& masked_logprobs)>;

struct Rollout {
    LabelSequence trajectory;  // ends with eos
    std::vector<StepOutput> steps;
};

/// Run the decoder feeding back its own choices until eos. The mask makes
/// eos the only admissible action once every label has been emitted.
inline Rollout rollout(Graph& g, const Model& model, const EncoderStates& enc, const ActionChooser& choose,
                       RunMode mode = RunMode::eval()) {
    Rollout r;
    DecoderState state = model.initial_state(g, enc);
    int prev = model.bos();
    LabelSequence emitted;
    for (std::size_t t = 0; t <= static_cast<std::size_t>(model.label_count()); ++t) {
        StepOutput step = model.decoder_step(g, state, prev, enc, mode);
        const auto masked = masked_distribution(g.value(step.logprobs).values(),
                                                make_mask(emitted, model.label_count()));
        const int a = choose(t, masked);
        if (a < 0 || a > model.eos() || is_masked(masked[static_cast<std::size_t>(a)])) {
            throw std::logic_error("rollout: chooser picked an inadmissible action");
        }
        state = step.state;
        r.steps.push_back(std::move(step));
        r.trajectory.push_back(a);
        if (a == model.eos()) break;
        emitted.push_back(a);
        prev = a;
    }
    return r;
}

inline int sample_action(const std::vector<double>& masked_logprobs, Rng& rng) {
    std::vector<double> p(masked_logprobs.size());
    for (std::size_t i = 0; i < p.size(); ++i) p[i] = std::exp(masked_logprobs[i]);
    return static_cast<int>(rng.categorical(p));
}

/// Trajectory sampled from the masked decoder distribution (eval mode).
inline LabelSequence sample_trajectory(const Model& model, const Instance& instance, Rng& rng) {
    Graph g;
    const EncoderStates enc = model.encode(g, instance.tokens);
    return rollout(g, model, enc, [&](std::size_t, const std::vector<double>& lp) { return sample_action(lp, rng); })
        .trajectory;
}

struct OcdLoss {
    NodeId loss = 0;
    LabelSequence trajectory;
};

/// Sum over the rollout of KL(pi* || p_rnn). The targets and the sampled
/// actions are constants: gradients flow only through log p_rnn.
inline OcdLoss ocd_loss(Graph& g, const Model& model, const EncoderStates& enc, const LabelSet& targets,
                        const ActionChooser& choose, const OcdConfig& cfg, RunMode mode = RunMode::eval()) {
    Rollout r = rollout(g, model, enc, choose, mode);
    std::vector<NodeId> terms;
    PrefixState prefix({}, targets, model.label_count());
    for (std::size_t t = 0; t < r.trajectory.size(); ++t) {
        const OptimalTarget pi = optimal_policy(prefix, cfg.tau);
        terms.push_back(kl_to_target(g, r.steps[t].logprobs, pi.probs));
        if (r.trajectory[t] != model.eos()) prefix = prefix.extended(r.trajectory[t]);
    }
    return {g.sum(terms), std::move(r.trajectory)};
}

inline OcdLoss ocd_loss(Graph& g, const Model& model, const Instance& instance, Rng& rng, const OcdConfig& cfg,
                        RunMode mode = RunMode::eval()) {
    const EncoderStates enc = model.encode(g, instance.tokens, mode);
    return ocd_loss(g, model, enc, instance.labels,
                    [&](std::size_t, const std::vector<double>& lp) { return sample_action(lp, rng); }, cfg, mode);
}

/// OCD loss along a given trajectory (which must end with eos).
inline NodeId ocd_loss_on_trajectory(Graph& g, const Model& model, const EncoderStates& enc, const LabelSet& targets,
                                     const LabelSequence& trajectory, const OcdConfig& cfg) {
    if (trajectory.empty() || trajectory.back() != model.eos()) {
        throw std::invalid_argument("ocd_loss_on_trajectory: trajectory must end with eos");
    }
    return ocd_loss(g, model, enc, targets,
                    [&](std::size_t t, const std::vector<double>&) { return trajectory.at(t); }, cfg)
        .loss;
}

}  // namespace ocdmlc
