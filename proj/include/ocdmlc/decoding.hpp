#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "ocdmlc/data.hpp"
#include "ocdmlc/graph.hpp"
#include "ocdmlc/metrics.hpp"
#include "ocdmlc/model.hpp"

namespace ocdmlc {

enum class Scorer { path, joint };

struct Hypothesis {
    LabelSequence labels;  // distinct labels, then eos once finished
    double log_path = 0.0;
    double log_joint = 0.0;
    bool finished = false;

    double score(Scorer s) const { return s == Scorer::path ? log_path : log_joint; }
};

/// Strict "a ranks before b": higher score, then shorter, then
/// lexicographically smaller label sequence.
inline bool ranks_before(const Hypothesis& a, const Hypothesis& b, Scorer s) {
    const double sa = a.score(s), sb = b.score(s);
    if (sa != sb) return sa > sb;
    if (a.labels.size() != b.labels.size()) return a.labels.size() < b.labels.size();
    return a.labels < b.labels;
}

/// log(p / (1 - p)) for each BR probability; the eos position is 0.
inline std::vector<double> br_log_odds(std::span<const double> br_probs) {
    std::vector<double> out(br_probs.size() + 1, 0.0);
    for (std::size_t l = 0; l < br_probs.size(); ++l) out[l] = std::log(br_probs[l]) - std::log1p(-br_probs[l]);
    return out;
}

/// log P_br(H) = sum_{l in H} log y_l + sum_{l not in H} log(1 - y_l) over
/// the L real labels. Entries of `labels` that are not real labels (eos) are ignored.
inline double br_score(std::span<const int> labels, std::span<const double> br_probs) {
    std::vector<bool> in(br_probs.size(), false);
    for (int l : labels)
        if (l >= 0 && static_cast<std::size_t>(l) < br_probs.size()) in[static_cast<std::size_t>(l)] = true;
    double s = 0.0;
    for (std::size_t l = 0; l < br_probs.size(); ++l) s += in[l] ? std::log(br_probs[l]) : std::log1p(-br_probs[l]);
    return s;
}

inline std::vector<double> br_probabilities(const Model& model, std::span<const int> tokens) {
    Graph g;
    const EncoderStates enc = model.encode(g, tokens);
    return g.value(model.br_forward(g, enc).probs).values();
}

/// Beam search over the masked decoder. Every candidate extension competes
/// for the `width` slots; a selected candidate ending in eos leaves the beam
/// and is kept as finished. With Scorer::joint each step adds the BR log
/// odds of the emitted label (zero for eos), which ranks complete hypotheses
/// by P_path * P_br. Returns finished hypotheses, best first.
inline std::vector<Hypothesis> beam_search(const Model& model, std::span<const int> tokens, int width, Scorer scorer,
                                           std::span<const double> br_probs = {}) {
    if (width < 1) throw std::invalid_argument("beam_search: width must be >= 1");
    Graph g;
    const EncoderStates enc = model.encode(g, tokens);
    std::vector<double> odds(static_cast<std::size_t>(model.label_count()) + 1, 0.0);
    if (scorer == Scorer::joint) {
        if (br_probs.empty()) {
            // The logits are the log odds; this stays finite when sigmoid saturates.
            const auto& z = g.value(model.br_forward(g, enc).logits).values();
            std::copy(z.begin(), z.end(), odds.begin());
        } else {
            if (static_cast<int>(br_probs.size()) != model.label_count()) {
                throw std::invalid_argument("beam_search: BR probabilities must have length L");
            }
            odds = br_log_odds(br_probs);
        }
    }

    struct Live {
        Hypothesis hyp;
        DecoderState state;
    };
    std::vector<Live> live{{Hypothesis{}, model.initial_state(g, enc)}};
    std::vector<Hypothesis> finished;

    while (!live.empty()) {
        std::vector<Live> candidates;
        for (const auto& item : live) {
            const int prev = item.hyp.labels.empty() ? model.bos() : item.hyp.labels.back();
            StepOutput step = model.decoder_step(g, item.state, prev, enc);
            const auto lp = masked_distribution(g.value(step.logprobs).values(),
                                                make_mask(item.hyp.labels, model.label_count()));
            for (int a = 0; a <= model.eos(); ++a) {
                const double v = lp[static_cast<std::size_t>(a)];
                if (is_masked(v)) continue;
                Live next{item.hyp, step.state};
                next.hyp.labels.push_back(a);
                next.hyp.log_path += v;
                next.hyp.log_joint += v + odds[static_cast<std::size_t>(a)];
                next.hyp.finished = a == model.eos();
                candidates.push_back(std::move(next));
            }
        }
        const std::size_t keep = std::min(candidates.size(), static_cast<std::size_t>(width));
        std::partial_sort(candidates.begin(), candidates.begin() + static_cast<std::ptrdiff_t>(keep), candidates.end(),
                          [&](const Live& a, const Live& b) { return ranks_before(a.hyp, b.hyp, scorer); });
        live.clear();
        for (std::size_t i = 0; i < keep; ++i) {
            if (candidates[i].hyp.finished) finished.push_back(std::move(candidates[i].hyp));
            else live.push_back(std::move(candidates[i]));
        }
    }
    std::sort(finished.begin(), finished.end(),
              [&](const Hypothesis& a, const Hypothesis& b) { return ranks_before(a, b, scorer); });
    return finished;
}

/// Highest P_br among finished hypotheses; ties by higher log P_path, then
/// lexicographic order.
inline Hypothesis logistic_rescore(std::span<const Hypothesis> hypotheses, std::span<const double> br_probs) {
    if (hypotheses.empty()) throw std::invalid_argument("logistic_rescore: no hypotheses");
    const Hypothesis* best = nullptr;
    double best_score = -std::numeric_limits<double>::infinity();
    for (const auto& h : hypotheses) {
        const double s = br_score(h.labels, br_probs);
        if (best == nullptr || s > best_score ||
            (s == best_score && (h.log_path > best->log_path ||
                                 (h.log_path == best->log_path && h.labels < best->labels)))) {
            best = &h;
            best_score = s;
        }
    }
    return *best;
}

inline Hypothesis joint_decode(const Model& model, std::span<const int> tokens, int width) {
    auto hyps = beam_search(model, tokens, width, Scorer::joint);
    return hyps.front();
}

inline LabelSet br_threshold_predict(std::span<const double> br_probs, double threshold) {
    if (!(threshold > 0.0 && threshold < 1.0)) throw std::invalid_argument("br_threshold_predict: threshold not in (0,1)");
    LabelSet out;
    for (std::size_t l = 0; l < br_probs.size(); ++l)
        if (br_probs[l] > threshold) out.push_back(static_cast<int>(l));
    return out;
}

/// {0.05, 0.10, ..., 0.95}
inline std::vector<double> threshold_grid() {
    std::vector<double> grid;
    for (int k = 1; k <= 19; ++k) grid.push_back(k * 0.05);
    return grid;
}

/// Grid threshold maximizing micro-F1; the earliest grid point wins ties.
inline double tune_threshold(const std::vector<std::vector<double>>& br_probs, const std::vector<LabelSet>& golds,
                             int L) {
    double best_t = 0.5, best_f = -1.0;
    for (double t : threshold_grid()) {
        std::vector<LabelSet> preds;
        preds.reserve(br_probs.size());
        for (const auto& p : br_probs) preds.push_back(br_threshold_predict(p, t));
        const double f = micro_f1(confusion_counts(golds, preds, L));
        if (f > best_f) {
            best_f = f;
            best_t = t;
        }
    }
    return best_t;
}

// ---------------------------------------------------------------------------
// Strategies

enum class Strategy { rnn, br, rescore, joint };

inline std::string to_string(Strategy s) {
    switch (s) {
        case Strategy::rnn: return "rnn";
        case Strategy::br: return "br";
        case Strategy::rescore: return "rescore";
        case Strategy::joint: return "joint";
    }
    return "?";
}

inline Strategy parse_strategy(const std::string& s) {
    if (s == "rnn") return Strategy::rnn;
    if (s == "br") return Strategy::br;
    if (s == "rescore") return Strategy::rescore;
    if (s == "joint") return Strategy::joint;
    throw std::invalid_argument("unknown strategy '" + s + "'");
}

struct Prediction {
    LabelSequence sequence;  // emitted order, without eos
    LabelSet labels;
    double log_path = std::numeric_limits<double>::quiet_NaN();
    double log_joint = std::numeric_limits<double>::quiet_NaN();
};

inline Prediction from_hypothesis(const Hypothesis& h, int eos) {
    Prediction p;
    for (int l : h.labels)
        if (l != eos) p.sequence.push_back(l);
    p.labels = make_label_set(p.sequence);
    p.log_path = h.log_path;
    p.log_joint = h.log_joint;
    return p;
}

struct DecodeOptions {
    Strategy strategy = Strategy::rnn;
    int beam = 6;
    double threshold = 0.5;  // BR strategy only
};

inline Prediction predict(const Model& model, std::span<const int> tokens, const DecodeOptions& opt) {
    switch (opt.strategy) {
        case Strategy::rnn:
            return from_hypothesis(beam_search(model, tokens, opt.beam, Scorer::path).front(), model.eos());
        case Strategy::br: {
            const auto probs = br_probabilities(model, tokens);
            Prediction p;
            p.labels = br_threshold_predict(probs, opt.threshold);
            p.sequence = p.labels;
            return p;
        }
        case Strategy::rescore: {
            const auto probs = br_probabilities(model, tokens);
            const auto hyps = beam_search(model, tokens, opt.beam, Scorer::path);
            return from_hypothesis(logistic_rescore(hyps, probs), model.eos());
        }
        case Strategy::joint:
            return from_hypothesis(joint_decode(model, tokens, opt.beam), model.eos());
    }
    throw std::logic_error("predict: unhandled strategy");
}

inline std::vector<Prediction> predict_all(const Model& model, const std::vector<Instance>& instances,
                                           const DecodeOptions& opt) {
    std::vector<Prediction> out;
    out.reserve(instances.size());
    for (const auto& inst : instances) out.push_back(predict(model, inst.tokens, opt));
    return out;
}

inline std::vector<LabelSet> golds_of(const std::vector<Instance>& instances) {
    std::vector<LabelSet> out;
    out.reserve(instances.size());
    for (const auto& i : instances) out.push_back(i.labels);
    return out;
}

inline std::vector<LabelSet> labels_of(const std::vector<Prediction>& preds) {
    std::vector<LabelSet> out;
    out.reserve(preds.size());
    for (const auto& p : preds) out.push_back(p.labels);
    return out;
}

/// Tune the BR threshold on `val` by micro-F1.
inline double tune_threshold(const Model& model, const std::vector<Instance>& val) {
    std::vector<std::vector<double>> probs;
    for (const auto& inst : val) probs.push_back(br_probabilities(model, inst.tokens));
    return tune_threshold(probs, golds_of(val), model.label_count());
}

}  // namespace ocdmlc
