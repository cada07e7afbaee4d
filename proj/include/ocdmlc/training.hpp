#pragma once

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <numeric>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "ocdmlc/checkpoint.hpp"
#include "ocdmlc/config.hpp"
#include "ocdmlc/data.hpp"
#include "ocdmlc/decoding.hpp"
#include "ocdmlc/graph.hpp"
#include "ocdmlc/metrics.hpp"
#include "ocdmlc/model.hpp"
#include "ocdmlc/ocd.hpp"
#include "ocdmlc/params.hpp"
#include "ocdmlc/rng.hpp"

namespace ocdmlc {

class TrainingError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Losses

/// Target labels in frequency order, without the trailing eos.
inline LabelSequence target_sequence(const LabelSet& labels, const LabelSpace& space) {
    return order_labels_by_frequency(labels, space);
}

/// Teacher-forced negative log-likelihood of `targets` followed by eos.
inline NodeId mle_loss(Graph& g, const Model& model, const EncoderStates& enc, const LabelSequence& targets,
                       RunMode mode = RunMode::eval()) {
    DecoderState state = model.initial_state(g, enc);
    int prev = model.bos();
    std::vector<NodeId> terms;
    for (std::size_t t = 0; t <= targets.size(); ++t) {
        StepOutput step = model.decoder_step(g, state, prev, enc, mode);
        const int gold = t < targets.size() ? targets[t] : model.eos();
        terms.push_back(g.affine(g.pick(step.logprobs, static_cast<std::size_t>(gold)), -1.0));
        state = step.state;
        prev = gold;
    }
    return g.sum(terms);
}

/// Like mle_loss, but each previous-label input after the first is the
/// ground truth with probability `ratio` and otherwise a label sampled from the
/// model's previous step (excluding eos and labels already fed).
inline NodeId scheduled_sampling_loss(Graph& g, const Model& model, const EncoderStates& enc,
                                      const LabelSequence& targets, double ratio, Rng& rng,
                                      RunMode mode = RunMode::eval()) {
    if (!(ratio >= 0.0 && ratio <= 1.0)) throw std::invalid_argument("scheduled_sampling_loss: ratio not in [0,1]");
    const int L = model.label_count();
    DecoderState state = model.initial_state(g, enc);
    int prev = model.bos();
    LabelSequence fed;
    std::vector<NodeId> terms;
    for (std::size_t t = 0; t <= targets.size(); ++t) {
        StepOutput step = model.decoder_step(g, state, prev, enc, mode);
        const int gold = t < targets.size() ? targets[t] : model.eos();
        terms.push_back(g.affine(g.pick(step.logprobs, static_cast<std::size_t>(gold)), -1.0));
        state = step.state;
        if (gold == model.eos()) break;
        int next = gold;
        if (ratio < 1.0 && !rng.bernoulli(ratio)) {
            const auto& lp = g.value(step.logprobs).values();
            std::vector<double> w(static_cast<std::size_t>(L), 0.0);
            for (int l = 0; l < L; ++l)
                if (std::find(fed.begin(), fed.end(), l) == fed.end()) w[static_cast<std::size_t>(l)] = std::exp(lp[static_cast<std::size_t>(l)]);
            next = static_cast<int>(rng.categorical(w));
        }
        fed.push_back(next);
        prev = next;
    }
    return g.sum(terms);
}

/// Teacher-forcing ratio after `update` of `total` updates, linear from start to end.
inline double teacher_forcing_ratio(std::size_t update, std::size_t total, double start, double end) {
    if (total == 0) return start;
    const double frac = std::min(1.0, static_cast<double>(update) / static_cast<double>(total));
    return start + (end - start) * frac;
}

/// Most probable remaining label under the current step (lowest id on ties);
/// eos when nothing remains.
inline int order_free_target(const LabelSet& remaining, std::span<const double> logprobs, int eos) {
    if (remaining.empty()) return eos;
    int best = remaining.front();
    for (int l : remaining)
        if (logprobs[static_cast<std::size_t>(l)] > logprobs[static_cast<std::size_t>(best)]) best = l;
    return best;
}

struct OrderFreeLoss {
    NodeId loss = 0;
    LabelSequence targets;  // ends with eos
};

/// NLL along targets chosen on the fly by order_free_target; each chosen
/// target is fed back as the next input.
inline OrderFreeLoss order_free_loss(Graph& g, const Model& model, const EncoderStates& enc, const LabelSet& labels,
                                     RunMode mode = RunMode::eval()) {
    OrderFreeLoss out;
    LabelSet remaining = make_label_set(labels);
    DecoderState state = model.initial_state(g, enc);
    int prev = model.bos();
    std::vector<NodeId> terms;
    while (true) {
        StepOutput step = model.decoder_step(g, state, prev, enc, mode);
        const int target = order_free_target(remaining, g.value(step.logprobs).values(), model.eos());
        terms.push_back(g.affine(g.pick(step.logprobs, static_cast<std::size_t>(target)), -1.0));
        out.targets.push_back(target);
        if (target == model.eos()) break;
        remaining.erase(std::find(remaining.begin(), remaining.end(), target));
        state = step.state;
        prev = target;
    }
    out.loss = g.sum(terms);
    return out;
}

/// Binary cross-entropy of sigmoid(logits) against the multi-hot `gold`,
/// computed through log-sigmoid so saturated logits stay finite.
inline NodeId logistic_loss(Graph& g, NodeId logits, const std::vector<double>& gold) {
    if (g.value(logits).size() != gold.size()) {
        throw ShapeError("logistic_loss: " + std::to_string(gold.size()) + " targets for " +
                         std::to_string(g.value(logits).size()) + " logits");
    }
    std::vector<double> neg(gold.size());
    for (std::size_t i = 0; i < gold.size(); ++i) neg[i] = 1.0 - gold[i];
    const NodeId pos_term = g.mul(g.constant(Tensor::vector(gold)), g.log_sigmoid(logits));
    const NodeId neg_term = g.mul(g.constant(Tensor::vector(neg)), g.log_sigmoid(g.affine(logits, -1.0)));
    return g.affine(g.sum(g.add(pos_term, neg_term)), -1.0);
}

/// -sum_i [y_i log p_i + (1 - y_i) log(1 - p_i)] on plain values.
inline double logistic_loss(std::span<const double> probs, std::span<const double> gold) {
    if (probs.size() != gold.size()) throw ShapeError("logistic_loss: size mismatch");
    double s = 0.0;
    for (std::size_t i = 0; i < probs.size(); ++i) {
        if (gold[i] > 0.0) s -= gold[i] * std::log(probs[i]);
        if (gold[i] < 1.0) s -= (1.0 - gold[i]) * std::log1p(-probs[i]);
    }
    return s;
}

/// OCD loss plus lambda times the logistic loss, both on one encoding.
inline OcdLoss mtl_loss(Graph& g, const Model& model, const EncoderStates& enc, const LabelSet& labels,
                        const ActionChooser& choose, const OcdConfig& cfg, double lambda,
                        RunMode mode = RunMode::eval()) {
    if (lambda < 0.0) throw std::invalid_argument("mtl_loss: lambda must be >= 0");
    OcdLoss ocd = ocd_loss(g, model, enc, labels, choose, cfg, mode);
    if (lambda == 0.0) return ocd;
    const BrOutput br = model.br_forward(g, enc, mode);
    const NodeId logistic = logistic_loss(g, br.logits, encode_multi_hot(labels, model.label_count()));
    ocd.loss = g.add(ocd.loss, g.affine(logistic, lambda));
    return ocd;
}

// ---------------------------------------------------------------------------
// Configuration

enum class Regime { mle, mle_ss, order_free, ocd, ocd_mtl, br_only };

inline std::string to_string(Regime r) {
    switch (r) {
        case Regime::mle: return "mle";
        case Regime::mle_ss: return "mle-ss";
        case Regime::order_free: return "order-free";
        case Regime::ocd: return "ocd";
        case Regime::ocd_mtl: return "ocd-mtl";
        case Regime::br_only: return "br-only";
    }
    return "?";
}

inline Regime parse_regime(const std::string& s) {
    for (Regime r : {Regime::mle, Regime::mle_ss, Regime::order_free, Regime::ocd, Regime::ocd_mtl, Regime::br_only})
        if (to_string(r) == s) return r;
    throw std::invalid_argument("unknown regime '" + s + "'");
}

struct TrainConfig {
    Regime regime = Regime::ocd;
    double learning_rate = 0.0005;
    double clip_norm = 10.0;
    std::size_t batch_size = 32;
    std::size_t epochs = 10;
    double lambda = 1.0;
    double ss_start = 1.0;
    double ss_end = 0.7;
    std::size_t eval_every = 200;
    std::uint64_t seed = 1;
    double tau = 1e-8;
    int beam = 6;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;

    void validate() const {
        if (!(learning_rate >= 0.0)) throw ConfigError("train: learning_rate must be >= 0");
        if (!(clip_norm > 0.0)) throw ConfigError("train: clip_norm must be > 0");
        if (batch_size == 0) throw ConfigError("train: batch_size must be >= 1");
        if (eval_every == 0) throw ConfigError("train: eval_every must be >= 1");
        if (!(lambda >= 0.0)) throw ConfigError("train: lambda must be >= 0");
        if (!(0.0 <= ss_end && ss_end <= ss_start && ss_start <= 1.0)) {
            throw ConfigError("train: need 0 <= ss_end <= ss_start <= 1");
        }
        if (!(tau >= 0.0)) throw ConfigError("train: tau must be >= 0");
        if (beam < 1) throw ConfigError("train: beam must be >= 1");
    }

    static TrainConfig from(const ConfigFile& f) {
        TrainConfig c;
        c.regime = parse_regime(f.get<std::string>("train", "regime", to_string(c.regime)));
        c.learning_rate = f.get("train", "learning_rate", c.learning_rate);
        c.clip_norm = f.get("train", "clip_norm", c.clip_norm);
        c.batch_size = f.get("train", "batch_size", c.batch_size);
        c.epochs = f.get("train", "epochs", c.epochs);
        c.lambda = f.get("train", "lambda", c.lambda);
        c.ss_start = f.get("train", "ss_start", c.ss_start);
        c.ss_end = f.get("train", "ss_end", c.ss_end);
        c.eval_every = f.get("train", "eval_every", c.eval_every);
        c.seed = f.get("train", "seed", c.seed);
        c.tau = f.get("train", "tau", c.tau);
        c.beam = f.get("train", "beam", c.beam);
        c.validate();
        return c;
    }
};

/// Strategy used for validation and, by default, for evaluation of a regime.
inline Strategy default_strategy(Regime r) { return r == Regime::br_only ? Strategy::br : Strategy::rnn; }

// ---------------------------------------------------------------------------
// Optimizer

class Adam {
public:
    Adam(const ParameterStore& params, double beta1, double beta2, double eps)
        : beta1_(beta1), beta2_(beta2), eps_(eps) {
        for (const auto& [name, t] : params) {
            m_.emplace(name, Tensor(t.shape()));
            v_.emplace(name, Tensor(t.shape()));
        }
    }

    void step(ParameterStore& params, const GradientMap& grads, double lr) {
        ++t_;
        const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
        const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
        for (const auto& [name, grad] : grads) {
            auto& p = params.get(name).values();
            auto& m = m_.at(name).values();
            auto& v = v_.at(name).values();
            const auto& gv = grad.values();
            for (std::size_t i = 0; i < p.size(); ++i) {
                m[i] = beta1_ * m[i] + (1.0 - beta1_) * gv[i];
                v[i] = beta2_ * v[i] + (1.0 - beta2_) * gv[i] * gv[i];
                p[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps_);
            }
        }
    }

    std::size_t steps() const noexcept { return t_; }
    const std::map<std::string, Tensor>& first_moments() const noexcept { return m_; }
    const std::map<std::string, Tensor>& second_moments() const noexcept { return v_; }

private:
    double beta1_, beta2_, eps_;
    std::size_t t_ = 0;
    std::map<std::string, Tensor> m_, v_;
};

/// Scale `grads` in place so their global norm is at most `max_norm`.
/// Returns the norm after clipping.
inline double clip_gradients(GradientMap& grads, double max_norm) {
    const double norm = global_norm(grads);
    if (norm <= max_norm) return norm;
    const double scale = max_norm / norm;
    for (auto& [_, g] : grads)
        for (double& v : g.values()) v *= scale;
    return global_norm(grads);
}

// ---------------------------------------------------------------------------
// Loop

struct CurvePoint {
    std::size_t update = 0;
    double loss = 0.0;  // mean batch loss since the previous point
    double val_mif1 = 0.0;
    double val_ebf1 = 0.0;
};

struct TrainState {
    std::size_t updates = 0;
    double best_val_mif1 = -1.0;
    std::size_t best_update = 0;
    std::filesystem::path checkpoint_path;
    std::vector<CurvePoint> curve;
    std::vector<double> clipped_norms;  // applied gradient norm per update
};

inline std::string format_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.10g", v);
    return buf;
}

inline std::string curve_csv(const std::vector<CurvePoint>& curve) {
    std::ostringstream os;
    os << "update,loss,val_mif1,val_ebf1\n";
    for (const auto& p : curve) {
        os << p.update << ',' << format_double(p.loss) << ',' << format_double(p.val_mif1) << ','
           << format_double(p.val_ebf1) << '\n';
    }
    return os.str();
}

/// Loss of one instance under the configured regime.
inline NodeId instance_loss(Graph& g, const Model& model, const Instance& inst, const LabelSpace& space,
                            const TrainConfig& cfg, double ss_ratio, Rng& rng, RunMode mode) {
    const EncoderStates enc = model.encode(g, inst.tokens, mode);
    const OcdConfig ocfg{cfg.tau};
    auto sampler = [&](std::size_t, const std::vector<double>& lp) { return sample_action(lp, rng); };
    switch (cfg.regime) {
        case Regime::mle: return mle_loss(g, model, enc, target_sequence(inst.labels, space), mode);
        case Regime::mle_ss:
            return scheduled_sampling_loss(g, model, enc, target_sequence(inst.labels, space), ss_ratio, rng, mode);
        case Regime::order_free: return order_free_loss(g, model, enc, inst.labels, mode).loss;
        case Regime::ocd: return ocd_loss(g, model, enc, inst.labels, sampler, ocfg, mode).loss;
        case Regime::ocd_mtl: return mtl_loss(g, model, enc, inst.labels, sampler, ocfg, cfg.lambda, mode).loss;
        case Regime::br_only:
            return logistic_loss(g, model.br_forward(g, enc, mode).logits,
                                 encode_multi_hot(inst.labels, model.label_count()));
    }
    throw std::logic_error("instance_loss: unhandled regime");
}

inline MetricsReport validate_model(const Model& model, const std::vector<Instance>& val, const TrainConfig& cfg) {
    DecodeOptions opt;
    opt.strategy = default_strategy(cfg.regime);
    opt.beam = cfg.beam;
    return evaluate_predictions(golds_of(val), labels_of(predict_all(model, val, opt)), model.label_count());
}

struct TrainHooks {
    std::function<void(const CurvePoint&)> on_eval;
};

/// Mini-batch Adam with global-norm clipping. Every `eval_every` updates (and
/// after the last one) the model is decoded on the "val" split; the parameters
/// with the best validation micro-F1 are restored at the end and, when
/// `out_dir` is non-empty, saved to out_dir/model.ckpt.
inline TrainState train(const Dataset& data, Model& model, const TrainConfig& cfg,
                        const std::filesystem::path& out_dir = {}, const TrainHooks& hooks = {}) {
    cfg.validate();
    const auto& train_set = data.split("train");
    if (train_set.empty()) throw TrainingError("train: empty training split");
    const auto& val_set = data.has_split("val") && !data.split("val").empty() ? data.split("val") : train_set;

    TrainState st;
    Rng rng(cfg.seed);
    Rng order_rng = rng.fork(1), sample_rng = rng.fork(2), dropout_rng = rng.fork(3);
    Adam adam(model.params(), cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps);
    ParameterStore best = model.params();
    if (!out_dir.empty()) {
        std::filesystem::create_directories(out_dir);
        st.checkpoint_path = out_dir / "model.ckpt";
    }

    const std::size_t per_epoch = (train_set.size() + cfg.batch_size - 1) / cfg.batch_size;
    const std::size_t total_updates = per_epoch * cfg.epochs;
    double window_loss = 0.0;
    std::size_t window_batches = 0;

    auto evaluate = [&] {
        const MetricsReport r = validate_model(model, val_set, cfg);
        CurvePoint p{st.updates, window_batches ? window_loss / static_cast<double>(window_batches) : 0.0, r.mif1,
                     r.ebf1};
        st.curve.push_back(p);
        window_loss = 0.0;
        window_batches = 0;
        if (r.mif1 > st.best_val_mif1) {
            st.best_val_mif1 = r.mif1;
            st.best_update = st.updates;
            best = model.params();
        }
        if (hooks.on_eval) hooks.on_eval(p);
    };

    std::vector<std::size_t> order(train_set.size());
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::iota(order.begin(), order.end(), std::size_t{0});
        order_rng.shuffle(order.begin(), order.end());
        for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
            const std::size_t stop = std::min(order.size(), start + cfg.batch_size);
            const double ratio = teacher_forcing_ratio(st.updates, total_updates, cfg.ss_start, cfg.ss_end);
            GradientMap sum;
            double batch_loss = 0.0;
            for (std::size_t i = start; i < stop; ++i) {
                const Instance& inst = train_set[order[i]];
                Graph g;
                const RunMode mode = model.config().dropout > 0.0 ? RunMode::train(dropout_rng) : RunMode::eval();
                const NodeId loss = instance_loss(g, model, inst, data.labels, cfg, ratio, sample_rng, mode);
                const double v = g.value(loss).item();
                if (!std::isfinite(v)) {
                    throw TrainingError("train: non-finite loss " + format_double(v) + " at update " +
                                        std::to_string(st.updates) + " on instance " + std::to_string(inst.id) + " (regime " +
                                        to_string(cfg.regime) + ")");
                }
                batch_loss += v;
                GradientMap grads = g.backward(loss);
                for (auto& [name, gr] : grads) {
                    auto it = sum.find(name);
                    if (it == sum.end()) {
                        sum.emplace(name, std::move(gr));
                    } else {
                        auto& dst = it->second.values();
                        const auto& src = gr.values();
                        for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += src[k];
                    }
                }
            }
            const double n = static_cast<double>(stop - start);
            for (auto& [_, gr] : sum)
                for (double& v : gr.values()) v /= n;
            st.clipped_norms.push_back(clip_gradients(sum, cfg.clip_norm));
            adam.step(model.params(), sum, cfg.learning_rate);
            ++st.updates;
            window_loss += batch_loss / n;
            ++window_batches;
            if (st.updates % cfg.eval_every == 0) evaluate();
        }
    }
    if (st.curve.empty() || st.curve.back().update != st.updates) evaluate();

    model.params() = best;
    if (!st.checkpoint_path.empty()) {
        save_checkpoint(st.checkpoint_path, model);
        std::ofstream(out_dir / "curve.csv", std::ios::binary) << curve_csv(st.curve);
    }
    return st;
}

}  // namespace ocdmlc
