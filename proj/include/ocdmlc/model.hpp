#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <stdexcept>
#include <tuple>
#include <string>
#include <vector>

#include "ocdmlc/config.hpp"
#include "ocdmlc/data.hpp"
#include "ocdmlc/graph.hpp"
#include "ocdmlc/params.hpp"
#include "ocdmlc/rng.hpp"

namespace ocdmlc {

struct ModelConfig {
    int embed_dim = 32;
    int encoder_hidden = 32;  // per direction
    int encoder_layers = 1;
    int decoder_hidden = 64;
    int decoder_layers = 1;
    int br_hidden = 64;
    int br_depth = 1;
    double dropout = 0.0;
    int labels = 0;  // L
    int vocab = 0;   // V

    void validate() const {
        auto positive = [](int v, const char* what) {
            if (v < 1) throw std::invalid_argument(std::string("model config: ") + what + " must be >= 1");
        };
        positive(embed_dim, "embed_dim");
        positive(encoder_hidden, "encoder_hidden");
        positive(encoder_layers, "encoder_layers");
        positive(decoder_hidden, "decoder_hidden");
        positive(decoder_layers, "decoder_layers");
        positive(br_hidden, "br_hidden");
        positive(br_depth, "br_depth");
        positive(labels, "labels");
        positive(vocab, "vocab");
        if (!(dropout >= 0.0 && dropout < 1.0)) throw std::invalid_argument("model config: dropout must be in [0, 1)");
    }

    int encoder_width() const { return 2 * encoder_hidden; }

    static ModelConfig from(const ConfigFile& cfg) {
        ModelConfig m;
        m.embed_dim = cfg.get("model", "embed_dim", m.embed_dim);
        m.encoder_hidden = cfg.get("model", "encoder_hidden", m.encoder_hidden);
        m.encoder_layers = cfg.get("model", "encoder_layers", m.encoder_layers);
        m.decoder_hidden = cfg.get("model", "decoder_hidden", m.decoder_hidden);
        m.decoder_layers = cfg.get("model", "decoder_layers", m.decoder_layers);
        m.br_hidden = cfg.get("model", "br_hidden", m.br_hidden);
        m.br_depth = cfg.get("model", "br_depth", m.br_depth);
        m.dropout = cfg.get("model", "dropout", m.dropout);
        return m;
    }

    bool operator==(const ModelConfig&) const = default;
};

/// Forward-pass mode. Dropout is active only when training with an rng.
struct RunMode {
    bool training = false;
    Rng* rng = nullptr;

    static RunMode eval() { return {}; }
    static RunMode train(Rng& r) { return {true, &r}; }
};

struct EncoderStates {
    NodeId states = 0;                // m x 2H, row t = [fwd_t ; bwd_t]
    NodeId final_state = 0;           // [fwd_m ; bwd_1]
    std::size_t length = 0;
};

struct DecoderState {
    std::vector<NodeId> hidden;  // one per layer
    std::vector<NodeId> cell;
};

struct StepOutput {
    DecoderState state;
    NodeId logits = 0;     // o_t, length L+1
    NodeId logprobs = 0;   // log softmax(o_t)
};

struct BrOutput {
    NodeId logits = 0;  // length L, pre-sigmoid
    NodeId probs = 0;   // y-hat
};

inline constexpr double kMaskValue = -1e30;

/// Additive mask over the L+1 actions: kMaskValue at emitted labels, 0 elsewhere.
/// The end-of-sequence position is never masked.
inline std::vector<double> make_mask(std::span<const int> emitted, int label_count) {
    std::vector<double> mask(static_cast<std::size_t>(label_count) + 1, 0.0);
    for (int l : emitted) {
        if (l < 0 || l >= label_count) throw std::invalid_argument("make_mask: emitted id is not a label");
        mask[static_cast<std::size_t>(l)] = kMaskValue;
    }
    return mask;
}

/// Renormalized log-probabilities after adding the mask; masked entries have
/// probability exactly zero (their log value is around -1e30).
inline std::vector<double> masked_distribution(std::span<const double> logprobs, std::span<const double> mask) {
    if (logprobs.size() != mask.size()) throw ShapeError("masked_distribution: size mismatch");
    std::vector<double> z(logprobs.size());
    for (std::size_t i = 0; i < z.size(); ++i) z[i] = logprobs[i] + mask[i];
    return Graph::log_softmax_values(z);
}

inline bool is_masked(double masked_logprob) { return masked_logprob < kMaskValue / 2; }

/// Bidirectional LSTM encoder, attention LSTM label decoder and the binary
/// relevance head sharing the encoder.
class Model {
public:
    Model() = default;

    Model(ModelConfig cfg, std::uint64_t seed) : cfg_(cfg) {
        cfg_.validate();
        Rng rng(seed);
        constexpr double b = 0.08;
        const auto E = static_cast<std::size_t>(cfg_.embed_dim);
        const auto He = static_cast<std::size_t>(cfg_.encoder_hidden);
        const auto Hd = static_cast<std::size_t>(cfg_.decoder_hidden);
        const auto W = static_cast<std::size_t>(cfg_.encoder_width());
        const auto L = static_cast<std::size_t>(cfg_.labels);

        params_.add_uniform("enc.embed", {static_cast<std::size_t>(cfg_.vocab), E}, b, rng);
        for (int k = 0; k < cfg_.encoder_layers; ++k) {
            const std::size_t in = k == 0 ? E : W;
            for (const char* dir : {"fwd", "bwd"}) {
                params_.add_uniform(enc_name(k, dir, "W"), {4 * He, in + He}, b, rng);
                params_.add_uniform(enc_name(k, dir, "b"), {4 * He}, b, rng);
            }
        }
        // Rows 0..L-1 are labels, row L (eos) is never fed back, row L+1 is bos.
        params_.add_uniform("dec.embed", {L + 2, E}, b, rng);
        for (int k = 0; k < cfg_.decoder_layers; ++k) {
            const std::size_t in = k == 0 ? E : Hd;
            params_.add_uniform(dec_name(k, "W"), {4 * Hd, in + Hd}, b, rng);
            params_.add_uniform(dec_name(k, "b"), {4 * Hd}, b, rng);
        }
        if (needs_bridge()) {
            params_.add_uniform("dec.bridge.W", {Hd, W}, b, rng);
            params_.add_uniform("dec.bridge.b", {Hd}, b, rng);
        }
        params_.add_uniform("dec.attn.Wq", {W, Hd}, b, rng);
        params_.add_uniform("dec.out.W", {L + 1, Hd + W}, b, rng);
        params_.add_uniform("dec.out.b", {L + 1}, b, rng);

        const auto B = static_cast<std::size_t>(cfg_.br_hidden);
        for (int k = 0; k < cfg_.br_depth; ++k) {
            params_.add_uniform(br_name(k, "W"), {B, k == 0 ? W : B}, b, rng);
            params_.add_uniform(br_name(k, "b"), {B}, b, rng);
        }
        params_.add_uniform("br.attn.Wq", {W, B}, b, rng);
        params_.add_uniform("br.out.W", {L, B + W}, b, rng);
        params_.add_uniform("br.out.b", {L}, b, rng);
    }

    Model(ModelConfig cfg, ParameterStore params) : cfg_(cfg), params_(std::move(params)) { cfg_.validate(); }

    const ModelConfig& config() const noexcept { return cfg_; }
    ParameterStore& params() noexcept { return params_; }
    const ParameterStore& params() const noexcept { return params_; }

    int label_count() const noexcept { return cfg_.labels; }
    int eos() const noexcept { return cfg_.labels; }
    int bos() const noexcept { return cfg_.labels + 1; }

    EncoderStates encode(Graph& g, std::span<const int> tokens, RunMode mode = RunMode::eval()) const {
        if (tokens.empty()) throw std::invalid_argument("encode: empty token sequence");
        for (int t : tokens) {
            if (t < 0 || t >= cfg_.vocab) throw std::invalid_argument("encode: unknown token id " + std::to_string(t));
        }
        const NodeId table = params_.bind(g, "enc.embed");
        std::vector<NodeId> inputs;
        inputs.reserve(tokens.size());
        for (int t : tokens) inputs.push_back(g.embedding(table, static_cast<std::size_t>(t)));

        const std::size_t m = tokens.size();
        std::vector<NodeId> fwd(m), bwd(m);
        for (int k = 0; k < cfg_.encoder_layers; ++k) {
            if (k > 0)
                for (auto& x : inputs) x = dropout(g, x, mode);
            for (int pass = 0; pass < 2; ++pass) {
                const char* dir = pass == 0 ? "fwd" : "bwd";
                const NodeId Wt = params_.bind(g, enc_name(k, dir, "W"));
                const NodeId bt = params_.bind(g, enc_name(k, dir, "b"));
                NodeId h = zeros(g, cfg_.encoder_hidden);
                NodeId c = h;
                auto& out = pass == 0 ? fwd : bwd;
                for (std::size_t s = 0; s < m; ++s) {
                    const std::size_t t = pass == 0 ? s : m - 1 - s;
                    std::tie(h, c) = lstm_cell(g, Wt, bt, inputs[t], h, c, cfg_.encoder_hidden);
                    out[t] = h;
                }
            }
            for (std::size_t t = 0; t < m; ++t) inputs[t] = g.concat({fwd[t], bwd[t]});
        }
        EncoderStates enc;
        enc.length = m;
        enc.states = g.stack_rows(inputs);
        enc.final_state = g.concat({fwd[m - 1], bwd[0]});
        return enc;
    }

    DecoderState initial_state(Graph& g, const EncoderStates& enc) const {
        NodeId h0 = enc.final_state;
        if (needs_bridge()) {
            h0 = g.tanh(g.add(g.matmul(params_.bind(g, "dec.bridge.W"), h0), params_.bind(g, "dec.bridge.b")));
        }
        DecoderState s;
        const NodeId c0 = zeros(g, cfg_.decoder_hidden);
        for (int k = 0; k < cfg_.decoder_layers; ++k) {
            s.hidden.push_back(h0);
            s.cell.push_back(c0);
        }
        return s;
    }

    /// One decoder step fed with `prev` (a label id or bos()). Returns the
    /// unmasked log-probabilities over the L labels plus eos.
    StepOutput decoder_step(Graph& g, const DecoderState& state, int prev, const EncoderStates& enc,
                            RunMode mode = RunMode::eval()) const {
        if (prev < 0 || prev > bos() || prev == eos()) {
            throw std::invalid_argument("decoder_step: invalid previous label " + std::to_string(prev));
        }
        StepOutput out;
        NodeId x = g.embedding(params_.bind(g, "dec.embed"), static_cast<std::size_t>(prev));
        for (int k = 0; k < cfg_.decoder_layers; ++k) {
            if (k > 0) x = dropout(g, x, mode);
            auto [h, c] = lstm_cell(g, params_.bind(g, dec_name(k, "W")), params_.bind(g, dec_name(k, "b")), x,
                                    state.hidden[static_cast<std::size_t>(k)],
                                    state.cell[static_cast<std::size_t>(k)], cfg_.decoder_hidden);
            out.state.hidden.push_back(h);
            out.state.cell.push_back(c);
            x = h;
        }
        const NodeId context = attend(g, enc, g.matmul(params_.bind(g, "dec.attn.Wq"), x));
        out.logits = g.add(g.matmul(params_.bind(g, "dec.out.W"), g.concat({x, context})),
                           params_.bind(g, "dec.out.b"));
        out.logprobs = g.log_softmax(out.logits);
        return out;
    }

    BrOutput br_forward(Graph& g, const EncoderStates& enc, RunMode mode = RunMode::eval()) const {
        NodeId h = enc.final_state;
        for (int k = 0; k < cfg_.br_depth; ++k) {
            h = g.leaky_relu(g.add(g.matmul(params_.bind(g, br_name(k, "W")), h), params_.bind(g, br_name(k, "b"))));
            h = dropout(g, h, mode);
        }
        const NodeId context = attend(g, enc, g.matmul(params_.bind(g, "br.attn.Wq"), h));
        BrOutput out;
        out.logits = g.add(g.matmul(params_.bind(g, "br.out.W"), g.concat({h, context})), params_.bind(g, "br.out.b"));
        out.probs = g.sigmoid(out.logits);
        return out;
    }

private:
    bool needs_bridge() const { return cfg_.decoder_hidden != cfg_.encoder_width(); }

    static std::string enc_name(int layer, const char* dir, const char* what) {
        return "enc.l" + std::to_string(layer) + "." + dir + "." + what;
    }
    static std::string dec_name(int layer, const char* what) {
        return "dec.l" + std::to_string(layer) + "." + what;
    }
    static std::string br_name(int layer, const char* what) {
        return "br.mlp.l" + std::to_string(layer) + "." + what;
    }

    static NodeId zeros(Graph& g, int n) { return g.constant(Tensor({static_cast<std::size_t>(n)})); }

    static std::pair<NodeId, NodeId> lstm_cell(Graph& g, NodeId W, NodeId b, NodeId x, NodeId h, NodeId c, int H) {
        const auto n = static_cast<std::size_t>(H);
        const NodeId z = g.add(g.matmul(W, g.concat({x, h})), b);
        const NodeId in = g.sigmoid(g.slice(z, 0, n));
        const NodeId forget = g.sigmoid(g.slice(z, n, n));
        const NodeId cand = g.tanh(g.slice(z, 2 * n, n));
        const NodeId outg = g.sigmoid(g.slice(z, 3 * n, n));
        const NodeId c2 = g.add(g.mul(forget, c), g.mul(in, cand));
        const NodeId h2 = g.mul(outg, g.tanh(c2));
        return {h2, c2};
    }

    // Scaled dot-product attention of a query (width 2H) over encoder rows.
    static NodeId attend(Graph& g, const EncoderStates& enc, NodeId query) {
        const double scale = 1.0 / std::sqrt(static_cast<double>(g.value(query).size()));
        const NodeId scores = g.affine(g.matmul(enc.states, query), scale);
        const NodeId weights = g.softmax(scores);
        return g.matmul(g.transpose(enc.states), weights);
    }

    NodeId dropout(Graph& g, NodeId x, RunMode mode) const {
        if (!mode.training || mode.rng == nullptr || cfg_.dropout <= 0.0) return x;
        Tensor mask(g.value(x).shape());
        const double keep = 1.0 - cfg_.dropout;
        for (auto& v : mask.values()) v = mode.rng->bernoulli(keep) ? 1.0 / keep : 0.0;
        return g.mul(x, g.constant(std::move(mask)));
    }

    ModelConfig cfg_;
    ParameterStore params_;
};

}  // namespace ocdmlc
