#pragma once

#include <cstdint>
#include <vector>

#include "ocdmlc/model.hpp"
#include "ocdmlc/rng.hpp"

namespace ocdmlc::testing {

/// Small model: hidden width 8 everywhere. `bound` widens the uniform init so
/// the nonlinearities operate away from their linear regime.
inline Model toy_model(int labels, std::uint64_t seed, double bound = 0.8, int vocab = 9) {
    ModelConfig cfg;
    cfg.embed_dim = 5;
    cfg.encoder_hidden = 4;
    cfg.decoder_hidden = 8;
    cfg.br_hidden = 8;
    cfg.labels = labels;
    cfg.vocab = vocab;
    Model m(cfg, seed);
    Rng rng(seed ^ 0x9e3779b97f4a7c15ULL);
    for (auto& [_, t] : m.params())
        for (double& v : t.values()) v = rng.uniform(-bound, bound);
    return m;
}

inline std::vector<int> random_tokens(Rng& rng, int vocab, std::size_t max_len = 6) {
    std::vector<int> t(1 + rng.below(max_len));
    for (int& x : t) x = static_cast<int>(rng.below(static_cast<std::uint64_t>(vocab)));
    return t;
}

}  // namespace ocdmlc::testing
