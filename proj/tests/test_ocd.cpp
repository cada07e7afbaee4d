#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "ocdmlc/grad_check.hpp"
#include "ocdmlc/ocd.hpp"
#include "toy.hpp"

using namespace ocdmlc;
using ocdmlc::testing::toy_model;

namespace {

constexpr int A = 0, B = 1, C = 2, D = 3, EOS = 4;
const LabelSet kTargets{A, B, D};

/// Copy of `m` with label l renamed to perm[l] in every label-indexed parameter.
Model relabeled(const Model& m, const std::vector<int>& perm) {
    ParameterStore p = m.params();
    auto permute_rows = [&](const std::string& name) {
        const Tensor& src = m.params().get(name);
        Tensor& dst = p.get(name);
        const std::size_t cols = src.rank() == 2 ? src.cols() : 1;
        for (std::size_t l = 0; l < perm.size(); ++l)
            for (std::size_t c = 0; c < cols; ++c)
                dst.values()[static_cast<std::size_t>(perm[l]) * cols + c] = src.values()[l * cols + c];
    };
    for (const char* name : {"dec.embed", "dec.out.W", "dec.out.b", "br.out.W", "br.out.b"}) permute_rows(name);
    return Model(m.config(), p);
}

}  // namespace

TEST(Reward, WorkedExampleTrajectoryScoresMinusOne) {
    EXPECT_EQ(reward(kTargets, std::vector<int>{B, C, A, D}), -1);
    EXPECT_EQ(reward(kTargets, std::vector<int>{B, C, A, D, EOS}, EOS), -1);
}

TEST(Reward, ZeroIffSetsMatch) {
    EXPECT_EQ(reward(kTargets, std::vector<int>{D, A, B}), 0);
    EXPECT_EQ(reward({A, B}, std::vector<int>{}), -2);
    EXPECT_EQ(reward({A}, std::vector<int>{A, A}), 0);
    EXPECT_EQ(reward({A}, std::vector<int>{B, C}), -3);
}

TEST(PrefixState, TracksFalseAlarmsAndRemaining) {
    const PrefixState p({B, C}, kTargets, 4);
    EXPECT_EQ(p.false_alarms(), 1);
    EXPECT_EQ(p.remaining(), (LabelSet{A, D}));
    EXPECT_EQ(p.eos(), 4);
    EXPECT_THROW(PrefixState({B, B}, kTargets, 4), std::invalid_argument);
    EXPECT_THROW(PrefixState({5}, kTargets, 4), std::invalid_argument);
    EXPECT_THROW(PrefixState({}, {7}, 4), std::invalid_argument);
}

TEST(OptimalQ, WorkedExampleAfterB) {
    const PrefixState p({B}, kTargets, 4);
    EXPECT_EQ(optimal_q(p, A), 0);
    EXPECT_EQ(optimal_q(p, D), 0);
    EXPECT_EQ(optimal_q(p, C), -1);
    EXPECT_EQ(optimal_q(p, EOS), -2);
    EXPECT_THROW(optimal_q(p, B), std::invalid_argument);
    EXPECT_THROW(optimal_q(p, 5), std::invalid_argument);
}

TEST(OptimalQ, EosIsUniqueMaxWhenNothingRemains) {
    const PrefixState p({B, C, A, D}, kTargets, 4);
    EXPECT_EQ(optimal_q(p, EOS), -1);
}

TEST(OptimalPolicy, ReproducesWorkedExample) {
    const std::vector<std::pair<LabelSequence, std::vector<double>>> rows{
        {{}, {1.0 / 3, 1.0 / 3, 0, 1.0 / 3, 0}},
        {{B}, {0.5, 0, 0, 0.5, 0}},
        {{B, C}, {0.5, 0, 0, 0.5, 0}},
        {{B, C, A}, {0, 0, 0, 1, 0}},
        {{B, C, A, D}, {0, 0, 0, 0, 1}},
    };
    for (const auto& [prefix, expected] : rows) {
        for (double tau : {0.0, 1e-8, 1e-6}) {
            EXPECT_EQ(optimal_policy(PrefixState(prefix, kTargets, 4), tau).probs, expected);
        }
    }
}

TEST(OptimalPolicy, SoftTemperatureIsASoftmaxOverAllowedActions) {
    const PrefixState p({B}, kTargets, 4);
    const auto pi = optimal_policy(p, 1.0).probs;
    EXPECT_EQ(pi[B], 0.0);
    EXPECT_NEAR(std::accumulate(pi.begin(), pi.end(), 0.0), 1.0, 1e-15);
    const double z = 2 + std::exp(-1.0) + std::exp(-2.0);
    EXPECT_NEAR(pi[A], 1 / z, 1e-15);
    EXPECT_NEAR(pi[C], std::exp(-1.0) / z, 1e-15);
    EXPECT_NEAR(pi[EOS], std::exp(-2.0) / z, 1e-15);
    EXPECT_THROW(optimal_policy(p, -1.0), std::invalid_argument);
    // Just above the hard threshold the soft path still concentrates on the argmax set.
    EXPECT_EQ(optimal_policy(p, 1e-5).support, (std::vector<int>{A, D}));
}

TEST(OptimalPolicy, FirstStepIsUniformOverTargetsForEveryPermutation) {
    std::vector<int> ids{0, 1, 2, 3, 4};
    do {
        const LabelSet targets = make_label_set({ids[0], ids[1], ids[2]});
        const auto pi = optimal_policy(PrefixState({}, targets, 5), 1e-8);
        for (int a = 0; a < 6; ++a) {
            const bool in = std::binary_search(targets.begin(), targets.end(), a);
            EXPECT_EQ(pi.probs[static_cast<std::size_t>(a)], in ? 1.0 / 3 : 0.0);
        }
    } while (std::next_permutation(ids.begin(), ids.end()));
}

TEST(OptimalPolicy, EmittedLabelsOutsideSupport) {
    Rng rng(4);
    for (int trial = 0; trial < 500; ++trial) {
        std::vector<int> ids{0, 1, 2, 3, 4};
        rng.shuffle(ids.begin(), ids.end());
        const LabelSequence prefix(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(rng.below(6)));
        const PrefixState p(prefix, make_label_set({ids[rng.below(5)], ids[rng.below(5)]}), 5);
        const auto pi = optimal_policy(p, 1e-8);
        EXPECT_NEAR(std::accumulate(pi.probs.begin(), pi.probs.end(), 0.0), 1.0, 1e-15);
        for (int l : prefix) EXPECT_EQ(pi.probs[static_cast<std::size_t>(l)], 0.0);
    }
}

TEST(Kl, ZeroWhenModelMatchesTarget) {
    const auto pi = optimal_policy(PrefixState({B}, kTargets, 4), 0.7).probs;
    std::vector<double> logp(pi.size());
    for (std::size_t i = 0; i < pi.size(); ++i) logp[i] = std::log(pi[i]);
    Graph g;
    EXPECT_NEAR(g.value(kl_to_target(g, g.constant(Tensor::vector(logp)), pi)).item(), 0.0, 1e-15);
}

TEST(Kl, HardTargetIsCrossEntropyMinusEntropy) {
    const auto pi = optimal_policy(PrefixState({}, kTargets, 4), 1e-8).probs;
    const std::vector<double> logp = Graph::log_softmax_values({0.3, -1.2, 0.5, 2.0, -0.1});
    Graph g;
    const double kl = g.value(kl_to_target(g, g.constant(Tensor::vector(logp)), pi)).item();
    const double ce = -(logp[A] + logp[B] + logp[D]) / 3.0;
    EXPECT_NEAR(kl, ce - std::log(3.0), 1e-14);
    EXPECT_GE(kl, 0.0);
}

TEST(Trajectory, TerminatesWithinLPlusOneSteps) {
    const Model m = toy_model(2, 1);
    Rng rng(9);
    for (int trial = 0; trial < 500; ++trial) {
        const Instance inst{0, ocdmlc::testing::random_tokens(rng, 9), {0}};
        const LabelSequence y = sample_trajectory(m, inst, rng);
        ASSERT_LE(y.size(), 3u);
        EXPECT_EQ(y.back(), m.eos());
        EXPECT_EQ(std::count(y.begin(), y.end(), m.eos()), 1);
        if (y.size() == 3) {
            EXPECT_NE(y[0], y[1]);
        }
    }
}

TEST(Trajectory, FixedSeedGivesFixedTrajectory) {
    const Model m = toy_model(5, 2);
    const Instance inst{0, {1, 2, 3}, {1, 3}};
    Rng a(77), b(77);
    for (int i = 0; i < 20; ++i) EXPECT_EQ(sample_trajectory(m, inst, a), sample_trajectory(m, inst, b));
}

TEST(Trajectory, FirstStepFrequenciesMatchModel) {
    const Model m = toy_model(4, 3, 1.5);
    const std::vector<int> tokens{2, 5, 1};
    Graph g;
    const EncoderStates enc = m.encode(g, tokens);
    const auto& lp = g.value(m.decoder_step(g, m.initial_state(g, enc), m.bos(), enc).logprobs).values();
    constexpr int n = 10000;
    std::vector<int> counts(5, 0);
    Rng rng(123);
    const Instance inst{0, tokens, {0}};
    for (int i = 0; i < n; ++i) ++counts[static_cast<std::size_t>(sample_trajectory(m, inst, rng).front())];
    for (std::size_t a = 0; a < 5; ++a) {
        const double p = std::exp(lp[a]);
        const double sigma = std::sqrt(n * p * (1 - p));
        EXPECT_LE(std::abs(counts[a] - n * p), 3 * sigma + 1e-9) << "action " << a << " p=" << p;
    }
}

TEST(Rollout, RejectsInadmissibleChoices) {
    const Model m = toy_model(3, 4);
    Graph g;
    const EncoderStates enc = m.encode(g, std::vector<int>{1});
    EXPECT_THROW(rollout(g, m, enc, [](std::size_t, const std::vector<double>&) { return 0; }), std::logic_error);
    EXPECT_THROW(rollout(g, m, enc, [](std::size_t, const std::vector<double>&) { return 9; }), std::logic_error);
}

TEST(OcdLoss, NonNegative) {
    const Model m = toy_model(4, 5);
    Rng rng(6);
    for (int trial = 0; trial < 200; ++trial) {
        Graph g;
        const Instance inst{0, ocdmlc::testing::random_tokens(rng, 9), make_label_set({int(rng.below(4)), int(rng.below(4))})};
        EXPECT_GE(g.value(ocd_loss(g, m, inst, rng, OcdConfig{}).loss).item(), 0.0);
    }
}

TEST(OcdLoss, TrajectoryMustEndWithEos) {
    const Model m = toy_model(3, 6);
    Graph g;
    const EncoderStates enc = m.encode(g, std::vector<int>{1});
    EXPECT_THROW(ocd_loss_on_trajectory(g, m, enc, {0}, {0, 1}, OcdConfig{}), std::invalid_argument);
}

TEST(OcdLoss, GradientMatchesFiniteDifferencesOnFixedTrajectory) {
    Model m = toy_model(3, 7);
    const std::vector<int> tokens{4, 1, 6};
    for (const LabelSequence& traj : {LabelSequence{1, 2, 0, 3}, LabelSequence{3}, LabelSequence{2, 3}}) {
        auto loss = [&](Graph& g) {
            return ocd_loss_on_trajectory(g, m, m.encode(g, tokens), {0, 1}, traj, OcdConfig{});
        };
        const auto r = grad_check(loss, m.params(), 1e-5);
        EXPECT_LT(r.max_relative_error, 1e-4) << r.worst_parameter;
    }
}

TEST(OcdLoss, InvariantUnderLabelRelabeling) {
    const Model m = toy_model(4, 8);
    const std::vector<int> perm{2, 0, 3, 1};
    const Model p = relabeled(m, perm);
    auto map = [&](const std::vector<int>& v) {
        std::vector<int> out;
        for (int l : v) out.push_back(l < 4 ? perm[static_cast<std::size_t>(l)] : l);
        return out;
    };
    const std::vector<int> tokens{1, 2, 7};
    const LabelSet targets{0, 3};
    const LabelSequence traj{3, 1, 4};
    Graph g1, g2;
    const double a = g1.value(ocd_loss_on_trajectory(g1, m, m.encode(g1, tokens), targets, traj, OcdConfig{})).item();
    const double b = g2.value(ocd_loss_on_trajectory(g2, p, p.encode(g2, tokens), make_label_set(map(targets)),
                                                     map(traj), OcdConfig{}))
                         .item();
    EXPECT_NEAR(a, b, 1e-12);
}
