#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "ocdmlc/grad_check.hpp"
#include "ocdmlc/training.hpp"
#include "toy.hpp"

using namespace ocdmlc;
using ocdmlc::testing::toy_model;

namespace {

Model uniform_decoder(int L) {
    Model m = toy_model(L, 1);
    for (const char* name : {"dec.out.W", "dec.out.b"})
        for (double& v : m.params().get(name).values()) v = 0.0;
    return m;
}

Dataset small_dataset() {
    return synth_generate(SyntheticSpec{.labels = 4, .vocab = 40, .n_train = 48, .n_val = 16, .n_test = 16,
                                        .seed = 5, .seen_combinations = 6, .unseen_combinations = 4});
}

Model small_model(const Dataset& d, std::uint64_t seed) {
    ModelConfig c;
    c.embed_dim = 8;
    c.encoder_hidden = 4;
    c.decoder_hidden = 8;
    c.br_hidden = 8;
    c.labels = d.labels.size();
    c.vocab = static_cast<int>(d.vocab.size());
    return Model(c, seed);
}

TrainConfig small_config(Regime r) {
    TrainConfig c;
    c.regime = r;
    c.learning_rate = 0.01;
    c.batch_size = 8;
    c.epochs = 2;
    c.eval_every = 4;
    c.beam = 3;
    return c;
}

double value_of(const std::function<NodeId(Graph&)>& f) {
    Graph g;
    return g.value(f(g)).item();
}

}  // namespace

TEST(MleLoss, UniformModelGivesLogLPlusOnePerStep) {
    const Model m = uniform_decoder(4);
    const LabelSequence targets{2, 0, 3};
    const double loss = value_of([&](Graph& g) { return mle_loss(g, m, m.encode(g, std::vector<int>{1, 2}), targets); });
    EXPECT_NEAR(loss, 4 * std::log(5.0), 1e-12);
}

TEST(MleLoss, PerfectFitGivesZero) {
    Model m = uniform_decoder(3);
    m.params().get("dec.out.b")[3] = 1000.0;
    const double loss = value_of([&](Graph& g) { return mle_loss(g, m, m.encode(g, std::vector<int>{1}), {}); });
    EXPECT_EQ(loss, 0.0);
}

TEST(MleLoss, NonNegative) {
    const Model m = toy_model(4, 2);
    Rng rng(1);
    for (int i = 0; i < 50; ++i) {
        LabelSequence t{static_cast<int>(rng.below(4))};
        EXPECT_GE(value_of([&](Graph& g) { return mle_loss(g, m, m.encode(g, ocdmlc::testing::random_tokens(rng, 9)), t); }),
                  0.0);
    }
}

TEST(MleLoss, TargetsFollowFrequencyOrder) {
    LabelSpace s({"a", "b", "c"});
    s.set_frequency(0, 1);
    s.set_frequency(1, 9);
    s.set_frequency(2, 5);
    EXPECT_EQ(target_sequence({0, 1, 2}, s), (LabelSequence{1, 2, 0}));
}

TEST(ScheduledSampling, RatioOneEqualsMle) {
    const Model m = toy_model(5, 3);
    const std::vector<int> tokens{3, 1, 4};
    const LabelSequence targets{4, 0, 2};
    Rng rng(9);
    const double ss = value_of([&](Graph& g) { return scheduled_sampling_loss(g, m, m.encode(g, tokens), targets, 1.0, rng); });
    const double mle = value_of([&](Graph& g) { return mle_loss(g, m, m.encode(g, tokens), targets); });
    EXPECT_EQ(ss, mle);
}

TEST(ScheduledSampling, RatioZeroFeedsModelSamples) {
    const Model m = toy_model(5, 4);
    const std::vector<int> tokens{3, 1, 4};
    const LabelSequence targets{4, 0, 2};
    const double mle = value_of([&](Graph& g) { return mle_loss(g, m, m.encode(g, tokens), targets); });
    bool differs = false;
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        Rng a(seed), b(seed);
        const double x = value_of([&](Graph& g) { return scheduled_sampling_loss(g, m, m.encode(g, tokens), targets, 0.0, a); });
        const double y = value_of([&](Graph& g) { return scheduled_sampling_loss(g, m, m.encode(g, tokens), targets, 0.0, b); });
        EXPECT_EQ(x, y);
        differs = differs || x != mle;
    }
    EXPECT_TRUE(differs);
    Rng rng(0);
    EXPECT_THROW(value_of([&](Graph& g) { return scheduled_sampling_loss(g, m, m.encode(g, tokens), targets, 1.5, rng); }),
                 std::invalid_argument);
}

TEST(ScheduledSampling, LinearSchedule) {
    EXPECT_DOUBLE_EQ(teacher_forcing_ratio(0, 100, 1.0, 0.7), 1.0);
    EXPECT_DOUBLE_EQ(teacher_forcing_ratio(50, 100, 1.0, 0.7), 1.0 - 0.3 * 0.5);
    EXPECT_DOUBLE_EQ(teacher_forcing_ratio(100, 100, 1.0, 0.7), 0.7);
    EXPECT_DOUBLE_EQ(teacher_forcing_ratio(200, 100, 1.0, 0.7), 0.7);
}

TEST(OrderFree, TargetSelection) {
    const std::vector<double> lp{std::log(0.4), std::log(0.1), std::log(0.1), std::log(0.3), std::log(0.1)};
    EXPECT_EQ(order_free_target({0, 3}, lp, 4), 0);
    EXPECT_EQ(order_free_target({}, lp, 4), 4);
    EXPECT_EQ(order_free_target({1, 2}, lp, 4), 1);
}

TEST(OrderFree, TargetsArePermutationOfLabelsThenEos) {
    const Model m = toy_model(5, 5);
    Rng rng(2);
    for (int i = 0; i < 50; ++i) {
        const LabelSet labels = make_label_set({int(rng.below(5)), int(rng.below(5)), int(rng.below(5))});
        Graph g;
        const OrderFreeLoss r = order_free_loss(g, m, m.encode(g, ocdmlc::testing::random_tokens(rng, 9)), labels);
        ASSERT_EQ(r.targets.back(), 5);
        LabelSequence body(r.targets.begin(), r.targets.end() - 1);
        std::sort(body.begin(), body.end());
        EXPECT_EQ(body, labels);
    }
}

TEST(LogisticLoss, HandEvaluatedCase) {
    EXPECT_NEAR(logistic_loss(std::vector<double>{0.8, 0.3}, std::vector<double>{1, 0}),
                -(std::log(0.8) + std::log(0.7)), 1e-15);
    EXPECT_NEAR(logistic_loss(std::vector<double>{0.8, 0.3}, std::vector<double>{1, 0}), 0.5798, 5e-5);
}

TEST(LogisticLoss, UniformPredictorAndPerfectFit) {
    EXPECT_NEAR(logistic_loss(std::vector<double>(6, 0.5), std::vector<double>{1, 0, 1, 1, 0, 0}), 6 * std::log(2.0), 1e-14);
    EXPECT_EQ(logistic_loss(std::vector<double>{1.0, 0.0}, std::vector<double>{1, 0}), 0.0);
    Graph g;
    EXPECT_EQ(g.value(logistic_loss(g, g.constant(Tensor::vector({800, -800})), {1, 0})).item(), 0.0);
}

TEST(LogisticLoss, GraphFormAgreesWithValueForm) {
    Rng rng(7);
    for (int i = 0; i < 50; ++i) {
        std::vector<double> z(4), p(4), y(4);
        for (std::size_t k = 0; k < 4; ++k) {
            z[k] = rng.uniform(-5, 5);
            p[k] = Graph::stable_sigmoid(z[k]);
            y[k] = rng.bernoulli(0.5) ? 1.0 : 0.0;
        }
        Graph g;
        EXPECT_NEAR(g.value(logistic_loss(g, g.constant(Tensor::vector(z)), y)).item(), logistic_loss(p, y), 1e-12);
    }
    Graph g;
    EXPECT_THROW(logistic_loss(g, g.constant(Tensor::vector({0, 0})), {1}), ShapeError);
}

TEST(LogisticLoss, GradientOnRandomLogits) {
    Rng rng(8);
    for (int i = 0; i < 10; ++i) {
        Tensor z({5});
        for (double& v : z.values()) v = rng.uniform(-3, 3);
        const double err =
            grad_check([](Graph& g, NodeId t) { return logistic_loss(g, t, std::vector<double>{1, 0, 0, 1, 1}); }, z, 1e-5);
        EXPECT_LT(err, 1e-6);
    }
}

TEST(MtlLoss, LambdaZeroEqualsOcdAndLambdaOneAddsLogistic) {
    const Model m = toy_model(4, 9);
    const std::vector<int> tokens{1, 5, 2};
    const LabelSet labels{1, 2};
    const LabelSequence traj{2, 0, 4};
    auto chooser = [&](std::size_t t, const std::vector<double>&) { return traj[t]; };
    auto mtl = [&](double lambda) {
        return value_of([&](Graph& g) { return mtl_loss(g, m, m.encode(g, tokens), labels, chooser, OcdConfig{}, lambda).loss; });
    };
    const double ocd = value_of([&](Graph& g) { return ocd_loss(g, m, m.encode(g, tokens), labels, chooser, OcdConfig{}).loss; });
    const double logistic = value_of([&](Graph& g) {
        return logistic_loss(g, m.br_forward(g, m.encode(g, tokens)).logits, encode_multi_hot(labels, 4));
    });
    EXPECT_EQ(mtl(0.0), ocd);
    EXPECT_NEAR(mtl(1.0), ocd + logistic, 1e-12);
    EXPECT_NEAR(mtl(2.5), ocd + 2.5 * logistic, 1e-12);
    EXPECT_THROW(mtl(-1.0), std::invalid_argument);
}

TEST(MtlLoss, EncoderGradientIsSumOfBranches) {
    const Model m = toy_model(3, 10);
    const std::vector<int> tokens{3, 3, 1};
    const LabelSet labels{0, 2};
    const LabelSequence traj{1, 0, 3};
    auto chooser = [&](std::size_t t, const std::vector<double>&) { return traj[t]; };
    const double lambda = 0.7;
    Graph gm, go, gl;
    const auto dm = gm.backward(mtl_loss(gm, m, m.encode(gm, tokens), labels, chooser, OcdConfig{}, lambda).loss);
    const auto d_ocd = go.backward(ocd_loss(go, m, m.encode(go, tokens), labels, chooser, OcdConfig{}).loss);
    const auto d_log = gl.backward(logistic_loss(gl, m.br_forward(gl, m.encode(gl, tokens)).logits, encode_multi_hot(labels, 3)));
    for (const auto& [name, grad] : dm) {
        if (name.rfind("enc.", 0) != 0) continue;
        for (std::size_t i = 0; i < grad.size(); ++i)
            EXPECT_NEAR(grad[i], d_ocd.at(name)[i] + lambda * d_log.at(name)[i], 1e-12) << name;
    }
}

TEST(Gradients, EveryRegimeLossMatchesFiniteDifferences) {
    Model m = toy_model(3, 11);
    const std::vector<int> tokens{2, 6, 1};
    const LabelSet labels{0, 2};
    const LabelSequence traj{2, 1, 3};
    auto chooser = [&](std::size_t t, const std::vector<double>&) { return traj[t]; };
    const std::vector<std::pair<std::string, std::function<NodeId(Graph&)>>> losses{
        {"mle", [&](Graph& g) { return mle_loss(g, m, m.encode(g, tokens), {2, 0}); }},
        {"mle-ss", [&](Graph& g) { Rng r(3); return scheduled_sampling_loss(g, m, m.encode(g, tokens), {2, 0}, 0.5, r); }},
        {"order-free", [&](Graph& g) { return order_free_loss(g, m, m.encode(g, tokens), labels).loss; }},
        {"mtl", [&](Graph& g) { return mtl_loss(g, m, m.encode(g, tokens), labels, chooser, OcdConfig{}, 1.0).loss; }},
    };
    for (const auto& [name, f] : losses) {
        const auto r = grad_check(f, m.params(), 1e-5);
        EXPECT_LT(r.max_relative_error, 1e-4) << name << " worst at " << r.worst_parameter;
    }
}

TEST(Config, ValidationAndParsing) {
    TrainConfig c;
    EXPECT_NO_THROW(c.validate());
    c.ss_end = 0.9;
    c.ss_start = 0.8;
    EXPECT_THROW(c.validate(), ConfigError);
    c = TrainConfig{};
    c.lambda = -1;
    EXPECT_THROW(c.validate(), ConfigError);
    const TrainConfig parsed = TrainConfig::from(ConfigFile::parse("[train]\nregime = mle-ss\nbatch_size = 4\nlambda = 0.5\n"));
    EXPECT_EQ(parsed.regime, Regime::mle_ss);
    EXPECT_EQ(parsed.batch_size, 4u);
    EXPECT_EQ(parsed.lambda, 0.5);
    EXPECT_EQ(parsed.learning_rate, 0.0005);
    EXPECT_EQ(parsed.clip_norm, 10.0);
    EXPECT_THROW(parse_regime("rl"), std::invalid_argument);
    for (Regime r : {Regime::mle, Regime::mle_ss, Regime::order_free, Regime::ocd, Regime::ocd_mtl, Regime::br_only})
        EXPECT_EQ(parse_regime(to_string(r)), r);
}

TEST(Optimizer, FirstAdamStepMovesByLearningRate) {
    ParameterStore p;
    p.add("w", Tensor::vector({1.0, -2.0}));
    Adam adam(p, 0.9, 0.999, 1e-8);
    adam.step(p, {{"w", Tensor::vector({0.5, -3.0})}}, 0.1);
    EXPECT_NEAR(p.get("w")[0], 0.9, 1e-7);
    EXPECT_NEAR(p.get("w")[1], -1.9, 1e-7);
    EXPECT_EQ(adam.first_moments().at("w").shape(), p.get("w").shape());
}

TEST(Optimizer, ClippingCapsTheNorm) {
    GradientMap g{{"a", Tensor::vector({30, 40})}};
    EXPECT_NEAR(clip_gradients(g, 10.0), 10.0, 1e-12);
    EXPECT_NEAR(g.at("a")[0], 6.0, 1e-12);
    GradientMap small{{"a", Tensor::vector({0.3, 0.4})}};
    EXPECT_DOUBLE_EQ(clip_gradients(small, 10.0), 0.5);
    EXPECT_DOUBLE_EQ(small.at("a")[1], 0.4);
}

TEST(Train, ZeroLearningRateLeavesParametersUnchanged) {
    const Dataset d = small_dataset();
    Model m = small_model(d, 1);
    const ParameterStore before = m.params();
    TrainConfig c = small_config(Regime::ocd);
    c.learning_rate = 0.0;
    c.epochs = 1;
    train(d, m, c);
    EXPECT_TRUE(m.params() == before);
}

TEST(Train, EveryAppliedGradientIsClipped) {
    const Dataset d = small_dataset();
    for (double clip : {10.0, 0.05}) {
        Model m = small_model(d, 2);
        TrainConfig c = small_config(Regime::mle);
        c.clip_norm = clip;
        const TrainState st = train(d, m, c);
        ASSERT_EQ(st.clipped_norms.size(), st.updates);
        for (double n : st.clipped_norms) EXPECT_LE(n, clip + 1e-9);
    }
}

TEST(Train, EveryRegimeRunsAndRestoresBestParameters) {
    const Dataset d = small_dataset();
    for (Regime r : {Regime::mle, Regime::mle_ss, Regime::order_free, Regime::ocd, Regime::ocd_mtl, Regime::br_only}) {
        Model m = small_model(d, 3);
        const TrainConfig c = small_config(r);
        const TrainState st = train(d, m, c);
        EXPECT_EQ(st.updates, 12u) << to_string(r);
        ASSERT_FALSE(st.curve.empty());
        EXPECT_EQ(st.curve.back().update, st.updates);
        EXPECT_DOUBLE_EQ(validate_model(m, d.split("val"), c).mif1, st.best_val_mif1) << to_string(r);
        for (const auto& p : st.curve) EXPECT_TRUE(std::isfinite(p.loss));
    }
}

TEST(Train, DeterministicUnderSeed) {
    const Dataset d = small_dataset();
    auto run = [&] {
        Model m = small_model(d, 4);
        const TrainState st = train(d, m, small_config(Regime::ocd_mtl));
        std::stringstream ckpt;
        save_checkpoint(ckpt, m);
        return std::make_pair(ckpt.str(), curve_csv(st.curve));
    };
    EXPECT_EQ(run(), run());
}

TEST(Train, NonFiniteLossAborts) {
    const Dataset d = small_dataset();
    Model m = small_model(d, 5);
    m.params().get("dec.out.b")[0] = std::numeric_limits<double>::quiet_NaN();
    try {
        train(d, m, small_config(Regime::mle));
        FAIL() << "expected TrainingError";
    } catch (const TrainingError& e) {
        EXPECT_NE(std::string(e.what()).find("non-finite loss"), std::string::npos);
    }
}

TEST(Train, WritesCheckpointAndCurve) {
    const Dataset d = small_dataset();
    Model m = small_model(d, 6);
    const auto dir = std::filesystem::temp_directory_path() / "ocdmlc_train_test";
    std::filesystem::remove_all(dir);
    const TrainState st = train(d, m, small_config(Regime::ocd), dir);
    EXPECT_TRUE(std::filesystem::exists(dir / "model.ckpt"));
    std::ifstream curve(dir / "curve.csv");
    std::string header;
    std::getline(curve, header);
    EXPECT_EQ(header, "update,loss,val_mif1,val_ebf1");
    EXPECT_TRUE(load_checkpoint(st.checkpoint_path).params() == m.params());
    std::filesystem::remove_all(dir);
}
