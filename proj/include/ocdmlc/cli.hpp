#pragma once

#include <CLI11.hpp>
#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "ocdmlc/analysis.hpp"
#include "ocdmlc/checkpoint.hpp"
#include "ocdmlc/config.hpp"
#include "ocdmlc/data.hpp"
#include "ocdmlc/decoding.hpp"
#include "ocdmlc/metrics.hpp"
#include "ocdmlc/model.hpp"
#include "ocdmlc/ocd.hpp"
#include "ocdmlc/oracle.hpp"
#include "ocdmlc/rng.hpp"
#include "ocdmlc/training.hpp"

namespace ocdmlc {

inline SyntheticSpec synthetic_spec_from(const ConfigFile& f) {
    SyntheticSpec s;
    s.labels = f.get("synth", "labels", s.labels);
    s.vocab = f.get("synth", "vocab", s.vocab);
    s.n_train = f.get("synth", "n_train", s.n_train);
    s.n_val = f.get("synth", "n_val", s.n_val);
    s.n_test = f.get("synth", "n_test", s.n_test);
    s.seed = f.get("synth", "seed", s.seed);
    s.seen_combinations = f.get("synth", "seen_combinations", s.seen_combinations);
    s.unseen_combinations = f.get("synth", "unseen_combinations", s.unseen_combinations);
    s.tokens_per_label = f.get("synth", "tokens_per_label", s.tokens_per_label);
    s.noise_tokens = f.get("synth", "noise_tokens", s.noise_tokens);
    s.max_labels_per_instance = f.get("synth", "max_labels_per_instance", s.max_labels_per_instance);
    return s;
}

inline const std::vector<std::string>& split_names() {
    static const std::vector<std::string> names{"train", "val", "test", "test_unseen"};
    return names;
}

/// JSONL files from `dir` when given, otherwise the synthetic task described by [synth].
inline Dataset load_dataset(const ConfigFile& cfg, const std::filesystem::path& dir) {
    if (dir.empty()) return synth_generate(synthetic_spec_from(cfg));
    std::map<std::string, std::filesystem::path> files;
    for (const auto& s : split_names())
        if (std::filesystem::exists(dir / (s + ".jsonl"))) files[s] = dir / (s + ".jsonl");
    if (!files.count("train")) throw DataError("no train.jsonl in " + dir.string());
    return load_jsonl(files, cfg.get<std::size_t>("data", "vocab_cap", 50000),
                      cfg.get<std::size_t>("data", "max_words", kDefaultMaxWords));
}

inline ModelConfig model_config_for(const ConfigFile& cfg, const Dataset& data) {
    ModelConfig m = ModelConfig::from(cfg);
    m.labels = static_cast<int>(data.labels.size());
    m.vocab = static_cast<int>(data.vocab.size());
    m.validate();
    return m;
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << text;
}

inline nlohmann::json names_of(const std::vector<int>& ids, const LabelSpace& space) {
    nlohmann::json arr = nlohmann::json::array();
    for (int l : ids) arr.push_back(space.name(l));
    return arr;
}

inline nlohmann::json json_number(double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); }

struct EvalResult {
    std::vector<Prediction> preds;
    MetricsReport report;
};

inline EvalResult evaluate_split(const Model& model, const Dataset& data, const std::string& split,
                                 DecodeOptions opt, bool tune) {
    if (opt.strategy == Strategy::br && tune) {
        opt.threshold = tune_threshold(model, data.has_split("val") ? data.split("val") : data.split("train"));
    }
    EvalResult r;
    const auto& instances = data.split(split);
    r.preds = predict_all(model, instances, opt);
    r.report = evaluate_predictions(golds_of(instances), labels_of(r.preds), model.label_count());
    return r;
}

inline std::string predictions_jsonl(const std::vector<Prediction>& preds, const std::vector<Instance>& instances,
                                     const LabelSpace& space, Strategy strategy) {
    std::ostringstream os;
    for (std::size_t i = 0; i < preds.size(); ++i) {
        nlohmann::json obj = {{"id", instances[i].id},
                              {"gold", names_of(instances[i].labels, space)},
                              {"pred", names_of(preds[i].sequence, space)},
                              {"log_path", json_number(preds[i].log_path)},
                              {"log_joint", json_number(preds[i].log_joint)},
                              {"strategy", to_string(strategy)}};
        os << obj.dump() << '\n';
    }
    return os.str();
}

/// Exhaustive comparison of optimal_q with brute_q, and of the reward and
/// ebF1 argmax sets, on random cases. Returns the first counterexample.
struct OracleCheckResult {
    std::size_t cases = 0;
    std::size_t q_mismatches = 0;
    std::size_t argmax_mismatches = 0;
    std::string first_counterexample;
};

inline std::string describe_case(const PrefixState& p, int action) {
    std::ostringstream os;
    os << "L=" << p.label_count() << " targets={";
    for (std::size_t i = 0; i < p.targets().size(); ++i) os << (i ? "," : "") << p.targets()[i];
    os << "} prefix=[";
    for (std::size_t i = 0; i < p.emitted().size(); ++i) os << (i ? "," : "") << p.emitted()[i];
    os << "] action=" << action;
    return os.str();
}

/// Random (targets, prefix) with 1 <= L <= max_l, 1 <= |targets| <= min(max_targets, L),
/// and a prefix of distinct labels. Gold sets are never empty, so neither are targets.
inline PrefixState random_prefix(Rng& rng, int max_l, int max_targets) {
    const int L = 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(max_l)));
    std::vector<int> ids(static_cast<std::size_t>(L));
    std::iota(ids.begin(), ids.end(), 0);
    rng.shuffle(ids.begin(), ids.end());
    const int k = 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(std::min(max_targets, L))));
    LabelSet targets(ids.begin(), ids.begin() + k);
    rng.shuffle(ids.begin(), ids.end());
    const int m = static_cast<int>(rng.below(static_cast<std::uint64_t>(L + 1)));
    LabelSequence prefix(ids.begin(), ids.begin() + m);
    return PrefixState(prefix, make_label_set(targets), L);
}

inline OracleCheckResult oracle_check(std::size_t cases, int max_l, std::uint64_t seed) {
    oracle::OracleBudget budget;
    budget.max_labels = max_l;
    budget.max_prefix = max_l;
    Rng rng(seed);
    OracleCheckResult r;
    while (r.cases < cases) {
        const PrefixState p = random_prefix(rng, max_l, budget.max_targets);
        std::vector<int> actions;
        for (int a = 0; a <= p.label_count(); ++a)
            if (a == p.eos() || !p.is_emitted(a)) actions.push_back(a);
        const int action = actions[rng.below(actions.size())];
        ++r.cases;
        const int fast = optimal_q(p, action);
        const int slow = oracle::brute_q(p, action, budget);
        if (fast != slow) {
            ++r.q_mismatches;
            if (r.first_counterexample.empty()) {
                r.first_counterexample = "Q mismatch: " + describe_case(p, action) + " optimal_q=" +
                                         std::to_string(fast) + " brute_q=" + std::to_string(slow);
            }
        }
        const auto by_reward = oracle::argmax_actions(p, [&](int a) { return oracle::brute_q(p, a, budget); });
        const auto by_f1 = oracle::argmax_actions(p, [&](int a) { return oracle::brute_q_ebf1(p, a, budget); });
        if (by_reward != by_f1) {
            ++r.argmax_mismatches;
            if (r.first_counterexample.empty()) {
                r.first_counterexample = "argmax mismatch: " + describe_case(p, action);
            }
        }
    }
    return r;
}

/// Entry point for the `ocdmlc` executable. Usage errors return 2, runtime failures 1.
inline int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"Multi-label classification with sequence decoders and optimal completion distillation"};
    app.require_subcommand(1);
    app.set_help_all_flag("--help-all", "Show help for every subcommand");

    std::string config_path, out_dir = "out", data_dir, regime_name, strategy_name = "rnn", threshold = "0.5";
    std::string checkpoint, split = "test";
    std::optional<std::uint64_t> seed;
    std::optional<int> beam;
    int max_l = 5;
    std::size_t cases = 10000;
    std::vector<std::string> models;
    std::vector<std::string> report_splits{"test", "test_unseen"};

    auto common = [&](CLI::App* sub) {
        sub->add_option("--config", config_path, "INI config with [synth], [data], [model], [train] sections")
            ->check(CLI::ExistingFile);
        sub->add_option("--seed", seed, "Seed (overrides the config)");
        sub->add_option("--out", out_dir, "Output directory")->capture_default_str();
    };
    auto with_data = [&](CLI::App* sub) {
        sub->add_option("--data", data_dir, "Directory with train/val/test[/test_unseen].jsonl (default: synthetic)")
            ->check(CLI::ExistingDirectory);
    };
    auto with_decoding = [&](CLI::App* sub) {
        sub->add_option("--strategy", strategy_name, "Decoding strategy")
            ->check(CLI::IsMember({"rnn", "br", "rescore", "joint"}))
            ->capture_default_str();
        sub->add_option("--beam", beam, "Beam width (default 6)")->check(CLI::PositiveNumber);
        sub->add_option("--threshold", threshold, "BR threshold")
            ->check(CLI::IsMember({"tuned", "0.5"}))
            ->capture_default_str();
    };

    auto* synth = app.add_subcommand("synth", "Write the synthetic dataset as JSONL");
    common(synth);

    auto* train_cmd = app.add_subcommand("train", "Train one regime; writes model.ckpt, curve.csv, metrics.csv");
    common(train_cmd);
    with_data(train_cmd);
    train_cmd->add_option("--regime", regime_name, "Training regime")
        ->check(CLI::IsMember({"mle", "mle-ss", "order-free", "ocd", "ocd-mtl", "br-only"}));
    train_cmd->add_option("--beam", beam, "Beam width for validation (default 6)")->check(CLI::PositiveNumber);

    auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint on one split; writes metrics.csv");
    common(eval_cmd);
    with_data(eval_cmd);
    with_decoding(eval_cmd);
    eval_cmd->add_option("--checkpoint", checkpoint, "Checkpoint (default OUT/model.ckpt)");
    eval_cmd->add_option("--split", split, "Split name")->capture_default_str();

    auto* decode_cmd = app.add_subcommand("decode", "Write predictions for one split to preds.jsonl");
    common(decode_cmd);
    with_data(decode_cmd);
    with_decoding(decode_cmd);
    decode_cmd->add_option("--checkpoint", checkpoint, "Checkpoint (default OUT/model.ckpt)");
    decode_cmd->add_option("--split", split, "Split name")->capture_default_str();

    auto* oracle_cmd = app.add_subcommand("oracle-check", "Compare the analytic Q-values with brute force");
    common(oracle_cmd);
    oracle_cmd->add_option("--max-l", max_l, "Largest label count")->check(CLI::Range(1, 5))->capture_default_str();
    oracle_cmd->add_option("--cases", cases, "Number of random cases")->capture_default_str();

    auto* report_cmd = app.add_subcommand("report", "Metrics, combination, position-wise and frequency tables");
    common(report_cmd);
    with_data(report_cmd);
    with_decoding(report_cmd);
    report_cmd->add_option("--model", models, "NAME=CHECKPOINT (repeatable)")->required();
    report_cmd->add_option("--splits", report_splits, "Splits to report")->capture_default_str();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        out << app.help();
        return 0;
    } catch (const CLI::CallForAllHelp& e) {
        out << app.help("", CLI::AppFormatMode::All);
        return 0;
    } catch (const CLI::ParseError& e) {
        err << "error: " << e.what() << "\n\n" << app.help();
        return 2;
    }

    try {
        const ConfigFile cfg = config_path.empty() ? ConfigFile{} : ConfigFile::load(config_path);
        const std::filesystem::path outp(out_dir);

        auto decode_options = [&] {
            DecodeOptions opt;
            opt.strategy = parse_strategy(strategy_name);
            opt.beam = beam.value_or(cfg.get("train", "beam", 6));
            return opt;
        };

        if (app.got_subcommand(synth)) {
            SyntheticSpec spec = synthetic_spec_from(cfg);
            if (seed) spec.seed = *seed;
            const Dataset d = synth_generate(spec);
            for (const auto& [name, examples] : d.raw) {
                std::ostringstream os;
                write_jsonl(os, examples);
                write_text(outp / (name + ".jsonl"), os.str());
                out << name << ": " << examples.size() << " examples\n";
            }
            return 0;
        }

        if (app.got_subcommand(oracle_cmd)) {
            const OracleCheckResult r = oracle_check(cases, max_l, seed.value_or(1));
            out << "cases=" << r.cases << " q_mismatches=" << r.q_mismatches
                << " argmax_mismatches=" << r.argmax_mismatches << '\n';
            if (!r.first_counterexample.empty()) {
                out << "first counterexample: " << r.first_counterexample << '\n';
                return 1;
            }
            return 0;
        }

        const Dataset data = load_dataset(cfg, data_dir);

        if (app.got_subcommand(train_cmd)) {
            TrainConfig tc = TrainConfig::from(cfg);
            if (seed) tc.seed = *seed;
            if (!regime_name.empty()) tc.regime = parse_regime(regime_name);
            if (beam) tc.beam = *beam;
            Model model(model_config_for(cfg, data), tc.seed);
            TrainHooks hooks;
            hooks.on_eval = [&](const CurvePoint& p) {
                out << "update " << p.update << " loss " << format_double(p.loss) << " val_mif1 "
                    << format_double(p.val_mif1) << " val_ebf1 " << format_double(p.val_ebf1) << '\n';
            };
            const TrainState st = train(data, model, tc, outp, hooks);
            DecodeOptions opt;
            opt.strategy = default_strategy(tc.regime);
            opt.beam = tc.beam;
            std::string csv = metrics_csv_header() + "\n";
            for (const auto& s : split_names()) {
                if (s == "train" || !data.has_split(s) || data.split(s).empty()) continue;
                csv += metrics_csv_row(to_string(tc.regime), s, evaluate_split(model, data, s, opt, false).report) + "\n";
            }
            write_text(outp / "metrics.csv", csv);
            out << "best val_mif1 " << format_double(st.best_val_mif1) << " at update " << st.best_update << " of "
                << st.updates << "; wrote " << st.checkpoint_path.string() << '\n';
            return 0;
        }

        auto load_model = [&](const std::filesystem::path& path) {
            Model m = load_checkpoint(path);
            if (m.label_count() != static_cast<int>(data.labels.size()) ||
                m.config().vocab != static_cast<int>(data.vocab.size())) {
                throw std::runtime_error("checkpoint " + path.string() + " does not match the dataset's label or vocabulary size");
            }
            return m;
        };
        const bool tune = threshold == "tuned";

        if (app.got_subcommand(eval_cmd) || app.got_subcommand(decode_cmd)) {
            const Model model = load_model(checkpoint.empty() ? outp / "model.ckpt" : std::filesystem::path(checkpoint));
            const DecodeOptions opt = decode_options();
            const EvalResult r = evaluate_split(model, data, split, opt, tune);
            if (app.got_subcommand(eval_cmd)) {
                write_text(outp / "metrics.csv",
                           metrics_csv_header() + "\n" + metrics_csv_row(to_string(opt.strategy), split, r.report) + "\n");
                out << metrics_table({{to_string(opt.strategy), r.report}}, split);
            } else {
                write_text(outp / "preds.jsonl", predictions_jsonl(r.preds, data.split(split), data.labels, opt.strategy));
                out << "wrote " << r.preds.size() << " predictions to " << (outp / "preds.jsonl").string() << '\n';
            }
            return 0;
        }

        if (app.got_subcommand(report_cmd)) {
            const DecodeOptions opt = decode_options();
            const auto train_golds = golds_of(data.split("train"));
            std::string metrics = metrics_csv_header() + "\n";
            std::string combos = "model,split,s_test,s_test_train\n";
            std::string poswise = "model,split,position,accuracy\n";
            std::string freq = "model,split,bucket,instances,mean_ebf1\n";
            std::ostringstream text;
            for (const auto& s : report_splits) {
                const auto golds = golds_of(data.split(s));
                const CombinationStats ref = combination_stats(golds, train_golds);
                combos += "reference," + s + "," + std::to_string(ref.s_test) + "," + std::to_string(ref.s_test_train) + "\n";
                std::vector<std::pair<std::string, MetricsReport>> rows;
                for (const auto& spec : models) {
                    const auto eq = spec.find('=');
                    if (eq == std::string::npos || eq == 0) throw std::runtime_error("--model expects NAME=CHECKPOINT, got '" + spec + "'");
                    const std::string name = spec.substr(0, eq);
                    const Model model = load_model(spec.substr(eq + 1));
                    const EvalResult r = evaluate_split(model, data, s, opt, tune);
                    rows.emplace_back(name, r.report);
                    metrics += metrics_csv_row(name, s, r.report) + "\n";
                    const auto preds = labels_of(r.preds);
                    const CombinationStats cs = combination_stats(preds, train_golds);
                    combos += name + "," + s + "," + std::to_string(cs.s_test) + "," + std::to_string(cs.s_test_train) + "\n";
                    if (opt.strategy != Strategy::br) {
                        std::vector<LabelSequence> seqs;
                        for (const auto& p : r.preds) seqs.push_back(p.sequence);
                        const auto acc = positionwise_accuracy(seqs, golds);
                        for (std::size_t t = 0; t < acc.size(); ++t)
                            poswise += name + "," + s + "," + std::to_string(t + 1) + "," + format_double(acc[t]) + "\n";
                    }
                    for (const auto& b : ebf1_vs_frequency(preds, golds, train_golds))
                        freq += name + "," + s + "," + b.label() + "," + std::to_string(b.instances) + "," +
                                format_double(b.mean_ebf1) + "\n";
                }
                text << metrics_table(rows, s) << '\n';
            }
            write_text(outp / "metrics.csv", metrics);
            write_text(outp / "combos.csv", combos);
            write_text(outp / "poswise.csv", poswise);
            write_text(outp / "freq.csv", freq);
            write_text(outp / "report.txt", text.str());
            out << text.str();
            return 0;
        }
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return 1;
    }
    return 1;
}

}  // namespace ocdmlc
