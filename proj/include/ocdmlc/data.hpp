#pragma once

#include <algorithm>
#include <bit>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "ocdmlc/rng.hpp"

namespace ocdmlc {

class DataError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

using LabelSet = std::vector<int>;  // sorted, distinct
using LabelSequence = std::vector<int>;

inline LabelSet make_label_set(std::vector<int> ids) {
    std::sort(ids.begin(), ids.end());
    ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
    return ids;
}

// ---------------------------------------------------------------------------
// Vocabulary

inline constexpr int kPadId = 0;
inline constexpr int kUnkId = 1;

class Vocabulary {
public:
    Vocabulary() : tokens_{"<pad>", "<unk>"} { rebuild_index(); }

    /// Most-frequent-first up to `max_size` entries (including PAD and UNK);
    /// frequency ties are broken alphabetically.
    static Vocabulary build(const std::vector<std::vector<std::string>>& documents, std::size_t max_size) {
        std::map<std::string, std::size_t> counts;
        for (const auto& doc : documents)
            for (const auto& w : doc) ++counts[w];
        std::vector<std::pair<std::string, std::size_t>> ranked(counts.begin(), counts.end());
        std::stable_sort(ranked.begin(), ranked.end(),
                         [](const auto& a, const auto& b) { return a.second > b.second; });
        Vocabulary v;
        for (const auto& [w, _] : ranked) {
            if (v.tokens_.size() >= max_size) break;
            v.tokens_.push_back(w);
        }
        v.rebuild_index();
        return v;
    }

    int id(const std::string& token) const {
        auto it = index_.find(token);
        return it == index_.end() ? kUnkId : it->second;
    }
    const std::string& token(int id) const { return tokens_.at(static_cast<std::size_t>(id)); }
    std::size_t size() const noexcept { return tokens_.size(); }

private:
    void rebuild_index() {
        index_.clear();
        for (std::size_t i = 0; i < tokens_.size(); ++i) index_.emplace(tokens_[i], static_cast<int>(i));
    }

    std::vector<std::string> tokens_;
    std::unordered_map<std::string, int> index_;
};

// ---------------------------------------------------------------------------
// LabelSpace

/// Label inventory with training-split frequencies. Ids are dense in [0, L)
/// and the end-of-sequence id is L.
class LabelSpace {
public:
    LabelSpace() = default;

    explicit LabelSpace(std::vector<std::string> names) : names_(std::move(names)), freq_(names_.size(), 0) {
        for (std::size_t i = 0; i < names_.size(); ++i) {
            if (!index_.emplace(names_[i], static_cast<int>(i)).second) {
                throw DataError("duplicate label name: " + names_[i]);
            }
        }
    }

    int size() const noexcept { return static_cast<int>(names_.size()); }
    int eos() const noexcept { return size(); }

    int id(const std::string& name) const {
        auto it = index_.find(name);
        return it == index_.end() ? -1 : it->second;
    }
    const std::string& name(int id) const { return names_.at(static_cast<std::size_t>(id)); }

    std::size_t frequency(int id) const { return freq_.at(static_cast<std::size_t>(id)); }
    void set_frequency(int id, std::size_t count) { freq_.at(static_cast<std::size_t>(id)) = count; }

private:
    std::vector<std::string> names_;
    std::vector<std::size_t> freq_;
    std::unordered_map<std::string, int> index_;
};

/// Descending training frequency, ties by ascending label id.
inline LabelSequence order_labels_by_frequency(const LabelSet& labels, const LabelSpace& space) {
    LabelSequence out(labels.begin(), labels.end());
    for (int l : out) {
        if (l < 0 || l >= space.size()) throw DataError("label id out of range: " + std::to_string(l));
    }
    std::sort(out.begin(), out.end(), [&](int a, int b) {
        const auto fa = space.frequency(a), fb = space.frequency(b);
        return fa != fb ? fa > fb : a < b;
    });
    return out;
}

inline std::vector<double> encode_multi_hot(const LabelSet& labels, int label_count) {
    if (labels.empty()) throw DataError("encode_multi_hot: empty label set");
    std::vector<double> out(static_cast<std::size_t>(label_count), 0.0);
    for (int l : labels) {
        if (l < 0 || l >= label_count) throw DataError("encode_multi_hot: label id out of range");
        out[static_cast<std::size_t>(l)] = 1.0;
    }
    return out;
}

inline LabelSet decode_multi_hot(const std::vector<double>& vec) {
    LabelSet out;
    for (std::size_t i = 0; i < vec.size(); ++i)
        if (vec[i] > 0.5) out.push_back(static_cast<int>(i));
    return out;
}

// ---------------------------------------------------------------------------
// Instances and datasets

struct Instance {
    std::size_t id = 0;
    std::vector<int> tokens;
    LabelSet labels;
};

/// Untokenized-to-ids example: lowercased whitespace tokens and label names.
struct RawExample {
    std::vector<std::string> words;
    std::vector<std::string> labels;
};

struct RawSplit {
    std::vector<RawExample> examples;
    std::size_t rejected_empty_labels = 0;
    std::size_t dropped_too_long = 0;
};

inline constexpr std::size_t kDefaultMaxWords = 500;

inline std::vector<std::string> tokenize(const std::string& text) {
    std::vector<std::string> out;
    std::istringstream is(text);
    std::string w;
    while (is >> w) {
        std::transform(w.begin(), w.end(), w.begin(), [](unsigned char c) { return std::tolower(c); });
        out.push_back(std::move(w));
    }
    return out;
}

/// Parse one JSONL file of {"text": string, "labels": [string, ...]}.
inline RawSplit read_jsonl(std::istream& in, std::size_t max_words = kDefaultMaxWords,
                           const std::string& source = "<stream>") {
    RawSplit out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (std::all_of(line.begin(), line.end(), [](unsigned char c) { return std::isspace(c); })) continue;
        auto fail = [&](const std::string& why) {
            throw DataError(source + ":" + std::to_string(lineno) + ": " + why);
        };
        nlohmann::json obj;
        try {
            obj = nlohmann::json::parse(line);
        } catch (const nlohmann::json::parse_error& e) {
            fail(std::string("malformed JSON: ") + e.what());
        }
        if (!obj.is_object() || !obj.contains("text") || !obj["text"].is_string() || !obj.contains("labels") ||
            !obj["labels"].is_array()) {
            fail("expected an object with string \"text\" and array \"labels\"");
        }
        RawExample ex;
        for (const auto& l : obj["labels"]) {
            if (!l.is_string()) fail("labels must be strings");
            ex.labels.push_back(l.get<std::string>());
        }
        std::sort(ex.labels.begin(), ex.labels.end());
        ex.labels.erase(std::unique(ex.labels.begin(), ex.labels.end()), ex.labels.end());
        ex.words = tokenize(obj["text"].get<std::string>());
        if (ex.labels.empty()) {
            ++out.rejected_empty_labels;
            continue;
        }
        if (ex.words.empty() || ex.words.size() > max_words) {
            ++out.dropped_too_long;
            continue;
        }
        out.examples.push_back(std::move(ex));
    }
    return out;
}

inline RawSplit read_jsonl(const std::filesystem::path& path, std::size_t max_words = kDefaultMaxWords) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open " + path.string());
    return read_jsonl(in, max_words, path.string());
}

inline void write_jsonl(std::ostream& out, const std::vector<RawExample>& examples) {
    for (const auto& ex : examples) {
        std::string text;
        for (std::size_t i = 0; i < ex.words.size(); ++i) {
            if (i) text += ' ';
            text += ex.words[i];
        }
        nlohmann::json obj = {{"text", text}, {"labels", ex.labels}};
        out << obj.dump() << '\n';
    }
}

struct Dataset {
    Vocabulary vocab;
    LabelSpace labels;
    std::map<std::string, std::vector<Instance>> splits;
    std::map<std::string, std::vector<RawExample>> raw;
    std::string provenance;
    std::size_t dropped_unknown_labels = 0;

    const std::vector<Instance>& split(const std::string& name) const {
        auto it = splits.find(name);
        if (it == splits.end()) throw DataError("no split named '" + name + "'");
        return it->second;
    }
    bool has_split(const std::string& name) const { return splits.count(name) != 0; }
};

/// Build vocabulary and label space from the "train" split, then map every
/// split to ids. Labels absent from training are dropped; an instance left
/// without labels is dropped and counted.
inline Dataset assemble_dataset(std::map<std::string, std::vector<RawExample>> raw, std::size_t vocab_cap,
                                std::string provenance) {
    auto train_it = raw.find("train");
    if (train_it == raw.end()) throw DataError("dataset has no train split");
    Dataset ds;
    ds.provenance = std::move(provenance);

    std::vector<std::vector<std::string>> docs;
    std::set<std::string> names;
    for (const auto& ex : train_it->second) {
        docs.push_back(ex.words);
        names.insert(ex.labels.begin(), ex.labels.end());
    }
    ds.vocab = Vocabulary::build(docs, vocab_cap);
    ds.labels = LabelSpace(std::vector<std::string>(names.begin(), names.end()));
    std::vector<std::size_t> freq(names.size(), 0);
    for (const auto& ex : train_it->second)
        for (const auto& l : ex.labels) ++freq[static_cast<std::size_t>(ds.labels.id(l))];
    for (std::size_t i = 0; i < freq.size(); ++i) ds.labels.set_frequency(static_cast<int>(i), freq[i]);

    // Fixed split order keeps instance ids stable.
    std::vector<std::string> order{"train", "val", "test", "test_unseen"};
    for (const auto& [name, _] : raw)
        if (std::find(order.begin(), order.end(), name) == order.end()) order.push_back(name);
    std::size_t next_id = 0;
    for (const auto& name : order) {
        auto it = raw.find(name);
        if (it == raw.end()) continue;
        auto& dst = ds.splits[name];
        for (const auto& ex : it->second) {
            Instance inst;
            inst.id = next_id++;
            for (const auto& w : ex.words) inst.tokens.push_back(ds.vocab.id(w));
            std::vector<int> ids;
            for (const auto& l : ex.labels) {
                const int id = ds.labels.id(l);
                if (id >= 0) ids.push_back(id);
            }
            inst.labels = make_label_set(std::move(ids));
            if (inst.labels.empty() || inst.tokens.empty()) {
                ++ds.dropped_unknown_labels;
                continue;
            }
            dst.push_back(std::move(inst));
        }
    }
    ds.raw = std::move(raw);
    return ds;
}

/// Load train/val/test JSONL files into a dataset. Missing optional paths
/// are skipped.
inline Dataset load_jsonl(const std::map<std::string, std::filesystem::path>& files, std::size_t vocab_cap,
                          std::size_t max_words = kDefaultMaxWords) {
    std::map<std::string, std::vector<RawExample>> raw;
    std::string provenance;
    for (const auto& [split, path] : files) {
        raw[split] = read_jsonl(path, max_words).examples;
        provenance += split + "=" + path.string() + ";";
    }
    return assemble_dataset(std::move(raw), vocab_cap, provenance);
}

// ---------------------------------------------------------------------------
// Synthetic generator

struct SyntheticSpec {
    int labels = 10;
    int vocab = 200;
    std::size_t n_train = 2000;
    std::size_t n_val = 400;
    std::size_t n_test = 400;
    std::uint64_t seed = 7;
    std::size_t seen_combinations = 60;
    std::size_t unseen_combinations = 40;
    int tokens_per_label = 3;
    int noise_tokens = 2;
    int max_labels_per_instance = 4;
};

inline std::string synth_label_name(int l) {
    std::string s = std::to_string(l);
    return "c" + std::string(s.size() < 3 ? 3 - s.size() : 0, '0') + s;
}
inline std::string synth_word(int w) {
    std::string s = std::to_string(w);
    return "w" + std::string(s.size() < 4 ? 4 - s.size() : 0, '0') + s;
}

inline double binomial(int n, int k) {
    double r = 1.0;
    for (int i = 1; i <= k; ++i) r = r * (n - k + i) / i;
    return r;
}

/// Synthetic corpus whose labels are recoverable from per-label token pools
/// and whose label sets follow a seeded pairwise co-occurrence structure.
/// Splits: train, val and test draw from the seen combination pool;
/// test_unseen draws only from combinations absent from training.
inline Dataset synth_generate(const SyntheticSpec& spec) {
    const int L = spec.labels;
    if (L < 2) throw DataError("synth: need at least 2 labels");
    if (spec.max_labels_per_instance < 1) throw DataError("synth: max_labels_per_instance must be >= 1");
    if (spec.tokens_per_label < 1) throw DataError("synth: tokens_per_label must be >= 1");
    const int max_k = std::min(spec.max_labels_per_instance, L);
    double available = 0.0;
    for (int k = 1; k <= max_k; ++k) available += binomial(L, k);
    if (static_cast<double>(spec.seen_combinations + spec.unseen_combinations) > available) {
        throw DataError("synth: requested " + std::to_string(spec.seen_combinations + spec.unseen_combinations) +
                        " combinations but only " + std::to_string(static_cast<long long>(available)) + " exist");
    }
    if (spec.seen_combinations == 0) throw DataError("synth: need at least one seen combination");
    const int pool = spec.vocab / (L + 1);
    if (pool < 2) throw DataError("synth: vocab too small for the label count");

    Rng rng(spec.seed);

    // Label popularity and pairwise affinity.
    std::vector<double> popularity(static_cast<std::size_t>(L));
    for (int l = 0; l < L; ++l) popularity[static_cast<std::size_t>(l)] = 1.0 / std::pow(l + 1.0, 0.6);
    std::vector<double> affinity(static_cast<std::size_t>(L * L), 1.0);
    for (int i = 0; i < L; ++i)
        for (int j = i + 1; j < L; ++j) {
            const double a = std::exp(rng.uniform(-1.5, 1.5));
            affinity[static_cast<std::size_t>(i * L + j)] = affinity[static_cast<std::size_t>(j * L + i)] = a;
        }
    const std::vector<double> size_weights{0.30, 0.35, 0.25, 0.10};

    auto draw_combination = [&] {
        std::vector<double> sw(size_weights.begin(), size_weights.begin() + std::min<std::size_t>(max_k, 4));
        for (int k = 5; k <= max_k; ++k) sw.push_back(0.05);
        const int k = static_cast<int>(rng.categorical(sw)) + 1;
        std::vector<int> chosen;
        std::vector<double> w(popularity);
        for (int step = 0; step < k; ++step) {
            const int l = static_cast<int>(rng.categorical(w));
            chosen.push_back(l);
            for (int j = 0; j < L; ++j) w[static_cast<std::size_t>(j)] *= affinity[static_cast<std::size_t>(l * L + j)];
            for (int c : chosen) w[static_cast<std::size_t>(c)] = 0.0;
        }
        return make_label_set(std::move(chosen));
    };

    const std::size_t wanted = spec.seen_combinations + spec.unseen_combinations;
    std::vector<LabelSet> combos;
    std::set<LabelSet> seen_sets;
    const std::size_t max_attempts = 200000 + wanted * 1000;
    for (std::size_t attempt = 0; combos.size() < wanted && attempt < max_attempts; ++attempt) {
        LabelSet c = draw_combination();
        if (seen_sets.insert(c).second) combos.push_back(std::move(c));
    }
    // The sampler can miss rare combinations; fill deterministically.
    for (std::uint64_t mask = 1; combos.size() < wanted && mask < (std::uint64_t{1} << std::min(L, 62)); ++mask) {
        if (std::popcount(mask) > max_k) continue;
        LabelSet c;
        for (int l = 0; l < L; ++l)
            if (mask >> l & 1) c.push_back(l);
        if (seen_sets.insert(c).second) combos.push_back(std::move(c));
    }
    if (combos.size() < wanted) throw DataError("synth: could not generate enough distinct combinations");

    // Partition: every label must occur in some seen combination.
    std::vector<LabelSet> seen_pool, unseen_pool;
    for (int attempt = 0;; ++attempt) {
        rng.shuffle(combos.begin(), combos.end());
        seen_pool.assign(combos.begin(), combos.begin() + static_cast<std::ptrdiff_t>(spec.seen_combinations));
        unseen_pool.assign(combos.begin() + static_cast<std::ptrdiff_t>(spec.seen_combinations), combos.end());
        std::vector<bool> covered(static_cast<std::size_t>(L), false);
        for (const auto& c : seen_pool)
            for (int l : c) covered[static_cast<std::size_t>(l)] = true;
        if (std::all_of(covered.begin(), covered.end(), [](bool b) { return b; })) break;
        if (attempt > 1000) throw DataError("synth: cannot cover every label with the seen combinations");
    }
    // Zipf-like popularity over seen combinations gives a spread of
    // training frequencies.
    std::vector<double> combo_weight(seen_pool.size());
    for (std::size_t i = 0; i < combo_weight.size(); ++i) combo_weight[i] = 1.0 / std::pow(i + 1.0, 0.8);

    // Per-label token pools, each overlapping its successor by one word.
    auto label_pool = [&](int l) {
        std::vector<int> words;
        for (int i = 0; i < pool; ++i) words.push_back(l * pool + i);
        words.push_back(((l + 1) % L) * pool);
        return words;
    };
    std::vector<int> noise_words;
    for (int w = L * pool; w < spec.vocab; ++w) noise_words.push_back(w);

    std::vector<std::string> names;
    for (int l = 0; l < L; ++l) names.push_back(synth_label_name(l));

    auto make_example = [&](const LabelSet& labels) {
        RawExample ex;
        std::vector<int> words;
        for (int l : labels) {
            const auto p = label_pool(l);
            for (int t = 0; t < spec.tokens_per_label; ++t) words.push_back(p[rng.below(p.size())]);
        }
        if (!noise_words.empty())
            for (int t = 0; t < spec.noise_tokens; ++t) words.push_back(noise_words[rng.below(noise_words.size())]);
        rng.shuffle(words.begin(), words.end());
        for (int w : words) ex.words.push_back(synth_word(w));
        for (int l : labels) ex.labels.push_back(names[static_cast<std::size_t>(l)]);
        return ex;
    };

    std::map<std::string, std::vector<RawExample>> raw;
    std::vector<bool> in_train(seen_pool.size(), false);
    auto fill_seen = [&](const std::string& split, std::size_t n) {
        auto& dst = raw[split];
        const bool is_train = split == "train";
        for (std::size_t i = 0; i < n; ++i) {
            std::size_t c = rng.categorical(combo_weight);
            while (!is_train && !in_train[c]) c = rng.categorical(combo_weight);
            if (is_train) in_train[c] = true;
            dst.push_back(make_example(seen_pool[c]));
        }
    };
    if (spec.n_train == 0) throw DataError("synth: n_train must be >= 1");
    fill_seen("train", spec.n_train);
    fill_seen("val", spec.n_val);
    fill_seen("test", spec.n_test);
    if (!unseen_pool.empty()) {
        auto& dst = raw["test_unseen"];
        for (std::size_t i = 0; i < spec.n_test; ++i) dst.push_back(make_example(unseen_pool[rng.below(unseen_pool.size())]));
    }
    // Every word of the synthetic vocabulary fits under the cap.
    return assemble_dataset(std::move(raw), static_cast<std::size_t>(spec.vocab) + 2,
                            "synthetic seed=" + std::to_string(spec.seed));
}

}  // namespace ocdmlc
