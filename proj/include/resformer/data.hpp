#pragma once

// Corpus ingestion (JSONL), vocabulary/tokenization, corpus-granularity
// splitting, and the synthetic long-range marker/query benchmark.

#include "resformer/numerics.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <array>
#include <cctype>
#include <fstream>
#include <map>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

namespace resformer {

struct LoadError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct SpecError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct SplitError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct SentenceRecord {
    std::string corpus_id;
    int index = 0;
    std::string text;
    std::string label;

    bool operator==(const SentenceRecord&) const = default;
};

struct Corpus {
    std::string corpus_id;
    std::vector<SentenceRecord> sentences;  // ordered by index, contiguous from 0

    bool operator==(const Corpus&) const = default;
};

inline std::vector<Corpus> load_jsonl(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw LoadError("cannot open " + path);
    std::map<std::string, std::vector<SentenceRecord>> grouped;
    std::string line;
    long line_no = 0;
    while (std::getline(f, line)) {
        ++line_no;
        if (line.empty()) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            throw LoadError(path + ":" + std::to_string(line_no) +
                            ": malformed JSON: " + e.what());
        }
        for (const auto& [key, _] : j.items())
            if (key != "corpus_id" && key != "index" && key != "text" && key != "label")
                throw LoadError(path + ":" + std::to_string(line_no) +
                                ": unknown key '" + key + "'");
        if (!j.contains("corpus_id") || !j.contains("index") || !j.contains("text") ||
            !j.contains("label"))
            throw LoadError(path + ":" + std::to_string(line_no) + ": missing key");
        SentenceRecord r;
        try {
            r.corpus_id = j.at("corpus_id").get<std::string>();
            r.index = j.at("index").get<int>();
            r.text = j.at("text").get<std::string>();
            r.label = j.at("label").get<std::string>();
        } catch (const nlohmann::json::exception& e) {
            throw LoadError(path + ":" + std::to_string(line_no) +
                            ": bad field type: " + e.what());
        }
        grouped[r.corpus_id].push_back(std::move(r));
    }
    std::vector<Corpus> corpora;
    for (auto& [id, records] : grouped) {
        std::sort(records.begin(), records.end(),
                  [](const auto& a, const auto& b) { return a.index < b.index; });
        for (std::size_t i = 0; i < records.size(); ++i) {
            if (i > 0 && records[i].index == records[i - 1].index)
                throw LoadError("duplicate index " + std::to_string(records[i].index) +
                                " in corpus " + id);
            if (records[i].index != static_cast<int>(i))
                throw LoadError("non-contiguous indices in corpus " + id);
        }
        corpora.push_back({id, std::move(records)});
    }
    return corpora;
}

inline void write_jsonl(const std::string& path, const std::vector<Corpus>& corpora) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw LoadError("cannot open " + path + " for writing");
    for (const auto& c : corpora)
        for (const auto& s : c.sentences) {
            nlohmann::json j{{"corpus_id", s.corpus_id},
                             {"index", s.index},
                             {"text", s.text},
                             {"label", s.label}};
            f << j.dump() << "\n";
        }
}

// Lowercased word/punctuation splitter: alphanumeric runs are tokens,
// every other non-space character is its own token.
inline std::vector<std::string> tokenize_words(const std::string& text) {
    std::vector<std::string> out;
    std::string cur;
    for (char ch : text) {
        unsigned char u = static_cast<unsigned char>(ch);
        if (std::isalnum(u)) {
            cur.push_back(static_cast<char>(std::tolower(u)));
        } else {
            if (!cur.empty()) {
                out.push_back(cur);
                cur.clear();
            }
            if (!std::isspace(u)) out.push_back(std::string(1, ch));
        }
    }
    if (!cur.empty()) out.push_back(cur);
    return out;
}

struct Vocab {
    static constexpr int kPad = 0;
    static constexpr int kUnk = 1;
    static constexpr int kCls = 2;

    std::vector<std::string> tokens;  // id -> token, reserved first
    std::unordered_map<std::string, int> index;

    int size() const { return static_cast<int>(tokens.size()); }
    int id_of(const std::string& tok) const {
        auto it = index.find(tok);
        return it == index.end() ? kUnk : it->second;
    }
};

inline Vocab build_vocab(const std::vector<Corpus>& corpora, int min_count = 1) {
    std::map<std::string, long> counts;
    for (const auto& c : corpora)
        for (const auto& s : c.sentences)
            for (const auto& w : tokenize_words(s.text)) ++counts[w];
    Vocab v;
    v.tokens = {"<pad>", "<unk>", "<cls>"};
    for (const auto& [tok, n] : counts)
        if (n >= min_count) v.tokens.push_back(tok);
    for (std::size_t i = 0; i < v.tokens.size(); ++i) v.index[v.tokens[i]] = static_cast<int>(i);
    return v;
}

inline std::vector<int> tokenize(const std::string& text, const Vocab& v) {
    std::vector<int> ids;
    for (const auto& w : tokenize_words(text)) ids.push_back(v.id_of(w));
    return ids;
}

// One token per line, line number = id; PAD/UNK/CLS are the reserved
// first three lines.
inline void save_vocab(const std::string& path, const Vocab& v) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw LoadError("cannot open " + path + " for writing");
    for (const auto& t : v.tokens) f << t << "\n";
}

inline Vocab load_vocab(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw LoadError("cannot open vocabulary " + path);
    Vocab v;
    std::string line;
    while (std::getline(f, line)) v.tokens.push_back(line);
    if (v.tokens.size() < 3 || v.tokens[0] != "<pad>" || v.tokens[1] != "<unk>" ||
        v.tokens[2] != "<cls>")
        throw LoadError("vocabulary is missing the reserved PAD/UNK/CLS lines");
    for (std::size_t i = 0; i < v.tokens.size(); ++i) v.index[v.tokens[i]] = static_cast<int>(i);
    return v;
}

struct LabelMap {
    std::vector<std::string> labels;
    std::unordered_map<std::string, int> index;

    int size() const { return static_cast<int>(labels.size()); }
    int id_of(const std::string& l) const {
        auto it = index.find(l);
        if (it == index.end()) throw LoadError("unknown label: " + l);
        return it->second;
    }
};

inline LabelMap build_label_map(const std::vector<Corpus>& corpora) {
    std::map<std::string, int> seen;
    for (const auto& c : corpora)
        for (const auto& s : c.sentences) seen.emplace(s.label, 0);
    LabelMap m;
    for (const auto& [l, _] : seen) {
        m.index[l] = static_cast<int>(m.labels.size());
        m.labels.push_back(l);
    }
    return m;
}

// ---------------------------------------------------------------------------
// Synthetic long-range benchmark: periodic MARKER sentences announce a
// class word; QUERY sentences must recover the most recent marker's class
// across >= G in-between distractor sentences. Query text is constant, so
// the label is never inferable from the query sentence itself.

struct SyntheticTaskSpec {
    int num_corpora = 4;
    int sentences_per_corpus = 60;
    int marker_gap = 10;      // G, minimum sentences between marker and query
    int num_classes = 4;      // C signal classes; distractors carry "none"
    int distractor_vocab = 20;
    std::uint64_t seed = 1;

    void validate() const {
        if (marker_gap < 1) throw SpecError("marker_gap must be >= 1");
        if (num_classes < 2) throw SpecError("num_classes must be >= 2");
        if (num_corpora < 1 || sentences_per_corpus < 1 || distractor_vocab < 2)
            throw SpecError("corpus counts must be positive");
        if (marker_gap >= sentences_per_corpus)
            throw SpecError("infeasible spec: marker_gap >= sentences_per_corpus");
    }
};

struct TraceEntry {
    std::string corpus_id;
    int index = 0;
    std::string kind;              // "marker" | "query" | "distractor"
    int class_idx = -1;            // marker/query only
    int governing_marker = -1;     // query only: index of its marker
};

struct SyntheticData {
    std::vector<Corpus> corpora;
    std::vector<TraceEntry> trace;
};

inline std::string synthetic_class_word(int c) {
    static const char* names[] = {"red", "blue", "green", "gold",
                                  "violet", "amber", "coral", "ivory"};
    if (c < 8) return names[c];
    return "class" + std::to_string(c);
}

inline SyntheticData generate_synthetic(const SyntheticTaskSpec& spec) {
    spec.validate();
    SyntheticData out;
    Rng base(spec.seed, 0xda7a);

    std::vector<std::string> nouns, verbs;
    for (int i = 0; i < spec.distractor_vocab; ++i) {
        nouns.push_back("obj" + std::to_string(i));
        verbs.push_back("act" + std::to_string(i));
    }
    auto distractor_text = [&](Rng& rng) {
        return "the " + nouns[rng.next_u64() % nouns.size()] + " " +
               verbs[rng.next_u64() % verbs.size()] + " the " +
               nouns[rng.next_u64() % nouns.size()];
    };

    for (int c = 0; c < spec.num_corpora; ++c) {
        Rng rng = base.split(c + 1);
        Corpus corpus;
        corpus.corpus_id = "syn" + std::to_string(c);
        const int S = spec.sentences_per_corpus;
        int i = 0;
        auto push = [&](const std::string& text, const std::string& label,
                        const std::string& kind, int cls, int gov) {
            corpus.sentences.push_back({corpus.corpus_id, i, text, label});
            out.trace.push_back({corpus.corpus_id, i, kind, cls, gov});
            ++i;
        };
        while (i < S) {
            if (i + spec.marker_gap + 1 >= S) {
                // Tail too short for a full marker block; pad with distractors.
                push(distractor_text(rng), "none", "distractor", -1, -1);
                continue;
            }
            int cls = static_cast<int>(rng.next_u64() % spec.num_classes);
            int marker_index = i;
            // A marker carries its own class label: supervising the marker
            // sentence is what drives the encoder to produce class-separable
            // hidden states, which the reservoir then has to store for the
            // downstream queries.
            push("signal is " + synthetic_class_word(cls),
                 synthetic_class_word(cls), "marker", cls, -1);
            for (int g = 0; g < spec.marker_gap && i < S; ++g)
                push(distractor_text(rng), "none", "distractor", -1, -1);
            int n_queries = 1 + static_cast<int>(rng.next_u64() % 2);
            for (int q = 0; q < n_queries && i < S; ++q) {
                push("what is the signal", synthetic_class_word(cls), "query", cls,
                     marker_index);
                if (q + 1 < n_queries && i < S && rng.next_u64() % 2 == 0)
                    push(distractor_text(rng), "none", "distractor", -1, -1);
            }
        }
        out.corpora.push_back(std::move(corpus));
    }
    return out;
}

// Corpus-granularity split; within-corpus ordering is untouched.
inline std::array<std::vector<Corpus>, 3> split(const std::vector<Corpus>& corpora,
                                                const std::array<double, 3>& ratios,
                                                std::uint64_t seed) {
    double sum = ratios[0] + ratios[1] + ratios[2];
    if (std::abs(sum - 1.0) > 1e-9) throw SplitError("split ratios must sum to 1");
    int nonzero = 0;
    for (double r : ratios)
        if (r > 0) ++nonzero;
    if (static_cast<int>(corpora.size()) < nonzero)
        throw SplitError("fewer corpora than nonzero splits");

    std::vector<std::size_t> order(corpora.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng rng(seed, 0x5b711);
    for (std::size_t i = order.size(); i > 1; --i)
        std::swap(order[i - 1], order[rng.next_u64() % i]);

    std::size_t n = corpora.size();
    std::size_t n0 = static_cast<std::size_t>(std::llround(ratios[0] * n));
    std::size_t n1 = static_cast<std::size_t>(std::llround(ratios[1] * n));
    if (ratios[0] > 0 && n0 == 0) n0 = 1;
    if (ratios[1] > 0 && n1 == 0) n1 = 1;
    while (n0 + n1 >= n && ratios[2] > 0 && n0 > 1) --n0;
    std::array<std::vector<Corpus>, 3> out;
    for (std::size_t i = 0; i < n; ++i) {
        std::size_t bucket = i < n0 ? 0 : (i < n0 + n1 ? 1 : 2);
        out[bucket].push_back(corpora[order[i]]);
    }
    return out;
}

// Token-level view consumed by the trainer.
struct TokenizedSentence {
    std::vector<int> ids;
    int label = 0;
    int index = 0;
};

struct TokenizedCorpus {
    std::string corpus_id;
    std::vector<TokenizedSentence> sentences;
};

inline std::vector<TokenizedCorpus> tokenize_corpora(const std::vector<Corpus>& corpora,
                                                     const Vocab& vocab,
                                                     const LabelMap& labels) {
    std::vector<TokenizedCorpus> out;
    for (const auto& c : corpora) {
        TokenizedCorpus tc;
        tc.corpus_id = c.corpus_id;
        for (const auto& s : c.sentences)
            tc.sentences.push_back({tokenize(s.text, vocab), labels.id_of(s.label), s.index});
        out.push_back(std::move(tc));
    }
    return out;
}

}  // namespace resformer
