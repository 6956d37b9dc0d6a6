#include <catch2/catch_amalgamated.hpp>

#include "resformer/data.hpp"

#include <filesystem>
#include <fstream>
#include <map>
#include <set>

using namespace resformer;

namespace {

const std::string tmp_dir = []() {
    auto d = std::filesystem::temp_directory_path() / "resformer_data_tests";
    std::filesystem::create_directories(d);
    return d.string();
}();

std::string write_file(const std::string& name, const std::string& content) {
    std::string path = tmp_dir + "/" + name;
    std::ofstream f(path);
    f << content;
    return path;
}

}  // namespace

TEST_CASE("load_jsonl groups and sorts interleaved corpora") {
    std::string path = write_file(
        "interleaved.jsonl",
        R"({"corpus_id": "a", "index": 1, "text": "second a", "label": "x"})"
        "\n"
        R"({"corpus_id": "b", "index": 0, "text": "first b", "label": "y"})"
        "\n"
        R"({"corpus_id": "a", "index": 0, "text": "first a", "label": "x"})"
        "\n"
        R"({"corpus_id": "b", "index": 1, "text": "second b", "label": "y"})"
        "\n");
    auto corpora = load_jsonl(path);
    REQUIRE(corpora.size() == 2);
    std::map<std::string, const Corpus*> by_id;
    for (const auto& c : corpora) by_id[c.corpus_id] = &c;
    REQUIRE(by_id.count("a"));
    REQUIRE(by_id.count("b"));
    CHECK(by_id["a"]->sentences[0].text == "first a");
    CHECK(by_id["a"]->sentences[1].text == "second a");
    CHECK(by_id["b"]->sentences[0].index == 0);
}

TEST_CASE("load_jsonl rejects malformed input with line numbers") {
    SECTION("malformed json") {
        std::string path = write_file("bad.jsonl",
                                      R"({"corpus_id": "a", "index": 0,)"
                                      "\n");
        CHECK_THROWS_AS(load_jsonl(path), LoadError);
        try {
            load_jsonl(path);
        } catch (const LoadError& e) {
            CHECK(std::string(e.what()).find("line 1") != std::string::npos);
        }
    }
    SECTION("duplicate index") {
        std::string path = write_file(
            "dup.jsonl",
            R"({"corpus_id": "a", "index": 0, "text": "t", "label": "x"})"
            "\n"
            R"({"corpus_id": "a", "index": 0, "text": "u", "label": "x"})"
            "\n");
        CHECK_THROWS_AS(load_jsonl(path), LoadError);
    }
    SECTION("non-contiguous indices") {
        std::string path = write_file(
            "gap.jsonl",
            R"({"corpus_id": "a", "index": 0, "text": "t", "label": "x"})"
            "\n"
            R"({"corpus_id": "a", "index": 2, "text": "u", "label": "x"})"
            "\n");
        CHECK_THROWS_AS(load_jsonl(path), LoadError);
    }
    SECTION("unknown keys") {
        std::string path = write_file(
            "unknown.jsonl",
            R"({"corpus_id": "a", "index": 0, "text": "t", "label": "x", "zzz": 1})"
            "\n");
        CHECK_THROWS_AS(load_jsonl(path), LoadError);
    }
    SECTION("missing keys") {
        std::string path =
            write_file("missing.jsonl", R"({"corpus_id": "a", "index": 0})"
                                        "\n");
        CHECK_THROWS_AS(load_jsonl(path), LoadError);
    }
    SECTION("missing file") {
        CHECK_THROWS_AS(load_jsonl(tmp_dir + "/nope.jsonl"), LoadError);
    }
    SECTION("empty file yields an empty list") {
        std::string path = write_file("empty.jsonl", "");
        CHECK(load_jsonl(path).empty());
    }
}

TEST_CASE("write_jsonl and load_jsonl round-trip") {
    SyntheticTaskSpec spec;
    spec.num_corpora = 3;
    spec.sentences_per_corpus = 20;
    spec.marker_gap = 3;
    spec.num_classes = 3;
    spec.seed = 11;
    auto data = generate_synthetic(spec);
    std::string path = tmp_dir + "/roundtrip.jsonl";
    write_jsonl(path, data.corpora);
    auto back = load_jsonl(path);
    REQUIRE(back.size() == data.corpora.size());
    // grouping order may differ; compare by id
    std::map<std::string, Corpus> by_id;
    for (auto& c : back) by_id[c.corpus_id] = c;
    for (const auto& c : data.corpora) {
        REQUIRE(by_id.count(c.corpus_id));
        CHECK(by_id[c.corpus_id] == c);
    }
}

TEST_CASE("tokenize_words splits on case, whitespace and punctuation") {
    auto t = tokenize_words("Hello, world!");
    REQUIRE(t.size() == 4);
    CHECK(t[0] == "hello");
    CHECK(t[1] == ",");
    CHECK(t[2] == "world");
    CHECK(t[3] == "!");

    CHECK(tokenize_words("").empty());
    CHECK(tokenize_words("   ").empty());
    auto u = tokenize_words("obj3 ACT7");
    REQUIRE(u.size() == 2);
    CHECK(u[0] == "obj3");
    CHECK(u[1] == "act7");
}

TEST_CASE("build_vocab reserves special ids and honors min_count") {
    Corpus c;
    c.corpus_id = "v";
    c.sentences.push_back({"v", 0, "apple apple banana", "x"});
    c.sentences.push_back({"v", 1, "apple cherry", "x"});
    std::vector<Corpus> corpora{c};

    Vocab v = build_vocab(corpora);
    CHECK(v.tokens[Vocab::kPad] == "<pad>");
    CHECK(v.tokens[Vocab::kUnk] == "<unk>");
    CHECK(v.tokens[Vocab::kCls] == "<cls>");
    CHECK(v.id_of("apple") >= 3);
    CHECK(v.id_of("durian") == Vocab::kUnk);

    Vocab v2 = build_vocab(corpora, 2);
    CHECK(v2.id_of("apple") >= 3);      // count 3
    CHECK(v2.id_of("banana") == Vocab::kUnk);  // count 1
    CHECK(v2.id_of("cherry") == Vocab::kUnk);

    auto ids = tokenize("apple durian", v);
    REQUIRE(ids.size() == 2);
    CHECK(ids[0] == v.id_of("apple"));
    CHECK(ids[1] == Vocab::kUnk);
    CHECK(tokenize("", v).empty());
}

TEST_CASE("vocabulary file round-trips with reserved first lines") {
    Corpus c;
    c.corpus_id = "v";
    c.sentences.push_back({"v", 0, "alpha beta gamma", "x"});
    Vocab v = build_vocab({c});
    std::string path = tmp_dir + "/vocab.txt";
    save_vocab(path, v);
    Vocab back = load_vocab(path);
    CHECK(back.tokens == v.tokens);
    CHECK(back.id_of("beta") == v.id_of("beta"));

    std::string bad = write_file("bad_vocab.txt", "alpha\nbeta\n");
    CHECK_THROWS_AS(load_vocab(bad), LoadError);
}

TEST_CASE("label map is sorted and rejects unknowns") {
    Corpus c;
    c.corpus_id = "l";
    c.sentences.push_back({"l", 0, "t", "zebra"});
    c.sentences.push_back({"l", 1, "t", "apple"});
    c.sentences.push_back({"l", 2, "t", "zebra"});
    LabelMap m = build_label_map({c});
    REQUIRE(m.size() == 2);
    CHECK(m.labels[0] == "apple");
    CHECK(m.labels[1] == "zebra");
    CHECK(m.id_of("zebra") == 1);
    CHECK_THROWS_AS(m.id_of("mango"), LoadError);
}

TEST_CASE("generate_synthetic obeys the documented construction") {
    SyntheticTaskSpec spec;
    spec.num_corpora = 4;
    spec.sentences_per_corpus = 40;
    spec.marker_gap = 5;
    spec.num_classes = 3;
    spec.seed = 21;
    auto data = generate_synthetic(spec);
    REQUIRE(data.corpora.size() == 4);

    for (const auto& c : data.corpora)
        CHECK(c.sentences.size() == 40);

    // audit via the ground-truth trace
    std::map<std::string, std::vector<const TraceEntry*>> by_corpus;
    for (const auto& e : data.trace) by_corpus[e.corpus_id].push_back(&e);

    int queries_seen = 0;
    for (const auto& [cid, entries] : by_corpus) {
        const Corpus* corpus = nullptr;
        for (const auto& c : data.corpora)
            if (c.corpus_id == cid) corpus = &c;
        REQUIRE(corpus != nullptr);
        int last_marker_class = -1;
        for (const auto* e : entries) {
            const auto& sent = corpus->sentences[e->index];
            if (e->kind == "marker") {
                last_marker_class = e->class_idx;
                CHECK(sent.text ==
                      "signal is " + synthetic_class_word(e->class_idx));
                // markers are self-labeled with their class
                CHECK(sent.label == synthetic_class_word(e->class_idx));
            } else if (e->kind == "query") {
                ++queries_seen;
                // label equals the most recent marker's class
                CHECK(e->class_idx == last_marker_class);
                CHECK(sent.label == synthetic_class_word(e->class_idx));
                // the query text itself is class-independent
                CHECK(sent.text == "what is the signal");
                // governing marker at least G sentences earlier
                CHECK(e->governing_marker >= 0);
                CHECK(e->index - e->governing_marker >= spec.marker_gap);
            } else {
                CHECK(e->kind == "distractor");
                CHECK(sent.label == "none");
                // distractors never contain class words
                for (int cls = 0; cls < spec.num_classes; ++cls)
                    CHECK(sent.text.find(synthetic_class_word(cls)) ==
                          std::string::npos);
            }
        }
    }
    CHECK(queries_seen > 0);
}

TEST_CASE("generate_synthetic hand cases and determinism") {
    SECTION("most recent marker wins") {
        SyntheticTaskSpec spec;
        spec.num_corpora = 1;
        spec.sentences_per_corpus = 60;
        spec.marker_gap = 2;
        spec.num_classes = 4;
        spec.seed = 8;
        auto data = generate_synthetic(spec);
        // walk the trace: every query's class must match the latest marker
        int current = -1;
        for (const auto& e : data.trace) {
            if (e.kind == "marker") current = e.class_idx;
            if (e.kind == "query") CHECK(e.class_idx == current);
        }
    }
    SECTION("determinism in seed") {
        SyntheticTaskSpec spec;
        spec.num_corpora = 2;
        spec.sentences_per_corpus = 30;
        spec.marker_gap = 3;
        spec.num_classes = 2;
        spec.seed = 99;
        auto a = generate_synthetic(spec);
        auto b = generate_synthetic(spec);
        CHECK(a.corpora == b.corpora);
        spec.seed = 100;
        auto c = generate_synthetic(spec);
        CHECK(a.corpora != c.corpora);
    }
    SECTION("infeasible gap is a spec error") {
        SyntheticTaskSpec spec;
        spec.sentences_per_corpus = 10;
        spec.marker_gap = 10;
        CHECK_THROWS_AS(generate_synthetic(spec), SpecError);
        spec.marker_gap = 0;
        CHECK_THROWS_AS(generate_synthetic(spec), SpecError);
    }
}

TEST_CASE("split assigns whole corpora deterministically") {
    SyntheticTaskSpec spec;
    spec.num_corpora = 10;
    spec.sentences_per_corpus = 12;
    spec.marker_gap = 2;
    spec.num_classes = 2;
    spec.seed = 4;
    auto corpora = generate_synthetic(spec).corpora;

    auto s1 = split(corpora, {0.8, 0.1, 0.1}, 7);
    CHECK(s1[0].size() == 8);
    CHECK(s1[1].size() == 1);
    CHECK(s1[2].size() == 1);

    // same seed, same assignment
    auto s2 = split(corpora, {0.8, 0.1, 0.1}, 7);
    for (int b = 0; b < 3; ++b) {
        REQUIRE(s1[b].size() == s2[b].size());
        for (std::size_t i = 0; i < s1[b].size(); ++i)
            CHECK(s1[b][i].corpus_id == s2[b][i].corpus_id);
    }

    // each corpus lands in exactly one bucket, ordering untouched
    std::set<std::string> seen;
    for (int b = 0; b < 3; ++b)
        for (const auto& c : s1[b]) {
            CHECK(seen.insert(c.corpus_id).second);
            for (std::size_t i = 0; i < c.sentences.size(); ++i)
                CHECK(c.sentences[i].index == static_cast<int>(i));
        }
    CHECK(seen.size() == 10);

    CHECK_THROWS_AS(split(corpora, {0.5, 0.4, 0.2}, 1), SplitError);
    std::vector<Corpus> two(corpora.begin(), corpora.begin() + 2);
    CHECK_THROWS_AS(split(two, {0.4, 0.3, 0.3}, 1), SplitError);
}

TEST_CASE("tokenize_corpora preserves order and maps labels") {
    SyntheticTaskSpec spec;
    spec.num_corpora = 2;
    spec.sentences_per_corpus = 15;
    spec.marker_gap = 3;
    spec.num_classes = 2;
    spec.seed = 6;
    auto data = generate_synthetic(spec);
    Vocab vocab = build_vocab(data.corpora);
    LabelMap labels = build_label_map(data.corpora);
    auto toks = tokenize_corpora(data.corpora, vocab, labels);

    REQUIRE(toks.size() == 2);
    for (std::size_t c = 0; c < toks.size(); ++c) {
        CHECK(toks[c].corpus_id == data.corpora[c].corpus_id);
        REQUIRE(toks[c].sentences.size() == data.corpora[c].sentences.size());
        for (std::size_t s = 0; s < toks[c].sentences.size(); ++s) {
            const auto& rec = data.corpora[c].sentences[s];
            const auto& tok = toks[c].sentences[s];
            CHECK(tok.index == rec.index);
            CHECK(tok.label == labels.id_of(rec.label));
            CHECK(tok.ids == tokenize(rec.text, vocab));
        }
    }
}
