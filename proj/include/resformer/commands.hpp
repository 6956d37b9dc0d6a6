#pragma once

// Implementations behind the CLI subcommands. Kept in the library so the
// test suites can drive them directly; tools/resformer.cpp only parses
// arguments and maps exceptions onto exit codes.

#include "resformer/config.hpp"
#include "resformer/data.hpp"
#include "resformer/model.hpp"
#include "resformer/training.hpp"

#include <nlohmann/json.hpp>

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

namespace resformer::cmd {

// Exit codes: 0 success, 2 config error, 3 data error, 4 numerical
// failure, 5 bench tolerance failure.
constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitData = 3;
constexpr int kExitNumerical = 4;
constexpr int kExitBench = 5;

// ---------------------------------------------------------------------------
// gen-data

struct GenDataOptions {
    SyntheticTaskSpec spec;
    std::string out_dir = "out";
};

inline int gen_data(const GenDataOptions& opt, std::ostream& log = std::cout) {
    opt.spec.validate();
    std::filesystem::create_directories(opt.out_dir);
    SyntheticData data = generate_synthetic(opt.spec);
    std::string data_path = opt.out_dir + "/synthetic.jsonl";
    write_jsonl(data_path, data.corpora);
    nlohmann::json manifest{{"seed", opt.spec.seed},
                            {"num_corpora", opt.spec.num_corpora},
                            {"sentences_per_corpus", opt.spec.sentences_per_corpus},
                            {"marker_gap", opt.spec.marker_gap},
                            {"num_classes", opt.spec.num_classes},
                            {"distractor_vocab", opt.spec.distractor_vocab},
                            {"data", data_path}};
    std::ofstream mf(opt.out_dir + "/manifest.json", std::ios::trunc);
    mf << manifest.dump(2) << "\n";
    nlohmann::json trace = nlohmann::json::array();
    for (const auto& t : data.trace)
        trace.push_back({{"corpus_id", t.corpus_id},
                         {"index", t.index},
                         {"kind", t.kind},
                         {"class", t.class_idx},
                         {"governing_marker", t.governing_marker}});
    std::ofstream tf(opt.out_dir + "/trace.json", std::ios::trunc);
    tf << trace.dump() << "\n";
    log << "wrote " << data_path << "\n";
    return kExitOk;
}

// ---------------------------------------------------------------------------
// train

struct LabelFile {
    static void save(const std::string& path, const LabelMap& m) {
        std::ofstream f(path, std::ios::trunc);
        for (const auto& l : m.labels) f << l << "\n";
    }
    static LabelMap load(const std::string& path) {
        std::ifstream f(path);
        if (!f) throw LoadError("cannot open label file " + path);
        LabelMap m;
        std::string line;
        while (std::getline(f, line))
            if (!line.empty()) {
                m.index[line] = static_cast<int>(m.labels.size());
                m.labels.push_back(line);
            }
        return m;
    }
};

// Rebuilds fixed matrices from seeds and copies every trainable tensor.
inline ModelParams clone_params(ModelParams& src, std::uint64_t init_seed) {
    std::vector<ReservoirConfig> rcs;
    for (const auto& r : src.group->members()) rcs.push_back(r.config);
    ModelParams dst = ModelParams::init(src.config, rcs, init_seed);
    auto a = registry(src);
    auto b = registry(dst);
    for (std::size_t i = 0; i < a.size(); ++i) *b[i].tensor = *a[i].tensor;
    return dst;
}

struct TrainOptions {
    RunConfig cfg;
    std::string resume_checkpoint;  // optional
    bool reference_check = false;   // assert B=1 equivalence before training
};

struct TrainArtifacts {
    std::string final_checkpoint;
    std::string best_checkpoint;
    std::string metrics_log;
    double best_val_accuracy = -1.0;
    double last_train_loss = 0.0;
};

inline bool reference_equivalence_check(ModelParams& params, std::uint64_t init_seed,
                                        const std::vector<TokenizedCorpus>& data,
                                        TrainConfig tc, double tol = 1e-10) {
    tc.batch_size = 1;
    ModelParams a = clone_params(params, init_seed);
    ModelParams b = clone_params(params, init_seed);
    OptimizerMoments oa = init_optimizer(a), ob = init_optimizer(b);
    EpochTrace ta = train_epoch_sequential(a, data, tc, oa);
    EpochTrace tb = train_epoch_batched(b, data, tc, ob);
    if (ta.sentence_losses.size() != tb.sentence_losses.size()) return false;
    for (std::size_t i = 0; i < ta.sentence_losses.size(); ++i)
        if (std::abs(ta.sentence_losses[i] - tb.sentence_losses[i]) > tol) return false;
    for (std::size_t c = 0; c < ta.final_states_per_corpus.size(); ++c)
        for (std::size_t m = 0; m < ta.final_states_per_corpus[c].size(); ++m)
            if ((ta.final_states_per_corpus[c][m] - tb.final_states_per_corpus[c][m])
                    .cwiseAbs()
                    .maxCoeff() > tol)
                return false;
    return true;
}

inline int train(const TrainOptions& opt, TrainArtifacts* artifacts = nullptr,
                 std::ostream& log = std::cout) {
    const RunConfig& cfg = opt.cfg;
    if (cfg.data_path.empty()) throw ConfigError({"train requires a data path"});
    std::filesystem::create_directories(cfg.out_dir);

    auto corpora = load_jsonl(cfg.data_path);
    if (corpora.empty()) throw LoadError("training data is empty: " + cfg.data_path);
    Vocab vocab = build_vocab(corpora, cfg.min_count);
    LabelMap labels = build_label_map(corpora);
    save_vocab(cfg.out_dir + "/vocab.txt", vocab);
    LabelFile::save(cfg.out_dir + "/labels.txt", labels);
    auto train_data = tokenize_corpora(corpora, vocab, labels);

    std::vector<TokenizedCorpus> val_data;
    if (!cfg.val_data_path.empty())
        val_data = tokenize_corpora(load_jsonl(cfg.val_data_path), vocab, labels);

    ModelParams params;
    OptimizerMoments optimizer;
    std::uint64_t init_seed = cfg.seed;
    if (!opt.resume_checkpoint.empty()) {
        LoadedCheckpoint ck = load_checkpoint(opt.resume_checkpoint);
        params = std::move(ck.params);
        init_seed = ck.init_seed;
        optimizer = ck.has_optimizer ? std::move(ck.optimizer) : init_optimizer(params);
    } else {
        params = ModelParams::init(cfg.model_config(vocab.size(), labels.size()),
                                   cfg.reservoir_configs(), cfg.seed);
        optimizer = init_optimizer(params);
    }

    if (opt.reference_check) {
        std::vector<TokenizedCorpus> probe(train_data.begin(),
                                           train_data.begin() +
                                               std::min<std::size_t>(1, train_data.size()));
        if (!reference_equivalence_check(params, init_seed, probe, cfg.train)) {
            log << "reference check FAILED: batched trainer diverges from the "
                   "sequential reference at B=1\n";
            return kExitNumerical;
        }
        log << "reference check passed\n";
    }

    std::string metrics_path = cfg.out_dir + "/metrics.jsonl";
    std::ofstream metrics(metrics_path,
                          opt.resume_checkpoint.empty() ? std::ios::trunc : std::ios::app);
    TrainHooks hooks;
    hooks.on_step = [&](long step, const std::string& corpus_id, double loss, double lr) {
        nlohmann::json j{{"step", step}, {"corpus_id", corpus_id}, {"loss", loss}, {"lr", lr}};
        metrics << j.dump() << "\n";
    };

    TrainArtifacts art;
    art.metrics_log = metrics_path;
    art.final_checkpoint = cfg.out_dir + "/final.ckpt";
    art.best_checkpoint = cfg.out_dir + "/best.ckpt";
    for (int epoch = 0; epoch < cfg.train.epochs; ++epoch) {
        EpochTrace tr = train_epoch_batched(params, train_data, cfg.train, optimizer,
                                            epoch, hooks);
        art.last_train_loss = tr.mean_loss;
        nlohmann::json j{{"epoch", epoch}, {"train_loss", tr.mean_loss}};
        if (!val_data.empty() &&
            (epoch % std::max(1, cfg.train.eval_every) == 0 || epoch == cfg.train.epochs - 1)) {
            EvalReport rep = evaluate(params, val_data, cfg.seed);
            j["val_accuracy"] = rep.accuracy;
            j["val_weighted_f1"] = rep.weighted_f1;
            if (rep.accuracy > art.best_val_accuracy) {
                art.best_val_accuracy = rep.accuracy;
                save_checkpoint(params, &optimizer, art.best_checkpoint, init_seed);
            }
        }
        metrics << j.dump() << "\n";
        log << j.dump() << "\n";
    }
    save_checkpoint(params, &optimizer, art.final_checkpoint, init_seed);
    if (art.best_val_accuracy < 0)
        save_checkpoint(params, &optimizer, art.best_checkpoint, init_seed);
    if (artifacts) *artifacts = art;
    return kExitOk;
}

// ---------------------------------------------------------------------------
// eval

struct EvalOptions {
    std::string checkpoint;
    std::string data_path;
    std::string vocab_path;
    std::string labels_path;
    std::uint64_t seed = 42;
};

inline int eval(const EvalOptions& opt, EvalReport* out = nullptr,
                std::ostream& log = std::cout) {
    LoadedCheckpoint ck = load_checkpoint(opt.checkpoint);
    Vocab vocab = load_vocab(opt.vocab_path);
    if (vocab.size() != ck.params.config.vocab_size)
        throw LoadError("vocabulary size does not match checkpoint (" +
                        std::to_string(vocab.size()) + " vs " +
                        std::to_string(ck.params.config.vocab_size) + ")");
    LabelMap labels = LabelFile::load(opt.labels_path);
    if (labels.size() != ck.params.config.n_classes)
        throw LoadError("label set does not match checkpoint");
    auto data = tokenize_corpora(load_jsonl(opt.data_path), vocab, labels);
    if (data.empty()) throw EvaluationError("evaluation over an empty dataset");
    EvalReport rep = evaluate(ck.params, data, opt.seed);
    nlohmann::json per_class = nlohmann::json::object();
    for (const auto& [c, st] : rep.per_class)
        per_class[labels.labels[c]] = {{"precision", st.precision},
                                       {"recall", st.recall},
                                       {"support", st.support}};
    nlohmann::json j{{"accuracy", rep.accuracy},
                     {"weighted_f1", rep.weighted_f1},
                     {"loss", rep.loss},
                     {"per_class", per_class}};
    log << j.dump(2) << "\n";
    if (out) *out = rep;
    return kExitOk;
}

// ---------------------------------------------------------------------------
// gradcheck

struct GradcheckOptions {
    double threshold = 1e-4;
    double step = 1e-6;
    std::string corrupt_group;  // test hook: perturb this group's analytic grad
    std::uint64_t seed = 7;
};

struct GradcheckReport {
    std::vector<std::pair<std::string, double>> group_errors;
    double max_error = 0.0;
    bool passed = false;
};

// End-to-end finite-difference suite on a micro model (d=16, 2 layers,
// L=2, N_r=20), with live reservoir memory so the readout path is covered.
inline GradcheckReport run_gradcheck(const GradcheckOptions& opt) {
    ModelConfig mc;
    mc.d = 16;
    mc.n_layers = 2;
    mc.n_heads = 4;
    mc.d_ff = 32;
    mc.d_k = 16;
    mc.vocab_size = 12;
    mc.j_max = 8;
    mc.n_classes = 3;
    mc.readout_dim = 6;
    mc.history_window = 2;
    mc.dropout = 0.0;

    std::vector<ReservoirConfig> rcs(2);
    for (int i = 0; i < 2; ++i) {
        rcs[i].size = 20;
        rcs[i].input_dim = mc.d;
        rcs[i].readout_dim = mc.readout_dim;
        rcs[i].leaky_alpha = 0.5;
        rcs[i].spectral_radius = 0.8 + 0.05 * i;
        rcs[i].sparsity = 0.3;
        rcs[i].seed = opt.seed + 11 * (i + 1);
    }
    ModelParams params = ModelParams::init(mc, rcs, opt.seed);

    // Advance the reservoir twice so memory tokens are live.
    Rng rng(opt.seed, 99);
    auto states = params.group->init_states(StateInit::seeded_random, rng);
    for (int s = 0; s < 2; ++s) {
        Vec h(mc.d);
        for (int i = 0; i < mc.d; ++i) h(i) = rng.uniform(-1.0, 1.0);
        states = advance_memory(*params.group, states, h);
    }
    MemorySnapshot snap = take_snapshot(*params.group);
    std::vector<int> sentence = {3, 7, 4, 9, 5};
    const int label = 1;

    auto grads = zero_grads(params);
    forward_backward(params, sentence, label, snap, grads, 1.0, false, nullptr);

    GradcheckReport rep;
    auto reg = registry(params);
    for (std::size_t gi = 0; gi < reg.size(); ++gi) {
        Mat& tensor = *reg[gi].tensor;
        Mat analytic = grads[gi];
        if (reg[gi].name == opt.corrupt_group) analytic.array() += 1e-2;
        Vec p =
            Eigen::Map<Vec>(tensor.data(), tensor.size());
        auto f = [&](const Vec& q) {
            Mat saved = tensor;
            tensor = Eigen::Map<const Mat>(q.data(), tensor.rows(), tensor.cols());
            ForwardOutput out = forward(params, sentence, snap, false, nullptr);
            double loss = cross_entropy_loss(Mat(out.logits.transpose()), {label});
            tensor = saved;
            return loss;
        };
        Vec fd = finite_difference_gradient(f, p, opt.step);
        Vec an = Eigen::Map<Vec>(analytic.data(), analytic.size());
        double denom = std::max({fd.norm(), an.norm(), 1e-12});
        double rel = (fd - an).norm() / denom;
        rep.group_errors.emplace_back(reg[gi].name, rel);
        rep.max_error = std::max(rep.max_error, rel);
    }
    rep.passed = rep.max_error < opt.threshold;
    return rep;
}

inline int gradcheck(const GradcheckOptions& opt, GradcheckReport* out = nullptr,
                     std::ostream& log = std::cout) {
    GradcheckReport rep = run_gradcheck(opt);
    for (const auto& [name, err] : rep.group_errors)
        log << name << " " << err << "\n";
    log << "max_relative_error " << rep.max_error << (rep.passed ? " PASS" : " FAIL")
        << "\n";
    if (out) *out = rep;
    return rep.passed ? kExitOk : kExitNumerical;
}

// ---------------------------------------------------------------------------
// bench

struct BenchOptions {
    std::vector<long> time_depths = {10, 100, 1000};
    std::vector<long> memory_depths = {100, 5000};
    int window = 9;  // sentences per measurement point (median taken)
    double tolerance = 1.2;
    std::uint64_t seed = 5;
    int d = 32;  // small model keeps the 5000-sentence stream quick
};

struct BenchPoint {
    long depth = 0;
    double median_us = 0.0;
    long vmhwm_kb = 0;
};

struct BenchReport {
    std::vector<BenchPoint> points;
    double fitted_slope_us_per_depth = 0.0;
    double time_ratio = 0.0;    // latest/earliest time depth
    double memory_ratio = 0.0;  // latest/earliest memory depth
    bool passed = false;
};

inline long read_vmhwm_kb() {
    std::ifstream f("/proc/self/status");
    std::string line;
    while (std::getline(f, line))
        if (line.rfind("VmHWM:", 0) == 0) return std::atol(line.c_str() + 6);
    return 0;
}

inline int bench(const BenchOptions& opt, BenchReport* out = nullptr,
                 std::ostream& log = std::cout) {
    if (opt.time_depths.size() < 2 || opt.memory_depths.size() < 2)
        throw RangeError("bench needs at least two time and memory depths");
    long max_depth = 0;
    for (long d : opt.time_depths) max_depth = std::max(max_depth, d);
    for (long d : opt.memory_depths) max_depth = std::max(max_depth, d);
    long total = max_depth + opt.window + 3;

    SyntheticTaskSpec spec;
    spec.num_corpora = 1;
    spec.sentences_per_corpus = static_cast<int>(total);
    spec.marker_gap = 10;
    spec.num_classes = 4;
    spec.seed = opt.seed;
    SyntheticData data = generate_synthetic(spec);
    Vocab vocab = build_vocab(data.corpora);
    LabelMap labels = build_label_map(data.corpora);
    auto tokens = tokenize_corpora(data.corpora, vocab, labels);
    if (tokens[0].sentences.size() < static_cast<std::size_t>(max_depth + opt.window))
        throw RangeError("bench corpus shorter than requested depth");

    ModelConfig mc;
    mc.d = opt.d;
    mc.n_layers = 2;
    mc.n_heads = 4;
    mc.d_ff = 4 * opt.d;
    mc.d_k = opt.d;
    mc.vocab_size = vocab.size();
    mc.j_max = 16;
    mc.n_classes = labels.size();
    mc.readout_dim = 16;
    mc.history_window = 2;
    mc.dropout = 0.0;
    auto rcs = default_group_configs(true, mc.d, mc.readout_dim, opt.seed);
    ModelParams params = ModelParams::init(mc, rcs, opt.seed);

    Rng rng(opt.seed, 0xbe);
    auto states = params.group->init_states(StateInit::seeded_random, rng);
    std::vector<double> per_sentence_us(tokens[0].sentences.size(), 0.0);
    std::map<long, long> hwm_at_depth;
    using clock = std::chrono::steady_clock;
    for (std::size_t si = 0; si < tokens[0].sentences.size(); ++si) {
        const auto& sent = tokens[0].sentences[si];
        MemorySnapshot snap = take_snapshot(*params.group);
        auto t0 = clock::now();
        ForwardOutput fo = forward(params, sent.ids, snap, false, nullptr);
        states = advance_memory(*params.group, states, fo.h_cls);
        auto t1 = clock::now();
        per_sentence_us[si] =
            std::chrono::duration_cast<std::chrono::nanoseconds>(t1 - t0).count() / 1e3;
        for (long d : opt.memory_depths)
            if (static_cast<long>(si) + 1 == d) hwm_at_depth[d] = read_vmhwm_kb();
    }

    auto median_at = [&](long depth) {
        std::vector<double> w;
        for (int i = 0; i < opt.window; ++i) {
            std::size_t idx = static_cast<std::size_t>(depth) + i;
            // first 3 sentences are warmup, never measured
            if (idx >= 3 && idx < per_sentence_us.size()) w.push_back(per_sentence_us[idx]);
        }
        std::sort(w.begin(), w.end());
        return w[w.size() / 2];
    };

    BenchReport rep;
    for (long d : opt.time_depths) {
        BenchPoint pt;
        pt.depth = d;
        pt.median_us = median_at(d);
        pt.vmhwm_kb = hwm_at_depth.count(d) ? hwm_at_depth[d] : read_vmhwm_kb();
        rep.points.push_back(pt);
    }
    // Least-squares slope of median time vs depth.
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    for (const auto& p : rep.points) {
        sx += p.depth;
        sy += p.median_us;
        sxx += double(p.depth) * p.depth;
        sxy += double(p.depth) * p.median_us;
    }
    double n = static_cast<double>(rep.points.size());
    rep.fitted_slope_us_per_depth = (n * sxy - sx * sy) / (n * sxx - sx * sx);

    rep.time_ratio = median_at(opt.time_depths.back()) / median_at(opt.time_depths.front());
    rep.memory_ratio = static_cast<double>(hwm_at_depth[opt.memory_depths.back()]) /
                       static_cast<double>(hwm_at_depth[opt.memory_depths.front()]);
    rep.passed = rep.time_ratio < opt.tolerance && rep.memory_ratio < opt.tolerance;

    nlohmann::json pts = nlohmann::json::array();
    for (const auto& p : rep.points)
        pts.push_back({{"depth", p.depth}, {"median_us", p.median_us}, {"vmhwm_kb", p.vmhwm_kb}});
    nlohmann::json j{{"points", pts},
                     {"fitted_slope_us_per_depth", rep.fitted_slope_us_per_depth},
                     {"time_ratio", rep.time_ratio},
                     {"memory_ratio", rep.memory_ratio},
                     {"passed", rep.passed}};
    log << j.dump(2) << "\n";
    if (out) *out = rep;
    return rep.passed ? kExitOk : kExitBench;
}

}  // namespace resformer::cmd
