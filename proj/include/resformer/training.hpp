#pragma once

// Loss, the decoupled-weight-decay adaptive-moment optimizer, the reference
// sequential trainer, the 6-step batch-parallelized trainer, evaluation
// metrics, and Powell hyperparameter search.

#include "resformer/data.hpp"
#include "resformer/model.hpp"
#include "resformer/numerics.hpp"

#include <atomic>
#include <cstdlib>
#include <functional>
#include <map>
#include <string>
#include <thread>
#include <vector>

namespace resformer {

struct LabelError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct NumericalError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Mean negative log-probability of the true classes via log-softmax.
inline double cross_entropy_loss(const Mat& logits, const std::vector<int>& labels) {
    if (logits.rows() < 1) throw DimensionError("empty logit batch");
    if (static_cast<Eigen::Index>(labels.size()) != logits.rows())
        throw LabelError("one label per row required");
    double loss = 0.0;
    for (Eigen::Index r = 0; r < logits.rows(); ++r) {
        if (labels[r] < 0 || labels[r] >= logits.cols())
            throw LabelError("label out of range: " + std::to_string(labels[r]));
        double mx = logits.row(r).maxCoeff();
        double lse = std::log((logits.row(r).array() - mx).exp().sum());
        loss -= logits(r, labels[r]) - mx - lse;
    }
    return loss / static_cast<double>(logits.rows());
}

struct TrainConfig {
    double learning_rate = 0.0002;
    double weight_decay = 0.01;
    int batch_size = 4;
    int epochs = 10;
    std::uint64_t seed = 42;
    double clip_norm = 1.0;  // 0 disables clipping
    int eval_every = 1;      // epochs between validation passes
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    int n_threads = 1;

    void validate() const {
        if (batch_size < 1) throw RangeError("batch_size must be >= 1");
        if (learning_rate <= 0.0) throw RangeError("learning_rate must be positive");
        if (epochs < 0) throw RangeError("epochs must be non-negative");
    }
};

inline int resolve_threads(int configured) {
    if (const char* env = std::getenv("RESFORMER_THREADS")) {
        int cap = std::atoi(env);
        if (cap > 0) configured = std::min(configured > 0 ? configured : cap, cap);
    }
    return std::max(1, configured);
}

inline OptimizerMoments init_optimizer(ModelParams& params) {
    OptimizerMoments st;
    for (auto& nt : registry(params)) {
        st.m.push_back(Mat::Zero(nt.tensor->rows(), nt.tensor->cols()));
        st.v.push_back(Mat::Zero(nt.tensor->rows(), nt.tensor->cols()));
    }
    return st;
}

inline void clip_gradients(std::vector<Mat>& grads, double max_norm) {
    if (max_norm <= 0.0) return;
    double sq = 0.0;
    for (const auto& g : grads) sq += g.squaredNorm();
    double norm = std::sqrt(sq);
    if (norm > max_norm) {
        double s = max_norm / norm;
        for (auto& g : grads) g *= s;
    }
}

// Adaptive moments with decoupled weight decay; with zero gradients and
// wd > 0 every parameter shrinks by exactly (1 - lr*wd).
inline void optimizer_step(ModelParams& params, const std::vector<Mat>& grads,
                           OptimizerMoments& st, const TrainConfig& cfg) {
    auto reg = registry(params);
    if (grads.size() != reg.size() || st.m.size() != reg.size())
        throw DimensionError("optimizer state does not mirror the registry");
    ++st.step;
    double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(st.step));
    double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(st.step));
    for (std::size_t i = 0; i < reg.size(); ++i) {
        if (!grads[i].allFinite())
            throw NumericalError("NaN/Inf gradient in tensor " + reg[i].name);
        st.m[i] = cfg.beta1 * st.m[i] + (1.0 - cfg.beta1) * grads[i];
        st.v[i] = cfg.beta2 * st.v[i] +
                  (1.0 - cfg.beta2) * grads[i].cwiseProduct(grads[i]);
        Mat mhat = st.m[i] / bc1;
        Mat vhat = st.v[i] / bc2;
        *reg[i].tensor -= cfg.learning_rate *
                          (mhat.array() / (vhat.array().sqrt() + cfg.eps)).matrix();
        *reg[i].tensor -= cfg.learning_rate * cfg.weight_decay * *reg[i].tensor;
    }
}

// Instrumentation points for the batch-contract tests and metrics logging.
struct TrainHooks {
    // (corpus_id, global sentence index, memory snapshot fingerprint)
    std::function<void(const std::string&, long, double)> on_forward;
    // (corpus_id, global sentence index) in reservoir-advance order
    std::function<void(const std::string&, long)> on_advance;
    // one JSON-serializable record per optimizer step
    std::function<void(long step, const std::string& corpus_id, double loss, double lr)>
        on_step;
};

struct EpochTrace {
    std::vector<double> sentence_losses;  // in global sentence order
    std::vector<std::vector<Vec>> final_states_per_corpus;  // member states
    double mean_loss = 0.0;
};

namespace detail_train {

inline Rng dropout_stream(const TrainConfig& cfg, int epoch, std::size_t corpus,
                          long sentence) {
    return Rng(cfg.seed,
               0xd50 + 1000003ULL * static_cast<std::uint64_t>(epoch) +
                   7919ULL * static_cast<std::uint64_t>(corpus) +
                   static_cast<std::uint64_t>(sentence));
}

inline Rng state_stream(const TrainConfig& cfg, std::size_t corpus) {
    return Rng(cfg.seed, 0x57a7e + static_cast<std::uint64_t>(corpus));
}

inline void finish_trace(EpochTrace& tr) {
    double s = 0.0;
    for (double l : tr.sentence_losses) s += l;
    tr.mean_loss = tr.sentence_losses.empty()
                       ? 0.0
                       : s / static_cast<double>(tr.sentence_losses.size());
}

}  // namespace detail_train

// Reference implementation: sentence-by-sentence, optimizer step per
// sentence (B = 1 semantics). Memory resets at every corpus boundary.
inline EpochTrace train_epoch_sequential(ModelParams& params,
                                         const std::vector<TokenizedCorpus>& data,
                                         const TrainConfig& cfg, OptimizerMoments& opt,
                                         int epoch = 0, TrainHooks hooks = {}) {
    cfg.validate();
    EpochTrace tr;
    long global = 0;
    for (std::size_t ci = 0; ci < data.size(); ++ci) {
        Rng state_rng = detail_train::state_stream(cfg, ci);
        auto states = params.group->init_states(StateInit::seeded_random, state_rng);
        for (long si = 0; si < static_cast<long>(data[ci].sentences.size()); ++si) {
            const auto& sent = data[ci].sentences[si];
            MemorySnapshot snap = take_snapshot(*params.group);
            if (hooks.on_forward)
                hooks.on_forward(data[ci].corpus_id, global, snap.fingerprint());
            auto grads = zero_grads(params);
            Rng drop = detail_train::dropout_stream(cfg, epoch, ci, si);
            auto res = forward_backward(params, sent.ids, sent.label, snap, grads, 1.0,
                                        true, &drop);
            tr.sentence_losses.push_back(res.loss);
            states = advance_memory(*params.group, states, res.fwd.h_cls);
            if (hooks.on_advance) hooks.on_advance(data[ci].corpus_id, global);
            clip_gradients(grads, cfg.clip_norm);
            optimizer_step(params, grads, opt, cfg);
            if (hooks.on_step)
                hooks.on_step(opt.step, data[ci].corpus_id, res.loss, cfg.learning_rate);
            ++global;
        }
        std::vector<Vec> finals;
        for (const auto& s : states) finals.push_back(s.x);
        tr.final_states_per_corpus.push_back(std::move(finals));
    }
    detail_train::finish_trace(tr);
    return tr;
}

// The paper's 6-step scheme: per batch, every sentence fuses against the
// same frozen memory snapshot (step 3), forwards run in parallel (step 4),
// one optimizer step on the mean batch loss, then the reservoir advances
// sequentially through the batch's hidden states in sentence order
// (step 5); the final state carries to the next batch (step 6). Batches
// never span corpus boundaries.
inline EpochTrace train_epoch_batched(ModelParams& params,
                                      const std::vector<TokenizedCorpus>& data,
                                      const TrainConfig& cfg, OptimizerMoments& opt,
                                      int epoch = 0, TrainHooks hooks = {}) {
    cfg.validate();
    const int threads = resolve_threads(cfg.n_threads);
    EpochTrace tr;
    long global = 0;
    for (std::size_t ci = 0; ci < data.size(); ++ci) {
        Rng state_rng = detail_train::state_stream(cfg, ci);
        auto states = params.group->init_states(StateInit::seeded_random, state_rng);
        const auto& sentences = data[ci].sentences;
        for (long b0 = 0; b0 < static_cast<long>(sentences.size()); b0 += cfg.batch_size) {
            long bn = std::min<long>(cfg.batch_size,
                                     static_cast<long>(sentences.size()) - b0);
            MemorySnapshot snap = take_snapshot(*params.group);

            std::vector<std::vector<Mat>> grads(bn);
            std::vector<double> losses(bn);
            std::vector<Vec> hidden(bn);
            auto run = [&](long j) {
                const auto& sent = sentences[b0 + j];
                grads[j] = zero_grads(params);
                Rng drop = detail_train::dropout_stream(cfg, epoch, ci, b0 + j);
                auto res = forward_backward(params, sent.ids, sent.label, snap,
                                            grads[j], 1.0 / static_cast<double>(bn),
                                            true, &drop);
                losses[j] = res.loss;
                hidden[j] = res.fwd.h_cls;
            };
            if (hooks.on_forward)
                for (long j = 0; j < bn; ++j)
                    hooks.on_forward(data[ci].corpus_id, global + j, snap.fingerprint());
            if (threads <= 1 || bn == 1) {
                for (long j = 0; j < bn; ++j) run(j);
            } else {
                std::atomic<long> next{0};
                std::vector<std::thread> pool;
                for (int w = 0; w < std::min<long>(threads, bn); ++w)
                    pool.emplace_back([&] {
                        for (long j = next.fetch_add(1); j < bn; j = next.fetch_add(1))
                            run(j);
                    });
                for (auto& th : pool) th.join();
            }

            // Deterministic reduction in sentence order regardless of the
            // execution schedule above.
            auto total = zero_grads(params);
            for (long j = 0; j < bn; ++j)
                for (std::size_t i = 0; i < total.size(); ++i) total[i] += grads[j][i];
            clip_gradients(total, cfg.clip_norm);
            optimizer_step(params, total, opt, cfg);

            double batch_loss = 0.0;
            for (long j = 0; j < bn; ++j) {
                tr.sentence_losses.push_back(losses[j]);
                batch_loss += losses[j];
                states = advance_memory(*params.group, states, hidden[j]);
                if (hooks.on_advance) hooks.on_advance(data[ci].corpus_id, global + j);
            }
            if (hooks.on_step)
                hooks.on_step(opt.step, data[ci].corpus_id,
                              batch_loss / static_cast<double>(bn), cfg.learning_rate);
            global += bn;
        }
        std::vector<Vec> finals;
        for (const auto& s : states) finals.push_back(s.x);
        tr.final_states_per_corpus.push_back(std::move(finals));
    }
    detail_train::finish_trace(tr);
    return tr;
}

struct ClassStats {
    double precision = 0.0;
    double recall = 0.0;
    long support = 0;
};

struct Prediction {
    std::string corpus_id;
    int index = 0;
    int label = 0;
    int predicted = 0;
};

struct EvalReport {
    double accuracy = 0.0;
    double weighted_f1 = 0.0;
    double loss = 0.0;
    std::map<int, ClassStats> per_class;
    std::vector<Prediction> predictions;
};

inline EvalReport metrics_from_predictions(const std::vector<Prediction>& preds,
                                           int n_classes) {
    if (preds.empty()) throw EvaluationError("evaluation over an empty dataset");
    EvalReport rep;
    rep.predictions = preds;
    std::vector<long> tp(n_classes, 0), fp(n_classes, 0), fn(n_classes, 0),
        support(n_classes, 0);
    long correct = 0;
    for (const auto& p : preds) {
        ++support[p.label];
        if (p.predicted == p.label) {
            ++correct;
            ++tp[p.label];
        } else {
            ++fp[p.predicted];
            ++fn[p.label];
        }
    }
    rep.accuracy = static_cast<double>(correct) / static_cast<double>(preds.size());
    double f1_sum = 0.0;
    for (int c = 0; c < n_classes; ++c) {
        ClassStats st;
        st.support = support[c];
        long denom_p = tp[c] + fp[c], denom_r = tp[c] + fn[c];
        st.precision = denom_p > 0 ? static_cast<double>(tp[c]) / denom_p : 0.0;
        st.recall = denom_r > 0 ? static_cast<double>(tp[c]) / denom_r : 0.0;
        double f1 = (st.precision + st.recall) > 0
                        ? 2.0 * st.precision * st.recall / (st.precision + st.recall)
                        : 0.0;
        f1_sum += f1 * static_cast<double>(support[c]);
        rep.per_class[c] = st;
    }
    rep.weighted_f1 = f1_sum / static_cast<double>(preds.size());
    return rep;
}

// Streaming corpus-order evaluation: memory advances, parameters do not.
inline EvalReport evaluate(ModelParams& params, const std::vector<TokenizedCorpus>& data,
                           std::uint64_t seed) {
    std::vector<Prediction> preds;
    double loss_sum = 0.0;
    long count = 0;
    for (std::size_t ci = 0; ci < data.size(); ++ci) {
        TrainConfig dummy;
        dummy.seed = seed;
        Rng state_rng = detail_train::state_stream(dummy, ci);
        auto states = params.group->init_states(StateInit::seeded_random, state_rng);
        for (const auto& sent : data[ci].sentences) {
            MemorySnapshot snap = take_snapshot(*params.group);
            ForwardOutput out = forward(params, sent.ids, snap, false, nullptr);
            Mat logits = out.logits.transpose();
            loss_sum += cross_entropy_loss(logits, {sent.label});
            ++count;
            preds.push_back({data[ci].corpus_id, sent.index, sent.label,
                             out.predicted_class});
            states = advance_memory(*params.group, states, out.h_cls);
        }
    }
    if (count == 0) throw EvaluationError("evaluation over an empty dataset");
    EvalReport rep = metrics_from_predictions(preds, params.config.n_classes);
    rep.loss = loss_sum / static_cast<double>(count);
    return rep;
}

// ---------------------------------------------------------------------------
// Powell's derivative-free conjugate-direction method with golden-section
// line minimization, clamped to box bounds.

struct PowellResult {
    Vec point;
    double value = 0.0;
    int evaluations = 0;
    bool budget_exhausted = false;
};

namespace detail_powell {

inline double golden_line(const std::function<double(const Vec&)>& f, Vec& x,
                          const Vec& dir, const Vec& lo, const Vec& hi, double& fx,
                          int& evals, int max_evals) {
    // Feasible step interval along dir keeping x + t*dir inside [lo, hi].
    double t_lo = -1e30, t_hi = 1e30;
    for (Eigen::Index i = 0; i < x.size(); ++i) {
        if (dir(i) == 0.0) continue;
        double a = (lo(i) - x(i)) / dir(i);
        double b = (hi(i) - x(i)) / dir(i);
        if (a > b) std::swap(a, b);
        t_lo = std::max(t_lo, a);
        t_hi = std::min(t_hi, b);
    }
    if (t_lo > t_hi) return 0.0;
    const double gr = (std::sqrt(5.0) - 1.0) / 2.0;
    double a = t_lo, b = t_hi;
    double c = b - gr * (b - a), d = a + gr * (b - a);
    auto eval_at = [&](double t) {
        ++evals;
        Vec p = x + t * dir;
        for (Eigen::Index i = 0; i < p.size(); ++i)
            p(i) = std::clamp(p(i), lo(i), hi(i));
        return f(p);
    };
    double fc = eval_at(c), fd = eval_at(d);
    while (std::abs(b - a) > 1e-8 * (1.0 + std::abs(a) + std::abs(b)) &&
           evals < max_evals) {
        if (fc < fd) {
            b = d;
            d = c;
            fd = fc;
            c = b - gr * (b - a);
            fc = eval_at(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + gr * (b - a);
            fd = eval_at(d);
        }
    }
    double t = fc < fd ? c : d;
    double ft = std::min(fc, fd);
    if (ft < fx) {
        x += t * dir;
        for (Eigen::Index i = 0; i < x.size(); ++i) x(i) = std::clamp(x(i), lo(i), hi(i));
        fx = ft;
        return t;
    }
    return 0.0;
}

}  // namespace detail_powell

inline PowellResult powell_search(const std::function<double(const Vec&)>& objective,
                                  const Vec& lo, const Vec& hi, const Vec& start,
                                  int max_evals, double tol = 1e-8) {
    if (lo.size() != hi.size() || lo.size() != start.size())
        throw DimensionError("powell_search bound/start size mismatch");
    for (Eigen::Index i = 0; i < lo.size(); ++i)
        if (lo(i) >= hi(i)) throw RangeError("powell_search requires lo < hi");

    const Eigen::Index n = start.size();
    std::vector<Vec> dirs;
    for (Eigen::Index i = 0; i < n; ++i) {
        Vec d = Vec::Zero(n);
        d(i) = 1.0;
        dirs.push_back(d);
    }
    PowellResult res;
    res.point = start;
    for (Eigen::Index i = 0; i < n; ++i)
        res.point(i) = std::clamp(res.point(i), lo(i), hi(i));
    res.value = objective(res.point);
    res.evaluations = 1;

    while (res.evaluations < max_evals) {
        Vec x0 = res.point;
        double f0 = res.value;
        std::size_t biggest = 0;
        double biggest_drop = 0.0;
        for (std::size_t k = 0; k < dirs.size() && res.evaluations < max_evals; ++k) {
            double before = res.value;
            detail_powell::golden_line(objective, res.point, dirs[k], lo, hi, res.value,
                                       res.evaluations, max_evals);
            if (before - res.value > biggest_drop) {
                biggest_drop = before - res.value;
                biggest = k;
            }
        }
        Vec new_dir = res.point - x0;
        if (new_dir.norm() > 1e-14 && res.evaluations < max_evals) {
            dirs.erase(dirs.begin() + static_cast<long>(biggest));
            dirs.push_back(new_dir.normalized());
            detail_powell::golden_line(objective, res.point, dirs.back(), lo, hi,
                                       res.value, res.evaluations, max_evals);
        }
        if (f0 - res.value < tol * (1.0 + std::abs(f0))) return res;
    }
    res.budget_exhausted = true;
    return res;
}

}  // namespace resformer
