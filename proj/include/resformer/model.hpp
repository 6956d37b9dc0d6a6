#pragma once

// Assembles embedding, fusion, group reservoir, encoder and head into the
// full forward pass; owns the flat parameter registry and checkpointing.

#include "resformer/autodiff.hpp"
#include "resformer/fusion.hpp"
#include "resformer/numerics.hpp"
#include "resformer/reservoir.hpp"
#include "resformer/stm.hpp"

#include <nlohmann/json.hpp>
#include <zlib.h>

#include <cstdio>
#include <fstream>
#include <memory>
#include <string>
#include <vector>

namespace resformer {

struct ModelConfig {
    int d = 128;          // embedding / hidden width
    int n_layers = 2;
    int n_heads = 4;
    int d_ff = 512;       // 4*d at desk scale; 768 in the paper profile
    int d_k = 128;        // fusion key width, defaults to d
    int vocab_size = 0;   // set from the vocabulary
    int j_max = 64;
    int n_classes = 2;
    int readout_dim = 64;     // m
    int history_window = 2;   // k
    double dropout = 0.1;
    CombinationMethod combine = CombinationMethod::cross_attention;
    bool zero_memory = false;  // STM-only ablation: memory tokens forced to zero

    void validate() const {
        if (d <= 0 || n_layers <= 0 || n_heads <= 0 || d_ff <= 0 || d_k <= 0)
            throw RangeError("model dimensions must be positive");
        if (d % n_heads != 0) throw RangeError("d must be divisible by n_heads");
        if (vocab_size < 3) throw RangeError("vocabulary must include PAD/UNK/CLS");
        if (n_classes < 2) throw RangeError("need at least two classes");
        if (j_max < 1 || history_window < 1 || readout_dim < 1)
            throw RangeError("j_max, k and readout_dim must be >= 1");
        if (dropout < 0.0 || dropout >= 1.0) throw RangeError("dropout must be in [0, 1)");
    }
};

struct ModelParams {
    ModelConfig config;
    EmbeddingParams embedding;
    FusionParams fusion;
    std::vector<EncoderLayerParams> encoder;
    ClassifierHead head;
    // Trainable readouts of the group members live in group.members(); the
    // group itself (fixed matrices + ring buffer) is owned by the model.
    std::shared_ptr<GroupReservoir> group;

    static ModelParams init(const ModelConfig& cfg,
                            const std::vector<ReservoirConfig>& reservoirs,
                            std::uint64_t seed) {
        cfg.validate();
        ModelParams p;
        p.config = cfg;
        Rng rng(seed, 0x6d6f64);
        p.embedding = EmbeddingParams::init(cfg.vocab_size, cfg.d, cfg.j_max, rng);
        {
            Rng sub = rng.split(101);
            p.fusion = FusionParams::init(cfg.d, cfg.readout_dim, cfg.d_k, cfg.d_ff, sub);
        }
        for (int l = 0; l < cfg.n_layers; ++l) {
            Rng sub = rng.split(200 + l);
            p.encoder.push_back(EncoderLayerParams::init(cfg.d, cfg.d_ff, sub));
        }
        {
            Rng sub = rng.split(301);
            p.head = ClassifierHead::init(cfg.d, cfg.n_classes, sub);
        }
        std::vector<Reservoir> members;
        for (const auto& rc : reservoirs) {
            if (rc.input_dim != cfg.d)
                throw DimensionError("reservoir input_dim must equal model d");
            if (rc.readout_dim != cfg.readout_dim)
                throw DimensionError("reservoir readout_dim must equal model readout_dim");
            members.push_back(build_reservoir(rc));
        }
        p.group = std::make_shared<GroupReservoir>(std::move(members), cfg.history_window);
        return p;
    }
};

struct NamedTensor {
    std::string name;
    Mat* tensor;
};

// Flat ordered registry of every trainable tensor. Fixed reservoir
// matrices (W, W_in, theta) are deliberately absent. Fusion fallback
// projections are registered only for the active combination method so
// every registered tensor actually receives gradient.
inline std::vector<NamedTensor> registry(ModelParams& p) {
    std::vector<NamedTensor> r;
    r.push_back({"embedding.token_table", &p.embedding.token_table});
    r.push_back({"embedding.positional_table", &p.embedding.positional_table});
    switch (p.config.combine) {
        case CombinationMethod::cross_attention:
            r.push_back({"fusion.w_q", &p.fusion.w_q});
            r.push_back({"fusion.w_k", &p.fusion.w_k});
            r.push_back({"fusion.w_v", &p.fusion.w_v});
            r.push_back({"fusion.ffn_w1", &p.fusion.ffn_w1});
            r.push_back({"fusion.ffn_b1", &p.fusion.ffn_b1});
            r.push_back({"fusion.ffn_w2", &p.fusion.ffn_w2});
            r.push_back({"fusion.ffn_b2", &p.fusion.ffn_b2});
            r.push_back({"fusion.ln1_gain", &p.fusion.ln1_gain});
            r.push_back({"fusion.ln1_bias", &p.fusion.ln1_bias});
            r.push_back({"fusion.ln2_gain", &p.fusion.ln2_gain});
            r.push_back({"fusion.ln2_bias", &p.fusion.ln2_bias});
            break;
        case CombinationMethod::concatenation:
            r.push_back({"fusion.concat_proj", &p.fusion.concat_proj});
            r.push_back({"fusion.concat_bias", &p.fusion.concat_bias});
            break;
        case CombinationMethod::elementwise_addition:
            r.push_back({"fusion.add_proj", &p.fusion.add_proj});
            r.push_back({"fusion.add_bias", &p.fusion.add_bias});
            break;
    }
    for (std::size_t l = 0; l < p.encoder.size(); ++l) {
        auto& e = p.encoder[l];
        std::string pre = "encoder." + std::to_string(l) + ".";
        r.push_back({pre + "w_q", &e.w_q});
        r.push_back({pre + "w_k", &e.w_k});
        r.push_back({pre + "w_v", &e.w_v});
        r.push_back({pre + "w_o", &e.w_o});
        r.push_back({pre + "ffn_w1", &e.ffn_w1});
        r.push_back({pre + "ffn_b1", &e.ffn_b1});
        r.push_back({pre + "ffn_w2", &e.ffn_w2});
        r.push_back({pre + "ffn_b2", &e.ffn_b2});
        r.push_back({pre + "ln1_gain", &e.ln1_gain});
        r.push_back({pre + "ln1_bias", &e.ln1_bias});
        r.push_back({pre + "ln2_gain", &e.ln2_gain});
        r.push_back({pre + "ln2_bias", &e.ln2_bias});
    }
    r.push_back({"head.weight", &p.head.weight});
    r.push_back({"head.bias", &p.head.bias});
    for (std::size_t i = 0; i < p.group->num_members(); ++i) {
        auto& m = p.group->members()[i];
        std::string pre = "reservoir." + std::to_string(i) + ".";
        r.push_back({pre + "w_out", &m.W_out});
        r.push_back({pre + "theta_out", &m.theta_out});
    }
    return r;
}

struct ForwardOutput {
    Vec logits;
    Vec h_cls;
    int predicted_class = 0;
    bool truncated = false;
};

// Per-member state snapshots over the retained window, frozen at the time
// the snapshot is taken. Every sentence in a batch forwards against the
// same snapshot (batch step 3).
struct MemorySnapshot {
    std::vector<std::vector<Vec>> steps;  // oldest first; L states per step
    bool cold() const { return steps.empty(); }

    // Order-insensitive-enough fingerprint for the step-3 instrumentation.
    double fingerprint() const {
        double f = static_cast<double>(steps.size());
        for (const auto& s : steps)
            for (const auto& x : s) f = 1e-3 * f + x.sum() + 7.0 * x.squaredNorm();
        return f;
    }
};

inline MemorySnapshot take_snapshot(const GroupReservoir& group) {
    MemorySnapshot snap;
    if (group.steps_recorded() > 0) snap.steps = group.memory_snapshots();
    return snap;
}

namespace detail_model {

struct GraphVars {
    ad::Var token_table, positional_table;
    FusionVars fusion;
    std::vector<EncoderLayerVars> encoder;
    ad::Var head_w, head_b;
    std::vector<std::pair<ad::Var, ad::Var>> readouts;  // (W_out, theta_out) per member
    std::vector<ad::Var> in_registry_order;
};

// Pushes every registry tensor onto the tape as a gradient-tracked leaf,
// in registry order, so tape gradients map 1:1 onto registry slots.
inline GraphVars make_graph_vars(ad::Tape& t, ModelParams& p) {
    GraphVars gv;
    auto reg = registry(p);
    std::size_t i = 0;
    auto next = [&]() { return gv.in_registry_order.emplace_back(t.leaf(*reg[i++].tensor)); };
    gv.token_table = next();
    gv.positional_table = next();
    gv.fusion.d_k = p.fusion.d_k;
    switch (p.config.combine) {
        case CombinationMethod::cross_attention:
            gv.fusion.w_q = next();
            gv.fusion.w_k = next();
            gv.fusion.w_v = next();
            gv.fusion.ffn_w1 = next();
            gv.fusion.ffn_b1 = next();
            gv.fusion.ffn_w2 = next();
            gv.fusion.ffn_b2 = next();
            gv.fusion.ln1_gain = next();
            gv.fusion.ln1_bias = next();
            gv.fusion.ln2_gain = next();
            gv.fusion.ln2_bias = next();
            break;
        case CombinationMethod::concatenation:
            gv.fusion.concat_proj = next();
            gv.fusion.concat_bias = next();
            break;
        case CombinationMethod::elementwise_addition:
            gv.fusion.add_proj = next();
            gv.fusion.add_bias = next();
            break;
    }
    for (std::size_t l = 0; l < p.encoder.size(); ++l) {
        EncoderLayerVars lv;
        lv.w_q = next();
        lv.w_k = next();
        lv.w_v = next();
        lv.w_o = next();
        lv.ffn_w1 = next();
        lv.ffn_b1 = next();
        lv.ffn_w2 = next();
        lv.ffn_b2 = next();
        lv.ln1_gain = next();
        lv.ln1_bias = next();
        lv.ln2_gain = next();
        lv.ln2_bias = next();
        gv.encoder.push_back(lv);
    }
    gv.head_w = next();
    gv.head_b = next();
    for (std::size_t m = 0; m < p.group->num_members(); ++m) {
        ad::Var w = next();
        ad::Var b = next();
        gv.readouts.emplace_back(w, b);
    }
    return gv;
}

inline ad::Var activation_on_tape(ad::Tape& t, Activation a, ad::Var x) {
    switch (a) {
        case Activation::relu: return t.relu(x);
        case Activation::tanh: return t.tanh(x);
        case Activation::leaky_relu: return t.leaky_relu(x, 0.01);
        case Activation::linear: return x;
    }
    return x;
}

// Memory tokens rebuilt on the tape from frozen state snapshots, so
// gradients reach W_out/theta_out but stop at the states themselves.
// Cold start: a single zero row (the zero-memory policy).
inline ad::Var memory_tokens_on_tape(ad::Tape& t, ModelParams& p,
                                     const MemorySnapshot& snap,
                                     const GraphVars& gv) {
    const int m = p.config.readout_dim;
    if (snap.cold() || p.config.zero_memory) return t.constant(Mat::Zero(1, m));
    std::vector<ad::Var> rows;
    const auto& members = p.group->members();
    for (const auto& step_states : snap.steps) {
        for (std::size_t i = 0; i < members.size(); ++i) {
            ad::Var x = t.constant(step_states[i].transpose());  // 1 x N_r
            ad::Var pre = t.add_row(t.matmul(x, t.transpose(gv.readouts[i].first)),
                                    gv.readouts[i].second);
            rows.push_back(
                activation_on_tape(t, members[i].config.readout_activation, pre));
        }
    }
    return t.concat_rows(rows);
}

struct GraphOutput {
    ad::Var logits;  // 1 x C
    ad::Var h_cls;   // 1 x d
    bool truncated = false;
};

inline GraphOutput build_graph(ad::Tape& t, ModelParams& p, const GraphVars& gv,
                               const std::vector<int>& sentence_ids,
                               const MemorySnapshot& snap, bool train_mode,
                               Rng* dropout_rng) {
    GraphOutput out;
    EmbedResult emb = embed(t, sentence_ids, gv.token_table, gv.positional_table,
                            p.embedding);
    out.truncated = emb.truncated;
    ad::Var memory = memory_tokens_on_tape(t, p, snap, gv);
    ad::Var x = combine(t, emb.rows, memory, p.config.combine, gv.fusion);
    ad::Var h = encoder_forward(t, x, gv.encoder, p.config.n_heads, train_mode,
                                p.config.dropout, dropout_rng);
    out.h_cls = extract_cls(t, h);
    out.logits = classify(t, out.h_cls, gv.head_w, gv.head_b);
    return out;
}

}  // namespace detail_model

// Pure forward pass against a frozen memory snapshot; never advances the
// reservoir (that is the trainer's job, preserving sentence order).
inline ForwardOutput forward(ModelParams& p, const std::vector<int>& sentence_ids,
                             const MemorySnapshot& snap, bool train_mode = false,
                             Rng* dropout_rng = nullptr) {
    ad::Tape t;
    auto gv = detail_model::make_graph_vars(t, p);
    auto g = detail_model::build_graph(t, p, gv, sentence_ids, snap, train_mode,
                                       dropout_rng);
    ForwardOutput out;
    out.logits = t.value(g.logits).row(0).transpose();
    out.h_cls = t.value(g.h_cls).row(0).transpose();
    out.predicted_class = argmax_class(out.logits);
    out.truncated = g.truncated;
    return out;
}

// Forward + cross-entropy backward; gradients are scaled by `weight` and
// accumulated into `grads` (registry order).
struct LossOutput {
    double loss = 0.0;
    ForwardOutput fwd;
};

inline LossOutput forward_backward(ModelParams& p, const std::vector<int>& sentence_ids,
                                   int label, const MemorySnapshot& snap,
                                   std::vector<Mat>& grads, double weight = 1.0,
                                   bool train_mode = true, Rng* dropout_rng = nullptr) {
    ad::Tape t;
    auto gv = detail_model::make_graph_vars(t, p);
    auto g = detail_model::build_graph(t, p, gv, sentence_ids, snap, train_mode,
                                       dropout_rng);
    ad::Var loss = t.softmax_cross_entropy(g.logits, {label});
    t.backward(loss);
    const std::size_t n = gv.in_registry_order.size();
    if (grads.size() != n) throw DimensionError("gradient sink shape mismatch");
    for (std::size_t i = 0; i < n; ++i)
        grads[i] += weight * t.grad(gv.in_registry_order[i]);
    LossOutput out;
    out.loss = t.value(loss)(0, 0);
    out.fwd.logits = t.value(g.logits).row(0).transpose();
    out.fwd.h_cls = t.value(g.h_cls).row(0).transpose();
    out.fwd.predicted_class = argmax_class(out.fwd.logits);
    out.fwd.truncated = g.truncated;
    return out;
}

inline std::vector<Mat> zero_grads(ModelParams& p) {
    std::vector<Mat> g;
    for (auto& nt : registry(p)) g.push_back(Mat::Zero(nt.tensor->rows(), nt.tensor->cols()));
    return g;
}

// Eq. res advance with the detached CLS hidden state; strictly sequential.
inline std::vector<ReservoirState> advance_memory(GroupReservoir& group,
                                                  const std::vector<ReservoirState>& states,
                                                  const Vec& h_cls) {
    return group.group_step(states, h_cls);
}

// ---------------------------------------------------------------------------
// Checkpointing. Little-endian binary: magic, version, payload size, crc32,
// then the payload of a JSON metadata record plus named f64 tensor records.
// Fixed reservoir matrices are reconstructed from seeds, never serialized.

struct CheckpointError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct CheckpointVersionError : CheckpointError {
    using CheckpointError::CheckpointError;
};
struct CheckpointChecksumError : CheckpointError {
    using CheckpointError::CheckpointError;
};

namespace detail_ckpt {

constexpr std::uint32_t kMagic = 0x5246434bu;  // "RFCK"
constexpr std::uint32_t kVersion = 1;

template <typename T>
void put(std::string& buf, T v) {
    buf.append(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(const std::string& buf, std::size_t& off) {
    if (off + sizeof(T) > buf.size()) throw CheckpointError("truncated checkpoint");
    T v;
    std::memcpy(&v, buf.data() + off, sizeof(T));
    off += sizeof(T);
    return v;
}

inline void put_tensor(std::string& buf, const std::string& name, const Mat& m) {
    put<std::uint32_t>(buf, static_cast<std::uint32_t>(name.size()));
    buf.append(name);
    put<std::uint8_t>(buf, 0);  // dtype f64
    put<std::uint64_t>(buf, static_cast<std::uint64_t>(m.rows()));
    put<std::uint64_t>(buf, static_cast<std::uint64_t>(m.cols()));
    buf.append(reinterpret_cast<const char*>(m.data()),
               sizeof(double) * static_cast<std::size_t>(m.size()));
}

inline std::pair<std::string, Mat> get_tensor(const std::string& buf, std::size_t& off) {
    auto name_len = get<std::uint32_t>(buf, off);
    if (off + name_len > buf.size()) throw CheckpointError("truncated checkpoint");
    std::string name(buf.data() + off, name_len);
    off += name_len;
    auto dtype = get<std::uint8_t>(buf, off);
    if (dtype != 0) throw CheckpointError("unsupported dtype tag in checkpoint");
    auto rows = get<std::uint64_t>(buf, off);
    auto cols = get<std::uint64_t>(buf, off);
    std::size_t bytes = sizeof(double) * rows * cols;
    if (off + bytes > buf.size()) throw CheckpointError("truncated checkpoint");
    Mat m(rows, cols);
    std::memcpy(m.data(), buf.data() + off, bytes);
    off += bytes;
    return {std::move(name), std::move(m)};
}

}  // namespace detail_ckpt

inline nlohmann::json reservoir_config_json(const ReservoirConfig& c) {
    return {{"size", c.size},
            {"input_dim", c.input_dim},
            {"leaky_alpha", c.leaky_alpha},
            {"spectral_radius", c.spectral_radius},
            {"sparsity", c.sparsity},
            {"input_scaling", c.input_scaling},
            {"readout_dim", c.readout_dim},
            {"readout_activation", to_string(c.readout_activation)},
            {"seed", c.seed}};
}

inline ReservoirConfig reservoir_config_from_json(const nlohmann::json& j) {
    ReservoirConfig c;
    c.size = j.at("size");
    c.input_dim = j.at("input_dim");
    c.leaky_alpha = j.at("leaky_alpha");
    c.spectral_radius = j.at("spectral_radius");
    c.sparsity = j.at("sparsity");
    c.input_scaling = j.at("input_scaling");
    c.readout_dim = j.at("readout_dim");
    c.readout_activation = activation_from_string(j.at("readout_activation"));
    c.seed = j.at("seed");
    return c;
}

inline nlohmann::json model_config_json(const ModelConfig& c) {
    return {{"d", c.d},
            {"n_layers", c.n_layers},
            {"n_heads", c.n_heads},
            {"d_ff", c.d_ff},
            {"d_k", c.d_k},
            {"vocab_size", c.vocab_size},
            {"j_max", c.j_max},
            {"n_classes", c.n_classes},
            {"readout_dim", c.readout_dim},
            {"history_window", c.history_window},
            {"dropout", c.dropout},
            {"combine", to_string(c.combine)},
            {"zero_memory", c.zero_memory}};
}

inline ModelConfig model_config_from_json(const nlohmann::json& j) {
    ModelConfig c;
    c.d = j.at("d");
    c.n_layers = j.at("n_layers");
    c.n_heads = j.at("n_heads");
    c.d_ff = j.at("d_ff");
    c.d_k = j.at("d_k");
    c.vocab_size = j.at("vocab_size");
    c.j_max = j.at("j_max");
    c.n_classes = j.at("n_classes");
    c.readout_dim = j.at("readout_dim");
    c.history_window = j.at("history_window");
    c.dropout = j.at("dropout");
    c.combine = combination_from_string(j.at("combine"));
    c.zero_memory = j.at("zero_memory");
    return c;
}

struct OptimizerMoments {
    long step = 0;
    std::vector<Mat> m;
    std::vector<Mat> v;
};

inline void save_checkpoint(ModelParams& params, const OptimizerMoments* opt,
                            const std::string& path,
                            std::uint64_t init_seed) {
    nlohmann::json meta;
    meta["model"] = model_config_json(params.config);
    meta["init_seed"] = init_seed;
    meta["reservoirs"] = nlohmann::json::array();
    for (const auto& r : params.group->members())
        meta["reservoirs"].push_back(reservoir_config_json(r.config));
    meta["optimizer_step"] = opt ? opt->step : 0;
    meta["has_optimizer"] = opt != nullptr;

    std::string payload;
    std::string meta_str = meta.dump();
    detail_ckpt::put<std::uint64_t>(payload, meta_str.size());
    payload.append(meta_str);
    auto reg = registry(params);
    detail_ckpt::put<std::uint32_t>(payload, static_cast<std::uint32_t>(reg.size()));
    for (auto& nt : reg) detail_ckpt::put_tensor(payload, nt.name, *nt.tensor);
    if (opt) {
        for (std::size_t i = 0; i < reg.size(); ++i) {
            detail_ckpt::put_tensor(payload, "opt.m." + reg[i].name, opt->m[i]);
            detail_ckpt::put_tensor(payload, "opt.v." + reg[i].name, opt->v[i]);
        }
    }

    std::uint32_t crc = static_cast<std::uint32_t>(
        crc32(0L, reinterpret_cast<const Bytef*>(payload.data()),
              static_cast<uInt>(payload.size())));
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw CheckpointError("cannot open checkpoint for writing: " + path);
    std::string header;
    detail_ckpt::put<std::uint32_t>(header, detail_ckpt::kMagic);
    detail_ckpt::put<std::uint32_t>(header, detail_ckpt::kVersion);
    detail_ckpt::put<std::uint64_t>(header, payload.size());
    detail_ckpt::put<std::uint32_t>(header, crc);
    f.write(header.data(), static_cast<std::streamsize>(header.size()));
    f.write(payload.data(), static_cast<std::streamsize>(payload.size()));
    if (!f) throw CheckpointError("write failure on checkpoint: " + path);
}

struct LoadedCheckpoint {
    ModelParams params;
    OptimizerMoments optimizer;
    bool has_optimizer = false;
    std::uint64_t init_seed = 0;
};

inline LoadedCheckpoint load_checkpoint(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw CheckpointError("cannot open checkpoint: " + path);
    std::string all((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    std::size_t off = 0;
    auto magic = detail_ckpt::get<std::uint32_t>(all, off);
    if (magic != detail_ckpt::kMagic) throw CheckpointError("not a checkpoint file");
    auto version = detail_ckpt::get<std::uint32_t>(all, off);
    if (version != detail_ckpt::kVersion)
        throw CheckpointVersionError("unsupported checkpoint version " +
                                     std::to_string(version));
    auto payload_size = detail_ckpt::get<std::uint64_t>(all, off);
    auto crc_expect = detail_ckpt::get<std::uint32_t>(all, off);
    if (off + payload_size != all.size()) throw CheckpointError("truncated checkpoint");
    std::string payload = all.substr(off, payload_size);
    std::uint32_t crc = static_cast<std::uint32_t>(
        crc32(0L, reinterpret_cast<const Bytef*>(payload.data()),
              static_cast<uInt>(payload.size())));
    if (crc != crc_expect) throw CheckpointChecksumError("checkpoint checksum mismatch");

    std::size_t p = 0;
    auto meta_len = detail_ckpt::get<std::uint64_t>(payload, p);
    if (p + meta_len > payload.size()) throw CheckpointError("truncated checkpoint");
    nlohmann::json meta = nlohmann::json::parse(payload.substr(p, meta_len));
    p += meta_len;

    LoadedCheckpoint out;
    out.init_seed = meta.at("init_seed");
    ModelConfig cfg = model_config_from_json(meta.at("model"));
    std::vector<ReservoirConfig> rcs;
    for (const auto& j : meta.at("reservoirs")) rcs.push_back(reservoir_config_from_json(j));
    out.params = ModelParams::init(cfg, rcs, out.init_seed);

    auto n_tensors = detail_ckpt::get<std::uint32_t>(payload, p);
    auto reg = registry(out.params);
    if (n_tensors != reg.size())
        throw CheckpointError("checkpoint tensor count does not match registry");
    for (std::size_t i = 0; i < reg.size(); ++i) {
        auto [name, m] = detail_ckpt::get_tensor(payload, p);
        if (name != reg[i].name)
            throw CheckpointError("unexpected tensor '" + name + "', wanted '" +
                                  reg[i].name + "'");
        if (m.rows() != reg[i].tensor->rows() || m.cols() != reg[i].tensor->cols())
            throw CheckpointError("tensor shape mismatch for " + name);
        *reg[i].tensor = std::move(m);
    }
    out.has_optimizer = meta.at("has_optimizer");
    if (out.has_optimizer) {
        out.optimizer.step = meta.at("optimizer_step");
        for (std::size_t i = 0; i < reg.size(); ++i) {
            auto [mn, mm] = detail_ckpt::get_tensor(payload, p);
            auto [vn, vv] = detail_ckpt::get_tensor(payload, p);
            if (mn != "opt.m." + reg[i].name || vn != "opt.v." + reg[i].name)
                throw CheckpointError("optimizer record order mismatch");
            out.optimizer.m.push_back(std::move(mm));
            out.optimizer.v.push_back(std::move(vv));
        }
    }
    return out;
}

}  // namespace resformer
