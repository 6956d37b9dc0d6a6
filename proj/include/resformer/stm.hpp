#pragma once

// Short-term memory: token + positional embedding with a prepended CLS
// token, a small multi-head transformer encoder over single sentences,
// and the classification head.

#include "resformer/autodiff.hpp"
#include "resformer/numerics.hpp"

#include <string>
#include <vector>

namespace resformer {

struct VocabularyError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct EmbeddingParams {
    Mat token_table;       // V x d
    Mat positional_table;  // (J_max + 1) x d
    int cls_id = 2;
    int pad_id = 0;
    int unk_id = 1;

    int vocab_size() const { return static_cast<int>(token_table.rows()); }
    int max_tokens() const { return static_cast<int>(positional_table.rows()) - 1; }

    static EmbeddingParams init(int vocab, int d, int j_max, Rng& rng) {
        EmbeddingParams p;
        Rng r1 = rng.split(11), r2 = rng.split(12);
        p.token_table = gaussian_matrix(r1, vocab, d, 0.0, 0.02);
        p.positional_table = gaussian_matrix(r2, j_max + 1, d, 0.0, 0.02);
        return p;
    }
};

struct EncoderLayerParams {
    Mat w_q, w_k, w_v, w_o;  // d x d each
    Mat ffn_w1, ffn_w2;      // d x d_ff, d_ff x d
    Mat ffn_b1, ffn_b2;      // 1 x d_ff, 1 x d
    Mat ln1_gain, ln1_bias;  // 1 x d
    Mat ln2_gain, ln2_bias;  // 1 x d

    static EncoderLayerParams init(int d, int d_ff, Rng& rng) {
        EncoderLayerParams p;
        auto draw = [&](int fan_in, int rows, int cols, int tag) {
            Rng sub = rng.split(tag);
            return gaussian_matrix(sub, rows, cols, 0.0, std::sqrt(1.0 / fan_in));
        };
        p.w_q = draw(d, d, d, 1);
        p.w_k = draw(d, d, d, 2);
        p.w_v = draw(d, d, d, 3);
        p.w_o = draw(d, d, d, 4);
        p.ffn_w1 = draw(d, d, d_ff, 5);
        p.ffn_w2 = draw(d_ff, d_ff, d, 6);
        p.ffn_b1 = Mat::Zero(1, d_ff);
        p.ffn_b2 = Mat::Zero(1, d);
        p.ln1_gain = Mat::Ones(1, d);
        p.ln1_bias = Mat::Zero(1, d);
        p.ln2_gain = Mat::Ones(1, d);
        p.ln2_bias = Mat::Zero(1, d);
        return p;
    }
};

struct ClassifierHead {
    Mat weight;  // d x C
    Mat bias;    // 1 x C

    static ClassifierHead init(int d, int n_classes, Rng& rng) {
        ClassifierHead h;
        Rng sub = rng.split(31);
        h.weight = gaussian_matrix(sub, d, n_classes, 0.0, std::sqrt(1.0 / d));
        h.bias = Mat::Zero(1, n_classes);
        return h;
    }
};

struct EmbedResult {
    ad::Var rows;     // (J+1) x d, CLS at row 0
    bool truncated = false;
};

// CLS at row 0, then token embeddings; positional embeddings added rowwise.
// Overlong sentences are truncated to J_max with a flag, not an error.
inline EmbedResult embed(ad::Tape& t, const std::vector<int>& token_ids,
                         ad::Var token_table, ad::Var positional_table,
                         const EmbeddingParams& p) {
    EmbedResult res;
    std::vector<int> ids;
    ids.push_back(p.cls_id);
    for (int id : token_ids) {
        if (id < 0 || id >= p.vocab_size())
            throw VocabularyError("token id out of range: " + std::to_string(id));
        if (static_cast<int>(ids.size()) > p.max_tokens()) {
            res.truncated = true;
            break;
        }
        ids.push_back(id);
    }
    std::vector<int> positions(ids.size());
    for (std::size_t i = 0; i < ids.size(); ++i) positions[i] = static_cast<int>(i);
    ad::Var tok = t.gather_rows(token_table, ids);
    ad::Var pos = t.gather_rows(positional_table, positions);
    res.rows = t.add(tok, pos);
    return res;
}

struct EncoderLayerVars {
    ad::Var w_q, w_k, w_v, w_o;
    ad::Var ffn_w1, ffn_b1, ffn_w2, ffn_b2;
    ad::Var ln1_gain, ln1_bias, ln2_gain, ln2_bias;
};

// One pre-residual encoder layer: x + MHA(LN1(x)), then + FFN(LN2(.)).
// Attention-probability dropout only in train mode.
inline ad::Var encoder_layer(ad::Tape& t, ad::Var x, const EncoderLayerVars& lv,
                             int n_heads, bool train_mode, double dropout_p,
                             Rng* dropout_rng) {
    const Eigen::Index d = t.value(x).cols();
    if (d % n_heads != 0) throw DimensionError("d must be divisible by head count");
    const Eigen::Index dh = d / n_heads;

    ad::Var a = t.layer_norm_rows(x, lv.ln1_gain, lv.ln1_bias);
    ad::Var q = t.matmul(a, lv.w_q);
    ad::Var k = t.matmul(a, lv.w_k);
    ad::Var v = t.matmul(a, lv.w_v);
    std::vector<ad::Var> heads;
    heads.reserve(n_heads);
    for (int h = 0; h < n_heads; ++h) {
        ad::Var qh = t.slice_cols(q, h * dh, dh);
        ad::Var kh = t.slice_cols(k, h * dh, dh);
        ad::Var vh = t.slice_cols(v, h * dh, dh);
        ad::Var scores =
            t.scale(t.matmul(qh, t.transpose(kh)), 1.0 / std::sqrt(double(dh)));
        ad::Var attn = t.row_softmax(scores);
        if (train_mode && dropout_p > 0.0)
            attn = t.dropout(attn, dropout_p, *dropout_rng);
        heads.push_back(t.matmul(attn, vh));
    }
    ad::Var ctx = heads[0];
    for (std::size_t h = 1; h < heads.size(); ++h) ctx = t.concat_cols(ctx, heads[h]);
    x = t.add(x, t.matmul(ctx, lv.w_o));

    ad::Var b = t.layer_norm_rows(x, lv.ln2_gain, lv.ln2_bias);
    ad::Var ffn = t.add_row(
        t.matmul(t.relu(t.add_row(t.matmul(b, lv.ffn_w1), lv.ffn_b1)), lv.ffn_w2),
        lv.ffn_b2);
    return t.add(x, ffn);
}

inline ad::Var encoder_forward(ad::Tape& t, ad::Var x,
                               const std::vector<EncoderLayerVars>& layers,
                               int n_heads, bool train_mode, double dropout_p,
                               Rng* dropout_rng) {
    if (layers.empty()) throw DimensionError("encoder needs at least one layer");
    for (const auto& lv : layers)
        x = encoder_layer(t, x, lv, n_heads, train_mode, dropout_p, dropout_rng);
    return x;
}

inline ad::Var extract_cls(ad::Tape& t, ad::Var h) {
    if (t.value(h).rows() < 1) throw DimensionError("empty hidden state matrix");
    return t.slice_rows(h, 0, 1);
}

inline ad::Var classify(ad::Tape& t, ad::Var h_cls, ad::Var weight, ad::Var bias) {
    return t.add_row(t.matmul(h_cls, weight), bias);
}

// Lowest index wins ties, so predictions are deterministic.
inline int argmax_class(const Vec& logits) {
    int best = 0;
    for (Eigen::Index i = 1; i < logits.size(); ++i)
        if (logits(i) > logits(best)) best = static_cast<int>(i);
    return best;
}

}  // namespace resformer
