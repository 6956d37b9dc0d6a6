#pragma once

// The combination operator: cross-attention from sentence token embeddings
// (queries) onto reservoir memory tokens (keys/values), followed by the
// residual feed-forward + layer-norm block, with concatenation and
// element-wise-addition fallbacks for the ablation.

#include "resformer/autodiff.hpp"
#include "resformer/numerics.hpp"

#include <string>

namespace resformer {

enum class CombinationMethod { cross_attention, concatenation, elementwise_addition };

inline std::string to_string(CombinationMethod m) {
    switch (m) {
        case CombinationMethod::cross_attention: return "cross_attention";
        case CombinationMethod::concatenation: return "concat";
        case CombinationMethod::elementwise_addition: return "add";
    }
    return "?";
}

inline CombinationMethod combination_from_string(const std::string& s) {
    if (s == "cross_attention") return CombinationMethod::cross_attention;
    if (s == "concat") return CombinationMethod::concatenation;
    if (s == "add") return CombinationMethod::elementwise_addition;
    throw RangeError("unknown combination method: " + s);
}

// Trainable tensors of the fusion block. Biases and layer-norm parameters
// are stored as 1 x n rows so they broadcast directly on the tape.
struct FusionParams {
    int d_k = 0;
    Mat w_q, w_k, w_v;            // d x d_k, m x d_k, m x d
    Mat ffn_w1, ffn_w2;           // d x d_ff, d_ff x d
    Mat ffn_b1, ffn_b2;           // 1 x d_ff, 1 x d
    Mat ln1_gain, ln1_bias;       // 1 x d
    Mat ln2_gain, ln2_bias;       // 1 x d
    Mat concat_proj, concat_bias; // (d+m) x d, 1 x d
    Mat add_proj, add_bias;       // m x d, 1 x d

    static FusionParams init(int d, int m, int d_k, int d_ff, Rng& rng) {
        FusionParams p;
        p.d_k = d_k;
        auto glorot = [&](int fan_in, int rows, int cols) {
            Rng sub = rng.split(static_cast<std::uint64_t>(rows) * 7919 + cols);
            return gaussian_matrix(sub, rows, cols, 0.0, std::sqrt(1.0 / fan_in));
        };
        p.w_q = glorot(d, d, d_k);
        p.w_k = glorot(m, m, d_k);
        p.w_v = glorot(m, m, d);
        p.ffn_w1 = glorot(d, d, d_ff);
        p.ffn_w2 = glorot(d_ff, d_ff, d);
        p.ffn_b1 = Mat::Zero(1, d_ff);
        p.ffn_b2 = Mat::Zero(1, d);
        p.ln1_gain = Mat::Ones(1, d);
        p.ln1_bias = Mat::Zero(1, d);
        p.ln2_gain = Mat::Ones(1, d);
        p.ln2_bias = Mat::Zero(1, d);
        p.concat_proj = glorot(d + m, d + m, d);
        p.concat_bias = Mat::Zero(1, d);
        p.add_proj = glorot(m, m, d);
        p.add_bias = Mat::Zero(1, d);
        return p;
    }
};

// Tape handles for the fusion tensors used by a given combination method.
struct FusionVars {
    ad::Var w_q, w_k, w_v;
    ad::Var ffn_w1, ffn_b1, ffn_w2, ffn_b2;
    ad::Var ln1_gain, ln1_bias, ln2_gain, ln2_bias;
    ad::Var concat_proj, concat_bias;
    ad::Var add_proj, add_bias;
    int d_k = 0;
};

inline void check_memory_nonempty(const Mat& o) {
    if (o.rows() < 1) throw DimensionError("combination requires at least one memory token");
}

// Scores (E W_Q)(O W_K)^T / sqrt(d_k), row-softmax, context A (O W_V),
// then the residual feed-forward block:
//   R = LN1(C + E); out = LN2(FFN(R) + R)
inline ad::Var cross_attention_combine(ad::Tape& t, ad::Var e, ad::Var o,
                                       const FusionVars& fv) {
    check_memory_nonempty(t.value(o));
    ad::Var q = t.matmul(e, fv.w_q);
    ad::Var k = t.matmul(o, fv.w_k);
    ad::Var scores = t.scale(t.matmul(q, t.transpose(k)), 1.0 / std::sqrt(double(fv.d_k)));
    ad::Var attn = t.row_softmax(scores);
    ad::Var context = t.matmul(attn, t.matmul(o, fv.w_v));
    ad::Var r = t.layer_norm_rows(t.add(context, e), fv.ln1_gain, fv.ln1_bias);
    ad::Var ffn = t.add_row(
        t.matmul(t.relu(t.add_row(t.matmul(r, fv.ffn_w1), fv.ffn_b1)), fv.ffn_w2),
        fv.ffn_b2);
    return t.layer_norm_rows(t.add(ffn, r), fv.ln2_gain, fv.ln2_bias);
}

// Each token concatenated with the mean-pooled memory vector, projected
// back to d.
inline ad::Var concat_combine(ad::Tape& t, ad::Var e, ad::Var o,
                              ad::Var proj, ad::Var bias) {
    check_memory_nonempty(t.value(o));
    ad::Var pooled = t.repeat_rows(t.mean_rows(o), t.value(e).rows());
    ad::Var cat = t.concat_cols(e, pooled);
    return t.add_row(t.matmul(cat, proj), bias);
}

// Mean-pooled memory vector projected to d and added to every token.
inline ad::Var add_combine(ad::Tape& t, ad::Var e, ad::Var o,
                           ad::Var proj, ad::Var bias) {
    check_memory_nonempty(t.value(o));
    ad::Var pooled = t.add_row(t.matmul(t.mean_rows(o), proj), bias);
    return t.add(e, t.repeat_rows(pooled, t.value(e).rows()));
}

// Dispatch; every method preserves the (J+1) x d embedding shape.
inline ad::Var combine(ad::Tape& t, ad::Var e, ad::Var o, CombinationMethod method,
                       const FusionVars& fv) {
    switch (method) {
        case CombinationMethod::cross_attention:
            return cross_attention_combine(t, e, o, fv);
        case CombinationMethod::concatenation:
            return concat_combine(t, e, o, fv.concat_proj, fv.concat_bias);
        case CombinationMethod::elementwise_addition:
            return add_combine(t, e, o, fv.add_proj, fv.add_bias);
    }
    throw RangeError("unknown combination method");
}

}  // namespace resformer
