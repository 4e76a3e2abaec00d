#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "vidcap/graph.hpp"
#include "vidcap/rng.hpp"
#include "vidcap/tensor.hpp"

namespace vidcap {

// Encoder output for one clip: t time steps, s spatial tokens per frame,
// hidden size d. Images are one-frame videos (t = 1).
struct VideoFeatures {
    Tensor feats;

    explicit VideoFeatures(Tensor f) : feats(std::move(f)) {
        if (feats.rank() != 3) throw ShapeError("video features must be [t,s,d], got " + shape_str(feats.shape));
    }
    std::int64_t t() const { return feats.shape[0]; }
    std::int64_t s() const { return feats.shape[1]; }
    std::int64_t d() const { return feats.shape[2]; }
};

// Single-head biased Q/K/V projections, all d -> d.
struct CrossAttentionParams {
    Tensor wq, bq, wk, bk, wv, bv;

    static CrossAttentionParams init(std::int64_t d, Rng& rng) {
        const double sd = 1.0 / std::sqrt(static_cast<double>(d));
        CrossAttentionParams p{Tensor::randn({d, d}, rng, sd), Tensor::zeros({d}),
                               Tensor::randn({d, d}, rng, sd), Tensor::zeros({d}),
                               Tensor::randn({d, d}, rng, sd), Tensor::zeros({d})};
        return p;
    }

    std::vector<std::pair<std::string, Tensor*>> named(const std::string& prefix) {
        return {{prefix + ".wq", &wq}, {prefix + ".bq", &bq}, {prefix + ".wk", &wk},
                {prefix + ".bk", &bk}, {prefix + ".wv", &wv}, {prefix + ".bv", &bv}};
    }
};

struct BoundCrossAttention {
    Value wq, bq, wk, bk, wv, bv;
};

inline BoundCrossAttention bind_params(Graph& g, CrossAttentionParams& p) {
    return {g.leaf(p.wq), g.leaf(p.bq), g.leaf(p.wk), g.leaf(p.bk), g.leaf(p.wv), g.leaf(p.bv)};
}

// Two branch attentions, a post-pool layer norm per branch, and a 2d -> d
// merge projection over the concatenated branch outputs.
struct SeparableAttentionParams {
    CrossAttentionParams time, space;
    Tensor ln_time_gain, ln_time_bias, ln_space_gain, ln_space_bias;
    Tensor merge_w, merge_b;

    static SeparableAttentionParams init(std::int64_t d, Rng& rng) {
        SeparableAttentionParams p{CrossAttentionParams::init(d, rng),
                                   CrossAttentionParams::init(d, rng),
                                   Tensor::full({d}, 1.0),
                                   Tensor::zeros({d}),
                                   Tensor::full({d}, 1.0),
                                   Tensor::zeros({d}),
                                   Tensor::randn({2 * d, d}, rng, 1.0 / std::sqrt(2.0 * d)),
                                   Tensor::zeros({d})};
        return p;
    }

    std::vector<std::pair<std::string, Tensor*>> named(const std::string& prefix) {
        auto out = time.named(prefix + ".time");
        for (auto& e : space.named(prefix + ".space")) out.push_back(e);
        out.emplace_back(prefix + ".ln_time_gain", &ln_time_gain);
        out.emplace_back(prefix + ".ln_time_bias", &ln_time_bias);
        out.emplace_back(prefix + ".ln_space_gain", &ln_space_gain);
        out.emplace_back(prefix + ".ln_space_bias", &ln_space_bias);
        out.emplace_back(prefix + ".merge_w", &merge_w);
        out.emplace_back(prefix + ".merge_b", &merge_b);
        return out;
    }
};

struct BoundSeparableAttention {
    BoundCrossAttention time, space;
    Value ln_time_gain, ln_time_bias, ln_space_gain, ln_space_bias;
    Value merge_w, merge_b;
};

inline BoundSeparableAttention bind_params(Graph& g, SeparableAttentionParams& p) {
    return {bind_params(g, p.time),       bind_params(g, p.space),  g.leaf(p.ln_time_gain),
            g.leaf(p.ln_time_bias),       g.leaf(p.ln_space_gain),  g.leaf(p.ln_space_bias),
            g.leaf(p.merge_w),            g.leaf(p.merge_b)};
}

namespace detail {

inline Value project_query(Value query, const BoundCrossAttention& p) {
    ScopedMacScope scope(*query.g, MacScope::projection);
    return add_bias(matmul(query, p.wq), p.bq);
}

// Scaled dot-product attention with a pre-projected query. Score and
// value-mixing matmuls land in the score scope, K/V projections in the
// projection scope.
inline Value attend(Value q_proj, Value keys, const BoundCrossAttention& p) {
    Graph& g = *q_proj.g;
    const std::int64_t d = q_proj.shape()[1];
    if (keys.shape()[1] != d)
        throw ShapeError("attention hidden size mismatch: " + shape_str(q_proj.shape()) + " vs " + shape_str(keys.shape()));
    Value k, v;
    {
        ScopedMacScope scope(g, MacScope::projection);
        k = add_bias(matmul(keys, p.wk), p.bk);
        v = add_bias(matmul(keys, p.wv), p.bv);
    }
    ScopedMacScope scope(g, MacScope::score);
    Value scores = scale(matmul(q_proj, transpose(k)), 1.0 / std::sqrt(static_cast<double>(d)));
    return matmul(softmax(scores, 1), v);
}

inline void check_query_video(Value query, Value video) {
    if (query.shape().size() != 2 || video.shape().size() != 3)
        throw ShapeError("expected query [q,d] and video [t,s,d], got " + shape_str(query.shape()) + " and " +
                         shape_str(video.shape()));
    if (query.shape()[1] != video.shape()[2])
        throw ShapeError("query and video hidden sizes differ: " + shape_str(query.shape()) + " vs " +
                         shape_str(video.shape()));
}

}  // namespace detail

// Attention from every query row to all t*s flattened video tokens.
inline Value full_cross_attention(Value query, Value video, const BoundCrossAttention& p) {
    detail::check_query_video(query, video);
    const Shape& vs = video.shape();
    Value keys = reshape(video, {vs[0] * vs[1], vs[2]});
    return detail::attend(detail::project_query(query, p), keys, p);
}

// Reference baseline: one space attention per frame plus one time attention
// per spatial position, all outputs averaged. Every sub-attention reuses the
// same projections, so its cost is exactly twice full_cross_attention.
inline Value naive_axial_cross_attention(Value query, Value video, const BoundCrossAttention& p) {
    detail::check_query_video(query, video);
    const Shape& vs = video.shape();
    const std::int64_t t = vs[0], s = vs[1], d = vs[2];
    Value q_space = detail::project_query(query, p);
    Value q_time = detail::project_query(query, p);
    Value acc{nullptr, -1};
    for (std::int64_t i = 0; i < t; ++i) {
        Value frame = reshape(slice(video, 0, i, i + 1), {s, d});
        Value out = detail::attend(q_space, frame, p);
        acc = acc.valid() ? add(acc, out) : out;
    }
    for (std::int64_t j = 0; j < s; ++j) {
        Value column = reshape(slice(video, 1, j, j + 1), {t, d});
        acc = add(acc, detail::attend(q_time, column, p));
    }
    return scale(acc, 1.0 / static_cast<double>(t + s));
}

// Time branch attends to layer_norm(max over space) [t,d]; space branch to
// layer_norm(max over time) [s,d]; branch outputs are concatenated along the
// hidden axis and merged back to d.
inline Value separable_cross_attention(Value query, Value video, const BoundSeparableAttention& p) {
    detail::check_query_video(query, video);
    Graph& g = *query.g;
    Value time_keys = layer_norm(max_pool_axis(video, 1), p.ln_time_gain, p.ln_time_bias);
    Value space_keys = layer_norm(max_pool_axis(video, 0), p.ln_space_gain, p.ln_space_bias);
    Value time_out = detail::attend(detail::project_query(query, p.time), time_keys, p.time);
    Value space_out = detail::attend(detail::project_query(query, p.space), space_keys, p.space);
    ScopedMacScope scope(g, MacScope::projection);
    return add_bias(matmul(concat(time_out, space_out, 1), p.merge_w), p.merge_b);
}

// Multi-head biased projections for the frozen LM's masked self-attention.
struct SelfAttentionParams {
    Tensor wq, bq, wk, bk, wv, bv, wo, bo;

    static SelfAttentionParams init(std::int64_t d, Rng& rng) {
        const double sd = 1.0 / std::sqrt(static_cast<double>(d));
        return {Tensor::randn({d, d}, rng, sd), Tensor::zeros({d}), Tensor::randn({d, d}, rng, sd),
                Tensor::zeros({d}),             Tensor::randn({d, d}, rng, sd), Tensor::zeros({d}),
                Tensor::randn({d, d}, rng, sd), Tensor::zeros({d})};
    }

    std::vector<std::pair<std::string, Tensor*>> named(const std::string& prefix) {
        return {{prefix + ".wq", &wq}, {prefix + ".bq", &bq}, {prefix + ".wk", &wk}, {prefix + ".bk", &bk},
                {prefix + ".wv", &wv}, {prefix + ".bv", &bv}, {prefix + ".wo", &wo}, {prefix + ".bo", &bo}};
    }
};

struct BoundSelfAttention {
    Value wq, bq, wk, bk, wv, bv, wo, bo;
};

inline BoundSelfAttention bind_params(Graph& g, SelfAttentionParams& p) {
    return {g.leaf(p.wq), g.leaf(p.bq), g.leaf(p.wk), g.leaf(p.bk),
            g.leaf(p.wv), g.leaf(p.bv), g.leaf(p.wo), g.leaf(p.bo)};
}

// Masked multi-head attention: position i attends only to positions <= i.
inline Value self_attention(Value x, const BoundSelfAttention& p, int heads, bool causal) {
    Graph& g = *x.g;
    const Shape& s = x.shape();
    if (s.size() != 2) throw ShapeError("self-attention expects [n,d], got " + shape_str(s));
    const std::int64_t d = s[1];
    if (heads < 1 || d % heads != 0)
        throw ShapeError("hidden size " + std::to_string(d) + " not divisible by " + std::to_string(heads) + " heads");
    const std::int64_t dh = d / heads;
    Value q, k, v;
    {
        ScopedMacScope scope(g, MacScope::projection);
        q = add_bias(matmul(x, p.wq), p.bq);
        k = add_bias(matmul(x, p.wk), p.bk);
        v = add_bias(matmul(x, p.wv), p.bv);
    }
    Value merged{nullptr, -1};
    {
        ScopedMacScope scope(g, MacScope::score);
        for (int h = 0; h < heads; ++h) {
            Value qh = slice(q, 1, h * dh, (h + 1) * dh);
            Value kh = slice(k, 1, h * dh, (h + 1) * dh);
            Value vh = slice(v, 1, h * dh, (h + 1) * dh);
            Value scores = scale(matmul(qh, transpose(kh)), 1.0 / std::sqrt(static_cast<double>(dh)));
            Value probs = causal ? causal_softmax(scores) : softmax(scores, 1);
            Value oh = matmul(probs, vh);
            merged = merged.valid() ? concat(merged, oh, 1) : oh;
        }
    }
    ScopedMacScope scope(g, MacScope::projection);
    return add_bias(matmul(merged, p.wo), p.bo);
}

inline Value causal_self_attention(Value x, const BoundSelfAttention& p, int heads) {
    return self_attention(x, p, heads, true);
}

// ---------------------------------------------------------------------------
// Exact MAC accounting
// ---------------------------------------------------------------------------

enum class AttentionVariant { full, naive_axial, separable };

inline const char* variant_name(AttentionVariant v) {
    switch (v) {
        case AttentionVariant::full: return "full";
        case AttentionVariant::naive_axial: return "naive_axial";
        case AttentionVariant::separable: return "separable";
    }
    return "?";
}

// score_macs covers the score matmul and the value-mixing matmul (two passes);
// projection_macs covers Q/K/V and merge projections.
struct FlopReport {
    std::string variant;
    std::int64_t q = 0, t = 0, s = 0, d = 0;
    std::uint64_t score_macs = 0;
    std::uint64_t projection_macs = 0;

    std::uint64_t total() const { return score_macs + projection_macs; }
    std::uint64_t score_macs_per_pass() const { return score_macs / 2; }
};

inline FlopReport closed_form_flops(AttentionVariant v, std::int64_t q, std::int64_t t, std::int64_t s, std::int64_t d) {
    if (q < 1 || t < 1 || s < 1 || d < 1) throw ShapeError("flop counting needs positive dimensions");
    const std::uint64_t uq = q, ut = t, us = s, ud = d;
    const std::uint64_t dd = ud * ud;
    FlopReport r;
    r.variant = variant_name(v);
    r.q = q;
    r.t = t;
    r.s = s;
    r.d = d;
    switch (v) {
        case AttentionVariant::full:
            r.score_macs = 2 * uq * ut * us * ud;
            r.projection_macs = (uq + 2 * ut * us) * dd;
            break;
        case AttentionVariant::naive_axial:
            r.score_macs = 4 * uq * ut * us * ud;
            r.projection_macs = 2 * (uq + 2 * ut * us) * dd;
            break;
        case AttentionVariant::separable:
            r.score_macs = 2 * uq * (ut + us) * ud;
            r.projection_macs = (4 * uq + 2 * (ut + us)) * dd;
            break;
    }
    return r;
}

// Instrumented counts from a real forward pass with random inputs.
inline FlopReport measured_flops(AttentionVariant v, std::int64_t q, std::int64_t t, std::int64_t s, std::int64_t d,
                                 std::uint64_t seed = 7) {
    if (q < 1 || t < 1 || s < 1 || d < 1) throw ShapeError("flop counting needs positive dimensions");
    Rng rng = Rng::stream(seed, "flops");
    Tensor query = Tensor::randn({q, d}, rng);
    Tensor video = Tensor::randn({t, s, d}, rng);
    Graph g;
    Value vq = g.leaf(query);
    Value vv = g.leaf(video);
    if (v == AttentionVariant::separable) {
        SeparableAttentionParams p = SeparableAttentionParams::init(d, rng);
        separable_cross_attention(vq, vv, bind_params(g, p));
    } else {
        CrossAttentionParams p = CrossAttentionParams::init(d, rng);
        if (v == AttentionVariant::full)
            full_cross_attention(vq, vv, bind_params(g, p));
        else
            naive_axial_cross_attention(vq, vv, bind_params(g, p));
    }
    FlopReport r;
    r.variant = variant_name(v);
    r.q = q;
    r.t = t;
    r.s = s;
    r.d = d;
    r.score_macs = g.macs().score;
    r.projection_macs = g.macs().projection;
    if (g.macs().other != 0) throw std::logic_error("unscoped matmul inside attention kernel");
    return r;
}

// Closed-form counts cross-checked against an instrumented forward pass.
inline FlopReport count_flops(AttentionVariant v, std::int64_t q, std::int64_t t, std::int64_t s, std::int64_t d) {
    FlopReport formula = closed_form_flops(v, q, t, s, d);
    FlopReport measured = measured_flops(v, q, t, s, d);
    if (formula.score_macs != measured.score_macs || formula.projection_macs != measured.projection_macs)
        throw std::logic_error(std::string("closed-form and instrumented MAC counts disagree for ") + formula.variant);
    return formula;
}

// Self-attention over a [t,s] token grid: separable factoring costs
// (t^2 s + t s^2) score terms against (ts)^2 for the full grid.
inline double separable_self_attention_cost_fraction(std::int64_t t, std::int64_t s) {
    const double ts = static_cast<double>(t) * static_cast<double>(s);
    return (static_cast<double>(t) + static_cast<double>(s)) / ts;
}

// Score-cost ratio of full over separable cross-attention: ts/(t+s).
inline double cross_attention_reduction(std::int64_t t, std::int64_t s) {
    return static_cast<double>(t) * static_cast<double>(s) / static_cast<double>(t + s);
}

}  // namespace vidcap
