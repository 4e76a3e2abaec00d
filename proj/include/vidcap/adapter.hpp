#pragma once

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "vidcap/attention.hpp"
#include "vidcap/graph.hpp"
#include "vidcap/rng.hpp"
#include "vidcap/tensor.hpp"

namespace vidcap {

enum class GateInitMode { zero, one };

// Adapter block inserted after a frozen LM layer: a gated separable
// cross-attention sublayer followed by a gated FFN sublayer, both pre-norm.
// Gates are per-dimension vectors by default; scalar mode ties them for the
// ablation. The learned parameter is alpha; the effective gate is tanh(alpha).
struct GatedAdapter {
    Tensor ln_attn_gain, ln_attn_bias;
    SeparableAttentionParams xattn;
    Tensor alpha_attn;
    Tensor ln_ffn_gain, ln_ffn_bias;
    Tensor w1, b1, w2, b2;
    Tensor alpha_ffn;
    bool scalar_gates = false;

    static GatedAdapter init(std::int64_t d, Rng& rng, bool scalar_gates = false) {
        const std::int64_t gate_dim = scalar_gates ? 1 : d;
        GatedAdapter a{Tensor::full({d}, 1.0),
                       Tensor::zeros({d}),
                       SeparableAttentionParams::init(d, rng),
                       Tensor::zeros({gate_dim}),
                       Tensor::full({d}, 1.0),
                       Tensor::zeros({d}),
                       Tensor::randn({d, 4 * d}, rng, 1.0 / std::sqrt(static_cast<double>(d))),
                       Tensor::zeros({4 * d}),
                       Tensor::randn({4 * d, d}, rng, 1.0 / std::sqrt(4.0 * static_cast<double>(d))),
                       Tensor::zeros({d}),
                       Tensor::zeros({gate_dim}),
                       scalar_gates};
        return a;
    }

    std::vector<std::pair<std::string, Tensor*>> named(const std::string& prefix) {
        auto out = xattn.named(prefix + ".xattn");
        out.emplace_back(prefix + ".ln_attn_gain", &ln_attn_gain);
        out.emplace_back(prefix + ".ln_attn_bias", &ln_attn_bias);
        out.emplace_back(prefix + ".alpha_attn", &alpha_attn);
        out.emplace_back(prefix + ".ln_ffn_gain", &ln_ffn_gain);
        out.emplace_back(prefix + ".ln_ffn_bias", &ln_ffn_bias);
        out.emplace_back(prefix + ".w1", &w1);
        out.emplace_back(prefix + ".b1", &b1);
        out.emplace_back(prefix + ".w2", &w2);
        out.emplace_back(prefix + ".b2", &b2);
        out.emplace_back(prefix + ".alpha_ffn", &alpha_ffn);
        return out;
    }
};

inline void init_gates(GatedAdapter& a, GateInitMode mode) {
    const double v = mode == GateInitMode::zero ? 0.0 : 1.0;
    for (auto& x : a.alpha_attn.data) x = v;
    for (auto& x : a.alpha_ffn.data) x = v;
}

struct BoundAdapter {
    Value ln_attn_gain, ln_attn_bias;
    BoundSeparableAttention xattn;
    Value alpha_attn;
    Value ln_ffn_gain, ln_ffn_bias;
    Value w1, b1, w2, b2;
    Value alpha_ffn;
    bool scalar_gates = false;
};

inline BoundAdapter bind_params(Graph& g, GatedAdapter& a) {
    return {g.leaf(a.ln_attn_gain), g.leaf(a.ln_attn_bias), bind_params(g, a.xattn), g.leaf(a.alpha_attn),
            g.leaf(a.ln_ffn_gain),  g.leaf(a.ln_ffn_bias),  g.leaf(a.w1),            g.leaf(a.b1),
            g.leaf(a.w2),           g.leaf(a.b2),            g.leaf(a.alpha_ffn),     a.scalar_gates};
}

namespace detail {

inline Value apply_gate(Value branch, Value alpha, bool scalar) {
    Value gate = vidcap::tanh(alpha);
    return scalar ? scale_by(branch, gate) : gate_rows(branch, gate);
}

}  // namespace detail

// u = h + tanh(alpha_attn) * SepXAttn(prenorm(h), video)
// out = u + tanh(alpha_ffn) * FFN(prenorm(u))
inline Value adapter_forward(Value h, Value video, const BoundAdapter& a) {
    Value pre_attn = layer_norm(h, a.ln_attn_gain, a.ln_attn_bias);
    Value attn = separable_cross_attention(pre_attn, video, a.xattn);
    Value u = add(h, detail::apply_gate(attn, a.alpha_attn, a.scalar_gates));
    Value pre_ffn = layer_norm(u, a.ln_ffn_gain, a.ln_ffn_bias);
    Value ffn = add_bias(matmul(gelu(add_bias(matmul(pre_ffn, a.w1), a.b1)), a.w2), a.b2);
    return add(u, detail::apply_gate(ffn, a.alpha_ffn, a.scalar_gates));
}

// Effective gate values tanh(alpha) per adapter, attention then FFN.
struct GateSnapshot {
    std::vector<std::vector<double>> attn;
    std::vector<std::vector<double>> ffn;
};

inline GateSnapshot snapshot_gates(const std::vector<GatedAdapter>& adapters) {
    GateSnapshot s;
    for (const auto& a : adapters) {
        std::vector<double> ga(a.alpha_attn.data.size()), gf(a.alpha_ffn.data.size());
        for (std::size_t i = 0; i < ga.size(); ++i) ga[i] = std::tanh(a.alpha_attn.data[i]);
        for (std::size_t i = 0; i < gf.size(); ++i) gf[i] = std::tanh(a.alpha_ffn.data[i]);
        s.attn.push_back(std::move(ga));
        s.ffn.push_back(std::move(gf));
    }
    return s;
}

struct GateDrift {
    std::vector<double> per_adapter;
    double global = 0.0;
};

// Max absolute change of effective gate values between two snapshots.
inline GateDrift gate_drift(const GateSnapshot& before, const GateSnapshot& after) {
    if (before.attn.size() != after.attn.size() || before.ffn.size() != after.ffn.size())
        throw ShapeError("gate snapshots come from different adapter stacks");
    GateDrift d;
    for (std::size_t a = 0; a < before.attn.size(); ++a) {
        if (before.attn[a].size() != after.attn[a].size() || before.ffn[a].size() != after.ffn[a].size())
            throw ShapeError("gate snapshots come from different adapter widths");
        double worst = 0.0;
        for (std::size_t i = 0; i < before.attn[a].size(); ++i)
            worst = std::max(worst, std::abs(after.attn[a][i] - before.attn[a][i]));
        for (std::size_t i = 0; i < before.ffn[a].size(); ++i)
            worst = std::max(worst, std::abs(after.ffn[a][i] - before.ffn[a][i]));
        d.per_adapter.push_back(worst);
        d.global = std::max(d.global, worst);
    }
    return d;
}

}  // namespace vidcap
