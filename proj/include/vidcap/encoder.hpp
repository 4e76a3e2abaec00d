#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "vidcap/attention.hpp"
#include "vidcap/errors.hpp"
#include "vidcap/graph.hpp"
#include "vidcap/rng.hpp"
#include "vidcap/tensor.hpp"

namespace vidcap {

// Classic sinusoidal position table [n, d]: even columns sine, odd cosine,
// geometric wavelengths from 2*pi up to 10000*2*pi.
inline Tensor sinusoidal_table(std::int64_t n, std::int64_t d) {
    Tensor out = Tensor::zeros({n, d});
    for (std::int64_t pos = 0; pos < n; ++pos) {
        for (std::int64_t i = 0; i < d; i += 2) {
            const double rate = std::pow(10000.0, -static_cast<double>(i) / static_cast<double>(d));
            const double angle = static_cast<double>(pos) * rate;
            out.at(pos, i) = std::sin(angle);
            if (i + 1 < d) out.at(pos, i + 1) = std::cos(angle);
        }
    }
    return out;
}

// One pre-norm transformer block: self-attention + GELU FFN with residuals.
// Shared by the frozen video encoder (bidirectional) and the language model
// (causal).
struct TransformerLayerParams {
    Tensor ln1_gain, ln1_bias;
    SelfAttentionParams attn;
    Tensor ln2_gain, ln2_bias;
    Tensor w1, b1, w2, b2;  // d -> 4d -> d

    void init(std::int64_t d, Rng& rng, double stddev = 0.02) {
        ln1_gain = Tensor::full({d}, 1.0);
        ln1_bias = Tensor::zeros({d});
        attn = SelfAttentionParams::init(d, rng);
        ln2_gain = Tensor::full({d}, 1.0);
        ln2_bias = Tensor::zeros({d});
        w1 = Tensor::randn({d, 4 * d}, rng, stddev);
        b1 = Tensor::zeros({4 * d});
        w2 = Tensor::randn({4 * d, d}, rng, stddev);
        b2 = Tensor::zeros({d});
    }

    std::vector<std::pair<std::string, Tensor*>> named(const std::string& prefix) {
        std::vector<std::pair<std::string, Tensor*>> out{{prefix + ".ln1.gain", &ln1_gain},
                                                         {prefix + ".ln1.bias", &ln1_bias}};
        for (auto& [n, t] : attn.named(prefix + ".attn")) out.emplace_back(n, t);
        const std::vector<std::pair<std::string, Tensor*>> rest{
            {prefix + ".ln2.gain", &ln2_gain}, {prefix + ".ln2.bias", &ln2_bias}, {prefix + ".ffn.w1", &w1},
            {prefix + ".ffn.b1", &b1},         {prefix + ".ffn.w2", &w2},         {prefix + ".ffn.b2", &b2}};
        out.insert(out.end(), rest.begin(), rest.end());
        return out;
    }
};

struct BoundTransformerLayer {
    Value ln1_gain, ln1_bias;
    BoundSelfAttention attn;
    Value ln2_gain, ln2_bias, w1, b1, w2, b2;
};

namespace detail {

template <typename Bind>
inline BoundTransformerLayer bind_layer(TransformerLayerParams& p, Bind&& bind) {
    BoundTransformerLayer b;
    b.ln1_gain = bind(p.ln1_gain);
    b.ln1_bias = bind(p.ln1_bias);
    b.attn = {bind(p.attn.wq), bind(p.attn.bq), bind(p.attn.wk), bind(p.attn.bk),
              bind(p.attn.wv), bind(p.attn.bv), bind(p.attn.wo), bind(p.attn.bo)};
    b.ln2_gain = bind(p.ln2_gain);
    b.ln2_bias = bind(p.ln2_bias);
    b.w1 = bind(p.w1);
    b.b1 = bind(p.b1);
    b.w2 = bind(p.w2);
    b.b2 = bind(p.b2);
    return b;
}

}  // namespace detail

// Binds either as trainable leaves (gradients flow into the tensors) or as
// frozen constants (backward skips weight gradients entirely).
inline BoundTransformerLayer bind_layer(Graph& g, TransformerLayerParams& p, bool trainable) {
    if (trainable) return detail::bind_layer(p, [&g](Tensor& t) { return g.leaf(t); });
    return detail::bind_layer(p, [&g](Tensor& t) { return g.constant(t); });
}

inline Value transformer_layer(Value h, const BoundTransformerLayer& L, int heads, bool causal) {
    Value u = add(h, self_attention(layer_norm(h, L.ln1_gain, L.ln1_bias), L.attn, heads, causal));
    Value pre = layer_norm(u, L.ln2_gain, L.ln2_bias);
    Value f = add_bias(matmul(gelu(add_bias(matmul(pre, L.w1), L.b1)), L.w2), L.b2);
    return add(u, f);
}

// ---------------------------------------------------------------------------
// Frozen video encoder: linear patch embedding + sinusoidal space positions,
// one bidirectional transformer layer per frame, then sinusoidal time
// positions added afterwards (so identical frames give identical per-frame
// features up to exactly the time position rows).
// ---------------------------------------------------------------------------

struct EncoderParams {
    Tensor patch_w;  // [p*p*c, d]
    Tensor patch_b;  // [d]
    TransformerLayerParams layer;

    void init(std::int64_t patch_dim, std::int64_t d, Rng& rng, double stddev = 0.02) {
        patch_w = Tensor::randn({patch_dim, d}, rng, stddev);
        patch_b = Tensor::zeros({d});
        layer.init(d, rng, stddev);
    }

    std::vector<std::pair<std::string, Tensor*>> named(const std::string& prefix) {
        std::vector<std::pair<std::string, Tensor*>> out{{prefix + ".patch.w", &patch_w},
                                                         {prefix + ".patch.b", &patch_b}};
        for (auto& [n, t] : layer.named(prefix + ".layer")) out.emplace_back(n, t);
        return out;
    }
};

// Rows are flattened p x p x c patches in raster order: [s, p*p*c].
inline Tensor extract_patches(const Tensor& frame, std::int64_t patch) {
    if (frame.rank() != 3) throw ShapeError("expected [h,w,c] frame, got " + shape_str(frame.shape));
    const std::int64_t h = frame.shape[0], w = frame.shape[1], c = frame.shape[2];
    if (patch < 1 || h % patch != 0 || w % patch != 0)
        throw ShapeError("patch size " + std::to_string(patch) + " does not divide " + shape_str(frame.shape));
    const std::int64_t gh = h / patch, gw = w / patch;
    Tensor out = Tensor::zeros({gh * gw, patch * patch * c});
    for (std::int64_t py = 0; py < gh; ++py)
        for (std::int64_t px = 0; px < gw; ++px) {
            const std::int64_t row = py * gw + px;
            std::int64_t col = 0;
            for (std::int64_t y = py * patch; y < (py + 1) * patch; ++y)
                for (std::int64_t x = px * patch; x < (px + 1) * patch; ++x)
                    for (std::int64_t k = 0; k < c; ++k)
                        out.at(row, col++) = frame.data[static_cast<std::size_t>((y * w + x) * c + k)];
        }
    return out;
}

// Per-frame features [s, d] before time positions are applied.
inline Tensor encode_frame(EncoderParams& enc, const Tensor& frame, std::int64_t patch, int heads) {
    Graph g;
    Value tokens = g.constant(extract_patches(frame, patch));
    const std::int64_t s = tokens.shape()[0], d = enc.patch_w.shape[1];
    Value h = add_bias(matmul(tokens, g.constant(enc.patch_w)), g.constant(enc.patch_b));
    h = add(h, g.constant(sinusoidal_table(s, d)));
    h = transformer_layer(h, bind_layer(g, enc.layer, false), heads, false);
    return g.materialize(h);
}

// [t,h,w,c] -> [t,s,d]; t=1 single frames are ordinary one-frame videos.
inline Tensor encode_video(EncoderParams& enc, const Tensor& video, std::int64_t patch, int heads) {
    if (video.rank() != 4) throw ShapeError("expected [t,h,w,c] video, got " + shape_str(video.shape));
    const std::int64_t t = video.shape[0], fh = video.shape[1], fw = video.shape[2], fc = video.shape[3];
    const std::int64_t d = enc.patch_w.shape[1];
    const std::int64_t frame_numel = fh * fw * fc;
    const Tensor time_pos = sinusoidal_table(t, d);
    Tensor out;
    std::int64_t s = 0;
    for (std::int64_t i = 0; i < t; ++i) {
        Tensor frame({fh, fw, fc},
                     std::vector<double>(video.data.begin() + static_cast<std::ptrdiff_t>(i * frame_numel),
                                         video.data.begin() + static_cast<std::ptrdiff_t>((i + 1) * frame_numel)));
        Tensor feats = encode_frame(enc, frame, patch, heads);
        if (i == 0) {
            s = feats.shape[0];
            out = Tensor::zeros({t, s, d});
        }
        for (std::int64_t j = 0; j < s; ++j)
            for (std::int64_t k = 0; k < d; ++k)
                out.data[static_cast<std::size_t>((i * s + j) * d + k)] = feats.at(j, k) + time_pos.at(i, k);
    }
    return out;
}

}  // namespace vidcap
