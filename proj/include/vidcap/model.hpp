#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include "vidcap/adapter.hpp"
#include "vidcap/checkpoint.hpp"
#include "vidcap/encoder.hpp"
#include "vidcap/errors.hpp"
#include "vidcap/optimizer.hpp"
#include "vidcap/synth.hpp"
#include "vidcap/vocab.hpp"

namespace vidcap {

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

// Adapters go at every other layer in the second half of the LM stack.
inline std::vector<std::int64_t> default_adapter_layers(std::int64_t lm_layers) {
    std::vector<std::int64_t> out;
    for (std::int64_t i = lm_layers / 2; i < lm_layers; i += 2) out.push_back(i);
    return out;
}

struct ModelConfig {
    std::int64_t vocab_size = 64;
    std::int64_t d = 128;
    std::int64_t lm_layers = 8;
    std::int64_t lm_heads = 4;
    std::vector<std::int64_t> adapter_layers;  // empty -> default placement
    std::int64_t frame_h = 32, frame_w = 32, frame_c = 3;
    std::int64_t patch = 8;
    std::int64_t max_t = 8;
    std::int64_t max_caption = 12;
    bool scalar_gates = false;
    GateInitMode gate_init = GateInitMode::zero;
    std::uint64_t seed = 0;

    std::vector<std::int64_t> resolved_adapter_layers() const {
        return adapter_layers.empty() ? default_adapter_layers(lm_layers) : adapter_layers;
    }

    void validate() const {
        if (vocab_size < 4) throw ConfigError("vocabulary too small for markers plus content");
        if (d < 2 || lm_heads < 1 || d % lm_heads != 0) throw ConfigError("hidden size must divide into heads");
        if (lm_layers < 1) throw ConfigError("need at least one LM layer");
        if (patch < 1 || frame_h % patch != 0 || frame_w % patch != 0)
            throw ConfigError("patch size must divide frame dims");
        if (max_t < 1) throw ConfigError("need at least one frame");
        if (max_caption < 3) throw ConfigError("caption budget must fit markers plus one word");
        for (std::int64_t a : resolved_adapter_layers())
            if (a < 0 || a >= lm_layers) throw ConfigError("adapter index " + std::to_string(a) + " out of range");
    }

    std::int64_t tokens_per_frame() const { return (frame_h / patch) * (frame_w / patch); }
};

inline nlohmann::json to_json(const ModelConfig& cfg) {
    return {{"vocab_size", cfg.vocab_size},
            {"d", cfg.d},
            {"lm_layers", cfg.lm_layers},
            {"lm_heads", cfg.lm_heads},
            {"adapter_layers", cfg.adapter_layers},
            {"frame_h", cfg.frame_h},
            {"frame_w", cfg.frame_w},
            {"frame_c", cfg.frame_c},
            {"patch", cfg.patch},
            {"max_t", cfg.max_t},
            {"max_caption", cfg.max_caption},
            {"scalar_gates", cfg.scalar_gates},
            {"gate_init", cfg.gate_init == GateInitMode::one ? 1 : 0},
            {"seed", cfg.seed}};
}

inline ModelConfig model_config_from_json(const nlohmann::json& j) {
    ModelConfig cfg;
    cfg.vocab_size = j.at("vocab_size").get<std::int64_t>();
    cfg.d = j.at("d").get<std::int64_t>();
    cfg.lm_layers = j.at("lm_layers").get<std::int64_t>();
    cfg.lm_heads = j.at("lm_heads").get<std::int64_t>();
    cfg.adapter_layers = j.at("adapter_layers").get<std::vector<std::int64_t>>();
    cfg.frame_h = j.at("frame_h").get<std::int64_t>();
    cfg.frame_w = j.at("frame_w").get<std::int64_t>();
    cfg.frame_c = j.at("frame_c").get<std::int64_t>();
    cfg.patch = j.at("patch").get<std::int64_t>();
    cfg.max_t = j.at("max_t").get<std::int64_t>();
    cfg.max_caption = j.at("max_caption").get<std::int64_t>();
    cfg.scalar_gates = j.at("scalar_gates").get<bool>();
    cfg.gate_init = j.at("gate_init").get<int>() == 1 ? GateInitMode::one : GateInitMode::zero;
    cfg.seed = j.at("seed").get<std::uint64_t>();
    cfg.validate();
    return cfg;
}

// ---------------------------------------------------------------------------
// Parameters
// ---------------------------------------------------------------------------

struct LmParams {
    Tensor tok_emb;  // [V, d]
    std::vector<TransformerLayerParams> layers;
    Tensor lnf_gain, lnf_bias;
    Tensor w_out, b_out;  // [d, V], [V]

    void init(const ModelConfig& cfg, Rng& rng) {
        tok_emb = Tensor::randn({cfg.vocab_size, cfg.d}, rng, 0.02);
        layers.assign(static_cast<std::size_t>(cfg.lm_layers), {});
        for (auto& l : layers) l.init(cfg.d, rng);
        lnf_gain = Tensor::full({cfg.d}, 1.0);
        lnf_bias = Tensor::zeros({cfg.d});
        // small unembedding keeps untrained logits near uniform
        w_out = Tensor::randn({cfg.d, cfg.vocab_size}, rng, 0.02);
        b_out = Tensor::zeros({cfg.vocab_size});
    }

    std::vector<std::pair<std::string, Tensor*>> named(const std::string& prefix) {
        std::vector<std::pair<std::string, Tensor*>> out{{prefix + ".tok_emb", &tok_emb}};
        for (std::size_t i = 0; i < layers.size(); ++i)
            for (auto& [n, t] : layers[i].named(prefix + ".layer" + std::to_string(i))) out.emplace_back(n, t);
        const std::vector<std::pair<std::string, Tensor*>> rest{{prefix + ".lnf.gain", &lnf_gain},
                                                                {prefix + ".lnf.bias", &lnf_bias},
                                                                {prefix + ".out.w", &w_out},
                                                                {prefix + ".out.b", &b_out}};
        out.insert(out.end(), rest.begin(), rest.end());
        return out;
    }
};

struct Model {
    ModelConfig cfg;
    EncoderParams encoder;
    LmParams lm;
    std::vector<std::int64_t> adapter_at;
    std::vector<GatedAdapter> adapters;

    // The freeze contract: only adapter tensors are ever handed to an
    // optimizer.
    std::vector<std::pair<std::string, Tensor*>> trainable_params() {
        std::vector<std::pair<std::string, Tensor*>> out;
        for (std::size_t i = 0; i < adapters.size(); ++i)
            for (auto& [n, t] : adapters[i].named("adapter" + std::to_string(adapter_at[i]))) out.emplace_back(n, t);
        return out;
    }

    std::vector<std::pair<std::string, Tensor*>> frozen_params() {
        auto out = encoder.named("encoder");
        for (auto& [n, t] : lm.named("lm")) out.emplace_back(n, t);
        return out;
    }

    std::vector<std::pair<std::string, Tensor*>> named_params() {
        auto out = frozen_params();
        for (auto& [n, t] : trainable_params()) out.emplace_back(n, t);
        return out;
    }
};

inline Model init_model(const ModelConfig& cfg) {
    cfg.validate();
    Model m;
    m.cfg = cfg;
    Rng rng = Rng::stream(cfg.seed, "model-init");
    m.encoder.init(cfg.patch * cfg.patch * cfg.frame_c, cfg.d, rng);
    m.lm.init(cfg, rng);
    m.adapter_at = cfg.resolved_adapter_layers();
    for (std::size_t i = 0; i < m.adapter_at.size(); ++i) {
        m.adapters.push_back(GatedAdapter::init(cfg.d, rng, cfg.scalar_gates));
        init_gates(m.adapters.back(), cfg.gate_init);
    }
    for (auto& [n, t] : m.trainable_params()) t->set_requires_grad(true);
    return m;
}

// ---------------------------------------------------------------------------
// Forward graphs
// ---------------------------------------------------------------------------

struct BoundModel {
    Graph* g = nullptr;
    const ModelConfig* cfg = nullptr;
    Value tok_emb, text_pos;
    std::vector<BoundTransformerLayer> layers;
    Value lnf_gain, lnf_bias, w_out, b_out;
    std::vector<std::int64_t> adapter_at;
    std::vector<BoundAdapter> adapters;
};

// LM and encoder enter the graph as constants (no weight gradients are even
// computed); adapters enter as leaves so gradients land in their tensors.
inline BoundModel bind_model(Graph& g, Model& m) {
    BoundModel b;
    b.g = &g;
    b.cfg = &m.cfg;
    b.tok_emb = g.constant(m.lm.tok_emb);
    b.text_pos = g.constant(sinusoidal_table(m.cfg.max_caption, m.cfg.d));
    for (auto& l : m.lm.layers) b.layers.push_back(bind_layer(g, l, false));
    b.lnf_gain = g.constant(m.lm.lnf_gain);
    b.lnf_bias = g.constant(m.lm.lnf_bias);
    b.w_out = g.constant(m.lm.w_out);
    b.b_out = g.constant(m.lm.b_out);
    b.adapter_at = m.adapter_at;
    for (auto& a : m.adapters) b.adapters.push_back(bind_params(g, a));
    return b;
}

// Causal hidden states for a token prefix, optionally conditioned on video
// features through the adapters. Without video the adapters are skipped
// entirely: that is the bare frozen LM.
inline Value lm_hidden(const BoundModel& b, const std::vector<int>& inputs, const Value* video) {
    const auto n = static_cast<std::int64_t>(inputs.size());
    if (n < 1) throw DataError("empty token prefix");
    if (n > b.cfg->max_caption) throw DataError("prefix longer than the position table");
    Value h = embedding(b.tok_emb, inputs);
    h = add(h, slice(b.text_pos, 0, 0, n));
    for (std::size_t i = 0; i < b.layers.size(); ++i) {
        if (video != nullptr) {
            const auto it = std::find(b.adapter_at.begin(), b.adapter_at.end(), static_cast<std::int64_t>(i));
            if (it != b.adapter_at.end())
                h = adapter_forward(h, *video, b.adapters[static_cast<std::size_t>(it - b.adapter_at.begin())]);
        }
        h = transformer_layer(h, b.layers[i], static_cast<int>(b.cfg->lm_heads), true);
    }
    return layer_norm(h, b.lnf_gain, b.lnf_bias);
}

inline Value lm_logits(const BoundModel& b, const std::vector<int>& inputs, const Value* video) {
    return add_bias(matmul(lm_hidden(b, inputs, video), b.w_out), b.b_out);
}

// Mean next-token NLL for one caption given the full video. `features` is
// the [t,s,d] output of encode_video.
inline Value sample_caption_loss(const BoundModel& b, const Tensor& features, const CaptionTokens& tokens) {
    tokens.validate(static_cast<int>(b.cfg->vocab_size));
    Value video = b.g->constant(features);
    std::vector<int> inputs(tokens.ids.begin(), tokens.ids.end() - 1);
    std::vector<int> targets(tokens.ids.begin() + 1, tokens.ids.end());
    return cross_entropy(lm_logits(b, inputs, &video), targets);
}

inline Tensor encode_video(Model& m, const Tensor& video) {
    if (video.rank() != 4 || video.shape[1] != m.cfg.frame_h || video.shape[2] != m.cfg.frame_w ||
        video.shape[3] != m.cfg.frame_c)
        throw ShapeError("expected [t," + std::to_string(m.cfg.frame_h) + "," + std::to_string(m.cfg.frame_w) + "," +
                         std::to_string(m.cfg.frame_c) + "] video, got " + shape_str(video.shape));
    return encode_video(m.encoder, video, m.cfg.patch, static_cast<int>(m.cfg.lm_heads));
}

// Token-weighted mean NLL over a batch of (caption, encoded video) pairs.
inline double caption_loss(Model& m, const std::vector<std::pair<CaptionTokens, Tensor>>& batch) {
    if (batch.empty()) throw DataError("empty batch");
    double total = 0.0;
    std::int64_t tokens = 0;
    for (const auto& [cap, feats] : batch) {
        Graph g;
        BoundModel b = bind_model(g, m);
        Value loss = sample_caption_loss(b, feats, cap);
        total += g.materialize(loss).data[0] * static_cast<double>(cap.targets());
        tokens += cap.targets();
    }
    return total / static_cast<double>(tokens);
}

// Mean NLL of a caption under the bare frozen LM (no video, no adapters).
inline double lm_text_loss(Model& m, const CaptionTokens& tokens) {
    tokens.validate(static_cast<int>(m.cfg.vocab_size));
    Graph g;
    BoundModel b = bind_model(g, m);
    std::vector<int> inputs(tokens.ids.begin(), tokens.ids.end() - 1);
    std::vector<int> targets(tokens.ids.begin() + 1, tokens.ids.end());
    return g.materialize(cross_entropy(lm_logits(b, inputs, nullptr), targets)).data[0];
}

// ---------------------------------------------------------------------------
// Teacher-forced inspection
// ---------------------------------------------------------------------------

namespace detail {

inline std::vector<double> softmax_row(const Tensor& logits, std::int64_t row) {
    const std::int64_t v = logits.shape[1];
    double mx = -std::numeric_limits<double>::infinity();
    for (std::int64_t j = 0; j < v; ++j) mx = std::max(mx, logits.at(row, j));
    std::vector<double> p(static_cast<std::size_t>(v));
    double z = 0.0;
    for (std::int64_t j = 0; j < v; ++j) z += (p[static_cast<std::size_t>(j)] = std::exp(logits.at(row, j) - mx));
    for (double& x : p) x /= z;
    return p;
}

}  // namespace detail

inline Tensor caption_logits(Model& m, const Tensor& features, const std::vector<int>& inputs) {
    Graph g;
    BoundModel b = bind_model(g, m);
    Value video = g.constant(features);
    return g.materialize(lm_logits(b, inputs, &video));
}

// Per-position NLL of each next token; position j depends only on tokens
// 0..j of the input.
inline std::vector<double> token_nlls(Model& m, const Tensor& features, const CaptionTokens& tokens) {
    tokens.validate(static_cast<int>(m.cfg.vocab_size));
    std::vector<int> inputs(tokens.ids.begin(), tokens.ids.end() - 1);
    const Tensor logits = caption_logits(m, features, inputs);
    std::vector<double> out;
    for (std::size_t j = 0; j + 1 < tokens.ids.size(); ++j) {
        const auto p = detail::softmax_row(logits, static_cast<std::int64_t>(j));
        out.push_back(-std::log(p[static_cast<std::size_t>(tokens.ids[j + 1])]));
    }
    return out;
}

// Argmax next-token prediction at every position (ties to the lowest id).
inline std::vector<int> teacher_forced_predictions(Model& m, const Tensor& features, const CaptionTokens& tokens) {
    tokens.validate(static_cast<int>(m.cfg.vocab_size));
    std::vector<int> inputs(tokens.ids.begin(), tokens.ids.end() - 1);
    const Tensor logits = caption_logits(m, features, inputs);
    std::vector<int> out;
    for (std::int64_t j = 0; j < logits.shape[0]; ++j) {
        std::int64_t best = 0;
        for (std::int64_t v = 1; v < logits.shape[1]; ++v)
            if (logits.at(j, v) > logits.at(j, best)) best = v;
        out.push_back(static_cast<int>(best));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Generation
// ---------------------------------------------------------------------------

// Keeps the smallest prefix of the probability ranking whose mass reaches p
// and renormalizes it; everything else gets probability zero. Ties in the
// ranking break towards smaller ids.
inline std::vector<double> nucleus_filter(const std::vector<double>& probs, double p) {
    if (!(p > 0.0 && p <= 1.0)) throw ConfigError("top-p must lie in (0, 1]");
    std::vector<std::size_t> order(probs.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return probs[a] > probs[b]; });
    std::vector<double> out(probs.size(), 0.0);
    double cum = 0.0;
    for (std::size_t idx : order) {
        out[idx] = probs[idx];
        cum += probs[idx];
        if (cum >= p - 1e-12) break;
    }
    for (double& x : out) x /= cum;
    return out;
}

enum class DecodeStrategy { greedy, nucleus };

struct GenerateConfig {
    DecodeStrategy strategy = DecodeStrategy::greedy;
    double top_p = 0.9;
    std::int64_t max_len = 12;  // total tokens including both markers
    std::uint64_t seed = 0;
};

inline CaptionTokens generate(Model& m, const Tensor& video, const GenerateConfig& gen) {
    if (gen.strategy == DecodeStrategy::nucleus && !(gen.top_p > 0.0 && gen.top_p <= 1.0))
        throw ConfigError("top-p must lie in (0, 1]");
    if (gen.max_len < 2 || gen.max_len > m.cfg.max_caption)
        throw ConfigError("max_len must lie in [2, max caption length]");
    const Tensor features = encode_video(m, video);
    Rng rng = Rng::stream(gen.seed, "decode");
    CaptionTokens cap;
    cap.ids.push_back(Vocab::bos);
    // one slot stays reserved for the end marker
    while (static_cast<std::int64_t>(cap.ids.size()) + 1 < gen.max_len) {
        const Tensor logits = caption_logits(m, features, cap.ids);
        const auto probs = detail::softmax_row(logits, logits.shape[0] - 1);
        int next = 0;
        if (gen.strategy == DecodeStrategy::greedy) {
            for (std::size_t v = 1; v < probs.size(); ++v)
                if (probs[v] > probs[static_cast<std::size_t>(next)]) next = static_cast<int>(v);
        } else {
            const auto filtered = nucleus_filter(probs, gen.top_p);
            const double u = rng.uniform();
            double cum = 0.0;
            next = static_cast<int>(filtered.size()) - 1;
            for (std::size_t v = 0; v < filtered.size(); ++v) {
                cum += filtered[v];
                if (u < cum) {
                    next = static_cast<int>(v);
                    break;
                }
            }
        }
        cap.ids.push_back(next);
        if (next == Vocab::eos) break;
    }
    if (cap.ids.back() != Vocab::eos) cap.ids.push_back(Vocab::eos);
    cap.validate(static_cast<int>(m.cfg.vocab_size));
    return cap;
}

// ---------------------------------------------------------------------------
// LM pre-training (phase of build_model; afterwards the LM is frozen)
// ---------------------------------------------------------------------------

struct LmPretrainConfig {
    std::int64_t steps = 300;
    std::int64_t batch = 16;
    std::int64_t corpus_size = 50000;  // distinct synthetic sentences
    double lr = 2e-3;
};

// Sentence k of the pre-training pool: either scene-description text or
// off-topic chatter, mirroring what downstream captions look like.
inline std::string lm_pretrain_sentence(const ModelConfig& cfg, std::int64_t k) {
    Rng rng = Rng::stream(cfg.seed, "lm-sentence", static_cast<std::uint64_t>(k));
    if (rng.bernoulli(0.5)) return chatter_sentence(rng);
    return gt_caption(random_scene(rng, cfg.max_t, cfg.frame_h, cfg.frame_w));
}

// Trains the LM alone on synthetic caption text. Returns the final
// training loss (token-weighted mean NLL).
inline double lm_pretrain(Model& m, const LmPretrainConfig& pre) {
    auto params = m.lm.named("lm");
    for (auto& [n, t] : params) t->set_requires_grad(true);
    AdamConfig acfg;
    acfg.lr = pre.lr;
    AdamState state = AdamState::init(params, acfg);
    double last = 0.0;
    for (std::int64_t step = 0; step < pre.steps; ++step) {
        Rng order = Rng::stream(m.cfg.seed, "lm-order", static_cast<std::uint64_t>(step));
        std::vector<CaptionTokens> batch;
        std::int64_t total_targets = 0;
        for (std::int64_t j = 0; j < pre.batch; ++j) {
            batch.push_back(CaptionTokens::from_text(lm_pretrain_sentence(m.cfg, order.uniform_int(pre.corpus_size))));
            total_targets += batch.back().targets();
        }
        Graph g;
        BoundModel b;
        b.g = &g;
        b.cfg = &m.cfg;
        b.tok_emb = g.leaf(m.lm.tok_emb);
        b.text_pos = g.constant(sinusoidal_table(m.cfg.max_caption, m.cfg.d));
        for (auto& l : m.lm.layers) b.layers.push_back(bind_layer(g, l, true));
        b.lnf_gain = g.leaf(m.lm.lnf_gain);
        b.lnf_bias = g.leaf(m.lm.lnf_bias);
        b.w_out = g.leaf(m.lm.w_out);
        b.b_out = g.leaf(m.lm.b_out);
        Value total{nullptr, -1};
        for (const auto& cap : batch) {
            std::vector<int> inputs(cap.ids.begin(), cap.ids.end() - 1);
            std::vector<int> targets(cap.ids.begin() + 1, cap.ids.end());
            Value loss = cross_entropy(lm_logits(b, inputs, nullptr), targets);
            Value weighted = scale(loss, static_cast<double>(cap.targets()) / static_cast<double>(total_targets));
            total = total.valid() ? add(total, weighted) : weighted;
        }
        for (auto& [n, t] : params) t->zero_grad();
        g.backward(total);
        if (!adam_step(params, state)) throw DivergenceError("non-finite gradient during LM pre-training");
        last = g.materialize(total).data[0];
    }
    for (auto& [n, t] : params) t->set_requires_grad(false);
    return last;
}

namespace detail {

inline std::string lm_cache_key(const ModelConfig& cfg, const LmPretrainConfig& pre) {
    std::string s = "v=" + std::to_string(cfg.vocab_size) + ",d=" + std::to_string(cfg.d) +
                    ",l=" + std::to_string(cfg.lm_layers) + ",h=" + std::to_string(cfg.lm_heads) +
                    ",c=" + std::to_string(cfg.max_caption) + ",t=" + std::to_string(cfg.max_t) +
                    ",fh=" + std::to_string(cfg.frame_h) + ",fw=" + std::to_string(cfg.frame_w) +
                    ",steps=" + std::to_string(pre.steps) + ",batch=" + std::to_string(pre.batch) +
                    ",corpus=" + std::to_string(pre.corpus_size) + ",lr=" + std::to_string(pre.lr) +
                    ",seed=" + std::to_string(cfg.seed);
    return s;
}

}  // namespace detail

// Full model construction: random init, brief LM pre-training on synthetic
// text, then the backbone stays frozen and only adapters remain trainable.
// With a cache directory, the pre-trained LM weights round trip through a
// checkpoint keyed by config+seed, so repeated builds cost one load.
inline Model build_model(const ModelConfig& cfg, const LmPretrainConfig& pre = {}, const std::string& cache_dir = "") {
    Model m = init_model(cfg);
    std::string cache_path;
    if (!cache_dir.empty()) {
        const std::string key = detail::lm_cache_key(cfg, pre);
        char hex[17];
        std::snprintf(hex, sizeof hex, "%016llx", static_cast<unsigned long long>(fnv1a64(key)));
        cache_path = (std::filesystem::path(cache_dir) / ("lm_" + std::string(hex) + ".ckpt")).string();
        if (std::filesystem::exists(cache_path)) {
            const CheckpointData data = load_checkpoint(cache_path);
            for (auto& [name, tensor] : m.lm.named("lm")) {
                const Tensor* saved = data.find(name);
                if (saved == nullptr || saved->shape != tensor->shape)
                    throw DataError("LM cache " + cache_path + " does not match the requested config");
                tensor->data = saved->data;
            }
            return m;
        }
    }
    lm_pretrain(m, pre);
    if (!cache_path.empty()) {
        CheckpointData data;
        data.header = {{"kind", "lm-pretrain"}, {"key", detail::lm_cache_key(cfg, pre)}};
        for (auto& [name, tensor] : m.lm.named("lm")) data.arrays.emplace_back(name, *tensor);
        std::filesystem::create_directories(cache_dir);
        save_checkpoint(data, cache_path);
    }
    return m;
}

}  // namespace vidcap
