#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <filesystem>
#include <set>

#include "vidcap/grad_check.hpp"
#include "vidcap/model.hpp"

using namespace vidcap;

namespace {

// small enough for finite differences and 10k-seed generation sweeps
ModelConfig tiny_config(std::uint64_t seed = 3) {
    ModelConfig cfg;
    cfg.d = 16;
    cfg.lm_layers = 2;
    cfg.lm_heads = 2;
    cfg.patch = 16;  // 32x32 / 16 -> s = 4
    cfg.max_t = 2;
    cfg.seed = seed;
    return cfg;
}

Tensor scene_video(std::uint64_t k, const ModelConfig& cfg) {
    Rng rng = Rng::stream(777, "model-scene", k);
    return gen_video(random_scene(rng, cfg.max_t, cfg.frame_h, cfg.frame_w), cfg.max_t, cfg.frame_h, cfg.frame_w);
}

bool same_bits(const Tensor& a, const Tensor& b) {
    if (a.shape != b.shape) return false;
    for (std::size_t i = 0; i < a.data.size(); ++i)
        if (a.data[i] != b.data[i]) return false;
    return true;
}

}  // namespace

TEST_CASE("adapter placement rule: every other layer in the second half") {
    CHECK(default_adapter_layers(8) == std::vector<std::int64_t>{4, 6});
    CHECK(default_adapter_layers(24) == std::vector<std::int64_t>{12, 14, 16, 18, 20, 22});
    CHECK(default_adapter_layers(2) == std::vector<std::int64_t>{1});

    ModelConfig cfg;
    CHECK(cfg.resolved_adapter_layers() == std::vector<std::int64_t>{4, 6});

    cfg.adapter_layers = {8};
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg.adapter_layers = {-1};
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg.adapter_layers = {3, 5};
    CHECK_NOTHROW(cfg.validate());

    ModelConfig bad;
    bad.patch = 5;  // does not divide 32
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad = ModelConfig{};
    bad.lm_heads = 3;  // does not divide 128
    CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("same seed gives bit-identical initial parameters") {
    ModelConfig cfg = tiny_config(11);
    Model a = init_model(cfg);
    Model b = init_model(cfg);
    auto pa = a.named_params();
    auto pb = b.named_params();
    REQUIRE(pa.size() == pb.size());
    for (std::size_t i = 0; i < pa.size(); ++i) {
        CHECK(pa[i].first == pb[i].first);
        CHECK(same_bits(*pa[i].second, *pb[i].second));
    }

    Model c = init_model(tiny_config(12));
    bool any_diff = false;
    auto pc = c.named_params();
    for (std::size_t i = 0; i < pa.size(); ++i)
        if (!same_bits(*pa[i].second, *pc[i].second)) any_diff = true;
    CHECK(any_diff);
}

TEST_CASE("only adapter parameters are trainable") {
    Model m = init_model(tiny_config());
    const auto trainable = m.trainable_params();
    REQUIRE(!trainable.empty());
    for (const auto& [name, t] : trainable) {
        CHECK(name.rfind("adapter", 0) == 0);
        CHECK(t->requires_grad);
    }
    for (const auto& [name, t] : m.frozen_params()) {
        CHECK(name.rfind("adapter", 0) != 0);
        CHECK(!t->requires_grad);
    }
    // one adapter at layer 1 for the 2-layer tiny config
    CHECK(m.adapter_at == std::vector<std::int64_t>{1});
}

TEST_CASE("encode_video geometry") {
    ModelConfig cfg;  // default: 32x32, patch 8
    cfg.seed = 4;
    Model m = init_model(cfg);

    const Tensor video = scene_video(0, cfg);
    const Tensor feats = encode_video(m, video);
    REQUIRE(feats.shape == Shape{cfg.max_t, 16, cfg.d});

    // an image is a one-frame video
    Tensor image({1, 32, 32, 3},
                 std::vector<double>(video.data.begin(), video.data.begin() + 32 * 32 * 3));
    CHECK(encode_video(m, image).shape == Shape{1, 16, cfg.d});

    Tensor wrong = Tensor::zeros({2, 24, 32, 3});
    CHECK_THROWS_AS(encode_video(m, wrong), ShapeError);
}

TEST_CASE("identical frames differ only by the time position rows") {
    ModelConfig cfg = tiny_config();
    Model m = init_model(cfg);

    // static scene: every frame is the same raster
    SceneSpec spec{ShapeKind::square, ColorKind::red, MotionKind::none, 16, 16, 1};
    const Tensor video = gen_video(spec, cfg.max_t, cfg.frame_h, cfg.frame_w);
    for (std::int64_t i = 1; i < cfg.max_t; ++i)
        REQUIRE(std::equal(video.data.begin(), video.data.begin() + 32 * 32 * 3,
                           video.data.begin() + i * 32 * 32 * 3));

    const Tensor feats = encode_video(m, video);
    const Tensor frame = frame_of(video, 0);
    const Tensor base = encode_frame(m.encoder, frame, cfg.patch, static_cast<int>(cfg.lm_heads));
    const Tensor time_pos = sinusoidal_table(cfg.max_t, cfg.d);
    const std::int64_t s = base.shape[0], d = cfg.d;
    for (std::int64_t i = 0; i < cfg.max_t; ++i)
        for (std::int64_t j = 0; j < s; ++j)
            for (std::int64_t k = 0; k < d; ++k)
                CHECK(feats.data[static_cast<std::size_t>((i * s + j) * d + k)] == base.at(j, k) + time_pos.at(i, k));
}

TEST_CASE("untrained loss sits at the uniform baseline ln 64") {
    ModelConfig cfg;  // full default size
    cfg.seed = 21;
    Model m = init_model(cfg);
    const Tensor video = scene_video(1, cfg);
    const Tensor feats = encode_video(m, video);
    const CaptionTokens cap = CaptionTokens::from_text("a red square moving left");
    const double loss = caption_loss(m, {{cap, feats}});
    CHECK(loss == Catch::Approx(std::log(64.0)).margin(0.2));
}

TEST_CASE("zero gates make the loss video-independent and equal to the bare LM") {
    ModelConfig cfg = tiny_config(8);
    REQUIRE(cfg.gate_init == GateInitMode::zero);
    Model m = init_model(cfg);
    const CaptionTokens cap = CaptionTokens::from_text("a blue circle moving up");

    const Tensor va = encode_video(m, scene_video(2, cfg));
    const Tensor vb = encode_video(m, scene_video(3, cfg));
    REQUIRE(!same_bits(va, vb));

    const double la = caption_loss(m, {{cap, va}});
    const double lb = caption_loss(m, {{cap, vb}});
    CHECK(la == lb);
    CHECK(la == lm_text_loss(m, cap));

    // opening the gates breaks the independence
    Model open = init_model(cfg);
    for (auto& a : open.adapters) init_gates(a, GateInitMode::one);
    CHECK(caption_loss(open, {{cap, va}}) != caption_loss(open, {{cap, vb}}));
}

TEST_CASE("adapter gradients match finite differences") {
    ModelConfig cfg = tiny_config(5);
    cfg.gate_init = GateInitMode::one;  // open gates so both branches carry gradient
    Model m = init_model(cfg);
    const Tensor feats = encode_video(m, scene_video(4, cfg));
    const CaptionTokens cap = CaptionTokens::from_text("a green triangle moving down");

    auto params = m.trainable_params();
    for (auto& [n, t] : params) t->zero_grad();
    {
        Graph g;
        BoundModel b = bind_model(g, m);
        g.backward(sample_caption_loss(b, feats, cap));
    }
    const auto report = grad_check(
        params,
        [&]() {
            Graph g;
            BoundModel b = bind_model(g, m);
            return g.materialize(sample_caption_loss(b, feats, cap)).data[0];
        },
        1e-5);
    INFO("worst: " << report.entries[0].name << " " << report.max_rel_err);
    CHECK(report.within(1e-4));
}

TEST_CASE("frozen parameters receive no gradient from the caption loss") {
    ModelConfig cfg = tiny_config(6);
    Model m = init_model(cfg);
    for (auto& [n, t] : m.frozen_params()) t->set_requires_grad(true);  // watch them
    const Tensor feats = encode_video(m, scene_video(5, cfg));
    Graph g;
    BoundModel b = bind_model(g, m);
    g.backward(sample_caption_loss(b, feats, CaptionTokens::from_text("a red square")));
    for (auto& [n, t] : m.frozen_params()) {
        for (double gr : t->grad) CHECK(gr == 0.0);
        t->set_requires_grad(false);
    }
}

TEST_CASE("teacher-forced distributions are causal") {
    ModelConfig cfg = tiny_config(7);
    cfg.gate_init = GateInitMode::one;
    Model m = init_model(cfg);
    const Tensor feats = encode_video(m, scene_video(6, cfg));

    CaptionTokens cap = CaptionTokens::from_text("a yellow cross moving right");
    const auto base = token_nlls(m, feats, cap);

    // perturb input token at position j: contributions before j are untouched
    for (std::size_t j = 1; j + 1 < cap.ids.size(); ++j) {
        CaptionTokens perturbed = cap;
        perturbed.ids[j] = perturbed.ids[j] == 2 ? 3 : 2;  // swap a word, keep markers
        const auto changed = token_nlls(m, feats, perturbed);
        REQUIRE(changed.size() == base.size());
        for (std::size_t t = 0; t + 1 < j; ++t) CHECK(changed[t] == base[t]);
        CHECK(changed[j] != base[j]);  // it does listen to the perturbed prefix
    }
}

TEST_CASE("nucleus filter hand case and boundaries") {
    const std::vector<double> probs{0.5, 0.3, 0.15, 0.05};
    const auto f = nucleus_filter(probs, 0.9);
    REQUIRE(f.size() == 4);
    CHECK(f[0] == Catch::Approx(10.0 / 19.0).epsilon(1e-12));
    CHECK(f[1] == Catch::Approx(6.0 / 19.0).epsilon(1e-12));
    CHECK(f[2] == Catch::Approx(3.0 / 19.0).epsilon(1e-12));
    CHECK(f[3] == 0.0);

    // p = 1 keeps the full distribution
    const auto full = nucleus_filter(probs, 1.0);
    for (std::size_t i = 0; i < probs.size(); ++i) CHECK(full[i] == Catch::Approx(probs[i]).epsilon(1e-12));

    // tight p keeps only the mode
    const auto top1 = nucleus_filter(probs, 0.3);
    CHECK(top1[0] == 1.0);
    CHECK(top1[1] == 0.0);

    CHECK_THROWS_AS(nucleus_filter(probs, 0.0), ConfigError);
    CHECK_THROWS_AS(nucleus_filter(probs, 1.5), ConfigError);
    CHECK_THROWS_AS(nucleus_filter(probs, -0.1), ConfigError);
}

TEST_CASE("greedy decoding is deterministic") {
    ModelConfig cfg = tiny_config(9);
    cfg.gate_init = GateInitMode::one;
    Model m = init_model(cfg);
    const Tensor video = scene_video(7, cfg);
    GenerateConfig gen;
    gen.strategy = DecodeStrategy::greedy;
    const CaptionTokens a = generate(m, video, gen);
    const CaptionTokens b = generate(m, video, gen);
    CHECK(a.ids == b.ids);

    GenerateConfig bad;
    bad.strategy = DecodeStrategy::nucleus;
    bad.top_p = 0.0;
    CHECK_THROWS_AS(generate(m, video, bad), ConfigError);
    bad.top_p = 0.9;
    bad.max_len = 1;
    CHECK_THROWS_AS(generate(m, video, bad), ConfigError);
}

TEST_CASE("generation respects vocabulary and termination for 10000 seeds") {
    ModelConfig cfg = tiny_config(10);
    Model m = init_model(cfg);
    const Tensor video = scene_video(8, cfg);
    GenerateConfig gen;
    gen.strategy = DecodeStrategy::nucleus;
    gen.top_p = 0.9;
    gen.max_len = 8;

    std::set<std::vector<int>> distinct;
    for (int seed = 0; seed < 10000; ++seed) {
        gen.seed = static_cast<std::uint64_t>(seed);
        const CaptionTokens cap = generate(m, video, gen);
        REQUIRE(cap.ids.size() >= 2);
        REQUIRE(static_cast<std::int64_t>(cap.ids.size()) <= gen.max_len);
        REQUIRE(cap.ids.front() == Vocab::bos);
        REQUIRE(cap.ids.back() == Vocab::eos);
        for (std::size_t i = 0; i + 1 < cap.ids.size(); ++i) {
            REQUIRE(cap.ids[i] >= 0);
            REQUIRE(cap.ids[i] < 64);
            if (i > 0) REQUIRE(cap.ids[i] != Vocab::eos);
        }
        if (distinct.size() < 32) distinct.insert(cap.ids);
    }
    // sampling actually samples
    CHECK(distinct.size() > 4);
}

TEST_CASE("LM pre-training lowers text loss deterministically") {
    ModelConfig cfg = tiny_config(13);
    cfg.d = 32;
    Model m = init_model(cfg);
    const CaptionTokens probe = CaptionTokens::from_text("a red square moving left");
    const double before = lm_text_loss(m, probe);
    CHECK(before == Catch::Approx(std::log(64.0)).margin(0.35));

    LmPretrainConfig pre;
    pre.steps = 40;
    pre.batch = 8;
    const double final_loss = lm_pretrain(m, pre);
    CHECK(final_loss < 3.6);  // mixed caption/chatter text floor sits near ln 44 on the chatter half

    const double after = lm_text_loss(m, probe);
    CHECK(after < before - 0.5);  // caption-shaped text became much more likely

    // bit-identical across rebuilds
    Model m2 = init_model(cfg);
    lm_pretrain(m2, pre);
    for (std::size_t i = 0; i < m.lm.layers.size(); ++i) CHECK(same_bits(m.lm.layers[i].w1, m2.lm.layers[i].w1));
    CHECK(same_bits(m.lm.tok_emb, m2.lm.tok_emb));
    CHECK(same_bits(m.lm.w_out, m2.lm.w_out));
}

TEST_CASE("build_model caches the pre-trained LM") {
    const std::string dir = (std::filesystem::temp_directory_path() / "vidcap_lm_cache_test").string();
    std::filesystem::remove_all(dir);

    ModelConfig cfg = tiny_config(14);
    LmPretrainConfig pre;
    pre.steps = 6;
    pre.batch = 4;

    Model fresh = build_model(cfg, pre, dir);
    REQUIRE(std::filesystem::exists(dir));
    std::size_t files = 0;
    for (const auto& e : std::filesystem::directory_iterator(dir)) files += e.is_regular_file() ? 1 : 0;
    CHECK(files == 1);

    Model cached = build_model(cfg, pre, dir);  // hits the checkpoint
    auto pa = fresh.named_params();
    auto pb = cached.named_params();
    REQUIRE(pa.size() == pb.size());
    for (std::size_t i = 0; i < pa.size(); ++i) CHECK(same_bits(*pa[i].second, *pb[i].second));

    // a different seed builds (and caches) a different LM
    ModelConfig other = tiny_config(15);
    Model third = build_model(other, pre, dir);
    CHECK(!same_bits(third.lm.tok_emb, fresh.lm.tok_emb));
    std::filesystem::remove_all(dir);
}
