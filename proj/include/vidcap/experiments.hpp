#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "vidcap/eval.hpp"
#include "vidcap/trainer.hpp"

namespace vidcap {

// ---------------------------------------------------------------------------
// Scripted comparisons. Every experiment trains small captioners under paired
// conditions (same seeds, same corpora) and reports per-seed metric deltas
// with their standard error, so a direction can be claimed — or honestly
// refused — from three seeds.
// ---------------------------------------------------------------------------

struct ExperimentConfig {
    ModelConfig model;          // shared captioner geometry; seed is overridden per run
    LmPretrainConfig lm;        // text warm-up, disk-cached per seed
    std::string cache_dir;      // where LM warm-up checkpoints live ("" = no cache)
    std::uint64_t base_seed = 101;
    int seeds = 3;
    std::int64_t pretrain_clips = 512;
    std::int64_t finetune_clips = 24;
    std::int64_t eval_clips = 64;
    std::int64_t pretrain_steps = 2000;   // grounding only generalizes past ~1k steps
    std::int64_t finetune_steps = 60;     // short: small corpus, preserves pretrained grounding
    double pretrain_lr = 3e-3;
    double finetune_lr = 2e-3;
    std::uint64_t corpus_seed = 1001;  // corpora are fixed across arms and run seeds

    std::uint64_t run_seed(int k) const { return base_seed + static_cast<std::uint64_t>(k); }
};

inline ExperimentConfig default_experiment_config() {
    ExperimentConfig ec;
    ec.model.d = 32;
    ec.model.lm_layers = 4;
    ec.model.lm_heads = 4;
    ec.model.adapter_layers = {1, 2, 3};
    ec.model.patch = 8;   // 16 spatial tokens per 32x32 frame
    ec.model.max_t = 4;
    ec.lm.steps = 300;
    ec.lm.batch = 16;
    ec.lm.corpus_size = 4096;
    ec.lm.lr = 2e-3;
    return ec;
}

// One trained-and-evaluated condition at one seed.
struct ArmRun {
    std::string label;
    std::uint64_t seed = 0;
    EvalResult eval;
    GateDrift pretrain_drift;
    GateDrift finetune_drift;
    bool diverged = false;
    std::vector<double> finetune_losses;
};

// What a condition does before the shared fine-tune/eval tail.
struct ArmSpec {
    std::string label;
    bool pretrain = false;
    CorpusMode pretrain_mode = CorpusMode::pseudo;
    double p_image = 0.0;  // 0 = video-only pretraining, 1 = image-only
    GateInitMode gate_init = GateInitMode::zero;
};

namespace experiment_detail {

inline TrainConfig phase_config(const ExperimentConfig& ec, const std::string& phase, std::uint64_t seed,
                                std::int64_t steps, double p_image) {
    TrainConfig tc;
    tc.phase = phase;
    tc.steps = steps;
    tc.adam.lr = phase == "pretrain" ? ec.pretrain_lr : ec.finetune_lr;
    tc.mixture.p_image = p_image;
    tc.mixture.image_batch = 16;
    tc.mixture.video_batch = 8;
    tc.mixture.workers = 1;
    tc.mixture.seed = mix_seed(seed, fnv1a64(phase));
    return tc;
}

}  // namespace experiment_detail

// Train one condition end to end: optional pretraining phase on weak labels,
// then ground-truth fine-tuning, then held-out evaluation.
inline ArmRun run_arm(const ExperimentConfig& ec, const ArmSpec& arm, std::uint64_t seed) {
    using experiment_detail::phase_config;
    ModelConfig mc = ec.model;
    mc.seed = seed;  // paired across arms: same seed, same starting model
    Model m = build_model(mc, ec.lm, ec.cache_dir);
    for (auto& a : m.adapters) init_gates(a, arm.gate_init);

    ArmRun run;
    run.label = arm.label;
    run.seed = seed;

    if (arm.pretrain) {
        TrainSet videos, images;
        if (arm.p_image < 1.0) {
            const auto recs = gen_corpus(ec.pretrain_clips, Split::pretrain, arm.pretrain_mode, ec.corpus_seed,
                                         mc.max_t, mc.frame_h, mc.frame_w);
            videos = build_train_set(m, recs);
        }
        if (arm.p_image > 0.0) {
            const auto recs = gen_corpus(ec.pretrain_clips, Split::pretrain, CorpusMode::image, ec.corpus_seed + 1,
                                         mc.max_t, mc.frame_h, mc.frame_w);
            images = build_train_set(m, recs);
        }
        TrainConfig tc = phase_config(ec, "pretrain", seed, ec.pretrain_steps, arm.p_image);
        Trainer trainer(m, std::move(images), std::move(videos), tc);
        const TrainResult r = trainer.run();
        run.pretrain_drift = r.drift;
        run.diverged = run.diverged || r.diverged;
    }

    {
        const auto recs = gen_corpus(ec.finetune_clips, Split::finetune, CorpusMode::gt, ec.corpus_seed + 2, mc.max_t,
                                     mc.frame_h, mc.frame_w);
        TrainConfig tc = phase_config(ec, "finetune", seed, ec.finetune_steps, 0.0);
        Trainer trainer(m, TrainSet{}, build_train_set(m, recs), tc);
        const TrainResult r = trainer.run();
        run.finetune_drift = r.drift;
        run.finetune_losses = r.losses;
        run.diverged = run.diverged || r.diverged;
    }

    const auto eval_recs =
        gen_corpus(ec.eval_clips, Split::eval, CorpusMode::gt, ec.corpus_seed + 3, mc.max_t, mc.frame_h, mc.frame_w);
    run.eval = evaluate(m, eval_recs);
    return run;
}

inline std::vector<ArmRun> run_arm_over_seeds(const ExperimentConfig& ec, const ArmSpec& arm) {
    std::vector<ArmRun> runs;
    for (int k = 0; k < ec.seeds; ++k) runs.push_back(run_arm(ec, arm, ec.run_seed(k)));
    return runs;
}

// ---------------------------------------------------------------------------
// Paired comparison: per-seed deltas, their mean, and the standard error of
// the mean (n-1 variance). margin_sigmas = mean / stderr; an exactly-zero
// spread with a positive mean reports +inf.
// ---------------------------------------------------------------------------

struct Comparison {
    std::string metric;
    std::string label_a, label_b;
    std::vector<double> deltas;  // metric(a) - metric(b), per seed
    double mean_a = 0.0, mean_b = 0.0;
    double mean_delta = 0.0;
    double stderr_delta = 0.0;
    double margin_sigmas = 0.0;
};

template <typename Extract>
inline Comparison compare_arms(const std::string& metric, const std::vector<ArmRun>& a, const std::vector<ArmRun>& b,
                               Extract extract) {
    if (a.size() != b.size() || a.empty()) throw ConfigError("paired comparison needs equal nonempty arm runs");
    Comparison c;
    c.metric = metric;
    c.label_a = a.front().label;
    c.label_b = b.front().label;
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (a[i].seed != b[i].seed) throw ConfigError("paired comparison requires matching seeds");
        const double va = extract(a[i]), vb = extract(b[i]);
        c.mean_a += va;
        c.mean_b += vb;
        c.deltas.push_back(va - vb);
    }
    const double n = static_cast<double>(c.deltas.size());
    c.mean_a /= n;
    c.mean_b /= n;
    for (double d : c.deltas) c.mean_delta += d;
    c.mean_delta /= n;
    double var = 0.0;
    for (double d : c.deltas) var += (d - c.mean_delta) * (d - c.mean_delta);
    var = c.deltas.size() > 1 ? var / (n - 1.0) : 0.0;
    c.stderr_delta = std::sqrt(var / n);
    c.margin_sigmas = c.stderr_delta > 0.0 ? c.mean_delta / c.stderr_delta
                      : c.mean_delta > 0.0 ? std::numeric_limits<double>::infinity()
                      : c.mean_delta < 0.0 ? -std::numeric_limits<double>::infinity()
                                           : 0.0;
    return c;
}

inline Comparison compare_motion_accuracy(const std::vector<ArmRun>& a, const std::vector<ArmRun>& b) {
    return compare_arms("motion_accuracy", a, b, [](const ArmRun& r) { return r.eval.motion_accuracy; });
}

// Primary experiment metric: teacher-forced token accuracy on the held-out
// motion-caption shards. At this scale the motion-word slice alone sits at the
// text prior for every arm, so the per-token accuracy over whole captions is
// what separates pretraining regimes.
inline Comparison compare_token_accuracy(const std::vector<ArmRun>& a, const std::vector<ArmRun>& b) {
    return compare_arms("token_accuracy", a, b, [](const ArmRun& r) { return r.eval.token_accuracy; });
}

// ---------------------------------------------------------------------------
// Named experiments
// ---------------------------------------------------------------------------

struct ExperimentReport {
    std::string name;
    std::vector<ArmRun> arms;
    std::vector<Comparison> comparisons;
};

// Weak-label quality: stub pseudolabel pretraining vs simulated-ASR
// pretraining vs no pretraining at all, all sharing the fine-tune tail.
inline ExperimentReport experiment_asr_vs_pseudo(const ExperimentConfig& ec) {
    ExperimentReport rep;
    rep.name = "asr-vs-pseudo";
    const auto scratch = run_arm_over_seeds(ec, {"scratch", false, CorpusMode::pseudo, 0.0, GateInitMode::zero});
    const auto pseudo = run_arm_over_seeds(ec, {"pseudo", true, CorpusMode::pseudo, 0.0, GateInitMode::zero});
    const auto asr = run_arm_over_seeds(ec, {"asr", true, CorpusMode::asr, 0.0, GateInitMode::zero});
    rep.comparisons.push_back(compare_token_accuracy(pseudo, scratch));
    rep.comparisons.push_back(compare_token_accuracy(pseudo, asr));
    for (const auto& v : {scratch, pseudo, asr}) rep.arms.insert(rep.arms.end(), v.begin(), v.end());
    return rep;
}

// Pretraining modality: image-only vs video-only vs the 0.95 image mixture.
inline ExperimentReport experiment_modalities(const ExperimentConfig& ec) {
    ExperimentReport rep;
    rep.name = "image-vs-video-vs-mix";
    const auto image = run_arm_over_seeds(ec, {"image-only", true, CorpusMode::pseudo, 1.0, GateInitMode::zero});
    const auto video = run_arm_over_seeds(ec, {"video-only", true, CorpusMode::pseudo, 0.0, GateInitMode::zero});
    const auto mix = run_arm_over_seeds(ec, {"mix-0.95", true, CorpusMode::pseudo, 0.95, GateInitMode::zero});
    rep.comparisons.push_back(compare_token_accuracy(mix, image));
    rep.comparisons.push_back(compare_token_accuracy(mix, video));
    for (const auto& v : {image, video, mix}) rep.arms.insert(rep.arms.end(), v.begin(), v.end());
    return rep;
}

// Gate initialization grid: init in {0, 1} crossed with pretrained in {no, yes}.
inline ExperimentReport experiment_gate_init(const ExperimentConfig& ec) {
    ExperimentReport rep;
    rep.name = "gate-init";
    const auto s0 = run_arm_over_seeds(ec, {"scratch-gate0", false, CorpusMode::pseudo, 0.0, GateInitMode::zero});
    const auto s1 = run_arm_over_seeds(ec, {"scratch-gate1", false, CorpusMode::pseudo, 0.0, GateInitMode::one});
    const auto p0 = run_arm_over_seeds(ec, {"pretrained-gate0", true, CorpusMode::pseudo, 0.0, GateInitMode::zero});
    const auto p1 = run_arm_over_seeds(ec, {"pretrained-gate1", true, CorpusMode::pseudo, 0.0, GateInitMode::one});
    rep.comparisons.push_back(compare_token_accuracy(s1, s0));
    rep.comparisons.push_back(compare_token_accuracy(p0, s0));  // gap at init 0
    rep.comparisons.push_back(compare_token_accuracy(p1, s1));  // gap at init 1
    for (const auto& v : {s0, s1, p0, p1}) rep.arms.insert(rep.arms.end(), v.begin(), v.end());
    return rep;
}

// ---------------------------------------------------------------------------
// Stability probes (no accuracy claim): high learning rate and sync-mode.
// ---------------------------------------------------------------------------

struct StabilityRun {
    std::string label;
    std::uint64_t seed = 0;
    bool diverged = false;
    std::int64_t steps_run = 0;
    double final_loss = std::numeric_limits<double>::quiet_NaN();
    double loss_variance = 0.0;  // over the recorded trajectory
    GateDrift drift;
};

namespace experiment_detail {

inline double trajectory_variance(const std::vector<double>& xs) {
    if (xs.size() < 2) return 0.0;
    double mean = 0.0;
    for (double x : xs) mean += x;
    mean /= static_cast<double>(xs.size());
    double var = 0.0;
    for (double x : xs) var += (x - mean) * (x - mean);
    return var / static_cast<double>(xs.size() - 1);
}

}  // namespace experiment_detail

// Train adapters at a deliberately hot learning rate, the regime where gate
// parameterization decides survival. Vector gates are expected to finish;
// scalar-gate outcomes are reported as observed.
inline StabilityRun gate_stability_run(const ExperimentConfig& ec, bool scalar_gates, std::uint64_t seed,
                                       double lr = 7e-3, std::int64_t steps = 500, double beta2 = 0.999) {
    ModelConfig mc = ec.model;
    mc.seed = seed;
    mc.scalar_gates = scalar_gates;
    Model m = build_model(mc, ec.lm, ec.cache_dir);
    const auto recs =
        gen_corpus(ec.pretrain_clips, Split::pretrain, CorpusMode::pseudo, ec.corpus_seed, mc.max_t, mc.frame_h,
                   mc.frame_w);
    TrainConfig tc = experiment_detail::phase_config(ec, "pretrain", seed, steps, 0.0);
    tc.adam.lr = lr;
    tc.adam.beta2 = beta2;
    Trainer trainer(m, TrainSet{}, build_train_set(m, recs), tc);
    const TrainResult r = trainer.run();
    StabilityRun out;
    out.label = scalar_gates ? "scalar-gates" : "vector-gates";
    out.seed = seed;
    out.diverged = r.diverged;
    out.steps_run = r.steps_run;
    if (!r.losses.empty()) out.final_loss = r.losses.back();
    out.loss_variance = experiment_detail::trajectory_variance(r.losses);
    out.drift = r.drift;
    return out;
}

// ---------------------------------------------------------------------------
// Serialization for reports
// ---------------------------------------------------------------------------

inline nlohmann::json to_json(const EvalResult& r) {
    return {{"loss", r.loss},
            {"perplexity", r.perplexity},
            {"token_accuracy", r.token_accuracy},
            {"motion_accuracy", r.motion_accuracy},
            {"cider", r.cider},
            {"tokens", r.tokens},
            {"motion_tokens", r.motion_tokens},
            {"samples", r.samples}};
}

inline nlohmann::json to_json(const GateDrift& d) {
    return {{"global", d.global}, {"per_adapter", d.per_adapter}};
}

inline nlohmann::json to_json(const ArmRun& a) {
    return {{"label", a.label},
            {"seed", a.seed},
            {"eval", to_json(a.eval)},
            {"pretrain_drift", to_json(a.pretrain_drift)},
            {"finetune_drift", to_json(a.finetune_drift)},
            {"diverged", a.diverged},
            {"finetune_losses", a.finetune_losses}};
}

inline nlohmann::json to_json(const Comparison& c) {
    return {{"metric", c.metric},         {"a", c.label_a},
            {"b", c.label_b},             {"deltas", c.deltas},
            {"mean_a", c.mean_a},         {"mean_b", c.mean_b},
            {"mean_delta", c.mean_delta}, {"stderr_delta", c.stderr_delta},
            {"margin_sigmas", c.margin_sigmas}};
}

inline nlohmann::json to_json(const ExperimentReport& rep) {
    nlohmann::json arms = nlohmann::json::array(), comps = nlohmann::json::array();
    for (const auto& a : rep.arms) arms.push_back(to_json(a));
    for (const auto& c : rep.comparisons) comps.push_back(to_json(c));
    return {{"name", rep.name}, {"arms", arms}, {"comparisons", comps}};
}

inline nlohmann::json to_json(const StabilityRun& s) {
    return {{"label", s.label},           {"seed", s.seed},
            {"diverged", s.diverged},     {"steps_run", s.steps_run},
            {"final_loss", s.final_loss}, {"loss_variance", s.loss_variance},
            {"gate_drift", to_json(s.drift)}};
}

struct StabilityReport {
    std::string name;
    std::vector<StabilityRun> runs;
};

inline nlohmann::json to_json(const StabilityReport& rep) {
    nlohmann::json runs = nlohmann::json::array();
    for (const auto& r : rep.runs) runs.push_back(to_json(r));
    return {{"name", rep.name}, {"runs", runs}};
}

// Second-moment horizon at a hot learning rate: the short horizon (0.95)
// tracks gradient-scale shifts faster, which is what decides survival when
// adapter gates swing early in training. Both gate parameterizations are run
// at both horizons; outcomes are reported, not asserted.
inline StabilityReport experiment_beta2(const ExperimentConfig& ec, double lr = 7e-3, std::int64_t steps = 500) {
    StabilityReport rep;
    rep.name = "beta2";
    for (double beta2 : {0.95, 0.999})
        for (bool scalar : {false, true})
            for (int k = 0; k < ec.seeds; ++k) {
                StabilityRun r = gate_stability_run(ec, scalar, ec.run_seed(k), lr, steps, beta2);
                r.label += beta2 == 0.95 ? "-b2-0.95" : "-b2-0.999";
                rep.runs.push_back(r);
            }
    return rep;
}

// Independent per-worker modality streams vs the fully synchronized mode.
// Reports loss variance and divergence events; asserts nothing.
inline StabilityRun sync_mode_run(const ExperimentConfig& ec, bool synchronized, std::uint64_t seed,
                                  std::int64_t steps = 200) {
    ModelConfig mc = ec.model;
    mc.seed = seed;
    Model m = build_model(mc, ec.lm, ec.cache_dir);
    const auto videos = gen_corpus(ec.pretrain_clips, Split::pretrain, CorpusMode::pseudo, ec.corpus_seed, mc.max_t,
                                   mc.frame_h, mc.frame_w);
    const auto images = gen_corpus(ec.pretrain_clips, Split::pretrain, CorpusMode::image, ec.corpus_seed + 1,
                                   mc.max_t, mc.frame_h, mc.frame_w);
    TrainConfig tc = experiment_detail::phase_config(ec, "pretrain", seed, steps, 0.95);
    tc.mixture.workers = 2;
    tc.mixture.synchronized = synchronized;
    Trainer trainer(m, build_train_set(m, images), build_train_set(m, videos), tc);
    const TrainResult r = trainer.run();
    StabilityRun out;
    out.label = synchronized ? "synchronized" : "independent";
    out.seed = seed;
    out.diverged = r.diverged;
    out.steps_run = r.steps_run;
    if (!r.losses.empty()) out.final_loss = r.losses.back();
    out.loss_variance = experiment_detail::trajectory_variance(r.losses);
    out.drift = r.drift;
    return out;
}

inline StabilityReport experiment_sync_mode(const ExperimentConfig& ec, std::int64_t steps = 200) {
    StabilityReport rep;
    rep.name = "sync-mode";
    for (bool synced : {true, false})
        for (int k = 0; k < ec.seeds; ++k) rep.runs.push_back(sync_mode_run(ec, synced, ec.run_seed(k), steps));
    return rep;
}

}  // namespace vidcap
