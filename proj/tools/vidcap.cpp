// vidcap — single entry point for the desk-scale captioning lab: corpus
// synthesis, the pseudolabeling pipeline, attention cost benchmarks, adapter
// training, evaluation, caption generation, and scripted experiments.
//
// Every run prints exactly one RunReport (JSON) on stdout after any
// human-readable tables; --report additionally writes it to a file. Exit
// codes: 0 success, 1 internal invariant failure, 2 configuration error,
// 3 data error, 4 training divergence.

#include <cstdint>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "vidcap/attention.hpp"
#include "vidcap/experiments.hpp"
#include "vidcap/pipeline.hpp"
#include "vidcap/remote.hpp"
#include "vidcap/report.hpp"

namespace {

using namespace vidcap;

constexpr int kOk = 0;
constexpr int kInternal = 1;
constexpr int kConfigExit = 2;
constexpr int kDataExit = 3;
constexpr int kDivergedExit = 4;

// All relative paths are taken against the workspace root (flag or
// VIDCAP_WORKSPACE); absolute paths pass through untouched.
std::string resolve(const std::string& workspace, const std::string& path) {
    if (path.empty() || path.front() == '/' || workspace.empty() || workspace == ".") return path;
    return workspace + "/" + path;
}

Split parse_split(const std::string& s) {
    if (s == "pretrain") return Split::pretrain;
    if (s == "finetune") return Split::finetune;
    if (s == "eval") return Split::eval;
    throw ConfigError("unknown split '" + s + "' (expected pretrain|finetune|eval)");
}

CorpusMode parse_mode(const std::string& s) {
    if (s == "pseudo") return CorpusMode::pseudo;
    if (s == "asr") return CorpusMode::asr;
    if (s == "gt") return CorpusMode::gt;
    if (s == "image") return CorpusMode::image;
    throw ConfigError("unknown corpus mode '" + s + "' (expected pseudo|asr|gt|image)");
}

GateInitMode parse_gate_init(const std::string& s) {
    if (s == "zero" || s == "0") return GateInitMode::zero;
    if (s == "one" || s == "1") return GateInitMode::one;
    throw ConfigError("unknown gate init '" + s + "' (expected zero|one)");
}

std::pair<std::string, int> parse_endpoint(const std::string& endpoint) {
    const auto colon = endpoint.rfind(':');
    if (colon == std::string::npos || colon + 1 >= endpoint.size())
        throw ConfigError("endpoint must look like host:port, got '" + endpoint + "'");
    int port = 0;
    try {
        port = std::stoi(endpoint.substr(colon + 1));
    } catch (const std::exception&) {
        throw ConfigError("endpoint port is not a number in '" + endpoint + "'");
    }
    return {endpoint.substr(0, colon), port};
}

void emit_report(RunReport& report, const Stopwatch& watch, const std::string& report_path) {
    report.wall_time_s = watch.seconds();
    std::cout << report.to_json().dump(2) << "\n";
    if (!report_path.empty()) write_report(report, report_path);
}

void print_arm_table(const std::vector<ArmRun>& arms) {
    std::printf("%-18s %6s %9s %9s %8s %8s %10s %9s\n", "arm", "seed", "token_acc", "motion", "cider", "loss",
                "gate_drift", "diverged");
    for (const auto& a : arms)
        std::printf("%-18s %6llu %9.4f %9.4f %8.3f %8.4f %10.4f %9s\n", a.label.c_str(),
                    static_cast<unsigned long long>(a.seed), a.eval.token_accuracy, a.eval.motion_accuracy,
                    a.eval.cider, a.eval.loss, a.finetune_drift.global, a.diverged ? "yes" : "no");
}

void print_comparison_table(const std::vector<Comparison>& comps) {
    std::printf("\n%-14s %-18s %-18s %8s %8s %9s %9s %8s\n", "metric", "a", "b", "mean_a", "mean_b", "delta",
                "stderr", "sigmas");
    for (const auto& c : comps)
        std::printf("%-14s %-18s %-18s %8.4f %8.4f %+9.4f %9.4f %8.2f\n", c.metric.c_str(), c.label_a.c_str(),
                    c.label_b.c_str(), c.mean_a, c.mean_b, c.mean_delta, c.stderr_delta, c.margin_sigmas);
}

void print_stability_table(const std::vector<StabilityRun>& runs) {
    std::printf("%-22s %6s %9s %7s %11s %11s %10s\n", "run", "seed", "diverged", "steps", "final_loss",
                "loss_var", "gate_drift");
    for (const auto& r : runs)
        std::printf("%-22s %6llu %9s %7lld %11.4f %11.6f %10.4f\n", r.label.c_str(),
                    static_cast<unsigned long long>(r.seed), r.diverged ? "yes" : "no",
                    static_cast<long long>(r.steps_run), r.final_loss, r.loss_variance, r.drift.global);
}

// --------------------------------------------------------------------------
// synth: generate a synthetic corpus shard (optionally with a video manifest
// usable as pseudolabel-pipeline input).
// --------------------------------------------------------------------------

struct SynthOpts {
    std::string workspace, out, manifest, split = "pretrain", mode = "pseudo", report_path;
    std::int64_t n = 512, frames = 8, height = 32, width = 32;
    std::uint64_t seed = 1001;
};

int run_synth(const SynthOpts& o) {
    Stopwatch watch;
    const auto records = gen_corpus(o.n, parse_split(o.split), parse_mode(o.mode), o.seed, o.frames, o.height,
                                    o.width);
    const std::string out = resolve(o.workspace, o.out);
    write_shard(records, out);

    RunReport report;
    report.command = "synth";
    report.seed = o.seed;
    report.config = {{"n", o.n},           {"split", o.split},   {"mode", o.mode},   {"frames", o.frames},
                     {"height", o.height}, {"width", o.width},   {"out", o.out},     {"manifest", o.manifest}};
    report.artifacts.push_back(out);

    if (!o.manifest.empty()) {
        const std::string manifest = resolve(o.workspace, o.manifest);
        std::ofstream mf(manifest);
        if (!mf) throw DataError("cannot write manifest " + manifest);
        for (const auto& rec : records) {
            if (parse_video_id(rec.video_id).is_image) continue;  // single frames have no timeline
            VideoManifestEntry e;
            e.video_id = rec.video_id;
            e.duration_s = rec.end_s;
            e.fps = 1.0;
            e.locator = rec.video_id;
            if (rec.source == "asr") e.asr_spans.push_back({rec.start_s, rec.end_s, rec.caption});
            mf << to_json(e).dump() << "\n";
        }
        report.artifacts.push_back(manifest);
    }

    const CorpusStats st = corpus_stats(records);
    report.metrics = {{"clips", st.clips},
                      {"mean_caption_words", st.mean_caption_words},
                      {"median_caption_words", st.median_caption_words},
                      {"vocabulary", st.vocabulary},
                      {"per_source", st.per_source}};
    std::printf("wrote %lld clips to %s\n", static_cast<long long>(st.clips), out.c_str());
    emit_report(report, watch, resolve(o.workspace, o.report_path));
    return kOk;
}

// --------------------------------------------------------------------------
// pseudolabel: manifest -> captioned shard through the clip pipeline.
// --------------------------------------------------------------------------

struct PseudolabelOpts {
    std::string workspace, manifest, out, backend = "stub", endpoint = "127.0.0.1:8080", report_path;
    double clip_len = 8.0, top_p = 0.9;
    int workers = 2;
    std::int64_t frames = 8, height = 32, width = 32;
    std::uint64_t seed = 0;
    bool loopback = false;
};

int run_pseudolabel(const PseudolabelOpts& o) {
    Stopwatch watch;
    const auto entries = read_manifest(resolve(o.workspace, o.manifest));
    SynthFrameSource frames(o.frames, o.height, o.width);

    // The loopback flag spins up an in-process caption server backed by the
    // stub and drives it over HTTP, exercising the full wire path without an
    // external service.
    std::optional<CaptionServer> server;
    std::unique_ptr<CaptionerBackend> backend;
    if (o.backend == "stub") {
        backend = std::make_unique<StubCaptioner>();
    } else if (o.backend == "remote") {
        std::string host;
        int port = 0;
        if (o.loopback) {
            server.emplace(std::make_shared<StubCaptioner>());
            host = "127.0.0.1";
            port = server->start(host);
        } else {
            std::tie(host, port) = parse_endpoint(o.endpoint);
        }
        backend = std::make_unique<HttpCaptioner>(host, port, o.top_p);
    } else {
        throw ConfigError("unknown backend '" + o.backend + "' (expected stub|remote)");
    }

    const PipelineResult pr = run_pipeline(entries, frames, *backend, {o.clip_len, o.workers, o.seed});
    if (server) server->stop();
    const std::string out = resolve(o.workspace, o.out);
    write_shard(pr.records, out);

    std::int64_t ok = 0;
    for (const auto& r : pr.records) ok += r.failed ? 0 : 1;

    RunReport report;
    report.command = "pseudolabel";
    report.seed = o.seed;
    report.config = {{"manifest", o.manifest}, {"out", o.out},       {"backend", o.backend},
                     {"endpoint", o.endpoint}, {"clip_len", o.clip_len}, {"top_p", o.top_p},
                     {"workers", o.workers},   {"loopback", o.loopback}};
    report.metrics = {{"entries", entries.size()},
                      {"records", pr.records.size()},
                      {"captioned", ok},
                      {"backend_failures", pr.failures},
                      {"skipped", pr.skipped}};
    report.artifacts.push_back(out);
    std::printf("captioned %lld/%zu clips (%lld backend failures, %zu skipped) -> %s\n",
                static_cast<long long>(ok), pr.records.size(), static_cast<long long>(pr.failures),
                pr.skipped.size(), out.c_str());
    emit_report(report, watch, resolve(o.workspace, o.report_path));
    return ok > 0 ? kOk : kDataExit;  // nothing captioned at all: unusable shard
}

// --------------------------------------------------------------------------
// bench-attention: closed-form vs instrumented MAC counts plus wall-clock
// timings of the instrumented forward pass.
// --------------------------------------------------------------------------

struct BenchOpts {
    std::string workspace, report_path;
    int sweep = 50;
    std::uint64_t seed = 17;
};

int run_bench(const BenchOpts& o) {
    Stopwatch watch;
    struct Row {
        std::int64_t q, t, s, d;
    };
    // The headline config (16 queries against a 16x196 grid at width 64) plus
    // an image row (t = 1) and smaller shapes for scale.
    const std::vector<Row> rows = {{16, 16, 196, 64}, {16, 1, 196, 64}, {16, 8, 196, 64},
                                   {8, 4, 64, 32},    {16, 16, 49, 64}};
    const AttentionVariant variants[] = {AttentionVariant::full, AttentionVariant::naive_axial,
                                         AttentionVariant::separable};

    nlohmann::json table = nlohmann::json::array();
    std::printf("%-12s %4s %4s %4s %4s %14s %14s %14s %9s\n", "variant", "q", "t", "s", "d", "score_macs",
                "proj_macs", "total_macs", "time_ms");
    for (const Row& r : rows) {
        for (AttentionVariant v : variants) {
            const FlopReport fr = count_flops(v, r.q, r.t, r.s, r.d);  // throws if counts disagree
            Stopwatch timer;
            constexpr int reps = 3;
            for (int i = 0; i < reps; ++i) (void)measured_flops(v, r.q, r.t, r.s, r.d);
            const double ms = timer.seconds() * 1000.0 / reps;
            std::printf("%-12s %4lld %4lld %4lld %4lld %14lld %14lld %14lld %9.3f\n", fr.variant.c_str(),
                        static_cast<long long>(r.q), static_cast<long long>(r.t), static_cast<long long>(r.s),
                        static_cast<long long>(r.d), static_cast<long long>(fr.score_macs),
                        static_cast<long long>(fr.projection_macs), static_cast<long long>(fr.total()), ms);
            table.push_back({{"variant", fr.variant},
                             {"q", r.q},
                             {"t", r.t},
                             {"s", r.s},
                             {"d", r.d},
                             {"score_macs", fr.score_macs},
                             {"projection_macs", fr.projection_macs},
                             {"total_macs", fr.total()},
                             {"time_ms", ms}});
        }
    }

    const FlopReport full = closed_form_flops(AttentionVariant::full, 16, 16, 196, 64);
    const FlopReport sep = closed_form_flops(AttentionVariant::separable, 16, 16, 196, 64);
    const double ratio = static_cast<double>(full.score_macs) / static_cast<double>(sep.score_macs);
    std::printf("\nscore-cost ratio full/separable at (q=16,t=16,s=196,d=64): %.2fx\n", ratio);

    Rng rng = Rng::stream(o.seed, "bench-sweep");
    for (int i = 0; i < o.sweep; ++i) {
        const std::int64_t q = 1 + rng.uniform_int(24);
        const std::int64_t t = 1 + rng.uniform_int(12);
        const std::int64_t s = 1 + rng.uniform_int(160);
        const std::int64_t d = 1 + rng.uniform_int(48);
        for (AttentionVariant v : variants) (void)count_flops(v, q, t, s, d);
    }
    std::printf("verified closed-form == instrumented on %d random configs x 3 variants\n", o.sweep);

    RunReport report;
    report.command = "bench-attention";
    report.seed = o.seed;
    report.config = {{"sweep", o.sweep}};
    report.metrics = {{"table", table}, {"full_over_separable_score_ratio", ratio}, {"sweep_verified", o.sweep}};
    emit_report(report, watch, resolve(o.workspace, o.report_path));
    return kOk;
}

// --------------------------------------------------------------------------
// train: build (or resume) a captioner and train its adapters.
// --------------------------------------------------------------------------

struct TrainOpts {
    std::string workspace, phase = "pretrain", mode = "pseudo", gate_init = "zero";
    std::string checkpoint, resume, metrics, report_path, cache_dir = ".cache";
    std::int64_t clips = 512, image_clips = 512, eval_clips = 64, steps = 200, grad_accum = 1, eval_every = 0;
    std::int64_t d = 32, lm_layers = 4, lm_heads = 4, patch = 8, frames = 4, height = 32, width = 32;
    std::vector<std::int64_t> adapters = {1, 2, 3};
    std::int64_t lm_steps = 300, lm_batch = 16, lm_corpus = 4096;
    double lr = 3e-3, beta2 = 0.999, lm_lr = 2e-3, p_image = 0.0;
    std::int64_t image_batch = 16, video_batch = 8;
    int workers = 1;
    bool scalar_gates = false, synchronized = false;
    std::uint64_t seed = 0, corpus_seed = 1001;
};

int run_train(const TrainOpts& o) {
    Stopwatch watch;
    if (o.phase != "pretrain" && o.phase != "finetune")
        throw ConfigError("phase must be pretrain|finetune, got '" + o.phase + "'");
    if (o.p_image < 1.0 && o.clips < 1) throw ConfigError("video training needs --clips >= 1");
    if (o.p_image > 0.0 && o.image_clips < 1) throw ConfigError("image mixture needs --image-clips >= 1");

    Model model = [&] {
        if (!o.resume.empty()) return load_captioner(resolve(o.workspace, o.resume));
        ModelConfig mc;
        mc.d = o.d;
        mc.lm_layers = o.lm_layers;
        mc.lm_heads = o.lm_heads;
        mc.adapter_layers = o.adapters;
        mc.patch = o.patch;
        mc.max_t = o.frames;
        mc.frame_h = o.height;
        mc.frame_w = o.width;
        mc.scalar_gates = o.scalar_gates;
        mc.gate_init = parse_gate_init(o.gate_init);
        mc.seed = o.seed;
        LmPretrainConfig lm{o.lm_steps, o.lm_batch, o.lm_corpus, o.lm_lr};
        return build_model(mc, lm, resolve(o.workspace, o.cache_dir));
    }();

    const Split split = o.phase == "pretrain" ? Split::pretrain : Split::finetune;
    TrainSet videos, images;
    if (o.p_image < 1.0)
        videos = build_train_set(model, gen_corpus(o.clips, split, parse_mode(o.mode), o.corpus_seed,
                                                   model.cfg.max_t, model.cfg.frame_h, model.cfg.frame_w));
    if (o.p_image > 0.0)
        images = build_train_set(model, gen_corpus(o.image_clips, split, CorpusMode::image, o.corpus_seed + 1,
                                                   model.cfg.max_t, model.cfg.frame_h, model.cfg.frame_w));

    TrainConfig tc;
    tc.phase = o.phase;
    tc.steps = o.steps;
    tc.grad_accum = o.grad_accum;
    tc.eval_every = o.eval_every;
    tc.metrics_path = resolve(o.workspace, o.metrics);
    tc.adam.lr = o.lr;
    tc.adam.beta2 = o.beta2;
    tc.mixture.p_image = o.p_image;
    tc.mixture.image_batch = o.image_batch;
    tc.mixture.video_batch = o.video_batch;
    tc.mixture.workers = o.workers;
    tc.mixture.synchronized = o.synchronized;
    tc.mixture.seed = mix_seed(o.seed, fnv1a64(o.phase));

    Trainer trainer(model, std::move(images), std::move(videos), tc);
    if (o.eval_every > 0)
        trainer.set_eval_set(build_train_set(
            model, gen_corpus(o.eval_clips, Split::eval, CorpusMode::gt, o.corpus_seed + 3, model.cfg.max_t,
                              model.cfg.frame_h, model.cfg.frame_w)));
    if (!o.resume.empty()) trainer.load(resolve(o.workspace, o.resume));

    const TrainResult result = trainer.run();

    RunReport report;
    report.command = "train";
    report.seed = o.seed;
    report.config = {{"phase", o.phase},       {"mode", o.mode},           {"clips", o.clips},
                     {"steps", o.steps},       {"lr", o.lr},               {"beta2", o.beta2},
                     {"p_image", o.p_image},   {"workers", o.workers},     {"grad_accum", o.grad_accum},
                     {"corpus_seed", o.corpus_seed}, {"model", to_json(model.cfg)}, {"resume", o.resume}};
    report.metrics = {{"steps_run", result.steps_run},
                      {"diverged", result.diverged},
                      {"diverged_at", result.diverged_at},
                      {"final_loss", result.losses.empty() ? nullptr : nlohmann::json(result.losses.back())},
                      {"losses", result.losses},
                      {"gate_drift", to_json(result.drift)}};
    if (!o.checkpoint.empty()) {
        const std::string ckpt = resolve(o.workspace, o.checkpoint);
        trainer.save(ckpt);
        report.artifacts.push_back(ckpt);
    }
    if (!tc.metrics_path.empty()) report.artifacts.push_back(tc.metrics_path);

    if (result.diverged)
        std::printf("DIVERGED at step %lld after %lld completed steps\n",
                    static_cast<long long>(result.diverged_at), static_cast<long long>(result.steps_run));
    else
        std::printf("trained %lld steps, final loss %.4f, gate drift %.4f\n",
                    static_cast<long long>(result.steps_run), result.losses.empty() ? 0.0 : result.losses.back(),
                    result.drift.global);
    emit_report(report, watch, resolve(o.workspace, o.report_path));
    return result.diverged ? kDivergedExit : kOk;
}

// --------------------------------------------------------------------------
// eval: score a checkpoint on generated or stored shards.
// --------------------------------------------------------------------------

struct EvalOpts {
    std::string workspace, checkpoint, shard, split = "eval", mode = "gt", report_path;
    std::int64_t clips = 64;
    std::uint64_t corpus_seed = 1004;
};

int run_eval(const EvalOpts& o) {
    Stopwatch watch;
    Model model = load_captioner(resolve(o.workspace, o.checkpoint));
    const std::vector<ClipRecord> records =
        o.shard.empty() ? gen_corpus(o.clips, parse_split(o.split), parse_mode(o.mode), o.corpus_seed,
                                     model.cfg.max_t, model.cfg.frame_h, model.cfg.frame_w)
                        : read_shard(resolve(o.workspace, o.shard));
    const EvalResult r = evaluate(model, records);

    std::printf("%-16s %10s\n", "metric", "value");
    std::printf("%-16s %10.4f\n", "loss", r.loss);
    std::printf("%-16s %10.4f\n", "perplexity", r.perplexity);
    std::printf("%-16s %10.4f\n", "token_accuracy", r.token_accuracy);
    std::printf("%-16s %10.4f\n", "motion_accuracy", r.motion_accuracy);
    std::printf("%-16s %10.4f\n", "cider_d", r.cider);
    std::printf("%-16s %10lld\n", "tokens", static_cast<long long>(r.tokens));
    std::printf("%-16s %10lld\n", "samples", static_cast<long long>(r.samples));

    RunReport report;
    report.command = "eval";
    report.seed = o.corpus_seed;
    report.config = {{"checkpoint", o.checkpoint}, {"shard", o.shard},           {"split", o.split},
                     {"mode", o.mode},             {"clips", o.clips},           {"corpus_seed", o.corpus_seed},
                     {"model", to_json(model.cfg)}};
    report.metrics = to_json(r);
    emit_report(report, watch, resolve(o.workspace, o.report_path));
    return kOk;
}

// --------------------------------------------------------------------------
// generate: caption synthetic videos with a trained checkpoint.
// --------------------------------------------------------------------------

struct GenerateOpts {
    std::string workspace, checkpoint, video_id, strategy = "greedy", report_path;
    double top_p = 0.9;
    std::int64_t n = 4, max_len = 0;  // 0 = model's max caption length
    std::uint64_t seed = 0;
};

int run_generate(const GenerateOpts& o) {
    Stopwatch watch;
    Model model = load_captioner(resolve(o.workspace, o.checkpoint));

    GenerateConfig gen;
    if (o.strategy == "greedy")
        gen.strategy = DecodeStrategy::greedy;
    else if (o.strategy == "nucleus")
        gen.strategy = DecodeStrategy::nucleus;
    else
        throw ConfigError("unknown strategy '" + o.strategy + "' (expected greedy|nucleus)");
    gen.top_p = o.top_p;
    gen.max_len = o.max_len > 0 ? o.max_len : model.cfg.max_caption;

    std::vector<std::string> ids;
    if (!o.video_id.empty()) {
        ids.push_back(o.video_id);
    } else {
        for (std::int64_t k = 0; k < o.n; ++k) {
            Rng rng = Rng::stream(o.seed, "generate-scene", static_cast<std::uint64_t>(k));
            ids.push_back(random_scene(rng, model.cfg.max_t, model.cfg.frame_h, model.cfg.frame_w).id());
        }
    }

    const Vocab& vocab = Vocab::instance();
    nlohmann::json captions = nlohmann::json::array();
    for (std::size_t k = 0; k < ids.size(); ++k) {
        const Tensor video = video_for_record(ids[k], model.cfg.max_t, model.cfg.frame_h, model.cfg.frame_w);
        gen.seed = mix_seed(o.seed, static_cast<std::uint64_t>(k));
        const CaptionTokens cap = generate(model, video, gen);
        const std::string text = vocab.decode_words(cap.ids);
        std::printf("%-40s %s\n", ids[k].c_str(), text.c_str());
        captions.push_back({{"video_id", ids[k]}, {"caption", text}});
    }

    RunReport report;
    report.command = "generate";
    report.seed = o.seed;
    report.config = {{"checkpoint", o.checkpoint}, {"strategy", o.strategy}, {"top_p", o.top_p},
                     {"max_len", gen.max_len},     {"n", o.n},               {"video_id", o.video_id}};
    report.metrics = {{"captions", captions}};
    emit_report(report, watch, resolve(o.workspace, o.report_path));
    return kOk;
}

// --------------------------------------------------------------------------
// experiment: scripted paired comparisons and stability probes.
// --------------------------------------------------------------------------

struct ExperimentOpts {
    std::string workspace, name, cache_dir = ".cache", report_path;
    ExperimentConfig ec = default_experiment_config();
};

int run_experiment(const ExperimentOpts& o) {
    Stopwatch watch;
    ExperimentConfig ec = o.ec;
    ec.cache_dir = resolve(o.workspace, o.cache_dir);

    RunReport report;
    report.command = "experiment";
    report.seed = ec.base_seed;
    report.config = {{"name", o.name},
                     {"seeds", ec.seeds},
                     {"base_seed", ec.base_seed},
                     {"corpus_seed", ec.corpus_seed},
                     {"pretrain_clips", ec.pretrain_clips},
                     {"pretrain_steps", ec.pretrain_steps},
                     {"pretrain_lr", ec.pretrain_lr},
                     {"finetune_clips", ec.finetune_clips},
                     {"finetune_steps", ec.finetune_steps},
                     {"finetune_lr", ec.finetune_lr},
                     {"eval_clips", ec.eval_clips},
                     {"model", to_json(ec.model)}};

    if (o.name == "asr-vs-pseudo" || o.name == "image-vs-video-vs-mix" || o.name == "gate-init") {
        const ExperimentReport rep = o.name == "asr-vs-pseudo"         ? experiment_asr_vs_pseudo(ec)
                                     : o.name == "image-vs-video-vs-mix" ? experiment_modalities(ec)
                                                                         : experiment_gate_init(ec);
        print_arm_table(rep.arms);
        print_comparison_table(rep.comparisons);
        report.metrics = to_json(rep);
    } else if (o.name == "beta2") {
        const StabilityReport rep = experiment_beta2(ec);
        print_stability_table(rep.runs);
        report.metrics = to_json(rep);
    } else if (o.name == "sync-mode") {
        const StabilityReport rep = experiment_sync_mode(ec);
        print_stability_table(rep.runs);
        report.metrics = to_json(rep);
    } else {
        throw ConfigError("unknown experiment '" + o.name +
                          "' (expected asr-vs-pseudo|image-vs-video-vs-mix|gate-init|beta2|sync-mode)");
    }

    emit_report(report, watch, resolve(o.workspace, o.report_path));
    return kOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"desk-scale video captioning lab"};
    app.require_subcommand(1);

    std::string workspace = ".";
    if (const char* env = std::getenv("VIDCAP_WORKSPACE"); env != nullptr && *env != '\0') workspace = env;
    app.add_option("--workspace", workspace, "root for all relative paths (env VIDCAP_WORKSPACE)")
        ->capture_default_str();

    int rc = kOk;

    auto* synth = app.add_subcommand("synth", "generate a synthetic corpus shard");
    auto so = std::make_shared<SynthOpts>();
    synth->add_option("--n", so->n, "clips to generate")->capture_default_str();
    synth->add_option("--split", so->split, "pretrain|finetune|eval")->capture_default_str();
    synth->add_option("--mode", so->mode, "pseudo|asr|gt|image")->capture_default_str();
    synth->add_option("--seed", so->seed, "corpus seed")->capture_default_str();
    synth->add_option("--frames", so->frames, "frames per clip")->capture_default_str();
    synth->add_option("--height", so->height, "frame height")->capture_default_str();
    synth->add_option("--width", so->width, "frame width")->capture_default_str();
    synth->add_option("--out", so->out, "output shard (jsonl)")->required();
    synth->add_option("--manifest", so->manifest, "also write a video manifest here");
    synth->add_option("--report", so->report_path, "write the run report to this path");
    synth->callback([&rc, so, &workspace] {
        so->workspace = workspace;
        rc = run_synth(*so);
    });

    auto* pseudo = app.add_subcommand("pseudolabel", "caption manifest videos into a shard");
    auto po = std::make_shared<PseudolabelOpts>();
    pseudo->add_option("--manifest", po->manifest, "input video manifest (jsonl)")->required();
    pseudo->add_option("--out", po->out, "output shard (jsonl)")->required();
    pseudo->add_option("--clip-len", po->clip_len, "clip length in seconds")->capture_default_str();
    pseudo->add_option("--backend", po->backend, "stub|remote")->capture_default_str();
    pseudo->add_option("--endpoint", po->endpoint, "host:port for the remote backend")->capture_default_str();
    pseudo->add_flag("--loopback", po->loopback, "serve the stub in-process and caption over HTTP");
    pseudo->add_option("--top-p", po->top_p, "nucleus parameter sent to the backend")->capture_default_str();
    pseudo->add_option("--workers", po->workers, "pipeline worker threads")->capture_default_str();
    pseudo->add_option("--seed", po->seed, "pipeline seed")->capture_default_str();
    pseudo->add_option("--frames", po->frames, "decoder frames per video")->capture_default_str();
    pseudo->add_option("--height", po->height, "frame height")->capture_default_str();
    pseudo->add_option("--width", po->width, "frame width")->capture_default_str();
    pseudo->add_option("--report", po->report_path, "write the run report to this path");
    pseudo->callback([&rc, po, &workspace] {
        po->workspace = workspace;
        rc = run_pseudolabel(*po);
    });

    auto* bench = app.add_subcommand("bench-attention", "MAC counts and timings for attention variants");
    auto bo = std::make_shared<BenchOpts>();
    bench->add_option("--sweep", bo->sweep, "random configs to verify")->capture_default_str();
    bench->add_option("--seed", bo->seed, "sweep seed")->capture_default_str();
    bench->add_option("--report", bo->report_path, "write the run report to this path");
    bench->callback([&rc, bo, &workspace] {
        bo->workspace = workspace;
        rc = run_bench(*bo);
    });

    auto* train = app.add_subcommand("train", "train adapter parameters over frozen backbones");
    auto to = std::make_shared<TrainOpts>();
    train->add_option("--phase", to->phase, "pretrain|finetune")->capture_default_str();
    train->add_option("--mode", to->mode, "video caption source: pseudo|asr|gt")->capture_default_str();
    train->add_option("--clips", to->clips, "video clips")->capture_default_str();
    train->add_option("--image-clips", to->image_clips, "image records when p-image > 0")->capture_default_str();
    train->add_option("--steps", to->steps, "optimizer steps")->capture_default_str();
    train->add_option("--lr", to->lr, "learning rate")->capture_default_str();
    train->add_option("--beta2", to->beta2, "Adam second-moment decay")->capture_default_str();
    train->add_option("--p-image", to->p_image, "image batch probability")->capture_default_str();
    train->add_option("--image-batch", to->image_batch, "image batch size")->capture_default_str();
    train->add_option("--video-batch", to->video_batch, "video batch size")->capture_default_str();
    train->add_option("--workers", to->workers, "data-parallel workers")->capture_default_str();
    train->add_flag("--sync", to->synchronized, "one shared modality draw per step");
    train->add_option("--grad-accum", to->grad_accum, "micro-batches per update")->capture_default_str();
    train->add_option("--seed", to->seed, "model + sampler seed")->capture_default_str();
    train->add_option("--corpus-seed", to->corpus_seed, "corpus seed")->capture_default_str();
    train->add_option("--d", to->d, "hidden width")->capture_default_str();
    train->add_option("--lm-layers", to->lm_layers, "frozen LM depth")->capture_default_str();
    train->add_option("--lm-heads", to->lm_heads, "attention heads")->capture_default_str();
    train->add_option("--patch", to->patch, "encoder patch size")->capture_default_str();
    train->add_option("--frames", to->frames, "frames per clip")->capture_default_str();
    train->add_option("--height", to->height, "frame height")->capture_default_str();
    train->add_option("--width", to->width, "frame width")->capture_default_str();
    train->add_option("--adapters", to->adapters, "LM layers that receive adapters")
        ->delimiter(',')
        ->capture_default_str();
    train->add_flag("--scalar-gates", to->scalar_gates, "one gate per adapter instead of per channel");
    train->add_option("--gate-init", to->gate_init, "zero|one")->capture_default_str();
    train->add_option("--lm-steps", to->lm_steps, "frozen-LM warm-up steps")->capture_default_str();
    train->add_option("--lm-batch", to->lm_batch, "frozen-LM warm-up batch")->capture_default_str();
    train->add_option("--lm-corpus", to->lm_corpus, "frozen-LM warm-up sentences")->capture_default_str();
    train->add_option("--lm-lr", to->lm_lr, "frozen-LM warm-up learning rate")->capture_default_str();
    train->add_option("--cache-dir", to->cache_dir, "frozen-LM cache directory")->capture_default_str();
    train->add_option("--eval-every", to->eval_every, "periodic eval interval (0 = off)")->capture_default_str();
    train->add_option("--eval-clips", to->eval_clips, "clips for periodic eval")->capture_default_str();
    train->add_option("--checkpoint", to->checkpoint, "write final checkpoint here");
    train->add_option("--resume", to->resume, "resume from this checkpoint");
    train->add_option("--metrics", to->metrics, "append per-step JSONL metrics here");
    train->add_option("--report", to->report_path, "write the run report to this path");
    train->callback([&rc, to, &workspace] {
        to->workspace = workspace;
        rc = run_train(*to);
    });

    auto* evalc = app.add_subcommand("eval", "score a checkpoint");
    auto eo = std::make_shared<EvalOpts>();
    evalc->add_option("--checkpoint", eo->checkpoint, "trained checkpoint")->required();
    evalc->add_option("--shard", eo->shard, "score this shard instead of generating one");
    evalc->add_option("--split", eo->split, "pretrain|finetune|eval")->capture_default_str();
    evalc->add_option("--mode", eo->mode, "pseudo|asr|gt|image")->capture_default_str();
    evalc->add_option("--clips", eo->clips, "clips to generate")->capture_default_str();
    evalc->add_option("--corpus-seed", eo->corpus_seed, "corpus seed")->capture_default_str();
    evalc->add_option("--report", eo->report_path, "write the run report to this path");
    evalc->callback([&rc, eo, &workspace] {
        eo->workspace = workspace;
        rc = run_eval(*eo);
    });

    auto* gen = app.add_subcommand("generate", "caption synthetic videos");
    auto go = std::make_shared<GenerateOpts>();
    gen->add_option("--checkpoint", go->checkpoint, "trained checkpoint")->required();
    gen->add_option("--video-id", go->video_id, "caption this synthetic video id");
    gen->add_option("--n", go->n, "random scenes to caption when no id is given")->capture_default_str();
    gen->add_option("--strategy", go->strategy, "greedy|nucleus")->capture_default_str();
    gen->add_option("--top-p", go->top_p, "nucleus mass")->capture_default_str();
    gen->add_option("--max-len", go->max_len, "max tokens (0 = model default)")->capture_default_str();
    gen->add_option("--seed", go->seed, "decode seed")->capture_default_str();
    gen->add_option("--report", go->report_path, "write the run report to this path");
    gen->callback([&rc, go, &workspace] {
        go->workspace = workspace;
        rc = run_generate(*go);
    });

    auto* exp = app.add_subcommand("experiment", "scripted paired comparisons and stability probes");
    auto xo = std::make_shared<ExperimentOpts>();
    exp->add_option("--name", xo->name, "asr-vs-pseudo|image-vs-video-vs-mix|gate-init|beta2|sync-mode")
        ->required();
    exp->add_option("--seeds", xo->ec.seeds, "paired seeds per arm")->capture_default_str();
    exp->add_option("--base-seed", xo->ec.base_seed, "first model seed")->capture_default_str();
    exp->add_option("--corpus-seed", xo->ec.corpus_seed, "corpus seed")->capture_default_str();
    exp->add_option("--pretrain-clips", xo->ec.pretrain_clips, "pretraining clips")->capture_default_str();
    exp->add_option("--pretrain-steps", xo->ec.pretrain_steps, "pretraining steps")->capture_default_str();
    exp->add_option("--pretrain-lr", xo->ec.pretrain_lr, "pretraining learning rate")->capture_default_str();
    exp->add_option("--finetune-clips", xo->ec.finetune_clips, "fine-tuning clips")->capture_default_str();
    exp->add_option("--finetune-steps", xo->ec.finetune_steps, "fine-tuning steps")->capture_default_str();
    exp->add_option("--finetune-lr", xo->ec.finetune_lr, "fine-tuning learning rate")->capture_default_str();
    exp->add_option("--eval-clips", xo->ec.eval_clips, "held-out eval clips")->capture_default_str();
    exp->add_option("--cache-dir", xo->cache_dir, "frozen-LM cache directory")->capture_default_str();
    exp->add_option("--report", xo->report_path, "write the run report to this path");
    exp->callback([&rc, xo, &workspace] {
        xo->workspace = workspace;
        rc = run_experiment(*xo);
    });

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kOk : kConfigExit;
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kConfigExit;
    } catch (const ShapeError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kConfigExit;
    } catch (const DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return kDataExit;
    } catch (const std::exception& e) {
        std::cerr << "internal error: " << e.what() << "\n";
        return kInternal;
    }
    return rc;
}
