#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <memory>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "vidcap/checkpoint.hpp"
#include "vidcap/mixture.hpp"
#include "vidcap/model.hpp"
#include "vidcap/optimizer.hpp"

namespace vidcap {

// ---------------------------------------------------------------------------
// Training data: captions with pre-encoded video features. The encoder is
// frozen, so features per record are computed once up front.
// ---------------------------------------------------------------------------

struct TrainSample {
    CaptionTokens tokens;
    Tensor features;  // [t, s, d]
};

struct TrainSet {
    std::vector<TrainSample> samples;
    std::size_t size() const { return samples.size(); }
    bool empty() const { return samples.empty(); }
};

// Failed pipeline records are dropped; everything else becomes a sample.
inline TrainSet build_train_set(Model& m, const std::vector<ClipRecord>& records) {
    TrainSet set;
    for (const auto& r : records) {
        if (r.failed || r.caption.empty()) continue;
        TrainSample s{CaptionTokens::from_text(r.caption), encode_video(m, video_for_record(r.video_id, m.cfg.max_t,
                                                                                            m.cfg.frame_h,
                                                                                            m.cfg.frame_w))};
        set.samples.push_back(std::move(s));
    }
    return set;
}

// ---------------------------------------------------------------------------
// Trainer
// ---------------------------------------------------------------------------

struct TrainConfig {
    MixtureConfig mixture;
    AdamConfig adam;            // lr 1e-3 unless an experiment overrides it
    std::int64_t steps = 100;
    std::int64_t grad_accum = 1;  // micro-batches averaged into one update
    std::string phase = "pretrain";
    std::int64_t eval_every = 0;  // 0 = no periodic eval
    std::string metrics_path;     // JSONL, one record per step; empty = off

    void validate() const {
        mixture.validate();
        if (steps < 0) throw ConfigError("steps must be >= 0");
        if (grad_accum < 1) throw ConfigError("grad_accum must be >= 1");
        if (phase != "pretrain" && phase != "finetune") throw ConfigError("unknown phase '" + phase + "'");
    }
};

struct TrainResult {
    std::vector<double> losses;  // merged token-weighted loss per step
    std::int64_t steps_run = 0;
    bool diverged = false;
    std::int64_t diverged_at = -1;
    GateDrift drift;  // effective gate movement over this run() call
};

class Trainer {
public:
    Trainer(Model& m, TrainSet images, TrainSet videos, TrainConfig cfg)
        : model_(&m), images_(std::move(images)), videos_(std::move(videos)), cfg_(std::move(cfg)) {
        cfg_.validate();
        params_ = model_->trainable_params();
        state_ = AdamState::init(params_, cfg_.adam);
    }

    std::int64_t step() const { return step_; }
    const AdamState& adam_state() const { return state_; }
    Model& model() { return *model_; }

    // Periodic eval target (mean loss), reported in the metrics log.
    void set_eval_set(TrainSet eval) { eval_ = std::move(eval); }

    // Runs from the current step up to cfg.steps. Resumable: all sampling is
    // keyed by absolute step, so save/load then run() continues the exact
    // uninterrupted trajectory.
    TrainResult run() {
        TrainResult result;
        const GateSnapshot start_gates = snapshot_gates(model_->adapters);
        std::ofstream metrics;
        if (!cfg_.metrics_path.empty()) {
            metrics.open(cfg_.metrics_path, std::ios::app);
            if (!metrics) throw DataError("cannot open metrics log " + cfg_.metrics_path);
        }

        for (; step_ < cfg_.steps; ++step_) {
            for (auto& [n, t] : params_) t->zero_grad();
            double step_loss = 0.0;
            std::vector<std::string> modalities;

            for (std::int64_t micro = 0; micro < cfg_.grad_accum; ++micro) {
                const std::int64_t draw = step_ * cfg_.grad_accum + micro;
                std::vector<MixtureBatch> batches;
                std::int64_t total_targets = 0;
                for (int w = 0; w < cfg_.mixture.workers; ++w) {
                    batches.push_back(sample_batch(cfg_.mixture, w, draw, images_.size(), videos_.size()));
                    const TrainSet& corpus = batches.back().modality == Modality::image ? images_ : videos_;
                    for (std::size_t idx : batches.back().indices)
                        total_targets += corpus.samples[idx].tokens.targets();
                    if (micro == 0) modalities.emplace_back(modality_name(batches.back().modality));
                }

                // forward/backward per worker on its own graph, then a single
                // reducer merges leaf gradients in fixed worker order
                std::vector<std::unique_ptr<Graph>> graphs(static_cast<std::size_t>(cfg_.mixture.workers));
                std::vector<double> worker_loss(static_cast<std::size_t>(cfg_.mixture.workers), 0.0);
                auto work = [&](int w) {
                    const MixtureBatch& batch = batches[static_cast<std::size_t>(w)];
                    const TrainSet& corpus = batch.modality == Modality::image ? images_ : videos_;
                    auto& g = graphs[static_cast<std::size_t>(w)];
                    g = std::make_unique<Graph>();
                    BoundModel b = bind_model(*g, *model_);
                    Value loss{nullptr, -1};
                    for (std::size_t idx : batch.indices) {
                        const TrainSample& s = corpus.samples[idx];
                        Value weighted = scale(sample_caption_loss(b, s.features, s.tokens),
                                               static_cast<double>(s.tokens.targets()) /
                                                   static_cast<double>(total_targets));
                        loss = loss.valid() ? add(loss, weighted) : weighted;
                    }
                    worker_loss[static_cast<std::size_t>(w)] = g->materialize(loss).data[0];
                    g->backward_local(scale(loss, 1.0 / static_cast<double>(cfg_.grad_accum)));
                };
                std::vector<std::thread> pool;
                for (int w = 1; w < cfg_.mixture.workers; ++w) pool.emplace_back(work, w);
                work(0);
                for (auto& th : pool) th.join();
                for (auto& g : graphs) g->accumulate_leaf_grads();

                double micro_loss = 0.0;
                for (double l : worker_loss) micro_loss += l;
                step_loss += micro_loss / static_cast<double>(cfg_.grad_accum);
            }

            if (!std::isfinite(step_loss)) {
                result.diverged = true;
                result.diverged_at = step_;
                break;
            }
            if (!adam_step(params_, state_)) {
                result.diverged = true;
                result.diverged_at = step_;
                break;
            }
            result.losses.push_back(step_loss);
            ++result.steps_run;

            if (metrics.is_open()) {
                const GateSnapshot gates = snapshot_gates(model_->adapters);
                double gate_max = 0.0;
                for (const auto& v : gates.attn)
                    for (double x : v) gate_max = std::max(gate_max, std::abs(x));
                for (const auto& v : gates.ffn)
                    for (double x : v) gate_max = std::max(gate_max, std::abs(x));
                nlohmann::json rec{{"step", step_},
                                   {"phase", cfg_.phase},
                                   {"modality", join(modalities)},
                                   {"loss", step_loss},
                                   {"gate_absmax", gate_max}};
                if (cfg_.eval_every > 0 && !eval_.empty() && (step_ + 1) % cfg_.eval_every == 0)
                    rec["eval_loss"] = eval_loss();
                metrics << rec.dump() << '\n';
            }
        }

        result.drift = gate_drift(start_gates, snapshot_gates(model_->adapters));
        return result;
    }

    double eval_loss() {
        std::vector<std::pair<CaptionTokens, Tensor>> batch;
        for (const auto& s : eval_.samples) batch.emplace_back(s.tokens, s.features);
        return caption_loss(*model_, batch);
    }

    // Checkpoint covers every model parameter, the Adam moments, and the step
    // counter; loading restores all of them bit-exactly.
    void save(const std::string& path) {
        CheckpointData data;
        data.header = {{"kind", "train"},
                       {"step", step_},
                       {"phase", cfg_.phase},
                       {"model", to_json(model_->cfg)},
                       {"adam", {{"lr", state_.cfg.lr},
                                 {"beta1", state_.cfg.beta1},
                                 {"beta2", state_.cfg.beta2},
                                 {"eps", state_.cfg.eps},
                                 {"step", state_.step}}}};
        for (auto& [name, t] : model_->named_params()) data.arrays.emplace_back(name, *t);
        for (std::size_t i = 0; i < params_.size(); ++i) {
            data.arrays.emplace_back("adam.m." + params_[i].first, Tensor(params_[i].second->shape, state_.m[i]));
            data.arrays.emplace_back("adam.v." + params_[i].first, Tensor(params_[i].second->shape, state_.v[i]));
        }
        save_checkpoint(data, path);
    }

    void load(const std::string& path) {
        const CheckpointData data = load_checkpoint(path);
        if (data.header.value("kind", "") != "train") throw DataError("not a training checkpoint: " + path);
        for (auto& [name, t] : model_->named_params()) {
            const Tensor* saved = data.find(name);
            if (saved == nullptr || saved->shape != t->shape)
                throw DataError("checkpoint " + path + " does not match the model (parameter " + name + ")");
            t->data = saved->data;
        }
        for (std::size_t i = 0; i < params_.size(); ++i) {
            const Tensor* m = data.find("adam.m." + params_[i].first);
            const Tensor* v = data.find("adam.v." + params_[i].first);
            if (m == nullptr || v == nullptr) throw DataError("checkpoint " + path + " lacks optimizer state");
            state_.m[i] = m->data;
            state_.v[i] = v->data;
        }
        state_.step = data.header.at("adam").at("step").get<std::int64_t>();
        step_ = data.header.at("step").get<std::int64_t>();
    }

private:
    static std::string join(const std::vector<std::string>& parts) {
        std::string out;
        for (const auto& p : parts) {
            if (!out.empty()) out += ',';
            out += p;
        }
        return out;
    }

    Model* model_;
    TrainSet images_, videos_, eval_;
    TrainConfig cfg_;
    std::vector<std::pair<std::string, Tensor*>> params_;
    AdamState state_;
    std::int64_t step_ = 0;
};

// Rebuild a captioner from a training checkpoint alone: the header carries the
// model geometry and the arrays carry every parameter, frozen ones included.
inline Model load_captioner(const std::string& path) {
    const CheckpointData data = load_checkpoint(path);
    if (data.header.value("kind", "") != "train") throw DataError("not a training checkpoint: " + path);
    if (!data.header.contains("model")) throw DataError("checkpoint " + path + " lacks a model config");
    Model m = init_model(model_config_from_json(data.header.at("model")));
    for (auto& [name, t] : m.named_params()) {
        const Tensor* saved = data.find(name);
        if (saved == nullptr || saved->shape != t->shape)
            throw DataError("checkpoint " + path + " does not match the model (parameter " + name + ")");
        t->data = saved->data;
    }
    return m;
}

}  // namespace vidcap
