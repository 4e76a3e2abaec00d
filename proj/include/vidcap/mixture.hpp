#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "vidcap/errors.hpp"
#include "vidcap/rng.hpp"
#include "vidcap/shard.hpp"

namespace vidcap {

enum class Modality { image, video };

inline const char* modality_name(Modality m) { return m == Modality::image ? "image" : "video"; }

struct MixtureConfig {
    double p_image = 0.95;
    std::int64_t image_batch = 16;  // roughly eight times the video batch
    std::int64_t video_batch = 2;
    int workers = 2;
    bool synchronized = false;  // one shared modality draw per step
    std::uint64_t seed = 0;

    void validate() const {
        if (p_image < 0.0 || p_image > 1.0) throw ConfigError("p_image must lie in [0,1]");
        if (image_batch < 1 || video_batch < 1) throw ConfigError("batch sizes must be >= 1");
        if (workers < 1) throw ConfigError("need at least one worker");
    }
};

inline MixtureConfig fully_synchronized_mode(MixtureConfig cfg) {
    cfg.synchronized = true;
    return cfg;
}

// Modality of (worker, step). Independent per-worker streams by default; in
// synchronized mode every worker shares the step's single draw.
inline Modality sample_modality(const MixtureConfig& cfg, int worker, std::int64_t step) {
    cfg.validate();
    if (worker < 0 || worker >= cfg.workers) throw ConfigError("worker id out of range");
    Rng rng = cfg.synchronized ? Rng::stream(cfg.seed, "modality-sync", static_cast<std::uint64_t>(step))
                               : Rng::stream(cfg.seed, "modality", static_cast<std::uint64_t>(worker),
                                             static_cast<std::uint64_t>(step));
    return rng.bernoulli(cfg.p_image) ? Modality::image : Modality::video;
}

inline std::int64_t batch_size(const MixtureConfig& cfg, Modality m) {
    return m == Modality::image ? cfg.image_batch : cfg.video_batch;
}

// Homogeneous batch for one worker at one step: indexes into the corpus of
// the drawn modality. Sampling is with replacement from an independent
// stream, so batches depend only on (seed, worker, step).
struct MixtureBatch {
    Modality modality = Modality::image;
    std::vector<std::size_t> indices;
};

inline MixtureBatch sample_batch(const MixtureConfig& cfg, int worker, std::int64_t step, std::size_t image_corpus_size,
                                 std::size_t video_corpus_size) {
    MixtureBatch batch;
    batch.modality = sample_modality(cfg, worker, step);
    const std::size_t corpus = batch.modality == Modality::image ? image_corpus_size : video_corpus_size;
    if (corpus == 0)
        throw DataError(std::string("empty ") + modality_name(batch.modality) + " corpus at step " +
                        std::to_string(step));
    Rng rng = Rng::stream(cfg.seed, "batch", static_cast<std::uint64_t>(worker), static_cast<std::uint64_t>(step));
    const std::int64_t n = batch_size(cfg, batch.modality);
    for (std::int64_t i = 0; i < n; ++i)
        batch.indices.push_back(static_cast<std::size_t>(rng.uniform_int(static_cast<std::int64_t>(corpus))));
    return batch;
}

}  // namespace vidcap
