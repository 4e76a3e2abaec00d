#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "vidcap/metrics.hpp"
#include "vidcap/model.hpp"
#include "vidcap/trainer.hpp"

namespace vidcap {

// ---------------------------------------------------------------------------
// Model evaluation over caption shards: loss/perplexity, teacher-forced token
// accuracy (with the motion-word slice broken out), and generation-based
// CIDEr-D against the shard captions as references.
// ---------------------------------------------------------------------------

struct EvalResult {
    double loss = 0.0;            // token-weighted mean NLL
    double perplexity = 1.0;      // exp(loss)
    double token_accuracy = 0.0;  // teacher-forced argmax, all target positions
    double motion_accuracy = 0.0; // same, restricted to motion-word targets
    double cider = 0.0;           // greedy generations scored against references
    std::int64_t tokens = 0;
    std::int64_t motion_tokens = 0;
    std::int64_t samples = 0;
};

namespace eval_detail {

struct Counts {
    std::int64_t hits = 0, total = 0, motion_hits = 0, motion_total = 0;
    double nll_sum = 0.0;
};

inline void accumulate(Model& m, const TrainSample& s, Counts& c) {
    const Vocab& vocab = Vocab::instance();
    const auto preds = teacher_forced_predictions(m, s.features, s.tokens);
    const auto nlls = token_nlls(m, s.features, s.tokens);
    for (std::size_t j = 0; j + 1 < s.tokens.ids.size(); ++j) {
        const int target = s.tokens.ids[j + 1];
        const bool hit = preds[j] == target;
        ++c.total;
        c.hits += hit ? 1 : 0;
        if (vocab.is_motion_word(target)) {
            ++c.motion_total;
            c.motion_hits += hit ? 1 : 0;
        }
        c.nll_sum += nlls[j];
    }
}

}  // namespace eval_detail

// Teacher-forced metrics only (no generation); cheap enough for periodic use.
inline EvalResult evaluate_teacher_forced(Model& m, const TrainSet& set) {
    if (set.empty()) throw DataError("evaluation set is empty");
    eval_detail::Counts c;
    for (const auto& s : set.samples) eval_detail::accumulate(m, s, c);
    EvalResult r;
    r.samples = static_cast<std::int64_t>(set.size());
    r.tokens = c.total;
    r.motion_tokens = c.motion_total;
    r.loss = c.nll_sum / static_cast<double>(c.total);
    r.perplexity = std::exp(r.loss);
    r.token_accuracy = static_cast<double>(c.hits) / static_cast<double>(c.total);
    r.motion_accuracy =
        c.motion_total == 0 ? 0.0 : static_cast<double>(c.motion_hits) / static_cast<double>(c.motion_total);
    return r;
}

inline double token_accuracy(Model& m, const TrainSet& set) { return evaluate_teacher_forced(m, set).token_accuracy; }

inline double perplexity(Model& m, const TrainSet& set) { return evaluate_teacher_forced(m, set).perplexity; }

// Full evaluation straight from records: adds greedy-generation CIDEr-D with
// the record captions as single references.
inline EvalResult evaluate(Model& m, const std::vector<ClipRecord>& records) {
    const TrainSet set = build_train_set(m, records);
    EvalResult r = evaluate_teacher_forced(m, set);

    const Vocab& vocab = Vocab::instance();
    GenerateConfig gen;  // greedy
    gen.max_len = m.cfg.max_caption;
    std::vector<EvalPair> pairs;
    for (const auto& rec : records) {
        if (rec.failed || rec.caption.empty()) continue;
        const Tensor video = video_for_record(rec.video_id, m.cfg.max_t, m.cfg.frame_h, m.cfg.frame_w);
        const CaptionTokens cap = generate(m, video, gen);
        std::string text = vocab.decode_words(cap.ids);
        if (text.empty()) text = "an object";  // degenerate generation scores like the stub fallback
        pairs.push_back(make_eval_pair(text, {rec.caption}));
    }
    r.cider = cider_d(pairs);
    return r;
}

}  // namespace vidcap
