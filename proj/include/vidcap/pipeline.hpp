#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <memory>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "vidcap/errors.hpp"
#include "vidcap/rng.hpp"
#include "vidcap/shard.hpp"
#include "vidcap/synth.hpp"
#include "vidcap/tensor.hpp"

namespace vidcap {

struct AsrSpan {
    double start_s = 0.0;
    double end_s = 0.0;
    std::string text;
};

struct VideoManifestEntry {
    std::string video_id;
    double duration_s = 0.0;
    double fps = 1.0;
    std::string locator;  // synthetic corpus: the regenerable video id
    std::vector<AsrSpan> asr_spans;

    void validate() const {
        if (video_id.empty()) throw DataError("manifest entry without video id");
        if (duration_s <= 0.0) throw DataError("non-positive duration for " + video_id);
        if (fps <= 0.0) throw DataError("non-positive frame rate for " + video_id);
        for (const auto& s : asr_spans)
            if (s.start_s < 0.0 || s.end_s > duration_s || s.end_s <= s.start_s)
                throw DataError("ASR span outside [0,duration) for " + video_id);
    }
};

inline nlohmann::json to_json(const VideoManifestEntry& e) {
    nlohmann::json spans = nlohmann::json::array();
    for (const auto& s : e.asr_spans) spans.push_back({{"start_s", s.start_s}, {"end_s", s.end_s}, {"text", s.text}});
    return {{"video_id", e.video_id}, {"duration_s", e.duration_s}, {"fps", e.fps}, {"locator", e.locator},
            {"asr", spans}};
}

inline VideoManifestEntry manifest_entry_from_json(const nlohmann::json& j) {
    VideoManifestEntry e;
    e.video_id = j.at("video_id").get<std::string>();
    e.duration_s = j.at("duration_s").get<double>();
    e.fps = j.at("fps").get<double>();
    e.locator = j.value("locator", std::string{});
    for (const auto& s : j.value("asr", nlohmann::json::array()))
        e.asr_spans.push_back({s.at("start_s").get<double>(), s.at("end_s").get<double>(), s.at("text").get<std::string>()});
    e.validate();
    return e;
}

inline std::vector<VideoManifestEntry> read_manifest(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open manifest " + path);
    std::vector<VideoManifestEntry> out;
    std::string line;
    std::int64_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        try {
            out.push_back(manifest_entry_from_json(nlohmann::json::parse(line)));
        } catch (const nlohmann::json::exception& e) {
            throw DataError(path + ":" + std::to_string(lineno) + ": malformed manifest entry: " + e.what());
        } catch (const DataError& e) {
            throw DataError(path + ":" + std::to_string(lineno) + ": " + e.what());
        }
    }
    return out;
}

inline void write_manifest(const std::vector<VideoManifestEntry>& entries, const std::string& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write manifest " + path);
    for (const auto& e : entries) {
        e.validate();
        out << to_json(e).dump() << '\n';
    }
}

// ---------------------------------------------------------------------------
// Chunking
// ---------------------------------------------------------------------------

struct Clip {
    double start_s = 0.0;
    double end_s = 0.0;
};

// Consecutive clip_len windows partitioning [0, duration). A trailing
// remainder shorter than clip_len/2 merges into the previous clip; longer
// remainders become a final short clip.
inline std::vector<Clip> chunk_video(double duration_s, double clip_len_s = 8.0) {
    if (duration_s <= 0.0) throw DataError("chunk_video needs positive duration");
    if (clip_len_s <= 0.0) throw ConfigError("chunk_video needs positive clip length");
    std::vector<Clip> clips;
    const auto full = static_cast<std::int64_t>(std::floor(duration_s / clip_len_s));
    for (std::int64_t k = 0; k < full; ++k)
        clips.push_back({static_cast<double>(k) * clip_len_s, static_cast<double>(k + 1) * clip_len_s});
    const double covered = static_cast<double>(full) * clip_len_s;
    if (covered < duration_s) {
        const double remainder = duration_s - covered;
        if (remainder < clip_len_s / 2.0 && !clips.empty())
            clips.back().end_s = duration_s;
        else
            clips.push_back({covered, duration_s});
    }
    return clips;
}

inline std::int64_t center_frame(const Clip& clip, double fps) {
    return static_cast<std::int64_t>(std::floor((clip.start_s + clip.end_s) / 2.0 * fps));
}

// ---------------------------------------------------------------------------
// Frame decoding and captioner backends
// ---------------------------------------------------------------------------

// One decode call per clip is the pipeline's cost contract; implementations
// must be safe to call from several workers.
class FrameSource {
public:
    virtual ~FrameSource() = default;
    virtual Tensor decode_frame(const VideoManifestEntry& entry, std::int64_t frame_index) = 0;
};

// Regenerates frames from the synthetic corpus ids in entry.locator.
class SynthFrameSource : public FrameSource {
public:
    SynthFrameSource(std::int64_t t, std::int64_t h, std::int64_t w) : t_(t), h_(h), w_(w) {}

    Tensor decode_frame(const VideoManifestEntry& entry, std::int64_t frame_index) override {
        decodes_.fetch_add(1, std::memory_order_relaxed);
        Tensor video = video_for_record(entry.locator.empty() ? entry.video_id : entry.locator, t_, h_, w_);
        const std::int64_t idx = std::clamp<std::int64_t>(frame_index, 0, video.shape[0] - 1);
        return frame_of(video, idx);
    }

    std::int64_t decode_count() const { return decodes_.load(); }

private:
    std::int64_t t_, h_, w_;
    std::atomic<std::int64_t> decodes_{0};
};

struct CaptionResult {
    std::string caption;
    std::string captioner_id;
    bool failed = false;
    std::string error;
};

class CaptionerBackend {
public:
    virtual ~CaptionerBackend() = default;
    virtual CaptionResult caption(const Tensor& frame, std::uint64_t seed) = 0;
    virtual std::string id() const = 0;
};

// Pure rule-based captioner over synthetic rasters.
class StubCaptioner : public CaptionerBackend {
public:
    CaptionResult caption(const Tensor& frame, std::uint64_t) override { return {stub_caption(frame), id(), false, ""}; }
    std::string id() const override { return "stub-v1"; }
};

// Binary PPM (P6) image codec for the captioning wire protocol.
inline std::string encode_ppm(const Tensor& frame) {
    if (frame.rank() != 3 || frame.shape[2] != 3) throw ShapeError("PPM expects [h,w,3], got " + shape_str(frame.shape));
    const std::int64_t h = frame.shape[0], w = frame.shape[1];
    std::string out = "P6\n" + std::to_string(w) + " " + std::to_string(h) + "\n255\n";
    out.reserve(out.size() + static_cast<std::size_t>(h * w * 3));
    for (double v : frame.data) {
        const double c = std::clamp(v, 0.0, 1.0);
        out.push_back(static_cast<char>(static_cast<int>(std::lround(c * 255.0))));
    }
    return out;
}

inline Tensor decode_ppm(const std::string& bytes) {
    std::int64_t w = 0, h = 0, maxval = 0;
    std::size_t pos = 0;
    auto token = [&]() -> std::string {
        while (pos < bytes.size() && (bytes[pos] == ' ' || bytes[pos] == '\n' || bytes[pos] == '\t' || bytes[pos] == '\r'))
            ++pos;
        std::size_t begin = pos;
        while (pos < bytes.size() && !(bytes[pos] == ' ' || bytes[pos] == '\n' || bytes[pos] == '\t' || bytes[pos] == '\r'))
            ++pos;
        return bytes.substr(begin, pos - begin);
    };
    if (token() != "P6") throw DataError("not a binary PPM payload");
    try {
        w = std::stoll(token());
        h = std::stoll(token());
        maxval = std::stoll(token());
    } catch (const std::logic_error&) {
        throw DataError("malformed PPM header");
    }
    if (w <= 0 || h <= 0 || maxval != 255) throw DataError("unsupported PPM geometry");
    ++pos;  // single whitespace after maxval
    if (bytes.size() - pos < static_cast<std::size_t>(h * w * 3)) throw DataError("truncated PPM payload");
    Tensor frame = Tensor::zeros({h, w, 3});
    for (std::size_t i = 0; i < frame.data.size(); ++i)
        frame.data[i] = static_cast<double>(static_cast<unsigned char>(bytes[pos + i])) / 255.0;
    return frame;
}

// Remote captioning service client: one POST per frame, binary PPM payload,
// sampling config in headers, JSON {caption, model} response. Retries
// `retries` extra times, then reports a failure result so the pipeline can
// continue.
class HttpCaptioner : public CaptionerBackend {
public:
    HttpCaptioner(std::string host, int port, double top_p = 0.9, int retries = 2, int timeout_ms = 2000)
        : host_(std::move(host)), port_(port), top_p_(top_p), retries_(retries), timeout_ms_(timeout_ms) {}

    CaptionResult caption(const Tensor& frame, std::uint64_t seed) override;
    std::string id() const override { return "remote:" + host_ + ":" + std::to_string(port_); }

private:
    std::string host_;
    int port_;
    double top_p_;
    int retries_;
    int timeout_ms_;
};

// ---------------------------------------------------------------------------
// Pipeline
// ---------------------------------------------------------------------------

// ASR text mapped onto clips by maximal temporal overlap (ties to the earlier
// clip), concatenated in time order within a clip.
inline std::vector<ClipRecord> asr_records(const VideoManifestEntry& entry, double clip_len_s = 8.0) {
    entry.validate();
    if (entry.asr_spans.empty()) return {};
    const std::vector<Clip> clips = chunk_video(entry.duration_s, clip_len_s);
    std::vector<std::vector<const AsrSpan*>> assigned(clips.size());
    for (const auto& span : entry.asr_spans) {
        std::size_t best = 0;
        double best_overlap = -1.0;
        for (std::size_t c = 0; c < clips.size(); ++c) {
            const double overlap = std::max(0.0, std::min(span.end_s, clips[c].end_s) - std::max(span.start_s, clips[c].start_s));
            if (overlap > best_overlap) {
                best_overlap = overlap;
                best = c;
            }
        }
        if (best_overlap > 0.0) assigned[best].push_back(&span);
    }
    std::vector<ClipRecord> out;
    for (std::size_t c = 0; c < clips.size(); ++c) {
        if (assigned[c].empty()) continue;
        std::stable_sort(assigned[c].begin(), assigned[c].end(),
                         [](const AsrSpan* a, const AsrSpan* b) { return a->start_s < b->start_s; });
        ClipRecord r;
        r.video_id = entry.video_id;
        r.clip_index = static_cast<std::int64_t>(c);
        r.start_s = clips[c].start_s;
        r.end_s = clips[c].end_s;
        r.center_s = (clips[c].start_s + clips[c].end_s) / 2.0;
        for (const AsrSpan* s : assigned[c]) {
            if (!r.caption.empty()) r.caption += ' ';
            r.caption += s->text;
        }
        r.source = "asr";
        r.validate();
        out.push_back(std::move(r));
    }
    return out;
}

// Captions one clip: decodes exactly the center frame, asks the backend once
// (the backend owns its own retry policy), and returns either a caption
// record or a failure record.
inline ClipRecord caption_clip(const VideoManifestEntry& entry, const Clip& clip, std::int64_t clip_index,
                               FrameSource& frames, CaptionerBackend& backend, std::uint64_t seed) {
    ClipRecord r;
    r.video_id = entry.video_id;
    r.clip_index = clip_index;
    r.start_s = clip.start_s;
    r.end_s = clip.end_s;
    r.center_s = (clip.start_s + clip.end_s) / 2.0;
    r.source = "pseudo";
    const Tensor frame = frames.decode_frame(entry, center_frame(clip, entry.fps));
    const std::uint64_t clip_seed = mix_seed(mix_seed(seed, fnv1a64(entry.video_id)), static_cast<std::uint64_t>(clip_index));
    CaptionResult res = backend.caption(frame, clip_seed);
    r.caption = res.caption;
    r.captioner = res.captioner_id;
    r.failed = res.failed;
    r.error = res.error;
    r.validate();
    return r;
}

struct PipelineConfig {
    double clip_len_s = 8.0;
    int workers = 2;
    std::uint64_t seed = 0;
};

struct PipelineResult {
    std::vector<ClipRecord> records;
    std::vector<std::string> skipped;  // decode failures, with reasons
    std::int64_t failures = 0;         // backend failure records
};

// Bounded worker pool over all clips of all entries. Caption seeds derive
// from (pipeline seed, video id, clip index), so output is independent of
// scheduling; records come back sorted by (video id, clip index).
inline PipelineResult run_pipeline(const std::vector<VideoManifestEntry>& entries, FrameSource& frames,
                                   CaptionerBackend& backend, const PipelineConfig& cfg) {
    if (cfg.workers < 1) throw ConfigError("pipeline needs at least one worker");
    struct Task {
        const VideoManifestEntry* entry;
        Clip clip;
        std::int64_t clip_index;
    };
    std::vector<Task> tasks;
    for (const auto& e : entries) {
        e.validate();
        const auto clips = chunk_video(e.duration_s, cfg.clip_len_s);
        for (std::size_t c = 0; c < clips.size(); ++c) tasks.push_back({&e, clips[c], static_cast<std::int64_t>(c)});
    }

    std::vector<ClipRecord> records(tasks.size());
    std::vector<std::uint8_t> ok(tasks.size(), 0);
    std::vector<std::string> skipped(tasks.size());
    std::atomic<std::size_t> next{0};
    auto work = [&]() {
        for (;;) {
            const std::size_t i = next.fetch_add(1);
            if (i >= tasks.size()) return;
            const Task& t = tasks[i];
            try {
                records[i] = caption_clip(*t.entry, t.clip, t.clip_index, frames, backend, cfg.seed);
                ok[i] = 1;
            } catch (const std::exception& e) {
                skipped[i] = t.entry->video_id + "#" + std::to_string(t.clip_index) + ": " + e.what();
            }
        }
    };
    std::vector<std::thread> pool;
    const int n_workers = std::min<int>(cfg.workers, std::max<std::size_t>(tasks.size(), 1));
    for (int w = 1; w < n_workers; ++w) pool.emplace_back(work);
    work();
    for (auto& th : pool) th.join();

    PipelineResult out;
    for (std::size_t i = 0; i < tasks.size(); ++i) {
        if (ok[i]) {
            out.failures += records[i].failed ? 1 : 0;
            out.records.push_back(std::move(records[i]));
        } else {
            out.skipped.push_back(std::move(skipped[i]));
        }
    }
    std::sort(out.records.begin(), out.records.end(), [](const ClipRecord& a, const ClipRecord& b) {
        return a.video_id != b.video_id ? a.video_id < b.video_id : a.clip_index < b.clip_index;
    });
    return out;
}

}  // namespace vidcap
