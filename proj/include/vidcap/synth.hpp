#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "vidcap/errors.hpp"
#include "vidcap/rng.hpp"
#include "vidcap/shard.hpp"
#include "vidcap/tensor.hpp"
#include "vidcap/vocab.hpp"

namespace vidcap {

enum class ShapeKind { circle, square, triangle, cross };
enum class ColorKind { red, green, blue, yellow };
enum class MotionKind { none, left, right, up, down };

inline const char* shape_word(ShapeKind s) {
    switch (s) {
        case ShapeKind::circle: return "circle";
        case ShapeKind::square: return "square";
        case ShapeKind::triangle: return "triangle";
        case ShapeKind::cross: return "cross";
    }
    return "?";
}

inline const char* color_word(ColorKind c) {
    switch (c) {
        case ColorKind::red: return "red";
        case ColorKind::green: return "green";
        case ColorKind::blue: return "blue";
        case ColorKind::yellow: return "yellow";
    }
    return "?";
}

inline const char* motion_word(MotionKind m) {
    switch (m) {
        case MotionKind::none: return "none";
        case MotionKind::left: return "left";
        case MotionKind::right: return "right";
        case MotionKind::up: return "up";
        case MotionKind::down: return "down";
    }
    return "?";
}

// One moving shape on a black background. The id string is the scene's full
// identity: videos regenerate from it, and split membership hashes it.
struct SceneSpec {
    ShapeKind shape = ShapeKind::circle;
    ColorKind color = ColorKind::red;
    MotionKind motion = MotionKind::none;
    std::int64_t start_x = 16, start_y = 16;
    std::int64_t speed = 1;

    std::string id() const {
        return std::string("synth:") + shape_word(shape) + ":" + color_word(color) + ":" + motion_word(motion) +
               ":x" + std::to_string(start_x) + ":y" + std::to_string(start_y) + ":v" + std::to_string(speed);
    }

    std::uint64_t hash() const { return fnv1a64(id()); }
};

namespace synth_detail {

constexpr std::int64_t kRadius = 4;

inline std::array<double, 3> palette(ColorKind c) {
    switch (c) {
        case ColorKind::red: return {1.0, 0.0, 0.0};
        case ColorKind::green: return {0.0, 1.0, 0.0};
        case ColorKind::blue: return {0.0, 0.0, 1.0};
        case ColorKind::yellow: return {1.0, 1.0, 0.0};
    }
    return {0, 0, 0};
}

inline bool in_mask(ShapeKind s, std::int64_t dx, std::int64_t dy) {
    const std::int64_t r = kRadius;
    switch (s) {
        case ShapeKind::circle: return dx * dx + dy * dy <= r * r;
        case ShapeKind::square: return std::abs(dx) <= r && std::abs(dy) <= r;
        case ShapeKind::triangle: return std::abs(dy) <= r && 2 * std::abs(dx) <= dy + r;
        case ShapeKind::cross: return (std::abs(dx) <= 1 && std::abs(dy) <= r) || (std::abs(dy) <= 1 && std::abs(dx) <= r);
    }
    return false;
}

inline void motion_delta(MotionKind m, std::int64_t& dx, std::int64_t& dy) {
    dx = dy = 0;
    switch (m) {
        case MotionKind::left: dx = -1; break;
        case MotionKind::right: dx = 1; break;
        case MotionKind::up: dy = -1; break;
        case MotionKind::down: dy = 1; break;
        case MotionKind::none: break;
    }
}

}  // namespace synth_detail

inline std::string gt_caption(const SceneSpec& spec) {
    std::string base = std::string("a ") + color_word(spec.color) + " " + shape_word(spec.shape);
    if (spec.motion == MotionKind::none) return base + " standing still";
    return base + " moving " + motion_word(spec.motion);
}

// Deterministic raster [t,h,w,3] with values in {0,1}. Throws if the
// trajectory would leave the frame at any step.
inline Tensor gen_video(const SceneSpec& spec, std::int64_t t, std::int64_t h, std::int64_t w) {
    using namespace synth_detail;
    std::int64_t mx, my;
    motion_delta(spec.motion, mx, my);
    Tensor video = Tensor::zeros({t, h, w, 3});
    const auto rgb = palette(spec.color);
    for (std::int64_t i = 0; i < t; ++i) {
        const std::int64_t cx = spec.start_x + mx * spec.speed * i;
        const std::int64_t cy = spec.start_y + my * spec.speed * i;
        if (cx < kRadius || cx > w - 1 - kRadius || cy < kRadius || cy > h - 1 - kRadius)
            throw DataError("trajectory leaves the frame: " + spec.id());
        for (std::int64_t dy = -kRadius; dy <= kRadius; ++dy)
            for (std::int64_t dx = -kRadius; dx <= kRadius; ++dx) {
                if (!in_mask(spec.shape, dx, dy)) continue;
                double* px = video.data.data() + (((i * h + cy + dy) * w) + cx + dx) * 3;
                px[0] = rgb[0];
                px[1] = rgb[1];
                px[2] = rgb[2];
            }
    }
    return video;
}

inline Tensor frame_of(const Tensor& video, std::int64_t i) {
    if (video.rank() != 4) throw ShapeError("expected [t,h,w,3] video, got " + shape_str(video.shape));
    const std::int64_t h = video.shape[1], w = video.shape[2], c = video.shape[3];
    if (i < 0 || i >= video.shape[0]) throw ShapeError("frame index out of range");
    std::vector<double> data(video.data.begin() + static_cast<std::ptrdiff_t>(i * h * w * c),
                             video.data.begin() + static_cast<std::ptrdiff_t>((i + 1) * h * w * c));
    return Tensor({h, w, c}, std::move(data));
}

// Rule-based frame captioner: color from an exact-palette histogram, shape
// from template matching at the detected centroid. Deliberately silent about
// motion; anything unrecognized degrades to "an object".
inline std::string stub_caption(const Tensor& frame) {
    using namespace synth_detail;
    if (frame.rank() != 3 || frame.shape[2] != 3) throw ShapeError("expected [h,w,3] frame, got " + shape_str(frame.shape));
    const std::int64_t h = frame.shape[0], w = frame.shape[1];
    int color_count[4] = {0, 0, 0, 0};
    std::int64_t min_x = w, max_x = -1, min_y = h, max_y = -1;
    std::vector<std::uint8_t> lit(static_cast<std::size_t>(h * w), 0);
    for (std::int64_t y = 0; y < h; ++y)
        for (std::int64_t x = 0; x < w; ++x) {
            const double* px = frame.data.data() + (y * w + x) * 3;
            if (px[0] == 0.0 && px[1] == 0.0 && px[2] == 0.0) continue;
            lit[static_cast<std::size_t>(y * w + x)] = 1;
            min_x = std::min(min_x, x);
            max_x = std::max(max_x, x);
            min_y = std::min(min_y, y);
            max_y = std::max(max_y, y);
            for (int c = 0; c < 4; ++c) {
                const auto rgb = palette(static_cast<ColorKind>(c));
                if (px[0] == rgb[0] && px[1] == rgb[1] && px[2] == rgb[2]) ++color_count[c];
            }
        }
    if (max_x < 0) return "an object";
    int best_color = 0, lit_total = 0;
    for (int c = 0; c < 4; ++c) {
        lit_total += color_count[c];
        if (color_count[c] > color_count[best_color]) best_color = c;
    }
    std::int64_t lit_seen = 0;
    for (auto v : lit) lit_seen += v;
    if (color_count[best_color] != lit_seen || lit_total != lit_seen) return "an object";

    const std::int64_t cx = (min_x + max_x) / 2, cy = (min_y + max_y) / 2;
    int matches = 0;
    ShapeKind found = ShapeKind::circle;
    for (int s = 0; s < 4; ++s) {
        const ShapeKind cand = static_cast<ShapeKind>(s);
        bool ok = true;
        for (std::int64_t y = 0; y < h && ok; ++y)
            for (std::int64_t x = 0; x < w && ok; ++x) {
                const bool expect = std::abs(x - cx) <= kRadius && std::abs(y - cy) <= kRadius &&
                                    in_mask(cand, x - cx, y - cy);
                if (expect != static_cast<bool>(lit[static_cast<std::size_t>(y * w + x)])) ok = false;
            }
        if (ok) {
            ++matches;
            found = cand;
        }
    }
    if (matches != 1) return "an object";
    return std::string("a ") + color_word(static_cast<ColorKind>(best_color)) + " " + shape_word(found);
}

// Uniform random scene whose full trajectory stays inside [0,h)x[0,w).
// Motion/speed combinations whose travel cannot fit the frame at this length
// are rejected and resampled (static scenes always fit, so this terminates
// whenever the shape itself fits).
inline SceneSpec random_scene(Rng& rng, std::int64_t t, std::int64_t h, std::int64_t w) {
    using synth_detail::kRadius;
    for (int attempt = 0; attempt < 1024; ++attempt) {
        SceneSpec s;
        s.shape = static_cast<ShapeKind>(rng.uniform_int(4));
        s.color = static_cast<ColorKind>(rng.uniform_int(4));
        s.motion = static_cast<MotionKind>(rng.uniform_int(5));
        s.speed = 1 + rng.uniform_int(2);
        std::int64_t mx, my;
        synth_detail::motion_delta(s.motion, mx, my);
        const std::int64_t travel = s.speed * (t - 1);
        const std::int64_t lo_x = kRadius + (mx < 0 ? travel : 0), hi_x = w - 1 - kRadius - (mx > 0 ? travel : 0);
        const std::int64_t lo_y = kRadius + (my < 0 ? travel : 0), hi_y = h - 1 - kRadius - (my > 0 ? travel : 0);
        if (lo_x > hi_x || lo_y > hi_y) continue;
        s.start_x = lo_x + rng.uniform_int(hi_x - lo_x + 1);
        s.start_y = lo_y + rng.uniform_int(hi_y - lo_y + 1);
        return s;
    }
    throw ConfigError("frame too small for any scene");
}

// ---------------------------------------------------------------------------
// Corpus generation
// ---------------------------------------------------------------------------

enum class Split { pretrain, finetune, eval };
enum class CorpusMode { pseudo, asr, gt, image };

inline const char* split_name(Split s) {
    switch (s) {
        case Split::pretrain: return "pretrain";
        case Split::finetune: return "finetune";
        case Split::eval: return "eval";
    }
    return "?";
}

inline const char* corpus_mode_name(CorpusMode m) {
    switch (m) {
        case CorpusMode::pseudo: return "pseudo";
        case CorpusMode::asr: return "asr";
        case CorpusMode::gt: return "gt";
        case CorpusMode::image: return "image";
    }
    return "?";
}

// Splits partition scenes by hash bucket, so no eval scene can appear in any
// training corpus of any mode.
inline bool in_split(const SceneSpec& spec, Split split) {
    const std::uint64_t b = spec.hash() % 8;
    switch (split) {
        case Split::pretrain: return b <= 4;
        case Split::finetune: return b == 5 || b == 6;
        case Split::eval: return b == 7;
    }
    return false;
}

inline std::string chatter_sentence(Rng& rng) {
    const Vocab& vocab = Vocab::instance();
    const int words = 6 + static_cast<int>(rng.uniform_int(5));
    std::vector<int> ids;
    for (int i = 0; i < words; ++i) ids.push_back(20 + static_cast<int>(rng.uniform_int(44)));
    return vocab.decode_words(ids);
}

inline SceneSpec scene_for(Split split, std::uint64_t seed, std::uint64_t index, std::int64_t t, std::int64_t h,
                           std::int64_t w) {
    Rng rng = Rng::stream(seed, "scene", static_cast<std::uint64_t>(split), index);
    for (;;) {
        SceneSpec s = random_scene(rng, t, h, w);
        if (in_split(s, split)) return s;
    }
}

// Default clip convention: 1 frame per second, so an 8-frame video is one
// 8-second clip whose center frame is frame 4.
inline std::vector<ClipRecord> gen_corpus(std::int64_t n, Split split, CorpusMode mode, std::uint64_t seed,
                                          std::int64_t t = 8, std::int64_t h = 32, std::int64_t w = 32) {
    if (n <= 0) throw ConfigError("gen_corpus needs n > 0");
    std::vector<ClipRecord> out;
    out.reserve(static_cast<std::size_t>(n));
    for (std::int64_t k = 0; k < n; ++k) {
        const SceneSpec spec = scene_for(split, seed, static_cast<std::uint64_t>(k), t, h, w);
        ClipRecord r;
        r.clip_index = 0;
        switch (mode) {
            case CorpusMode::gt: {
                r.video_id = spec.id();
                r.start_s = 0.0;
                r.end_s = static_cast<double>(t);
                r.center_s = static_cast<double>(t) / 2.0;
                r.caption = gt_caption(spec);
                r.source = "synthetic-gt";
                break;
            }
            case CorpusMode::pseudo: {
                r.video_id = spec.id();
                r.start_s = 0.0;
                r.end_s = static_cast<double>(t);
                r.center_s = static_cast<double>(t) / 2.0;
                const Tensor video = gen_video(spec, t, h, w);
                r.caption = stub_caption(frame_of(video, t / 2));
                r.source = "pseudo";
                r.captioner = "stub-v1";
                break;
            }
            case CorpusMode::asr: {
                r.video_id = spec.id();
                r.start_s = 0.0;
                r.end_s = static_cast<double>(t);
                r.center_s = static_cast<double>(t) / 2.0;
                Rng noise = Rng::stream(seed, "asr", static_cast<std::uint64_t>(split), static_cast<std::uint64_t>(k));
                r.caption = noise.bernoulli(0.55) ? chatter_sentence(noise) : gt_caption(spec);
                r.source = "asr";
                break;
            }
            case CorpusMode::image: {
                Rng pick = Rng::stream(seed, "img", static_cast<std::uint64_t>(split), static_cast<std::uint64_t>(k));
                const std::int64_t j = pick.uniform_int(t);
                r.video_id = "synthimg:" + spec.id().substr(6) + ":f" + std::to_string(j);
                r.start_s = static_cast<double>(j);
                r.end_s = static_cast<double>(j + 1);
                r.center_s = static_cast<double>(j) + 0.5;
                const Tensor video = gen_video(spec, t, h, w);
                r.caption = stub_caption(frame_of(video, j));
                r.source = "pseudo";
                r.captioner = "stub-v1";
                break;
            }
        }
        r.validate();
        out.push_back(std::move(r));
    }
    return out;
}

// Inverse of the id convention above; regenerates the pixel tensor a record
// refers to. Image ids yield a one-frame video.
struct ParsedVideoId {
    SceneSpec spec;
    bool is_image = false;
    std::int64_t frame = 0;
};

inline ParsedVideoId parse_video_id(const std::string& id) {
    auto fail = [&]() -> void { throw DataError("unparseable video id: " + id); };
    ParsedVideoId p;
    std::string rest;
    if (id.rfind("synthimg:", 0) == 0) {
        p.is_image = true;
        rest = id.substr(9);
    } else if (id.rfind("synth:", 0) == 0) {
        rest = id.substr(6);
    } else {
        fail();
    }
    std::vector<std::string> parts;
    std::size_t pos = 0;
    while (pos <= rest.size()) {
        const std::size_t next = rest.find(':', pos);
        if (next == std::string::npos) {
            parts.push_back(rest.substr(pos));
            break;
        }
        parts.push_back(rest.substr(pos, next - pos));
        pos = next + 1;
    }
    if (parts.size() != (p.is_image ? 7u : 6u)) fail();
    auto match = [&](const std::string& word, auto namer, int count) {
        for (int i = 0; i < count; ++i)
            if (word == namer(i)) return i;
        fail();
        return -1;
    };
    p.spec.shape = static_cast<ShapeKind>(match(parts[0], [](int i) { return shape_word(static_cast<ShapeKind>(i)); }, 4));
    p.spec.color = static_cast<ColorKind>(match(parts[1], [](int i) { return color_word(static_cast<ColorKind>(i)); }, 4));
    p.spec.motion =
        static_cast<MotionKind>(match(parts[2], [](int i) { return motion_word(static_cast<MotionKind>(i)); }, 5));
    try {
        if (parts[3].at(0) != 'x' || parts[4].at(0) != 'y' || parts[5].at(0) != 'v') fail();
        p.spec.start_x = std::stoll(parts[3].substr(1));
        p.spec.start_y = std::stoll(parts[4].substr(1));
        p.spec.speed = std::stoll(parts[5].substr(1));
        if (p.is_image) {
            if (parts[6].at(0) != 'f') fail();
            p.frame = std::stoll(parts[6].substr(1));
        }
    } catch (const std::logic_error&) {
        fail();
    }
    return p;
}

inline Tensor video_for_record(const std::string& video_id, std::int64_t t, std::int64_t h, std::int64_t w) {
    const ParsedVideoId p = parse_video_id(video_id);
    Tensor full = gen_video(p.spec, t, h, w);
    if (!p.is_image) return full;
    Tensor frame = frame_of(full, p.frame);
    return Tensor({1, h, w, 3}, std::move(frame.data));
}

}  // namespace vidcap
