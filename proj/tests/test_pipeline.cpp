#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "vidcap/pipeline.hpp"
#include "vidcap/remote.hpp"

using namespace vidcap;

namespace {

std::string tmp_path(const std::string& name) {
    return (std::filesystem::temp_directory_path() / name).string();
}

std::string file_bytes(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

VideoManifestEntry synth_entry(std::uint64_t k, double duration_s = 8.0) {
    Rng rng = Rng::stream(900, "pipeline-scene", k);
    // manifest videos run at 1 fps, so a scene must stay in frame for the
    // whole duration for its raster to be regenerable
    SceneSpec spec = random_scene(rng, static_cast<std::int64_t>(std::ceil(duration_s)), 32, 32);
    VideoManifestEntry e;
    e.video_id = spec.id();
    e.duration_s = duration_s;
    e.fps = 1.0;
    e.locator = spec.id();
    return e;
}

// Fails the first `fail_count` caption calls, then behaves like the stub.
class FlakyBackend : public CaptionerBackend {
public:
    explicit FlakyBackend(int fail_count) : remaining_(fail_count) {}
    CaptionResult caption(const Tensor& frame, std::uint64_t seed) override {
        if (remaining_.fetch_sub(1) > 0) return {"", id(), true, "transient outage"};
        return stub_.caption(frame, seed);
    }
    std::string id() const override { return "flaky-v1"; }

private:
    std::atomic<int> remaining_;
    StubCaptioner stub_;
};

// Caption depends on the sampling seed; used to pin per-clip seed derivation.
class SeedEchoBackend : public CaptionerBackend {
public:
    CaptionResult caption(const Tensor&, std::uint64_t seed) override {
        return {"seed " + std::to_string(seed), id(), false, ""};
    }
    std::string id() const override { return "seed-echo"; }
};

}  // namespace

TEST_CASE("chunk_video fixed examples") {
    auto clips = chunk_video(80.0, 8.0);
    REQUIRE(clips.size() == 10);
    for (std::size_t k = 0; k < clips.size(); ++k) {
        CHECK(clips[k].start_s == 8.0 * static_cast<double>(k));
        CHECK(clips[k].end_s == 8.0 * static_cast<double>(k + 1));
    }

    // 3s tail < half a clip: merged into the previous window
    clips = chunk_video(11.0, 8.0);
    REQUIRE(clips.size() == 1);
    CHECK(clips[0].start_s == 0.0);
    CHECK(clips[0].end_s == 11.0);

    // 5s tail >= half a clip: kept as a short final clip
    clips = chunk_video(13.0, 8.0);
    REQUIRE(clips.size() == 2);
    CHECK(clips[0].end_s == 8.0);
    CHECK(clips[1].start_s == 8.0);
    CHECK(clips[1].end_s == 13.0);

    // shorter than one clip: single window regardless of the merge rule
    clips = chunk_video(2.5, 8.0);
    REQUIRE(clips.size() == 1);
    CHECK(clips[0].end_s == 2.5);

    CHECK_THROWS_AS(chunk_video(0.0), DataError);
    CHECK_THROWS_AS(chunk_video(-3.0), DataError);
    CHECK_THROWS_AS(chunk_video(10.0, 0.0), ConfigError);
}

TEST_CASE("chunk_video partitions any duration") {
    Rng rng = Rng::stream(901, "durations");
    for (int trial = 0; trial < 10000; ++trial) {
        const double duration = rng.uniform(0.25, 400.0);
        const auto clips = chunk_video(duration, 8.0);
        REQUIRE(!clips.empty());
        CHECK(clips.front().start_s == 0.0);
        CHECK(clips.back().end_s == duration);
        for (std::size_t k = 0; k + 1 < clips.size(); ++k) CHECK(clips[k].end_s == clips[k + 1].start_s);
        for (const auto& c : clips) CHECK(c.end_s > c.start_s);
        // all but the last are exactly one clip length; the last stays within
        // [half, one-and-a-half) clip lengths whenever a full clip precedes it
        for (std::size_t k = 0; k + 1 < clips.size(); ++k) CHECK(clips[k].end_s - clips[k].start_s == 8.0);
        if (clips.size() >= 2) {
            const double last = clips.back().end_s - clips.back().start_s;
            CHECK(last >= 4.0);
            CHECK(last < 12.0);
        }
    }
}

TEST_CASE("center_frame uses the floor of the midpoint") {
    CHECK(center_frame({0.0, 8.0}, 25.0) == 100);
    CHECK(center_frame({8.0, 13.0}, 25.0) == 262);  // floor(10.5 * 25)
    CHECK(center_frame({0.0, 8.0}, 1.0) == 4);
    CHECK(center_frame({0.0, 1.0}, 1.0) == 0);  // one-frame clip maps to frame 0

    // the center frame index always lands strictly inside the clip's frames
    Rng rng = Rng::stream(902, "center");
    for (int trial = 0; trial < 2000; ++trial) {
        const double duration = rng.uniform(0.5, 200.0);
        const double fps = rng.uniform(1.0, 60.0);
        for (const auto& c : chunk_video(duration, 8.0)) {
            const auto f = center_frame(c, fps);
            CHECK(f >= static_cast<std::int64_t>(std::floor(c.start_s * fps)));
            CHECK(f <= static_cast<std::int64_t>(std::ceil(c.end_s * fps)));
        }
    }
}

TEST_CASE("manifest entries round trip through JSONL") {
    std::vector<VideoManifestEntry> entries;
    for (std::uint64_t k = 0; k < 5; ++k) {
        auto e = synth_entry(k, 20.0 + static_cast<double>(k));
        e.asr_spans.push_back({1.0, 4.0, "a red square moving left"});
        e.asr_spans.push_back({9.0, 12.5, "chatter about nothing"});
        entries.push_back(std::move(e));
    }
    const std::string path = tmp_path("vidcap_manifest_test.jsonl");
    write_manifest(entries, path);
    const auto back = read_manifest(path);
    REQUIRE(back.size() == entries.size());
    for (std::size_t i = 0; i < back.size(); ++i) {
        CHECK(back[i].video_id == entries[i].video_id);
        CHECK(back[i].duration_s == entries[i].duration_s);
        REQUIRE(back[i].asr_spans.size() == 2);
        CHECK(back[i].asr_spans[1].text == "chatter about nothing");
    }
    std::remove(path.c_str());

    VideoManifestEntry bad = entries[0];
    bad.asr_spans.push_back({19.0, 30.0, "past the end"});
    CHECK_THROWS_AS(bad.validate(), DataError);
    bad = entries[0];
    bad.duration_s = 0.0;
    CHECK_THROWS_AS(bad.validate(), DataError);
}

TEST_CASE("asr spans map to clips by maximal overlap") {
    VideoManifestEntry e = synth_entry(0, 24.0);
    // straddles clips 0 and 1 with 6s vs 2s overlap: belongs to clip 0
    e.asr_spans.push_back({2.0, 10.0, "mostly in the first clip"});
    // fully inside clip 2
    e.asr_spans.push_back({17.0, 19.0, "inside the third clip"});
    // also clip 2, but earlier: concatenation must follow time order
    e.asr_spans.push_back({16.0, 16.5, "starts"});

    const auto records = asr_records(e, 8.0);
    REQUIRE(records.size() == 2);
    CHECK(records[0].clip_index == 0);
    CHECK(records[0].caption == "mostly in the first clip");
    CHECK(records[0].source == "asr");
    CHECK(records[1].clip_index == 2);
    CHECK(records[1].caption == "starts inside the third clip");

    // clip 1 got nothing: no empty record for it
    for (const auto& r : records) CHECK(r.clip_index != 1);

    // no spans at all yields no records
    VideoManifestEntry silent = synth_entry(1, 24.0);
    CHECK(asr_records(silent, 8.0).empty());

    // an exact tie in overlap goes to the earlier clip
    VideoManifestEntry tied = synth_entry(2, 16.0);
    tied.asr_spans.push_back({6.0, 10.0, "tie"});
    const auto tied_records = asr_records(tied, 8.0);
    REQUIRE(tied_records.size() == 1);
    CHECK(tied_records[0].clip_index == 0);
}

TEST_CASE("PPM codec is exact on the palette grid") {
    Tensor frame = Tensor::zeros({5, 7, 3});
    for (std::size_t i = 0; i < frame.data.size(); ++i)
        frame.data[i] = static_cast<double>(i % 256) / 255.0;
    const Tensor back = decode_ppm(encode_ppm(frame));
    REQUIRE(back.shape == frame.shape);
    for (std::size_t i = 0; i < frame.data.size(); ++i) CHECK(back.data[i] == frame.data[i]);

    // synthetic frames use an exact palette which survives quantization
    Rng prng = Rng::stream(3, "ppm", 0);
    const Tensor synth = frame_of(gen_video(random_scene(prng, 8, 32, 32), 8, 32, 32), 4);
    const Tensor synth_back = decode_ppm(encode_ppm(synth));
    CHECK(stub_caption(synth_back) == stub_caption(synth));
    for (std::size_t i = 0; i < synth.data.size(); ++i) CHECK(synth_back.data[i] == synth.data[i]);

    CHECK_THROWS_AS(decode_ppm("P5\n2 2\n255\nxxxx"), DataError);
    CHECK_THROWS_AS(decode_ppm("P6\n2 2\n255\nxx"), DataError);
    CHECK_THROWS_AS(decode_ppm("P6\n2 2\n65535\n"), DataError);
}

TEST_CASE("caption_clip decodes exactly one frame and stub output matches the raster") {
    VideoManifestEntry e = synth_entry(4);
    SynthFrameSource frames(8, 32, 32);
    StubCaptioner backend;
    const auto clips = chunk_video(e.duration_s, 8.0);
    REQUIRE(clips.size() == 1);
    const ClipRecord r = caption_clip(e, clips[0], 0, frames, backend, 77);
    CHECK(frames.decode_count() == 1);
    CHECK(r.source == "pseudo");
    CHECK(r.captioner == "stub-v1");
    CHECK(!r.failed);

    const Tensor center = frame_of(video_for_record(e.video_id, 8, 32, 32), 4);
    CHECK(r.caption == stub_caption(center));
}

TEST_CASE("run_pipeline output is sorted, deterministic, and worker-count invariant") {
    std::vector<VideoManifestEntry> entries;
    for (std::uint64_t k = 0; k < 6; ++k) entries.push_back(synth_entry(10 + k, 20.0));
    std::sort(entries.begin(), entries.end(),
              [](const auto& a, const auto& b) { return a.video_id > b.video_id; });  // feed in reverse order

    SynthFrameSource frames(20, 32, 32);
    StubCaptioner backend;
    PipelineConfig cfg;
    cfg.workers = 3;
    cfg.seed = 5;
    const PipelineResult result = run_pipeline(entries, frames, backend, cfg);
    REQUIRE(result.records.size() == 6 * 3);  // each 20s video chunks into [0,8) [8,16) [16,20)
    CHECK(result.skipped.empty());
    CHECK(result.failures == 0);

    for (std::size_t i = 0; i + 1 < result.records.size(); ++i) {
        const auto& a = result.records[i];
        const auto& b = result.records[i + 1];
        CHECK((a.video_id < b.video_id || (a.video_id == b.video_id && a.clip_index < b.clip_index)));
    }

    // exactly one decode per clip
    CHECK(frames.decode_count() == static_cast<std::int64_t>(result.records.size()));

    // a single worker, a different scheduling, produces byte-identical shards
    SynthFrameSource frames1(20, 32, 32);
    PipelineConfig cfg1 = cfg;
    cfg1.workers = 1;
    const PipelineResult again = run_pipeline(entries, frames1, backend, cfg1);
    const std::string p3 = tmp_path("vidcap_pipe3.jsonl"), p1 = tmp_path("vidcap_pipe1.jsonl");
    write_shard(result.records, p3);
    write_shard(again.records, p1);
    CHECK(file_bytes(p3) == file_bytes(p1));
    std::remove(p3.c_str());
    std::remove(p1.c_str());
}

TEST_CASE("clip count for 20s videos") {
    // guard for the test above: 20s at 8s clips is [0,8) [8,16) [16,20)
    CHECK(chunk_video(20.0, 8.0).size() == 3);
}

TEST_CASE("per-clip caption seeds depend on video and clip, not scheduling") {
    std::vector<VideoManifestEntry> entries = {synth_entry(30, 16.0), synth_entry(31, 16.0)};
    SynthFrameSource frames(16, 32, 32);
    SeedEchoBackend backend;
    PipelineConfig cfg;
    cfg.seed = 123;

    cfg.workers = 1;
    SynthFrameSource fa(16, 32, 32);
    const auto a = run_pipeline(entries, fa, backend, cfg);
    cfg.workers = 4;
    SynthFrameSource fb(16, 32, 32);
    const auto b = run_pipeline(entries, fb, backend, cfg);
    REQUIRE(a.records.size() == 4);
    REQUIRE(b.records.size() == 4);
    for (std::size_t i = 0; i < a.records.size(); ++i) CHECK(a.records[i] == b.records[i]);

    // distinct (video, clip) pairs get distinct seeds
    std::set<std::string> captions;
    for (const auto& r : a.records) captions.insert(r.caption);
    CHECK(captions.size() == 4);

    // and a different pipeline seed shifts every per-clip seed
    cfg.seed = 124;
    SynthFrameSource fc(16, 32, 32);
    const auto c = run_pipeline(entries, fc, backend, cfg);
    for (std::size_t i = 0; i < a.records.size(); ++i) CHECK(a.records[i].caption != c.records[i].caption);
}

TEST_CASE("remote captioner matches the in-process stub over HTTP") {
    CaptionServer server(std::make_shared<StubCaptioner>());
    const int port = server.start();

    std::vector<VideoManifestEntry> entries;
    for (std::uint64_t k = 0; k < 4; ++k) entries.push_back(synth_entry(40 + k));

    SynthFrameSource frames_local(8, 32, 32);
    StubCaptioner local;
    PipelineConfig cfg;
    cfg.seed = 9;
    const auto local_result = run_pipeline(entries, frames_local, local, cfg);

    SynthFrameSource frames_remote(8, 32, 32);
    HttpCaptioner remote("127.0.0.1", port);
    const auto remote_result = run_pipeline(entries, frames_remote, remote, cfg);

    REQUIRE(remote_result.records.size() == local_result.records.size());
    CHECK(remote_result.failures == 0);
    for (std::size_t i = 0; i < local_result.records.size(); ++i) {
        CHECK(remote_result.records[i].caption == local_result.records[i].caption);
        CHECK(remote_result.records[i].captioner == "stub-v1");  // model id reported by the service
    }
    CHECK(server.handled() == static_cast<std::int64_t>(entries.size()));
    server.stop();
}

TEST_CASE("remote captioner retries transient failures") {
    CaptionServer server(std::make_shared<FlakyBackend>(2));
    const int port = server.start();

    HttpCaptioner remote("127.0.0.1", port, 0.9, /*retries=*/3);
    Rng frng = Rng::stream(50, "flaky", 0);
    const Tensor frame = frame_of(gen_video(random_scene(frng, 8, 32, 32), 8, 32, 32), 4);
    const CaptionResult r = remote.caption(frame, 1);
    CHECK(!r.failed);
    CHECK(r.caption == stub_caption(frame));
    CHECK(server.handled() == 3);  // two 502s then success
    server.stop();
}

TEST_CASE("unreachable captioner yields failure records and the run continues") {
    CaptionServer probe(std::make_shared<StubCaptioner>());
    const int dead_port = probe.start();
    probe.stop();  // port is now closed

    std::vector<VideoManifestEntry> entries = {synth_entry(60), synth_entry(61)};
    SynthFrameSource frames(8, 32, 32);
    HttpCaptioner remote("127.0.0.1", dead_port, 0.9, /*retries=*/0, /*timeout_ms=*/200);
    PipelineConfig cfg;
    const auto result = run_pipeline(entries, frames, remote, cfg);
    REQUIRE(result.records.size() == 2);
    CHECK(result.failures == 2);
    for (const auto& r : result.records) {
        CHECK(r.failed);
        CHECK(r.caption.empty());
        CHECK(!r.error.empty());
    }
    // failure records still serialize and read back
    const std::string path = tmp_path("vidcap_failed.jsonl");
    write_shard(result.records, path);
    CHECK(read_shard(path).size() == 2);
    std::remove(path.c_str());
}

TEST_CASE("pipeline runs are idempotent per seed") {
    std::vector<VideoManifestEntry> entries;
    for (std::uint64_t k = 0; k < 3; ++k) entries.push_back(synth_entry(70 + k, 13.0));
    PipelineConfig cfg;
    cfg.seed = 42;
    cfg.workers = 2;

    std::string bytes[2];
    for (int round = 0; round < 2; ++round) {
        SynthFrameSource frames(13, 32, 32);
        StubCaptioner backend;
        const auto result = run_pipeline(entries, frames, backend, cfg);
        const std::string path = tmp_path("vidcap_idem.jsonl");
        write_shard(result.records, path);
        bytes[round] = file_bytes(path);
        std::remove(path.c_str());
    }
    CHECK(!bytes[0].empty());
    CHECK(bytes[0] == bytes[1]);
}
