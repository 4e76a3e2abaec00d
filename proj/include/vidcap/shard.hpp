#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "vidcap/errors.hpp"

namespace vidcap {

// One captioned clip. Failure entries (backend gave up) keep the pipeline
// running: they carry failed=true and an error string instead of a caption.
struct ClipRecord {
    std::string video_id;
    std::int64_t clip_index = 0;
    double start_s = 0.0;
    double end_s = 0.0;
    double center_s = 0.0;
    std::string caption;
    std::string source;     // asr | pseudo | synthetic-gt
    std::string captioner;  // backend identifier, empty for ground truth
    bool failed = false;
    std::string error;

    void validate() const {
        if (video_id.empty()) throw DataError("clip record without video id");
        if (end_s <= start_s) throw DataError("clip record with empty span " + video_id);
        if (center_s < start_s || center_s >= end_s) throw DataError("clip center outside span " + video_id);
        if (source != "asr" && source != "pseudo" && source != "synthetic-gt")
            throw DataError("unknown source tag '" + source + "'");
        if (!failed && caption.empty()) throw DataError("empty caption in non-failed record " + video_id);
    }

    bool operator==(const ClipRecord&) const = default;
};

inline nlohmann::json to_json(const ClipRecord& r) {
    nlohmann::json j{{"video_id", r.video_id}, {"clip_index", r.clip_index}, {"start_s", r.start_s},
                     {"end_s", r.end_s},       {"center_s", r.center_s},    {"caption", r.caption},
                     {"source", r.source},     {"captioner", r.captioner}};
    if (r.failed) {
        j["failed"] = true;
        j["error"] = r.error;
    }
    return j;
}

inline ClipRecord record_from_json(const nlohmann::json& j) {
    ClipRecord r;
    r.video_id = j.at("video_id").get<std::string>();
    r.clip_index = j.at("clip_index").get<std::int64_t>();
    r.start_s = j.at("start_s").get<double>();
    r.end_s = j.at("end_s").get<double>();
    r.center_s = j.at("center_s").get<double>();
    r.caption = j.at("caption").get<std::string>();
    r.source = j.at("source").get<std::string>();
    r.captioner = j.at("captioner").get<std::string>();
    r.failed = j.value("failed", false);
    r.error = j.value("error", std::string{});
    r.validate();
    return r;
}

// Newline-delimited records, one JSON object per line. nlohmann keeps keys
// sorted, so equal record lists produce byte-identical shards.
inline void write_shard(const std::vector<ClipRecord>& records, const std::string& path) {
    const std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw DataError("cannot write shard " + path);
        for (const auto& r : records) {
            r.validate();
            out << to_json(r).dump() << '\n';
        }
        if (!out) throw DataError("short write on shard " + path);
    }
    std::filesystem::rename(tmp, path);
}

inline std::vector<ClipRecord> read_shard(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open shard " + path);
    std::vector<ClipRecord> records;
    std::string line;
    std::int64_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        try {
            records.push_back(record_from_json(nlohmann::json::parse(line)));
        } catch (const nlohmann::json::exception& e) {
            throw DataError(path + ":" + std::to_string(lineno) + ": malformed record: " + e.what());
        } catch (const DataError& e) {
            throw DataError(path + ":" + std::to_string(lineno) + ": " + e.what());
        }
    }
    return records;
}

struct CorpusStats {
    std::int64_t clips = 0;
    double mean_caption_words = 0.0;
    double median_caption_words = 0.0;
    std::int64_t vocabulary = 0;
    std::map<std::string, std::int64_t> per_source;
};

inline CorpusStats corpus_stats(const std::vector<ClipRecord>& records) {
    if (records.empty()) throw DataError("corpus_stats on empty corpus");
    CorpusStats st;
    std::vector<std::int64_t> lengths;
    std::map<std::string, int> seen;
    for (const auto& r : records) {
        ++st.clips;
        ++st.per_source[r.source];
        if (r.failed) continue;
        std::istringstream in(r.caption);
        std::string w;
        std::int64_t n = 0;
        while (in >> w) {
            ++n;
            seen[w] = 1;
        }
        lengths.push_back(n);
        st.mean_caption_words += static_cast<double>(n);
    }
    if (!lengths.empty()) {
        st.mean_caption_words /= static_cast<double>(lengths.size());
        std::sort(lengths.begin(), lengths.end());
        const std::size_t mid = lengths.size() / 2;
        st.median_caption_words = lengths.size() % 2 ? static_cast<double>(lengths[mid])
                                                     : 0.5 * static_cast<double>(lengths[mid - 1] + lengths[mid]);
    }
    st.vocabulary = static_cast<std::int64_t>(seen.size());
    return st;
}

}  // namespace vidcap
