#pragma once

#include <array>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "vidcap/errors.hpp"

namespace vidcap {

// Closed 64-word vocabulary with whole-word tokenization. Ids 0/1 are the
// begin/end markers; 2..19 carry scene content; 20..59 are ASR-style chatter;
// 60..63 are fillers. Content and chatter sets are disjoint so caption noise
// is measurable by word class.
class Vocab {
public:
    static constexpr int bos = 0;
    static constexpr int eos = 1;

    static const Vocab& instance() {
        static const Vocab v;
        return v;
    }

    int size() const { return static_cast<int>(words_.size()); }

    int id(const std::string& word) const {
        auto it = index_.find(word);
        if (it == index_.end()) throw DataError("word not in vocabulary: '" + word + "'");
        return it->second;
    }

    bool contains(const std::string& word) const { return index_.count(word) > 0; }

    const std::string& word(int id) const {
        if (id < 0 || id >= size()) throw DataError("token id out of range: " + std::to_string(id));
        return words_[static_cast<std::size_t>(id)];
    }

    std::vector<int> encode_words(const std::string& text) const {
        std::vector<int> out;
        std::istringstream in(text);
        std::string w;
        while (in >> w) out.push_back(id(lower(w)));
        return out;
    }

    std::string decode_words(const std::vector<int>& ids) const {
        std::string out;
        for (int t : ids) {
            if (t == bos || t == eos) continue;
            if (!out.empty()) out += ' ';
            out += word(t);
        }
        return out;
    }

    bool is_motion_word(int id) const {
        // moving, standing, still, left, right, up, down
        return (id >= 13 && id <= 19);
    }

private:
    Vocab() {
        static const char* kWords[] = {
            "<s>", "</s>", "a", "an", "object",
            "red", "green", "blue", "yellow",
            "circle", "square", "triangle", "cross",
            "moving", "standing", "still",
            "left", "right", "up", "down",
            // chatter, disjoint from every content word
            "so", "um", "you", "know", "like", "today", "we", "going", "to", "make",
            "this", "is", "really", "great", "now", "just", "take", "your", "and", "then",
            "put", "it", "in", "the", "of", "with", "that", "here", "what", "do",
            "next", "step", "first", "okay", "well", "thanks", "for", "watching", "subscribe", "video",
            "one", "two", "three", "four"};
        for (const char* w : kWords) {
            index_[w] = static_cast<int>(words_.size());
            words_.push_back(w);
        }
    }

    static std::string lower(std::string s) {
        for (char& c : s)
            if (c >= 'A' && c <= 'Z') c = static_cast<char>(c - 'A' + 'a');
        return s;
    }

    std::vector<std::string> words_;
    std::unordered_map<std::string, int> index_;
};

// Token ids with begin/end markers: [bos, w_1 .. w_N, eos].
struct CaptionTokens {
    std::vector<int> ids;

    static CaptionTokens from_text(const std::string& text, const Vocab& vocab = Vocab::instance()) {
        CaptionTokens c;
        c.ids.push_back(Vocab::bos);
        for (int t : vocab.encode_words(text)) c.ids.push_back(t);
        c.ids.push_back(Vocab::eos);
        c.validate(vocab.size());
        return c;
    }

    void validate(int vocab_size) const {
        if (ids.size() < 2 || ids.front() != Vocab::bos || ids.back() != Vocab::eos)
            throw DataError("caption must be [bos, words..., eos]");
        for (std::size_t i = 0; i < ids.size(); ++i) {
            if (ids[i] < 0 || ids[i] >= vocab_size) throw DataError("token id out of range");
            if (ids[i] == Vocab::eos && i + 1 != ids.size()) throw DataError("end marker must be terminal and unique");
        }
    }

    // number of next-token predictions (bos -> w_1 ... w_N -> eos)
    std::int64_t targets() const { return static_cast<std::int64_t>(ids.size()) - 1; }
};

}  // namespace vidcap
