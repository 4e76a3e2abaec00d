#pragma once

#include <cmath>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "vidcap/errors.hpp"

namespace vidcap {

// One evaluation item: a candidate caption against >= 1 references.
struct EvalPair {
    std::vector<std::string> candidate;
    std::vector<std::vector<std::string>> references;
};

inline std::vector<std::string> caption_tokens_lower(const std::string& text) {
    std::vector<std::string> out;
    std::istringstream in(text);
    std::string w;
    while (in >> w) {
        for (char& c : w)
            if (c >= 'A' && c <= 'Z') c = static_cast<char>(c - 'A' + 'a');
        out.push_back(w);
    }
    return out;
}

inline EvalPair make_eval_pair(const std::string& candidate, const std::vector<std::string>& references) {
    EvalPair p;
    p.candidate = caption_tokens_lower(candidate);
    for (const auto& r : references) p.references.push_back(caption_tokens_lower(r));
    return p;
}

namespace cider_detail {

constexpr int kMaxN = 4;

using NgramCounts = std::unordered_map<std::string, double>;

// n-gram key: tokens joined by an unprintable separator
inline std::vector<NgramCounts> count_ngrams(const std::vector<std::string>& tokens) {
    std::vector<NgramCounts> counts(kMaxN);
    for (int n = 1; n <= kMaxN; ++n)
        for (std::size_t i = 0; i + n <= tokens.size(); ++i) {
            std::string key = tokens[i];
            for (int k = 1; k < n; ++k) {
                key += '\x1f';
                key += tokens[i + k];
            }
            counts[n - 1][key] += 1.0;
        }
    return counts;
}

struct TfIdfVec {
    std::vector<NgramCounts> vec;  // per n: ngram -> tf * idf
    double norm[kMaxN] = {0, 0, 0, 0};
    double length = 0;  // token count
};

inline TfIdfVec to_vec(const std::vector<std::string>& tokens, const std::vector<NgramCounts>& df, double ref_len) {
    TfIdfVec out;
    out.vec = count_ngrams(tokens);
    out.length = static_cast<double>(tokens.size());
    for (int n = 0; n < kMaxN; ++n) {
        for (auto& [ngram, tf] : out.vec[n]) {
            auto it = df[n].find(ngram);
            const double d = it == df[n].end() ? 0.0 : it->second;
            const double w = tf * (ref_len - std::log(std::max(1.0, d)));
            out.vec[n][ngram] = w;
            out.norm[n] += w * w;
        }
        out.norm[n] = std::sqrt(out.norm[n]);
    }
    return out;
}

inline double sim(const TfIdfVec& hyp, const TfIdfVec& ref, double sigma) {
    const double delta = hyp.length - ref.length;
    const double penalty = std::exp(-(delta * delta) / (2.0 * sigma * sigma));
    double total = 0.0;
    for (int n = 0; n < kMaxN; ++n) {
        double val = 0.0;
        for (const auto& [ngram, hw] : hyp.vec[n]) {
            auto it = ref.vec[n].find(ngram);
            if (it == ref.vec[n].end()) continue;
            val += std::min(hw, it->second) * it->second;
        }
        if (hyp.norm[n] != 0.0 && ref.norm[n] != 0.0) val /= hyp.norm[n] * ref.norm[n];
        total += val * penalty;
    }
    return total / kMaxN;
}

}  // namespace cider_detail

// Consensus captioning metric: clipped TF-IDF n-gram cosine (n = 1..4) with a
// gaussian length penalty, averaged over n and pairs, scaled by 10. IDF comes
// from the reference corpus of this evaluation run; the degenerate single-pair
// corpus uses ref_len = 1 so that idf stays positive (log(1) would zero every
// vector and make exact matches score 0 instead of 10).
inline double cider_d(const std::vector<EvalPair>& pairs, double sigma = 6.0) {
    using namespace cider_detail;
    if (pairs.empty()) throw DataError("cider_d on empty corpus");
    for (const auto& p : pairs) {
        if (p.candidate.empty() || p.references.empty()) throw DataError("cider_d pair missing candidate or references");
        for (const auto& r : p.references)
            if (r.empty()) throw DataError("cider_d empty reference");
    }

    // document frequency: one count per pair whose reference set contains the n-gram
    std::vector<NgramCounts> df(kMaxN);
    for (const auto& p : pairs) {
        std::vector<NgramCounts> seen(kMaxN);
        for (const auto& ref : p.references) {
            auto counts = count_ngrams(ref);
            for (int n = 0; n < kMaxN; ++n)
                for (const auto& [ngram, c] : counts[n]) seen[n][ngram] = 1.0;
        }
        for (int n = 0; n < kMaxN; ++n)
            for (const auto& [ngram, one] : seen[n]) df[n][ngram] += 1.0;
    }
    const double ref_len = pairs.size() == 1 ? 1.0 : std::log(static_cast<double>(pairs.size()));

    double total = 0.0;
    for (const auto& p : pairs) {
        TfIdfVec hyp = to_vec(p.candidate, df, ref_len);
        double pair_score = 0.0;
        for (const auto& ref : p.references) pair_score += sim(hyp, to_vec(ref, df, ref_len), sigma);
        total += pair_score / static_cast<double>(p.references.size());
    }
    return 10.0 * total / static_cast<double>(pairs.size());
}

}  // namespace vidcap
