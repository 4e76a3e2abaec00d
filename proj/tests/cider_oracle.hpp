#pragma once

// Brute-force reference implementation, written independently against the
// metric description: ordered maps keyed by token vectors, everything
// recomputed per pair, no shared code with the library. Shared between the
// metric unit tests and the acceptance suite.

#include <array>
#include <cmath>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "vidcap/metrics.hpp"

namespace oracle {

using Gram = std::vector<std::string>;

inline std::map<Gram, int> grams(const std::vector<std::string>& s, int n) {
    std::map<Gram, int> out;
    for (int i = 0; i + n <= static_cast<int>(s.size()); ++i)
        out[Gram(s.begin() + i, s.begin() + i + n)] += 1;
    return out;
}

inline double brute_cider_d(const std::vector<vidcap::EvalPair>& pairs, double sigma = 6.0) {
    const int N = static_cast<int>(pairs.size());
    const double ref_len = N == 1 ? 1.0 : std::log(static_cast<double>(N));

    std::array<std::map<Gram, int>, 4> df;
    for (const auto& p : pairs) {
        std::array<std::set<Gram>, 4> seen;
        for (const auto& ref : p.references)
            for (int n = 1; n <= 4; ++n)
                for (const auto& [g, c] : grams(ref, n)) seen[n - 1].insert(g);
        for (int n = 0; n < 4; ++n)
            for (const auto& g : seen[n]) df[n][g] += 1;
    }
    auto idf = [&](int n, const Gram& g) {
        auto it = df[n].find(g);
        const double d = it == df[n].end() ? 0.0 : it->second;
        return ref_len - std::log(std::max(1.0, d));
    };

    double corpus = 0.0;
    for (const auto& p : pairs) {
        double over_refs = 0.0;
        for (const auto& ref : p.references) {
            double over_n = 0.0;
            for (int n = 1; n <= 4; ++n) {
                auto hc = grams(p.candidate, n);
                auto rc = grams(ref, n);
                double num = 0.0, nh = 0.0, nr = 0.0;
                for (const auto& [g, c] : hc) {
                    const double w = c * idf(n - 1, g);
                    nh += w * w;
                }
                for (const auto& [g, c] : rc) {
                    const double w = c * idf(n - 1, g);
                    nr += w * w;
                }
                for (const auto& [g, c] : hc) {
                    auto it = rc.find(g);
                    if (it == rc.end()) continue;
                    const double wh = c * idf(n - 1, g);
                    const double wr = it->second * idf(n - 1, g);
                    num += std::min(wh, wr) * wr;
                }
                double cosv = (nh > 0.0 && nr > 0.0) ? num / (std::sqrt(nh) * std::sqrt(nr)) : 0.0;
                const double delta = static_cast<double>(p.candidate.size()) - static_cast<double>(ref.size());
                over_n += cosv * std::exp(-delta * delta / (2.0 * sigma * sigma));
            }
            over_refs += over_n / 4.0;
        }
        corpus += over_refs / static_cast<double>(p.references.size());
    }
    return 10.0 * corpus / N;
}

// 10 pairs with overlaps, repeats, multi-reference items and length mismatches
inline std::vector<vidcap::EvalPair> hand_corpus() {
    using vidcap::make_eval_pair;
    return {
        make_eval_pair("a red square moving left", {"a red square moving left"}),
        make_eval_pair("a red square", {"a red square moving left"}),
        make_eval_pair("a blue circle moving up", {"a blue circle moving up", "a blue circle going up"}),
        make_eval_pair("a green triangle standing still", {"a green triangle standing still"}),
        make_eval_pair("an object", {"a yellow cross moving down"}),
        make_eval_pair("a yellow cross moving down down down", {"a yellow cross moving down"}),
        make_eval_pair("a red circle moving right", {"a blue square moving right", "a red circle moving right"}),
        make_eval_pair("so um you know like today", {"a green circle standing still"}),
        make_eval_pair("a a a a a", {"a red square moving left"}),
        make_eval_pair("a blue square standing still", {"a blue square standing still", "a blue square not moving",
                                                        "a blue square at rest"}),
    };
}

}  // namespace oracle
