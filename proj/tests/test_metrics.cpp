#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <random>
#include <set>

#include "vidcap/metrics.hpp"

#include "cider_oracle.hpp"

using namespace vidcap;
using oracle::hand_corpus;

TEST_CASE("exact match against a single 5-token reference scores 10") {
    auto pairs = std::vector<EvalPair>{make_eval_pair("a red square moving left", {"a red square moving left"})};
    CHECK(cider_d(pairs) == Catch::Approx(10.0).margin(1e-9));
    CHECK(oracle::brute_cider_d(pairs) == Catch::Approx(10.0).margin(1e-9));
    // exact match at the minimum length with all four n-gram orders
    auto four = std::vector<EvalPair>{make_eval_pair("red square moving left", {"red square moving left"})};
    CHECK(cider_d(four) == Catch::Approx(10.0).margin(1e-9));
}

TEST_CASE("disjoint captions score zero") {
    auto pairs = std::vector<EvalPair>{make_eval_pair("so um you know", {"a red square moving left"})};
    CHECK(cider_d(pairs) == 0.0);
}

TEST_CASE("implementation matches the brute-force oracle") {
    SECTION("3-pair toy corpus") {
        std::vector<EvalPair> pairs{
            make_eval_pair("a red square moving left", {"a red square moving left"}),
            make_eval_pair("a blue circle", {"a blue circle moving up", "a blue circle"}),
            make_eval_pair("an object", {"a green triangle standing still"}),
        };
        CHECK(cider_d(pairs) == Catch::Approx(oracle::brute_cider_d(pairs)).margin(1e-6));
    }
    SECTION("10-pair hand corpus") {
        auto pairs = hand_corpus();
        const double a = cider_d(pairs);
        const double b = oracle::brute_cider_d(pairs);
        CHECK(a == Catch::Approx(b).margin(1e-6));
        CHECK(a > 0.0);
        CHECK(a < 10.0);
    }
    SECTION("randomized corpora stay inside [0,10] and agree with the oracle") {
        std::mt19937 gen(99);
        const std::vector<std::string> words{"a",  "red",   "blue",  "square", "circle", "moving",
                                             "up", "still", "object", "left",   "so",     "um"};
        for (int trial = 0; trial < 10; ++trial) {
            std::vector<EvalPair> pairs;
            const int n = 2 + static_cast<int>(gen() % 6);
            for (int i = 0; i < n; ++i) {
                auto sentence = [&]() {
                    std::string s;
                    const int len = 1 + static_cast<int>(gen() % 7);
                    for (int k = 0; k < len; ++k) {
                        if (!s.empty()) s += ' ';
                        s += words[gen() % words.size()];
                    }
                    return s;
                };
                std::vector<std::string> refs;
                const int nr = 1 + static_cast<int>(gen() % 3);
                for (int r = 0; r < nr; ++r) refs.push_back(sentence());
                pairs.push_back(make_eval_pair(sentence(), refs));
            }
            const double score = cider_d(pairs);
            CHECK(score >= 0.0);
            CHECK(score <= 10.0 + 1e-12);
            CHECK(score == Catch::Approx(oracle::brute_cider_d(pairs)).margin(1e-6));
        }
    }
}

TEST_CASE("cider_d is pure and symmetric under reference reordering") {
    auto pairs = hand_corpus();
    const double base = cider_d(pairs);
    CHECK(cider_d(pairs) == base);
    for (auto& p : pairs) std::reverse(p.references.begin(), p.references.end());
    CHECK(cider_d(pairs) == Catch::Approx(base).margin(1e-12));
}

TEST_CASE("length penalty punishes truncation") {
    std::vector<EvalPair> exact{make_eval_pair("a red square moving left", {"a red square moving left"}),
                                make_eval_pair("a blue circle moving up", {"a blue circle moving up"})};
    std::vector<EvalPair> cut{make_eval_pair("a red square", {"a red square moving left"}),
                              make_eval_pair("a blue circle moving up", {"a blue circle moving up"})};
    CHECK(cider_d(cut) < cider_d(exact));
}

TEST_CASE("degenerate inputs are rejected") {
    CHECK_THROWS_AS(cider_d({}), DataError);
    std::vector<EvalPair> bad{make_eval_pair("a red square", {})};
    CHECK_THROWS_AS(cider_d(bad), DataError);
}

TEST_CASE("tokenization lowercases and splits on whitespace") {
    auto p = make_eval_pair("A Red  SQUARE", {"a red square"});
    CHECK(p.candidate == std::vector<std::string>{"a", "red", "square"});
    // a 3-token exact match has no 4-grams, so the n=4 term contributes 0
    CHECK(cider_d({p}) == Catch::Approx(7.5).margin(1e-9));
}
