#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <limits>

#include "vidcap/optimizer.hpp"

using namespace vidcap;

namespace {

// Frozen regression traces for grads {1, -0.5, 0.25, 2, -1, 0.125} starting
// from p = 0.5 with lr = 0.1, beta1 = 0.9, eps = 1e-8, computed once by a
// straight-line oracle with no shared code.
constexpr double kTraceP95[6] = {0.40000000099999999, 0.37316305653372217, 0.33849489420091733,
                                 0.27553914124540779, 0.24783145696866829, 0.22107471885021932};
constexpr double kTraceV95[6] = {0.050000000000000044, 0.060000000000000053, 0.060125000000000053,
                                 0.25711875000000023,  0.29426281250000025,  0.28033092187500025};
constexpr double kTraceP999[6] = {0.40000000099999999, 0.37336629737090316, 0.3393233830648465,
                                  0.27503419152588415, 0.24691786291607576, 0.22011769207957754};
constexpr double kTraceV999[6] = {0.0010000000000000009, 0.0012490000000000012, 0.0013102510000000012,
                                  0.0053089407490000042, 0.0063036318082510048, 0.0063129531764427541};

}  // namespace

TEST_CASE("adam step 1 matches the hand computation") {
    Tensor p({1}, {0.0});
    p.set_requires_grad();
    p.grad[0] = 1.0;
    auto params = std::vector<std::pair<std::string, Tensor*>>{{"p", &p}};
    AdamState state = AdamState::init(params, {.lr = 0.1});
    REQUIRE(adam_step(params, state));
    // bias-corrected mhat/sqrt(vhat) = 1, so the update is -lr/(1 + eps)
    CHECK(p.data[0] == -0.1 / (1.0 + 1e-8));
    CHECK(p.data[0] == Catch::Approx(-0.1).margin(1e-8));
    CHECK(state.step == 1);
}

TEST_CASE("zero gradients leave parameters unchanged") {
    Tensor p({3}, {1.0, -2.0, 3.0});
    p.set_requires_grad();
    auto params = std::vector<std::pair<std::string, Tensor*>>{{"p", &p}};
    AdamState state = AdamState::init(params, {});
    for (int k = 0; k < 5; ++k) REQUIRE(adam_step(params, state));
    CHECK(p.data == std::vector<double>{1.0, -2.0, 3.0});
    CHECK(state.step == 5);
}

TEST_CASE("beta2 choices reproduce the frozen regression traces") {
    const double grads[6] = {1.0, -0.5, 0.25, 2.0, -1.0, 0.125};
    struct Case {
        double beta2;
        const double* pt;
        const double* vt;
    };
    for (const auto& c : {Case{0.95, kTraceP95, kTraceV95}, Case{0.999, kTraceP999, kTraceV999}}) {
        Tensor p({1}, {0.5});
        p.set_requires_grad();
        auto params = std::vector<std::pair<std::string, Tensor*>>{{"p", &p}};
        AdamState state = AdamState::init(params, {.lr = 0.1, .beta2 = c.beta2});
        for (int k = 0; k < 6; ++k) {
            p.grad[0] = grads[k];
            REQUIRE(adam_step(params, state));
            CHECK(p.data[0] == c.pt[k]);
            CHECK(state.v[0][0] == c.vt[k]);
        }
    }
    // the two settings genuinely diverge after step 1
    CHECK(kTraceP95[5] != kTraceP999[5]);
    CHECK(kTraceP95[1] != kTraceP999[1]);
}

TEST_CASE("non-finite gradients abort the step without side effects") {
    Tensor p({2}, {1.0, 2.0});
    Tensor q({1}, {3.0});
    p.set_requires_grad();
    q.set_requires_grad();
    auto params = std::vector<std::pair<std::string, Tensor*>>{{"p", &p}, {"q", &q}};
    AdamState state = AdamState::init(params, {});
    p.grad = {0.5, 0.5};
    q.grad = {std::numeric_limits<double>::quiet_NaN()};
    CHECK_FALSE(adam_step(params, state));
    CHECK(p.data == std::vector<double>{1.0, 2.0});
    CHECK(state.step == 0);
    CHECK(state.m[0] == std::vector<double>(2, 0.0));

    q.grad = {std::numeric_limits<double>::infinity()};
    CHECK_FALSE(adam_step(params, state));
    CHECK(state.step == 0);

    q.grad = {0.25};
    CHECK(adam_step(params, state));
    CHECK(state.step == 1);
}

TEST_CASE("optimizer state must match the parameter list") {
    Tensor p({2}, {1.0, 2.0});
    p.set_requires_grad();
    auto params = std::vector<std::pair<std::string, Tensor*>>{{"p", &p}};
    AdamState state = AdamState::init(params, {});
    Tensor extra({1}, {0.0});
    extra.set_requires_grad();
    params.emplace_back("extra", &extra);
    CHECK_THROWS_AS(adam_step(params, state), ConfigError);
}
