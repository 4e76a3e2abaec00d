#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <functional>

#include "vidcap/grad_check.hpp"
#include "vidcap/graph.hpp"
#include "vidcap/rng.hpp"
#include "vidcap/tensor.hpp"

using namespace vidcap;

namespace {

// Runs one analytic backward pass, then validates every parameter against
// central differences. `build` must be a pure function of the tensors.
double fd_max_err(std::vector<std::pair<std::string, Tensor*>> params,
                  const std::function<Value(Graph&)>& build) {
    for (auto& [name, t] : params) t->zero_grad();
    {
        Graph g;
        g.backward(build(g));
    }
    auto report = grad_check(params, [&]() {
        Graph g;
        return build(g).scalar();
    });
    return report.max_rel_err;
}

}  // namespace

TEST_CASE("matmul forward matches hand result") {
    Graph g;
    Value a = g.constant({2, 3}, {1, 2, 3, 4, 5, 6});
    Value b = g.constant({3, 2}, {7, 8, 9, 10, 11, 12});
    Value c = matmul(a, b);
    REQUIRE(c.shape() == Shape{2, 2});
    CHECK(c.val()[0] == 58.0);
    CHECK(c.val()[1] == 64.0);
    CHECK(c.val()[2] == 139.0);
    CHECK(c.val()[3] == 154.0);
}

TEST_CASE("matmul rejects mismatched shapes") {
    Graph g;
    Value a = g.constant({2, 3}, std::vector<double>(6, 0.0));
    Value b = g.constant({2, 3}, std::vector<double>(6, 0.0));
    CHECK_THROWS_AS(matmul(a, b), ShapeError);
}

TEST_CASE("matmul gradients match finite differences") {
    Rng rng = Rng::stream(11, "mm");
    Tensor a = Tensor::randn({3, 4}, rng);
    Tensor b = Tensor::randn({4, 5}, rng);
    a.set_requires_grad();
    b.set_requires_grad();
    double err = fd_max_err({{"a", &a}, {"b", &b}}, [&](Graph& g) {
        return mean_all(matmul(g.leaf(a), g.leaf(b)));
    });
    CHECK(err < 1e-8);
}

TEST_CASE("softmax hand values and properties") {
    Graph g;
    Value x = g.constant({1, 2}, {0.0, std::log(3.0)});
    Value p = softmax(x, 1);
    CHECK(p.val()[0] == Catch::Approx(0.25).margin(1e-12));
    CHECK(p.val()[1] == Catch::Approx(0.75).margin(1e-12));

    SECTION("rows sum to one and shift invariance holds") {
        Rng rng = Rng::stream(12, "sm");
        std::vector<double> raw(24);
        for (auto& v : raw) v = rng.normal() * 3.0;
        Value y = softmax(g.constant({4, 6}, raw), 1);
        for (int i = 0; i < 4; ++i) {
            double s = 0.0;
            for (int j = 0; j < 6; ++j) s += y.val()[i * 6 + j];
            CHECK(s == Catch::Approx(1.0).margin(1e-12));
        }
        std::vector<double> shifted = raw;
        for (auto& v : shifted) v += 123.0;
        Value ys = softmax(g.constant({4, 6}, shifted), 1);
        for (int k = 0; k < 24; ++k) CHECK(std::abs(y.val()[k] - ys.val()[k]) < 1e-12);
    }
}

TEST_CASE("softmax gradients match finite differences on both axes") {
    Rng rng = Rng::stream(13, "smg");
    Tensor x = Tensor::randn({3, 5}, rng);
    Tensor w = Tensor::randn({3, 5}, rng);
    x.set_requires_grad();
    for (int axis : {0, 1}) {
        double err = fd_max_err({{"x", &x}}, [&](Graph& g) {
            return sum_all(mul(softmax(g.leaf(x), axis), g.leaf(w)));
        });
        CHECK(err < 1e-6);
    }
}

TEST_CASE("causal softmax zeroes the strict upper triangle exactly") {
    Rng rng = Rng::stream(14, "cs");
    Tensor x = Tensor::randn({5, 5}, rng);
    Graph g;
    Value p = causal_softmax(g.leaf(x));
    for (int i = 0; i < 5; ++i) {
        double s = 0.0;
        for (int j = 0; j < 5; ++j) {
            if (j > i) CHECK(p.val()[i * 5 + j] == 0.0);
            s += p.val()[i * 5 + j];
        }
        CHECK(s == Catch::Approx(1.0).margin(1e-12));
    }

    SECTION("first row is deterministic") { CHECK(p.val()[0] == 1.0); }
}

TEST_CASE("causal softmax gradients match finite differences") {
    Rng rng = Rng::stream(15, "csg");
    Tensor x = Tensor::randn({4, 4}, rng);
    Tensor w = Tensor::randn({4, 4}, rng);
    x.set_requires_grad();
    double err = fd_max_err({{"x", &x}}, [&](Graph& g) {
        return sum_all(mul(causal_softmax(g.leaf(x)), g.leaf(w)));
    });
    CHECK(err < 1e-6);
}

TEST_CASE("layer_norm normalizes a two-element row to plus and minus one") {
    Graph g;
    Value gain = g.constant({2}, {1.0, 1.0});
    Value bias = g.constant({2}, {0.0, 0.0});
    Value y = layer_norm(g.constant({1, 2}, {3.0, 7.0}), gain, bias);
    // (x - mean)/sqrt(var + eps): var = 4, eps = 1e-5
    const double expect = 2.0 / std::sqrt(4.0 + 1e-5);
    CHECK(y.val()[0] == Catch::Approx(-expect).margin(1e-15));
    CHECK(y.val()[1] == Catch::Approx(expect).margin(1e-15));
}

TEST_CASE("layer_norm output is invariant to input shift and scale-equivariant in gain") {
    Rng rng = Rng::stream(16, "ln");
    std::vector<double> raw(3 * 8);
    for (auto& v : raw) v = rng.normal() * 2.0;
    std::vector<double> shifted = raw;
    for (auto& v : shifted) v += 42.0;
    Graph g;
    Value gain = g.constant({8}, std::vector<double>(8, 1.0));
    Value bias = g.constant({8}, std::vector<double>(8, 0.0));
    Value a = layer_norm(g.constant({3, 8}, raw), gain, bias);
    Value b = layer_norm(g.constant({3, 8}, shifted), gain, bias);
    for (std::size_t k = 0; k < raw.size(); ++k) CHECK(std::abs(a.val()[k] - b.val()[k]) < 1e-10);
}

TEST_CASE("layer_norm gradients match finite differences") {
    Rng rng = Rng::stream(17, "lng");
    Tensor x = Tensor::randn({4, 6}, rng);
    Tensor gain = Tensor::randn({6}, rng, 0.3, 1.0);
    Tensor bias = Tensor::randn({6}, rng, 0.3);
    Tensor w = Tensor::randn({4, 6}, rng);
    x.set_requires_grad();
    gain.set_requires_grad();
    bias.set_requires_grad();
    double err = fd_max_err({{"x", &x}, {"gain", &gain}, {"bias", &bias}}, [&](Graph& g) {
        return sum_all(mul(layer_norm(g.leaf(x), g.leaf(gain), g.leaf(bias)), g.leaf(w)));
    });
    CHECK(err < 1e-6);
}

TEST_CASE("max_pool_axis keeps the max and ties route to the first occurrence") {
    Graph g;
    // shape [2,3]: pool over axis 0 and axis 1
    Tensor x({2, 3}, {3.0, 1.0, 3.0, 2.0, 5.0, 3.0});
    x.set_requires_grad();
    Value v = g.leaf(x);

    Value p0 = max_pool_axis(v, 0);
    REQUIRE(p0.shape() == Shape{3});
    CHECK(p0.val() == std::vector<double>{3.0, 5.0, 3.0});

    Value p1 = max_pool_axis(v, 1);
    REQUIRE(p1.shape() == Shape{2});
    CHECK(p1.val() == std::vector<double>{3.0, 5.0});

    // row 0 of p1 ties between columns 0 and 2; gradient must hit column 0
    g.backward(sum_all(p1));
    CHECK(x.grad == std::vector<double>{1.0, 0.0, 0.0, 0.0, 1.0, 0.0});
    // column 2 of p0 ties between rows 0 and 1 (both 3.0)
    x.zero_grad();
    g.backward(sum_all(p0));
    CHECK(x.grad == std::vector<double>{1.0, 0.0, 1.0, 0.0, 1.0, 0.0});
}

TEST_CASE("max_pool_axis gradient matches finite differences away from ties") {
    Rng rng = Rng::stream(18, "mp");
    Tensor x = Tensor::randn({3, 4, 5}, rng);
    x.set_requires_grad();
    for (int axis : {0, 1, 2}) {
        double err = fd_max_err({{"x", &x}}, [&](Graph& g) {
            return sum_all(max_pool_axis(g.leaf(x), axis));
        });
        CHECK(err < 1e-6);
    }
}

TEST_CASE("elementwise op gradients match finite differences") {
    Rng rng = Rng::stream(19, "ew");
    Tensor a = Tensor::randn({3, 4}, rng);
    Tensor b = Tensor::randn({3, 4}, rng);
    Tensor bias = Tensor::randn({4}, rng);
    Tensor gate = Tensor::randn({4}, rng);
    Tensor s = Tensor::randn({1}, rng);
    a.set_requires_grad();
    b.set_requires_grad();
    bias.set_requires_grad();
    gate.set_requires_grad();
    s.set_requires_grad();

    SECTION("add, mul, tanh") {
        double err = fd_max_err({{"a", &a}, {"b", &b}}, [&](Graph& g) {
            Value va = g.leaf(a), vb = g.leaf(b);
            return mean_all(vidcap::tanh(add(mul(va, vb), va)));
        });
        CHECK(err < 1e-6);
    }
    SECTION("gelu") {
        double err = fd_max_err({{"a", &a}}, [&](Graph& g) { return mean_all(gelu(g.leaf(a))); });
        CHECK(err < 1e-6);
        Graph g;
        Value y = gelu(g.constant({1, 1}, {1.0}));
        CHECK(y.val()[0] == Catch::Approx(0.8413447460685429).margin(1e-14));
    }
    SECTION("add_bias and gate_rows") {
        double err = fd_max_err({{"a", &a}, {"bias", &bias}, {"gate", &gate}}, [&](Graph& g) {
            return mean_all(gate_rows(add_bias(g.leaf(a), g.leaf(bias)), g.leaf(gate)));
        });
        CHECK(err < 1e-6);
    }
    SECTION("scale and scale_by") {
        double err = fd_max_err({{"a", &a}, {"s", &s}}, [&](Graph& g) {
            return mean_all(scale_by(scale(g.leaf(a), 2.5), g.leaf(s)));
        });
        CHECK(err < 1e-6);
    }
    SECTION("transpose round trip") {
        Graph g;
        Value v = g.leaf(a);
        Value tt = transpose(transpose(v));
        CHECK(tt.val() == a.data);
        double err = fd_max_err({{"a", &a}}, [&](Graph& g2) {
            return mean_all(vidcap::tanh(transpose(g2.leaf(a))));
        });
        CHECK(err < 1e-6);
    }
}

TEST_CASE("concat and slice invert each other and route gradients") {
    Rng rng = Rng::stream(20, "cat");
    Tensor a = Tensor::randn({2, 3}, rng);
    Tensor b = Tensor::randn({2, 5}, rng);
    a.set_requires_grad();
    b.set_requires_grad();
    {
        Graph g;
        Value c = concat(g.leaf(a), g.leaf(b), 1);
        REQUIRE(c.shape() == Shape{2, 8});
        Value sa = slice(c, 1, 0, 3);
        Value sb = slice(c, 1, 3, 8);
        CHECK(sa.val() == a.data);
        CHECK(sb.val() == b.data);
    }
    {
        Graph g;
        Tensor c2 = Tensor::randn({4, 3}, rng);
        Value c = concat(g.leaf(a), g.constant(c2), 0);
        REQUIRE(c.shape() == Shape{6, 3});
        CHECK(slice(c, 0, 0, 2).val() == a.data);
        CHECK(slice(c, 0, 2, 6).val() == c2.data);
    }
    double err = fd_max_err({{"a", &a}, {"b", &b}}, [&](Graph& g) {
        Value c = concat(g.leaf(a), g.leaf(b), 1);
        return mean_all(vidcap::tanh(slice(c, 1, 1, 7)));
    });
    CHECK(err < 1e-6);
}

TEST_CASE("reshape preserves data and gradients") {
    Rng rng = Rng::stream(21, "rs");
    Tensor a = Tensor::randn({2, 6}, rng);
    a.set_requires_grad();
    {
        Graph g;
        Value r = reshape(g.leaf(a), {3, 4});
        CHECK(r.val() == a.data);
        CHECK_THROWS_AS(reshape(g.leaf(a), Shape{5, 5}), ShapeError);
    }
    double err = fd_max_err({{"a", &a}}, [&](Graph& g) {
        return mean_all(vidcap::tanh(reshape(g.leaf(a), {4, 3})));
    });
    CHECK(err < 1e-6);
}

TEST_CASE("embedding gathers rows and scatters gradients") {
    Tensor table({4, 3}, {0, 1, 2, 10, 11, 12, 20, 21, 22, 30, 31, 32});
    table.set_requires_grad();
    Graph g;
    Value e = embedding(g.leaf(table), {2, 0, 2});
    REQUIRE(e.shape() == Shape{3, 3});
    CHECK(e.val() == std::vector<double>{20, 21, 22, 0, 1, 2, 20, 21, 22});
    g.backward(sum_all(e));
    // row 2 used twice, row 0 once, rows 1 and 3 untouched
    CHECK(table.grad == std::vector<double>{1, 1, 1, 0, 0, 0, 2, 2, 2, 0, 0, 0});
    CHECK_THROWS_AS(embedding(g.leaf(table), {4}), ShapeError);
}

TEST_CASE("cross entropy matches hand values and finite differences") {
    SECTION("uniform logits give log(vocab)") {
        Graph g;
        Value logits = g.constant({2, 64}, std::vector<double>(128, 0.7));
        Value l = cross_entropy(logits, {3, 60});
        CHECK(l.scalar() == Catch::Approx(std::log(64.0)).margin(1e-12));
    }
    SECTION("hand case") {
        Graph g;
        // row [ln1, ln3] target 1: p = 0.75, nll = -ln 0.75
        Value l = cross_entropy(g.constant({1, 2}, {0.0, std::log(3.0)}), {1});
        CHECK(l.scalar() == Catch::Approx(-std::log(0.75)).margin(1e-12));
    }
    SECTION("finite differences") {
        Rng rng = Rng::stream(22, "ce");
        Tensor logits = Tensor::randn({5, 7}, rng);
        logits.set_requires_grad();
        std::vector<int> targets{0, 3, 6, 2, 2};
        double err = fd_max_err({{"logits", &logits}}, [&](Graph& g) {
            return cross_entropy(g.leaf(logits), targets);
        });
        CHECK(err < 1e-6);
    }
}

TEST_CASE("backward contracts") {
    Rng rng = Rng::stream(23, "bc");
    Tensor p = Tensor::randn({2, 3}, rng);
    p.set_requires_grad();

    SECTION("sum of a leaf gives all-ones gradient") {
        Graph g;
        g.backward(sum_all(g.leaf(p)));
        CHECK(p.grad == std::vector<double>(6, 1.0));
    }
    SECTION("zero-scaled path gives exactly zero gradient") {
        Graph g;
        g.backward(scale(sum_all(vidcap::tanh(g.leaf(p))), 0.0));
        CHECK(p.grad == std::vector<double>(6, 0.0));
    }
    SECTION("repeated backward accumulates") {
        Graph g;
        Value loss = sum_all(g.leaf(p));
        g.backward(loss);
        g.backward(loss);
        CHECK(p.grad == std::vector<double>(6, 2.0));
    }
    SECTION("tensors without requires_grad stay untouched") {
        Tensor q = Tensor::randn({2, 3}, rng);
        Graph g;
        g.backward(sum_all(mul(g.leaf(p), g.leaf(q))));
        CHECK(q.grad.empty());
        CHECK(p.grad == q.data);
    }
    SECTION("backward demands a scalar loss") {
        Graph g;
        Value v = g.leaf(p);
        CHECK_THROWS_AS(g.backward(v), ShapeError);
    }
}

TEST_CASE("mac counter tracks matmul work by scope") {
    Graph g;
    Rng rng = Rng::stream(24, "mac");
    Tensor a = Tensor::randn({3, 4}, rng);
    Tensor b = Tensor::randn({4, 5}, rng);
    Tensor c = Tensor::randn({5, 2}, rng);
    Value va = g.leaf(a), vb = g.leaf(b), vc = g.leaf(c);
    Value ab = matmul(va, vb);  // 3*4*5 = 60 in default scope
    {
        ScopedMacScope scope(g, MacScope::score);
        matmul(ab, vc);  // 3*5*2 = 30 in score scope
    }
    CHECK(g.macs().other == 60);
    CHECK(g.macs().score == 30);
    CHECK(g.macs().projection == 0);
    CHECK(g.macs().total() == 90);
    // elementwise and norm ops contribute nothing
    vidcap::tanh(ab);
    CHECK(g.macs().total() == 90);
}

TEST_CASE("a deep composite graph passes a full finite-difference check") {
    Rng rng = Rng::stream(25, "deep");
    Tensor x = Tensor::randn({4, 6}, rng);
    Tensor w1 = Tensor::randn({6, 8}, rng, 0.4);
    Tensor b1 = Tensor::randn({8}, rng, 0.1);
    Tensor gain = Tensor::randn({8}, rng, 0.2, 1.0);
    Tensor beta = Tensor::randn({8}, rng, 0.1);
    Tensor w2 = Tensor::randn({8, 3}, rng, 0.4);
    for (Tensor* t : {&x, &w1, &b1, &gain, &beta, &w2}) t->set_requires_grad();
    std::vector<int> targets{2, 0, 1, 2};
    double err = fd_max_err(
        {{"x", &x}, {"w1", &w1}, {"b1", &b1}, {"gain", &gain}, {"beta", &beta}, {"w2", &w2}},
        [&](Graph& g) {
            Value h = gelu(add_bias(matmul(g.leaf(x), g.leaf(w1)), g.leaf(b1)));
            Value n = layer_norm(h, g.leaf(gain), g.leaf(beta));
            return cross_entropy(matmul(n, g.leaf(w2)), targets);
        });
    CHECK(err < 1e-6);
}
