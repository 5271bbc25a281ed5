#include <cmath>
#include <limits>
#include <numbers>

#include "doctest.h"
#include "eidos/errors.hpp"
#include "gradcheck.hpp"

using namespace eidos;
using eidos::testing::grad_check;
using eidos::testing::randn;
using eidos::testing::weighted_sum;

namespace {

constexpr int kSeeds = 20;
constexpr double kGradTol = 1e-4;

Tensor mat(std::size_t r, std::size_t c, std::vector<double> v) { return Tensor::matrix(r, c, std::move(v)); }

void check_all_seeds(const char* name, const std::function<std::vector<Tensor>(std::mt19937_64&)>& make,
                     const eidos::testing::LossFn& f) {
    for (int s = 0; s < kSeeds; ++s) {
        std::mt19937_64 rng(1000 + s);
        auto r = grad_check(f, make(rng));
        INFO(name << " seed " << s << " rel " << r.rel_error);
        CHECK(r.rel_error < kGradTol);
    }
}

}  // namespace

TEST_SUITE("tensor_core") {

TEST_CASE("tensor validates extents and length") {
    CHECK_THROWS_AS(Tensor({2, 0}, {}), DimensionError);
    CHECK_THROWS_AS(Tensor({2, 2}, {1, 2, 3}), DimensionError);
    Tensor t = Tensor::zeros({3, 4});
    CHECK(t.size() == 12);
    CHECK(numel(t.shape) == t.data.size());
}

TEST_CASE("matmul values") {
    Tape tape;
    Var b = tape.constant(mat(2, 2, {1, 2, 3, 4}));
    CHECK(matmul(tape.constant(mat(2, 2, {1, 0, 0, 1})), b).value().data == std::vector<double>{1, 2, 3, 4});
    CHECK(matmul(tape.constant(Tensor::zeros({2, 2})), b).value().data == std::vector<double>{0, 0, 0, 0});
    Var c = matmul(tape.constant(mat(2, 2, {1, 2, 3, 4})), tape.constant(mat(2, 2, {5, 6, 7, 8})));
    CHECK(c.value().data == std::vector<double>{19, 22, 43, 50});
}

TEST_CASE("matmul shape mismatch names both shapes") {
    Tape tape;
    try {
        matmul(tape.constant(Tensor::zeros({2, 3})), tape.constant(Tensor::zeros({2, 3})));
        FAIL("expected DimensionError");
    } catch (const DimensionError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("[2x3]") != std::string::npos);
        CHECK(msg.find("[2x3]", msg.find("[2x3]") + 1) != std::string::npos);
    }
}

TEST_CASE("softmax values") {
    Tape tape;
    auto u = softmax_lastdim(tape.constant(mat(1, 3, {0, 0, 0}))).value();
    for (double v : u.data) CHECK(v == doctest::Approx(1.0 / 3).epsilon(1e-15));
    auto p = softmax_lastdim(tape.constant(mat(1, 2, {0, std::log(2.0)}))).value();
    CHECK(p.data[0] == doctest::Approx(1.0 / 3).epsilon(1e-14));
    CHECK(p.data[1] == doctest::Approx(2.0 / 3).epsilon(1e-14));

    std::mt19937_64 rng(3);
    Tensor x = randn({4, 5}, rng);
    Tensor xs = x;
    for (auto& v : xs.data) v += 17.25;
    auto a = softmax_lastdim(tape.constant(x)).value();
    auto b = softmax_lastdim(tape.constant(xs)).value();
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(a.data[i] == doctest::Approx(b.data[i]).epsilon(1e-12));
    for (std::size_t r = 0; r < 4; ++r) {
        double s = 0;
        for (std::size_t c = 0; c < 5; ++c) s += a.at(r, c);
        CHECK(s == doctest::Approx(1.0).epsilon(1e-14));
    }
}

TEST_CASE("softmax masks negative infinity") {
    Tape tape;
    const double ninf = -std::numeric_limits<double>::infinity();
    auto p = softmax_lastdim(tape.constant(mat(1, 3, {1.0, ninf, 1.0}))).value();
    CHECK(p.data[1] == 0.0);
    CHECK(p.data[0] == doctest::Approx(0.5));
}

TEST_CASE("layer_norm values") {
    Tape tape;
    Var g = tape.constant(Tensor::filled({1, 3}, 1.0));
    Var b = tape.constant(Tensor::zeros({1, 3}));
    for (double v : layer_norm(tape.constant(mat(1, 3, {4, 4, 4})), g, b, 1e-6).value().data)
        CHECK(std::abs(v) < 1e-6);

    Var g2 = tape.constant(Tensor::filled({1, 2}, 1.0));
    Var b2 = tape.constant(Tensor::zeros({1, 2}));
    auto y = layer_norm(tape.constant(mat(1, 2, {1, -1})), g2, b2, 1e-6).value();
    CHECK(y.data[0] == doctest::Approx(1.0).epsilon(1e-6));
    CHECK(y.data[1] == doctest::Approx(-1.0).epsilon(1e-6));

    std::mt19937_64 rng(5);
    Var bias = tape.constant(randn({1, 3}, rng));
    auto z = layer_norm(tape.constant(randn({4, 3}, rng)), tape.constant(Tensor::zeros({1, 3})), bias, 1e-6).value();
    for (std::size_t r = 0; r < 4; ++r)
        for (std::size_t c = 0; c < 3; ++c) CHECK(z.at(r, c) == bias.at(0, c));
}

TEST_CASE("depthwise_conv1d values") {
    Tape tape;
    auto out = depthwise_conv1d(tape.constant(mat(3, 1, {1, 2, 3})), tape.constant(mat(2, 1, {1, -1}))).value();
    CHECK(out.shape == Shape{2, 1});
    CHECK(out.data == std::vector<double>{-1, -1});

    std::mt19937_64 rng(11);
    Tensor x = randn({6, 3}, rng);
    Tensor delta = Tensor::zeros({3, 3});
    for (std::size_t c = 0; c < 3; ++c) delta.at(0, c) = 1.0;
    auto id = depthwise_conv1d(tape.constant(x), tape.constant(delta)).value();
    for (std::size_t t = 0; t < 4; ++t)
        for (std::size_t c = 0; c < 3; ++c) CHECK(id.at(t, c) == x.at(t, c));

    auto avg = depthwise_conv1d(tape.constant(x), tape.constant(Tensor::filled({3, 3}, 1.0 / 3))).value();
    for (std::size_t t = 0; t < 4; ++t)
        for (std::size_t c = 0; c < 3; ++c) {
            const double m = (x.at(t, c) + x.at(t + 1, c) + x.at(t + 2, c)) / 3;
            CHECK(avg.at(t, c) == doctest::Approx(m).epsilon(1e-14));
        }
    CHECK_THROWS_AS(depthwise_conv1d(tape.constant(Tensor::zeros({2, 3})), tape.constant(delta)), WindowError);
}

TEST_CASE("backward basics") {
    Tape tape;
    Var x = tape.leaf(mat(1, 1, {3.0}), true);
    tape.backward(sum(mul(x, x)));
    CHECK(x.grad()[0] == 6.0);

    Tape t2;
    Var x2 = t2.leaf(mat(2, 2, {1, 2, 3, 4}), true);
    Var y = stop_gradient(x2);
    CHECK_FALSE(y.requires_grad());
    CHECK(y.value() == x2.value());
    Var loss = sum(mul(y, y));
    t2.backward(loss);
    for (double g : x2.grad()) CHECK(g == 0.0);

    Tape t3;
    Var v = t3.leaf(Tensor::zeros({2, 2}), true);
    CHECK_THROWS_AS(t3.backward(mul(v, v)), ContractError);
}

TEST_CASE("tape parents precede children") {
    Tape tape;
    std::mt19937_64 rng(9);
    Var a = tape.leaf(randn({3, 4}, rng), true);
    Var b = tape.leaf(randn({4, 2}, rng), true);
    Var loss = mean(silu(matmul(a, b)));
    tape.backward(loss);
    for (std::size_t i = 0; i < tape.size(); ++i)
        for (int p : tape.node(static_cast<int>(i)).parents) CHECK(p < static_cast<int>(i));
    for (std::size_t i = 0; i < tape.size(); ++i) {
        const auto& n = tape.node(static_cast<int>(i));
        CHECK(n.data.size() == numel(n.shape));
        if (!n.grad.empty()) CHECK(n.grad.size() == n.data.size());
    }
}

TEST_CASE("rope values and relative-position property") {
    Tape tape;
    std::vector<std::size_t> p0{0};
    std::mt19937_64 rng(21);
    Tensor x = randn({1, 8}, rng);
    CHECK(rope_rotate(tape.constant(x), p0, 2, 10000.0).value() == x);

    std::vector<std::size_t> p1{1};
    auto r = rope_rotate(tape.constant(mat(1, 4, {1, 0, 0, 0})), p1, 1, 10000.0).value();
    CHECK(r.data[0] == doctest::Approx(0.540302).epsilon(1e-6));
    CHECK(r.data[1] == doctest::Approx(0.841471).epsilon(1e-6));

    Tensor q = randn({1, 8}, rng), k = randn({1, 8}, rng);
    auto dot_at = [&](std::size_t pq, std::size_t pk) {
        std::vector<std::size_t> a{pq}, b{pk};
        auto rq = rope_rotate(tape.constant(q), a, 2, 10000.0).value();
        auto rk = rope_rotate(tape.constant(k), b, 2, 10000.0).value();
        double s = 0;
        for (std::size_t i = 0; i < 8; ++i) s += rq.data[i] * rk.data[i];
        return s;
    };
    CHECK(dot_at(5, 2) == doctest::Approx(dot_at(13, 10)).epsilon(1e-12));
    CHECK(dot_at(3, 7) == doctest::Approx(dot_at(40, 44)).epsilon(1e-12));
    CHECK_THROWS_AS(rope_rotate(tape.constant(Tensor::zeros({1, 6})), p0, 2, 10000.0), ConfigError);
}

TEST_CASE("attention rows are probability vectors") {
    // With v = identity, the attention output rows are the attention weights.
    Tape tape;
    std::mt19937_64 rng(31);
    const std::size_t T = 5;
    Tensor eye = Tensor::zeros({T, T});
    for (std::size_t i = 0; i < T; ++i) eye.at(i, i) = 1.0;
    auto w = causal_attention(tape.constant(randn({T, T}, rng)), tape.constant(randn({T, T}, rng)),
                              tape.constant(eye), 1)
                 .value();
    for (std::size_t i = 0; i < T; ++i) {
        double s = 0;
        for (std::size_t j = 0; j < T; ++j) {
            CHECK(w.at(i, j) >= 0.0);
            if (j > i) CHECK(w.at(i, j) == 0.0);
            s += w.at(i, j);
        }
        CHECK(s == doctest::Approx(1.0).epsilon(1e-14));
    }
}

TEST_CASE("finite-difference gradients of every primitive") {
    auto two = [](Shape a, Shape b) {
        return [a, b](std::mt19937_64& rng) { return std::vector<Tensor>{randn(a, rng), randn(b, rng)}; };
    };
    auto one = [](Shape a) { return [a](std::mt19937_64& rng) { return std::vector<Tensor>{randn(a, rng)}; }; };

    check_all_seeds("matmul", two({3, 4}, {4, 2}),
                    [](Tape&, const std::vector<Var>& v) { return weighted_sum(matmul(v[0], v[1]), 1); });
    check_all_seeds("add", two({3, 4}, {3, 4}),
                    [](Tape&, const std::vector<Var>& v) { return weighted_sum(add(v[0], v[1]), 2); });
    check_all_seeds("sub", two({3, 4}, {3, 4}),
                    [](Tape&, const std::vector<Var>& v) { return weighted_sum(sub(v[0], v[1]), 2); });
    check_all_seeds("mul", two({3, 4}, {3, 4}),
                    [](Tape&, const std::vector<Var>& v) { return weighted_sum(mul(v[0], v[1]), 3); });
    check_all_seeds("add_row", two({3, 4}, {1, 4}),
                    [](Tape&, const std::vector<Var>& v) { return weighted_sum(add_row(v[0], v[1]), 4); });
    check_all_seeds("sin", one({3, 4}), [](Tape&, const std::vector<Var>& v) { return weighted_sum(sin(v[0]), 5); });
    check_all_seeds("sigmoid", one({3, 4}),
                    [](Tape&, const std::vector<Var>& v) { return weighted_sum(sigmoid(v[0]), 6); });
    check_all_seeds("silu", one({3, 4}), [](Tape&, const std::vector<Var>& v) { return weighted_sum(silu(v[0]), 7); });
    check_all_seeds("tanh", one({3, 4}), [](Tape&, const std::vector<Var>& v) { return weighted_sum(tanh(v[0]), 8); });
    check_all_seeds("softmax", one({3, 4}),
                    [](Tape&, const std::vector<Var>& v) { return weighted_sum(softmax_lastdim(v[0]), 9); });
    check_all_seeds("layer_norm",
                    [](std::mt19937_64& rng) {
                        return std::vector<Tensor>{randn({3, 4}, rng), randn({1, 4}, rng), randn({1, 4}, rng)};
                    },
                    [](Tape&, const std::vector<Var>& v) {
                        return weighted_sum(layer_norm(v[0], v[1], v[2], 1e-6), 10);
                    });
    check_all_seeds("depthwise_conv1d", two({6, 4}, {3, 4}),
                    [](Tape&, const std::vector<Var>& v) { return weighted_sum(depthwise_conv1d(v[0], v[1]), 11); });
    check_all_seeds("l2_normalize_rows", one({3, 4}),
                    [](Tape&, const std::vector<Var>& v) { return weighted_sum(l2_normalize_rows(v[0], 1e-12), 12); });
    check_all_seeds("row_dot", two({3, 4}, {3, 4}),
                    [](Tape&, const std::vector<Var>& v) { return weighted_sum(row_dot(v[0], v[1]), 13); });
    check_all_seeds("mean", one({3, 4}), [](Tape&, const std::vector<Var>& v) { return mean(mul(v[0], v[0])); });
    check_all_seeds("slice_concat", two({3, 4}, {2, 4}), [](Tape&, const std::vector<Var>& v) {
        return weighted_sum(concat_rows(slice_rows(v[0], 1, 2), v[1]), 14);
    });
    check_all_seeds("rope", one({3, 8}), [](Tape&, const std::vector<Var>& v) {
        std::vector<std::size_t> pos{2, 5, 9};
        return weighted_sum(rope_rotate(v[0], pos, 2, 10000.0), 15);
    });
    check_all_seeds("causal_attention",
                    [](std::mt19937_64& rng) {
                        return std::vector<Tensor>{randn({3, 4}, rng), randn({5, 4}, rng), randn({5, 4}, rng)};
                    },
                    [](Tape&, const std::vector<Var>& v) {
                        return weighted_sum(causal_attention(v[0], v[1], v[2], 2), 16);
                    });
    const std::vector<double> levels{0.1, 0.5, 0.9};
    check_all_seeds("pinball_mean", two({3, 6}, {3, 2}), [&](Tape&, const std::vector<Var>& v) {
        return pinball_mean(v[0], v[1], levels);
    });
}

TEST_CASE("determinism of a forward/backward pass") {
    auto run = []() {
        std::mt19937_64 rng(77);
        Tape tape;
        Var a = tape.leaf(randn({4, 6}, rng), true);
        Var b = tape.leaf(randn({6, 6}, rng), true);
        Var loss = mean(softmax_lastdim(matmul(silu(a), b)));
        tape.backward(loss);
        auto g = a.grad();
        return std::make_pair(loss.item(), std::vector<double>(g.begin(), g.end()));
    };
    CHECK(run() == run());
}

}  // TEST_SUITE
