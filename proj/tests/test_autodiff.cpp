#include <cmath>
#include <random>

#include "doctest.h"
#include "gradcheck.hpp"
#include "treeman/error.hpp"

using namespace treeman;
using namespace treeman::ad;
using gradcheck::project;
using gradcheck::random_param;

namespace {

constexpr double kTol = 1e-6;  // per-op bound; the end-to-end bound is looser

std::vector<double> vals(const Tensor& t) { return {t.values().begin(), t.values().end()}; }

}  // namespace

TEST_CASE("matmul values") {
    Tape tape;
    const auto eye = Tensor::constant({2, 2}, {1, 0, 0, 1});
    const auto x = Tensor::constant({2, 3}, {1, 2, 3, 4, 5, 6});
    CHECK(vals(matmul(tape, eye, x)) == vals(x));
    const auto a = Tensor::constant({2, 2}, {1, 2, 3, 4});
    const auto ones = Tensor::constant({2, 1}, {1, 1});
    CHECK(vals(matmul(tape, a, ones)) == std::vector<double>{3, 7});
    CHECK_THROWS_AS(matmul(tape, a, Tensor::constant({3, 1}, {1, 1, 1})), Error);
}

TEST_CASE("softmax values") {
    Tape tape;
    const auto u = softmax(tape, Tensor::constant({3}, {0, 0, 0}));
    for (double v : u.values()) CHECK(v == doctest::Approx(1.0 / 3.0));
    const auto big = softmax(tape, Tensor::constant({2}, {1000, 0}));
    CHECK(std::isfinite(big.values()[0]));
    CHECK(big.values()[0] == doctest::Approx(1.0));
    CHECK(big.values()[1] == doctest::Approx(0.0));

    std::mt19937_64 rng(1);
    const auto x = random_param(rng, {4, 3}, -5, 5);
    const auto rows = softmax(tape, x, 1);
    for (std::size_t i = 0; i < 4; ++i) {
        double s = 0;
        for (std::size_t j = 0; j < 3; ++j) s += rows.at(i, j);
        CHECK(std::abs(s - 1.0) < 1e-12);
    }
    const auto cols = softmax(tape, x, 0);
    for (std::size_t j = 0; j < 3; ++j) {
        double s = 0;
        for (std::size_t i = 0; i < 4; ++i) s += cols.at(i, j);
        CHECK(std::abs(s - 1.0) < 1e-12);
    }
}

TEST_CASE("elementwise values") {
    Tape tape;
    CHECK(sigmoid(tape, Tensor::scalar(0.0)).item() == 0.5);
    CHECK(sigmoid(tape, Tensor::scalar(800.0)).item() == 1.0);
    CHECK(sigmoid(tape, Tensor::scalar(-800.0)).item() >= 0.0);
    const auto m = maxpool_cols(tape, Tensor::constant({1, 3}, {1, 3, 2}));
    CHECK(m.item() == 3.0);
    CHECK(mean_cols(tape, Tensor::constant({2, 2}, {1, 3, 2, 6})).values()[1] == 4.0);
    CHECK(vals(row_sum(tape, Tensor::constant({2, 2}, {1, 3, 2, 6}))) == std::vector<double>{4, 8});
}

TEST_CASE("maxpool routes the gradient to the arg-max column") {
    const auto x = Tensor::parameter({1, 3}, {1, 3, 2});
    Tape tape;
    const auto m = maxpool_cols(tape, x);
    tape.backward(reshape(tape, m, {1}));
    CHECK(std::vector<double>(x.grad().begin(), x.grad().end()) == std::vector<double>{0, 1, 0});
}

TEST_CASE("bce values") {
    Tape tape;
    const std::vector<int> one = {1};
    CHECK(bce(tape, Tensor::constant({1}, {0.5}), one).item() == doctest::Approx(std::log(2.0)));
    const std::vector<int> y = {1, 0, 1};
    CHECK(bce(tape, Tensor::constant({3}, {1, 0, 1}), y).item() < 1e-10);
    CHECK(std::isfinite(bce(tape, Tensor::constant({1}, {0.0}), one).item()));
}

TEST_CASE("basic accumulation") {
    const auto x = Tensor::parameter({1}, {1.5});
    Tape tape;
    tape.backward(scale(tape, x, 2.0));
    CHECK(x.grad()[0] == 2.0);
    x.zero_grad();
    Tape t2;
    t2.backward(add(t2, x, x));
    CHECK(x.grad()[0] == 2.0);

    Tape t3;
    CHECK_THROWS_AS(t3.backward(Tensor::constant({2}, {1, 2})), Error);
}

TEST_CASE("finite-difference check of every op") {
    std::mt19937_64 rng(2024);
    double worst = 0.0;
    for (int trial = 0; trial < 20; ++trial) {
        const std::size_t m = 1 + rng() % 4, k = 1 + rng() % 4, n = 1 + rng() % 4;
        const auto a = random_param(rng, {m, k});
        const auto b = random_param(rng, {k, n});
        const auto c = random_param(rng, {m, k});
        const auto row = random_param(rng, {k});
        const auto v = random_param(rng, {k});
        const auto table = random_param(rng, {5, k});
        std::vector<int> idx;
        for (std::size_t i = 0; i < m + 2; ++i) idx.push_back(static_cast<int>(rng() % 5));
        const auto p = random_param(rng, {k}, 0.05, 0.95);
        std::vector<int> y;
        for (std::size_t i = 0; i < k; ++i) y.push_back(static_cast<int>(rng() % 2));

        const std::vector<std::pair<const char*, std::function<double()>>> checks = {
            {"matmul", [&] { return gradcheck::max_error({a, b}, [&](Tape& t) { return project(t, matmul(t, a, b)); }); }},
            {"transpose", [&] { return gradcheck::max_error({a}, [&](Tape& t) { return project(t, transpose(t, a)); }); }},
            {"reshape", [&] { return gradcheck::max_error({a}, [&](Tape& t) { return project(t, reshape(t, a, {m * k})); }); }},
            {"add", [&] { return gradcheck::max_error({a, c}, [&](Tape& t) { return project(t, add(t, a, c)); }); }},
            {"add_row", [&] { return gradcheck::max_error({a, row}, [&](Tape& t) { return project(t, add_row(t, a, row)); }); }},
            {"mul", [&] { return gradcheck::max_error({a, c}, [&](Tape& t) { return project(t, mul(t, a, c)); }); }},
            {"scale", [&] { return gradcheck::max_error({a}, [&](Tape& t) { return project(t, scale(t, a, -1.7)); }); }},
            {"sigmoid", [&] { return gradcheck::max_error({a}, [&](Tape& t) { return project(t, sigmoid(t, a)); }); }},
            {"tanh", [&] { return gradcheck::max_error({a}, [&](Tape& t) { return project(t, tanh(t, a)); }); }},
            {"softmax1", [&] { return gradcheck::max_error({v}, [&](Tape& t) { return project(t, softmax(t, v)); }); }},
            {"softmax_rows", [&] { return gradcheck::max_error({a}, [&](Tape& t) { return project(t, softmax(t, a, 1)); }); }},
            {"softmax_cols", [&] { return gradcheck::max_error({a}, [&](Tape& t) { return project(t, softmax(t, a, 0)); }); }},
            {"concat0", [&] { return gradcheck::max_error({a, c}, [&](Tape& t) { return project(t, concat(t, {a, c}, 0)); }); }},
            {"concat1", [&] { return gradcheck::max_error({a, c}, [&](Tape& t) { return project(t, concat(t, {a, c}, 1)); }); }},
            {"slice0", [&] { return gradcheck::max_error({a}, [&](Tape& t) { return project(t, slice(t, a, 0, m / 2, m)); }); }},
            {"slice1", [&] { return gradcheck::max_error({a}, [&](Tape& t) { return project(t, slice(t, a, 1, 0, (k + 1) / 2)); }); }},
            {"gather", [&] { return gradcheck::max_error({table}, [&](Tape& t) { return project(t, gather(t, table, idx)); }); }},
            {"mean_cols", [&] { return gradcheck::max_error({a}, [&](Tape& t) { return project(t, mean_cols(t, a)); }); }},
            {"maxpool_cols", [&] { return gradcheck::max_error({a}, [&](Tape& t) { return project(t, maxpool_cols(t, a)); }); }},
            {"row_sum", [&] { return gradcheck::max_error({a}, [&](Tape& t) { return project(t, row_sum(t, a)); }); }},
            {"bce", [&] { return gradcheck::max_error({p}, [&](Tape& t) { return bce(t, p, y); }); }},
        };
        for (const auto& [name, run] : checks) {
            const double err = run();
            INFO(name << " trial " << trial);
            CHECK(err < kTol);
            worst = std::max(worst, err);
        }
    }
    MESSAGE("worst op relative error " << worst);
}

TEST_CASE("bce gradient formula") {
    const auto p = Tensor::parameter({2}, {0.3, 0.8});
    const std::vector<int> y = {1, 0};
    Tape tape;
    tape.backward(bce(tape, p, y));
    CHECK(p.grad()[0] == doctest::Approx((0.3 - 1.0) / (0.3 * 0.7)));
    CHECK(p.grad()[1] == doctest::Approx((0.8 - 0.0) / (0.8 * 0.2)));
}

TEST_CASE("a non-recording tape keeps no rules") {
    const auto a = Tensor::parameter({2, 2}, {1, 2, 3, 4});
    Tape tape(false);
    const auto y = tanh(tape, matmul(tape, a, a));
    CHECK(tape.size() == 0);
    CHECK(y.size() == 4);
}

TEST_CASE("adam") {
    SUBCASE("zero gradient leaves parameters unchanged") {
        auto w = Tensor::parameter({2}, {1.0, -2.0});
        w.grad_buffer();
        Adam opt;
        std::vector<Tensor> ps = {w};
        opt.step(ps);
        CHECK(vals(w) == std::vector<double>{1.0, -2.0});
        CHECK(opt.steps() == 1);
    }
    SUBCASE("first step moves by about lr against the gradient sign") {
        auto w = Tensor::parameter({2}, {0.0, 0.0});
        auto& g = w.grad_buffer();
        g = {3.0, -0.01};
        Adam opt({0.1, 0.9, 0.999, 1e-8});
        std::vector<Tensor> ps = {w};
        opt.step(ps);
        CHECK(w.values()[0] == doctest::Approx(-0.1).epsilon(1e-6));
        CHECK(w.values()[1] == doctest::Approx(0.1).epsilon(1e-4));
    }
    SUBCASE("converges on (w - 3)^2") {
        auto w = Tensor::parameter({1}, {0.0});
        Adam opt({0.1, 0.9, 0.999, 1e-8});
        std::vector<Tensor> ps = {w};
        for (int i = 0; i < 100; ++i) {
            zero_grad(ps);
            Tape tape;
            const auto d = add(tape, w, Tensor::constant({1}, {-3.0}));
            tape.backward(mul(tape, d, d));
            opt.step(ps);
        }
        CHECK(std::abs(w.values()[0] - 3.0) < 0.5);
    }
}

TEST_CASE("sgd and clipping") {
    auto w = Tensor::parameter({2}, {1.0, 1.0});
    w.grad_buffer() = {3.0, 4.0};
    std::vector<Tensor> ps = {w};
    CHECK(clip_grad_norm(ps, 5.0) == doctest::Approx(5.0));
    CHECK(w.grad()[0] == doctest::Approx(3.0));
    CHECK(clip_grad_norm(ps, 1.0) == doctest::Approx(5.0));
    CHECK(w.grad()[0] == doctest::Approx(0.6));
    CHECK(w.grad()[1] == doctest::Approx(0.8));
    Sgd sgd(0.5);
    sgd.step(ps);
    CHECK(w.values()[0] == doctest::Approx(0.7));
    CHECK(w.values()[1] == doctest::Approx(0.6));
}

TEST_CASE("shape errors") {
    Tape tape;
    CHECK_THROWS_AS(Tensor::zeros({1, 1, 1, 1}), Error);
    CHECK_THROWS_AS(Tensor::constant({2}, {1}), Error);
    CHECK_THROWS_AS(add(tape, Tensor::zeros({2}), Tensor::zeros({3})), Error);
    CHECK_THROWS_AS(softmax(tape, Tensor::zeros({2, 2}), 2), Error);
    const std::vector<int> bad = {7};
    CHECK_THROWS_AS(gather(tape, Tensor::zeros({2, 2}), bad), Error);
}
