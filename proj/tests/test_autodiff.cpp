#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <vector>

#include "concrete/autodiff.hpp"
#include "concrete/gradcheck.hpp"
#include "concrete/oracle.hpp"
#include "concrete/relaxations.hpp"

using namespace concrete;
using ad::NodeRef;
using ad::Reduce;
using ad::Tape;
using doctest::Approx;

TEST_CASE("scalar derivatives") {
    Tape t;
    auto x = t.variable(Tensor::scalar(0.0));
    auto y = ad::sigmoid(x);
    t.backward(y);
    CHECK(x.grad().item() == Approx(0.25));

    Tape t2;
    auto x2 = t2.variable(Tensor::scalar(0.0));
    t2.backward(ad::log_sigmoid(x2));
    const auto fd = oracle::finite_difference(
        [](std::span<const double> v) { return std::log(sigmoid(v[0])); }, std::vector<double>{0.0});
    CHECK(x2.grad().item() == Approx(0.5).epsilon(1e-12));
    CHECK(fd[0] == Approx(0.5).epsilon(1e-9));
}

TEST_CASE("logsumexp gradient is softmax") {
    Tape t;
    auto v = t.variable(Tensor::row({0.0, 0.0}));
    t.backward(ad::logsumexp(v, Reduce::All));
    CHECK(v.grad()[0] == Approx(0.5));
    CHECK(v.grad()[1] == Approx(0.5));
}

TEST_CASE("sum of leaves") {
    Tape t;
    std::vector<NodeRef> leaves;
    for (int i = 0; i < 5; ++i) leaves.push_back(t.variable(Tensor::scalar(i * 0.3)));
    NodeRef acc = leaves[0];
    for (int i = 1; i < 5; ++i) acc = acc + leaves[i];
    t.backward(acc);
    for (auto& l : leaves) CHECK(l.grad().item() == 1.0);
}

TEST_CASE("backward errors") {
    Tape t;
    auto v = t.variable(Tensor::row({1.0, 2.0}));
    CHECK_THROWS_AS(t.backward(v * 2.0), std::invalid_argument);
    CHECK_THROWS_AS(ad::add(v, t.variable(Tensor(3, 3))), std::invalid_argument);
    CHECK_THROWS_AS(ad::log(t.constant(Tensor::row({1.0, -1.0}))), std::domain_error);
    CHECK_THROWS_AS(ad::div(v, t.constant(Tensor::row({1.0, 0.0}))), std::domain_error);
    CHECK_THROWS_AS(ad::matmul(v, v), std::invalid_argument);
}

TEST_CASE("backward is idempotent and deterministic") {
    Tape t;
    auto x = t.variable(Tensor::row({0.3, -1.2, 2.0}));
    auto root = ad::logsumexp(ad::tanh(x) * x, Reduce::All);
    t.backward(root);
    const Tensor first = x.grad();
    t.backward(root);
    CHECK(x.grad() == first);

    Tape t2;
    auto x2 = t2.variable(Tensor::row({0.3, -1.2, 2.0}));
    t2.backward(ad::logsumexp(ad::tanh(x2) * x2, Reduce::All));
    CHECK(x2.grad() == first);
}

TEST_CASE("linearity of backward") {
    const Tensor in = Tensor::row({0.4, -0.7, 1.3});
    const double a = 2.5, b = -0.75;
    const auto f = [](NodeRef x) { return ad::sum(ad::exp(x) * ad::sigmoid(x)); };
    const auto g = [](NodeRef x) { return ad::logsumexp(x * x, Reduce::All); };

    Tape t;
    auto x = t.variable(in);
    auto fx = f(x), gx = g(x);
    auto combined = fx * a + gx * b;
    t.backward(fx);
    const Tensor gf = x.grad();
    t.backward(gx);
    const Tensor gg = x.grad();
    t.backward(combined);
    for (std::size_t i = 0; i < in.size(); ++i) CHECK(x.grad()[i] == Approx(a * gf[i] + b * gg[i]).epsilon(1e-15));
}

TEST_CASE("stop_gradient") {
    Tape t;
    auto x = t.variable(Tensor::scalar(3.0));
    t.backward(x * ad::stop_gradient(x));
    CHECK(x.grad().item() == 3.0);

    Tape t2;
    auto x2 = t2.variable(Tensor::scalar(3.0));
    t2.backward(ad::stop_gradient(x2) + 0.0);
    CHECK(x2.grad().item() == 0.0);
}

TEST_CASE("every primitive matches central differences") {
    RngStream rng(31, 0);
    for (const auto& c : gradcheck::primitive_cases()) {
        const double err = gradcheck::max_gradient_error(c, rng, 100);
        INFO(c.name << " max relative error " << err);
        CHECK(err < 1e-6);
    }
}

TEST_CASE("binary concrete sample gradient") {
    const double lambda = 0.7, noise = 0.37;
    Tape t;
    auto la = t.variable(Tensor::scalar(0.4));
    t.backward(on_tape::binary_concrete_sample(la, lambda, Tensor::scalar(noise)));
    const auto fd = oracle::finite_difference(
        [&](std::span<const double> v) { return sigmoid((v[0] + noise) / lambda); }, std::vector<double>{0.4});
    CHECK(oracle::relative_error(la.grad().item(), fd[0]) < 1e-6);
}

TEST_CASE("concrete log density gradient") {
    const std::vector<double> logits{0.3, -0.5, 1.1};
    const std::vector<double> x{0.2, 0.45, 0.35};
    const double lambda = 0.8;
    Tape t;
    auto l = t.variable(Tensor::row(logits));
    t.backward(on_tape::concrete_log_density(l, lambda, t.constant(Tensor::row(x))));
    const auto fd = oracle::finite_difference(
        [&](std::span<const double> v) {
            return concrete_log_density(LocationVector::from_logits({v.begin(), v.end()}), Temperature{lambda},
                                        SimplexPoint(x));
        },
        logits);
    CHECK(oracle::max_relative_error(l.grad().data(), fd, 1e-8) < 1e-6);
}

TEST_CASE("on-tape densities agree with the plain functions") {
    RngStream rng(32, 0);
    const auto alpha = LocationVector::from_logits({0.2, -1.0, 0.7, 0.0});
    const Temperature lam{0.6};
    for (int i = 0; i < 50; ++i) {
        std::vector<double> g(4);
        fill_gumbel(rng, g);
        const auto y = exp_concrete_sample_from_gumbels(alpha, lam, g);
        Tape t;
        auto l = t.constant(Tensor::row({alpha.logits().begin(), alpha.logits().end()}));
        auto ys = on_tape::exp_concrete_sample(l, lam.value(), Tensor::row(g));
        for (std::size_t k = 0; k < 4; ++k) CHECK(ys.value()[k] == Approx(y[k]).epsilon(1e-13));
        CHECK(on_tape::exp_concrete_log_density(l, lam.value(), ys).value().item() ==
              Approx(exp_concrete_log_density(alpha, lam, y)).epsilon(1e-12));

        const double u = sample_uniform(rng);
        const auto bl = BinaryLocation::from_logit(0.9);
        const auto by = binary_logit_sample_from_uniform(bl, lam, u);
        auto bt = on_tape::binary_logit_sample(t.constant(Tensor::scalar(0.9)), lam.value(),
                                               Tensor::scalar(logistic_from_uniform(u)));
        CHECK(bt.value().item() == Approx(by.y).epsilon(1e-13));
        CHECK(on_tape::binary_logit_log_density(t.constant(Tensor::scalar(0.9)), lam.value(), bt).value().item() ==
              Approx(binary_logit_log_density(bl, lam, by)).epsilon(1e-12));
        const double bx = sigmoid(by.y);
        if (bx > 0.0 && bx < 1.0) {
            CHECK(on_tape::binary_concrete_log_density(t.constant(Tensor::scalar(0.9)), lam.value(),
                                                       t.constant(Tensor::scalar(bx)))
                      .value()
                      .item() == Approx(binary_concrete_log_density(bl, lam, bx)).epsilon(1e-10));
        }
    }
}

TEST_CASE("discrete nodes block pathwise gradients") {
    Tape t;
    auto logits = t.variable(Tensor::row({0.1, 0.5, -0.2}));
    auto d = on_tape::discrete_sample(logits, Tensor::row({0.0, 0.0, 3.0}));
    CHECK(d.value() == Tensor::row({0.0, 0.0, 1.0}));
    auto f = ad::sum(d * ad::constant_like(d, Tensor::row({1.0, 2.0, 3.0})));
    CHECK_THROWS_AS(t.backward(f, {.reject_discrete = true}), ad::NonDifferentiableError);
    CHECK_NOTHROW(t.backward(f));

    auto lm = on_tape::discrete_log_mass(logits, d);
    CHECK_THROWS_AS(t.backward(lm, {.reject_discrete = true}), ad::NonDifferentiableError);
    t.backward(lm);  // score-function use: d is held fixed
    const double p2 = std::exp(-0.2) / (std::exp(0.1) + std::exp(0.5) + std::exp(-0.2));
    CHECK(logits.grad()[2] == Approx(1.0 - p2));
}

TEST_CASE("bernoulli nodes") {
    Tape t;
    auto l = t.variable(Tensor::row({0.5, -0.5}));
    auto d = on_tape::bernoulli_sample(l, Tensor::row({-0.4, 0.6}));
    CHECK(d.value() == Tensor::row({1.0, 1.0}));
    auto lm = on_tape::bernoulli_log_mass(l, d);
    CHECK(lm.value()[0] == Approx(std::log(sigmoid(0.5))));
    CHECK(lm.value()[1] == Approx(std::log(sigmoid(-0.5))));
}

TEST_CASE("hypercube embedding on tape") {
    Tape t;
    auto x = t.constant(Tensor(2, 4, std::vector<double>{0, 0, 1, 0, 0.25, 0.25, 0.25, 0.25}));
    auto e = on_tape::hypercube_embed(x, 4);
    CHECK(e.value() == Tensor(2, 2, std::vector<double>{1, -1, 0, 0}));
}
