#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <vector>

#include "concrete/model.hpp"
#include "concrete/relaxations.hpp"

using namespace concrete;
using ad::Tape;
using doctest::Approx;

namespace {

NodeMap as_variables(Tape& tape, const ParameterMap& params) {
    NodeMap out;
    for (const auto& [k, t] : params) out.emplace(k, tape.variable(t));
    return out;
}

Tensor random_bits(std::size_t rows, std::size_t cols, RngStream& rng) {
    Tensor t(rows, cols);
    for (auto& v : t.data()) v = sample_uniform(rng) < 0.5 ? 1.0 : 0.0;
    return t;
}

ParameterStore make_store(const NetworkSpec& spec, std::uint64_t seed) {
    RngStream rng(seed, 0);
    std::vector<double> rates(spec.target_units(), 0.3);
    return init_params(spec, rates, rng);
}

}  // namespace

TEST_CASE("parse model strings") {
    const NetworkSpec a = parse_model_spec("(200H~784V)");
    REQUIRE(a.layers.size() == 2);
    CHECK(a.layers[0] == LayerSpec{Role::Latent, 200});
    CHECK(a.layers[1] == LayerSpec{Role::Observed, 784});
    CHECK(a.links == std::vector<Link>{Link::Nonlinear});
    CHECK_FALSE(a.structured());

    const NetworkSpec b = parse_model_spec("(392V-240H-240H-392V)");
    REQUIRE(b.layers.size() == 4);
    CHECK(b.layers[0] == LayerSpec{Role::Observed, 392});
    CHECK(b.layers[1] == LayerSpec{Role::Latent, 240});
    CHECK(b.layers[2] == LayerSpec{Role::Latent, 240});
    CHECK(b.layers[3] == LayerSpec{Role::Observed, 392});
    CHECK(b.links == std::vector<Link>(3, Link::Linear));
    CHECK(b.structured());
    CHECK(b.context_units() == 392);

    CHECK(parse_model_spec("(200V–200H∼784V)") == parse_model_spec("(200V-200H~784V)"));

    for (const char* bad : {"(200H~)", "(200H~784V", "200H~784V)", "(0H~784V)", "(200H*784V)", "(200Q~784V)", "()",
                            "(200H~784V)x", "(200H~200V~784V)", "(200H)"}) {
        CAPTURE(bad);
        CHECK_THROWS_AS(parse_model_spec(bad), std::invalid_argument);
    }
    CHECK_THROWS_WITH_AS(parse_model_spec("(200H~)"), doctest::Contains("dangling"), std::invalid_argument);

    CHECK_THROWS_AS(parse_model_spec("(5H~16V)", 4), std::invalid_argument);
    CHECK(parse_model_spec("(6H~16V)", 8).groups(0) == 2);
    CHECK(parse_model_spec("(6H~16V)", 8).logit_width(0) == 16);
}

TEST_CASE("notation round trips") {
    for (const char* s : {"(200H~784V)", "(392V-240H-240H-392V)", "(240H-240H-784V)", "(16V)", "(8V~4H~8V)"}) {
        CAPTURE(s);
        const NetworkSpec spec = parse_model_spec(s);
        CHECK(spec.to_string() == s);
        CHECK(parse_model_spec(spec.to_string()) == spec);
    }
}

TEST_CASE("initialization") {
    const NetworkSpec spec = parse_model_spec("(100H-100H-3V)");
    RngStream rng(7, 0);
    const std::vector<double> rates{0.5, 0.0, 1.0};
    const ParameterStore store = init_params(spec, rates, rng);

    const Tensor& w = store.params.at("gen/0/W");
    CHECK(w.rows() == 100);
    CHECK(w.cols() == 100);
    double lo = 1, hi = -1;
    for (double v : w.data()) lo = std::min(lo, v), hi = std::max(hi, v);
    const double bound = std::sqrt(6.0 / 200.0);
    CHECK(bound == Approx(0.1732).epsilon(1e-3));
    CHECK(hi <= bound);
    CHECK(lo >= -bound);
    CHECK(hi > 0.95 * bound);
    CHECK(lo < -0.95 * bound);

    const Tensor& out_bias = store.params.at("gen/1/b");
    CHECK(out_bias[0] == 0.0);
    CHECK(out_bias[1] == -5.0);
    CHECK(out_bias[2] == 5.0);
    for (double v : store.params.at("gen/0/b").data()) CHECK(v == 0.0);
    for (double v : store.params.at("prior/logits").data()) CHECK(v == 0.0);

    CHECK(store.centering.contains("center/1"));
    CHECK_FALSE(store.centering.contains("center/0"));

    RngStream r2(7, 0);
    CHECK_THROWS_AS(init_params(spec, {}, r2), std::invalid_argument);
    const std::vector<double> short_rates{0.5};
    CHECK_THROWS_AS(init_params(spec, short_rates, r2), std::invalid_argument);

    const auto keys = parameter_keys(spec);
    CHECK(std::set<std::string>(keys.begin(), keys.end()).size() == store.params.size());
}

TEST_CASE("nonlinear links use two tanh layers as wide as the input layer") {
    const NetworkSpec spec = parse_model_spec("(6H~10V)", 8);
    const ParameterStore store = make_store(spec, 3);
    CHECK(store.params.at("gen/0/W0").cols() == 6);
    CHECK(store.params.at("gen/0/W1").cols() == 6);
    CHECK(store.params.at("gen/0/W2").cols() == 10);
    CHECK(store.params.at("inf/0/W0").cols() == 10);
    CHECK(store.params.at("inf/0/W2").cols() == 16);
    CHECK(store.params.at("prior/logits").cols() == 16);
}

TEST_CASE("binary relaxed unit with stubbed noise") {
    Tape tape;
    const NodeRef logits = tape.variable(Tensor(1, 1, 0.0));
    const Tensor noise(1, 1, logistic_from_uniform(0.5));
    const NodeRef y = on_tape::binary_logit_sample(logits, 2.0 / 3.0, noise);
    const NodeRef z = embed_relaxed(y, 2, 1);
    CHECK(z.value().item() == 0.0);
}

TEST_CASE("discrete forward emits exact corners") {
    for (std::size_t n : {2, 4, 8}) {
        CAPTURE(n);
        const NetworkSpec spec = parse_model_spec("(6H-6H~12V)", n);
        const ParameterStore store = make_store(spec, 11);
        RngStream data(1, 9), rng(2, 2);
        Tape tape;
        const NodeRef x = tape.constant(random_bits(32, 12, data));
        ForwardOptions o;
        o.mode = SampleMode::Discrete;
        const ForwardResult r = forward(spec, as_variables(tape, store.params), store.centering, {}, x, rng, o);
        REQUIRE(r.activity.size() == 2);
        for (const auto& a : r.activity) {
            CHECK(a.cols() == 6);
            for (double v : a.value().data()) CHECK((v == 1.0 || v == -1.0));
        }
        for (double v : r.log_weight.value().data()) CHECK(std::isfinite(v));
    }
}

TEST_CASE("relaxed forward approaches corners at low temperature") {
    for (std::size_t n : {2, 4}) {
        CAPTURE(n);
        const NetworkSpec spec = parse_model_spec("(8H~16V)", n);
        const ParameterStore store = make_store(spec, 5);
        RngStream data(1, 9), rng(3, 2);
        Tape tape;
        const NodeRef x = tape.constant(random_bits(500, 16, data));
        ForwardOptions o;
        o.objective.posterior_temperature = 0.01;
        o.objective.prior_temperature = 0.01;
        const ForwardResult r = forward(spec, as_variables(tape, store.params), store.centering, {}, x, rng, o);
        std::size_t near = 0, total = 0;
        for (double v : r.activity[0].value().data()) {
            near += std::abs(v) > 0.98;
            ++total;
        }
        CHECK(static_cast<double>(near) / static_cast<double>(total) > 0.95);
    }
}

TEST_CASE("n = 2 categorical path agrees with the binary path") {
    constexpr std::size_t N = 100000;
    const double l = 0.7;
    RngStream rng(42, 0);
    Tape tape;
    Tensor two(N, 2), one(N, 1, l), gumbels(N, 2), logistic(N, 1);
    for (std::size_t i = 0; i < N; ++i) two(i, 1) = l;
    fill_gumbel(rng, gumbels.data());
    fill_logistic(rng, logistic.data());

    const NodeRef nary = on_tape::hypercube_embed(on_tape::discrete_sample(tape.constant(two), gumbels), 2);
    const NodeRef bin = embed_discrete(on_tape::bernoulli_sample(tape.constant(one), logistic), 2, 1);
    double pn = 0, pb = 0;
    for (double v : nary.value().data()) pn += v == 1.0;
    for (double v : bin.value().data()) pb += v == 1.0;
    pn /= N;
    pb /= N;
    const double p = sigmoid(l);
    const double se = std::sqrt(p * (1 - p) / N);
    CHECK(std::abs(pn - pb) < 3 * std::sqrt(2.0) * se);
    CHECK(std::abs(pn - p) < 3 * se);
}

TEST_CASE("discrete and relaxed graphs share one parameter store") {
    const NetworkSpec spec = parse_model_spec("(4H~4H-12V)", 4);
    const ParameterStore store = make_store(spec, 8);
    const auto keys = parameter_keys(spec);
    CHECK(std::set<std::string>(keys.begin(), keys.end()).size() == store.params.size());
    RngStream data(1, 9);
    const Tensor xs = random_bits(16, 12, data);

    Tape relaxed;
    const NodeMap p = as_variables(relaxed, store.params);
    RngStream r1(4, 2);
    const ForwardResult fr = forward(spec, p, store.centering, {}, relaxed.constant(xs), r1, {});
    relaxed.backward(ad::mean(fr.log_weight, ad::Reduce::All), {.reject_discrete = true});
    for (const auto& k : keys) {
        CAPTURE(k);
        double norm = 0;
        for (double g : p.at(k).grad().data()) norm += g * g;
        CHECK(norm > 0);
    }

    Tape discrete;
    ForwardOptions o;
    o.mode = SampleMode::Discrete;
    RngStream r2(4, 2);
    const ForwardResult fd = forward(spec, as_variables(discrete, store.params), store.centering, {}, discrete.constant(xs), r2, o);
    for (double v : fd.log_weight.value().data()) CHECK(std::isfinite(v));
}

TEST_CASE("enumerated proposal and joint are normalized") {
    // Two binary latent units: enumerate all four states for one datum.
    const NetworkSpec spec = parse_model_spec("(2H~6V)");
    ParameterStore store = make_store(spec, 21);
    for (auto& v : store.params.at("prior/logits").data()) v = 0.4;
    RngStream data(1, 9), rng(0, 0);
    const Tensor xs = random_bits(1, 6, data);
    double q_total = 0, p_marginal = 0;
    std::vector<double> joint;
    for (int s = 0; s < 4; ++s) {
        Tape tape;
        ForwardOptions o;
        o.mode = SampleMode::Discrete;
        o.fixed_samples = {Tensor(1, 2, std::vector<double>{double(s & 1), double(s >> 1)})};
        const ForwardResult r = forward(spec, as_variables(tape, store.params), store.centering, {}, tape.constant(xs), rng, o);
        q_total += std::exp(r.log_proposal.value().item());
        p_marginal += std::exp(r.log_proposal.value().item() + r.log_weight.value().item());
        joint.push_back(r.log_likelihood.value().item() + 2 * std::log(sigmoid(0.4)) -
                        (s & 1 ? 0 : 0.4) - (s >> 1 ? 0 : 0.4));
    }
    CHECK(q_total == Approx(1.0).epsilon(1e-12));
    CHECK(std::log(p_marginal) == Approx(logsumexp(joint)).epsilon(1e-12));
}

TEST_CASE("structured forward has no ratio term") {
    const NetworkSpec spec = parse_model_spec("(8V-4H~4H-8V)");
    const ParameterStore store = make_store(spec, 2);
    CHECK_FALSE(store.params.contains("prior/logits"));
    CHECK(store.centering.contains("center/1"));
    CHECK_FALSE(store.centering.contains("center/2"));
    RngStream data(1, 9), rng(5, 2);
    Tape tape;
    const NodeRef ctx = tape.constant(random_bits(10, 8, data));
    const NodeRef x = tape.constant(random_bits(10, 8, data));
    const ForwardResult r = forward(spec, as_variables(tape, store.params), store.centering, ctx, x, rng, {});
    for (double v : r.log_ratio.value().data()) CHECK(v == 0.0);
    CHECK(r.log_weight.value() == r.log_likelihood.value());
    CHECK(r.layers.size() == 2);
    const NodeRef wrong = tape.constant(random_bits(10, 7, data));
    CHECK_THROWS_AS(forward(spec, as_variables(tape, store.params), store.centering, wrong, x, rng, {}),
                    std::invalid_argument);
}

TEST_CASE("centering running mean") {
    const NetworkSpec spec = parse_model_spec("(4H-4H-8V)");
    ParameterStore store = make_store(spec, 1);
    const Tensor a(1, 4, std::vector<double>{0.5, -0.25, 1.0, 0.0});
    double prev = 1.0;
    for (int step = 0; step < 50; ++step) {
        centering_update(store, {{"center/1", a}});
        const double err = std::abs(store.centering.at("center/1")[0] - a[0]);
        CHECK(err == Approx(0.9 * prev * 0.5).epsilon(1e-9));
        prev = err / 0.5;
    }
    CHECK_THROWS_AS(centering_update(store, {{"center/9", a}}), std::invalid_argument);
}

TEST_CASE("centering subtraction carries no gradient") {
    // Gradients with respect to the activity do not depend on the stored mean,
    // and the mean itself never receives gradient.
    for (double c : {0.0, 3.0}) {
        Tape tape;
        const NodeRef x = tape.variable(Tensor(2, 3, std::vector<double>{1, 2, 3, 4, 5, 6}));
        const NodeRef mean = tape.variable(Tensor(1, 3, c));
        const NodeRef w = tape.constant(Tensor(3, 1, std::vector<double>{0.5, -1, 2}));
        const NodeRef y = ad::matmul(x - ad::stop_gradient(ad::broadcast_to(mean, 2, 3)), w);
        tape.backward(ad::sum(y, ad::Reduce::All), {});
        CHECK(x.grad() == Tensor(2, 3, std::vector<double>{0.5, -1, 2, 0.5, -1, 2}));
        for (double g : mean.grad().data()) CHECK(g == 0.0);
    }

    // With a zero mean, centering on and off give identical model gradients.
    const NetworkSpec spec = parse_model_spec("(4H~4H~8V)");
    const ParameterStore store = make_store(spec, 6);
    RngStream data(1, 9);
    const Tensor xs = random_bits(8, 8, data);
    std::vector<ParameterMap> grads;
    for (bool on : {true, false}) {
        Tape tape;
        const NodeMap p = as_variables(tape, store.params);
        RngStream rng(9, 2);
        ForwardOptions o;
        o.centering = on;
        const ForwardResult r = forward(spec, p, store.centering, {}, tape.constant(xs), rng, o);
        tape.backward(ad::mean(r.log_weight, ad::Reduce::All), {});
        ParameterMap g;
        for (const auto& [k, n] : p) g.emplace(k, n.grad());
        grads.push_back(std::move(g));
    }
    CHECK(grads[0] == grads[1]);
}

TEST_CASE("evaluation leaves centering means untouched") {
    const NetworkSpec spec = parse_model_spec("(4H-4H-8V)");
    ParameterStore store = make_store(spec, 1);
    store.centering.at("center/1") = Tensor(1, 4, std::vector<double>{0.1, 0.2, 0.3, 0.4});
    const ParameterStore before = store;
    RngStream data(1, 9), rng(9, 3);
    Tape tape;
    ForwardOptions o;
    o.mode = SampleMode::Discrete;
    const ForwardResult r =
        forward(spec, as_variables(tape, store.params), store.centering, {}, tape.constant(random_bits(8, 8, data)), rng, o);
    CHECK(store.centering == before.centering);
    CHECK(store.params == before.params);
    REQUIRE(r.activity_means.contains("center/1"));
    const Tensor& m = r.activity_means.at("center/1");
    double expect = 0;
    for (std::size_t i = 0; i < 8; ++i) expect += r.activity[1].value()(i, 0);
    CHECK(m[0] == Approx(expect / 8));
}

TEST_CASE("checkpoint round trip") {
    const NetworkSpec spec = parse_model_spec("(6H~4H-12V)", 4);
    ParameterStore store = make_store(spec, 12);
    store.centering.at("center/1")[2] = 0.125;
    const auto dir = std::filesystem::temp_directory_path() / "concrete_test_model";
    std::filesystem::create_directories(dir);
    const auto path = dir / "checkpoint.bin";
    save_checkpoint(path, spec, store);
    CHECK_FALSE(std::filesystem::exists(path.string() + ".tmp"));
    const Checkpoint ck = load_checkpoint(path);
    CHECK(ck.spec == spec);
    CHECK(ck.store.params == store.params);
    CHECK(ck.store.centering == store.centering);

    {
        std::ofstream bad(dir / "bad.bin", std::ios::binary);
        bad << "NOTACKPT";
    }
    CHECK_THROWS_AS(load_checkpoint(dir / "bad.bin"), std::runtime_error);
    std::filesystem::resize_file(path, 40);
    CHECK_THROWS_AS(load_checkpoint(path), std::runtime_error);
    std::filesystem::remove_all(dir);
}
