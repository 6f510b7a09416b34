#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <vector>

#include "concrete/noise.hpp"
#include "concrete/oracle.hpp"

using namespace concrete;

TEST_CASE("philox known answer for zero counter and key") {
    const auto block = RngStream::philox_block({0, 0, 0, 0}, {0, 0});
    CHECK(block[0] == 0x16554d9eca36314cULL);
    CHECK(block[1] == 0xdb20fe9d672d0fdcULL);
    CHECK(block[2] == 0xd7e772cee186176bULL);
    CHECK(block[3] == 0x7e68b68aec7ba23bULL);
}

TEST_CASE("stream matches numpy Philox raw output") {
    // numpy.random.Philox(key=[12345, 7]).random_raw(8)
    const std::uint64_t expected[] = {0x0a6effe13fb51d09ULL, 0x550d7ff1e9b79c89ULL, 0x5b961d1c4db72c59ULL,
                                      0x5881711dc14b2d09ULL, 0x561828786974a38aULL, 0x5d11a5a3d1ab059aULL,
                                      0x787ce27033bd3442ULL, 0x706c2c289329b0bcULL};
    RngStream rng(12345, 7);
    for (auto e : expected) CHECK(rng.next_u64() == e);
}

TEST_CASE("identical seed and stream give identical draws") {
    RngStream a(42, 3), b(42, 3), c(42, 4);
    bool any_diff = false;
    for (int i = 0; i < 100; ++i) {
        const double x = sample_uniform(a);
        CHECK(x == sample_uniform(b));
        any_diff |= x != sample_uniform(c);
    }
    CHECK(any_diff);
}

TEST_CASE("child streams are pure and distinct") {
    const RngStream parent(9, 1);
    RngStream c1 = parent.child(5), c2 = parent.child(5), c3 = parent.child(6);
    const auto a = c1.next_u64();
    CHECK(a == c2.next_u64());
    CHECK(a != c3.next_u64());
}

TEST_CASE("uniform stays strictly inside the unit interval") {
    CHECK(uniform_from_bits(0) > 0.0);
    CHECK(uniform_from_bits(~0ULL) < 1.0);
    RngStream rng(1, 0);
    std::vector<double> u(1'000'000);
    fill_uniform(rng, u);
    const auto [lo, hi] = std::minmax_element(u.begin(), u.end());
    CHECK(*lo > 0.0);
    CHECK(*hi < 1.0);
    const auto s = oracle::mean_and_se(u);
    CHECK(std::abs(s.mean - 0.5) < 0.002);
}

TEST_CASE("gumbel transform") {
    CHECK(gumbel_from_uniform(std::exp(-1.0)) == doctest::Approx(0.0).epsilon(1e-15));
    CHECK(gumbel_from_uniform(std::exp(-std::numbers::e)) == doctest::Approx(-1.0).epsilon(1e-14));
    RngStream rng(2, 0);
    std::vector<double> g(1'000'000);
    fill_gumbel(rng, g);
    const auto s = oracle::mean_and_se(g);
    CHECK(std::abs(s.mean - std::numbers::egamma) < 0.004);
}

TEST_CASE("logistic transform") {
    CHECK(logistic_from_uniform(0.5) == 0.0);
    CHECK(logistic_from_uniform(std::numbers::e / (1.0 + std::numbers::e)) == doctest::Approx(1.0).epsilon(1e-14));
    RngStream rng(3, 0);
    std::vector<double> l(1'000'000);
    fill_logistic(rng, l);
    const auto s = oracle::mean_and_se(l);
    // Var of the sample variance: (mu4 - sigma^4) / N with mu4 = 21/5 sigma^4 for the Logistic law.
    const double var = std::numbers::pi * std::numbers::pi / 3.0;
    const double sd_var = std::sqrt((4.2 - 1.0) * var * var / static_cast<double>(l.size()));
    CHECK(std::abs(s.variance - var) < 3.0 * sd_var);
}

TEST_CASE("gumbel max-stability") {
    constexpr int kDraws = 100'000;
    constexpr int kN = 5;
    RngStream rng(4, 0), ref(4, 1);
    std::vector<double> maxima(kDraws), direct(kDraws);
    for (int i = 0; i < kDraws; ++i) {
        double m = -INFINITY;
        for (int k = 0; k < kN; ++k) m = std::max(m, sample_gumbel(rng));
        maxima[i] = m - std::log(static_cast<double>(kN));
        direct[i] = sample_gumbel(ref);
    }
    const double d = oracle::ks_two_sample(maxima, direct);
    CHECK(oracle::kolmogorov_pvalue(d, kDraws / 2.0) > 0.01);
}

TEST_CASE("difference of two gumbels is logistic") {
    constexpr int kDraws = 100'000;
    RngStream rng(5, 0), ref(5, 1);
    std::vector<double> diff(kDraws), logistic(kDraws);
    for (int i = 0; i < kDraws; ++i) {
        diff[i] = sample_gumbel(rng) - sample_gumbel(rng);
        logistic[i] = sample_logistic(ref);
    }
    const double d = oracle::ks_two_sample(diff, logistic);
    CHECK(oracle::kolmogorov_pvalue(d, kDraws / 2.0) > 0.01);
}

TEST_CASE("next_below stays in range") {
    RngStream rng(6, 0);
    std::vector<int> counts(7, 0);
    for (int i = 0; i < 70'000; ++i) ++counts[rng.next_below(7)];
    for (int c : counts) CHECK(std::abs(c - 10'000) < 400);
}
