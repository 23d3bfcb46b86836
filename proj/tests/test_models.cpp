#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <numeric>

#include "sml/models.hpp"
#include "test_util.hpp"

using namespace sml;

namespace {

DelayLine make_line(const std::vector<double>& samples_newest_last, std::size_t memory) {
    DelayLine dl(memory);
    for (double s : samples_newest_last) dl.push(s);
    return dl;
}

}  // namespace

TEST_CASE("delay line semantics") {
    DelayLine dl(3);
    CHECK(dl.taps()[0] == 0.0);
    CHECK(dl.taps()[2] == 0.0);
    dl.push(1.0);
    dl.push(2.0);
    CHECK(dl.taps()[0] == 2.0);  // newest first
    CHECK(dl.taps()[1] == 1.0);
    CHECK(dl.taps()[2] == 0.0);
    dl.push(3.0);
    dl.push(4.0);
    CHECK(dl.taps()[0] == 4.0);
    CHECK(dl.taps()[2] == 2.0);
    CHECK_THROWS_AS(DelayLine(0), std::invalid_argument);
}

TEST_CASE("two delay lines offset by one step differ by a one-slot shift") {
    auto g = testutil::rng(21);
    const auto stream = testutil::random_vector(g, 40);
    DelayLine a(5), b(5);
    for (std::size_t t = 0; t < stream.size(); ++t) a.push(stream[t]);
    for (std::size_t t = 0; t + 1 < stream.size(); ++t) b.push(stream[t]);
    for (std::size_t j = 0; j + 1 < 5; ++j) CHECK(b.taps()[j] == a.taps()[j + 1]);
}

TEST_CASE("sml_output") {
    SECTION("order 1 is the FIR dot product") {
        auto g = testutil::rng(22);
        const auto w = testutil::random_vector(g, 4);
        auto dl = make_line(testutil::random_vector(g, 9), 4);
        double dot = 0.0;
        for (std::size_t j = 0; j < 4; ++j) dot += dl.taps()[j] * w[j];
        CHECK(sml_output(dl, RankOneKernel({w})) == Catch::Approx(dot));
    }
    SECTION("forced arithmetic") {
        // taps newest first: push 2 then 1 -> [1, 2]
        auto dl = make_line({2.0, 1.0}, 2);
        const RankOneKernel k({{1, 0}, {0, 1}});
        CHECK(sml_output(dl, k) == Catch::Approx(2.0));
    }
    SECTION("dense contraction oracle") {
        auto g = testutil::rng(23);
        for (int i = 0; i < 20; ++i) {
            const auto k = testutil::random_rank_one(g, 3, 5);
            auto dl = make_line(testutil::random_vector(g, 12), 5);
            const auto power = tensor_power(dl.taps(), 3);
            const auto dense = materialize(k);
            const double oracle = std::inner_product(power.begin(), power.end(),
                                                     dense.coefficients().begin(), 0.0);
            CHECK(testutil::close_rel(sml_output(dl, k), oracle, 1e-12));
        }
    }
    SECTION("memory mismatch") {
        DelayLine dl(3);
        CHECK_THROWS_AS(sml_output(dl, RankOneKernel({{1, 2}})), std::invalid_argument);
    }
}

TEST_CASE("partial_products") {
    auto g = testutil::rng(24);
    SECTION("empty product at order 1") {
        auto dl = make_line(testutil::random_vector(g, 5), 3);
        CHECK(partial_products(dl, testutil::random_rank_one(g, 1, 3)) == std::vector<double>{1.0});
    }
    SECTION("two factors swap") {
        // FIR outputs (3, 5): w1 = [3,0], w2 = [5,0], taps [1, ...]
        auto dl = make_line({1.0}, 2);
        const RankOneKernel k({{3, 0}, {5, 0}});
        const auto pp = partial_products(dl, k);
        REQUIRE(pp.size() == 2);
        CHECK(pp[0] == Catch::Approx(5.0));
        CHECK(pp[1] == Catch::Approx(3.0));
    }
    SECTION("partial times own FIR output is constant over s") {
        for (int i = 0; i < 30; ++i) {
            const auto k = testutil::random_rank_one(g, 4, 3);
            auto dl = make_line(testutil::random_vector(g, 8), 3);
            const auto pp = partial_products(dl, k);
            const double full = sml_output(dl, k);
            for (std::size_t s = 0; s < 4; ++s) {
                const double f = fir_output(dl.taps(), k.factor(s));
                CHECK(testutil::close_rel(pp[s] * f, full, 1e-12));
            }
        }
    }
}

TEST_CASE("volterra_output") {
    auto g = testutil::rng(25);
    SECTION("zero kernel") {
        auto dl = make_line(testutil::random_vector(g, 6), 3);
        CHECK(volterra_output(dl, DenseKernel(2, 3)) == 0.0);
    }
    SECTION("scalar reduction") {
        auto dl = make_line({1.7}, 1);
        CHECK(volterra_output(dl, DenseKernel(2, 1, {4.0})) == Catch::Approx(4.0 * 1.7 * 1.7));
    }
    SECTION("nested loop oracle") {
        for (int i = 0; i < 20; ++i) {
            const auto h = testutil::random_dense(g, 2, 4);
            auto dl = make_line(testutil::random_vector(g, 9), 4);
            double acc = 0.0;
            for (std::size_t i1 = 0; i1 < 4; ++i1)
                for (std::size_t i2 = 0; i2 < 4; ++i2) {
                    const std::size_t idx[] = {i1, i2};
                    acc += h.at(idx) * dl.taps()[i1] * dl.taps()[i2];
                }
            CHECK(testutil::close_rel(volterra_output(dl, h), acc, 1e-12));
        }
    }
    SECTION("memory mismatch") {
        DelayLine dl(3);
        CHECK_THROWS_AS(volterra_output(dl, DenseKernel(2, 4)), std::invalid_argument);
    }
}

TEST_CASE("diagonal_output") {
    auto g = testutil::rng(26);
    SECTION("power filter with unit weights sums squared taps") {
        auto dl = make_line(testutil::random_vector(g, 7), 4);
        const DiagonalKernel dk(4, 1, {1, 1, 1, 1});
        double acc = 0.0;
        for (double t : dl.taps()) acc += t * t;
        CHECK(diagonal_output(dl, dk) == Catch::Approx(acc));
    }
    SECTION("scalar case") {
        auto dl = make_line({-0.4}, 1);
        CHECK(diagonal_output(dl, DiagonalKernel(1, 1, {2.5})) == Catch::Approx(2.5 * 0.16));
    }
    SECTION("zero-padded dense embedding oracle") {
        for (int i = 0; i < 20; ++i) {
            const std::size_t M = 6, D = 3;
            std::vector<double> entries(D * M, 0.0);
            for (std::size_t d = 0; d < D; ++d)
                for (std::size_t i1 = 0; i1 + d < M; ++i1)
                    entries[d * M + i1] = testutil::uniform(g, -1.0, 1.0);
            const DiagonalKernel dk(M, D, entries);
            std::vector<double> dense(M * M, 0.0);
            for (std::size_t d = 0; d < D; ++d)
                for (std::size_t i1 = 0; i1 + d < M; ++i1)
                    dense[i1 * M + (i1 + d)] = dk.entry(d, i1);
            auto dl = make_line(testutil::random_vector(g, 11), M);
            CHECK(testutil::close_rel(diagonal_output(dl, dk),
                                      volterra_output(dl, DenseKernel(2, M, dense)), 1e-12));
        }
    }
    SECTION("edge entries must be zero") {
        CHECK_THROWS_AS(DiagonalKernel(3, 2, {1, 1, 1, 1, 1, 1}), std::invalid_argument);
    }
}

TEST_CASE("sml equals dense contraction on 1000 random cases") {
    auto g = testutil::rng(27);
    for (int i = 0; i < 1000; ++i) {
        const std::size_t K = testutil::uniform_index(g, 1, 4);
        const std::size_t M = testutil::uniform_index(g, 1, 6);
        const auto k = testutil::random_rank_one(g, K, M);
        auto dl = make_line(testutil::random_vector(g, M + 3), M);
        const double fast = sml_output(dl, k);
        const double slow = volterra_output(dl, materialize(k));
        REQUIRE(std::abs(fast - slow) <= 1e-10 * (1.0 + std::abs(slow)));
    }
}

TEST_CASE("homogeneity and multilinearity") {
    auto g = testutil::rng(28);
    for (int i = 0; i < 50; ++i) {
        const std::size_t K = testutil::uniform_index(g, 1, 4);
        const std::size_t M = testutil::uniform_index(g, 2, 5);
        const auto k = testutil::random_rank_one(g, K, M);
        const auto stream = testutil::random_vector(g, M + 2);
        const double c = testutil::uniform(g, 0.3, 2.0);

        auto dl = make_line(stream, M);
        std::vector<double> scaled_stream = stream;
        for (double& s : scaled_stream) s *= c;
        auto dls = make_line(scaled_stream, M);
        const double base = sml_output(dl, k);
        CHECK(testutil::close_rel(sml_output(dls, k), std::pow(c, static_cast<double>(K)) * base,
                                  1e-10));

        // linearity in one factor with the others fixed
        const std::size_t s = testutil::uniform_index(g, 0, K - 1);
        auto fa = k.factors();
        auto fb = k.factors();
        fb[s] = testutil::random_vector(g, M);
        auto fsum = fa;
        for (std::size_t j = 0; j < M; ++j) fsum[s][j] = fa[s][j] + 2.0 * fb[s][j];
        const double lhs = sml_output(dl, RankOneKernel(fsum));
        const double rhs =
            sml_output(dl, RankOneKernel(fa)) + 2.0 * sml_output(dl, RankOneKernel(fb));
        CHECK(testutil::close_rel(lhs, rhs, 1e-10));
    }
}
