#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <limits>

#include "sml/filters.hpp"
#include "sml/experiments.hpp"
#include "test_util.hpp"

using namespace sml;

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

/// Plain textbook linear LMS for the K = 1 reduction check.
struct LinearLms {
    std::vector<double> w;
    DelayLine dl;
    double mu;
    LinearLms(std::size_t memory, double step) : w(memory, 0.0), dl(memory), mu(step) {}
    FilterStep step(double u, double d) {
        dl.push(u);
        double y = 0.0;
        for (std::size_t j = 0; j < w.size(); ++j) y += dl.taps()[j] * w[j];
        const double e = d - y;
        const double mu_e = mu * e;
        for (std::size_t j = 0; j < w.size(); ++j) w[j] += mu_e * dl.taps()[j];
        return {y, e};
    }
};

}  // namespace

TEST_CASE("order-1 SML-LMS matches classical linear LMS over 1e4 steps") {
    const std::size_t M = 8;
    const double mu = 0.01;
    RankOneKernel zero_init({std::vector<double>(M, 0.0)});
    SmlFilter sml(zero_init, mu, kInf, 1);
    LinearLms lin(M, mu);
    GaussianStream in(5), nz(6);
    auto gen = testutil::rng(7);
    const auto plant = testutil::random_rank_one(gen, 1, M);
    DelayLine dl(M);
    for (int t = 0; t < 10000; ++t) {
        const double u = in.next();
        dl.push(u);
        const double d = sml_output(dl, plant) + 0.01 * nz.next();
        const auto a = sml.lms_step(u, d);
        const auto b = lin.step(u, d);
        REQUIRE(std::abs(a.output - b.output) <= 1e-12 * (1.0 + std::abs(b.output)));
        for (std::size_t j = 0; j < M; ++j)
            REQUIRE(std::abs(sml.factors()[0][j] - lin.w[j]) <= 1e-12 * (1.0 + std::abs(lin.w[j])));
    }
}

TEST_CASE("zero error freezes the factors") {
    RankOneKernel init({{0.3, -0.1}, {1.0, 0.7}});
    SmlFilter f(init, 0.05, kInf, 1);
    DelayLine dl(2);
    GaussianStream in(9);
    for (int t = 0; t < 50; ++t) {
        const double u = in.next();
        dl.push(u);
        const double d = sml_output(dl, f.kernel());  // e(i) = 0 by construction
        const auto before = f.factors();
        f.lms_step(u, d);
        CHECK(f.factors() == before);
    }
}

TEST_CASE("two-step hand trace (scalar constant-signal model)") {
    // K = 2, M = 1, mu = 0.01, u = 1, d = 100 u^2; start w = (1, 0).
    SmlFilter f(steepest_descent_init(2, 1), 0.01, kInf, 1);
    auto s1 = f.lms_step(1.0, 100.0);
    CHECK(s1.output == Catch::Approx(0.0));
    CHECK(s1.error == Catch::Approx(100.0));
    CHECK(f.factors()[0][0] == Catch::Approx(1.0));  // y_1 = w_2 = 0, no move
    CHECK(f.factors()[1][0] == Catch::Approx(1.0));  // y_2 = w_1 = 1 -> += 0.01*100*1
    auto s2 = f.lms_step(1.0, 100.0);
    CHECK(s2.output == Catch::Approx(1.0));
    CHECK(s2.error == Catch::Approx(99.0));
    CHECK(f.factors()[0][0] == Catch::Approx(1.99));
    CHECK(f.factors()[1][0] == Catch::Approx(1.99));
}

TEST_CASE("the MAX rule swaps in the plain-LMS direction") {
    // Huge factor magnitudes push |y_s| above MAX; the update must then be
    // mu e u, independent of the partial products.
    RankOneKernel init({{10.0}, {10.0}});
    const double mu = 0.001;
    SmlFilter f(init, mu, 3.0, 1);
    const double d = 5.0;
    auto st = f.lms_step(1.0, d);  // y = 100, y_s = 10 > MAX
    const double e = d - 100.0;
    CHECK(st.error == Catch::Approx(e));
    CHECK(f.factors()[0][0] == Catch::Approx(10.0 + mu * e));
    CHECK(f.factors()[1][0] == Catch::Approx(10.0 + mu * e));
}

TEST_CASE("divergence flag is sticky and freezes the state") {
    RankOneKernel init({{1.0}, {1.0}});
    SmlFilter f(init, 1.0, kInf, 1);  // absurd step on d = 1e9 forces blowup
    for (int t = 0; t < 20 && !f.diverged(); ++t) f.lms_step(1.0, 1e9);
    REQUIRE(f.diverged());
    const auto frozen = f.factors();
    const auto st = f.lms_step(1.0, 1.0);
    CHECK(std::isnan(st.output));
    CHECK(f.factors() == frozen);
}

TEST_CASE("TRUE-LMS with L = 1 matches LMS") {
    const std::size_t M = 6;
    auto g = testutil::rng(41);
    const auto plant = testutil::random_rank_one(g, 2, M);
    SmlFilter a(steepest_descent_init(2, M), 0.01, 3.0, 1);
    SmlFilter b(steepest_descent_init(2, M), 0.01, 3.0, 1);
    GaussianStream in(10), nz(11);
    DelayLine dl(M);
    for (int t = 0; t < 3000; ++t) {
        const double u = in.next();
        dl.push(u);
        const double d = sml_output(dl, plant) + 0.03 * nz.next();
        a.lms_step(u, d);
        const auto ws = b.true_lms_step(u, d);
        REQUIRE(ws.errors.size() == 1);
        for (std::size_t s = 0; s < 2; ++s)
            for (std::size_t j = 0; j < M; ++j)
                REQUIRE(std::abs(a.factors()[s][j] - b.factors()[s][j]) <=
                        1e-12 * (1.0 + std::abs(a.factors()[s][j])));
    }
}

namespace {

/// Windowed-gradient oracle: recompute the TRUE-LMS update from scratch for
/// a window of (taps, desired) pairs at the given factors.
std::vector<std::vector<double>> true_lms_oracle(const std::vector<std::vector<double>>& w,
                                                 const std::vector<std::vector<double>>& taps,
                                                 const std::vector<double>& desired, double mu,
                                                 double max_value) {
    const std::size_t K = w.size();
    const std::size_t M = w[0].size();
    const std::size_t L = taps.size();
    auto out = w;
    for (std::size_t s = 0; s < K; ++s) {
        // stabilization test on the newest window entry
        double ys_now = 1.0;
        for (std::size_t r = 0; r < K; ++r)
            if (r != s) {
                double f = 0.0;
                for (std::size_t j = 0; j < M; ++j) f += taps[0][j] * w[r][j];
                ys_now *= f;
            }
        const bool fine = std::abs(ys_now) <= max_value;
        std::vector<double> acc(M, 0.0);
        for (std::size_t l = 0; l < L; ++l) {
            double y = 1.0;
            std::vector<double> fir(K);
            for (std::size_t r = 0; r < K; ++r) {
                double f = 0.0;
                for (std::size_t j = 0; j < M; ++j) f += taps[l][j] * w[r][j];
                fir[r] = f;
                y *= f;
            }
            const double e = desired[l] - y;
            double ys = 1.0;
            for (std::size_t r = 0; r < K; ++r)
                if (r != s) ys *= fir[r];
            const double coeff = fine ? e * ys : e;
            for (std::size_t j = 0; j < M; ++j) acc[j] += coeff * taps[l][j];
        }
        for (std::size_t j = 0; j < M; ++j)
            out[s][j] += (mu / static_cast<double>(L)) * acc[j];
    }
    return out;
}

}  // namespace

TEST_CASE("TRUE-LMS window update matches the windowed-sum oracle") {
    const std::size_t M = 3, K = 2, L = 2;
    const double mu = 0.05;
    auto g = testutil::rng(42);
    const auto plant = testutil::random_rank_one(g, K, M);
    SmlFilter f(steepest_descent_init(K, M), mu, 100.0, L);
    GaussianStream in(12);
    DelayLine dl(M);
    std::vector<std::vector<double>> window_taps;  // newest first
    std::vector<double> window_d;
    for (int t = 0; t < 40; ++t) {
        const double u = in.next();
        dl.push(u);
        const double d = sml_output(dl, plant);
        window_taps.insert(window_taps.begin(),
                           std::vector<double>(dl.taps().begin(), dl.taps().end()));
        window_d.insert(window_d.begin(), d);
        if (window_taps.size() > L) {
            window_taps.pop_back();
            window_d.pop_back();
        }
        const auto expected = true_lms_oracle(f.factors(), window_taps, window_d, mu, 100.0);
        f.true_lms_step(u, d);
        for (std::size_t s = 0; s < K; ++s)
            for (std::size_t j = 0; j < M; ++j)
                REQUIRE(f.factors()[s][j] == Catch::Approx(expected[s][j]).epsilon(1e-12));
    }
}

TEST_CASE("rectangular window estimate approaches the exact correlations") {
    const std::size_t M = 3, K = 2;
    const std::size_t dim = 9;
    const std::size_t L = 100000;
    GaussianStream in(77);
    DelayLine dl(M);
    std::vector<double> acc(dim * dim, 0.0);
    for (std::size_t j = 0; j < M; ++j) dl.push(in.next());
    for (std::size_t t = 0; t < L; ++t) {
        dl.push(in.next());
        const auto reg = tensor_power(dl.taps(), K);
        for (std::size_t a = 0; a < dim; ++a)
            for (std::size_t b = 0; b < dim; ++b) acc[a * dim + b] += reg[a] * reg[b];
    }
    auto gen = testutil::rng(43);
    const auto plant = testutil::random_rank_one(gen, K, M);
    const auto c = gaussian_correlations(M, K, plant, 0.0);
    for (std::size_t a = 0; a < dim; ++a)
        for (std::size_t b = 0; b < dim; ++b) {
            const double est = acc[a * dim + b] / static_cast<double>(L);
            const double exact = c.r_uK(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b));
            REQUIRE(std::abs(est - exact) <= 0.05 * (1.0 + std::abs(exact)));
        }
}

TEST_CASE("TRUE-LMS warm-up uses the available shorter window") {
    // First step of an L = 4 filter must equal an LMS step (window length 1).
    const std::size_t M = 4;
    SmlFilter a(steepest_descent_init(2, M), 0.02, 3.0, 4);
    SmlFilter b(steepest_descent_init(2, M), 0.02, 3.0, 1);
    const auto wa = a.true_lms_step(0.7, 2.0);
    b.lms_step(0.7, 2.0);
    REQUIRE(wa.errors.size() == 1);
    for (std::size_t s = 0; s < 2; ++s)
        for (std::size_t j = 0; j < M; ++j)
            CHECK(a.factors()[s][j] == Catch::Approx(b.factors()[s][j]).epsilon(1e-12));
}

TEST_CASE("baseline filters") {
    SECTION("zero plant, zero init stays at zero") {
        BaselineLmsFilter f(BaselineKind::volterra, 2, 3, 1, 0.05);
        GaussianStream in(14);
        for (int t = 0; t < 100; ++t) {
            const auto st = f.step(in.next(), 0.0);
            CHECK(st.output == 0.0);
        }
        for (double c : f.coefficients()) CHECK(c == 0.0);
    }
    SECTION("order-1 Volterra variant is classical linear LMS") {
        const std::size_t M = 5;
        BaselineLmsFilter f(BaselineKind::volterra, 1, M, 1, 0.01);
        LinearLms lin(M, 0.01);
        GaussianStream in(15);
        auto gen = testutil::rng(16);
        const auto plant = testutil::random_rank_one(gen, 1, M);
        DelayLine dl(M);
        for (int t = 0; t < 2000; ++t) {
            const double u = in.next();
            dl.push(u);
            const double d = sml_output(dl, plant);
            f.step(u, d);
            lin.step(u, d);
        }
        for (std::size_t j = 0; j < M; ++j)
            CHECK(f.coefficients()[j] == Catch::Approx(lin.w[j]).epsilon(1e-12));
    }
    SECTION("one hand-checked Kronecker update, K = 2, M = 2") {
        BaselineLmsFilter f(BaselineKind::volterra, 2, 2, 1, 0.1);
        // taps after pushes 1.0 then 2.0: [2, 1]; regressor = [4, 2, 2, 1]
        f.step(1.0, 0.0);  // y = 0, e = 0, no move
        const auto st = f.step(2.0, 3.0);
        CHECK(st.output == 0.0);
        CHECK(st.error == Catch::Approx(3.0));
        const std::vector<double> expect = {0.1 * 3 * 4, 0.1 * 3 * 2, 0.1 * 3 * 2, 0.1 * 3 * 1};
        for (std::size_t j = 0; j < 4; ++j)
            CHECK(f.coefficients()[j] == Catch::Approx(expect[j]));
    }
    SECTION("diagonal variants expose their layouts") {
        BaselineLmsFilter pf(BaselineKind::power_filter, 2, 4, 1, 0.1);
        CHECK(pf.coefficient_count() == 4);
        BaselineLmsFilter sv(BaselineKind::simplified_volterra, 2, 4, 3, 0.1);
        CHECK(sv.coefficient_count() == 12);
        CHECK_THROWS_AS(BaselineLmsFilter(BaselineKind::simplified_volterra, 3, 4, 2, 0.1),
                        std::invalid_argument);
    }
    SECTION("diagonal regressor squares and cross-products") {
        BaselineLmsFilter sv(BaselineKind::simplified_volterra, 2, 3, 2, 0.1);
        sv.step(1.0, 0.0);
        sv.step(2.0, 0.0);
        sv.step(3.0, 0.0);  // taps = [3, 2, 1]
        const auto reg = sv.regressor();
        const std::vector<double> expect = {9, 4, 1, 6, 2, 0};
        REQUIRE(reg.size() == 6);
        for (std::size_t j = 0; j < 6; ++j) CHECK(reg[j] == Catch::Approx(expect[j]));
    }
}

TEST_CASE("step bound") {
    SECTION("classical reduction at K = 1, M = 1") {
        const RankOneKernel plant({{1.0}});
        const double mu0 = step_bound(1, 1, plant, 1000000, 51);
        CHECK(std::abs(mu0 - 2.0 / 3.0) < 0.01);
    }
    SECTION("seed-split consistency within 2%") {
        const auto plant = random_decomposable_plant(2, 10, 52);
        const double a = step_bound(2, 10, plant, 1000000, 1001);
        const double b = step_bound(2, 10, plant, 1000000, 2002);
        CHECK(std::abs(a - b) <= 0.02 * std::max(a, b));
    }
    SECTION("matches the exact pairing expectation") {
        const auto plant = random_decomposable_plant(2, 6, 53);
        // exact E[||y||^2 ||u||^2] = sum_s sum_a E[y_s^2 u_a^2]
        double exact = 0.0;
        for (std::size_t s = 0; s < 2; ++s)
            for (std::size_t a = 0; a < 6; ++a) {
                std::vector<std::vector<double>> forms;
                for (std::size_t r = 0; r < 2; ++r)
                    if (r != s) {
                        forms.push_back(plant.factor(r));
                        forms.push_back(plant.factor(r));
                    }
                std::vector<double> e(6, 0.0);
                e[a] = 1.0;
                forms.push_back(e);
                forms.push_back(e);
                exact += gaussian_product_moment(forms);
            }
        const double mu0 = step_bound(2, 6, plant, 2000000, 54);
        const double mu0_exact = 2.0 / (9.0 * exact);
        CHECK(std::abs(mu0 - mu0_exact) <= 0.02 * mu0_exact);
    }
    SECTION("zero plant is rejected") {
        const RankOneKernel zero({std::vector<double>(3, 0.0), std::vector<double>(3, 0.0)});
        CHECK_THROWS_AS(step_bound(2, 3, zero, 10000, 55), std::domain_error);
    }
    SECTION("sample floor enforced") {
        const RankOneKernel plant({{1.0}});
        CHECK_THROWS_AS(step_bound(1, 1, plant, 100, 56), std::invalid_argument);
    }
}

TEST_CASE("max threshold") {
    CHECK(max_threshold(2, 1.0) == Catch::Approx(3.0));
    CHECK(max_threshold(3, 4.0) == Catch::Approx(8.0));
    CHECK_THROWS_AS(max_threshold(2, -1.0), std::invalid_argument);
}

namespace {

/// Row sums of the tabulated reference implementations; an independent route
/// to the closed forms.
OperationTotals lms_row_sums(long long K, long long M) {
    OperationTotals t;
    t.adds = K * (M - 1) + 1 + K * M;
    t.mults = K * M + K * (K - 2) + 1 + (M + 1) + K;
    return t;
}

OperationTotals true_lms_row_sums(long long K, long long M, long long L) {
    OperationTotals t;
    t.adds = L * K * (M - 1) + L + (L - 1) * K * M + K * M;
    t.mults = L * K * M + L * K * (K - 2) + L + L * K * M + L * K * M + K * M;
    return t;
}

}  // namespace

TEST_CASE("operation count closed forms") {
    SECTION("row-sum oracle on 20 shapes") {
        int checked = 0;
        for (long long K = 1; K <= 4; ++K)
            for (long long M : {1, 5, 10, 16, 21}) {
                const auto lms = operation_counts(K, M, 1, SmlAlgorithm::lms);
                const auto rows = lms_row_sums(K, M);
                REQUIRE(lms.adds == rows.adds);
                REQUIRE(lms.mults == rows.mults);
                for (long long L : {1, 2, 4, 8}) {
                    const auto tl = operation_counts(K, M, L, SmlAlgorithm::true_lms);
                    const auto trows = true_lms_row_sums(K, M, L);
                    REQUIRE(tl.adds == trows.adds);
                    REQUIRE(tl.mults == trows.mults);
                }
                ++checked;
            }
        CHECK(checked == 20);
    }
    SECTION("frozen values") {
        const auto a = operation_counts(2, 10, 1, SmlAlgorithm::lms);
        CHECK(a.adds == 39);
        CHECK(a.mults == 34);
        const auto b = operation_counts(2, 10, 4, SmlAlgorithm::true_lms);
        CHECK(b.adds == 156);
        CHECK(b.mults == 264);
        const auto c = operation_counts(1, 1, 1, SmlAlgorithm::lms);
        CHECK(c.adds == 2);
        CHECK(c.mults == 4);
    }
}

TEST_CASE("instrumented step counters") {
    auto g = testutil::rng(44);
    GaussianStream in(17);

    SECTION("LMS honest multiply count") {
        for (auto [K, M] : std::vector<std::pair<std::size_t, std::size_t>>{
                 {1, 1}, {1, 8}, {2, 1}, {2, 10}, {3, 5}}) {
            SmlFilter f(steepest_descent_init(K, M), 1e-4, kInf, 1);
            OpCount ops;
            f.lms_step(in.next(), 0.5, &ops);
            long long expected_mults;
            if (K == 1) {
                expected_mults = 2 * static_cast<long long>(M) + 1;
            } else {
                const long long Kl = K, Ml = M;
                expected_mults = 2 * Kl * Ml + Kl * Kl - Kl + 2;
            }
            const long long budget_adds = operation_counts(K, M, 1, SmlAlgorithm::lms).adds;
            CHECK(ops.mults == expected_mults);
            CHECK(ops.adds == budget_adds);
        }
    }

    SECTION("TRUE-LMS stays within the tabulated budget") {
        for (auto [K, M, L] : std::vector<std::array<std::size_t, 3>>{
                 {1, 4, 2}, {2, 10, 4}, {2, 10, 8}, {3, 5, 4}}) {
            SmlFilter f(steepest_descent_init(K, M), 1e-4, kInf, L);
            OpCount warm;
            for (std::size_t t = 0; t < L; ++t) f.true_lms_step(in.next(), 0.5, &warm);
            OpCount ops;
            f.true_lms_step(in.next(), 0.5, &ops);  // full window now
            const auto budget = operation_counts(K, M, L, SmlAlgorithm::true_lms);
            CHECK(ops.mults <= budget.mults);
        }
    }
}

TEST_CASE("stabilization keeps a small ensemble alive at 0.9 mu0") {
    const auto plant = random_decomposable_plant(2, 10, 60);
    const double mu0 = step_bound(2, 10, plant, 200000, 61);
    const double max_value = max_threshold(2, 1.0);
    std::size_t diverged = 0;
    for (std::uint64_t r = 0; r < 100; ++r) {
        SmlFilter f(steepest_descent_init(2, 10), 0.9 * mu0, max_value, 1);
        GaussianStream in(derive_seed(62, 1, r)), nz(derive_seed(62, 2, r));
        DelayLine dl(10);
        for (int t = 0; t < 5000 && !f.diverged(); ++t) {
            const double u = in.next();
            dl.push(u);
            f.lms_step(u, sml_output(dl, plant) + 0.0316 * nz.next());
        }
        if (f.diverged()) ++diverged;
    }
    CHECK(diverged == 0);
}
