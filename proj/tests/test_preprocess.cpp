#include <gtest/gtest.h>

#include <random>

#include "odmixer/preprocess.hpp"

using namespace odmixer;

namespace {

std::vector<double> random_counts(std::size_t size, std::mt19937_64& rng, int hi = 9)
{
    std::uniform_int_distribution<int> u(0, hi);
    std::vector<double> v(size);
    for (auto& x : v) x = u(rng);
    return v;
}

} // namespace

TEST(EstimateUod, HandExample)
{
    // Row 0 carries the example, row 1 is filler.
    std::vector<double> unf{10, 0, 0};
    std::vector<double> shorth{2, 3, 5, 1, 1, 1, 1, 1, 1};
    std::vector<double> longh{4, 4, 2, 1, 1, 1, 1, 1, 1};
    auto est = estimate_uod(unf, shorth, longh);
    EXPECT_NEAR(est.matrix(0, 0), 3.0, 1e-12);
    EXPECT_NEAR(est.matrix(0, 1), 3.5, 1e-12);
    EXPECT_NEAR(est.matrix(0, 2), 3.5, 1e-12);
    EXPECT_EQ(est.flags[0], RowFallback::normal);
    EXPECT_EQ(est.matrix.kind(), MatrixKind::estimated);
}

TEST(EstimateUod, Fallbacks)
{
    std::vector<double> unf{4, 4, 4};
    std::vector<double> shorth{0, 0, 0, 1, 3, 0, 0, 0, 0};
    std::vector<double> longh{1, 1, 2, 0, 0, 0, 0, 0, 0};
    auto est = estimate_uod(unf, shorth, longh);
    EXPECT_EQ(est.flags[0], RowFallback::used_long_only);
    EXPECT_EQ(est.flags[1], RowFallback::used_short_only);
    EXPECT_EQ(est.flags[2], RowFallback::used_uniform);
    EXPECT_DOUBLE_EQ(est.matrix(0, 2), 2.0);
    EXPECT_DOUBLE_EQ(est.matrix(1, 1), 3.0);
    EXPECT_DOUBLE_EQ(est.matrix(2, 0), 4.0 / 3.0);

    auto none = estimate_uod(unf, {}, {});
    for (auto f : none.flags) EXPECT_EQ(f, RowFallback::used_uniform);
}

TEST(EstimateUod, RejectsBadInput)
{
    std::vector<double> unf{1, -1};
    std::vector<double> h{1, 1, 1, 1};
    EXPECT_THROW(estimate_uod(unf, h, h), DomainError);
    std::vector<double> ok{1, 1};
    std::vector<double> small{1, 1, 1};
    EXPECT_THROW(estimate_uod(ok, small, h), DimensionError);
}

TEST(EstimateUod, MassConservation)
{
    std::mt19937_64 rng(1);
    std::size_t rows = 0;
    for (int trial = 0; rows < 1000; ++trial) {
        const std::size_t n = 2 + rng() % 8;
        auto unf = random_counts(n, rng, 50);
        auto s = random_counts(n * n, rng, 3);
        auto l = random_counts(n * n, rng, 3);
        if (trial % 3 == 0) std::fill(s.begin(), s.begin() + n, 0.0);
        if (trial % 5 == 0) std::fill(l.begin(), l.begin() + n, 0.0);
        std::span<const double> sh = s, lh = l;
        if (trial % 7 == 0) sh = {};
        auto est = estimate_uod(unf, sh, lh);
        for (std::size_t j = 0; j < n; ++j, ++rows) {
            double sum = 0.0;
            for (std::size_t k = 0; k < n; ++k) sum += est.matrix(j, k);
            EXPECT_NEAR(sum, unf[j], 1e-9);
        }
    }
}

TEST(EstimateUod, HistoryScaleEquivariance)
{
    std::mt19937_64 rng(2);
    for (int trial = 0; trial < 50; ++trial) {
        const std::size_t n = 2 + rng() % 6;
        auto unf = random_counts(n, rng, 30);
        auto s = random_counts(n * n, rng);
        auto l = random_counts(n * n, rng);
        auto base = estimate_uod(unf, s, l);
        auto scaled = s;
        for (std::size_t j = 0; j < n; ++j)
            for (std::size_t k = 0; k < n; ++k) scaled[j * n + k] *= 1.0 + static_cast<double>(j);
        auto est = estimate_uod(unf, scaled, l);
        for (std::size_t k = 0; k < n * n; ++k) EXPECT_NEAR(est.matrix.values()[k], base.matrix.values()[k], 1e-9);
    }
}

TEST(EstimateUod, PerfectHistoryRecoversTruth)
{
    std::mt19937_64 rng(3);
    for (int trial = 0; trial < 50; ++trial) {
        const std::size_t n = 2 + rng() % 6;
        auto iod = random_counts(n * n, rng);
        auto uod = random_counts(n * n, rng);
        for (std::size_t j = 0; j < n; ++j) uod[j * n + j] += 1.0;  // no empty rows
        std::vector<double> unf(n, 0.0);
        for (std::size_t j = 0; j < n; ++j)
            for (std::size_t k = 0; k < n; ++k) unf[j] += uod[j * n + k];
        auto est = estimate_uod(unf, uod, uod);
        auto od = estimate_od(ODMatrix(n, MatrixKind::incomplete, iod), est);
        for (std::size_t k = 0; k < n * n; ++k) EXPECT_EQ(od.values()[k], iod[k] + uod[k]);
    }
}

TEST(PrepareWindow, UsesHistoryAndRespectsStrict)
{
    const std::size_t n = 2, days = 8, p = 3;
    std::vector<double> iod(days * p * n * n, 1.0), uod(days * p * n * n, 0.0);
    for (std::size_t d = 0; d < days; ++d)
        for (std::size_t t = 0; t < p; ++t) {
            const std::size_t base = (d * p + t) * n * n;
            uod[base + 1] = 2.0;  // origin 0 always heads to 1
            uod[base + 2] = 4.0;  // origin 1 always heads to 0
        }
    ODDataset ds(n, days, p, 15, iod, uod);
    auto w = prepare_cur_window(ds, 7, 2, 2, true);
    ASSERT_EQ(w.size(), 2u);
    for (const auto& m : w) {
        EXPECT_EQ(m(0, 1), 3.0);
        EXPECT_EQ(m(1, 0), 5.0);
        EXPECT_EQ(m(0, 0), 1.0);
    }
    EXPECT_THROW(prepare_cur_window(ds, 3, 2, 2, true), HistoryError);
    EXPECT_NO_THROW(prepare_cur_window(ds, 3, 2, 2, false));
    auto day0 = prepare_cur_window(ds, 0, 0, 1);
    EXPECT_EQ(day0[0](0, 0), 2.0);  // uniform spread of 2 over 2 destinations plus IOD
    EXPECT_THROW(prepare_cur_window(ds, 7, 0, 2), DimensionError);
}

TEST(Normalizer, FitInvertAndFloor)
{
    std::vector<double> v{1, 2, 3, 4};
    auto norm = fit_normalizer(v);
    EXPECT_DOUBLE_EQ(norm.mean, 2.5);
    EXPECT_DOUBLE_EQ(norm.std, std::sqrt(1.25));
    for (double x : {-3.0, 0.0, 7.5}) EXPECT_NEAR(norm.invert(norm.apply(x)), x, 1e-12);
    std::vector<double> flat{5, 5, 5};
    EXPECT_EQ(fit_normalizer(flat).std, Normalizer::kMinStd);
    EXPECT_THROW(fit_normalizer(std::vector<double>{}), DataError);
    EXPECT_EQ(clamp_nonneg(-0.5), 0.0);
    EXPECT_EQ(clamp_nonneg(0.5), 0.5);
}

TEST(Normalizer, FitsOnlyTrainingDays)
{
    const std::size_t n = 2, days = 3, p = 1;
    std::vector<double> iod(days * p * n * n, 0.0), uod(days * p * n * n, 0.0);
    for (std::size_t k = 0; k < n * n; ++k) iod[k] = 2.0, iod[4 + k] = 4.0, iod[8 + k] = 1000.0;
    ODDataset ds(n, days, p, 15, iod, uod);
    auto norm = fit_normalizer(ds, 0, 2);
    EXPECT_DOUBLE_EQ(norm.mean, 3.0);
    EXPECT_DOUBLE_EQ(norm.std, 1.0);
}
