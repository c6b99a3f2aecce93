#include <gtest/gtest.h>

#include <random>
#include <sstream>

#include "odmixer/od_data.hpp"

using namespace odmixer;

namespace {

ODDataset random_dataset(std::size_t n, std::size_t days, std::size_t p, std::uint64_t seed)
{
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<int> u(0, 9);
    std::vector<double> iod(days * p * n * n), uod(days * p * n * n);
    for (auto& v : iod) v = u(rng);
    for (auto& v : uod) v = u(rng);
    return ODDataset(n, days, p, 15, std::move(iod), std::move(uod));
}

} // namespace

TEST(ODMatrix, RejectsNegativeAndWrongSize)
{
    EXPECT_THROW(ODMatrix(2, MatrixKind::complete, {1, 2, -1, 0}), DomainError);
    EXPECT_THROW(ODMatrix(2, MatrixKind::complete, {1, 2, 3}), DimensionError);
    EXPECT_THROW(ODMatrix(1, MatrixKind::complete), DomainError);
}

TEST(ODMatrix, CompleteIsSumAndUnfIsRowSum)
{
    ODMatrix iod(2, MatrixKind::incomplete, {1, 0, 2, 3});
    ODMatrix uod(2, MatrixKind::unfinished, {4, 1, 0, 5});
    auto od = complete_from(iod, uod);
    EXPECT_EQ(od.kind(), MatrixKind::complete);
    EXPECT_EQ(od(0, 0), 5);
    EXPECT_EQ(od(0, 1), 1);
    EXPECT_EQ(od(1, 0), 2);
    EXPECT_EQ(od(1, 1), 8);
    auto unf = unf_from_uod(uod);
    EXPECT_EQ(unf[0], 5);
    EXPECT_EQ(unf[1], 5);
    EXPECT_THROW(unf_from_uod(iod), DomainError);
    EXPECT_THROW(complete_from(uod, iod), DomainError);
}

TEST(ODDataset, IdentitiesHoldOnRandomData)
{
    auto ds = random_dataset(4, 3, 5, 7);
    EXPECT_EQ(ds.identity_residual(), 0.0);
    for (std::size_t d = 0; d < 3; ++d)
        for (std::size_t t = 0; t < 5; ++t) {
            auto uod = ds.uod_matrix(d, t);
            auto unf = unf_from_uod(uod);
            for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(unf[i], ds.unf(d, t)[i]);
        }
}

TEST(ODDataset, RejectsBadStorage)
{
    EXPECT_THROW(ODDataset(2, 1, 1, 15, {1, 2, 3}, {0, 0, 0, 0}), DataError);
    EXPECT_THROW(ODDataset(2, 1, 1, 15, {1, 2, 3, -4}, {0, 0, 0, 0}), DataError);
    auto ds = random_dataset(2, 1, 2, 1);
    EXPECT_THROW(ds.od(1, 0), DimensionError);
    EXPECT_THROW(ds.od(0, 2), DimensionError);
}

TEST(Windows, CountMatchesFormula)
{
    std::mt19937_64 rng(3);
    for (int trial = 0; trial < 30; ++trial) {
        const std::size_t days = 1 + rng() % 12, p = 1 + rng() % 10, horizon = 1 + rng() % 6;
        auto ds = random_dataset(2, days, p, trial);
        for (bool week : {false, true}) {
            const std::size_t d_min = week ? 7 : 1;
            const std::size_t expected = (days > d_min && p > horizon) ? (days - d_min) * (p - horizon) : 0;
            EXPECT_EQ(enumerate_windows(ds, horizon, week).size(), expected)
                << "days " << days << " p " << p << " T " << horizon << " week " << week;
        }
    }
}

TEST(Windows, BoundsAndOrder)
{
    auto ds = random_dataset(2, 3, 6, 1);
    auto w = enumerate_windows(ds, 4);
    ASSERT_EQ(w.size(), 4u);
    EXPECT_EQ(w.front(), (SampleWindow{1, 3, 4}));
    EXPECT_EQ(w.front().first_interval(), 0u);
    EXPECT_EQ(w.back(), (SampleWindow{2, 4, 4}));
    EXPECT_EQ(w.back().target_interval(), 5u);
    EXPECT_TRUE(enumerate_windows(ds, 7).empty());
    EXPECT_THROW(enumerate_windows(ds, 0), DomainError);
}

TEST(DatasetFile, RoundTrip)
{
    auto ds = random_dataset(3, 2, 4, 11);
    std::stringstream ss;
    write_dataset(ds, ss);
    auto back = read_dataset(ss);
    EXPECT_EQ(back.n(), 3u);
    EXPECT_EQ(back.days(), 2u);
    EXPECT_EQ(back.intervals_per_day(), 4u);
    EXPECT_EQ(back.interval_minutes(), 15u);
    EXPECT_EQ(back.raw_iod(), ds.raw_iod());
    EXPECT_EQ(back.raw_uod(), ds.raw_uod());
}

TEST(DatasetFile, RejectsCorruptInput)
{
    auto ds = random_dataset(2, 1, 2, 1);
    std::stringstream ss;
    write_dataset(ds, ss);
    const std::string bytes = ss.str();

    std::stringstream truncated(bytes.substr(0, bytes.size() - 3));
    EXPECT_THROW(read_dataset(truncated), DataError);

    std::stringstream trailing(bytes + "x");
    EXPECT_THROW(read_dataset(trailing), DataError);

    std::string bad = bytes;
    bad[0] = 'X';
    std::stringstream magic(bad);
    EXPECT_THROW(read_dataset(magic), DataError);
}
