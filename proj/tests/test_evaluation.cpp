#include <gtest/gtest.h>

#include <random>
#include <sstream>

#include "odmixer/evaluation.hpp"
#include "odmixer/ingestion.hpp"

using namespace odmixer;

namespace {

ODDataset small_dataset(std::uint64_t seed = 1)
{
    ScheduleConfig c;
    c.n = 3;
    c.days = 6;
    c.intervals_per_day = 8;
    return build_dataset(generate_synthetic(desk_hz_spec(seed, c, 3.0)), c).dataset;
}

ODDataset constant_dataset(std::size_t n, std::size_t days, std::size_t p, double value)
{
    std::vector<double> iod(days * p * n * n, value), uod(days * p * n * n, value / 2);
    return ODDataset(n, days, p, 15, iod, uod);
}

} // namespace

TEST(Metrics, HandExample)
{
    auto r = metrics({{3, 3, 1, 1}}, {{2, 2, 2, 2}});
    EXPECT_NEAR(r.mae, 1.0, 1e-9);
    EXPECT_NEAR(r.rmse, 1.0, 1e-9);
    ASSERT_TRUE(r.wmape);
    EXPECT_NEAR(*r.wmape, 0.5, 1e-9);
    EXPECT_EQ(r.windows, 1u);
}

TEST(Metrics, ExactAndHomogeneous)
{
    auto exact = metrics({{1, 2}, {3, 4}}, {{1, 2}, {3, 4}});
    EXPECT_EQ(exact.mae, 0.0);
    EXPECT_EQ(exact.rmse, 0.0);
    EXPECT_EQ(*exact.wmape, 0.0);
    auto one = metrics({{2, 1}}, {{1, 3}});
    auto two = metrics({{3, -1}}, {{1, 3}});
    EXPECT_DOUBLE_EQ(two.mae, 2 * one.mae);
    EXPECT_DOUBLE_EQ(two.rmse, 2 * one.rmse);
    EXPECT_DOUBLE_EQ(*two.wmape, 2 * *one.wmape);
}

TEST(Metrics, UndefinedWmapeAndErrors)
{
    auto r = metrics({{1, 1}}, {{0, 0}});
    EXPECT_FALSE(r.wmape);
    EXPECT_EQ(r.wmape_str(), "undefined");
    EXPECT_THROW(metrics({{1}}, {}), DimensionError);
    EXPECT_THROW(metrics({{1, 2}}, {{1}}), DimensionError);
    EXPECT_THROW(metrics({}, {}), DimensionError);
}

TEST(Metrics, WmapeIdentity)
{
    std::mt19937_64 rng(4);
    std::uniform_real_distribution<double> u(0, 5);
    for (int trial = 0; trial < 20; ++trial) {
        const std::size_t n = 2 + rng() % 4, windows = 1 + rng() % 5;
        std::vector<std::vector<double>> p(windows), g(windows);
        double truth = 0;
        for (std::size_t w = 0; w < windows; ++w)
            for (std::size_t k = 0; k < n * n; ++k) {
                p[w].push_back(u(rng));
                g[w].push_back(u(rng));
                truth += g[w].back();
            }
        auto r = metrics(p, g);
        EXPECT_NEAR(*r.wmape, r.mae * static_cast<double>(n * n * windows) / truth, 1e-9);
    }
}

TEST(HistoricalAverage, MeanPerIntervalOfDay)
{
    const std::size_t n = 2, p = 2;
    std::vector<double> iod(2 * p * n * n, 0.0), uod(2 * p * n * n, 0.0);
    iod[1 * n * n + 3] = 2.0;            // day 0, slot 1
    iod[(p + 1) * n * n + 3] = 4.0;      // day 1, slot 1
    ODDataset ds(n, 2, p, 15, iod, uod);
    HistoricalAverage ha(ds, 0, 2);
    EXPECT_EQ(ha.predict(5, 1)[3], 3.0);
    EXPECT_EQ(ha.predict(5, 0)[3], 0.0);
    EXPECT_THROW(HistoricalAverage(ds, 1, 1), ConfigError);
}

TEST(HistoricalAverage, ExactOnConstantData)
{
    auto ds = constant_dataset(3, 4, 5, 2.0);
    HistoricalAverage ha(ds, 0, 2);
    auto s = build_samples(ds, ds, windows_in_days(ds, 2, 2, 4), Normalizer{}, true);
    auto r = evaluate_ha(ha, s);
    EXPECT_EQ(r.mae, 0.0);
    EXPECT_EQ(*r.wmape, 0.0);
}

TEST(HistoricalAverage, WeekdayConditioning)
{
    const std::size_t n = 2, days = 8;
    std::vector<double> iod(days * n * n, 0.0), uod(days * n * n, 0.0);
    for (std::size_t d = 0; d < days; ++d) iod[d * n * n] = static_cast<double>(d);
    ODDataset ds(n, days, 1, 15, iod, uod);
    HistoricalAverage plain(ds, 0, 8), dow(ds, 0, 8, true);
    EXPECT_EQ(plain.predict(8, 0)[0], 3.5);
    EXPECT_EQ(dow.predict(14, 0)[0], 3.5);  // days 0 and 7
    EXPECT_EQ(dow.predict(8, 0)[0], 1.0);
    EXPECT_EQ(dow.predict(10, 0)[0], 3.0);
}

TEST(Noise, ZeroSigmaIdentityAndSeeded)
{
    auto ds = small_dataset();
    auto same = inject_noise(ds, 0.0, 3, 4, 6);
    EXPECT_EQ(same.raw_iod(), ds.raw_iod());
    auto a = inject_noise(ds, 1.0, 3, 4, 6);
    auto b = inject_noise(ds, 1.0, 3, 4, 6);
    EXPECT_EQ(a.raw_iod(), b.raw_iod());
    EXPECT_EQ(a.raw_uod(), b.raw_uod());
    const std::size_t per_day = 8 * 9;
    for (std::size_t k = 0; k < 4 * per_day; ++k) EXPECT_EQ(a.raw_iod()[k], ds.raw_iod()[k]);
    bool changed = false;
    for (std::size_t k = 4 * per_day; k < 6 * per_day; ++k) {
        EXPECT_GE(a.raw_iod()[k], 0.0);
        changed |= a.raw_iod()[k] != ds.raw_iod()[k];
    }
    EXPECT_TRUE(changed);
    EXPECT_THROW(inject_noise(ds, -1.0, 1, 0, 1), DomainError);
}

TEST(Mask, ExactFractionAndNesting)
{
    auto ds = constant_dataset(3, 4, 5, 2.0);
    EXPECT_EQ(inject_mask(ds, 0.0, 1, 2, 4).raw_iod(), ds.raw_iod());
    auto all = inject_mask(ds, 1.0, 1, 2, 4);
    const std::size_t per_day = 5 * 9;
    for (std::size_t k = 2 * per_day; k < 4 * per_day; ++k) {
        EXPECT_EQ(all.raw_iod()[k], 0.0);
        EXPECT_EQ(all.raw_uod()[k], 0.0);
    }
    auto small = inject_mask(ds, 0.2, 9, 2, 4);
    auto large = inject_mask(ds, 0.5, 9, 2, 4);
    std::size_t zs = 0, zl = 0;
    for (std::size_t k = 0; k < ds.raw_iod().size(); ++k) {
        zs += small.raw_iod()[k] == 0.0;
        zl += large.raw_iod()[k] == 0.0;
        if (small.raw_iod()[k] == 0.0) {
            EXPECT_EQ(large.raw_iod()[k], 0.0);
        }
        if (k < 2 * per_day) {
            EXPECT_EQ(large.raw_iod()[k], 2.0);
        }
    }
    EXPECT_EQ(zs, 18u);
    EXPECT_EQ(zl, 45u);
    EXPECT_THROW(inject_mask(ds, 1.5, 1, 0, 1), DomainError);
}

TEST(Delta, RelativeIncrement)
{
    MetricsReport clean, noisy;
    clean.mae = 2.0;
    clean.rmse = 4.0;
    clean.wmape = 0.5;
    noisy.mae = 3.0;
    noisy.rmse = 4.0;
    noisy.wmape = 0.6;
    auto d = delta_errors(clean, noisy);
    EXPECT_DOUBLE_EQ(d.mae, 0.5);
    EXPECT_DOUBLE_EQ(d.rmse, 0.0);
    EXPECT_NEAR(*d.wmape, 0.2, 1e-12);
    EXPECT_EQ(percent(0.5), "+50.00%");
}

TEST(Robustness, ReportRows)
{
    auto ds = small_dataset();
    ModelConfig mc;
    mc.n = 3;
    mc.horizon = 2;
    mc.d = 4;
    mc.layers = 1;
    TrainConfig tc;
    tc.max_epochs = 2;
    tc.train_days = 4;
    tc.val_days = 1;
    tc.test_days = 1;
    auto tr = train(mc, ds, tc);
    auto rep = run_robustness(tr, ds, {1.0}, {0.0, 0.5}, 3);
    EXPECT_EQ(rep.mask[0].second.mae, rep.clean.mae);
    std::ostringstream os;
    write_robustness(rep, os);
    const auto text = os.str();
    EXPECT_EQ(text.substr(0, text.find('\n')), "setting,mae,rmse,wmape");
    EXPECT_NE(text.find("noise_sigma=1,"), std::string::npos);
    EXPECT_NE(text.find("mask_ratio=0.5,"), std::string::npos);
    EXPECT_NE(text.find("+Δerrors,"), std::string::npos);
}

TEST(Ablation, OneReportPerVariantPlusHa)
{
    auto ds = small_dataset();
    ModelConfig mc;
    mc.n = 3;
    mc.horizon = 2;
    mc.d = 4;
    mc.layers = 1;
    TrainConfig tc;
    tc.max_epochs = 1;
    tc.train_days = 4;
    tc.val_days = 1;
    tc.test_days = 1;
    std::vector<std::string> names;
    for (const auto& [name, _] : ablation_variants()) names.push_back(name);
    auto rows = run_ablation(mc, ds, tc, names);
    ASSERT_EQ(rows.size(), 9u);
    EXPECT_EQ(rows.front().name, "full");
    EXPECT_EQ(rows.back().name, "ha");
    EXPECT_THROW(run_ablation(mc, ds, tc, {"no_such"}), ConfigError);
    std::ostringstream os;
    write_reports(rows, os, false);
    const auto text = os.str();
    EXPECT_EQ(std::count(text.begin(), text.end(), '\n'), 10);
}

TEST(Perf, GridParsingAndTable)
{
    auto g = PerfGrid::parse("n=4,6;L=1");
    EXPECT_EQ(g.n, (std::vector<std::size_t>{4, 6}));
    EXPECT_EQ(g.layers, (std::vector<std::size_t>{1}));
    EXPECT_EQ(g.d, (std::vector<std::size_t>{16}));
    EXPECT_THROW(PerfGrid::parse("x=1"), ConfigError);
    EXPECT_THROW(PerfGrid::parse("n=0"), ConfigError);
    EXPECT_THROW(PerfGrid::parse("n=4a"), ConfigError);

    PerfOptions opt;
    g.d = {4};
    auto pts = perf_report(g, opt);
    ASSERT_EQ(pts.size(), 2u);
    for (const auto& p : pts) {
        ModelConfig mc;
        mc.n = p.n;
        mc.layers = p.layers;
        mc.d = p.d;
        mc.horizon = opt.horizon;
        EXPECT_EQ(p.param_count, expected_param_count(mc));
        EXPECT_GT(p.forward_ms, 0.0);
        EXPECT_GT(p.train_step_ms, 0.0);
    }
    std::ostringstream os;
    write_perf(pts, opt, os);
    EXPECT_EQ(os.str().front(), '#');
    EXPECT_NE(os.str().find("n,layers,d,forward_ms,train_step_ms,param_count\n"), std::string::npos);
    opt.repeats = 4;
    EXPECT_THROW(perf_report(g, opt), ConfigError);
}

TEST(Series, RowsRoundTripAndBounds)
{
    auto ds = small_dataset();
    auto w = windows_in_days(ds, 2, 4, 6);
    auto s = build_samples(ds, ds, w, Normalizer{}, true);
    std::vector<std::pair<std::size_t, std::size_t>> pairs{{0, 1}, {2, 0}};
    auto rows = series_rows(s, s.truth_cur, pairs);  // a perfect model
    ASSERT_EQ(rows.size(), pairs.size() * w.size());
    for (const auto& r : rows) EXPECT_EQ(r.truth, r.prediction);
    EXPECT_EQ(rows[1].pair_i, 2u);
    EXPECT_EQ(rows[1].interval, w[0].target_interval());

    std::stringstream ss;
    write_series(rows, ss);
    auto back = read_series(ss);
    ASSERT_EQ(back.size(), rows.size());
    for (std::size_t k = 0; k < rows.size(); ++k) {
        EXPECT_EQ(back[k].day, rows[k].day);
        EXPECT_EQ(back[k].truth, rows[k].truth);
        EXPECT_EQ(back[k].prediction, rows[k].prediction);
    }
    try {
        series_rows(s, s.truth_cur, {{3, 0}});
        FAIL() << "expected DomainError";
    } catch (const DomainError& e) {
        EXPECT_NE(std::string(e.what()).find("0..2"), std::string::npos);
    }
}
