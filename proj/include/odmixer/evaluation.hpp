#pragma once

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <iomanip>
#include <memory>
#include <numeric>
#include <ostream>
#include <random>
#include <sstream>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "odmixer/metrics.hpp"
#include "odmixer/training.hpp"

namespace odmixer {

// ---------------------------------------------------------------------------
// Historical average

/// Mean complete OD per interval-of-day over a day range. With `by_weekday`
/// the mean only covers training days sharing the target's day of week, and
/// falls back to all days when none do.
class HistoricalAverage {
public:
    HistoricalAverage(const ODDataset& ds, std::size_t day_begin, std::size_t day_end, bool by_weekday = false)
        : n_(ds.n()), intervals_(ds.intervals_per_day()), by_weekday_(by_weekday)
    {
        if (day_begin >= day_end || day_end > ds.days()) throw ConfigError("historical average: empty training split");
        const std::size_t nn = n_ * n_;
        all_.assign(intervals_ * nn, 0.0);
        weekday_.assign(7, std::vector<double>(intervals_ * nn, 0.0));
        std::vector<std::size_t> days_per_dow(7, 0);
        for (std::size_t d = day_begin; d < day_end; ++d) {
            ++days_per_dow[d % 7];
            for (std::size_t t = 0; t < intervals_; ++t) {
                auto od = ds.od(d, t);
                for (std::size_t p = 0; p < nn; ++p) {
                    all_[t * nn + p] += od[p];
                    weekday_[d % 7][t * nn + p] += od[p];
                }
            }
        }
        const double total = static_cast<double>(day_end - day_begin);
        for (auto& v : all_) v /= total;
        for (std::size_t w = 0; w < 7; ++w) {
            if (days_per_dow[w] == 0) {
                weekday_[w] = all_;
                continue;
            }
            for (auto& v : weekday_[w]) v /= static_cast<double>(days_per_dow[w]);
        }
    }

    std::span<const double> predict(std::size_t day, std::size_t interval) const
    {
        if (interval >= intervals_) throw DimensionError("historical average: interval out of range");
        const auto& src = by_weekday_ ? weekday_[day % 7] : all_;
        return std::span<const double>(src).subspan(interval * n_ * n_, n_ * n_);
    }

private:
    std::size_t n_, intervals_;
    bool by_weekday_;
    std::vector<double> all_;
    std::vector<std::vector<double>> weekday_;
};

inline MetricsReport evaluate_ha(const HistoricalAverage& ha, const SampleSet& samples)
{
    const auto t0 = std::chrono::steady_clock::now();
    MetricsAccumulator acc;
    for (std::size_t w = 0; w < samples.size(); ++w) {
        const auto& win = samples.windows[w];
        acc.add(ha.predict(win.day, win.target_interval()), samples.truth_cur_of(w));
    }
    auto r = acc.report();
    r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return r;
}

// ---------------------------------------------------------------------------
// Input corruption. Both touch IOD and UOD of days [day_begin, day_end) only.

inline ODDataset inject_noise(const ODDataset& ds, double sigma, std::uint64_t seed, std::size_t day_begin,
                              std::size_t day_end)
{
    if (!(sigma >= 0.0)) throw DomainError("inject_noise: sigma must be >= 0");
    if (day_begin > day_end || day_end > ds.days()) throw DomainError("inject_noise: day range out of bounds");
    auto iod = ds.raw_iod();
    auto uod = ds.raw_uod();
    if (sigma > 0.0) {
        std::mt19937_64 rng(seed);
        std::normal_distribution<double> z(0.0, sigma);
        const std::size_t per_day = ds.intervals_per_day() * ds.n() * ds.n();
        for (std::size_t k = day_begin * per_day; k < day_end * per_day; ++k) {
            iod[k] = clamp_nonneg(iod[k] + z(rng));
            uod[k] = clamp_nonneg(uod[k] + z(rng));
        }
    }
    return ODDataset(ds.n(), ds.days(), ds.intervals_per_day(), ds.interval_minutes(), std::move(iod), std::move(uod));
}

/// Zeroes round(ratio * cells) (day, interval, pair) cells chosen by a seeded
/// permutation. For a fixed seed the masked sets are nested in the ratio.
inline ODDataset inject_mask(const ODDataset& ds, double ratio, std::uint64_t seed, std::size_t day_begin,
                             std::size_t day_end)
{
    if (!(ratio >= 0.0 && ratio <= 1.0)) throw DomainError("inject_mask: ratio must be in [0, 1]");
    if (day_begin > day_end || day_end > ds.days()) throw DomainError("inject_mask: day range out of bounds");
    auto iod = ds.raw_iod();
    auto uod = ds.raw_uod();
    const std::size_t per_day = ds.intervals_per_day() * ds.n() * ds.n();
    std::vector<std::size_t> cells((day_end - day_begin) * per_day);
    std::iota(cells.begin(), cells.end(), day_begin * per_day);
    std::mt19937_64 rng(seed);
    std::shuffle(cells.begin(), cells.end(), rng);
    const auto count = static_cast<std::size_t>(std::llround(ratio * static_cast<double>(cells.size())));
    for (std::size_t k = 0; k < count; ++k) iod[cells[k]] = uod[cells[k]] = 0.0;
    return ODDataset(ds.n(), ds.days(), ds.intervals_per_day(), ds.interval_minutes(), std::move(iod), std::move(uod));
}

// ---------------------------------------------------------------------------
// Experiments

struct Experiment {
    TrainResult trained;
    SampleSet test;
    MetricsReport model_test;
    MetricsReport ha_test;
};

inline SampleSet test_samples(const TrainResult& tr, const ODDataset& inputs, const ODDataset& targets,
                              bool require_week_history = false)
{
    const auto& cfg = tr.model.config();
    auto w = windows_in_days(targets, cfg.horizon, tr.split.test_begin, tr.split.test_end, require_week_history);
    if (w.empty()) throw ConfigError("test split yields no windows");
    return build_samples(inputs, targets, w, tr.normalizer, cfg.ablation.omp, require_week_history);
}

inline Experiment run_experiment(const ModelConfig& model_cfg, const ODDataset& ds, const TrainConfig& train_cfg,
                                 bool ha_by_weekday = false)
{
    auto tr = train(model_cfg, ds, train_cfg);
    auto test = test_samples(tr, ds, ds, train_cfg.require_week_history);
    auto model_report = evaluate_model(tr.model, test, tr.normalizer);
    HistoricalAverage ha(ds, tr.split.train_begin, tr.split.train_end, ha_by_weekday);
    auto ha_report = evaluate_ha(ha, test);
    return Experiment{std::move(tr), std::move(test), model_report, ha_report};
}

struct NamedReport {
    std::string name;
    MetricsReport report;
};

inline void write_reports(const std::vector<NamedReport>& rows, std::ostream& os, bool with_timing = true)
{
    os << "name,mae,rmse,wmape,windows,param_count";
    if (with_timing) os << ",seconds";
    os << '\n';
    for (const auto& r : rows) {
        os << r.name << ',' << r.report.mae << ',' << r.report.rmse << ',' << r.report.wmape_str() << ','
           << r.report.windows << ',' << r.report.param_count;
        if (with_timing) os << ',' << r.report.seconds;
        os << '\n';
    }
}

/// Trains every requested variant from the same seed and reports its test
/// metrics, followed by the HA baseline.
inline std::vector<NamedReport> run_ablation(const ModelConfig& base, const ODDataset& ds, const TrainConfig& cfg,
                                             const std::vector<std::string>& names)
{
    std::vector<NamedReport> out;
    const auto variants = ablation_variants();
    std::optional<MetricsReport> ha;
    for (const auto& name : names) {
        auto it = std::find_if(variants.begin(), variants.end(), [&](const auto& v) { return v.first == name; });
        if (it == variants.end()) throw ConfigError("unknown ablation variant '" + name + "'");
        auto mc = base;
        mc.ablation = it->second;
        auto ex = run_experiment(mc, ds, cfg);
        out.push_back({name, ex.model_test});
        if (!ha) ha = ex.ha_test;
    }
    if (ha) out.push_back({"ha", *ha});
    return out;
}

/// Relative increments (corrupted - clean) / clean for each metric.
struct DeltaErrors {
    double mae = 0.0, rmse = 0.0;
    std::optional<double> wmape;
};

inline DeltaErrors delta_errors(const MetricsReport& clean, const MetricsReport& corrupted)
{
    DeltaErrors d;
    auto rel = [](double c, double x) { return c > 0.0 ? (x - c) / c : 0.0; };
    d.mae = rel(clean.mae, corrupted.mae);
    d.rmse = rel(clean.rmse, corrupted.rmse);
    if (clean.wmape && corrupted.wmape) d.wmape = rel(*clean.wmape, *corrupted.wmape);
    return d;
}

struct RobustnessReport {
    MetricsReport clean;
    std::vector<std::pair<double, MetricsReport>> noise;  // sigma -> metrics
    std::vector<std::pair<double, MetricsReport>> mask;   // ratio -> metrics
};

/// Evaluates a trained model on corrupted copies of the test days. Targets
/// always come from the clean dataset.
inline RobustnessReport run_robustness(TrainResult& tr, const ODDataset& ds, const std::vector<double>& sigmas,
                                       const std::vector<double>& ratios, std::uint64_t seed)
{
    RobustnessReport rep;
    const auto& s = tr.split;
    rep.clean = evaluate_model(tr.model, test_samples(tr, ds, ds), tr.normalizer);
    for (double sigma : sigmas) {
        auto noisy = inject_noise(ds, sigma, seed, s.test_begin, s.test_end);
        rep.noise.emplace_back(sigma, evaluate_model(tr.model, test_samples(tr, noisy, ds), tr.normalizer));
    }
    for (double ratio : ratios) {
        auto masked = inject_mask(ds, ratio, seed, s.test_begin, s.test_end);
        rep.mask.emplace_back(ratio, evaluate_model(tr.model, test_samples(tr, masked, ds), tr.normalizer));
    }
    return rep;
}

inline std::string percent(double x)
{
    std::ostringstream os;
    os << std::showpos << std::fixed << std::setprecision(2) << 100.0 * x << '%';
    return os.str();
}

/// Per corruption setting, a metrics row followed by its "+Δerrors" row of
/// relative increments over the clean run.
inline void write_robustness(const RobustnessReport& rep, std::ostream& os)
{
    os << "setting,mae,rmse,wmape\n";
    os << "clean," << rep.clean.mae << ',' << rep.clean.rmse << ',' << rep.clean.wmape_str() << '\n';
    auto emit = [&](const std::string& label, const MetricsReport& m) {
        os << label << ',' << m.mae << ',' << m.rmse << ',' << m.wmape_str() << '\n';
        const auto d = delta_errors(rep.clean, m);
        os << "+Δerrors," << percent(d.mae) << ',' << percent(d.rmse) << ','
           << (d.wmape ? percent(*d.wmape) : std::string("undefined")) << '\n';
    };
    for (const auto& [sigma, m] : rep.noise) {
        std::ostringstream l;
        l << "noise_sigma=" << sigma;
        emit(l.str(), m);
    }
    for (const auto& [ratio, m] : rep.mask) {
        std::ostringstream l;
        l << "mask_ratio=" << ratio;
        emit(l.str(), m);
    }
}

// ---------------------------------------------------------------------------
// Timing

struct PerfPoint {
    std::size_t n = 0, layers = 0, d = 0;
    std::size_t batch = 1;
    double forward_ms = 0.0;
    double train_step_ms = 0.0;
    std::size_t param_count = 0;
};

struct PerfOptions {
    std::size_t horizon = 4;
    std::size_t batch = 1;
    std::size_t warmup = 3;
    std::size_t repeats = 5;
    bool train_step = true;
    std::uint64_t seed = 1;
};

inline double median(std::vector<double> v)
{
    std::sort(v.begin(), v.end());
    return v.size() % 2 ? v[v.size() / 2] : 0.5 * (v[v.size() / 2 - 1] + v[v.size() / 2]);
}

template <typename F>
double elapsed_ms(F&& f)
{
    const auto t0 = std::chrono::steady_clock::now();
    f();
    return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
}

/// A model plus fixed random inputs for one grid point.
class PerfBench {
public:
    PerfBench(std::size_t n, std::size_t layers, std::size_t d, const PerfOptions& opt)
        : model_(make_config(n, layers, d, opt.horizon), opt.seed),
          prev_({opt.batch, n, n, opt.horizon}),
          cur_({opt.batch, n, n, opt.horizon}),
          gt_({opt.batch, n, n})
    {
        std::mt19937_64 rng(opt.seed);
        std::normal_distribution<float> z(0.0f, 1.0f);
        for (auto* t : {&prev_, &cur_, &gt_})
            for (auto& v : t->storage()) v = z(rng);
        tc_.learning_rate = 0.0;  // keeps every repeat on identical weights
    }

    void forward()
    {
        Tape<float> tape;
        auto out = model_.forward(tape, tape.constant(prev_), tape.constant(cur_));
        (void)out;
    }

    void train_step()
    {
        model_.params().zero_grad();
        Tape<float> tape;
        auto out = model_.forward(tape, tape.constant(prev_), tape.constant(cur_));
        auto g = tape.constant(gt_);
        tape.backward(dual_branch_loss(out.prev, out.cur, g, g));
        adam_step(model_.params(), adam_, tc_);
    }

    const ODMixer<float>& model() const { return model_; }

private:
    static ModelConfig make_config(std::size_t n, std::size_t layers, std::size_t d, std::size_t horizon)
    {
        ModelConfig mc;
        mc.n = n;
        mc.layers = layers;
        mc.d = d;
        mc.horizon = horizon;
        mc.validate();
        return mc;
    }

    ODMixer<float> model_;
    Tensor<float> prev_, cur_, gt_;
    TrainConfig tc_;
    AdamState<float> adam_;
};

/// Times every configuration round-robin: warmups first, then each repeat
/// visits all points once, so a burst of machine load is spread over all
/// sizes instead of landing on one. Reports per-point medians.
inline std::vector<PerfPoint> time_configs(const std::vector<std::array<std::size_t, 3>>& points,
                                           const PerfOptions& opt)
{
    if (opt.warmup < 3 || opt.repeats < 5) throw ConfigError("perf: need warmup >= 3 and repeats >= 5");
    if (points.empty()) throw ConfigError("perf: empty grid");
    std::vector<std::unique_ptr<PerfBench>> benches;
    std::vector<PerfPoint> out;
    for (const auto& [n, l, d] : points) {
        benches.push_back(std::make_unique<PerfBench>(n, l, d, opt));
        out.push_back({n, l, d, opt.batch, 0.0, 0.0, benches.back()->model().params().count()});
    }
    auto sweep = [&](auto&& step) {
        std::vector<std::vector<double>> ms(benches.size());
        for (std::size_t w = 0; w < opt.warmup; ++w)
            for (auto& b : benches) step(*b);
        for (std::size_t r = 0; r < opt.repeats; ++r)
            for (std::size_t k = 0; k < benches.size(); ++k) ms[k].push_back(elapsed_ms([&] { step(*benches[k]); }));
        return ms;
    };
    auto fwd = sweep([](PerfBench& b) { b.forward(); });
    for (std::size_t k = 0; k < out.size(); ++k) out[k].forward_ms = median(fwd[k]);
    if (opt.train_step) {
        auto tr = sweep([](PerfBench& b) { b.train_step(); });
        for (std::size_t k = 0; k < out.size(); ++k) out[k].train_step_ms = median(tr[k]);
    }
    return out;
}

inline PerfPoint time_config(std::size_t n, std::size_t layers, std::size_t d, const PerfOptions& opt)
{
    return time_configs({{n, layers, d}}, opt).front();
}

struct PerfGrid {
    std::vector<std::size_t> n{16, 32, 64};
    std::vector<std::size_t> layers{5};
    std::vector<std::size_t> d{16};

    /// "n=16,32,64;L=1,3,5;d=16". Missing axes keep their defaults.
    static PerfGrid parse(const std::string& spec)
    {
        PerfGrid g;
        std::stringstream ss(spec);
        std::string part;
        while (std::getline(ss, part, ';')) {
            if (part.empty()) continue;
            const auto eq = part.find('=');
            if (eq == std::string::npos) throw ConfigError("grid: expected axis=values in '" + part + "'");
            const std::string axis = part.substr(0, eq);
            std::vector<std::size_t> vals;
            std::stringstream vs(part.substr(eq + 1));
            std::string v;
            while (std::getline(vs, v, ',')) {
                std::size_t used = 0;
                unsigned long x = 0;
                try {
                    x = std::stoul(v, &used);
                } catch (const std::exception&) {
                    used = 0;
                }
                if (used != v.size() || x == 0) throw ConfigError("grid: bad value '" + v + "' for " + axis);
                vals.push_back(x);
            }
            if (vals.empty()) throw ConfigError("grid: axis " + axis + " has no values");
            if (axis == "n") g.n = vals;
            else if (axis == "L") g.layers = vals;
            else if (axis == "d") g.d = vals;
            else throw ConfigError("grid: unknown axis '" + axis + "' (use n, L, d)");
        }
        return g;
    }
};

inline std::vector<PerfPoint> perf_report(const PerfGrid& grid, const PerfOptions& opt)
{
    std::vector<std::array<std::size_t, 3>> points;
    for (auto n : grid.n)
        for (auto l : grid.layers)
            for (auto d : grid.d) points.push_back({n, l, d});
    return time_configs(points, opt);
}

inline void write_perf(const std::vector<PerfPoint>& points, const PerfOptions& opt, std::ostream& os)
{
    os << "# compiler " << __VERSION__ << '\n';
    os << "# hardware_threads " << std::thread::hardware_concurrency() << '\n';
    os << "# horizon " << opt.horizon << " batch " << opt.batch << " warmup " << opt.warmup << " repeats "
       << opt.repeats << '\n';
    os << "n,layers,d,forward_ms,train_step_ms,param_count\n";
    for (const auto& p : points)
        os << p.n << ',' << p.layers << ',' << p.d << ',' << p.forward_ms << ',' << p.train_step_ms << ','
           << p.param_count << '\n';
}

// ---------------------------------------------------------------------------
// Series export

struct SeriesRow {
    std::size_t day = 0, interval = 0, pair_i = 0, pair_j = 0;
    double truth = 0.0, prediction = 0.0;
};

/// One row per (window, pair): the target interval's truth and raw prediction.
inline std::vector<SeriesRow> series_rows(const SampleSet& samples, const std::vector<double>& raw_pred,
                                          const std::vector<std::pair<std::size_t, std::size_t>>& pairs)
{
    const std::size_t n = samples.n;
    for (const auto& [i, j] : pairs)
        if (i >= n || j >= n)
            throw DomainError("pair (" + std::to_string(i) + ", " + std::to_string(j) + ") out of range; stations are 0.." +
                              std::to_string(n - 1));
    if (raw_pred.size() != samples.size() * n * n) throw DimensionError("series: prediction count mismatch");
    std::vector<SeriesRow> rows;
    for (std::size_t w = 0; w < samples.size(); ++w)
        for (const auto& [i, j] : pairs) {
            const std::size_t k = w * n * n + i * n + j;
            rows.push_back({samples.windows[w].day, samples.windows[w].target_interval(), i, j, samples.truth_cur[k],
                            raw_pred[k]});
        }
    return rows;
}

inline void write_series(const std::vector<SeriesRow>& rows, std::ostream& os)
{
    os << "day,interval,pair_i,pair_j,truth,prediction\n";
    os << std::setprecision(17);
    for (const auto& r : rows)
        os << r.day << ',' << r.interval << ',' << r.pair_i << ',' << r.pair_j << ',' << r.truth << ',' << r.prediction
           << '\n';
}

inline std::vector<SeriesRow> read_series(std::istream& is)
{
    std::string line;
    if (!std::getline(is, line) || line != "day,interval,pair_i,pair_j,truth,prediction")
        throw ParseError("series: missing header", 1);
    std::vector<SeriesRow> rows;
    std::size_t lineno = 1;
    while (std::getline(is, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::stringstream ss(line);
        SeriesRow r;
        char c1, c2, c3, c4, c5;
        if (!(ss >> r.day >> c1 >> r.interval >> c2 >> r.pair_i >> c3 >> r.pair_j >> c4 >> r.truth >> c5 >>
              r.prediction) ||
            c1 != ',' || c2 != ',' || c3 != ',' || c4 != ',' || c5 != ',')
            throw ParseError("series: malformed row", lineno);
        rows.push_back(r);
    }
    return rows;
}

} // namespace odmixer
