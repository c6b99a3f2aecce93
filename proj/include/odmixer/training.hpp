#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <numeric>
#include <optional>
#include <ostream>
#include <random>
#include <string>
#include <vector>

#include "odmixer/metrics.hpp"
#include "odmixer/model.hpp"
#include "odmixer/od_data.hpp"
#include "odmixer/preprocess.hpp"

namespace odmixer {

/// Contiguous day ranges [begin, end) for each split.
struct DaySplit {
    std::size_t train_begin = 0, train_end = 0;
    std::size_t val_begin = 0, val_end = 0;
    std::size_t test_begin = 0, test_end = 0;

    static DaySplit contiguous(std::size_t train_days, std::size_t val_days, std::size_t test_days, std::size_t total)
    {
        if (train_days == 0 || val_days == 0 || test_days == 0)
            throw ConfigError("every split needs at least one day");
        if (train_days + val_days + test_days > total)
            throw ConfigError("splits need " + std::to_string(train_days + val_days + test_days) +
                              " days but the dataset has " + std::to_string(total));
        DaySplit s;
        s.train_begin = 0;
        s.train_end = train_days;
        s.val_begin = s.train_end;
        s.val_end = s.val_begin + val_days;
        s.test_begin = s.val_end;
        s.test_end = s.test_begin + test_days;
        return s;
    }
};

struct TrainConfig {
    double learning_rate = 1e-3;
    std::size_t batch_size = 32;
    std::size_t max_epochs = 30;
    std::size_t patience = 10;
    std::uint64_t seed = 1;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
    std::size_t train_days = 20;
    std::size_t val_days = 4;
    std::size_t test_days = 4;
    bool require_week_history = false;
    bool verbose = false;

    void validate() const
    {
        if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
        if (patience < 1) throw ConfigError("patience must be >= 1");
        if (!(learning_rate >= 0.0)) throw ConfigError("learning_rate must be >= 0");
        if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0 && adam_eps > 0.0))
            throw ConfigError("invalid Adam hyperparameters");
    }
};

// ---------------------------------------------------------------------------
// Adam

template <typename T>
struct AdamState {
    std::map<std::string, std::vector<T>> first, second;
    std::uint64_t step = 0;
};

/// Bias-corrected Adam. Rejects the whole step, leaving parameters and state
/// untouched, if any gradient is not finite.
template <typename T>
void adam_step(ParameterSet<T>& params, AdamState<T>& state, const TrainConfig& cfg)
{
    for (const auto& [name, p] : params)
        for (T g : p.grad.data())
            if (!std::isfinite(g)) throw NumericError("non-finite gradient in " + name);
    ++state.step;
    const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
    const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
    const T b1 = T(cfg.beta1), b2 = T(cfg.beta2), lr = T(cfg.learning_rate), eps = T(cfg.adam_eps);
    const T inv_c1 = T(1.0 / c1), inv_c2 = T(1.0 / c2);
    for (auto& [name, p] : params) {
        if (!p.requires_grad) continue;
        auto& m = state.first[name];
        auto& v = state.second[name];
        if (m.empty()) {
            m.assign(p.value.size(), T{});
            v.assign(p.value.size(), T{});
        }
        auto& w = p.value.storage();
        const auto& g = p.grad.storage();
        for (std::size_t i = 0; i < w.size(); ++i) {
            m[i] = b1 * m[i] + (T(1) - b1) * g[i];
            v[i] = b2 * v[i] + (T(1) - b2) * g[i] * g[i];
            const T mhat = m[i] * inv_c1;
            const T vhat = v[i] * inv_c2;
            w[i] -= lr * mhat / (std::sqrt(vhat) + eps);
        }
    }
}

// ---------------------------------------------------------------------------
// Samples

/// Model-ready windows. Inputs and targets are z-scored; raw truths are kept
/// for metrics. Per window, inputs are laid out [origin][destination][interval].
struct SampleSet {
    std::size_t n = 0;
    std::size_t horizon = 0;
    std::vector<SampleWindow> windows;
    std::vector<float> prev, cur;
    std::vector<float> target_prev, target_cur;
    std::vector<double> truth_prev, truth_cur;

    std::size_t size() const noexcept { return windows.size(); }
    std::size_t input_stride() const noexcept { return n * n * horizon; }
    std::size_t target_stride() const noexcept { return n * n; }

    struct Batch {
        Tensor<float> prev, cur, target_prev, target_cur;
    };

    Batch gather(std::span<const std::size_t> idx) const
    {
        const std::size_t b = idx.size();
        Batch out{Tensor<float>({b, n, n, horizon}), Tensor<float>({b, n, n, horizon}), Tensor<float>({b, n, n}),
                  Tensor<float>({b, n, n})};
        for (std::size_t k = 0; k < b; ++k) {
            const std::size_t w = idx[k];
            std::copy_n(prev.begin() + w * input_stride(), input_stride(), out.prev.storage().begin() + k * input_stride());
            std::copy_n(cur.begin() + w * input_stride(), input_stride(), out.cur.storage().begin() + k * input_stride());
            std::copy_n(target_prev.begin() + w * target_stride(), target_stride(),
                        out.target_prev.storage().begin() + k * target_stride());
            std::copy_n(target_cur.begin() + w * target_stride(), target_stride(),
                        out.target_cur.storage().begin() + k * target_stride());
        }
        return out;
    }

    std::span<const double> truth_cur_of(std::size_t w) const
    {
        return std::span<const double>(truth_cur).subspan(w * target_stride(), target_stride());
    }
};

/// Builds samples with inputs from `inputs` and targets from `targets` (the
/// two differ only in robustness runs). The current-day branch sees estimated
/// complete matrices when `omp` is set and raw incomplete matrices otherwise.
inline SampleSet build_samples(const ODDataset& inputs, const ODDataset& targets,
                               const std::vector<SampleWindow>& windows, const Normalizer& norm, bool omp,
                               bool strict_history = false)
{
    if (inputs.n() != targets.n() || inputs.days() != targets.days() ||
        inputs.intervals_per_day() != targets.intervals_per_day())
        throw DataError("input and target datasets differ in shape");
    SampleSet s;
    s.n = inputs.n();
    s.horizon = windows.empty() ? 0 : windows.front().horizon;
    s.windows = windows;
    const std::size_t n = s.n, nn = n * n, T = s.horizon;
    s.prev.resize(windows.size() * nn * T);
    s.cur.resize(windows.size() * nn * T);
    s.target_prev.resize(windows.size() * nn);
    s.target_cur.resize(windows.size() * nn);
    s.truth_prev.resize(windows.size() * nn);
    s.truth_cur.resize(windows.size() * nn);
    for (std::size_t w = 0; w < windows.size(); ++w) {
        const auto& win = windows[w];
        if (win.horizon != T) throw DataError("windows must share one horizon");
        if (win.day < 1) throw HistoryError("window on day 0 has no previous day");
        float* prev = s.prev.data() + w * nn * T;
        float* cur = s.cur.data() + w * nn * T;
        std::vector<ODMatrix> estimated;
        if (omp) estimated = prepare_cur_window(inputs, win.day, win.t, T, strict_history);
        for (std::size_t k = 0; k < T; ++k) {
            const std::size_t slot = win.first_interval() + k;
            auto od_prev = inputs.od(win.day - 1, slot);
            auto cur_src = omp ? estimated[k].values() : inputs.iod(win.day, slot);
            for (std::size_t p = 0; p < nn; ++p) {
                prev[p * T + k] = static_cast<float>(norm.apply(od_prev[p]));
                cur[p * T + k] = static_cast<float>(norm.apply(cur_src[p]));
            }
        }
        auto gp = targets.od(win.day - 1, win.target_interval());
        auto gc = targets.od(win.day, win.target_interval());
        for (std::size_t p = 0; p < nn; ++p) {
            s.truth_prev[w * nn + p] = gp[p];
            s.truth_cur[w * nn + p] = gc[p];
            s.target_prev[w * nn + p] = static_cast<float>(norm.apply(gp[p]));
            s.target_cur[w * nn + p] = static_cast<float>(norm.apply(gc[p]));
        }
    }
    return s;
}

inline std::vector<SampleWindow> windows_in_days(const ODDataset& ds, std::size_t horizon, std::size_t day_begin,
                                                 std::size_t day_end, bool require_week_history = false)
{
    std::vector<SampleWindow> out;
    for (const auto& w : enumerate_windows(ds, horizon, require_week_history))
        if (w.day >= day_begin && w.day < day_end) out.push_back(w);
    return out;
}

// ---------------------------------------------------------------------------
// Loss and inference

/// Mean absolute error per branch, summed over branches. Without a previous-day
/// prediction only the current-day term is used.
template <typename T>
Var<T> dual_branch_loss(std::optional<Var<T>> pred_prev, Var<T> pred_cur, Var<T> gt_prev, Var<T> gt_cur)
{
    auto cur = diffcore::mean_abs_error(pred_cur, gt_cur);
    if (!pred_prev) return cur;
    return diffcore::add(diffcore::mean_abs_error(*pred_prev, gt_prev), cur);
}

/// Current-day predictions for every sample, denormalized and clamped at 0.
inline std::vector<double> predict_raw(ODMixer<float>& model, const SampleSet& samples, const Normalizer& norm,
                                       std::size_t batch_size = 64)
{
    std::vector<double> out(samples.size() * samples.target_stride());
    std::vector<std::size_t> idx;
    for (std::size_t start = 0; start < samples.size(); start += batch_size) {
        idx.clear();
        for (std::size_t w = start; w < std::min(samples.size(), start + batch_size); ++w) idx.push_back(w);
        auto batch = samples.gather(idx);
        Tape<float> tape;
        auto pred = model.forward(tape, tape.constant(std::move(batch.prev)), tape.constant(std::move(batch.cur)));
        const auto& v = pred.cur.value();
        for (std::size_t k = 0; k < v.size(); ++k)
            out[start * samples.target_stride() + k] = clamp_nonneg(norm.invert(static_cast<double>(v[k])));
    }
    return out;
}

inline MetricsReport evaluate_predictions(const SampleSet& samples, const std::vector<double>& raw_pred)
{
    MetricsAccumulator acc;
    const std::size_t stride = samples.target_stride();
    for (std::size_t w = 0; w < samples.size(); ++w)
        acc.add(std::span<const double>(raw_pred).subspan(w * stride, stride), samples.truth_cur_of(w));
    return acc.report();
}

inline MetricsReport evaluate_model(ODMixer<float>& model, const SampleSet& samples, const Normalizer& norm)
{
    const auto t0 = std::chrono::steady_clock::now();
    auto report = evaluate_predictions(samples, predict_raw(model, samples, norm));
    report.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    report.param_count = model.params().count();
    return report;
}

// ---------------------------------------------------------------------------
// Training loop

struct EpochRecord {
    std::size_t epoch = 0;
    double train_loss = 0.0;
    MetricsReport val;
    double seconds = 0.0;
};

struct TrainResult {
    ODMixer<float> model;
    Normalizer normalizer;
    DaySplit split;
    std::vector<EpochRecord> history;
    std::size_t best_epoch = 0;
};

/// Mini-batch Adam on the dual-branch loss, keeping the parameters with the
/// lowest validation wMAPE and stopping after `patience` epochs without gain.
inline TrainResult train(const ModelConfig& model_cfg, const ODDataset& ds, const TrainConfig& cfg)
{
    cfg.validate();
    if (model_cfg.n != ds.n())
        throw ConfigError("model has " + std::to_string(model_cfg.n) + " stations, dataset has " +
                          std::to_string(ds.n()));
    const auto split = DaySplit::contiguous(cfg.train_days, cfg.val_days, cfg.test_days, ds.days());
    const auto norm = fit_normalizer(ds, split.train_begin, split.train_end);
    const bool omp = model_cfg.ablation.omp;
    const auto train_w = windows_in_days(ds, model_cfg.horizon, split.train_begin, split.train_end, cfg.require_week_history);
    const auto val_w = windows_in_days(ds, model_cfg.horizon, split.val_begin, split.val_end, cfg.require_week_history);
    if (train_w.empty()) throw ConfigError("training split yields no windows");
    if (val_w.empty()) throw ConfigError("validation split yields no windows");
    const auto train_s = build_samples(ds, ds, train_w, norm, omp, cfg.require_week_history);
    const auto val_s = build_samples(ds, ds, val_w, norm, omp, cfg.require_week_history);

    ODMixer<float> model(model_cfg, cfg.seed);
    AdamState<float> adam;
    std::mt19937_64 rng(cfg.seed ^ 0xA5A5A5A5ull);
    std::vector<std::size_t> order(train_s.size());
    std::iota(order.begin(), order.end(), 0);

    TrainResult result{model, norm, split, {}, 0};
    double best = std::numeric_limits<double>::infinity();
    std::size_t since_best = 0;
    for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
        const auto t0 = std::chrono::steady_clock::now();
        std::shuffle(order.begin(), order.end(), rng);
        double loss_sum = 0.0;
        for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
            const std::size_t end = std::min(order.size(), start + cfg.batch_size);
            auto batch = train_s.gather(std::span<const std::size_t>(order).subspan(start, end - start));
            model.params().zero_grad();
            Tape<float> tape;
            auto pred = model.forward(tape, tape.constant(std::move(batch.prev)), tape.constant(std::move(batch.cur)));
            auto loss = dual_branch_loss(pred.prev, pred.cur, tape.constant(std::move(batch.target_prev)),
                                         tape.constant(std::move(batch.target_cur)));
            const float lv = tape.value(loss).item();
            if (!std::isfinite(lv)) throw NumericError("training loss is not finite at epoch " + std::to_string(epoch));
            loss_sum += static_cast<double>(lv) * static_cast<double>(end - start);
            tape.backward(loss);
            adam_step(model.params(), adam, cfg);
        }
        EpochRecord rec;
        rec.epoch = epoch;
        rec.train_loss = loss_sum / static_cast<double>(order.size());
        rec.val = evaluate_model(model, val_s, norm);
        rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        result.history.push_back(rec);
        if (cfg.verbose)
            std::clog << "epoch " << epoch << " loss " << rec.train_loss << " val_mae " << rec.val.mae << " val_wmape "
                      << rec.val.wmape_str() << " (" << rec.seconds << " s)\n";
        const double score = rec.val.wmape.value_or(rec.val.mae);
        if (score < best) {
            best = score;
            since_best = 0;
            result.best_epoch = epoch;
            result.model = model;
        } else if (++since_best >= cfg.patience) {
            break;
        }
    }
    if (result.best_epoch == 0) result.model = model;
    return result;
}

/// Rebuilds split and normalizer around a loaded model; both depend only on
/// the dataset and the day counts.
inline TrainResult restore(ODMixer<float> model, const ODDataset& ds, const TrainConfig& cfg)
{
    if (model.config().n != ds.n())
        throw DataError("checkpoint has " + std::to_string(model.config().n) + " stations, dataset has " +
                        std::to_string(ds.n()));
    const auto split = DaySplit::contiguous(cfg.train_days, cfg.val_days, cfg.test_days, ds.days());
    const auto norm = fit_normalizer(ds, split.train_begin, split.train_end);
    return TrainResult{std::move(model), norm, split, {}, 0};
}

inline void write_history(const std::vector<EpochRecord>& history, std::ostream& os)
{
    os << "epoch,train_loss,val_mae,val_rmse,val_wmape,seconds\n";
    for (const auto& r : history)
        os << r.epoch << ',' << r.train_loss << ',' << r.val.mae << ',' << r.val.rmse << ',' << r.val.wmape_str()
           << ',' << r.seconds << '\n';
}

} // namespace odmixer
