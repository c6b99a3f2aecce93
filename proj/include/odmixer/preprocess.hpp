#pragma once

#include <algorithm>
#include <cmath>
#include <iostream>
#include <span>
#include <vector>

#include "odmixer/errors.hpp"
#include "odmixer/od_data.hpp"

namespace odmixer {

enum class RowFallback { normal, used_short_only, used_long_only, used_uniform };

/// Estimated unfinished-order matrix plus which history each row relied on.
struct UodEstimate {
    ODMatrix matrix;
    std::vector<RowFallback> flags;
};

/// Spreads each row's unfinished orders over destinations following the
/// average of yesterday's and last week's destination shares. An empty span
/// stands for missing history and behaves like an all-zero row: the other
/// history is used for both terms, and with no history at all the mass is
/// spread uniformly. Row sums always equal unf.
inline UodEstimate estimate_uod(std::span<const double> unf, std::span<const double> short_hist,
                                std::span<const double> long_hist)
{
    const std::size_t n = unf.size();
    if (n < 2) throw DimensionError("estimate_uod: need at least 2 stations");
    if (!short_hist.empty() && short_hist.size() != n * n)
        throw DimensionError("estimate_uod: short-term history must be n x n");
    if (!long_hist.empty() && long_hist.size() != n * n)
        throw DimensionError("estimate_uod: long-term history must be n x n");
    auto check_nonneg = [](std::span<const double> s, const char* what) {
        for (double v : s)
            if (!(v >= 0.0) || !std::isfinite(v)) throw DomainError(std::string("estimate_uod: negative ") + what);
    };
    check_nonneg(unf, "unfinished order count");
    check_nonneg(short_hist, "short-term history");
    check_nonneg(long_hist, "long-term history");

    std::vector<double> out(n * n, 0.0);
    std::vector<RowFallback> flags(n, RowFallback::normal);
    auto row_sum = [n](std::span<const double> m, std::size_t j) {
        double s = 0.0;
        if (m.empty()) return s;
        for (std::size_t k = 0; k < n; ++k) s += m[j * n + k];
        return s;
    };
    for (std::size_t j = 0; j < n; ++j) {
        const double ss = row_sum(short_hist, j);
        const double sl = row_sum(long_hist, j);
        double* row = out.data() + j * n;
        if (ss > 0.0 && sl > 0.0) {
            for (std::size_t k = 0; k < n; ++k)
                row[k] = 0.5 * (unf[j] * short_hist[j * n + k] / ss + unf[j] * long_hist[j * n + k] / sl);
        } else if (ss > 0.0) {
            flags[j] = RowFallback::used_short_only;
            for (std::size_t k = 0; k < n; ++k) row[k] = unf[j] * short_hist[j * n + k] / ss;
        } else if (sl > 0.0) {
            flags[j] = RowFallback::used_long_only;
            for (std::size_t k = 0; k < n; ++k) row[k] = unf[j] * long_hist[j * n + k] / sl;
        } else {
            flags[j] = RowFallback::used_uniform;
            for (std::size_t k = 0; k < n; ++k) row[k] = unf[j] / static_cast<double>(n);
        }
    }
    return {ODMatrix(n, MatrixKind::estimated, std::move(out)), std::move(flags)};
}

inline UodEstimate estimate_uod(const UnfVector& unf, const ODMatrix& uod_short, const ODMatrix& uod_long)
{
    if (uod_short.n() != unf.n() || uod_long.n() != unf.n())
        throw DimensionError("estimate_uod: station counts differ");
    return estimate_uod(std::span<const double>(unf.values), uod_short.values(), uod_long.values());
}

/// IOD + estimated UOD.
inline ODMatrix estimate_od(const ODMatrix& iod, const UodEstimate& est)
{
    if (iod.n() != est.matrix.n()) throw DimensionError("estimate_od: station counts differ");
    std::vector<double> v(iod.values().begin(), iod.values().end());
    for (std::size_t k = 0; k < v.size(); ++k) v[k] += est.matrix.values()[k];
    return ODMatrix(iod.n(), MatrixKind::estimated, std::move(v));
}

/// Estimated complete matrices for intervals t-T+1..t of day d, using day d-1
/// and day d-7 as history. Without `strict`, days before 7 fall back to the
/// short-term history only and day 0 to uniform spreading.
inline std::vector<ODMatrix> prepare_cur_window(const ODDataset& ds, std::size_t d, std::size_t t,
                                                std::size_t horizon, bool strict = false)
{
    if (horizon == 0 || t + 1 < horizon) throw DimensionError("prepare_cur_window: window starts before interval 0");
    if (strict && d < 7)
        throw HistoryError("day " + std::to_string(d) + " has no day-7 history for unfinished-order estimation");
    std::vector<ODMatrix> out;
    out.reserve(horizon);
    for (std::size_t s = t + 1 - horizon; s <= t; ++s) {
        std::span<const double> short_hist, long_hist;
        if (d >= 1) short_hist = ds.uod(d - 1, s);
        if (d >= 7) long_hist = ds.uod(d - 7, s);
        auto est = estimate_uod(ds.unf(d, s), short_hist, long_hist);
        out.push_back(estimate_od(ds.iod_matrix(d, s), est));
    }
    return out;
}

/// Scalar z-score transform.
struct Normalizer {
    double mean = 0.0;
    double std = 1.0;

    static constexpr double kMinStd = 1e-8;

    double apply(double x) const { return (x - mean) / std; }
    double invert(double y) const { return y * std + mean; }
};

inline double clamp_nonneg(double x) { return x > 0.0 ? x : 0.0; }

inline Normalizer fit_normalizer(std::span<const double> values)
{
    if (values.empty()) throw DataError("fit_normalizer: empty training split");
    double mean = 0.0;
    for (double v : values) mean += v;
    mean /= static_cast<double>(values.size());
    double var = 0.0;
    for (double v : values) var += (v - mean) * (v - mean);
    var /= static_cast<double>(values.size());
    double sd = std::sqrt(var);
    if (sd < Normalizer::kMinStd) {
        std::cerr << "warning: training data has (near) zero variance; std floored at " << Normalizer::kMinStd << '\n';
        sd = Normalizer::kMinStd;
    }
    return {mean, sd};
}

/// Fits on every complete-OD entry of days [day_begin, day_end).
inline Normalizer fit_normalizer(const ODDataset& ds, std::size_t day_begin, std::size_t day_end)
{
    if (day_begin >= day_end || day_end > ds.days()) throw DataError("fit_normalizer: empty training split");
    std::vector<double> values;
    values.reserve((day_end - day_begin) * ds.intervals_per_day() * ds.n() * ds.n());
    for (std::size_t d = day_begin; d < day_end; ++d)
        for (std::size_t t = 0; t < ds.intervals_per_day(); ++t) {
            auto od = ds.od(d, t);
            values.insert(values.end(), od.begin(), od.end());
        }
    return fit_normalizer(values);
}

} // namespace odmixer
