#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <span>
#include <string>
#include <vector>

#include "odmixer/binary_io.hpp"
#include "odmixer/errors.hpp"

namespace odmixer {

enum class MatrixKind { incomplete, unfinished, complete, estimated };

inline const char* to_string(MatrixKind k)
{
    switch (k) {
    case MatrixKind::incomplete: return "incomplete";
    case MatrixKind::unfinished: return "unfinished";
    case MatrixKind::complete: return "complete";
    case MatrixKind::estimated: return "estimated";
    }
    return "?";
}

/// Square flow matrix, row = origin, column = destination.
class ODMatrix {
public:
    ODMatrix(std::size_t n, MatrixKind kind) : n_(n), kind_(kind), values_(n * n, 0.0)
    {
        if (n < 2) throw DomainError("OD matrix needs at least 2 stations");
    }

    ODMatrix(std::size_t n, MatrixKind kind, std::vector<double> values)
        : n_(n), kind_(kind), values_(std::move(values))
    {
        if (n < 2) throw DomainError("OD matrix needs at least 2 stations");
        if (values_.size() != n * n)
            throw DimensionError("OD matrix of " + std::to_string(n) + " stations needs " + std::to_string(n * n) +
                                 " values, got " + std::to_string(values_.size()));
        for (double v : values_)
            if (!(v >= 0.0) || !std::isfinite(v)) throw DomainError("OD matrix entries must be finite and >= 0");
    }

    std::size_t n() const noexcept { return n_; }
    MatrixKind kind() const noexcept { return kind_; }
    double operator()(std::size_t i, std::size_t j) const { return values_[i * n_ + j]; }
    std::span<const double> values() const noexcept { return values_; }

    double total() const
    {
        double s = 0.0;
        for (double v : values_) s += v;
        return s;
    }

private:
    std::size_t n_;
    MatrixKind kind_;
    std::vector<double> values_;
};

/// Per-origin count of passengers whose exit is not yet observed.
struct UnfVector {
    std::vector<double> values;

    std::size_t n() const noexcept { return values.size(); }
    double operator[](std::size_t i) const { return values[i]; }
};

inline UnfVector unf_from_uod(const ODMatrix& uod)
{
    if (uod.kind() != MatrixKind::unfinished)
        throw DomainError(std::string("unf_from_uod expects an unfinished matrix, got ") + to_string(uod.kind()));
    UnfVector unf{std::vector<double>(uod.n(), 0.0)};
    for (std::size_t i = 0; i < uod.n(); ++i)
        for (std::size_t j = 0; j < uod.n(); ++j) unf.values[i] += uod(i, j);
    return unf;
}

inline ODMatrix complete_from(const ODMatrix& iod, const ODMatrix& uod)
{
    if (iod.kind() != MatrixKind::incomplete || uod.kind() != MatrixKind::unfinished)
        throw DomainError("complete_from expects (incomplete, unfinished), got (" + std::string(to_string(iod.kind())) +
                          ", " + to_string(uod.kind()) + ")");
    if (iod.n() != uod.n()) throw DimensionError("complete_from: station counts differ");
    std::vector<double> v(iod.values().begin(), iod.values().end());
    for (std::size_t k = 0; k < v.size(); ++k) v[k] += uod.values()[k];
    return ODMatrix(iod.n(), MatrixKind::complete, std::move(v));
}

/// Incomplete and unfinished matrices per (day, interval). Complete matrices
/// and unfinished-order vectors are derived on construction and never stored
/// independently, so OD = IOD + UOD and unf = rowsum(UOD) hold by construction.
class ODDataset {
public:
    ODDataset(std::size_t n, std::size_t days, std::size_t intervals_per_day, std::size_t interval_minutes,
              std::vector<double> iod, std::vector<double> uod)
        : n_(n), days_(days), intervals_(intervals_per_day), interval_minutes_(interval_minutes),
          iod_(std::move(iod)), uod_(std::move(uod))
    {
        if (n < 2) throw DataError("dataset needs at least 2 stations");
        if (days == 0 || intervals_per_day == 0) throw DataError("dataset needs at least one day and interval");
        const std::size_t expected = days * intervals_per_day * n * n;
        if (iod_.size() != expected || uod_.size() != expected)
            throw DataError("dataset storage size does not match n, days and intervals");
        for (std::size_t k = 0; k < expected; ++k)
            if (!(iod_[k] >= 0.0) || !(uod_[k] >= 0.0) || !std::isfinite(iod_[k]) || !std::isfinite(uod_[k]))
                throw DataError("dataset entries must be finite and >= 0");
        od_.resize(expected);
        for (std::size_t k = 0; k < expected; ++k) od_[k] = iod_[k] + uod_[k];
        unf_.assign(days * intervals_per_day * n, 0.0);
        for (std::size_t s = 0; s < days * intervals_per_day; ++s)
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t j = 0; j < n; ++j) unf_[s * n + i] += uod_[(s * n + i) * n + j];
    }

    std::size_t n() const noexcept { return n_; }
    std::size_t days() const noexcept { return days_; }
    std::size_t intervals_per_day() const noexcept { return intervals_; }
    std::size_t interval_minutes() const noexcept { return interval_minutes_; }

    std::span<const double> iod(std::size_t d, std::size_t t) const { return slot(iod_, d, t); }
    std::span<const double> uod(std::size_t d, std::size_t t) const { return slot(uod_, d, t); }
    std::span<const double> od(std::size_t d, std::size_t t) const { return slot(od_, d, t); }
    std::span<const double> unf(std::size_t d, std::size_t t) const
    {
        check(d, t);
        return std::span<const double>(unf_).subspan((d * intervals_ + t) * n_, n_);
    }

    ODMatrix iod_matrix(std::size_t d, std::size_t t) const { return matrix(iod(d, t), MatrixKind::incomplete); }
    ODMatrix uod_matrix(std::size_t d, std::size_t t) const { return matrix(uod(d, t), MatrixKind::unfinished); }
    ODMatrix od_matrix(std::size_t d, std::size_t t) const { return matrix(od(d, t), MatrixKind::complete); }
    UnfVector unf_vector(std::size_t d, std::size_t t) const
    {
        auto u = unf(d, t);
        return UnfVector{std::vector<double>(u.begin(), u.end())};
    }

    // Whole-array views, slot-major then row-major.
    const std::vector<double>& raw_iod() const noexcept { return iod_; }
    const std::vector<double>& raw_uod() const noexcept { return uod_; }

    /// Largest deviation from OD = IOD + UOD and unf = rowsum(UOD) over all slots.
    double identity_residual() const
    {
        double worst = 0.0;
        for (std::size_t k = 0; k < od_.size(); ++k) worst = std::max(worst, std::abs(od_[k] - iod_[k] - uod_[k]));
        for (std::size_t s = 0; s < days_ * intervals_; ++s)
            for (std::size_t i = 0; i < n_; ++i) {
                double row = 0.0;
                for (std::size_t j = 0; j < n_; ++j) row += uod_[(s * n_ + i) * n_ + j];
                worst = std::max(worst, std::abs(row - unf_[s * n_ + i]));
            }
        return worst;
    }

private:
    void check(std::size_t d, std::size_t t) const
    {
        if (d >= days_ || t >= intervals_)
            throw DimensionError("slot (" + std::to_string(d) + "," + std::to_string(t) + ") outside dataset of " +
                                 std::to_string(days_) + " days x " + std::to_string(intervals_) + " intervals");
    }

    std::span<const double> slot(const std::vector<double>& v, std::size_t d, std::size_t t) const
    {
        check(d, t);
        return std::span<const double>(v).subspan((d * intervals_ + t) * n_ * n_, n_ * n_);
    }

    ODMatrix matrix(std::span<const double> s, MatrixKind kind) const
    {
        return ODMatrix(n_, kind, std::vector<double>(s.begin(), s.end()));
    }

    std::size_t n_, days_, intervals_, interval_minutes_;
    std::vector<double> iod_, uod_, od_, unf_;
};

/// Prediction sample: inputs cover intervals t-T+1..t of days d-1 and d, target is t+1.
struct SampleWindow {
    std::size_t day = 0;
    std::size_t t = 0;
    std::size_t horizon = 0;

    std::size_t first_interval() const { return t + 1 - horizon; }
    std::size_t target_interval() const { return t + 1; }

    friend bool operator==(const SampleWindow&, const SampleWindow&) = default;
};

/// Every window whose inputs and target sit inside one service day, in (day, t) order.
inline std::vector<SampleWindow> enumerate_windows(const ODDataset& ds, std::size_t horizon,
                                                   bool require_week_history = false)
{
    if (horizon == 0) throw DomainError("window horizon must be >= 1");
    std::vector<SampleWindow> out;
    const std::size_t p = ds.intervals_per_day();
    if (horizon > p) {
        std::cerr << "warning: horizon " << horizon << " exceeds " << p << " intervals per day; no windows\n";
        return out;
    }
    const std::size_t d_min = require_week_history ? 7 : 1;
    for (std::size_t d = d_min; d < ds.days(); ++d)
        for (std::size_t t = horizon - 1; t + 1 < p; ++t) out.push_back({d, t, horizon});
    return out;
}

// ODDS1: magic, version, n, D, P, interval_minutes, then IOD and UOD per slot as LE float32.
inline constexpr std::uint32_t kDatasetVersion = 1;

inline void write_dataset(const ODDataset& ds, std::ostream& os)
{
    binary::write_bytes(os, "ODDS1");
    binary::write_u32(os, kDatasetVersion);
    binary::write_u32(os, static_cast<std::uint32_t>(ds.n()));
    binary::write_u32(os, static_cast<std::uint32_t>(ds.days()));
    binary::write_u32(os, static_cast<std::uint32_t>(ds.intervals_per_day()));
    binary::write_u32(os, static_cast<std::uint32_t>(ds.interval_minutes()));
    for (std::size_t d = 0; d < ds.days(); ++d)
        for (std::size_t t = 0; t < ds.intervals_per_day(); ++t) {
            for (double v : ds.iod(d, t)) binary::write_f32(os, static_cast<float>(v));
            for (double v : ds.uod(d, t)) binary::write_f32(os, static_cast<float>(v));
        }
}

inline ODDataset read_dataset(std::istream& is)
{
    binary::expect_magic(is, "ODDS1");
    const auto version = binary::read_u32(is);
    if (version != kDatasetVersion) throw DataError("unsupported ODDS version " + std::to_string(version));
    const std::size_t n = binary::read_u32(is);
    const std::size_t days = binary::read_u32(is);
    const std::size_t p = binary::read_u32(is);
    const std::size_t minutes = binary::read_u32(is);
    if (n < 2 || days == 0 || p == 0 || minutes == 0) throw DataError("ODDS1 header has empty dimensions");
    const std::size_t nn = n * n;
    std::vector<double> iod(days * p * nn), uod(days * p * nn);
    for (std::size_t s = 0; s < days * p; ++s) {
        for (std::size_t k = 0; k < nn; ++k) iod[s * nn + k] = binary::read_f32(is);
        for (std::size_t k = 0; k < nn; ++k) uod[s * nn + k] = binary::read_f32(is);
    }
    if (is.peek() != std::char_traits<char>::eof()) throw DataError("trailing bytes after ODDS1 payload");
    return ODDataset(n, days, p, minutes, std::move(iod), std::move(uod));
}

inline void save_dataset(const ODDataset& ds, const std::filesystem::path& path)
{
    std::ofstream os(path, std::ios::binary);
    if (!os) throw DataError("cannot open " + path.string() + " for writing");
    write_dataset(ds, os);
    if (!os) throw DataError("write failed: " + path.string());
}

inline ODDataset load_dataset(const std::filesystem::path& path)
{
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("cannot open dataset " + path.string());
    return read_dataset(is);
}

} // namespace odmixer
