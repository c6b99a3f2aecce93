#pragma once

#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <ostream>
#include <random>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "odmixer/errors.hpp"
#include "odmixer/od_data.hpp"

namespace odmixer {

inline constexpr std::int64_t kMinutesPerDay = 1440;

/// One smart-card trip. Timestamps are minutes since day 0, 00:00.
/// A missing exit (card never tapped out) has no exit station or time.
struct TransactionRecord {
    std::int64_t entry_station = 0;
    std::int64_t entry_time = 0;
    std::optional<std::int64_t> exit_station;
    std::optional<std::int64_t> exit_time;

    bool has_exit() const noexcept { return exit_station.has_value() && exit_time.has_value(); }

    friend bool operator==(const TransactionRecord&, const TransactionRecord&) = default;
};

struct ScheduleConfig {
    std::size_t n = 10;
    std::size_t days = 28;
    std::size_t intervals_per_day = 40;
    std::size_t interval_minutes = 15;
    std::size_t service_start = 7 * 60;  // minute of day

    void validate() const
    {
        if (n < 2) throw ConfigError("schedule: need at least 2 stations");
        if (days == 0 || intervals_per_day == 0 || interval_minutes == 0)
            throw ConfigError("schedule: days, intervals_per_day and interval_minutes must be positive");
        if (service_start + intervals_per_day * interval_minutes > static_cast<std::size_t>(kMinutesPerDay))
            throw ConfigError("schedule: service window extends past midnight");
    }
};

struct Slot {
    std::size_t day = 0;
    std::size_t interval = 0;

    friend bool operator==(const Slot&, const Slot&) = default;
};

/// Half-open interval bucketing; nullopt outside service hours.
inline std::optional<Slot> bucket(std::int64_t ts, const ScheduleConfig& cfg)
{
    if (ts < 0) return std::nullopt;
    const std::int64_t day = ts / kMinutesPerDay;
    const std::int64_t minute = ts % kMinutesPerDay - static_cast<std::int64_t>(cfg.service_start);
    if (minute < 0) return std::nullopt;
    const std::int64_t t = minute / static_cast<std::int64_t>(cfg.interval_minutes);
    if (t >= static_cast<std::int64_t>(cfg.intervals_per_day)) return std::nullopt;
    return Slot{static_cast<std::size_t>(day), static_cast<std::size_t>(t)};
}

struct IngestionReport {
    std::size_t accepted = 0;
    std::size_t dropped_missing_exit = 0;
    std::size_t dropped_out_of_service = 0;
    std::size_t dropped_bad_station = 0;
    std::size_t dropped_bad_time = 0;

    void write(std::ostream& os) const
    {
        os << "accepted " << accepted << '\n'
           << "dropped_missing_exit " << dropped_missing_exit << '\n'
           << "dropped_out_of_service " << dropped_out_of_service << '\n'
           << "dropped_bad_station " << dropped_bad_station << '\n'
           << "dropped_bad_time " << dropped_bad_time << '\n';
    }
};

struct IngestionResult {
    ODDataset dataset;
    IngestionReport report;
};

/// Counts every accepted trip into its entry slot: IOD when the exit falls in
/// the same slot, UOD otherwise (later interval, later day, or after closing).
inline IngestionResult build_dataset(const std::vector<TransactionRecord>& records, const ScheduleConfig& cfg)
{
    cfg.validate();
    const std::size_t n = cfg.n;
    const std::size_t slots = cfg.days * cfg.intervals_per_day;
    std::vector<double> iod(slots * n * n, 0.0), uod(slots * n * n, 0.0);
    IngestionReport report;
    for (const auto& r : records) {
        if (!r.has_exit()) {
            ++report.dropped_missing_exit;
            continue;
        }
        if (r.entry_station < 0 || r.entry_station >= static_cast<std::int64_t>(n) || *r.exit_station < 0 ||
            *r.exit_station >= static_cast<std::int64_t>(n)) {
            ++report.dropped_bad_station;
            continue;
        }
        if (*r.exit_time < r.entry_time) {
            ++report.dropped_bad_time;
            continue;
        }
        const auto entry = bucket(r.entry_time, cfg);
        if (!entry || entry->day >= cfg.days) {
            ++report.dropped_out_of_service;
            continue;
        }
        const std::size_t cell = ((entry->day * cfg.intervals_per_day + entry->interval) * n +
                                  static_cast<std::size_t>(r.entry_station)) * n +
                                 static_cast<std::size_t>(*r.exit_station);
        const auto exit = bucket(*r.exit_time, cfg);
        if (exit && *exit == *entry)
            iod[cell] += 1.0;
        else
            uod[cell] += 1.0;
        ++report.accepted;
    }
    return {ODDataset(n, cfg.days, cfg.intervals_per_day, cfg.interval_minutes, std::move(iod), std::move(uod)),
            report};
}

// ---------------------------------------------------------------------------
// Synthetic demand

struct DiurnalPeak {
    double center = 0.0;     // interval index
    double width = 1.0;      // intervals
    double amplitude = 0.0;  // multiple of the base rate
};

/// Poisson demand model. The expected count of trips from i to j entering in
/// interval t of day d is
///   base_rate[i,j] * (1 + sum_peaks amp * exp(-(t-c)^2 / 2w^2)) * day_factor[d].
struct SyntheticSpec {
    ScheduleConfig schedule;
    std::uint64_t seed = 1;
    std::vector<double> base_rate;  // n*n
    std::vector<DiurnalPeak> morning;  // n*n
    std::vector<DiurnalPeak> evening;  // n*n
    double weekday_multiplier = 1.0;
    double weekend_multiplier = 1.0;
    double day_jitter = 0.0;  // log-normal sigma of an extra per-day demand factor
    double travel_base_minutes = 5.0;
    std::vector<double> travel_offset;  // n*n, minutes
    double travel_noise_minutes = 0.0;  // uniform [0, travel_noise_minutes)

    void validate() const
    {
        schedule.validate();
        const std::size_t nn = schedule.n * schedule.n;
        if (base_rate.size() != nn || morning.size() != nn || evening.size() != nn || travel_offset.size() != nn)
            throw ConfigError("synthetic spec: per-pair arrays must have n*n entries");
        auto nonneg = [](double v) { return v >= 0.0 && std::isfinite(v); };
        for (std::size_t k = 0; k < nn; ++k) {
            if (!nonneg(base_rate[k]) || !nonneg(travel_offset[k])) throw ConfigError("synthetic spec: negative rate");
            for (const auto* p : {&morning[k], &evening[k]})
                if (!nonneg(p->amplitude) || !(p->width > 0.0)) throw ConfigError("synthetic spec: bad peak");
        }
        if (!nonneg(weekday_multiplier) || !nonneg(weekend_multiplier) || !nonneg(day_jitter) ||
            !nonneg(travel_base_minutes) || !nonneg(travel_noise_minutes))
            throw ConfigError("synthetic spec: multipliers and travel times must be >= 0");
    }

    /// Deterministic per-day factor: weekday/weekend level times seeded jitter. Day 0 is a Monday.
    std::vector<double> day_factors() const
    {
        std::mt19937_64 rng(seed ^ 0x9E3779B97F4A7C15ull);
        std::normal_distribution<double> z(0.0, 1.0);
        std::vector<double> out(schedule.days);
        for (std::size_t d = 0; d < schedule.days; ++d) {
            const bool weekend = d % 7 >= 5;
            const double jitter = z(rng);
            out[d] = (weekend ? weekend_multiplier : weekday_multiplier) *
                     std::exp(day_jitter * jitter - 0.5 * day_jitter * day_jitter);
        }
        return out;
    }

    double profile(std::size_t pair, std::size_t t) const
    {
        auto g = [t](const DiurnalPeak& p) {
            const double z = (static_cast<double>(t) - p.center) / p.width;
            return p.amplitude * std::exp(-0.5 * z * z);
        };
        return 1.0 + g(morning[pair]) + g(evening[pair]);
    }

    /// Expected trips for (day, interval, origin, destination) given precomputed day factors.
    double rate(const std::vector<double>& factors, std::size_t d, std::size_t t, std::size_t i, std::size_t j) const
    {
        const std::size_t pair = i * schedule.n + j;
        return base_rate[pair] * profile(pair, t) * factors[d];
    }
};

/// Flat demand: every pair has the same rate, no peaks or day effects.
inline SyntheticSpec flat_spec(const ScheduleConfig& schedule, double rate, std::uint64_t seed)
{
    SyntheticSpec spec;
    spec.schedule = schedule;
    spec.seed = seed;
    const std::size_t nn = schedule.n * schedule.n;
    spec.base_rate.assign(nn, rate);
    spec.morning.assign(nn, DiurnalPeak{});
    spec.evening.assign(nn, DiurnalPeak{});
    spec.travel_offset.assign(nn, 0.0);
    return spec;
}

/// Default demand multiplier of the desk-hz scenario. Large enough that
/// day-level demand swings dominate Poisson counting noise.
inline constexpr double kDeskHzDemandScale = 10.0;

/// The "desk-hz" scenario: stations on a line, each residential, business or
/// mixed. Residential-to-business pairs peak in the morning and the reverse
/// pairs in the afternoon; travel time grows with line distance (5-40 min).
inline SyntheticSpec desk_hz_spec(std::uint64_t seed, ScheduleConfig schedule = {}, double demand_scale = kDeskHzDemandScale)
{
    schedule.validate();
    const std::size_t n = schedule.n;
    SyntheticSpec spec = flat_spec(schedule, 0.0, seed);
    spec.weekday_multiplier = 1.0;
    spec.weekend_multiplier = 0.55;
    spec.day_jitter = 0.2;
    spec.travel_base_minutes = 5.0;
    spec.travel_noise_minutes = 10.0;

    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    enum Kind { residential, business, mixed };
    std::vector<Kind> kind(n);
    std::vector<double> size(n), position(n);
    for (std::size_t i = 0; i < n; ++i) {
        kind[i] = static_cast<Kind>(i % 3);
        size[i] = 0.5 + 1.5 * u01(rng);
        position[i] = n > 1 ? static_cast<double>(i) / static_cast<double>(n - 1) : 0.0;
    }
    const double p = static_cast<double>(schedule.intervals_per_day);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) {
            const std::size_t k = i * n + j;
            const double hetero = 0.4 + 1.2 * u01(rng);
            spec.base_rate[k] = i == j ? 0.0 : demand_scale * 0.9 * std::sqrt(size[i] * size[j]) * hetero;
            double am = 0.6, ae = 0.6;
            if (kind[i] == residential && kind[j] == business) am = 3.5, ae = 0.8;
            if (kind[i] == business && kind[j] == residential) am = 0.8, ae = 3.5;
            if (kind[i] == mixed || kind[j] == mixed) am = 1.5, ae = 1.5;
            spec.morning[k] = DiurnalPeak{0.15 * p + 2.0 * (u01(rng) - 0.5), 0.06 * p + u01(rng), am};
            spec.evening[k] = DiurnalPeak{0.8 * p + 2.0 * (u01(rng) - 0.5), 0.08 * p + u01(rng), ae};
            spec.travel_offset[k] = 25.0 * std::abs(position[i] - position[j]);
        }
    return spec;
}

/// Draws Poisson trip counts per (day, interval, pair) in that order; each
/// trip enters at a uniform minute of its interval and exits after the
/// pair's travel time. Fully determined by `spec.seed`.
inline std::vector<TransactionRecord> generate_synthetic(const SyntheticSpec& spec)
{
    spec.validate();
    const auto& s = spec.schedule;
    const auto factors = spec.day_factors();
    std::mt19937_64 rng(spec.seed);
    std::uniform_int_distribution<std::int64_t> minute_in(0, static_cast<std::int64_t>(s.interval_minutes) - 1);
    std::uniform_real_distribution<double> noise(0.0, 1.0);
    std::vector<TransactionRecord> out;
    for (std::size_t d = 0; d < s.days; ++d)
        for (std::size_t t = 0; t < s.intervals_per_day; ++t) {
            const std::int64_t start = static_cast<std::int64_t>(d) * kMinutesPerDay +
                                       static_cast<std::int64_t>(s.service_start + t * s.interval_minutes);
            for (std::size_t i = 0; i < s.n; ++i)
                for (std::size_t j = 0; j < s.n; ++j) {
                    const double lambda = spec.rate(factors, d, t, i, j);
                    if (lambda <= 0.0) continue;
                    std::poisson_distribution<int> poisson(lambda);
                    const int count = poisson(rng);
                    for (int c = 0; c < count; ++c) {
                        const std::int64_t entry = start + minute_in(rng);
                        const double travel = spec.travel_base_minutes + spec.travel_offset[i * s.n + j] +
                                              spec.travel_noise_minutes * noise(rng);
                        out.push_back({static_cast<std::int64_t>(i), entry, static_cast<std::int64_t>(j),
                                       entry + static_cast<std::int64_t>(std::floor(travel))});
                    }
                }
        }
    return out;
}

// ---------------------------------------------------------------------------
// Comma-separated transaction logs: entry_station,entry_time,exit_station,exit_time
// A missing exit leaves the last two fields empty.

inline void write_transactions(const std::vector<TransactionRecord>& records, std::ostream& os)
{
    for (const auto& r : records) {
        os << r.entry_station << ',' << r.entry_time << ',';
        if (r.exit_station) os << *r.exit_station;
        os << ',';
        if (r.exit_time) os << *r.exit_time;
        os << '\n';
    }
}

namespace detail {

inline std::optional<std::int64_t> parse_field(std::string_view f, bool allow_empty, std::size_t line)
{
    while (!f.empty() && (f.front() == ' ' || f.front() == '\t')) f.remove_prefix(1);
    while (!f.empty() && (f.back() == ' ' || f.back() == '\t' || f.back() == '\r')) f.remove_suffix(1);
    if (f.empty()) {
        if (allow_empty) return std::nullopt;
        throw ParseError("empty field", line);
    }
    std::int64_t v = 0;
    auto [ptr, ec] = std::from_chars(f.data(), f.data() + f.size(), v);
    if (ec != std::errc{} || ptr != f.data() + f.size())
        throw ParseError("not an integer: '" + std::string(f) + "'", line);
    return v;
}

} // namespace detail

inline std::vector<TransactionRecord> read_transactions(std::istream& is)
{
    std::vector<TransactionRecord> out;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(is, line)) {
        ++line_no;
        if (line.empty() || line == "\r") continue;
        std::vector<std::string_view> fields;
        std::string_view rest(line);
        for (;;) {
            auto comma = rest.find(',');
            fields.push_back(rest.substr(0, comma));
            if (comma == std::string_view::npos) break;
            rest.remove_prefix(comma + 1);
        }
        if (fields.size() != 4)
            throw ParseError("expected 4 comma-separated fields, got " + std::to_string(fields.size()), line_no);
        TransactionRecord r;
        r.entry_station = *detail::parse_field(fields[0], false, line_no);
        r.entry_time = *detail::parse_field(fields[1], false, line_no);
        r.exit_station = detail::parse_field(fields[2], true, line_no);
        r.exit_time = detail::parse_field(fields[3], true, line_no);
        if (r.exit_station.has_value() != r.exit_time.has_value())
            throw ParseError("exit station and exit time must both be present or both empty", line_no);
        if (r.exit_time && *r.exit_time < r.entry_time) throw ParseError("exit before entry", line_no);
        out.push_back(r);
    }
    return out;
}

inline void write_transactions(const std::vector<TransactionRecord>& records, const std::filesystem::path& path)
{
    std::ofstream os(path);
    if (!os) throw DataError("cannot open " + path.string() + " for writing");
    write_transactions(records, os);
}

inline std::vector<TransactionRecord> read_transactions(const std::filesystem::path& path)
{
    std::ifstream is(path);
    if (!is) throw DataError("cannot open transactions " + path.string());
    return read_transactions(is);
}

} // namespace odmixer
