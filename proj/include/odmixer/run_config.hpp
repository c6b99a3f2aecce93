#pragma once

#include <charconv>
#include <filesystem>
#include <fstream>
#include <functional>
#include <istream>
#include <sstream>
#include <string>
#include <vector>

#include "odmixer/errors.hpp"
#include "odmixer/ingestion.hpp"
#include "odmixer/model.hpp"
#include "odmixer/training.hpp"

namespace odmixer {

/// Everything a CLI run can be configured with. Paths are relative to the
/// output directory unless absolute.
struct RunConfig {
    ScheduleConfig schedule;
    double demand_scale = kDeskHzDemandScale;
    ModelConfig model = [] {
        ModelConfig m;
        m.layers = 3;
        return m;
    }();
    std::string variant = "full";
    TrainConfig train;
    bool ha_by_weekday = false;
    double noise_sigma = 1.0;
    std::vector<double> mask_ratios{0.0, 0.1, 0.2, 0.3, 0.5};
    std::string grid = "n=16,32,64;L=5;d=16";
    std::size_t perf_batch = 4;
    std::string pairs = "0:1,1:0";
    std::string transactions = "transactions.csv";
    std::string dataset = "dataset.odds";
    std::string checkpoint = "model.odmx";
    std::string history = "history.csv";

    /// Applies `variant` and the station count to the model, then validates.
    void finalize()
    {
        model.n = schedule.n;
        bool found = false;
        for (const auto& [name, ab] : ablation_variants())
            if (name == variant) model.ablation = ab, found = true;
        if (!found) throw ConfigError("unknown variant '" + variant + "'");
        schedule.validate();
        model.validate();
        train.validate();
        if (!(demand_scale >= 0.0)) throw ConfigError("demand_scale must be >= 0");
        if (!(noise_sigma >= 0.0)) throw ConfigError("noise_sigma must be >= 0");
        for (double r : mask_ratios)
            if (!(r >= 0.0 && r <= 1.0)) throw ConfigError("mask ratios must lie in [0, 1]");
        if (perf_batch == 0) throw ConfigError("perf_batch must be >= 1");
    }
};

namespace config_detail {

inline std::string trim(std::string s)
{
    const auto b = s.find_first_not_of(" \t\r");
    const auto e = s.find_last_not_of(" \t\r");
    return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
}

template <typename T>
T parse_number(const std::string& key, const std::string& v)
{
    T out{};
    auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc{} || ptr != v.data() + v.size())
        throw ConfigError("bad value '" + v + "' for " + key);
    return out;
}

inline bool parse_bool(const std::string& key, const std::string& v)
{
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    throw ConfigError("bad value '" + v + "' for " + key + " (use true or false)");
}

inline std::string fmt(double v)
{
    std::ostringstream os;
    os << v;
    return os.str();
}

inline std::string join(const std::vector<double>& v)
{
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + fmt(v[i]);
    return s;
}

// Accessors hand out mutable references; reading goes through a copy.
template <typename Member>
auto read_copy(Member member, RunConfig c)
{
    return member(c);
}

} // namespace config_detail

struct ConfigKey {
    std::string key;
    std::string help;
    std::function<void(RunConfig&, const std::string&)> set;
    std::function<std::string(const RunConfig&)> get;
};

inline const std::vector<ConfigKey>& config_schema()
{
    using namespace config_detail;
    auto size_key = [](std::string key, std::string help, auto member) {
        return ConfigKey{key, std::move(help),
                         [member, key](RunConfig& c, const std::string& v) {
                             member(c) = parse_number<std::size_t>(key, v);
                         },
                         [member](const RunConfig& c) { return std::to_string(read_copy(member, c)); }};
    };
    auto real_key = [](std::string key, std::string help, auto member) {
        return ConfigKey{key, std::move(help),
                         [member, key](RunConfig& c, const std::string& v) {
                             member(c) = parse_number<double>(key, v);
                         },
                         [member](const RunConfig& c) { return fmt(read_copy(member, c)); }};
    };
    auto bool_key = [](std::string key, std::string help, auto member) {
        return ConfigKey{key, std::move(help),
                         [member, key](RunConfig& c, const std::string& v) { member(c) = parse_bool(key, v); },
                         [member](const RunConfig& c) {
                             return std::string(read_copy(member, c) ? "true" : "false");
                         }};
    };
    auto text_key = [](std::string key, std::string help, auto member) {
        return ConfigKey{key, std::move(help), [member](RunConfig& c, const std::string& v) { member(c) = v; },
                         [member](const RunConfig& c) { return read_copy(member, c); }};
    };
    static const std::vector<ConfigKey> schema = {
        size_key("n", "stations", [](RunConfig& c) -> std::size_t& { return c.schedule.n; }),
        size_key("days", "days of data", [](RunConfig& c) -> std::size_t& { return c.schedule.days; }),
        size_key("intervals_per_day", "service intervals per day",
                 [](RunConfig& c) -> std::size_t& { return c.schedule.intervals_per_day; }),
        size_key("interval_minutes", "interval length in minutes",
                 [](RunConfig& c) -> std::size_t& { return c.schedule.interval_minutes; }),
        size_key("service_start", "first service minute of the day",
                 [](RunConfig& c) -> std::size_t& { return c.schedule.service_start; }),
        real_key("demand_scale", "synthetic demand multiplier", [](RunConfig& c) -> double& { return c.demand_scale; }),
        size_key("horizon", "input intervals per window (T)",
                 [](RunConfig& c) -> std::size_t& { return c.model.horizon; }),
        size_key("d", "channel width", [](RunConfig& c) -> std::size_t& { return c.model.d; }),
        size_key("layers", "mixer blocks (L)", [](RunConfig& c) -> std::size_t& { return c.model.layers; }),
        ConfigKey{"activation", "gelu or relu",
                  [](RunConfig& c, const std::string& v) {
                      if (v == "gelu") c.model.activation = Activation::gelu;
                      else if (v == "relu") c.model.activation = Activation::relu;
                      else throw ConfigError("bad value '" + v + "' for activation (use gelu or relu)");
                  },
                  [](const RunConfig& c) {
                      return std::string(c.model.activation == Activation::gelu ? "gelu" : "relu");
                  }},
        text_key("variant", "model variant: full, no_omp, no_cm, no_om, no_dm, no_mm, no_btl, no_pb",
                 [](RunConfig& c) -> std::string& { return c.variant; }),
        real_key("learning_rate", "Adam learning rate",
                 [](RunConfig& c) -> double& { return c.train.learning_rate; }),
        size_key("batch_size", "windows per batch",
                 [](RunConfig& c) -> std::size_t& { return c.train.batch_size; }),
        size_key("max_epochs", "epoch limit", [](RunConfig& c) -> std::size_t& { return c.train.max_epochs; }),
        size_key("patience", "epochs without validation gain before stopping",
                 [](RunConfig& c) -> std::size_t& { return c.train.patience; }),
        size_key("train_days", "training days",
                 [](RunConfig& c) -> std::size_t& { return c.train.train_days; }),
        size_key("val_days", "validation days", [](RunConfig& c) -> std::size_t& { return c.train.val_days; }),
        size_key("test_days", "test days", [](RunConfig& c) -> std::size_t& { return c.train.test_days; }),
        bool_key("require_week_history", "skip windows without a day-7 history",
                 [](RunConfig& c) -> bool& { return c.train.require_week_history; }),
        bool_key("ha_by_weekday", "condition the historical average on day of week",
                 [](RunConfig& c) -> bool& { return c.ha_by_weekday; }),
        ConfigKey{"seed", "random seed (overridden by ODMIXER_SEED, then --seed)",
                  [](RunConfig& c, const std::string& v) { c.train.seed = parse_number<std::uint64_t>("seed", v); },
                  [](const RunConfig& c) { return std::to_string(c.train.seed); }},
        real_key("noise_sigma", "robust: Gaussian noise sigma", [](RunConfig& c) -> double& { return c.noise_sigma; }),
        ConfigKey{"mask_ratios", "robust: comma-separated mask ratios",
                  [](RunConfig& c, const std::string& v) {
                      std::vector<double> out;
                      std::stringstream ss(v);
                      std::string part;
                      while (std::getline(ss, part, ',')) out.push_back(parse_number<double>("mask_ratios", trim(part)));
                      if (out.empty()) throw ConfigError("mask_ratios is empty");
                      c.mask_ratios = out;
                  },
                  [](const RunConfig& c) { return join(c.mask_ratios); }},
        text_key("grid", "perf: grid such as n=16,32,64;L=5;d=16", [](RunConfig& c) -> std::string& { return c.grid; }),
        size_key("perf_batch", "perf: windows per timed forward",
                 [](RunConfig& c) -> std::size_t& { return c.perf_batch; }),
        text_key("pairs", "export-series: pairs as i:j,i:j", [](RunConfig& c) -> std::string& { return c.pairs; }),
        text_key("transactions", "transaction log path", [](RunConfig& c) -> std::string& { return c.transactions; }),
        text_key("dataset", "dataset path", [](RunConfig& c) -> std::string& { return c.dataset; }),
        text_key("checkpoint", "checkpoint path", [](RunConfig& c) -> std::string& { return c.checkpoint; }),
        text_key("history", "training history path", [](RunConfig& c) -> std::string& { return c.history; }),
    };
    return schema;
}

inline void set_config_key(RunConfig& cfg, const std::string& key, const std::string& value)
{
    for (const auto& k : config_schema())
        if (k.key == key) return k.set(cfg, value);
    throw ConfigError("unknown config key '" + key + "'");
}

/// Reads `key = value` lines; '#' starts a comment. Later lines win.
inline void apply_config(RunConfig& cfg, std::istream& is)
{
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(is, line)) {
        ++line_no;
        if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
        line = config_detail::trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError("config line " + std::to_string(line_no) + ": expected key = value");
        try {
            set_config_key(cfg, config_detail::trim(line.substr(0, eq)), config_detail::trim(line.substr(eq + 1)));
        } catch (const ConfigError& e) {
            throw ConfigError("config line " + std::to_string(line_no) + ": " + e.what());
        }
    }
}

inline void apply_config(RunConfig& cfg, const std::filesystem::path& path)
{
    std::ifstream is(path);
    if (!is) throw ConfigError("cannot open config " + path.string());
    apply_config(cfg, is);
}

/// Key table with defaults for --help.
inline std::string describe_config()
{
    const RunConfig defaults;
    std::ostringstream os;
    os << "Config keys (key = value, defaults shown):\n";
    for (const auto& k : config_schema()) {
        std::string left = "  " + k.key + " = " + k.get(defaults);
        if (left.size() < 36) left.resize(36, ' ');
        os << left << "  " << k.help << '\n';
    }
    return os.str();
}

inline std::vector<std::pair<std::size_t, std::size_t>> parse_pairs(const std::string& text)
{
    std::vector<std::pair<std::size_t, std::size_t>> out;
    std::stringstream ss(text);
    std::string part;
    while (std::getline(ss, part, ',')) {
        part = config_detail::trim(part);
        const auto colon = part.find(':');
        if (colon == std::string::npos) throw ConfigError("pair '" + part + "' must look like i:j");
        out.emplace_back(config_detail::parse_number<std::size_t>("pairs", part.substr(0, colon)),
                         config_detail::parse_number<std::size_t>("pairs", part.substr(colon + 1)));
    }
    if (out.empty()) throw ConfigError("no pairs given");
    return out;
}

} // namespace odmixer
