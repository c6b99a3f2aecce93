#pragma once

#include <cmath>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "odmixer/errors.hpp"

namespace odmixer {

/// MAE / RMSE / wMAPE aggregated over every entry of every evaluated window.
/// wMAPE is a fraction and is absent when the ground truth sums to zero.
struct MetricsReport {
    double mae = 0.0;
    double rmse = 0.0;
    std::optional<double> wmape;
    std::size_t windows = 0;
    double seconds = 0.0;
    std::size_t param_count = 0;

    std::string wmape_str() const { return wmape ? std::to_string(*wmape) : std::string("undefined"); }
};

/// Accumulates absolute, squared and truth sums in window order.
class MetricsAccumulator {
public:
    void add(std::span<const double> pred, std::span<const double> truth)
    {
        if (pred.size() != truth.size() || pred.empty())
            throw DimensionError("metrics: prediction has " + std::to_string(pred.size()) + " entries, truth has " +
                                 std::to_string(truth.size()));
        for (std::size_t k = 0; k < pred.size(); ++k) {
            const double e = pred[k] - truth[k];
            abs_ += std::abs(e);
            sq_ += e * e;
            truth_ += truth[k];
        }
        count_ += pred.size();
        ++windows_;
    }

    MetricsReport report() const
    {
        if (count_ == 0) throw DimensionError("metrics: no windows to evaluate");
        MetricsReport r;
        r.mae = abs_ / static_cast<double>(count_);
        r.rmse = std::sqrt(sq_ / static_cast<double>(count_));
        if (truth_ > 0.0) r.wmape = abs_ / truth_;
        r.windows = windows_;
        return r;
    }

private:
    double abs_ = 0.0, sq_ = 0.0, truth_ = 0.0;
    std::size_t count_ = 0, windows_ = 0;
};

inline MetricsReport metrics(const std::vector<std::vector<double>>& preds, const std::vector<std::vector<double>>& gts)
{
    if (preds.size() != gts.size())
        throw DimensionError("metrics: " + std::to_string(preds.size()) + " predictions vs " +
                             std::to_string(gts.size()) + " ground truths");
    MetricsAccumulator acc;
    for (std::size_t w = 0; w < preds.size(); ++w) acc.add(preds[w], gts[w]);
    return acc.report();
}

} // namespace odmixer
