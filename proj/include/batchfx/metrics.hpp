#pragma once

// Per-variable quality metrics for corrected data.

#include "batchfx/core.hpp"

#include <span>
#include <string>
#include <vector>

namespace batchfx {

/// sd / mean of each variable over all QC rows (n-1 denominator), as a
/// fraction.
Vector rsd(const BatchedDataset& dataset);

/// Same, restricted to one batch's QC rows.
Vector rsd(const BatchedDataset& dataset, const std::string& batch);

/// sqrt(var_QC / (var_QC + var_subject)) per variable, pooled over batches.
Vector d_ratio(const BatchedDataset& dataset);

/// 100 * #{v < t} / n for each threshold t (thresholds ascending).
std::vector<double> cumulative_frequency(std::span<const double> values,
                                         std::span<const double> thresholds);

inline const std::vector<double> kRsdThresholds{0.15, 0.20, 0.30};
inline const std::vector<double> kDRatioThresholds{0.50};

struct MetricTable {
    std::vector<std::string> features;
    Vector rsd;
    Vector d_ratio;  ///< empty when the data hold fewer than two subject rows
    std::vector<double> rsd_thresholds;
    std::vector<double> rsd_cf;
    std::vector<double> d_ratio_thresholds;
    std::vector<double> d_ratio_cf;
    std::vector<std::string> batches;
    Matrix rsd_by_batch;  ///< batches x variables

    double median_rsd() const;
};

MetricTable metric_table(const BatchedDataset& dataset);

/// One line like "CF RSD <15% <20% <30% | D-ratio <50%: 100 100 100 | 100".
std::string format_cf_row(const MetricTable& table);

}  // namespace batchfx
