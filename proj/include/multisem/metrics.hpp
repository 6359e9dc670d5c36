#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>

namespace multisem {

struct Confusion {
    std::size_t tp = 0;
    std::size_t fp = 0;
    std::size_t tn = 0;
    std::size_t fn = 0;

    bool operator==(const Confusion&) const = default;
};

/// Evaluation summary at one decision threshold.
///
/// Ratios whose denominator is zero are reported as 0 with the matching
/// `*_defined` flag cleared. `tpr` equals `recall_pos` (tp / (tp + fn)).
struct MetricsReport {
    std::optional<double> auc; ///< empty when only one class is present
    double f1 = 0.0;
    double recall_pos = 0.0;
    double recall_neg = 0.0;
    double tpr = 0.0;
    double precision = 0.0;
    Confusion counts;
    double threshold = 0.5;

    bool precision_defined = false;
    bool f1_defined = false;
    bool recall_pos_defined = false;
    bool recall_neg_defined = false;

    /// Flat single-line JSON record with stable key order.
    std::string to_json() const;
};

/// Mann-Whitney AUC: fraction of (positive, negative) pairs ranked correctly,
/// ties counted as one half. Throws SingleClass unless both labels occur.
double auc(std::span<const double> scores, std::span<const int> labels);

/// A record is predicted positive iff its score is >= threshold.
Confusion confusion(std::span<const double> scores, std::span<const int> labels, double threshold);

MetricsReport report(std::span<const double> scores, std::span<const int> labels, double threshold);

} // namespace multisem
