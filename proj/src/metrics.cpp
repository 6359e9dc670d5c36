#include <multisem/errors.hpp>
#include <multisem/metrics.hpp>

#include <json.hpp>

#include <algorithm>
#include <numeric>
#include <vector>

namespace multisem {

namespace {

void check_lengths(std::span<const double> scores, std::span<const int> labels)
{
    if (scores.size() != labels.size())
        throw Error("metrics: " + std::to_string(scores.size()) + " scores but " + std::to_string(labels.size()) + " labels");
    for (int y : labels)
        if (y != 0 && y != 1)
            throw Error("metrics: labels must be 0 or 1");
}

} // namespace

double auc(std::span<const double> scores, std::span<const int> labels)
{
    check_lengths(scores, labels);
    const auto positives = static_cast<std::size_t>(std::count(labels.begin(), labels.end(), 1));
    const std::size_t negatives = labels.size() - positives;
    if (positives == 0 || negatives == 0)
        throw SingleClass("AUC needs both classes");

    // Sort by score; within each run of tied scores every positive beats the
    // negatives ranked before the run and ties with those inside it.
    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), std::size_t { 0 });
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

    double wins = 0.0;
    std::size_t negatives_below = 0;
    for (std::size_t i = 0; i < order.size();) {
        std::size_t j = i;
        std::size_t run_pos = 0, run_neg = 0;
        while (j < order.size() && scores[order[j]] == scores[order[i]]) {
            (labels[order[j]] == 1 ? run_pos : run_neg) += 1;
            ++j;
        }
        wins += static_cast<double>(run_pos) * (static_cast<double>(negatives_below) + 0.5 * static_cast<double>(run_neg));
        negatives_below += run_neg;
        i = j;
    }
    return wins / (static_cast<double>(positives) * static_cast<double>(negatives));
}

Confusion confusion(std::span<const double> scores, std::span<const int> labels, double threshold)
{
    check_lengths(scores, labels);
    Confusion c;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        const bool predicted = scores[i] >= threshold;
        if (labels[i] == 1)
            (predicted ? c.tp : c.fn) += 1;
        else
            (predicted ? c.fp : c.tn) += 1;
    }
    return c;
}

MetricsReport report(std::span<const double> scores, std::span<const int> labels, double threshold)
{
    MetricsReport r;
    r.threshold = threshold;
    r.counts = confusion(scores, labels, threshold);
    const auto [tp, fp, tn, fn] = r.counts;

    auto ratio = [](std::size_t num, std::size_t den, bool& defined) {
        defined = den > 0;
        return defined ? static_cast<double>(num) / static_cast<double>(den) : 0.0;
    };
    r.precision = ratio(tp, tp + fp, r.precision_defined);
    r.recall_pos = ratio(tp, tp + fn, r.recall_pos_defined);
    r.recall_neg = ratio(tn, tn + fp, r.recall_neg_defined);
    r.tpr = r.recall_pos;

    const double sum = r.precision + r.recall_pos;
    r.f1_defined = sum > 0.0;
    r.f1 = r.f1_defined ? 2.0 * r.precision * r.recall_pos / sum : 0.0;

    const bool both_classes = tp + fn > 0 && tn + fp > 0;
    if (both_classes)
        r.auc = auc(scores, labels);
    return r;
}

std::string MetricsReport::to_json() const
{
    nlohmann::ordered_json j;
    j["auc"] = auc ? nlohmann::ordered_json(*auc) : nlohmann::ordered_json(nullptr);
    j["f1"] = f1;
    j["recall_pos"] = recall_pos;
    j["recall_neg"] = recall_neg;
    j["tpr"] = tpr;
    j["precision"] = precision;
    j["tp"] = counts.tp;
    j["fp"] = counts.fp;
    j["tn"] = counts.tn;
    j["fn"] = counts.fn;
    j["threshold"] = threshold;
    j["auc_defined"] = auc.has_value();
    j["precision_defined"] = precision_defined;
    j["f1_defined"] = f1_defined;
    return j.dump();
}

} // namespace multisem
