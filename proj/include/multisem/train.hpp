#pragma once

#include <multisem/metrics.hpp>
#include <multisem/model.hpp>

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace multisem {

enum class OptimizerKind { Sgd, Adam };

std::string to_string(OptimizerKind kind);
OptimizerKind optimizer_from_string(const std::string& text);

struct TrainConfig {
    OptimizerKind optimizer = OptimizerKind::Adam;
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    std::size_t batch_size = 16;
    std::size_t max_epochs = 50;
    std::size_t patience = 10; ///< epochs without validation-F1 improvement; 0 disables
    std::uint64_t seed = 42;
    double threshold = 0.5;

    void validate() const;
    bool operator==(const TrainConfig&) const = default;
};

/// Moment buffers for Adam, one per parameter tensor, plus the step count.
struct OptimizerState {
    std::vector<std::vector<double>> first;
    std::vector<std::vector<double>> second;
    std::size_t steps = 0;
};

/// Applies one update to every tensor from its grad buffer. Tensors without
/// a grad buffer are treated as having zero gradient.
void optimizer_step(std::span<const NamedTensor> params, OptimizerState& state, const TrainConfig& config);

struct EpochRecord {
    std::size_t epoch = 0; ///< 1-based
    double train_loss = 0.0;
    std::optional<MetricsReport> validation;
    double seconds = 0.0;
};

struct TrainHistory {
    std::vector<EpochRecord> epochs;
    std::optional<std::size_t> best_epoch; ///< epoch whose parameters were returned, when validating
};

struct TrainResult {
    ModelParams params;
    TrainHistory history;
};

using EpochCallback = std::function<void(const EpochRecord&)>;

/// Mini-batch training on pre-encoded patches.
///
/// Each epoch shuffles the training set with a seeded generator, minimises
/// the mean batch cross-entropy, then scores the validation set. With a
/// validation set the parameters of the epoch with the best F1 (earliest on
/// ties) are returned and training stops after `patience` epochs without
/// improvement; without one the final parameters are returned.
TrainResult train(std::span<const EncodedPatch> train_set, std::span<const EncodedPatch> valid_set,
    const ModelConfig& model_config, const TrainConfig& train_config, const EpochCallback& on_epoch = {});

/// Scores of every patch under frozen parameters.
std::vector<double> score_all(std::span<const EncodedPatch> patches, const ModelParams& params, const ModelConfig& config);

MetricsReport evaluate(std::span<const EncodedPatch> patches, const ModelParams& params, const ModelConfig& config,
    double threshold);

/// Mean cross-entropy of frozen parameters over a set of patches.
double mean_loss(std::span<const EncodedPatch> patches, const ModelParams& params, const ModelConfig& config);

} // namespace multisem
