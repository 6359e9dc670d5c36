#include <multisem/errors.hpp>
#include <multisem/train.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <random>

namespace multisem {

std::string to_string(OptimizerKind kind)
{
    return kind == OptimizerKind::Adam ? "adam" : "sgd";
}

OptimizerKind optimizer_from_string(const std::string& text)
{
    if (text == "adam")
        return OptimizerKind::Adam;
    if (text == "sgd")
        return OptimizerKind::Sgd;
    throw InvalidConfig("optimizer must be 'sgd' or 'adam', got '" + text + "'");
}

void TrainConfig::validate() const
{
    // A zero learning rate is accepted: it freezes the parameters.
    if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate))
        throw InvalidConfig("learning_rate must be finite and non-negative");
    if (!(beta1 > 0.0 && beta1 < 1.0) || !(beta2 > 0.0 && beta2 < 1.0))
        throw InvalidConfig("adam betas must lie in (0, 1)");
    if (!(epsilon > 0.0))
        throw InvalidConfig("adam epsilon must be positive");
    if (batch_size < 1)
        throw InvalidConfig("batch_size must be >= 1");
    if (!(threshold >= 0.0 && threshold <= 1.0))
        throw InvalidConfig("threshold must lie in [0, 1]");
}

void optimizer_step(std::span<const NamedTensor> params, OptimizerState& state, const TrainConfig& config)
{
    if (config.optimizer == OptimizerKind::Adam && state.first.empty()) {
        for (const auto& [name, t] : params) {
            state.first.emplace_back(t.size(), 0.0);
            state.second.emplace_back(t.size(), 0.0);
        }
    }
    if (config.optimizer == OptimizerKind::Adam && state.first.size() != params.size())
        throw ShapeMismatch("optimizer state holds " + std::to_string(state.first.size()) + " tensors, got "
            + std::to_string(params.size()));
    ++state.steps;

    const double lr = config.learning_rate;
    const double correction1 = 1.0 - std::pow(config.beta1, static_cast<double>(state.steps));
    const double correction2 = 1.0 - std::pow(config.beta2, static_cast<double>(state.steps));

    for (std::size_t p = 0; p < params.size(); ++p) {
        Tensor t = params[p].second;
        if (!t.has_grad())
            continue;
        auto values = t.mutable_data();
        const auto grad = t.grad();
        if (grad.size() != values.size())
            throw ShapeMismatch("gradient of '" + params[p].first + "' does not match its tensor");

        if (config.optimizer == OptimizerKind::Sgd) {
            for (std::size_t i = 0; i < values.size(); ++i)
                values[i] -= lr * grad[i];
            continue;
        }
        auto& m = state.first[p];
        auto& v = state.second[p];
        if (m.size() != values.size())
            throw ShapeMismatch("optimizer state of '" + params[p].first + "' does not match its tensor");
        for (std::size_t i = 0; i < values.size(); ++i) {
            m[i] = config.beta1 * m[i] + (1.0 - config.beta1) * grad[i];
            v[i] = config.beta2 * v[i] + (1.0 - config.beta2) * grad[i] * grad[i];
            const double m_hat = m[i] / correction1;
            const double v_hat = v[i] / correction2;
            values[i] -= lr * m_hat / (std::sqrt(v_hat) + config.epsilon);
        }
    }
}

std::vector<double> score_all(std::span<const EncodedPatch> patches, const ModelParams& params, const ModelConfig& config)
{
    std::vector<double> scores;
    scores.reserve(patches.size());
    for (const auto& enc : patches)
        scores.push_back(score(enc, params, config));
    return scores;
}

MetricsReport evaluate(std::span<const EncodedPatch> patches, const ModelParams& params, const ModelConfig& config,
    double threshold)
{
    const auto scores = score_all(patches, params, config);
    std::vector<int> labels;
    for (const auto& enc : patches)
        labels.push_back(enc.label);
    return report(scores, labels, threshold);
}

double mean_loss(std::span<const EncodedPatch> patches, const ModelParams& params, const ModelConfig& config)
{
    if (patches.empty())
        return 0.0;
    double total = 0.0;
    for (const auto& enc : patches) {
        Graph g(false);
        total += loss(g, forward(g, enc, params, config), enc.label).item();
    }
    return total / static_cast<double>(patches.size());
}

TrainResult train(std::span<const EncodedPatch> train_set, std::span<const EncodedPatch> valid_set,
    const ModelConfig& model_config, const TrainConfig& train_config, const EpochCallback& on_epoch)
{
    train_config.validate();
    if (train_set.empty())
        throw DegenerateDataset("training set is empty");
    const auto positives = std::count_if(train_set.begin(), train_set.end(), [](const auto& e) { return e.label == 1; });
    if (positives == 0 || static_cast<std::size_t>(positives) == train_set.size())
        throw DegenerateDataset("training set contains a single class");

    TrainResult result { init_params(model_config, train_config.seed), {} };
    ModelParams& params = result.params;
    const auto named = params.named();
    OptimizerState state;

    std::seed_seq shuffle_seed { train_config.seed, std::uint64_t { 0x5eed } };
    std::mt19937_64 rng(shuffle_seed);
    std::vector<std::size_t> order(train_set.size());
    std::iota(order.begin(), order.end(), std::size_t { 0 });

    std::optional<ModelParams> best;
    double best_f1 = -1.0;
    std::vector<EncodedPatch> batch;

    for (std::size_t epoch = 1; epoch <= train_config.max_epochs; ++epoch) {
        const auto started = std::chrono::steady_clock::now();
        std::shuffle(order.begin(), order.end(), rng);

        double loss_sum = 0.0;
        for (std::size_t begin = 0; begin < order.size(); begin += train_config.batch_size) {
            const std::size_t end = std::min(order.size(), begin + train_config.batch_size);
            batch.clear();
            for (std::size_t i = begin; i < end; ++i)
                batch.push_back(train_set[order[i]]);

            params.zero_grad();
            Graph graph;
            Tensor batch_mean = batch_loss(graph, batch, params, model_config);
            const double value = batch_mean.item();
            if (!std::isfinite(value))
                throw DivergedLoss(epoch);
            graph.backward(batch_mean);
            optimizer_step(named, state, train_config);
            loss_sum += value * static_cast<double>(batch.size());
        }

        EpochRecord record;
        record.epoch = epoch;
        record.train_loss = loss_sum / static_cast<double>(train_set.size());
        if (!valid_set.empty())
            record.validation = evaluate(valid_set, params, model_config, train_config.threshold);
        record.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
        result.history.epochs.push_back(record);
        if (on_epoch)
            on_epoch(record);

        if (record.validation) {
            if (record.validation->f1 > best_f1) {
                best_f1 = record.validation->f1;
                best = params.clone();
                result.history.best_epoch = epoch;
            } else if (train_config.patience > 0 && epoch - *result.history.best_epoch >= train_config.patience) {
                break;
            }
        }
    }

    if (best)
        result.params = std::move(*best);
    return result;
}

} // namespace multisem
