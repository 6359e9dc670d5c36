#pragma once

#include <multisem/model.hpp>
#include <multisem/train.hpp>

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace multisem {

/// Everything a run needs besides its input files.
///
/// The text form is YAML with four sections:
///
///     model:  embed_dim, kernel_sizes, conv_out, residual_blocks, residual_out,
///             pool_window, pool_score, refine_dim, attn_dim
///     levels: token, sentence, description
///     ingest: nw, ns, nd, min_freq
///     train:  optimizer, learning_rate, beta1, beta2, epsilon, batch_size,
///             max_epochs, patience, seed, threshold
///
/// Missing keys keep their defaults; unknown sections or keys are rejected.
/// Vocabulary sizes are not part of the file, they come from the data.
struct RunConfig {
    ModelConfig model;
    TrainConfig train;
    int min_freq = 2;

    /// Canonical text: every key, fixed order, shortest round-trip numbers.
    std::string to_text() const;

    static RunConfig from_text(std::string_view text);
    static RunConfig from_file(const std::filesystem::path& path);
    /// Parses `text` on top of `base`: keys present in `text` replace base values.
    static RunConfig from_text(std::string_view text, const RunConfig& base);

    /// Applies `section.key=value` overrides, in order; the value is parsed as YAML.
    void apply_overrides(const std::vector<std::string>& assignments);

    /// Validates model and training sections.
    void validate() const;

    bool operator==(const RunConfig&) const = default;
};

/// Defaults with the small model used for gradient checks.
RunConfig toy_run_config();

} // namespace multisem
