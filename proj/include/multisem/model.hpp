#pragma once

#include <multisem/gradcheck.hpp>
#include <multisem/ingest.hpp>
#include <multisem/tensor.hpp>

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace multisem {

/// How the soft-pooling window scores its elements.
enum class PoolScore {
    Dot,    ///< scaled dot product of each element (query) with the window's last element (key)
    Linear, ///< per-element linear score a.x + b
};

std::string to_string(PoolScore score);
PoolScore pool_score_from_string(const std::string& text);

struct LevelSwitches {
    bool token = true;
    bool sentence = true;
    bool description = true;

    bool operator==(const LevelSwitches&) const = default;
};

struct ModelConfig {
    std::size_t embed_dim = 32;
    std::vector<std::size_t> kernel_sizes { 1, 3, 5 }; ///< one per channel; all odd
    std::size_t conv_out = 32;                          ///< d^f
    std::size_t residual_blocks = 2;                    ///< p, per channel
    std::size_t residual_out = 32;                      ///< d^p
    std::size_t pool_window = 3;                        ///< g
    PoolScore pool_score = PoolScore::Dot;
    std::size_t refine_dim = 32;
    std::size_t attn_dim = 32;
    SequenceLimits limits;
    LevelSwitches levels;
    std::size_t token_vocab = 2;
    std::size_t line_vocab = 2;
    std::size_t desc_vocab = 2;

    std::size_t channels() const { return kernel_sizes.size(); }
    /// Width of one channel's output: d^p, or d^f when there are no residual blocks.
    std::size_t channel_width() const { return residual_blocks > 0 ? residual_out : conv_out; }
    /// Width of every MCC output row: m * channel_width().
    std::size_t feature_width() const { return channels() * channel_width(); }
    /// Length of the aligned code sequence Hwd.
    std::size_t code_length() const;
    /// Number of pooled vectors P = ceil(code_length / g).
    std::size_t pooled_count() const;
    /// Length n of the fused sequence fed to the global attention.
    std::size_t fused_length() const;

    /// Throws InvalidConfig when an invariant does not hold.
    void validate() const;

    bool operator==(const ModelConfig&) const = default;
};

/// The small configuration used for gradient verification.
ModelConfig toy_model_config();

struct ConvParams {
    Tensor kernel; ///< [k x d_in x d_out]
    Tensor bias;   ///< [d_out]
};

/// tanh(conv_k(tanh(conv_k(X))) + conv_1(X))
struct ResidualBlockParams {
    ConvParams first;
    ConvParams second;
    ConvParams skip;
};

struct ChannelParams {
    ConvParams conv;
    std::vector<ResidualBlockParams> blocks;
};

struct LevelParams {
    Tensor embedding; ///< [|V| x d], row 0 is padding
    std::vector<ChannelParams> channels;
};

struct PoolParams {
    Tensor query; ///< [m*d^p x attn]   (dot score)
    Tensor key;   ///< [m*d^p x attn]   (dot score)
    Tensor score_weight; ///< [1 x m*d^p] (linear score)
    Tensor score_bias;   ///< [1]         (linear score)
};

struct ModelParams {
    std::optional<LevelParams> token;
    std::optional<LevelParams> sentence;
    std::optional<LevelParams> description;
    std::optional<PoolParams> pool; ///< absent when no code level is enabled
    Tensor refine_weight; ///< [m*d^p x refine]
    Tensor refine_bias;   ///< [refine]
    Tensor attn_query;    ///< [refine x attn]
    Tensor attn_key;
    Tensor attn_value;
    Tensor head_weight; ///< [attn]
    Tensor head_bias;   ///< [1]

    /// Every learnable tensor with a stable dotted name, in a fixed order.
    std::vector<NamedTensor> named() const;
    std::size_t parameter_count() const;
    ModelParams clone() const;
    void zero_grad();
};

/// Expected name and shape of every parameter for a configuration, in the
/// order ModelParams::named() yields them.
std::vector<std::pair<std::string, Shape>> parameter_layout(const ModelConfig& config);

/// Uniform in [-1/sqrt(fan_in), 1/sqrt(fan_in)] from a seeded generator;
/// biases and padding rows zero.
ModelParams init_params(const ModelConfig& config, std::uint64_t seed);

/// init_params with every non-embedding weight scaled by `gain`. At gain 1
/// attention scores are close to zero, so query/key gradients sit near the
/// rounding floor of the loss; gradient checks probe at gain 2 instead.
ModelParams probe_params(const ModelConfig& config, std::uint64_t seed, double gain = 2.0);

/// Builds a parameter set from named tensors (checkpoint loading); every name
/// and shape must match parameter_layout(config).
ModelParams params_from_named(const ModelConfig& config, const std::vector<NamedTensor>& named);

// ---------------------------------------------------------------- forward pieces

Tensor mcc_forward(Graph& g, const Tensor& embedded, const std::vector<ChannelParams>& channels);

struct AlignResult {
    Tensor pooled;                ///< [P x m*d^p]
    std::vector<Tensor> weights;  ///< per window, [1 x window length]
};

/// Windowed soft-pooling over the row concatenation of the given code-level
/// sequences (token level first, then line level).
AlignResult semantic_align(Graph& g, const std::vector<Tensor>& code_levels, const ModelConfig& config, const PoolParams& pool);

/// ReLU(x W + b) over the pooled rows followed by the description rows.
/// Either part may be absent, not both.
Tensor refine_and_fuse(Graph& g, const std::optional<Tensor>& pooled, const std::optional<Tensor>& description,
    const ModelParams& params);

struct AttentionResult {
    Tensor global;    ///< G [n x attn]
    Tensor weights;   ///< [n x n] row-softmax
    Tensor pooled;    ///< D_g [attn]
};

AttentionResult hybrid_attention(Graph& g, const Tensor& fused, const ModelParams& params);

/// sigmoid(w . D_g + b) as a [1] tensor.
Tensor predict(Graph& g, const Tensor& pooled, const ModelParams& params);

/// Cross-entropy of a [1] probability against a {0,1} label.
Tensor loss(Graph& g, const Tensor& prob, int label);

struct LevelActivations {
    std::optional<Tensor> token;       ///< Hw
    std::optional<Tensor> sentence;    ///< Hs
    std::optional<Tensor> description; ///< Hd
    std::optional<AlignResult> aligned;
    Tensor fused;                      ///< l_1..l_n
    AttentionResult attention;
};

/// Probability that the patch is a security patch, as a [1] tensor.
Tensor forward(Graph& g, const EncodedPatch& enc, const ModelParams& params, const ModelConfig& config,
    LevelActivations* activations = nullptr);

/// Mean cross-entropy over a batch.
Tensor batch_loss(Graph& g, std::span<const EncodedPatch> batch, const ModelParams& params, const ModelConfig& config);

/// Score of one patch on a non-recording graph.
double score(const EncodedPatch& enc, const ModelParams& params, const ModelConfig& config);

} // namespace multisem
