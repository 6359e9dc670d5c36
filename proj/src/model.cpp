#include <multisem/errors.hpp>
#include <multisem/model.hpp>

#include <cmath>
#include <random>

namespace multisem {

std::string to_string(PoolScore score)
{
    return score == PoolScore::Dot ? "dot" : "linear";
}

PoolScore pool_score_from_string(const std::string& text)
{
    if (text == "dot")
        return PoolScore::Dot;
    if (text == "linear")
        return PoolScore::Linear;
    throw InvalidConfig("pool_score must be 'dot' or 'linear', got '" + text + "'");
}

// ---------------------------------------------------------------- config

std::size_t ModelConfig::code_length() const
{
    return (levels.token ? limits.nw : 0) + (levels.sentence ? limits.ns : 0);
}

std::size_t ModelConfig::pooled_count() const
{
    return (code_length() + pool_window - 1) / pool_window;
}

std::size_t ModelConfig::fused_length() const
{
    return pooled_count() + (levels.description ? limits.nd : 0);
}

void ModelConfig::validate() const
{
    auto positive = [](std::size_t v, const char* name) {
        if (v == 0)
            throw InvalidConfig(std::string(name) + " must be positive");
    };
    positive(embed_dim, "embed_dim");
    positive(conv_out, "conv_out");
    positive(residual_out, "residual_out");
    positive(pool_window, "pool_window");
    positive(refine_dim, "refine_dim");
    positive(attn_dim, "attn_dim");
    positive(limits.nw, "nw");
    positive(limits.ns, "ns");
    positive(limits.nd, "nd");
    if (kernel_sizes.empty())
        throw InvalidConfig("kernel_sizes must name at least one channel");
    for (auto k : kernel_sizes)
        if (k % 2 == 0)
            throw InvalidConfig("kernel size " + std::to_string(k) + " is not odd");
    if (!levels.token && !levels.sentence && !levels.description)
        throw InvalidConfig("at least one level must be enabled");
    if (token_vocab < 2 || line_vocab < 2 || desc_vocab < 2)
        throw InvalidConfig("vocabulary sizes must include PAD and UNK");
}

ModelConfig toy_model_config()
{
    ModelConfig c;
    c.embed_dim = 8;
    c.kernel_sizes = { 1, 3 };
    c.conv_out = 8;
    c.residual_blocks = 1;
    c.residual_out = 8;
    c.pool_window = 2;
    c.refine_dim = 8;
    c.attn_dim = 8;
    c.limits = { 12, 6, 6 };
    return c;
}

// ---------------------------------------------------------------- parameters

namespace {

Tensor param(Shape shape)
{
    return Tensor::zeros(std::move(shape), true);
}

LevelParams level_skeleton(const ModelConfig& c, std::size_t vocab)
{
    LevelParams level;
    level.embedding = param({ vocab, c.embed_dim });
    for (auto k : c.kernel_sizes) {
        ChannelParams ch;
        ch.conv = { param({ k, c.embed_dim, c.conv_out }), param({ c.conv_out }) };
        for (std::size_t b = 0; b < c.residual_blocks; ++b) {
            const std::size_t in = b == 0 ? c.conv_out : c.residual_out;
            const std::size_t out = c.residual_out;
            ch.blocks.push_back({
                { param({ k, in, out }), param({ out }) },
                { param({ k, out, out }), param({ out }) },
                { param({ 1, in, out }), param({ out }) },
            });
        }
        level.channels.push_back(std::move(ch));
    }
    return level;
}

ModelParams skeleton(const ModelConfig& c)
{
    c.validate();
    ModelParams p;
    if (c.levels.token)
        p.token = level_skeleton(c, c.token_vocab);
    if (c.levels.sentence)
        p.sentence = level_skeleton(c, c.line_vocab);
    if (c.levels.description)
        p.description = level_skeleton(c, c.desc_vocab);
    const std::size_t width = c.feature_width();
    if (c.levels.token || c.levels.sentence) {
        PoolParams pool;
        if (c.pool_score == PoolScore::Dot) {
            pool.query = param({ width, c.attn_dim });
            pool.key = param({ width, c.attn_dim });
        } else {
            pool.score_weight = param({ 1, width });
            pool.score_bias = param({ 1 });
        }
        p.pool = std::move(pool);
    }
    p.refine_weight = param({ width, c.refine_dim });
    p.refine_bias = param({ c.refine_dim });
    p.attn_query = param({ c.refine_dim, c.attn_dim });
    p.attn_key = param({ c.refine_dim, c.attn_dim });
    p.attn_value = param({ c.refine_dim, c.attn_dim });
    p.head_weight = param({ c.attn_dim });
    p.head_bias = param({ 1 });
    return p;
}

template <class Conv, class Fn>
void visit_conv(const std::string& prefix, Conv& conv, Fn& fn)
{
    fn(prefix + ".kernel", conv.kernel);
    fn(prefix + ".bias", conv.bias);
}

template <class Level, class Fn>
void visit_level(const std::string& prefix, Level& level, Fn& fn)
{
    fn(prefix + ".embedding", level.embedding);
    for (std::size_t i = 0; i < level.channels.size(); ++i) {
        auto& channel = level.channels[i];
        const auto ch = prefix + ".ch" + std::to_string(i);
        visit_conv(ch + ".conv", channel.conv, fn);
        for (std::size_t b = 0; b < channel.blocks.size(); ++b) {
            auto& block = channel.blocks[b];
            const auto bp = ch + ".block" + std::to_string(b);
            visit_conv(bp + ".first", block.first, fn);
            visit_conv(bp + ".second", block.second, fn);
            visit_conv(bp + ".skip", block.skip, fn);
        }
    }
}

// Fixed traversal order shared by named(), parameter_layout() and checkpoints.
template <class Params, class Fn>
void visit(Params& p, Fn&& fn)
{
    if (p.token)
        visit_level("token", *p.token, fn);
    if (p.sentence)
        visit_level("sentence", *p.sentence, fn);
    if (p.description)
        visit_level("description", *p.description, fn);
    if (p.pool) {
        if (p.pool->query.defined()) {
            fn("pool.query", p.pool->query);
            fn("pool.key", p.pool->key);
        } else {
            fn("pool.score_weight", p.pool->score_weight);
            fn("pool.score_bias", p.pool->score_bias);
        }
    }
    fn("refine.weight", p.refine_weight);
    fn("refine.bias", p.refine_bias);
    fn("attn.query", p.attn_query);
    fn("attn.key", p.attn_key);
    fn("attn.value", p.attn_value);
    fn("head.weight", p.head_weight);
    fn("head.bias", p.head_bias);
}

bool ends_with(const std::string& s, const std::string& suffix)
{
    return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

} // namespace

std::vector<NamedTensor> ModelParams::named() const
{
    std::vector<NamedTensor> out;
    visit(*this, [&](const std::string& name, const Tensor& t) { out.emplace_back(name, t); });
    return out;
}

std::size_t ModelParams::parameter_count() const
{
    std::size_t total = 0;
    visit(*this, [&](const std::string&, const Tensor& t) { total += t.size(); });
    return total;
}

ModelParams ModelParams::clone() const
{
    ModelParams copy = *this;
    visit(copy, [](const std::string&, Tensor& t) { t = t.clone(); });
    return copy;
}

void ModelParams::zero_grad()
{
    for (auto& [name, t] : named())
        t.zero_grad();
}

std::vector<std::pair<std::string, Shape>> parameter_layout(const ModelConfig& config)
{
    std::vector<std::pair<std::string, Shape>> layout;
    const ModelParams shapes = skeleton(config);
    visit(shapes, [&](const std::string& name, const Tensor& t) { layout.emplace_back(name, t.shape()); });
    return layout;
}

ModelParams init_params(const ModelConfig& config, std::uint64_t seed)
{
    ModelParams params = skeleton(config);
    std::mt19937_64 rng(seed);
    for (auto& [name, tensor] : params.named()) {
        if (ends_with(name, "bias"))
            continue;
        const auto& shape = tensor.shape();
        const bool embedding = ends_with(name, ".embedding");
        std::size_t fan_in = shape[0];
        if (embedding)
            fan_in = 1;
        else if (shape.size() == 3)
            fan_in = shape[0] * shape[1];
        else if (name == "pool.score_weight")
            fan_in = shape[1];
        const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
        std::uniform_real_distribution<double> dist(-bound, bound);
        auto values = tensor.mutable_data();
        for (double& v : values)
            v = dist(rng);
        if (embedding)
            std::fill_n(values.begin(), shape[1], 0.0);
    }
    return params;
}

ModelParams probe_params(const ModelConfig& config, std::uint64_t seed, double gain)
{
    ModelParams params = init_params(config, seed);
    for (auto& [name, tensor] : params.named()) {
        if (ends_with(name, "bias") || ends_with(name, ".embedding"))
            continue;
        for (double& v : tensor.mutable_data())
            v *= gain;
    }
    return params;
}

ModelParams params_from_named(const ModelConfig& config, const std::vector<NamedTensor>& named)
{
    ModelParams params = skeleton(config);
    auto slots = params.named();
    if (slots.size() != named.size())
        throw ConfigMismatch("expected " + std::to_string(slots.size()) + " parameter tensors, got " + std::to_string(named.size()));
    for (std::size_t i = 0; i < slots.size(); ++i) {
        auto& [name, slot] = slots[i];
        const auto& [given_name, given] = named[i];
        if (name != given_name)
            throw ConfigMismatch("parameter " + std::to_string(i) + " is '" + given_name + "', expected '" + name + "'");
        if (slot.shape() != given.shape())
            throw ConfigMismatch("parameter '" + name + "' has shape " + shape_to_string(given.shape()) + ", config implies "
                + shape_to_string(slot.shape()));
        std::copy(given.data().begin(), given.data().end(), slot.mutable_data().begin());
    }
    return params;
}

// ---------------------------------------------------------------- forward pieces

Tensor mcc_forward(Graph& g, const Tensor& embedded, const std::vector<ChannelParams>& channels)
{
    if (embedded.rank() != 2 || embedded.dim(0) == 0)
        throw ShapeMismatch("mcc_forward: expected a non-empty [n x d] input, got " + shape_to_string(embedded.shape()));
    std::vector<Tensor> outputs;
    outputs.reserve(channels.size());
    for (const auto& ch : channels) {
        Tensor x = g.tanh(g.conv1d_same(embedded, ch.conv.kernel, ch.conv.bias));
        for (const auto& block : ch.blocks) {
            Tensor x1 = g.tanh(g.conv1d_same(x, block.first.kernel, block.first.bias));
            Tensor x2 = g.conv1d_same(x1, block.second.kernel, block.second.bias);
            Tensor x3 = g.conv1d_same(x, block.skip.kernel, block.skip.bias);
            x = g.tanh(g.add(x2, x3));
        }
        outputs.push_back(std::move(x));
    }
    if (outputs.size() == 1)
        return outputs.front();
    return g.concat(outputs, 1);
}

AlignResult semantic_align(Graph& g, const std::vector<Tensor>& code_levels, const ModelConfig& config, const PoolParams& pool)
{
    if (code_levels.empty())
        throw ShapeMismatch("semantic_align: no code-level sequence");
    const std::size_t window = config.pool_window;
    if (window == 0)
        throw InvalidConfig("pool_window must be positive");
    Tensor seq = code_levels.size() == 1 ? code_levels.front() : g.concat(code_levels, 0);
    const std::size_t total = seq.dim(0);

    Tensor queries, keys;
    const bool dot = pool.query.defined();
    if (dot) {
        queries = g.matmul(seq, pool.query);
        keys = g.matmul(seq, pool.key);
    }
    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(config.attn_dim));

    AlignResult result;
    std::vector<Tensor> pooled;
    for (std::size_t begin = 0; begin < total; begin += window) {
        const std::size_t end = std::min(total, begin + window);
        Tensor rows = g.slice_rows(seq, begin, end);
        Tensor scores;
        if (dot) {
            // Each window element is scored as a query against the window's last element.
            Tensor key = g.slice_rows(keys, end - 1, end);
            scores = g.scale(g.matmul_transposed(key, g.slice_rows(queries, begin, end)), inv_sqrt);
        } else {
            scores = g.add_scalar(g.matmul_transposed(pool.score_weight, rows), pool.score_bias);
        }
        Tensor beta = g.softmax(scores);
        pooled.push_back(g.matmul(beta, rows));
        result.weights.push_back(std::move(beta));
    }
    result.pooled = pooled.size() == 1 ? pooled.front() : g.concat(pooled, 0);
    return result;
}

Tensor refine_and_fuse(Graph& g, const std::optional<Tensor>& pooled, const std::optional<Tensor>& description,
    const ModelParams& params)
{
    std::vector<Tensor> parts;
    if (pooled)
        parts.push_back(*pooled);
    if (description)
        parts.push_back(*description);
    if (parts.empty())
        throw ShapeMismatch("refine_and_fuse: nothing to fuse");
    Tensor rows = parts.size() == 1 ? parts.front() : g.concat(parts, 0);
    return g.relu(g.add_row_bias(g.matmul(rows, params.refine_weight), params.refine_bias));
}

AttentionResult hybrid_attention(Graph& g, const Tensor& fused, const ModelParams& params)
{
    if (fused.rank() != 2 || fused.dim(0) == 0)
        throw ShapeMismatch("hybrid_attention: expected a non-empty [n x d] input, got " + shape_to_string(fused.shape()));
    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(params.attn_query.dim(1)));
    Tensor q = g.matmul(fused, params.attn_query);
    Tensor k = g.matmul(fused, params.attn_key);
    Tensor v = g.matmul(fused, params.attn_value);
    Tensor weights = g.softmax(g.scale(g.matmul_transposed(q, k), inv_sqrt));
    Tensor global = g.matmul(weights, v);
    Tensor pooled = g.mean(global, 0);
    return { std::move(global), std::move(weights), std::move(pooled) };
}

Tensor predict(Graph& g, const Tensor& pooled, const ModelParams& params)
{
    return g.sigmoid(g.add(g.dot(params.head_weight, pooled), params.head_bias));
}

Tensor loss(Graph& g, const Tensor& prob, int label)
{
    return g.binary_cross_entropy(prob, label, 1e-12);
}

namespace {

void check_sequence(const std::vector<std::int32_t>& ids, std::size_t limit, std::size_t vocab, const char* level)
{
    if (ids.size() != limit)
        throw ConfigMismatch(std::string(level) + " sequence has length " + std::to_string(ids.size()) + ", config expects "
            + std::to_string(limit));
    for (auto id : ids)
        if (id < 0 || static_cast<std::size_t>(id) >= vocab)
            throw ConfigMismatch(std::string(level) + " id " + std::to_string(id) + " outside vocabulary of " + std::to_string(vocab));
}

} // namespace

Tensor forward(Graph& g, const EncodedPatch& enc, const ModelParams& params, const ModelConfig& config,
    LevelActivations* activations)
{
    const auto& lv = config.levels;
    if (lv.token != params.token.has_value() || lv.sentence != params.sentence.has_value()
        || lv.description != params.description.has_value())
        throw ConfigMismatch("parameter set does not match the enabled levels");

    LevelActivations local;
    LevelActivations& act = activations ? *activations : local;

    std::vector<Tensor> code_levels;
    if (lv.token) {
        check_sequence(enc.token_ids, config.limits.nw, config.token_vocab, "token");
        act.token = mcc_forward(g, g.embedding(params.token->embedding, enc.token_ids), params.token->channels);
        code_levels.push_back(*act.token);
    }
    if (lv.sentence) {
        check_sequence(enc.line_ids, config.limits.ns, config.line_vocab, "line");
        act.sentence = mcc_forward(g, g.embedding(params.sentence->embedding, enc.line_ids), params.sentence->channels);
        code_levels.push_back(*act.sentence);
    }
    if (lv.description) {
        check_sequence(enc.desc_ids, config.limits.nd, config.desc_vocab, "description");
        act.description = mcc_forward(g, g.embedding(params.description->embedding, enc.desc_ids), params.description->channels);
    }

    std::optional<Tensor> pooled;
    if (!code_levels.empty()) {
        act.aligned = semantic_align(g, code_levels, config, *params.pool);
        pooled = act.aligned->pooled;
    }
    act.fused = refine_and_fuse(g, pooled, act.description, params);
    act.attention = hybrid_attention(g, act.fused, params);
    return predict(g, act.attention.pooled, params);
}

Tensor batch_loss(Graph& g, std::span<const EncodedPatch> batch, const ModelParams& params, const ModelConfig& config)
{
    if (batch.empty())
        throw ShapeMismatch("batch_loss: empty batch");
    std::vector<Tensor> losses;
    losses.reserve(batch.size());
    for (const auto& enc : batch)
        losses.push_back(loss(g, forward(g, enc, params, config), enc.label));
    Tensor total = losses.size() == 1 ? losses.front() : g.sum(g.concat(losses, 0));
    return g.scale(total, 1.0 / static_cast<double>(batch.size()));
}

double score(const EncodedPatch& enc, const ModelParams& params, const ModelConfig& config)
{
    Graph g(false);
    return forward(g, enc, params, config).item();
}

} // namespace multisem
