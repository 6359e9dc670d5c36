#include "support.hpp"

#include <multisem/errors.hpp>
#include <multisem/model.hpp>
#include <multisem/synthetic.hpp>

#include <gtest/gtest.h>

#include <cmath>

namespace multisem {
namespace {

using test::random_tensor;
using test::uniform_size;

// Plain nested-vector arithmetic for the straight-line oracles.
using Mat = std::vector<std::vector<double>>;

Mat to_mat(const Tensor& t)
{
    Mat m(t.dim(0), std::vector<double>(t.dim(1)));
    for (std::size_t i = 0; i < t.dim(0); ++i)
        for (std::size_t j = 0; j < t.dim(1); ++j)
            m[i][j] = t.at(i, j);
    return m;
}

Mat conv(const Mat& x, const Tensor& w, const Tensor& b)
{
    const long n = static_cast<long>(x.size()), k = static_cast<long>(w.dim(0));
    const std::size_t din = w.dim(1), dout = w.dim(2);
    Mat y(x.size(), std::vector<double>(dout));
    for (long j = 0; j < n; ++j)
        for (std::size_t o = 0; o < dout; ++o) {
            double acc = b.at(o);
            for (long t = 0; t < k; ++t) {
                const long s = j + t - k / 2;
                if (s < 0 || s >= n)
                    continue;
                for (std::size_t c = 0; c < din; ++c)
                    acc += x[static_cast<std::size_t>(s)][c] * w.data()[(static_cast<std::size_t>(t) * din + c) * dout + o];
            }
            y[static_cast<std::size_t>(j)][o] = acc;
        }
    return y;
}

Mat apply(Mat m, double (*f)(double))
{
    for (auto& row : m)
        for (double& v : row)
            v = f(v);
    return m;
}

Mat plus(Mat a, const Mat& b)
{
    for (std::size_t i = 0; i < a.size(); ++i)
        for (std::size_t j = 0; j < a[i].size(); ++j)
            a[i][j] += b[i][j];
    return a;
}

Mat mul(const Mat& a, const Tensor& w)
{
    Mat y(a.size(), std::vector<double>(w.dim(1), 0.0));
    for (std::size_t i = 0; i < a.size(); ++i)
        for (std::size_t j = 0; j < w.dim(1); ++j)
            for (std::size_t t = 0; t < w.dim(0); ++t)
                y[i][j] += a[i][t] * w.at(t, j);
    return y;
}

double dot(const std::vector<double>& a, const std::vector<double>& b)
{
    double s = 0;
    for (std::size_t i = 0; i < a.size(); ++i)
        s += a[i] * b[i];
    return s;
}

std::vector<double> softmax(const std::vector<double>& x)
{
    double mx = x[0];
    for (double v : x)
        mx = std::max(mx, v);
    std::vector<double> e(x.size());
    double total = 0;
    for (std::size_t i = 0; i < x.size(); ++i)
        total += e[i] = std::exp(x[i] - mx);
    for (double& v : e)
        v /= total;
    return e;
}

double relu(double v) { return v > 0 ? v : 0.0; }
double tanh_(double v) { return std::tanh(v); }

Mat mcc_oracle(const Mat& e, const std::vector<ChannelParams>& channels)
{
    Mat out(e.size());
    for (const auto& ch : channels) {
        Mat x = apply(conv(e, ch.conv.kernel, ch.conv.bias), tanh_);
        for (const auto& b : ch.blocks) {
            Mat x1 = apply(conv(x, b.first.kernel, b.first.bias), tanh_);
            Mat x2 = conv(x1, b.second.kernel, b.second.bias);
            Mat x3 = conv(x, b.skip.kernel, b.skip.bias);
            x = apply(plus(x2, x3), tanh_);
        }
        for (std::size_t i = 0; i < e.size(); ++i)
            out[i].insert(out[i].end(), x[i].begin(), x[i].end());
    }
    return out;
}

void expect_mat_near(const Tensor& got, const Mat& want, double tol)
{
    ASSERT_EQ(got.dim(0), want.size());
    ASSERT_EQ(got.dim(1), want.front().size());
    for (std::size_t i = 0; i < want.size(); ++i)
        for (std::size_t j = 0; j < want[i].size(); ++j)
            EXPECT_NEAR(got.at(i, j), want[i][j], tol) << "(" << i << "," << j << ")";
}

void randomize(ModelParams& params, std::mt19937_64& rng, double scale = 0.5)
{
    for (auto& [name, t] : params.named()) {
        auto v = t.mutable_data();
        for (double& x : v)
            x = std::uniform_real_distribution<double>(-scale, scale)(rng);
    }
}

ModelConfig small_config()
{
    ModelConfig c = toy_model_config();
    c.token_vocab = 9;
    c.line_vocab = 7;
    c.desc_vocab = 6;
    return c;
}

EncodedPatch random_patch(const ModelConfig& c, std::mt19937_64& rng, int label = 1)
{
    auto ids = [&](std::size_t n, std::size_t vocab) {
        std::vector<std::int32_t> v(n);
        for (auto& id : v)
            id = static_cast<std::int32_t>(uniform_size(rng, 1, vocab - 1));
        return v;
    };
    EncodedPatch enc;
    enc.token_ids = ids(c.limits.nw, c.token_vocab);
    enc.line_ids = ids(c.limits.ns, c.line_vocab);
    enc.desc_ids = ids(c.limits.nd, c.desc_vocab);
    enc.token_mask.assign(c.limits.nw, true);
    enc.line_mask.assign(c.limits.ns, true);
    enc.desc_mask.assign(c.limits.nd, true);
    enc.label = label;
    return enc;
}

// ---------------------------------------------------------------- config & params

TEST(ModelConfigTest, Validation)
{
    ModelConfig c;
    EXPECT_NO_THROW(c.validate());
    c.kernel_sizes = { 1, 4 };
    EXPECT_THROW(c.validate(), InvalidConfig);
    c = ModelConfig {};
    c.levels = { false, false, false };
    EXPECT_THROW(c.validate(), InvalidConfig);
    c = ModelConfig {};
    c.pool_window = 0;
    EXPECT_THROW(c.validate(), InvalidConfig);
    EXPECT_THROW(init_params(c, 1), InvalidConfig);
}

TEST(InitParamsTest, DeterministicPerSeed)
{
    const auto c = small_config();
    const auto a = init_params(c, 5), b = init_params(c, 5), other = init_params(c, 6);
    const auto na = a.named(), nb = b.named(), no = other.named();
    bool any_difference = false;
    for (std::size_t i = 0; i < na.size(); ++i) {
        EXPECT_TRUE(std::equal(na[i].second.data().begin(), na[i].second.data().end(), nb[i].second.data().begin())) << na[i].first;
        any_difference |= !std::equal(na[i].second.data().begin(), na[i].second.data().end(), no[i].second.data().begin());
    }
    EXPECT_TRUE(any_difference);
}

TEST(InitParamsTest, BiasesAndPaddingRowsZero)
{
    const auto c = small_config();
    for (const auto& [name, t] : init_params(c, 3).named()) {
        if (name.ends_with("bias"))
            for (double v : t.data())
                EXPECT_EQ(v, 0.0) << name;
        if (name.ends_with("embedding"))
            for (std::size_t j = 0; j < t.dim(1); ++j)
                EXPECT_EQ(t.at(0, j), 0.0) << name;
    }
}

TEST(InitParamsTest, UniformSpreadMatchesFanIn)
{
    ModelConfig c;
    c.kernel_sizes = { 1 };
    c.residual_blocks = 1;
    c.residual_out = 100; // refine.weight rows = fan_in = 100
    c.refine_dim = 10000;
    c.attn_dim = 1;
    c.levels = { true, false, false };
    c.limits = { 1, 1, 1 };
    const auto params = init_params(c, 17);
    const auto w = params.refine_weight.data();
    ASSERT_EQ(w.size(), 1'000'000u);
    double mean = 0, sq = 0, lo = 1, hi = -1;
    for (double v : w) {
        mean += v;
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    mean /= static_cast<double>(w.size());
    for (double v : w)
        sq += (v - mean) * (v - mean);
    const double stddev = std::sqrt(sq / static_cast<double>(w.size()));
    const double expected = 1.0 / (std::sqrt(3.0) * 10.0);
    EXPECT_NEAR(stddev, expected, 0.05 * expected);
    EXPECT_GE(lo, -0.1);
    EXPECT_LE(hi, 0.1);
}

TEST(ParamsTest, LayoutMatchesNamed)
{
    const auto c = small_config();
    const auto layout = parameter_layout(c);
    const auto named = init_params(c, 1).named();
    ASSERT_EQ(layout.size(), named.size());
    std::size_t total = 0;
    for (std::size_t i = 0; i < layout.size(); ++i) {
        EXPECT_EQ(layout[i].first, named[i].first);
        EXPECT_EQ(layout[i].second, named[i].second.shape());
        total += shape_size(layout[i].second);
    }
    EXPECT_EQ(total, init_params(c, 1).parameter_count());
    EXPECT_EQ(named.front().first, "token.embedding");
    EXPECT_EQ(named.back().first, "head.bias");
}

TEST(ParamsTest, CloneIsDeep)
{
    const auto c = small_config();
    auto a = init_params(c, 1);
    auto b = a.clone();
    b.head_bias.mutable_data()[0] = 42;
    EXPECT_EQ(a.head_bias.item(), 0.0);
    EXPECT_FALSE(a.refine_weight.same_storage(b.refine_weight));
}

TEST(ParamsTest, FromNamedChecksNamesAndShapes)
{
    const auto c = small_config();
    auto named = init_params(c, 1).named();
    EXPECT_NO_THROW(params_from_named(c, named));
    auto renamed = named;
    renamed[0].first = "bogus";
    EXPECT_THROW(params_from_named(c, renamed), ConfigMismatch);
    auto reshaped = named;
    reshaped.back().second = Tensor::zeros({ 2 });
    EXPECT_THROW(params_from_named(c, reshaped), ConfigMismatch);
    named.pop_back();
    EXPECT_THROW(params_from_named(c, named), ConfigMismatch);
}

TEST(ParamsTest, PoolScoreSelectsParameters)
{
    auto c = small_config();
    c.pool_score = PoolScore::Linear;
    const auto p = init_params(c, 1);
    ASSERT_TRUE(p.pool);
    EXPECT_FALSE(p.pool->query.defined());
    EXPECT_EQ(p.pool->score_weight.shape(), (Shape { 1, c.feature_width() }));
    EXPECT_EQ(pool_score_from_string("linear"), PoolScore::Linear);
    EXPECT_THROW(pool_score_from_string("cosine"), InvalidConfig);
}

// ---------------------------------------------------------------- MCC

TEST(MccTest, ZeroResidualWeightsGiveZeros)
{
    auto c = small_config();
    std::mt19937_64 rng(31);
    auto params = init_params(c, 2);
    auto& channels = params.token->channels;
    for (auto& ch : channels)
        for (auto& b : ch.blocks)
            for (auto* conv : { &b.first, &b.second, &b.skip }) {
                std::fill(conv->kernel.mutable_data().begin(), conv->kernel.mutable_data().end(), 0.0);
                std::fill(conv->bias.mutable_data().begin(), conv->bias.mutable_data().end(), 0.0);
            }
    Graph g(false);
    auto h = mcc_forward(g, random_tensor({ 5, c.embed_dim }, rng), channels);
    EXPECT_EQ(h.shape(), (Shape { 5, c.feature_width() }));
    for (double v : h.data())
        EXPECT_EQ(v, 0.0);
}

TEST(MccTest, SingleIdentityChannelIsTanh)
{
    std::mt19937_64 rng(32);
    const std::size_t d = 4;
    std::vector<double> eye(d * d, 0.0);
    for (std::size_t i = 0; i < d; ++i)
        eye[i * d + i] = 1;
    ChannelParams ch;
    ch.conv = { Tensor::from({ 1, d, d }, eye), Tensor::zeros({ d }) };
    auto e = random_tensor({ 6, d }, rng, false, -2, 2);
    Graph g(false);
    auto h = mcc_forward(g, e, { ch });
    for (std::size_t i = 0; i < e.size(); ++i)
        EXPECT_EQ(h.data()[i], std::tanh(e.data()[i]));
}

TEST(MccTest, MatchesStraightLineOracle)
{
    auto c = small_config();
    c.kernel_sizes = { 1, 3 };
    c.residual_blocks = 2;
    c.conv_out = 5;
    c.residual_out = 4;
    std::mt19937_64 rng(33);
    auto params = init_params(c, 4);
    randomize(params, rng);
    auto e = random_tensor({ 5, c.embed_dim }, rng);
    Graph g(false);
    auto h = mcc_forward(g, e, params.token->channels);
    expect_mat_near(h, mcc_oracle(to_mat(e), params.token->channels), 1e-12);
}

TEST(MccTest, PreservesLength)
{
    std::mt19937_64 rng(34);
    for (int trial = 0; trial < 100; ++trial) {
        ModelConfig c;
        c.embed_dim = uniform_size(rng, 1, 4);
        c.kernel_sizes.assign(uniform_size(rng, 1, 3), 1);
        for (auto& k : c.kernel_sizes)
            k = 2 * uniform_size(rng, 0, 3) + 1;
        c.conv_out = uniform_size(rng, 1, 4);
        c.residual_out = uniform_size(rng, 1, 4);
        c.residual_blocks = uniform_size(rng, 0, 2);
        c.limits = { 3, 3, 3 };
        auto params = init_params(c, static_cast<std::uint64_t>(trial));
        const auto n = uniform_size(rng, 1, 15);
        Graph g(false);
        auto h = mcc_forward(g, random_tensor({ n, c.embed_dim }, rng), params.token->channels);
        EXPECT_EQ(h.shape(), (Shape { n, c.feature_width() }));
    }
}

// ---------------------------------------------------------------- alignment

TEST(AlignTest, WindowOfOneIsIdentity)
{
    auto c = small_config();
    c.pool_window = 1;
    std::mt19937_64 rng(35);
    auto params = init_params(c, 5);
    auto hw = random_tensor({ c.limits.nw, c.feature_width() }, rng);
    auto hs = random_tensor({ c.limits.ns, c.feature_width() }, rng);
    Graph g(false);
    auto out = semantic_align(g, { hw, hs }, c, *params.pool);
    ASSERT_EQ(out.pooled.dim(0), c.limits.nw + c.limits.ns);
    const auto n_hw = hw.size();
    for (std::size_t i = 0; i < n_hw; ++i)
        EXPECT_EQ(out.pooled.data()[i], hw.data()[i]);
    for (std::size_t i = 0; i < hs.size(); ++i)
        EXPECT_EQ(out.pooled.data()[n_hw + i], hs.data()[i]);
}

TEST(AlignTest, IdenticalRowsPoolEvenly)
{
    auto c = small_config();
    c.pool_window = 2;
    auto params = init_params(c, 6);
    std::mt19937_64 rng(36);
    auto row = test::uniform_values(c.feature_width(), rng);
    std::vector<double> both(row);
    both.insert(both.end(), row.begin(), row.end());
    Graph g(false);
    auto out = semantic_align(g, { Tensor::from({ 2, c.feature_width() }, both) }, c, *params.pool);
    EXPECT_NEAR(out.weights[0].at(0, 0), 0.5, 1e-15);
    EXPECT_NEAR(out.weights[0].at(0, 1), 0.5, 1e-15);
    for (std::size_t j = 0; j < row.size(); ++j)
        EXPECT_NEAR(out.pooled.at(0, j), row[j], 1e-15);
}

TEST(AlignTest, ShortFinalWindow)
{
    auto c = small_config();
    c.limits = { 6, 4, 2 };
    c.pool_window = 3;
    EXPECT_EQ(c.pooled_count(), 4u);
    auto params = init_params(c, 7);
    std::mt19937_64 rng(37);
    Graph g(false);
    auto out = semantic_align(g, { random_tensor({ 6, c.feature_width() }, rng), random_tensor({ 4, c.feature_width() }, rng) }, c, *params.pool);
    EXPECT_EQ(out.pooled.dim(0), 4u);
    ASSERT_EQ(out.weights.size(), 4u);
    EXPECT_EQ(out.weights.back().size(), 1u);
    EXPECT_EQ(out.weights.back().at(0), 1.0);
}

TEST(AlignTest, PooledCountLaw)
{
    auto c = small_config();
    std::mt19937_64 rng(38);
    const auto total = c.limits.nw + c.limits.ns;
    auto hw = random_tensor({ c.limits.nw, c.feature_width() }, rng);
    auto hs = random_tensor({ c.limits.ns, c.feature_width() }, rng);
    for (std::size_t window = 1; window <= total; ++window) {
        c.pool_window = window;
        auto params = init_params(c, window);
        Graph g(false);
        auto out = semantic_align(g, { hw, hs }, c, *params.pool);
        const auto expected = static_cast<std::size_t>(std::ceil(static_cast<double>(total) / static_cast<double>(window)));
        EXPECT_EQ(out.pooled.dim(0), expected) << "g=" << window;
        EXPECT_EQ(c.pooled_count(), expected);
    }
}

TEST(AlignTest, MatchesStraightLineOracle)
{
    for (auto kind : { PoolScore::Dot, PoolScore::Linear }) {
        auto c = small_config();
        c.pool_score = kind;
        c.pool_window = 4;
        c.limits = { 7, 3, 2 };
        std::mt19937_64 rng(39);
        auto params = init_params(c, 8);
        randomize(params, rng, 1.0);
        auto hw = random_tensor({ 7, c.feature_width() }, rng);
        auto hs = random_tensor({ 3, c.feature_width() }, rng);
        Graph g(false);
        auto out = semantic_align(g, { hw, hs }, c, *params.pool);

        Mat x = to_mat(hw);
        for (auto& r : to_mat(hs))
            x.push_back(r);
        Mat want;
        for (std::size_t begin = 0; begin < x.size(); begin += c.pool_window) {
            const auto end = std::min(x.size(), begin + c.pool_window);
            std::vector<double> scores;
            for (std::size_t q = begin; q < end; ++q) {
                if (kind == PoolScore::Dot) {
                    auto qv = mul({ x[q] }, params.pool->query)[0];
                    auto kv = mul({ x[end - 1] }, params.pool->key)[0];
                    scores.push_back(dot(qv, kv) / std::sqrt(static_cast<double>(c.attn_dim)));
                } else {
                    scores.push_back(dot(test::to_vector(params.pool->score_weight.data()), x[q]) + params.pool->score_bias.item());
                }
            }
            const auto beta = softmax(scores);
            std::vector<double> o(x[0].size(), 0.0);
            for (std::size_t q = begin; q < end; ++q)
                for (std::size_t j = 0; j < o.size(); ++j)
                    o[j] += beta[q - begin] * x[q][j];
            want.push_back(o);
        }
        expect_mat_near(out.pooled, want, 1e-12);
    }
}

TEST(AlignTest, PooledRowsAreConvexCombinations)
{
    std::mt19937_64 rng(40);
    for (int trial = 0; trial < 100; ++trial) {
        auto c = small_config();
        c.limits = { uniform_size(rng, 1, 10), uniform_size(rng, 1, 10), 2 };
        c.pool_window = uniform_size(rng, 1, c.limits.nw + c.limits.ns);
        c.pool_score = trial % 2 ? PoolScore::Dot : PoolScore::Linear;
        auto params = init_params(c, static_cast<std::uint64_t>(trial));
        randomize(params, rng, 2.0);
        auto hw = random_tensor({ c.limits.nw, c.feature_width() }, rng, false, -3, 3);
        auto hs = random_tensor({ c.limits.ns, c.feature_width() }, rng, false, -3, 3);
        Graph g(false);
        auto out = semantic_align(g, { hw, hs }, c, *params.pool);
        Mat x = to_mat(hw);
        for (auto& r : to_mat(hs))
            x.push_back(r);
        for (std::size_t p = 0; p < out.pooled.dim(0); ++p) {
            const auto begin = p * c.pool_window, end = std::min(x.size(), begin + c.pool_window);
            double weight_sum = 0;
            for (double w : out.weights[p].data()) {
                EXPECT_GE(w, 0.0);
                weight_sum += w;
            }
            EXPECT_NEAR(weight_sum, 1.0, 1e-12);
            for (std::size_t j = 0; j < x[0].size(); ++j) {
                double lo = x[begin][j], hi = x[begin][j];
                for (auto q = begin; q < end; ++q) {
                    lo = std::min(lo, x[q][j]);
                    hi = std::max(hi, x[q][j]);
                }
                EXPECT_GE(out.pooled.at(p, j), lo - 1e-12);
                EXPECT_LE(out.pooled.at(p, j), hi + 1e-12);
            }
        }
    }
}

// ---------------------------------------------------------------- refine, attention, head

TEST(RefineTest, ZeroMapAndDeadUnits)
{
    auto c = small_config();
    auto params = init_params(c, 9);
    std::mt19937_64 rng(41);
    auto pooled = random_tensor({ 3, c.feature_width() }, rng);
    Graph g(false);
    std::fill(params.refine_weight.mutable_data().begin(), params.refine_weight.mutable_data().end(), 0.0);
    const auto zero_map = refine_and_fuse(g, pooled, std::nullopt, params);
    for (double v : zero_map.data())
        EXPECT_EQ(v, 0.0);

    auto w = params.refine_weight.mutable_data();
    for (double& v : w)
        v = 1e-3;
    std::fill(params.refine_bias.mutable_data().begin(), params.refine_bias.mutable_data().end(), -100.0);
    const auto dead = refine_and_fuse(g, pooled, std::nullopt, params);
    for (double v : dead.data())
        EXPECT_EQ(v, 0.0);
}

TEST(RefineTest, FusedRowsInOrder)
{
    auto c = small_config();
    std::mt19937_64 rng(42);
    auto params = init_params(c, 10);
    randomize(params, rng);
    auto pooled = random_tensor({ 3, c.feature_width() }, rng);
    auto desc = random_tensor({ 2, c.feature_width() }, rng);
    Graph g(false);
    auto fused = refine_and_fuse(g, pooled, desc, params);
    Mat rows = to_mat(pooled);
    for (auto& r : to_mat(desc))
        rows.push_back(r);
    Mat want = mul(rows, params.refine_weight);
    for (auto& r : want)
        for (std::size_t j = 0; j < r.size(); ++j)
            r[j] = relu(r[j] + params.refine_bias.at(j));
    expect_mat_near(fused, want, 1e-12);
    EXPECT_EQ(fused.dim(0), 5u);
}

TEST(AttentionTest, SingleRow)
{
    auto c = small_config();
    std::mt19937_64 rng(43);
    auto params = init_params(c, 11);
    auto l = random_tensor({ 1, c.refine_dim }, rng);
    Graph g(false);
    auto out = hybrid_attention(g, l, params);
    EXPECT_EQ(out.weights.item(), 1.0);
    const auto v = mul(to_mat(l), params.attn_value)[0];
    for (std::size_t j = 0; j < v.size(); ++j) {
        EXPECT_NEAR(out.global.at(0, j), v[j], 1e-15);
        EXPECT_EQ(out.pooled.at(j), out.global.at(0, j));
    }
}

TEST(AttentionTest, IdenticalRows)
{
    auto c = small_config();
    std::mt19937_64 rng(44);
    auto params = init_params(c, 12);
    auto row = test::uniform_values(c.refine_dim, rng);
    std::vector<double> rows;
    for (int i = 0; i < 4; ++i)
        rows.insert(rows.end(), row.begin(), row.end());
    Graph g(false);
    auto out = hybrid_attention(g, Tensor::from({ 4, c.refine_dim }, rows), params);
    for (std::size_t i = 1; i < 4; ++i)
        for (std::size_t j = 0; j < c.attn_dim; ++j)
            EXPECT_NEAR(out.global.at(i, j), out.global.at(0, j), 1e-15);
    for (std::size_t j = 0; j < c.attn_dim; ++j)
        EXPECT_NEAR(out.pooled.at(j), out.global.at(0, j), 1e-15);
}

TEST(AttentionTest, MatchesTwoLoopOracle)
{
    auto c = small_config();
    std::mt19937_64 rng(45);
    for (int trial = 0; trial < 100; ++trial) {
        auto params = init_params(c, static_cast<std::uint64_t>(trial));
        randomize(params, rng, 1.0);
        const auto n = trial == 0 ? 4 : uniform_size(rng, 1, 9);
        auto l = random_tensor({ n, c.refine_dim }, rng);
        Graph g(false);
        auto out = hybrid_attention(g, l, params);

        const Mat lm = to_mat(l);
        const Mat q = mul(lm, params.attn_query), k = mul(lm, params.attn_key), v = mul(lm, params.attn_value);
        Mat want(n, std::vector<double>(c.attn_dim, 0.0));
        for (std::size_t i = 0; i < n; ++i) {
            std::vector<double> s(n);
            for (std::size_t j = 0; j < n; ++j)
                s[j] = dot(q[i], k[j]) / std::sqrt(static_cast<double>(c.attn_dim));
            const auto beta = softmax(s);
            double row_sum = 0;
            for (std::size_t j = 0; j < n; ++j) {
                row_sum += out.weights.at(i, j);
                for (std::size_t t = 0; t < c.attn_dim; ++t)
                    want[i][t] += beta[j] * v[j][t];
            }
            EXPECT_NEAR(row_sum, 1.0, 1e-12);
        }
        expect_mat_near(out.global, want, 1e-12);
    }
}

TEST(PredictTest, HeadValues)
{
    auto c = small_config();
    auto params = init_params(c, 13);
    std::mt19937_64 rng(46);
    auto d = random_tensor({ c.attn_dim }, rng);
    Graph g(false);
    std::fill(params.head_weight.mutable_data().begin(), params.head_weight.mutable_data().end(), 0.0);
    EXPECT_EQ(predict(g, d, params).item(), 0.5);

    params.head_bias.mutable_data()[0] = 20;
    EXPECT_GT(predict(g, d, params).item(), 0.999999);

    randomize(params, rng);
    const double z = dot(test::to_vector(params.head_weight.data()), test::to_vector(d.data())) + params.head_bias.item();
    EXPECT_NEAR(predict(g, d, params).item(), 1.0 / (1.0 + std::exp(-z)), 1e-15);
}

TEST(LossTest, ClosedForms)
{
    Graph g(false);
    EXPECT_NEAR(loss(g, Tensor::scalar(0.5), 1).item(), 0.693147180559945, 1e-12);
    EXPECT_NEAR(loss(g, Tensor::scalar(0.9), 0).item(), 2.302585092994046, 1e-12);
    EXPECT_LE(loss(g, Tensor::scalar(1.0), 1).item(), 1e-11);
    EXPECT_GE(loss(g, Tensor::scalar(0.3), 1).item(), 0.0);
}

// ---------------------------------------------------------------- forward

TEST(ForwardTest, AllPaddingWithZeroHead)
{
    auto c = small_config();
    auto params = init_params(c, 14);
    std::fill(params.head_weight.mutable_data().begin(), params.head_weight.mutable_data().end(), 0.0);
    EncodedPatch enc;
    enc.token_ids.assign(c.limits.nw, 0);
    enc.line_ids.assign(c.limits.ns, 0);
    enc.desc_ids.assign(c.limits.nd, 0);
    EXPECT_EQ(score(enc, params, c), 0.5);
}

TEST(ForwardTest, ActivationShapes)
{
    auto c = small_config();
    std::mt19937_64 rng(47);
    auto params = init_params(c, 15);
    Graph g(false);
    LevelActivations act;
    auto y = forward(g, random_patch(c, rng), params, c, &act);
    EXPECT_GT(y.item(), 0.0);
    EXPECT_LT(y.item(), 1.0);
    EXPECT_EQ(act.token->shape(), (Shape { c.limits.nw, c.feature_width() }));
    EXPECT_EQ(act.sentence->shape(), (Shape { c.limits.ns, c.feature_width() }));
    EXPECT_EQ(act.description->shape(), (Shape { c.limits.nd, c.feature_width() }));
    EXPECT_EQ(act.aligned->pooled.dim(0), c.pooled_count());
    EXPECT_EQ(act.fused.dim(0), c.pooled_count() + c.limits.nd);
    EXPECT_EQ(act.attention.global.shape(), (Shape { c.fused_length(), c.attn_dim }));
    EXPECT_EQ(act.attention.pooled.shape(), (Shape { c.attn_dim }));
}

TEST(ForwardTest, FusionLengthLaw)
{
    std::mt19937_64 rng(48);
    for (int trial = 0; trial < 100; ++trial) {
        auto c = small_config();
        c.limits = { uniform_size(rng, 1, 8), uniform_size(rng, 1, 8), uniform_size(rng, 1, 8) };
        c.pool_window = uniform_size(rng, 1, c.limits.nw + c.limits.ns);
        c.levels.description = trial % 3 != 0;
        auto params = init_params(c, static_cast<std::uint64_t>(trial));
        Graph g(false);
        LevelActivations act;
        forward(g, random_patch(c, rng), params, c, &act);
        const auto p = (c.limits.nw + c.limits.ns + c.pool_window - 1) / c.pool_window;
        EXPECT_EQ(act.fused.dim(0), p + (c.levels.description ? c.limits.nd : 0));
    }
}

TEST(ForwardTest, AblationsDropParametersAndChangeOutput)
{
    const auto full = small_config();
    std::mt19937_64 rng(49);
    const auto enc = random_patch(full, rng);
    const auto full_params = init_params(full, 16);
    const double full_score = score(enc, full_params, full);
    for (int level = 0; level < 3; ++level) {
        auto c = full;
        (level == 0 ? c.levels.token : level == 1 ? c.levels.sentence : c.levels.description) = false;
        const auto params = init_params(c, 16);
        EXPECT_LT(params.parameter_count(), full_params.parameter_count());
        EXPECT_NE(score(enc, params, c), full_score);
        for (const auto& [name, t] : params.named())
            EXPECT_FALSE(name.starts_with(level == 0 ? "token." : level == 1 ? "sentence." : "description.")) << name;
    }
    auto desc_only = full;
    desc_only.levels = { false, false, true };
    const auto params = init_params(desc_only, 1);
    EXPECT_FALSE(params.pool.has_value());
    EXPECT_NO_THROW(score(enc, params, desc_only));
}

TEST(ForwardTest, RejectsInconsistentInputs)
{
    auto c = small_config();
    std::mt19937_64 rng(50);
    auto params = init_params(c, 17);
    auto enc = random_patch(c, rng);
    auto short_enc = enc;
    short_enc.token_ids.pop_back();
    EXPECT_THROW(score(short_enc, params, c), ConfigMismatch);
    auto bad_id = enc;
    bad_id.line_ids[0] = static_cast<std::int32_t>(c.line_vocab);
    EXPECT_THROW(score(bad_id, params, c), ConfigMismatch);
    auto other = c;
    other.levels.sentence = false;
    EXPECT_THROW(score(enc, params, other), ConfigMismatch);
}

// ---------------------------------------------------------------- end-to-end gradient

struct GradCase {
    const char* name;
    LevelSwitches levels;
    PoolScore pool;
};

class ModelGradientTest : public ::testing::TestWithParam<GradCase> {};

TEST_P(ModelGradientTest, MatchesFiniteDifferences)
{
    auto c = toy_model_config();
    c.levels = GetParam().levels;
    c.pool_score = GetParam().pool;
    const auto records = synthetic_corpus(1, 1, 3);
    const auto vocabs = build_vocabularies(records, 1);
    c.token_vocab = vocabs.token.size();
    c.line_vocab = vocabs.line.size();
    c.desc_vocab = vocabs.desc.size();
    std::vector<EncodedPatch> batch;
    for (const auto& r : records)
        batch.push_back(encode_patch(r, parse_unified_diff(r.diff_text), vocabs.token, vocabs.line, vocabs.desc, c.limits));
    const auto params = probe_params(c, 3);
    const auto result = finite_diff_check([&](Graph& g) { return batch_loss(g, batch, params, c); }, params.named(), 1e-5);
    EXPECT_LT(result.max_relative_error, 1e-4) << result.worst_param;
    EXPECT_EQ(result.per_param.size(), params.named().size());
}

INSTANTIATE_TEST_SUITE_P(Variants, ModelGradientTest,
    ::testing::Values(GradCase { "full", { true, true, true }, PoolScore::Dot },
        GradCase { "no_token", { false, true, true }, PoolScore::Dot },
        GradCase { "no_sentence", { true, false, true }, PoolScore::Dot },
        GradCase { "no_description", { true, true, false }, PoolScore::Dot },
        GradCase { "linear_pool", { true, true, true }, PoolScore::Linear }),
    [](const auto& info) { return std::string(info.param.name); });

TEST(ModelGradientTest, EmbeddingPaddingRowStaysZero)
{
    auto c = small_config();
    std::mt19937_64 rng(51);
    auto params = init_params(c, 18);
    auto enc = random_patch(c, rng);
    enc.token_ids.back() = 0;
    enc.desc_ids.front() = 0;
    params.zero_grad();
    Graph g;
    g.backward(batch_loss(g, std::span(&enc, 1), params, c));
    for (const auto* level : { &params.token, &params.sentence, &params.description }) {
        const auto& table = (*level)->embedding;
        ASSERT_TRUE(table.has_grad());
        for (std::size_t j = 0; j < c.embed_dim; ++j)
            EXPECT_EQ(table.grad()[j], 0.0);
    }
}

} // namespace
} // namespace multisem
