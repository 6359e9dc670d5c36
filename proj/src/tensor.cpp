#include <multisem/errors.hpp>
#include <multisem/tensor.hpp>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace multisem {

std::string shape_to_string(const Shape& shape)
{
    std::ostringstream out;
    out << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i)
            out << " x ";
        out << shape[i];
    }
    out << ']';
    return out.str();
}

std::size_t shape_size(const Shape& shape)
{
    return std::accumulate(shape.begin(), shape.end(), std::size_t { 1 }, std::multiplies<> {});
}

// ---------------------------------------------------------------- Tensor

Tensor Tensor::zeros(Shape shape, bool requires_grad)
{
    auto n = shape_size(shape);
    return from(std::move(shape), std::vector<double>(n, 0.0), requires_grad);
}

Tensor Tensor::from(Shape shape, std::vector<double> values, bool requires_grad)
{
    if (shape.empty() || shape.size() > 3)
        throw ShapeMismatch("tensor rank must be 1..3, got " + std::to_string(shape.size()));
    if (shape_size(shape) != values.size())
        throw ShapeMismatch("shape " + shape_to_string(shape) + " does not hold " + std::to_string(values.size()) + " values");
    auto impl = std::make_shared<Impl>();
    impl->shape = std::move(shape);
    impl->data = std::move(values);
    impl->requires_grad = requires_grad;
    return Tensor(std::move(impl));
}

Tensor Tensor::scalar(double value, bool requires_grad)
{
    return from({ 1 }, { value }, requires_grad);
}

const Shape& Tensor::shape() const
{
    if (!m_impl)
        throw DetachedTensor("use of an undefined tensor");
    return m_impl->shape;
}

std::size_t Tensor::size() const { return m_impl ? m_impl->data.size() : 0; }

std::span<const double> Tensor::data() const { return m_impl->data; }
std::span<double> Tensor::mutable_data() { return m_impl->data; }

double Tensor::item() const
{
    if (size() != 1)
        throw NotScalar("item() on tensor of shape " + shape_to_string(shape()));
    return m_impl->data[0];
}

bool Tensor::requires_grad() const { return m_impl && m_impl->requires_grad; }
bool Tensor::has_grad() const { return m_impl && !m_impl->grad.empty(); }
std::span<const double> Tensor::grad() const { return m_impl->grad; }

std::span<double> Tensor::mutable_grad()
{
    if (m_impl->grad.size() != m_impl->data.size())
        m_impl->grad.assign(m_impl->data.size(), 0.0);
    return m_impl->grad;
}

void Tensor::zero_grad()
{
    if (m_impl)
        std::fill(m_impl->grad.begin(), m_impl->grad.end(), 0.0);
}

Tensor Tensor::clone() const
{
    return from(m_impl->shape, m_impl->data, m_impl->requires_grad);
}

// ---------------------------------------------------------------- Graph internals

namespace {

// Message expression is only evaluated on failure.
#define REQUIRE_SHAPE(condition, message)   \
    do {                                    \
        if (!(condition))                   \
            throw ShapeMismatch(message);   \
    } while (0)

void require_matrix(const Tensor& t, const char* op)
{
    REQUIRE_SHAPE(t.rank() == 2, std::string(op) + ": expected a matrix, got " + shape_to_string(t.shape()));
}

void require_vector(const Tensor& t, const char* op)
{
    REQUIRE_SHAPE(t.rank() == 1, std::string(op) + ": expected a vector, got " + shape_to_string(t.shape()));
}

double stable_sigmoid(double x)
{
    if (x >= 0.0)
        return 1.0 / (1.0 + std::exp(-x));
    double e = std::exp(x);
    return e / (1.0 + e);
}

} // namespace

std::vector<double>& Graph::grad_of(const ImplPtr& impl)
{
    if (impl->grad.size() != impl->data.size())
        impl->grad.assign(impl->data.size(), 0.0);
    return impl->grad;
}

Tensor Graph::make_output(Shape shape, std::vector<double> values, std::initializer_list<const Tensor*> inputs)
{
    bool needs_grad = false;
    if (m_record) {
        for (const Tensor* t : inputs)
            needs_grad = needs_grad || t->requires_grad();
    }
    Tensor out = Tensor::from(std::move(shape), std::move(values), needs_grad);
    if (needs_grad)
        out.m_impl->producer = this;
    return out;
}

void Graph::record(const Tensor& output, std::function<void()> rule)
{
    if (!output.requires_grad())
        return;
    grad_of(output.m_impl);
    m_nodes.push_back(std::move(rule));
}

// ---------------------------------------------------------------- ops

Tensor Graph::conv1d_same(const Tensor& input, const Tensor& kernel, const Tensor& bias)
{
    require_matrix(input, "conv1d_same");
    REQUIRE_SHAPE(kernel.rank() == 3, "conv1d_same: kernel must be [k x d_in x d_out], got " + shape_to_string(kernel.shape()));
    require_vector(bias, "conv1d_same");
    const std::size_t n = input.dim(0), din = input.dim(1);
    const std::size_t k = kernel.dim(0), dout = kernel.dim(2);
    REQUIRE_SHAPE(kernel.dim(1) == din, "conv1d_same: kernel in-channels " + std::to_string(kernel.dim(1)) + " != input width " + std::to_string(din));
    REQUIRE_SHAPE(bias.dim(0) == dout, "conv1d_same: bias length != out-channels");
    if (k % 2 == 0)
        throw EvenKernel("conv1d_same: kernel size " + std::to_string(k) + " is even");

    const auto half = static_cast<std::ptrdiff_t>(k / 2);
    const auto x = input.data();
    const auto w = kernel.data();
    const auto b = bias.data();
    std::vector<double> out(n * dout);
    for (std::size_t j = 0; j < n; ++j) {
        double* row = out.data() + j * dout;
        std::copy(b.begin(), b.end(), row);
        for (std::size_t t = 0; t < k; ++t) {
            auto src = static_cast<std::ptrdiff_t>(j) + static_cast<std::ptrdiff_t>(t) - half;
            if (src < 0 || src >= static_cast<std::ptrdiff_t>(n))
                continue;
            const double* xin = x.data() + static_cast<std::size_t>(src) * din;
            const double* wt = w.data() + t * din * dout;
            for (std::size_t c = 0; c < din; ++c) {
                const double xv = xin[c];
                const double* wc = wt + c * dout;
                for (std::size_t o = 0; o < dout; ++o)
                    row[o] += xv * wc[o];
            }
        }
    }

    Tensor result = make_output({ n, dout }, std::move(out), { &input, &kernel, &bias });
    record(result, [in = input.m_impl, ker = kernel.m_impl, bi = bias.m_impl, res = result.m_impl, n, din, dout, k, half] {
        const auto& gout = res->grad;
        const auto& x = in->data;
        const auto& w = ker->data;
        if (bi->requires_grad) {
            auto& gb = grad_of(bi);
            for (std::size_t j = 0; j < n; ++j)
                for (std::size_t o = 0; o < dout; ++o)
                    gb[o] += gout[j * dout + o];
        }
        double* gin = in->requires_grad ? grad_of(in).data() : nullptr;
        double* gw = ker->requires_grad ? grad_of(ker).data() : nullptr;
        for (std::size_t j = 0; j < n; ++j) {
            const double* g = gout.data() + j * dout;
            for (std::size_t t = 0; t < k; ++t) {
                auto src = static_cast<std::ptrdiff_t>(j) + static_cast<std::ptrdiff_t>(t) - half;
                if (src < 0 || src >= static_cast<std::ptrdiff_t>(n))
                    continue;
                const auto s = static_cast<std::size_t>(src);
                for (std::size_t c = 0; c < din; ++c) {
                    const double* wc = w.data() + (t * din + c) * dout;
                    if (gin) {
                        double acc = 0.0;
                        for (std::size_t o = 0; o < dout; ++o)
                            acc += g[o] * wc[o];
                        gin[s * din + c] += acc;
                    }
                    if (gw) {
                        const double xv = x[s * din + c];
                        double* gwc = gw + (t * din + c) * dout;
                        for (std::size_t o = 0; o < dout; ++o)
                            gwc[o] += xv * g[o];
                    }
                }
            }
        }
    });
    return result;
}

Tensor Graph::activate(Activation kind, const Tensor& x)
{
    const auto in = x.data();
    std::vector<double> out(in.size());
    switch (kind) {
    case Activation::Tanh:
        std::transform(in.begin(), in.end(), out.begin(), [](double v) { return std::tanh(v); });
        break;
    case Activation::Relu:
        std::transform(in.begin(), in.end(), out.begin(), [](double v) { return v > 0.0 ? v : 0.0; });
        break;
    case Activation::Sigmoid:
        std::transform(in.begin(), in.end(), out.begin(), stable_sigmoid);
        break;
    }
    Tensor result = make_output(x.shape(), std::move(out), { &x });
    record(result, [kind, in = x.m_impl, res = result.m_impl] {
        if (!in->requires_grad)
            return;
        auto& gin = grad_of(in);
        const auto& y = res->data;
        const auto& g = res->grad;
        for (std::size_t i = 0; i < g.size(); ++i) {
            double d = 0.0;
            switch (kind) {
            case Activation::Tanh:
                d = 1.0 - y[i] * y[i];
                break;
            case Activation::Relu:
                d = in->data[i] > 0.0 ? 1.0 : 0.0;
                break;
            case Activation::Sigmoid:
                d = y[i] * (1.0 - y[i]);
                break;
            }
            gin[i] += g[i] * d;
        }
    });
    return result;
}

Tensor Graph::softmax(const Tensor& x)
{
    REQUIRE_SHAPE(x.rank() == 1 || x.rank() == 2, "softmax: expected a vector or matrix, got " + shape_to_string(x.shape()));
    const std::size_t cols = x.rank() == 1 ? x.dim(0) : x.dim(1);
    const std::size_t rows = x.size() / std::max<std::size_t>(cols, 1);
    REQUIRE_SHAPE(cols > 0, "softmax: empty input");
    const auto in = x.data();
    std::vector<double> out(in.size());
    for (std::size_t r = 0; r < rows; ++r) {
        const double* xr = in.data() + r * cols;
        double* yr = out.data() + r * cols;
        const double top = *std::max_element(xr, xr + cols);
        double total = 0.0;
        for (std::size_t c = 0; c < cols; ++c) {
            yr[c] = std::exp(xr[c] - top);
            total += yr[c];
        }
        for (std::size_t c = 0; c < cols; ++c)
            yr[c] /= total;
    }
    Tensor result = make_output(x.shape(), std::move(out), { &x });
    record(result, [in = x.m_impl, res = result.m_impl, rows, cols] {
        if (!in->requires_grad)
            return;
        auto& gin = grad_of(in);
        for (std::size_t r = 0; r < rows; ++r) {
            const double* y = res->data.data() + r * cols;
            const double* g = res->grad.data() + r * cols;
            double inner = 0.0;
            for (std::size_t c = 0; c < cols; ++c)
                inner += g[c] * y[c];
            for (std::size_t c = 0; c < cols; ++c)
                gin[r * cols + c] += y[c] * (g[c] - inner);
        }
    });
    return result;
}

Tensor Graph::matmul(const Tensor& a, const Tensor& b)
{
    require_matrix(a, "matmul");
    require_matrix(b, "matmul");
    const std::size_t p = a.dim(0), q = a.dim(1), r = b.dim(1);
    REQUIRE_SHAPE(b.dim(0) == q, "matmul: " + shape_to_string(a.shape()) + " . " + shape_to_string(b.shape()));
    const auto av = a.data();
    const auto bv = b.data();
    std::vector<double> out(p * r, 0.0);
    for (std::size_t i = 0; i < p; ++i) {
        double* row = out.data() + i * r;
        for (std::size_t k = 0; k < q; ++k) {
            const double s = av[i * q + k];
            const double* brow = bv.data() + k * r;
            for (std::size_t j = 0; j < r; ++j)
                row[j] += s * brow[j];
        }
    }
    Tensor result = make_output({ p, r }, std::move(out), { &a, &b });
    record(result, [ai = a.m_impl, bi = b.m_impl, res = result.m_impl, p, q, r] {
        const auto& g = res->grad;
        if (ai->requires_grad) {
            auto& ga = grad_of(ai);
            for (std::size_t i = 0; i < p; ++i)
                for (std::size_t k = 0; k < q; ++k) {
                    double acc = 0.0;
                    const double* brow = bi->data.data() + k * r;
                    const double* grow = g.data() + i * r;
                    for (std::size_t j = 0; j < r; ++j)
                        acc += grow[j] * brow[j];
                    ga[i * q + k] += acc;
                }
        }
        if (bi->requires_grad) {
            auto& gb = grad_of(bi);
            for (std::size_t i = 0; i < p; ++i)
                for (std::size_t k = 0; k < q; ++k) {
                    const double s = ai->data[i * q + k];
                    const double* grow = g.data() + i * r;
                    double* gbrow = gb.data() + k * r;
                    for (std::size_t j = 0; j < r; ++j)
                        gbrow[j] += s * grow[j];
                }
        }
    });
    return result;
}

Tensor Graph::matmul_transposed(const Tensor& a, const Tensor& b)
{
    require_matrix(a, "matmul_transposed");
    require_matrix(b, "matmul_transposed");
    const std::size_t p = a.dim(0), q = a.dim(1), r = b.dim(0);
    REQUIRE_SHAPE(b.dim(1) == q, "matmul_transposed: " + shape_to_string(a.shape()) + " . " + shape_to_string(b.shape()) + "^T");
    const auto av = a.data();
    const auto bv = b.data();
    std::vector<double> out(p * r, 0.0);
    for (std::size_t i = 0; i < p; ++i)
        for (std::size_t j = 0; j < r; ++j) {
            double acc = 0.0;
            for (std::size_t k = 0; k < q; ++k)
                acc += av[i * q + k] * bv[j * q + k];
            out[i * r + j] = acc;
        }
    Tensor result = make_output({ p, r }, std::move(out), { &a, &b });
    record(result, [ai = a.m_impl, bi = b.m_impl, res = result.m_impl, p, q, r] {
        const auto& g = res->grad;
        double* ga = ai->requires_grad ? grad_of(ai).data() : nullptr;
        double* gb = bi->requires_grad ? grad_of(bi).data() : nullptr;
        for (std::size_t i = 0; i < p; ++i)
            for (std::size_t j = 0; j < r; ++j) {
                const double gij = g[i * r + j];
                if (ga) {
                    const double* brow = bi->data.data() + j * q;
                    for (std::size_t k = 0; k < q; ++k)
                        ga[i * q + k] += gij * brow[k];
                }
                if (gb) {
                    const double* arow = ai->data.data() + i * q;
                    for (std::size_t k = 0; k < q; ++k)
                        gb[j * q + k] += gij * arow[k];
                }
            }
    });
    return result;
}

Tensor Graph::dot(const Tensor& a, const Tensor& b)
{
    require_vector(a, "dot");
    require_vector(b, "dot");
    REQUIRE_SHAPE(a.dim(0) == b.dim(0), "dot: length mismatch " + shape_to_string(a.shape()) + " vs " + shape_to_string(b.shape()));
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i)
        acc += a.at(i) * b.at(i);
    Tensor result = make_output({ 1 }, { acc }, { &a, &b });
    record(result, [ai = a.m_impl, bi = b.m_impl, res = result.m_impl] {
        const double g = res->grad[0];
        if (ai->requires_grad) {
            auto& ga = grad_of(ai);
            for (std::size_t i = 0; i < ga.size(); ++i)
                ga[i] += g * bi->data[i];
        }
        if (bi->requires_grad) {
            auto& gb = grad_of(bi);
            for (std::size_t i = 0; i < gb.size(); ++i)
                gb[i] += g * ai->data[i];
        }
    });
    return result;
}

Tensor Graph::add(const Tensor& a, const Tensor& b)
{
    REQUIRE_SHAPE(a.shape() == b.shape(), "add: " + shape_to_string(a.shape()) + " vs " + shape_to_string(b.shape()));
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i)
        out[i] = a.at(i) + b.at(i);
    Tensor result = make_output(a.shape(), std::move(out), { &a, &b });
    record(result, [ai = a.m_impl, bi = b.m_impl, res = result.m_impl] {
        for (const auto& side : { ai, bi }) {
            if (!side->requires_grad)
                continue;
            auto& gs = grad_of(side);
            for (std::size_t i = 0; i < gs.size(); ++i)
                gs[i] += res->grad[i];
        }
    });
    return result;
}

Tensor Graph::add_row_bias(const Tensor& x, const Tensor& bias)
{
    require_matrix(x, "add_row_bias");
    require_vector(bias, "add_row_bias");
    const std::size_t rows = x.dim(0), cols = x.dim(1);
    REQUIRE_SHAPE(bias.dim(0) == cols, "add_row_bias: bias length " + std::to_string(bias.dim(0)) + " != columns " + std::to_string(cols));
    std::vector<double> out(x.size());
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c)
            out[r * cols + c] = x.at(r * cols + c) + bias.at(c);
    Tensor result = make_output(x.shape(), std::move(out), { &x, &bias });
    record(result, [xi = x.m_impl, bi = bias.m_impl, res = result.m_impl, rows, cols] {
        const auto& g = res->grad;
        if (xi->requires_grad) {
            auto& gx = grad_of(xi);
            for (std::size_t i = 0; i < gx.size(); ++i)
                gx[i] += g[i];
        }
        if (bi->requires_grad) {
            auto& gb = grad_of(bi);
            for (std::size_t r = 0; r < rows; ++r)
                for (std::size_t c = 0; c < cols; ++c)
                    gb[c] += g[r * cols + c];
        }
    });
    return result;
}

Tensor Graph::add_scalar(const Tensor& x, const Tensor& s)
{
    REQUIRE_SHAPE(s.size() == 1, "add_scalar: expected a [1] tensor, got " + shape_to_string(s.shape()));
    const double v = s.at(0);
    std::vector<double> out(x.size());
    for (std::size_t i = 0; i < out.size(); ++i)
        out[i] = x.at(i) + v;
    Tensor result = make_output(x.shape(), std::move(out), { &x, &s });
    record(result, [xi = x.m_impl, si = s.m_impl, res = result.m_impl] {
        const auto& g = res->grad;
        if (xi->requires_grad) {
            auto& gx = grad_of(xi);
            for (std::size_t i = 0; i < gx.size(); ++i)
                gx[i] += g[i];
        }
        if (si->requires_grad) {
            double total = 0.0;
            for (double v : g)
                total += v;
            grad_of(si)[0] += total;
        }
    });
    return result;
}

Tensor Graph::scale(const Tensor& x, double factor)
{
    std::vector<double> out(x.size());
    for (std::size_t i = 0; i < out.size(); ++i)
        out[i] = x.at(i) * factor;
    Tensor result = make_output(x.shape(), std::move(out), { &x });
    record(result, [xi = x.m_impl, res = result.m_impl, factor] {
        if (!xi->requires_grad)
            return;
        auto& gx = grad_of(xi);
        for (std::size_t i = 0; i < gx.size(); ++i)
            gx[i] += res->grad[i] * factor;
    });
    return result;
}

Tensor Graph::concat(std::span<const Tensor> parts, std::size_t axis)
{
    REQUIRE_SHAPE(!parts.empty(), "concat: no operands");
    const std::size_t rank = parts[0].rank();
    REQUIRE_SHAPE(rank == 1 || rank == 2, "concat: operands must be vectors or matrices");
    REQUIRE_SHAPE(axis < rank, "concat: axis " + std::to_string(axis) + " out of range");
    for (const auto& p : parts) {
        REQUIRE_SHAPE(p.rank() == rank, "concat: rank mismatch");
        if (rank == 2 && axis == 0)
            REQUIRE_SHAPE(p.dim(1) == parts[0].dim(1), "concat: column mismatch " + shape_to_string(p.shape()) + " vs " + shape_to_string(parts[0].shape()));
        if (rank == 2 && axis == 1)
            REQUIRE_SHAPE(p.dim(0) == parts[0].dim(0), "concat: row mismatch " + shape_to_string(p.shape()) + " vs " + shape_to_string(parts[0].shape()));
    }

    Shape shape = parts[0].shape();
    shape[axis] = 0;
    for (const auto& p : parts)
        shape[axis] += p.dim(axis);

    // Along axis 0 (or for vectors) operands are contiguous blocks; along axis 1
    // each output row interleaves one row slice of every operand.
    const std::size_t rows = (rank == 2 && axis == 1) ? shape[0] : 1;
    const std::size_t out_width = shape_size(shape) / rows;
    std::vector<double> out(shape_size(shape));
    std::vector<std::size_t> widths;
    std::size_t offset = 0;
    for (const auto& p : parts) {
        const std::size_t w = p.size() / rows;
        widths.push_back(w);
        for (std::size_t r = 0; r < rows; ++r)
            std::copy_n(p.data().data() + r * w, w, out.data() + r * out_width + offset);
        offset += w;
    }

    std::vector<ImplPtr> inputs;
    bool needs_grad = false;
    for (const auto& p : parts) {
        inputs.push_back(p.m_impl);
        needs_grad = needs_grad || p.requires_grad();
    }
    Tensor result = Tensor::from(std::move(shape), std::move(out), m_record && needs_grad);
    if (result.requires_grad())
        result.m_impl->producer = this;
    record(result, [inputs = std::move(inputs), widths = std::move(widths), res = result.m_impl, rows, out_width] {
        std::size_t offset = 0;
        for (std::size_t i = 0; i < inputs.size(); ++i) {
            const std::size_t w = widths[i];
            if (inputs[i]->requires_grad) {
                auto& gi = grad_of(inputs[i]);
                for (std::size_t r = 0; r < rows; ++r)
                    for (std::size_t c = 0; c < w; ++c)
                        gi[r * w + c] += res->grad[r * out_width + offset + c];
            }
            offset += w;
        }
    });
    return result;
}

Tensor Graph::mean(const Tensor& x, std::size_t axis)
{
    require_matrix(x, "mean");
    REQUIRE_SHAPE(axis < 2, "mean: axis out of range");
    const std::size_t rows = x.dim(0), cols = x.dim(1);
    REQUIRE_SHAPE(rows > 0 && cols > 0, "mean: empty input");
    const std::size_t out_len = axis == 0 ? cols : rows;
    const double inv = 1.0 / static_cast<double>(axis == 0 ? rows : cols);
    std::vector<double> out(out_len, 0.0);
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c)
            out[axis == 0 ? c : r] += x.at(r * cols + c);
    for (double& v : out)
        v *= inv;
    Tensor result = make_output({ out_len }, std::move(out), { &x });
    record(result, [xi = x.m_impl, res = result.m_impl, rows, cols, axis, inv] {
        if (!xi->requires_grad)
            return;
        auto& gx = grad_of(xi);
        for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t c = 0; c < cols; ++c)
                gx[r * cols + c] += res->grad[axis == 0 ? c : r] * inv;
    });
    return result;
}

Tensor Graph::sum(const Tensor& x)
{
    double total = 0.0;
    for (double v : x.data())
        total += v;
    Tensor result = make_output({ 1 }, { total }, { &x });
    record(result, [xi = x.m_impl, res = result.m_impl] {
        if (!xi->requires_grad)
            return;
        auto& gx = grad_of(xi);
        for (double& g : gx)
            g += res->grad[0];
    });
    return result;
}

Tensor Graph::slice_rows(const Tensor& x, std::size_t begin, std::size_t end)
{
    require_matrix(x, "slice_rows");
    REQUIRE_SHAPE(begin < end && end <= x.dim(0), "slice_rows: range [" + std::to_string(begin) + ", " + std::to_string(end) + ") outside " + shape_to_string(x.shape()));
    const std::size_t cols = x.dim(1);
    std::vector<double> out(x.data().begin() + static_cast<std::ptrdiff_t>(begin * cols),
        x.data().begin() + static_cast<std::ptrdiff_t>(end * cols));
    Tensor result = make_output({ end - begin, cols }, std::move(out), { &x });
    record(result, [xi = x.m_impl, res = result.m_impl, begin, cols] {
        if (!xi->requires_grad)
            return;
        auto& gx = grad_of(xi);
        for (std::size_t i = 0; i < res->grad.size(); ++i)
            gx[begin * cols + i] += res->grad[i];
    });
    return result;
}

Tensor Graph::embedding(const Tensor& table, std::span<const std::int32_t> ids)
{
    require_matrix(table, "embedding");
    REQUIRE_SHAPE(!ids.empty(), "embedding: empty id sequence");
    const std::size_t vocab = table.dim(0), width = table.dim(1);
    std::vector<double> out(ids.size() * width, 0.0);
    for (std::size_t i = 0; i < ids.size(); ++i) {
        const auto id = ids[i];
        REQUIRE_SHAPE(id >= 0 && static_cast<std::size_t>(id) < vocab, "embedding: id " + std::to_string(id) + " outside vocabulary of " + std::to_string(vocab));
        if (id == 0)
            continue;
        std::copy_n(table.data().data() + static_cast<std::size_t>(id) * width, width, out.data() + i * width);
    }
    Tensor result = make_output({ ids.size(), width }, std::move(out), { &table });
    record(result, [ti = table.m_impl, res = result.m_impl, ids = std::vector<std::int32_t>(ids.begin(), ids.end()), width] {
        if (!ti->requires_grad)
            return;
        auto& gt = grad_of(ti);
        for (std::size_t i = 0; i < ids.size(); ++i) {
            if (ids[i] == 0)
                continue;
            const auto row = static_cast<std::size_t>(ids[i]) * width;
            for (std::size_t c = 0; c < width; ++c)
                gt[row + c] += res->grad[i * width + c];
        }
    });
    return result;
}

Tensor Graph::binary_cross_entropy(const Tensor& prob, int label, double eps)
{
    REQUIRE_SHAPE(prob.size() == 1, "binary_cross_entropy: expected a [1] probability");
    REQUIRE_SHAPE(label == 0 || label == 1, "binary_cross_entropy: label must be 0 or 1");
    const double p = prob.at(0);
    const double clamped = std::clamp(p, eps, 1.0 - eps);
    const double y = label;
    const double loss = -y * std::log(clamped) - (1.0 - y) * std::log(1.0 - clamped);
    Tensor result = make_output({ 1 }, { loss }, { &prob });
    record(result, [pi = prob.m_impl, res = result.m_impl, y, eps] {
        if (!pi->requires_grad)
            return;
        const double p = pi->data[0];
        if (p <= eps || p >= 1.0 - eps)
            return;
        grad_of(pi)[0] += res->grad[0] * (-y / p + (1.0 - y) / (1.0 - p));
    });
    return result;
}

void Graph::backward(const Tensor& loss)
{
    if (!loss.defined())
        throw DetachedTensor("backward: undefined loss");
    if (loss.size() != 1)
        throw NotScalar("backward: loss has shape " + shape_to_string(loss.shape()));
    if (loss.m_impl->producer != this)
        throw DetachedTensor("backward: loss was not recorded on this graph");
    if (m_consumed)
        throw Error("backward: graph already consumed");
    m_consumed = true;

    grad_of(loss.m_impl)[0] = 1.0;
    for (auto it = m_nodes.rbegin(); it != m_nodes.rend(); ++it)
        (*it)();
    m_nodes.clear();
}

} // namespace multisem
