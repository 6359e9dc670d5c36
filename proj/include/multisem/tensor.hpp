#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace multisem {

using Shape = std::vector<std::size_t>;

std::string shape_to_string(const Shape& shape);
std::size_t shape_size(const Shape& shape);

class Graph;

/// Dense row-major array of doubles (rank 1 to 3).
///
/// A Tensor is a shared handle: copies alias the same buffer. Values are
/// fixed once an op has produced them; only parameters (leaves) are mutated,
/// by initialisation and the optimizer. The gradient buffer is allocated when
/// a backward pass first touches the tensor.
class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false);
    static Tensor scalar(double value, bool requires_grad = false);

    bool defined() const { return static_cast<bool>(m_impl); }
    const Shape& shape() const;
    std::size_t rank() const { return shape().size(); }
    std::size_t dim(std::size_t axis) const { return shape().at(axis); }
    std::size_t size() const;

    std::span<const double> data() const;
    std::span<double> mutable_data();
    double item() const;
    double at(std::size_t i) const { return data()[i]; }
    double at(std::size_t r, std::size_t c) const { return data()[r * dim(1) + c]; }

    bool requires_grad() const;
    bool has_grad() const;
    std::span<const double> grad() const;
    std::span<double> mutable_grad();
    void zero_grad();

    /// Deep copy of the values, detached from any graph.
    Tensor clone() const;
    bool same_storage(const Tensor& other) const { return m_impl == other.m_impl; }

private:
    struct Impl {
        Shape shape;
        std::vector<double> data;
        std::vector<double> grad;
        bool requires_grad = false;
        const Graph* producer = nullptr;
    };

    explicit Tensor(std::shared_ptr<Impl> impl) : m_impl(std::move(impl)) {}
    std::shared_ptr<Impl> m_impl;

    friend class Graph;
};

enum class Activation { Tanh, Relu, Sigmoid };

/// Recording of one forward pass.
///
/// Every op appends a node holding its inputs and a backward rule. backward()
/// walks the nodes in exact reverse recording order, so gradients of tensors
/// that feed several consumers accumulate additively. A non-recording graph
/// evaluates the same ops without keeping any node (inference).
class Graph {
public:
    explicit Graph(bool record = true) : m_record(record) {}
    Graph(const Graph&) = delete;
    Graph& operator=(const Graph&) = delete;

    bool recording() const { return m_record; }
    std::size_t node_count() const { return m_nodes.size(); }

    /// Same-length 1-D convolution with zero padding.
    /// input [n x d_in], kernel [k x d_in x d_out] (k odd), bias [d_out] -> [n x d_out].
    Tensor conv1d_same(const Tensor& input, const Tensor& kernel, const Tensor& bias);

    Tensor activate(Activation kind, const Tensor& x);
    Tensor tanh(const Tensor& x) { return activate(Activation::Tanh, x); }
    Tensor relu(const Tensor& x) { return activate(Activation::Relu, x); }
    Tensor sigmoid(const Tensor& x) { return activate(Activation::Sigmoid, x); }

    /// Softmax of a vector, or of every row of a matrix.
    Tensor softmax(const Tensor& x);

    /// [p x q] . [q x r] -> [p x r]
    Tensor matmul(const Tensor& a, const Tensor& b);
    /// [p x q] . [r x q]^T -> [p x r]
    Tensor matmul_transposed(const Tensor& a, const Tensor& b);
    /// Inner product of two vectors -> [1]
    Tensor dot(const Tensor& a, const Tensor& b);

    Tensor add(const Tensor& a, const Tensor& b);
    /// Adds a [c] bias to every row of an [n x c] matrix.
    Tensor add_row_bias(const Tensor& x, const Tensor& bias);
    /// Adds a [1] scalar tensor to every element.
    Tensor add_scalar(const Tensor& x, const Tensor& s);
    Tensor scale(const Tensor& x, double factor);

    /// Concatenation of rank-1 or rank-2 tensors; operand order is preserved.
    Tensor concat(std::span<const Tensor> parts, std::size_t axis);
    Tensor concat(std::initializer_list<Tensor> parts, std::size_t axis)
    {
        return concat(std::span<const Tensor>(parts.begin(), parts.size()), axis);
    }
    /// Mean of an [n x c] matrix over `axis`; a vector of length c (axis 0) or n (axis 1).
    Tensor mean(const Tensor& x, std::size_t axis);
    Tensor sum(const Tensor& x);
    /// Rows [begin, end) of a matrix.
    Tensor slice_rows(const Tensor& x, std::size_t begin, std::size_t end);

    /// Rows of `table` [V x d] selected by `ids`. Id 0 (padding) always maps to
    /// a zero row and never receives gradient.
    Tensor embedding(const Tensor& table, std::span<const std::int32_t> ids);

    /// Binary cross-entropy of a probability [1] against label y, the
    /// probability clamped to [eps, 1 - eps] before the logarithms.
    Tensor binary_cross_entropy(const Tensor& prob, int label, double eps = 1e-12);

    /// Populates grad of every requires_grad tensor reachable from `loss`.
    void backward(const Tensor& loss);

private:
    using Impl = Tensor::Impl;
    using ImplPtr = std::shared_ptr<Impl>;

    Tensor make_output(Shape shape, std::vector<double> values, std::initializer_list<const Tensor*> inputs);
    void record(const Tensor& output, std::function<void()> rule);
    static std::vector<double>& grad_of(const ImplPtr& impl);

    bool m_record;
    bool m_consumed = false;
    std::vector<std::function<void()>> m_nodes;
};

} // namespace multisem
