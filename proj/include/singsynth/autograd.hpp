#pragma once

// Minimal reverse-mode automatic differentiation over dense matrices.
//
// A Var is a handle to a graph node. Ops record a closure that pushes the
// node's gradient into its parents; backward() walks the graph in reverse
// topological order. Leaves created with Var::leaf() keep their gradient
// across backward() calls until zero_grad() is called, which is how
// parameters accumulate gradients over a batch.

#include "singsynth/common.hpp"

#include <functional>
#include <memory>
#include <vector>

namespace singsynth::ag {

struct Node {
    Matrix value;
    Matrix grad;
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward_fn;

    void accumulate(const Matrix& g);
    bool has_grad() const { return grad.size() != 0; }
};

class Var {
public:
    Var() = default;
    explicit Var(std::shared_ptr<Node> node) : node_(std::move(node)) {}

    static Var constant(Matrix value);
    static Var leaf(Matrix value);
    static Var scalar(Scalar value);

    const Matrix& value() const { return node_->value; }
    Matrix& mutable_value() { return node_->value; }
    const Matrix& grad() const { return node_->grad; }
    void zero_grad() { node_->grad.resize(0, 0); }

    Eigen::Index rows() const { return node_->value.rows(); }
    Eigen::Index cols() const { return node_->value.cols(); }
    bool requires_grad() const { return node_ && node_->requires_grad; }
    bool defined() const { return static_cast<bool>(node_); }
    Scalar item() const;

    const std::shared_ptr<Node>& node() const { return node_; }

private:
    std::shared_ptr<Node> node_;
};

// Seeds d(root)/d(root) = 1; root must be 1x1.
void backward(const Var& root);

bool grad_enabled();

// Disables graph recording in the current thread for its lifetime.
class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

Var detach(const Var& a);

// Builds a node for a custom op. backward_fn receives the new node, whose
// parents appear in the order given here.
Var make_op(Matrix value, const std::vector<Var>& parents, std::function<void(Node&)> backward_fn);

Var operator+(const Var& a, const Var& b);
Var operator-(const Var& a, const Var& b);
Var operator*(const Var& a, Scalar s);
Var operator*(Scalar s, const Var& a);
Var mul(const Var& a, const Var& b);
Var add_scalar(const Var& a, Scalar s);
Var matmul(const Var& a, const Var& b);
// Adds a 1 x C row to every row of a.
Var add_row(const Var& a, const Var& row);
// Multiplies every row of a elementwise by a 1 x C row.
Var mul_row(const Var& a, const Var& row);

Var silu(const Var& a);
Var tanh(const Var& a);
Var exp(const Var& a);
Var square(const Var& a);
Var clamp(const Var& a, Scalar lo, Scalar hi);

Var concat_cols(const Var& a, const Var& b);
Var gather_rows(const Var& a, const std::vector<int>& index);
Var slice_rows(const Var& a, Eigen::Index start, Eigen::Index count);
// Repeats each row `factor` times and keeps the first out_rows rows.
Var upsample_rows(const Var& a, int factor, Eigen::Index out_rows);

Var sum(const Var& a);
Var mean(const Var& a);
// Column sums, 1 x C.
Var sum_rows(const Var& a);

struct ConvSpec {
    int kernel = 3;
    int stride = 1;
    int dilation = 1;
};

// 1-D convolution along rows with "same" zero padding.
// x: [T x Cin], weight: [kernel*Cin x Cout], bias: [1 x Cout].
// Output has ceil(T / stride) rows.
Var conv1d(const Var& x, const Var& weight, const Var& bias, const ConvSpec& spec);

}  // namespace singsynth::ag
