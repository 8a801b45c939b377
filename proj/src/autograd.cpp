#include "singsynth/autograd.hpp"

#include <cmath>
#include <unordered_set>

namespace singsynth::ag {

namespace {

thread_local bool g_grad_enabled = true;

Var make_node(Matrix value, std::vector<Var> parents, std::function<void(Node&)> fn) {
    auto node = std::make_shared<Node>();
    node->value = std::move(value);
    if (g_grad_enabled) {
        bool any = false;
        for (const auto& p : parents) {
            any = any || p.requires_grad();
        }
        if (any) {
            node->requires_grad = true;
            node->parents.reserve(parents.size());
            for (const auto& p : parents) {
                node->parents.push_back(p.node());
            }
            node->backward_fn = std::move(fn);
        }
    }
    return Var(std::move(node));
}

void push(Node& parent, const Matrix& g) {
    if (parent.requires_grad) {
        parent.accumulate(g);
    }
}

void check_same_shape(const Var& a, const Var& b, const char* op) {
    if (a.rows() != b.rows() || a.cols() != b.cols()) {
        throw InvalidInput(std::string(op) + ": shape mismatch (" + std::to_string(a.rows()) + "x" +
                           std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) + "x" +
                           std::to_string(b.cols()) + ")");
    }
}

Scalar sigmoid(Scalar x) { return Scalar(1) / (Scalar(1) + std::exp(-x)); }

}  // namespace

void Node::accumulate(const Matrix& g) {
    if (grad.size() == 0) {
        grad = g;
    } else {
        grad += g;
    }
}

Var Var::constant(Matrix value) {
    auto node = std::make_shared<Node>();
    node->value = std::move(value);
    return Var(std::move(node));
}

Var Var::leaf(Matrix value) {
    auto node = std::make_shared<Node>();
    node->value = std::move(value);
    node->requires_grad = true;
    return Var(std::move(node));
}

Var Var::scalar(Scalar value) {
    Matrix m(1, 1);
    m(0, 0) = value;
    return constant(std::move(m));
}

Scalar Var::item() const {
    require(rows() == 1 && cols() == 1, "item() on a non-scalar Var");
    return value()(0, 0);
}

void backward(const Var& root) {
    require(root.rows() == 1 && root.cols() == 1, "backward() needs a scalar root");
    if (!root.requires_grad()) {
        return;
    }
    // Iterative post-order DFS gives a topological order.
    std::vector<Node*> order;
    std::unordered_set<Node*> visited;
    std::vector<std::pair<Node*, size_t>> stack;
    stack.emplace_back(root.node().get(), 0);
    visited.insert(root.node().get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            Node* parent = node->parents[next++].get();
            if (parent->requires_grad && !visited.count(parent)) {
                visited.insert(parent);
                stack.emplace_back(parent, 0);
            }
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }
    root.node()->accumulate(Matrix::Ones(1, 1));
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* node = *it;
        if (node->backward_fn && node->has_grad()) {
            node->backward_fn(*node);
        }
    }
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

Var detach(const Var& a) { return Var::constant(a.value()); }

Var make_op(Matrix value, const std::vector<Var>& parents, std::function<void(Node&)> backward_fn) {
    return make_node(std::move(value), parents, std::move(backward_fn));
}

Var operator+(const Var& a, const Var& b) {
    check_same_shape(a, b, "add");
    return make_node(a.value() + b.value(), {a, b}, [](Node& n) {
        push(*n.parents[0], n.grad);
        push(*n.parents[1], n.grad);
    });
}

Var operator-(const Var& a, const Var& b) {
    check_same_shape(a, b, "sub");
    return make_node(a.value() - b.value(), {a, b}, [](Node& n) {
        push(*n.parents[0], n.grad);
        push(*n.parents[1], -n.grad);
    });
}

Var operator*(const Var& a, Scalar s) {
    return make_node(a.value() * s, {a}, [s](Node& n) { push(*n.parents[0], n.grad * s); });
}

Var operator*(Scalar s, const Var& a) { return a * s; }

Var mul(const Var& a, const Var& b) {
    check_same_shape(a, b, "mul");
    return make_node(a.value().cwiseProduct(b.value()), {a, b}, [](Node& n) {
        const Matrix& av = n.parents[0]->value;
        const Matrix& bv = n.parents[1]->value;
        push(*n.parents[0], n.grad.cwiseProduct(bv));
        push(*n.parents[1], n.grad.cwiseProduct(av));
    });
}

Var add_scalar(const Var& a, Scalar s) {
    return make_node(a.value().array() + s, {a}, [](Node& n) { push(*n.parents[0], n.grad); });
}

Var matmul(const Var& a, const Var& b) {
    require(a.cols() == b.rows(), "matmul: inner dimensions differ (" + std::to_string(a.cols()) + " vs " +
                                      std::to_string(b.rows()) + ")");
    Matrix out = a.value() * b.value();
    return make_node(std::move(out), {a, b}, [](Node& n) {
        Node& pa = *n.parents[0];
        Node& pb = *n.parents[1];
        if (pa.requires_grad) {
            pa.accumulate(n.grad * pb.value.transpose());
        }
        if (pb.requires_grad) {
            pb.accumulate(pa.value.transpose() * n.grad);
        }
    });
}

Var add_row(const Var& a, const Var& row) {
    require(row.rows() == 1 && row.cols() == a.cols(), "add_row: row must be 1 x cols(a)");
    Matrix out = a.value().rowwise() + RowVector(row.value());
    return make_node(std::move(out), {a, row}, [](Node& n) {
        push(*n.parents[0], n.grad);
        push(*n.parents[1], n.grad.colwise().sum());
    });
}

Var mul_row(const Var& a, const Var& row) {
    require(row.rows() == 1 && row.cols() == a.cols(), "mul_row: row must be 1 x cols(a)");
    Matrix out = a.value().array().rowwise() * RowVector(row.value()).array();
    return make_node(std::move(out), {a, row}, [](Node& n) {
        const Matrix& av = n.parents[0]->value;
        const RowVector rv = n.parents[1]->value;
        push(*n.parents[0], Matrix(n.grad.array().rowwise() * rv.array()));
        push(*n.parents[1], n.grad.cwiseProduct(av).colwise().sum());
    });
}

Var silu(const Var& a) {
    Matrix out = a.value().unaryExpr([](Scalar x) { return x * sigmoid(x); });
    return make_node(std::move(out), {a}, [](Node& n) {
        const Matrix& x = n.parents[0]->value;
        Matrix d = x.unaryExpr([](Scalar v) {
            const Scalar s = sigmoid(v);
            return s * (Scalar(1) + v * (Scalar(1) - s));
        });
        push(*n.parents[0], n.grad.cwiseProduct(d));
    });
}

Var tanh(const Var& a) {
    Matrix out = a.value().array().tanh();
    return make_node(out, {a}, [out](Node& n) {
        push(*n.parents[0], Matrix(n.grad.array() * (Scalar(1) - out.array().square())));
    });
}

Var exp(const Var& a) {
    Matrix out = a.value().array().exp();
    return make_node(out, {a}, [out](Node& n) { push(*n.parents[0], n.grad.cwiseProduct(out)); });
}

Var square(const Var& a) {
    return make_node(a.value().array().square(), {a}, [](Node& n) {
        push(*n.parents[0], Matrix(Scalar(2) * n.grad.array() * n.parents[0]->value.array()));
    });
}

Var clamp(const Var& a, Scalar lo, Scalar hi) {
    require(lo <= hi, "clamp: lo > hi");
    Matrix out = a.value().cwiseMax(lo).cwiseMin(hi);
    return make_node(std::move(out), {a}, [lo, hi](Node& n) {
        const Matrix& x = n.parents[0]->value;
        Matrix mask = x.unaryExpr([lo, hi](Scalar v) { return (v >= lo && v <= hi) ? Scalar(1) : Scalar(0); });
        push(*n.parents[0], n.grad.cwiseProduct(mask));
    });
}

Var concat_cols(const Var& a, const Var& b) {
    require(a.rows() == b.rows(), "concat_cols: row counts differ");
    Matrix out(a.rows(), a.cols() + b.cols());
    out << a.value(), b.value();
    const Eigen::Index ca = a.cols();
    const Eigen::Index cb = b.cols();
    return make_node(std::move(out), {a, b}, [ca, cb](Node& n) {
        push(*n.parents[0], n.grad.leftCols(ca));
        push(*n.parents[1], n.grad.rightCols(cb));
    });
}

Var gather_rows(const Var& a, const std::vector<int>& index) {
    Matrix out(static_cast<Eigen::Index>(index.size()), a.cols());
    for (size_t i = 0; i < index.size(); ++i) {
        require(index[i] >= 0 && index[i] < a.rows(), "gather_rows: index out of range");
        out.row(static_cast<Eigen::Index>(i)) = a.value().row(index[i]);
    }
    return make_node(std::move(out), {a}, [index](Node& n) {
        Node& p = *n.parents[0];
        if (!p.requires_grad) {
            return;
        }
        Matrix g = Matrix::Zero(p.value.rows(), p.value.cols());
        for (size_t i = 0; i < index.size(); ++i) {
            g.row(index[i]) += n.grad.row(static_cast<Eigen::Index>(i));
        }
        p.accumulate(g);
    });
}

Var slice_rows(const Var& a, Eigen::Index start, Eigen::Index count) {
    require(start >= 0 && count >= 0 && start + count <= a.rows(), "slice_rows: range out of bounds");
    Matrix out = a.value().middleRows(start, count);
    return make_node(std::move(out), {a}, [start, count](Node& n) {
        Node& p = *n.parents[0];
        if (!p.requires_grad) {
            return;
        }
        Matrix g = Matrix::Zero(p.value.rows(), p.value.cols());
        g.middleRows(start, count) = n.grad;
        p.accumulate(g);
    });
}

Var upsample_rows(const Var& a, int factor, Eigen::Index out_rows) {
    require(factor >= 1, "upsample_rows: factor must be positive");
    require(out_rows <= a.rows() * factor, "upsample_rows: too many output rows");
    Matrix out(out_rows, a.cols());
    for (Eigen::Index r = 0; r < out_rows; ++r) {
        out.row(r) = a.value().row(r / factor);
    }
    return make_node(std::move(out), {a}, [factor](Node& n) {
        Node& p = *n.parents[0];
        if (!p.requires_grad) {
            return;
        }
        Matrix g = Matrix::Zero(p.value.rows(), p.value.cols());
        for (Eigen::Index r = 0; r < n.grad.rows(); ++r) {
            g.row(r / factor) += n.grad.row(r);
        }
        p.accumulate(g);
    });
}

Var sum(const Var& a) {
    Matrix out(1, 1);
    out(0, 0) = a.value().sum();
    return make_node(std::move(out), {a}, [](Node& n) {
        const Node& p = *n.parents[0];
        push(*n.parents[0], Matrix::Constant(p.value.rows(), p.value.cols(), n.grad(0, 0)));
    });
}

Var mean(const Var& a) {
    require(a.value().size() > 0, "mean of an empty Var");
    const Scalar inv = Scalar(1) / static_cast<Scalar>(a.value().size());
    return sum(a) * inv;
}

Var sum_rows(const Var& a) {
    Matrix out = a.value().colwise().sum();
    return make_node(std::move(out), {a}, [](Node& n) {
        const Eigen::Index rows = n.parents[0]->value.rows();
        push(*n.parents[0], n.grad.replicate(rows, 1));
    });
}

Var conv1d(const Var& x, const Var& weight, const Var& bias, const ConvSpec& spec) {
    const Eigen::Index cin = x.cols();
    const Eigen::Index k = spec.kernel;
    require(spec.kernel >= 1 && spec.kernel % 2 == 1, "conv1d: kernel must be odd");
    require(spec.stride >= 1 && spec.dilation >= 1, "conv1d: stride and dilation must be positive");
    require(weight.rows() == k * cin, "conv1d: weight rows must equal kernel * in_channels");
    require(bias.rows() == 1 && bias.cols() == weight.cols(), "conv1d: bias shape mismatch");

    const Eigen::Index t_in = x.rows();
    const Eigen::Index pad = static_cast<Eigen::Index>(spec.dilation) * (k - 1) / 2;
    const Eigen::Index t_out = (t_in + spec.stride - 1) / spec.stride;
    const int stride = spec.stride;
    const int dilation = spec.dilation;

    // im2col: row o holds the receptive field of output frame o.
    Matrix col = Matrix::Zero(t_out, k * cin);
    const Matrix& xv = x.value();
    for (Eigen::Index j = 0; j < k; ++j) {
        const Eigen::Index offset = j * dilation - pad;
        if (stride == 1) {
            const Eigen::Index lo = std::max<Eigen::Index>(0, -offset);
            const Eigen::Index hi = std::min<Eigen::Index>(t_out, t_in - offset);
            if (hi > lo) {
                col.block(lo, j * cin, hi - lo, cin) = xv.middleRows(lo + offset, hi - lo);
            }
        } else {
            for (Eigen::Index o = 0; o < t_out; ++o) {
                const Eigen::Index src = o * stride + offset;
                if (src >= 0 && src < t_in) {
                    col.block(o, j * cin, 1, cin) = xv.row(src);
                }
            }
        }
    }
    Matrix out = col * weight.value();
    out.rowwise() += RowVector(bias.value());

    return make_node(std::move(out), {x, weight, bias},
                     [col = std::move(col), cin, k, t_in, t_out, pad, stride, dilation](Node& n) {
                         Node& px = *n.parents[0];
                         Node& pw = *n.parents[1];
                         Node& pb = *n.parents[2];
                         if (pw.requires_grad) {
                             pw.accumulate(col.transpose() * n.grad);
                         }
                         if (pb.requires_grad) {
                             pb.accumulate(n.grad.colwise().sum());
                         }
                         if (!px.requires_grad) {
                             return;
                         }
                         const Matrix dcol = n.grad * pw.value.transpose();
                         Matrix dx = Matrix::Zero(t_in, cin);
                         for (Eigen::Index j = 0; j < k; ++j) {
                             const Eigen::Index offset = j * dilation - pad;
                             if (stride == 1) {
                                 const Eigen::Index lo = std::max<Eigen::Index>(0, -offset);
                                 const Eigen::Index hi = std::min<Eigen::Index>(t_out, t_in - offset);
                                 if (hi > lo) {
                                     dx.middleRows(lo + offset, hi - lo) += dcol.block(lo, j * cin, hi - lo, cin);
                                 }
                             } else {
                                 for (Eigen::Index o = 0; o < t_out; ++o) {
                                     const Eigen::Index src = o * stride + offset;
                                     if (src >= 0 && src < t_in) {
                                         dx.row(src) += dcol.block(o, j * cin, 1, cin);
                                     }
                                 }
                             }
                         }
                         px.accumulate(dx);
                     });
}

}  // namespace singsynth::ag
