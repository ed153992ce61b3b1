#ifndef GLAM_TENSOR_HPP
#define GLAM_TENSOR_HPP

#include <Eigen/Dense>

#include <deque>
#include <functional>
#include <stdexcept>
#include <string>
#include <utility>

namespace glam {

template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename Scalar>
using RowVector = Eigen::Matrix<Scalar, 1, Eigen::Dynamic>;

using Index = Eigen::Index;

/// Raised when a caller violates a shape or value contract of an operation.
class ContractError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Raised for invalid configuration values.
class ConfigError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

template <typename Scalar>
class Graph;

/// Handle to a node of a Graph. Cheap to copy; valid while the graph lives.
template <typename Scalar>
class Var {
public:
    Var() = default;
    Var(Graph<Scalar>* graph, int id) : graph_(graph), id_(id) {}

    [[nodiscard]] const Matrix<Scalar>& value() const { return graph_->value(id_); }
    [[nodiscard]] Matrix<Scalar>& grad() const { return graph_->grad(id_); }
    [[nodiscard]] Graph<Scalar>* graph() const { return graph_; }
    [[nodiscard]] int id() const { return id_; }
    [[nodiscard]] Index rows() const { return value().rows(); }
    [[nodiscard]] Index cols() const { return value().cols(); }
    [[nodiscard]] Scalar item() const { return value()(0, 0); }
    [[nodiscard]] bool valid() const { return graph_ != nullptr; }
    [[nodiscard]] bool requiresGrad() const { return graph_->requiresGrad(id_); }

private:
    Graph<Scalar>* graph_ = nullptr;
    int id_ = -1;
};

/// Reverse-mode tape. Nodes are appended in topological order, so backward
/// walks them in reverse. With gradients disabled no closures are stored.
template <typename Scalar>
class Graph {
public:
    using Backward = std::function<void(const Var<Scalar>& out)>;

    explicit Graph(bool gradEnabled = true) : gradEnabled_(gradEnabled) {}
    Graph(const Graph&) = delete;
    Graph& operator=(const Graph&) = delete;

    [[nodiscard]] bool gradEnabled() const { return gradEnabled_; }

    Var<Scalar> input(Matrix<Scalar> value) { return push(std::move(value), false); }

    Var<Scalar> leaf(Matrix<Scalar> value) { return push(std::move(value), gradEnabled_); }

    /// Adds a computed node. `backward` runs only when some parent needs a gradient.
    template <typename... Parents>
    Var<Scalar> record(Matrix<Scalar> value, Backward backward, const Parents&... parents)
    {
        const bool needs = gradEnabled_ && (false || ... || parents.requiresGrad());
        Var<Scalar> out = push(std::move(value), needs);
        if (needs) {
            nodes_[out.id()].backward = std::move(backward);
        }
        return out;
    }

    void backward(const Var<Scalar>& root)
    {
        if (root.rows() != 1 || root.cols() != 1) {
            throw ContractError("backward: root must be a scalar node");
        }
        if (!requiresGrad(root.id())) {
            return;
        }
        grad(root.id()).setOnes();
        for (int id = root.id(); id >= 0; --id) {
            Node& node = nodes_[id];
            if (node.backward && node.grad.size() != 0) {
                node.backward(Var<Scalar>(this, id));
            }
        }
    }

    [[nodiscard]] const Matrix<Scalar>& value(int id) const { return nodes_[id].value; }

    /// Gradient buffer of a node, zero-allocated on first access.
    Matrix<Scalar>& grad(int id)
    {
        Node& node = nodes_[id];
        if (node.grad.size() == 0) {
            node.grad.setZero(node.value.rows(), node.value.cols());
        }
        return node.grad;
    }

    [[nodiscard]] bool hasGrad(int id) const { return nodes_[id].grad.size() != 0; }
    [[nodiscard]] bool requiresGrad(int id) const { return nodes_[id].requiresGrad; }
    [[nodiscard]] std::size_t size() const { return nodes_.size(); }

private:
    struct Node {
        Matrix<Scalar> value;
        Matrix<Scalar> grad;
        bool requiresGrad = false;
        Backward backward;
    };

    Var<Scalar> push(Matrix<Scalar> value, bool requiresGrad)
    {
        Node node;
        node.value = std::move(value);
        node.requiresGrad = requiresGrad;
        nodes_.push_back(std::move(node));
        return Var<Scalar>(this, static_cast<int>(nodes_.size() - 1));
    }

    std::deque<Node> nodes_;
    bool gradEnabled_;
};

/// Accumulates into a parent's gradient only when that parent is trainable.
template <typename Scalar, typename Expr>
void accumulate(const Var<Scalar>& v, const Expr& expr)
{
    if (v.requiresGrad()) {
        v.grad().noalias() += expr;
    }
}

}  // namespace glam

#endif  // GLAM_TENSOR_HPP
