#ifndef GLAM_PARAMS_HPP
#define GLAM_PARAMS_HPP

#include "glam/tensor.hpp"

#include <map>
#include <random>
#include <string>
#include <vector>

namespace glam {

/// Named parameter arrays in insertion order.
template <typename Scalar>
class ParameterSet {
public:
    void add(const std::string& name, Matrix<Scalar> value)
    {
        if (index_.count(name) != 0) {
            throw ContractError("ParameterSet: duplicate parameter " + name);
        }
        index_[name] = values_.size();
        names_.push_back(name);
        values_.push_back(std::move(value));
    }

    [[nodiscard]] bool contains(const std::string& name) const { return index_.count(name) != 0; }

    Matrix<Scalar>& operator[](const std::string& name) { return values_[lookup(name)]; }
    const Matrix<Scalar>& operator[](const std::string& name) const { return values_[lookup(name)]; }

    Matrix<Scalar>& at(std::size_t i) { return values_[i]; }
    const Matrix<Scalar>& at(std::size_t i) const { return values_[i]; }

    [[nodiscard]] const std::vector<std::string>& names() const { return names_; }
    [[nodiscard]] std::size_t size() const { return values_.size(); }

    [[nodiscard]] std::size_t scalarCount() const
    {
        std::size_t n = 0;
        for (const auto& v : values_) {
            n += static_cast<std::size_t>(v.size());
        }
        return n;
    }

    /// Same names and shapes, zero-filled.
    [[nodiscard]] ParameterSet zerosLike() const
    {
        ParameterSet out;
        for (std::size_t i = 0; i < values_.size(); ++i) {
            out.add(names_[i], Matrix<Scalar>::Zero(values_[i].rows(), values_[i].cols()));
        }
        return out;
    }

    template <typename Other>
    [[nodiscard]] ParameterSet<Other> cast() const
    {
        ParameterSet<Other> out;
        for (std::size_t i = 0; i < values_.size(); ++i) {
            out.add(names_[i], values_[i].template cast<Other>());
        }
        return out;
    }

private:
    std::size_t lookup(const std::string& name) const
    {
        auto it = index_.find(name);
        if (it == index_.end()) {
            throw ContractError("ParameterSet: unknown parameter " + name);
        }
        return it->second;
    }

    std::vector<std::string> names_;
    std::vector<Matrix<Scalar>> values_;
    std::map<std::string, std::size_t> index_;
};

/// Exposes a ParameterSet to one Graph as trainable leaves, created on first use.
template <typename Scalar>
class Binder {
public:
    Binder(Graph<Scalar>& graph, const ParameterSet<Scalar>& params) : graph_(graph), params_(params) {}

    Var<Scalar> operator()(const std::string& name)
    {
        auto it = leaves_.find(name);
        if (it != leaves_.end()) {
            return it->second;
        }
        Var<Scalar> v = graph_.leaf(params_[name]);
        leaves_.emplace(name, v);
        return v;
    }

    [[nodiscard]] Graph<Scalar>& graph() { return graph_; }
    [[nodiscard]] const ParameterSet<Scalar>& params() const { return params_; }

    /// Gradients after Graph::backward; parameters never touched get zeros.
    [[nodiscard]] ParameterSet<Scalar> gradients() const
    {
        ParameterSet<Scalar> grads = params_.zerosLike();
        for (const auto& [name, v] : leaves_) {
            if (graph_.hasGrad(v.id())) {
                grads[name] = graph_.grad(v.id());
            }
        }
        return grads;
    }

private:
    Graph<Scalar>& graph_;
    const ParameterSet<Scalar>& params_;
    std::map<std::string, Var<Scalar>> leaves_;
};

template <typename Scalar, typename Rng>
Matrix<Scalar> random_normal(Index rows, Index cols, double stddev, Rng& rng)
{
    std::normal_distribution<double> dist(0.0, stddev);
    Matrix<Scalar> m(rows, cols);
    for (Index i = 0; i < m.size(); ++i) {
        m.data()[i] = static_cast<Scalar>(dist(rng));
    }
    return m;
}

/// Glorot-normal weight for an (in, out) linear map.
template <typename Scalar, typename Rng>
Matrix<Scalar> glorot(Index in, Index out, Rng& rng)
{
    return random_normal<Scalar>(in, out, std::sqrt(2.0 / double(in + out)), rng);
}

}  // namespace glam

#endif  // GLAM_PARAMS_HPP
