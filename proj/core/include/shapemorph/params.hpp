#pragma once

#include <shapemorph/autodiff.hpp>
#include <shapemorph/tensor.hpp>

#include <map>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace shapemorph {

struct AdamSettings {
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

/// Named trainable tensors plus Adam moment buffers. Names are unique and
/// shapes are fixed at creation; iteration order is creation order, which
/// keeps updates and serialization deterministic.
template <typename S>
class ParamStore {
public:
    struct Entry {
        std::string name;
        Matrix<S> value;
        Matrix<S> grad;
        Matrix<S> m;
        Matrix<S> v;
    };

    void create(const std::string& name, Matrix<S> init) {
        if (index_.count(name)) throw std::invalid_argument("param exists: " + name);
        Entry e;
        e.name = name;
        e.grad = Matrix<S>::Zero(init.rows(), init.cols());
        e.m = Matrix<S>::Zero(init.rows(), init.cols());
        e.v = Matrix<S>::Zero(init.rows(), init.cols());
        e.value = std::move(init);
        index_[name] = entries_.size();
        entries_.push_back(std::move(e));
    }

    bool has(const std::string& name) const { return index_.count(name) != 0; }

    Entry& at(const std::string& name) {
        auto it = index_.find(name);
        if (it == index_.end()) throw std::invalid_argument("no such param: " + name);
        return entries_[it->second];
    }
    const Entry& at(const std::string& name) const {
        auto it = index_.find(name);
        if (it == index_.end()) throw std::invalid_argument("no such param: " + name);
        return entries_[it->second];
    }

    std::vector<Entry>& entries() { return entries_; }
    const std::vector<Entry>& entries() const { return entries_; }
    std::size_t total_size() const {
        std::size_t t = 0;
        for (const auto& e : entries_) t += static_cast<std::size_t>(e.value.size());
        return t;
    }

    void zero_grad() {
        for (auto& e : entries_) e.grad.setZero();
    }

    long step_count() const { return step_; }
    void set_step_count(long s) { step_ = s; }

    /// One Adam update from the accumulated grads.
    void adam_step(const AdamSettings& cfg) {
        ++step_;
        const double b1t = 1.0 - std::pow(cfg.beta1, static_cast<double>(step_));
        const double b2t = 1.0 - std::pow(cfg.beta2, static_cast<double>(step_));
        for (auto& e : entries_) {
            e.m = static_cast<S>(cfg.beta1) * e.m + static_cast<S>(1.0 - cfg.beta1) * e.grad;
            e.v = static_cast<S>(cfg.beta2) * e.v + static_cast<S>(1.0 - cfg.beta2) * e.grad.cwiseProduct(e.grad);
            for (Eigen::Index i = 0; i < e.value.size(); ++i) {
                const double mhat = static_cast<double>(e.m.data()[i]) / b1t;
                const double vhat = static_cast<double>(e.v.data()[i]) / b2t;
                e.value.data()[i] -= static_cast<S>(cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps));
            }
        }
    }

    template <typename T>
    ParamStore<T> cast() const {
        ParamStore<T> out;
        for (const auto& e : entries_) out.create(e.name, e.value.template cast<T>());
        out.set_step_count(step_);
        for (std::size_t i = 0; i < entries_.size(); ++i) {
            out.entries()[i].m = entries_[i].m.template cast<T>();
            out.entries()[i].v = entries_[i].v.template cast<T>();
        }
        return out;
    }

private:
    std::vector<Entry> entries_;
    std::map<std::string, std::size_t> index_;
    long step_ = 0;
};

/// Uniform Glorot init for an in x out affine weight.
template <typename S>
Matrix<S> glorot_uniform(Eigen::Index fan_in, Eigen::Index fan_out, std::mt19937_64& rng) {
    const double a = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    Matrix<S> w(fan_in, fan_out);
    for (Eigen::Index i = 0; i < w.size(); ++i)
        w.data()[i] = static_cast<S>(uniform_in(rng, -a, a));
    return w;
}

/// Per-graph binding of store entries to leaf nodes, so gradients can be
/// pulled back into the store after backward().
template <typename S>
class Bound {
public:
    Bound(Graph<S>& graph, ParamStore<S>& store, bool trainable = true)
        : graph_(&graph), store_(&store), trainable_(trainable) {}

    Value<S> operator()(const std::string& name) {
        auto it = nodes_.find(name);
        if (it != nodes_.end()) return it->second;
        Value<S> v = graph_->leaf(store_->at(name).value, trainable_);
        nodes_.emplace(name, v);
        return v;
    }

    /// store.grad += node grads (call after graph.backward()).
    void accumulate_grads() {
        for (const auto& [name, v] : nodes_) store_->at(name).grad += graph_->grad_of(v.id);
    }

    const std::map<std::string, Value<S>>& nodes() const { return nodes_; }

private:
    Graph<S>* graph_;
    ParamStore<S>* store_;
    bool trainable_;
    std::map<std::string, Value<S>> nodes_;
};

}  // namespace shapemorph
