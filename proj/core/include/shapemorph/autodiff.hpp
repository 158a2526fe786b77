#pragma once

#include <shapemorph/tensor.hpp>

#include <cmath>
#include <deque>
#include <functional>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

namespace shapemorph {

template <typename S>
class Graph;

/// Handle to one node of a computation graph. Cheap to copy; the graph owns
/// the storage.
template <typename S>
struct Value {
    Graph<S>* graph = nullptr;
    int id = -1;

    const Matrix<S>& data() const;
    Eigen::Index rows() const { return data().rows(); }
    Eigen::Index cols() const { return data().cols(); }
    S scalar() const;
};

/// Reverse-mode tape. Nodes are created in topological order (parents before
/// children), so the backward sweep is simply reverse creation order; each
/// node is visited exactly once and gradient accumulation is sequential,
/// which makes gradients bit-deterministic for identical graphs.
template <typename S>
class Graph {
public:
    struct Node {
        Matrix<S> data;
        Matrix<S> grad;  // allocated only when needs_grad
        bool needs_grad = false;
        std::function<void(Graph&, int)> backward;  // empty for leaves
        const char* op = "leaf";
    };

    Value<S> leaf(Matrix<S> data, bool needs_grad = false) {
        return push(std::move(data), needs_grad, nullptr, "leaf");
    }

    Value<S> scalar_leaf(S v, bool needs_grad = false) {
        Matrix<S> m(1, 1);
        m(0, 0) = v;
        return leaf(std::move(m), needs_grad);
    }

    // ---- elementwise ----

    Value<S> add(Value<S> a, Value<S> b) {
        require_same_shape(a, b, "add");
        return push(data(a) + data(b), needs(a) || needs(b),
                    [a, b](Graph& g, int self) {
                        g.accum(a, g.grad_of(self));
                        g.accum(b, g.grad_of(self));
                    },
                    "add");
    }

    Value<S> sub(Value<S> a, Value<S> b) {
        require_same_shape(a, b, "sub");
        return push(data(a) - data(b), needs(a) || needs(b),
                    [a, b](Graph& g, int self) {
                        g.accum(a, g.grad_of(self));
                        g.accum(b, -g.grad_of(self));
                    },
                    "sub");
    }

    Value<S> mul(Value<S> a, Value<S> b) {
        require_same_shape(a, b, "mul");
        return push(data(a).cwiseProduct(data(b)), needs(a) || needs(b),
                    [a, b](Graph& g, int self) {
                        g.accum(a, g.grad_of(self).cwiseProduct(g.data_of(b.id)));
                        g.accum(b, g.grad_of(self).cwiseProduct(g.data_of(a.id)));
                    },
                    "mul");
    }

    Value<S> scale(Value<S> a, S c) {
        return push(data(a) * c, needs(a),
                    [a, c](Graph& g, int self) { g.accum(a, g.grad_of(self) * c); }, "scale");
    }

    Value<S> relu(Value<S> a) {
        const Matrix<S>& x = data(a);
        min_relu_abs_ = std::min(min_relu_abs_, static_cast<double>(x.cwiseAbs().minCoeff()));
        return push(x.cwiseMax(S(0)), needs(a),
                    [a](Graph& g, int self) {
                        const Matrix<S>& x = g.data_of(a.id);
                        g.accum(a, (x.array() > S(0)).template cast<S>().matrix().cwiseProduct(g.grad_of(self)));
                    },
                    "relu");
    }

    // ---- linear algebra ----

    Value<S> matmul(Value<S> a, Value<S> b) {
        if (data(a).cols() != data(b).rows()) throw std::invalid_argument("matmul: inner dims");
        return push(data(a) * data(b), needs(a) || needs(b),
                    [a, b](Graph& g, int self) {
                        g.accum(a, g.grad_of(self) * g.data_of(b.id).transpose());
                        g.accum(b, g.data_of(a.id).transpose() * g.grad_of(self));
                    },
                    "matmul");
    }

    Value<S> transpose(Value<S> a) {
        return push(data(a).transpose(), needs(a),
                    [a](Graph& g, int self) { g.accum(a, g.grad_of(self).transpose()); }, "transpose");
    }

    /// x (n x in) * W (in x out) + b (1 x out, broadcast over rows).
    Value<S> linear(Value<S> x, Value<S> w, Value<S> b) {
        if (data(x).cols() != data(w).rows()) throw std::invalid_argument("linear: x/W dims");
        if (data(b).rows() != 1 || data(b).cols() != data(w).cols())
            throw std::invalid_argument("linear: bias shape");
        Matrix<S> out = data(x) * data(w);
        out.rowwise() += data(b).row(0);
        return push(std::move(out), needs(x) || needs(w) || needs(b),
                    [x, w, b](Graph& g, int self) {
                        const Matrix<S>& gr = g.grad_of(self);
                        g.accum(x, gr * g.data_of(w.id).transpose());
                        g.accum(w, g.data_of(x.id).transpose() * gr);
                        g.accum(b, gr.colwise().sum());
                    },
                    "linear");
    }

    // ---- structure ----

    Value<S> concat_cols(Value<S> a, Value<S> b) {
        if (data(a).rows() != data(b).rows()) throw std::invalid_argument("concat_cols: row mismatch");
        Matrix<S> out(data(a).rows(), data(a).cols() + data(b).cols());
        out.leftCols(data(a).cols()) = data(a);
        out.rightCols(data(b).cols()) = data(b);
        const Eigen::Index ac = data(a).cols();
        return push(std::move(out), needs(a) || needs(b),
                    [a, b, ac](Graph& g, int self) {
                        const Matrix<S>& gr = g.grad_of(self);
                        g.accum(a, gr.leftCols(ac));
                        g.accum(b, gr.rightCols(gr.cols() - ac));
                    },
                    "concat_cols");
    }

    Value<S> slice_cols(Value<S> a, Eigen::Index start, Eigen::Index len) {
        if (start < 0 || len < 0 || start + len > data(a).cols())
            throw std::invalid_argument("slice_cols: out of range");
        return push(data(a).middleCols(start, len), needs(a),
                    [a, start, len](Graph& g, int self) {
                        if (!g.needs(a)) return;
                        Matrix<S> pad = Matrix<S>::Zero(g.data_of(a.id).rows(), g.data_of(a.id).cols());
                        pad.middleCols(start, len) = g.grad_of(self);
                        g.accum(a, pad);
                    },
                    "slice_cols");
    }

    Value<S> gather_rows(Value<S> a, std::vector<int> idx) {
        Matrix<S> out(static_cast<Eigen::Index>(idx.size()), data(a).cols());
        for (std::size_t k = 0; k < idx.size(); ++k) {
            if (idx[k] < 0 || idx[k] >= data(a).rows()) throw std::invalid_argument("gather_rows: index");
            out.row(static_cast<Eigen::Index>(k)) = data(a).row(idx[k]);
        }
        return push(std::move(out), needs(a),
                    [a, idx = std::move(idx)](Graph& g, int self) {
                        if (!g.needs(a)) return;
                        const Matrix<S>& gr = g.grad_of(self);
                        Matrix<S>& pg = g.grad_of(a.id);
                        for (std::size_t k = 0; k < idx.size(); ++k)
                            pg.row(idx[k]) += gr.row(static_cast<Eigen::Index>(k));
                    },
                    "gather_rows");
    }

    /// Componentwise max over row segments [offsets[i], offsets[i+1]).
    /// The adjoint routes each output component's gradient to the first row
    /// attaining the segment max (lowest index wins ties).
    Value<S> segment_max(Value<S> vals, std::vector<std::size_t> offsets) {
        const Eigen::Index n = static_cast<Eigen::Index>(offsets.size()) - 1;
        const Eigen::Index d = data(vals).cols();
        if (offsets.back() != static_cast<std::size_t>(data(vals).rows()))
            throw std::invalid_argument("segment_max: offsets do not cover rows");
        Matrix<S> out(n, d);
        std::vector<int> arg(static_cast<std::size_t>(n * d));
        for (Eigen::Index i = 0; i < n; ++i) {
            const std::size_t lo = offsets[static_cast<std::size_t>(i)];
            const std::size_t hi = offsets[static_cast<std::size_t>(i) + 1];
            if (lo == hi) throw std::invalid_argument("segment_max: empty segment (isolated vertex)");
            out.row(i) = data(vals).row(static_cast<Eigen::Index>(lo));
            for (Eigen::Index c = 0; c < d; ++c) arg[static_cast<std::size_t>(i * d + c)] = static_cast<int>(lo);
            for (std::size_t r = lo + 1; r < hi; ++r)
                for (Eigen::Index c = 0; c < d; ++c)
                    if (data(vals)(static_cast<Eigen::Index>(r), c) > out(i, c)) {
                        out(i, c) = data(vals)(static_cast<Eigen::Index>(r), c);
                        arg[static_cast<std::size_t>(i * d + c)] = static_cast<int>(r);
                    }
        }
        return push(std::move(out), needs(vals),
                    [vals, arg = std::move(arg), d](Graph& g, int self) {
                        if (!g.needs(vals)) return;
                        const Matrix<S>& gr = g.grad_of(self);
                        Matrix<S>& pg = g.grad_of(vals.id);
                        for (Eigen::Index i = 0; i < gr.rows(); ++i)
                            for (Eigen::Index c = 0; c < d; ++c)
                                pg(arg[static_cast<std::size_t>(i * d + c)], c) += gr(i, c);
                    },
                    "segment_max");
    }

    /// Componentwise max over all rows -> 1 x d (lowest row index on ties).
    Value<S> rows_max(Value<S> a) {
        if (data(a).rows() < 1) throw std::invalid_argument("rows_max: empty");
        const Eigen::Index d = data(a).cols();
        Matrix<S> out = data(a).row(0);
        std::vector<int> arg(static_cast<std::size_t>(d), 0);
        for (Eigen::Index r = 1; r < data(a).rows(); ++r)
            for (Eigen::Index c = 0; c < d; ++c)
                if (data(a)(r, c) > out(0, c)) {
                    out(0, c) = data(a)(r, c);
                    arg[static_cast<std::size_t>(c)] = static_cast<int>(r);
                }
        return push(std::move(out), needs(a),
                    [a, arg = std::move(arg)](Graph& g, int self) {
                        if (!g.needs(a)) return;
                        const Matrix<S>& gr = g.grad_of(self);
                        Matrix<S>& pg = g.grad_of(a.id);
                        for (Eigen::Index c = 0; c < gr.cols(); ++c)
                            pg(arg[static_cast<std::size_t>(c)], c) += gr(0, c);
                    },
                    "rows_max");
    }

    Value<S> repeat_rows(Value<S> a, Eigen::Index n) {
        if (data(a).rows() != 1) throw std::invalid_argument("repeat_rows: expects 1 x d");
        Matrix<S> out = data(a).replicate(n, 1);
        return push(std::move(out), needs(a),
                    [a](Graph& g, int self) { g.accum(a, g.grad_of(self).colwise().sum()); },
                    "repeat_rows");
    }

    // ---- rows as distributions ----

    /// Row-wise softmax of (temperature * scores), stabilized by per-row max
    /// subtraction; row sums accumulate in double so rows sum to 1 within
    /// float tolerance even for wide rows.
    Value<S> row_softmax(Value<S> scores, S temperature) {
        if (!(temperature > S(0))) throw std::invalid_argument("row_softmax: temperature must be > 0");
        const Matrix<S>& s = data(scores);
        Matrix<S> out(s.rows(), s.cols());
        for (Eigen::Index i = 0; i < s.rows(); ++i) {
            const S m = s.row(i).maxCoeff();
            double total = 0.0;
            for (Eigen::Index j = 0; j < s.cols(); ++j) {
                const S e = std::exp(temperature * (s(i, j) - m));
                out(i, j) = e;
                total += static_cast<double>(e);
            }
            for (Eigen::Index j = 0; j < s.cols(); ++j)
                out(i, j) = static_cast<S>(static_cast<double>(out(i, j)) / total);
        }
        return push(std::move(out), needs(scores),
                    [scores, temperature](Graph& g, int self) {
                        if (!g.needs(scores)) return;
                        const Matrix<S>& y = g.data_of(self);
                        const Matrix<S>& gr = g.grad_of(self);
                        Matrix<S>& pg = g.grad_of(scores.id);
                        for (Eigen::Index i = 0; i < y.rows(); ++i) {
                            double dot = 0.0;
                            for (Eigen::Index j = 0; j < y.cols(); ++j)
                                dot += static_cast<double>(gr(i, j)) * static_cast<double>(y(i, j));
                            for (Eigen::Index j = 0; j < y.cols(); ++j)
                                pg(i, j) += temperature * y(i, j) * (gr(i, j) - static_cast<S>(dot));
                        }
                    },
                    "row_softmax");
    }

    /// Rows scaled to unit Euclidean length: x_i / (|x_i| + eps).
    Value<S> row_normalize(Value<S> a, S eps) {
        const Matrix<S>& x = data(a);
        Matrix<S> out(x.rows(), x.cols());
        for (Eigen::Index i = 0; i < x.rows(); ++i) out.row(i) = x.row(i) / (x.row(i).norm() + eps);
        return push(std::move(out), needs(a),
                    [a, eps](Graph& g, int self) {
                        if (!g.needs(a)) return;
                        const Matrix<S>& x = g.data_of(a.id);
                        const Matrix<S>& gr = g.grad_of(self);
                        Matrix<S>& pg = g.grad_of(a.id);
                        for (Eigen::Index i = 0; i < x.rows(); ++i) {
                            const S s = x.row(i).norm();
                            const S denom = s + eps;
                            pg.row(i) += gr.row(i) / denom;
                            if (s > S(1e-30)) {
                                const S xg = x.row(i).dot(gr.row(i));
                                pg.row(i) -= x.row(i) * (xg / (s * denom * denom));
                            }
                        }
                    },
                    "row_normalize");
    }

    // ---- reductions ----

    Value<S> sum(Value<S> a) {
        double total = 0.0;
        for (Eigen::Index i = 0; i < data(a).size(); ++i)
            total += static_cast<double>(data(a).data()[i]);
        Matrix<S> out(1, 1);
        out(0, 0) = static_cast<S>(total);
        return push(std::move(out), needs(a),
                    [a](Graph& g, int self) {
                        g.accum(a, Matrix<S>::Constant(g.data_of(a.id).rows(), g.data_of(a.id).cols(),
                                                       g.grad_of(self)(0, 0)));
                    },
                    "sum");
    }

    Value<S> mean(Value<S> a) {
        const auto n = static_cast<double>(data(a).size());
        double total = 0.0;
        for (Eigen::Index i = 0; i < data(a).size(); ++i)
            total += static_cast<double>(data(a).data()[i]);
        Matrix<S> out(1, 1);
        out(0, 0) = static_cast<S>(total / n);
        return push(std::move(out), needs(a),
                    [a, n](Graph& g, int self) {
                        g.accum(a, Matrix<S>::Constant(g.data_of(a.id).rows(), g.data_of(a.id).cols(),
                                                       static_cast<S>(g.grad_of(self)(0, 0) / static_cast<S>(n))));
                    },
                    "mean");
    }

    Value<S> frobenius_sq(Value<S> a) {
        double total = 0.0;
        for (Eigen::Index i = 0; i < data(a).size(); ++i) {
            const double v = static_cast<double>(data(a).data()[i]);
            total += v * v;
        }
        Matrix<S> out(1, 1);
        out(0, 0) = static_cast<S>(total);
        return push(std::move(out), needs(a),
                    [a](Graph& g, int self) {
                        g.accum(a, g.data_of(a.id) * (S(2) * g.grad_of(self)(0, 0)));
                    },
                    "frobenius_sq");
    }

    /// Node with a caller-supplied adjoint; used by composite energies whose
    /// forward pass is not expressible in the primitive vocabulary.
    Value<S> custom(Matrix<S> data, std::vector<Value<S>> parents,
                    std::function<void(Graph&, int)> backward, const char* op) {
        bool ng = false;
        for (const auto& p : parents) ng = ng || needs(p);
        return push(std::move(data), ng, ng ? std::move(backward) : nullptr, op);
    }

    // ---- execution ----

    /// Seeds d(root)/d(root) = 1 and sweeps the tape once in reverse
    /// creation order. root must be scalar (1x1).
    void backward(Value<S> root) {
        if (root.graph != this) throw std::invalid_argument("backward: foreign value");
        const Matrix<S>& r = data_of(root.id);
        if (r.rows() != 1 || r.cols() != 1) throw std::invalid_argument("backward: root must be scalar");
        if (!nodes_[static_cast<std::size_t>(root.id)].needs_grad) return;
        grad_of(root.id)(0, 0) = S(1);
        for (int id = root.id; id >= 0; --id) {
            Node& n = nodes_[static_cast<std::size_t>(id)];
            if (n.needs_grad && n.backward) n.backward(*this, id);
        }
    }

    const Matrix<S>& data_of(int id) const { return nodes_[static_cast<std::size_t>(id)].data; }
    Matrix<S>& grad_of(int id) { return nodes_[static_cast<std::size_t>(id)].grad; }
    bool needs(Value<S> v) const { return nodes_[static_cast<std::size_t>(v.id)].needs_grad; }
    std::size_t size() const { return nodes_.size(); }

    /// Smallest |x| seen at any relu input during forward construction;
    /// finite-difference checks treat values below h as kink evidence.
    double min_relu_abs() const { return min_relu_abs_; }

    template <typename Expr>
    void accum(Value<S> v, const Expr& e) {
        Node& n = nodes_[static_cast<std::size_t>(v.id)];
        if (n.needs_grad) n.grad += e;
    }

private:
    Value<S> push(Matrix<S> data, bool needs_grad, std::function<void(Graph&, int)> backward,
                  const char* op) {
        Node n;
        n.data = std::move(data);
        n.needs_grad = needs_grad;
        if (needs_grad) n.grad = Matrix<S>::Zero(n.data.rows(), n.data.cols());
        n.backward = std::move(backward);
        n.op = op;
        nodes_.push_back(std::move(n));
        return Value<S>{this, static_cast<int>(nodes_.size()) - 1};
    }

    void require_same_shape(Value<S> a, Value<S> b, const char* op) const {
        if (data_of(a.id).rows() != data_of(b.id).rows() || data_of(a.id).cols() != data_of(b.id).cols())
            throw std::invalid_argument(std::string(op) + ": shape mismatch");
    }

    const Matrix<S>& data(Value<S> v) const { return data_of(v.id); }

    std::deque<Node> nodes_;
    double min_relu_abs_ = std::numeric_limits<double>::infinity();
};

template <typename S>
const Matrix<S>& Value<S>::data() const {
    return graph->data_of(id);
}

template <typename S>
S Value<S>::scalar() const {
    const Matrix<S>& m = data();
    if (m.rows() != 1 || m.cols() != 1) throw std::logic_error("scalar() on non-scalar value");
    return m(0, 0);
}

/// Row-pair cosine similarity: out(i, j) = cos(x_i, y_j), eps-guarded norms.
template <typename S>
Value<S> cosine_matrix(Graph<S>& g, Value<S> x, Value<S> y, S eps = S(1e-8)) {
    return g.matmul(g.row_normalize(x, eps), g.transpose(g.row_normalize(y, eps)));
}

}  // namespace shapemorph
