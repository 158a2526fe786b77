#pragma once

#include <shapemorph/autodiff.hpp>
#include <shapemorph/mesh.hpp>

#include <Eigen/Dense>

#include <cmath>
#include <stdexcept>
#include <vector>

namespace shapemorph {

struct LossWeights {
    double lambda_reg = 100.0;
    double lambda_arap = 1.0;
    double lambda_geo = 1.0;

    void validate() const {
        if (lambda_reg < 0 || lambda_arap < 0 || lambda_geo < 0)
            throw std::invalid_argument("loss weights must be non-negative");
    }
};

/// Best-fit rotation: argmin over SO(3) of sum_l |R p_l - q_l|^2.
/// Polar factor of the cross-covariance H = P^T Q with the smallest singular
/// direction flipped when needed so det(R) = +1; H ~ 0 returns identity.
template <typename S>
Eigen::Matrix<S, 3, 3> kabsch_rotation(const Matrix<S>& p, const Matrix<S>& q) {
    if (p.rows() != q.rows() || p.cols() != 3 || q.cols() != 3)
        throw std::invalid_argument("kabsch_rotation: expects k x 3 pairs");
    if (p.rows() < 1) throw std::invalid_argument("kabsch_rotation: empty point set");
    Eigen::Matrix<S, 3, 3> h = p.transpose() * q;
    if (h.norm() < S(1e-12)) return Eigen::Matrix<S, 3, 3>::Identity();
    Eigen::JacobiSVD<Eigen::Matrix<S, 3, 3>> svd(h, Eigen::ComputeFullU | Eigen::ComputeFullV);
    Eigen::Matrix<S, 3, 3> u = svd.matrixU(), v = svd.matrixV();
    Eigen::Matrix<S, 3, 3> d = Eigen::Matrix<S, 3, 3>::Identity();
    if ((v * u.transpose()).determinant() < S(0)) d(2, 2) = S(-1);
    return v * d * u.transpose();
}

/// |PiY - X_T|_F^2. Gradient reaches X_T directly and the features through Pi.
template <typename S>
Value<S> registration_loss(Graph<S>& g, Value<S> x_end, Value<S> pi, Value<S> y_vertices) {
    return g.frobenius_sq(g.sub(g.matmul(pi, y_vertices), x_end));
}

/// As-rigid-as-possible deformation energy between two vertex states over a
/// shared edge set. Per-vertex rotations are recomputed in closed form each
/// forward pass and held constant during backward; since each R_i minimizes
/// the local term, the neglected derivative vanishes to first order.
template <typename S>
Value<S> arap_pair_energy(Graph<S>& g, const EdgeSet& edges, Value<S> xa, Value<S> xb) {
    const Eigen::Index n = xa.rows();
    if (xb.rows() != n || xa.cols() != 3 || xb.cols() != 3)
        throw std::invalid_argument("arap_pair_energy: expects matching n x 3 states");
    if (edges.vertex_count() != n) throw std::invalid_argument("arap_pair_energy: edge set mismatch");

    const Matrix<S>& a = xa.data();
    const Matrix<S>& b = xb.data();

    std::vector<Eigen::Matrix<S, 3, 3>> rot(static_cast<std::size_t>(n));
    for (Eigen::Index i = 0; i < n; ++i) {
        const int deg = edges.degree(i);
        if (deg == 0) throw std::invalid_argument("arap_pair_energy: isolated vertex");
        Matrix<S> p(deg, 3), q(deg, 3);
        const int* nb = edges.begin(i);
        for (int k = 0; k < deg; ++k) {
            p.row(k) = a.row(nb[k]) - a.row(i);
            q.row(k) = b.row(nb[k]) - b.row(i);
        }
        rot[static_cast<std::size_t>(i)] = kabsch_rotation<S>(p, q);
    }

    double energy = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
        const int* nb = edges.begin(i);
        for (int k = 0; k < edges.degree(i); ++k) {
            const int j = nb[k];
            const Eigen::Matrix<S, 3, 1> ea = (a.row(j) - a.row(i)).transpose();
            const Eigen::Matrix<S, 3, 1> eb = (b.row(j) - b.row(i)).transpose();
            energy += 0.5 * static_cast<double>(
                                (rot[static_cast<std::size_t>(i)] * ea - eb).squaredNorm());
        }
    }

    Matrix<S> out(1, 1);
    out(0, 0) = static_cast<S>(energy);
    const EdgeSet* es = &edges;  // caller keeps the edge set alive for the graph's lifetime
    return g.custom(
        std::move(out), {xa, xb},
        [xa, xb, es, rot = std::move(rot)](Graph<S>& gr, int self) {
            const S gout = gr.grad_of(self)(0, 0);
            const Matrix<S>& a = gr.data_of(xa.id);
            const Matrix<S>& b = gr.data_of(xb.id);
            const bool na = gr.needs(xa), nb_ = gr.needs(xb);
            Matrix<S> da, db;
            if (na) da = Matrix<S>::Zero(a.rows(), 3);
            if (nb_) db = Matrix<S>::Zero(b.rows(), 3);
            for (Eigen::Index i = 0; i < a.rows(); ++i) {
                const Eigen::Matrix<S, 3, 3>& r = rot[static_cast<std::size_t>(i)];
                const int* nb = es->begin(i);
                for (int k = 0; k < es->degree(i); ++k) {
                    const int j = nb[k];
                    const Eigen::Matrix<S, 3, 1> ea = (a.row(j) - a.row(i)).transpose();
                    const Eigen::Matrix<S, 3, 1> eb = (b.row(j) - b.row(i)).transpose();
                    const Eigen::Matrix<S, 3, 1> diff = r * ea - eb;
                    if (na) {
                        const Eigen::Matrix<S, 3, 1> gea = r.transpose() * diff;
                        da.row(j) += gout * gea.transpose();
                        da.row(i) -= gout * gea.transpose();
                    }
                    if (nb_) {
                        db.row(j) -= gout * diff.transpose();
                        db.row(i) += gout * diff.transpose();
                    }
                }
            }
            if (na) gr.accum(xa, da);
            if (nb_) gr.accum(xb, db);
        },
        "arap_pair_energy");
}

/// Symmetric ARAP accumulated over consecutive trajectory states.
template <typename S>
Value<S> arap_sequence_loss(Graph<S>& g, const EdgeSet& edges, const std::vector<Value<S>>& states) {
    if (states.size() < 2) throw std::invalid_argument("arap_sequence_loss: need T >= 1");
    Value<S> total = g.scalar_leaf(S(0));
    for (std::size_t k = 0; k + 1 < states.size(); ++k) {
        total = g.add(total, arap_pair_energy(g, edges, states[k], states[k + 1]));
        total = g.add(total, arap_pair_energy(g, edges, states[k + 1], states[k]));
    }
    return total;
}

/// |Pi D_Y Pi^T - D_X|_F^2; gradient flows through Pi only.
template <typename S>
Value<S> geodesic_loss(Graph<S>& g, Value<S> pi, Value<S> d_x, Value<S> d_y) {
    if (d_x.rows() != pi.rows() || d_y.rows() != pi.cols())
        throw std::invalid_argument("geodesic_loss: dimension mismatch");
    Value<S> mapped = g.matmul(g.matmul(pi, d_y), g.transpose(pi));
    return g.frobenius_sq(g.sub(mapped, d_x));
}

template <typename S>
struct LossComponents {
    Value<S> reg;
    Value<S> arap;
    Value<S> geo;      // ignored when has_geo is false
    bool has_geo = false;
};

/// Weighted composite. Throws if any enabled component is non-finite, naming
/// the offender so a failed training step is diagnosable.
template <typename S>
Value<S> total_loss(Graph<S>& g, const LossComponents<S>& c, const LossWeights& w) {
    w.validate();
    auto check = [](Value<S> v, const char* name) {
        if (!std::isfinite(static_cast<double>(v.scalar())))
            throw std::runtime_error(std::string("non-finite loss component: ") + name);
    };
    check(c.reg, "registration");
    check(c.arap, "arap");
    Value<S> out = g.add(g.scale(c.reg, static_cast<S>(w.lambda_reg)),
                         g.scale(c.arap, static_cast<S>(w.lambda_arap)));
    if (c.has_geo) {
        check(c.geo, "geodesic");
        out = g.add(out, g.scale(c.geo, static_cast<S>(w.lambda_geo)));
    }
    return out;
}

}  // namespace shapemorph
