#pragma once

#include <shapemorph/autodiff.hpp>
#include <shapemorph/mesh.hpp>
#include <shapemorph/params.hpp>

#include <cstdio>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <tuple>
#include <vector>

namespace shapemorph {

/// Architecture of the feature extractor (phi) and the interpolator (psi).
/// Each listed width is one graph-convolution block; blocks append the
/// global max feature (doubling their width) unless global_append is off.
/// A final per-vertex affine head maps to feat_dim (phi) or 3 (psi).
struct NetConfig {
    std::vector<int> phi_widths{64, 96, 128};
    std::vector<int> psi_widths{128, 128};
    int feat_dim = 352;
    double sigma = 7.0;     // correspondence softmax temperature
    int hidden_width = 0;   // hidden width of the per-edge MLP; 0 = block width
    bool global_append = true;   // off reproduces the no-maxpool ablation
    bool vertex_only = false;    // on replaces the edge transform with a per-vertex one

    void validate() const {
        if (phi_widths.empty() || psi_widths.empty())
            throw std::invalid_argument("net config: empty width list");
        for (int w : phi_widths)
            if (w <= 0) throw std::invalid_argument("net config: widths must be positive");
        for (int w : psi_widths)
            if (w <= 0) throw std::invalid_argument("net config: widths must be positive");
        if (feat_dim <= 0) throw std::invalid_argument("net config: feat_dim must be positive");
        if (!(sigma > 0)) throw std::invalid_argument("net config: sigma must be positive");
        if (hidden_width < 0) throw std::invalid_argument("net config: hidden_width must be >= 0");
    }

    std::string serialize() const;
    static NetConfig deserialize(const std::string& text);
};

struct Correspondence {
    Matd pi;                // n x m row-stochastic soft assignment
    std::vector<int> hard;  // hard[i] = argmax of row i (lowest index on ties)
};

struct Trajectory {
    std::vector<double> times;  // t_0 = 0 < ... < t_T = 1
    std::vector<Matd> states;   // states[0] is the source vertices exactly
};

namespace detail {

inline int hidden_of(const NetConfig& cfg, int width) {
    return cfg.hidden_width > 0 ? cfg.hidden_width : width;
}

/// (name, rows, cols) for every parameter the config implies, in creation order.
inline std::vector<std::tuple<std::string, int, int>> chain_parameters(const NetConfig& cfg,
                                                                       const std::string& net,
                                                                       int in_dim, int out_dim) {
    const auto& widths = net == "phi" ? cfg.phi_widths : cfg.psi_widths;
    std::vector<std::tuple<std::string, int, int>> out;
    int d = in_dim;
    for (std::size_t k = 0; k < widths.size(); ++k) {
        const int w = widths[k];
        const int h_in = cfg.vertex_only ? d : 2 * d;
        const int hidden = hidden_of(cfg, w);
        const std::string p = net + ".block" + std::to_string(k);
        out.emplace_back(p + ".w1", h_in, hidden);
        out.emplace_back(p + ".b1", 1, hidden);
        out.emplace_back(p + ".w2", hidden, w);
        out.emplace_back(p + ".b2", 1, w);
        out.emplace_back(p + ".skip", h_in, w);
        d = cfg.global_append ? 2 * w : w;
    }
    out.emplace_back(net + ".head.w", d, out_dim);
    out.emplace_back(net + ".head.b", 1, out_dim);
    return out;
}

}  // namespace detail

inline std::vector<std::tuple<std::string, int, int>> expected_parameters(const NetConfig& cfg) {
    auto out = detail::chain_parameters(cfg, "phi", 6, cfg.feat_dim);
    auto psi = detail::chain_parameters(cfg, "psi", 7, 3);
    out.insert(out.end(), psi.begin(), psi.end());
    return out;
}

/// Creates all weights (Glorot-uniform, biases zero) under a seeded RNG.
template <typename S>
void init_params(ParamStore<S>& store, const NetConfig& cfg, std::mt19937_64& rng) {
    cfg.validate();
    for (const auto& [name, rows, cols] : expected_parameters(cfg)) {
        if (name.ends_with(".b1") || name.ends_with(".b2") || name.ends_with(".head.b"))
            store.create(name, Matrix<S>::Zero(rows, cols));
        else
            store.create(name, glorot_uniform<S>(rows, cols, rng));
    }
}

/// Verifies a loaded store against the shapes the config implies.
template <typename S>
void validate_params(const ParamStore<S>& store, const NetConfig& cfg) {
    const auto expected = expected_parameters(cfg);
    if (expected.size() != store.entries().size())
        throw std::runtime_error("checkpoint/config mismatch: parameter count");
    for (const auto& [name, rows, cols] : expected) {
        if (!store.has(name)) throw std::runtime_error("checkpoint/config mismatch: missing " + name);
        const auto& e = store.at(name);
        if (e.value.rows() != rows || e.value.cols() != cols)
            throw std::runtime_error("checkpoint/config mismatch: shape of " + name);
    }
}

/// Componentwise max of transformed edge features over each vertex
/// neighborhood. edge_transform maps (x_i, x_j - x_i), both |E| x d, to
/// |E| x d' rows aligned with the edge set's source-major pair order.
template <typename S, typename EdgeTransform>
Value<S> neighborhood_max(Graph<S>& g, Value<S> features, const EdgeSet& edges,
                          EdgeTransform edge_transform) {
    const Eigen::Index n = features.rows();
    if (edges.vertex_count() != n) throw std::invalid_argument("neighborhood_max: edge set mismatch");
    std::vector<int> src;
    src.reserve(edges.pair_count());
    for (Eigen::Index i = 0; i < n; ++i)
        for (int k = 0; k < edges.degree(i); ++k) src.push_back(static_cast<int>(i));
    Value<S> xi = g.gather_rows(features, std::move(src));
    Value<S> xj = g.gather_rows(features, edges.flat_neighbors());
    Value<S> edge_vals = edge_transform(xi, g.sub(xj, xi));
    return g.segment_max(edge_vals, edges.offsets());
}

template <typename S>
Value<S> global_max(Graph<S>& g, Value<S> features) {
    return g.rows_max(features);
}

namespace detail {

template <typename S>
Value<S> residual_mlp(Graph<S>& g, Value<S> u, Bound<S>& bind, const std::string& prefix) {
    Value<S> h = g.relu(g.linear(u, bind(prefix + ".w1"), bind(prefix + ".b1")));
    h = g.linear(h, bind(prefix + ".w2"), bind(prefix + ".b2"));
    return g.add(h, g.matmul(u, bind(prefix + ".skip")));
}

}  // namespace detail

/// One graph-convolution block: neighborhood max of a residual MLP over
/// (x_i, x_j - x_i), then the global max appended to every row. With
/// vertex_only the MLP sees x_i alone, which collapses the neighborhood max
/// to a per-vertex transform (max over identical rows).
template <typename S>
Value<S> edgeconv_block(Graph<S>& g, Value<S> features, const EdgeSet& edges, Bound<S>& bind,
                        const std::string& prefix, const NetConfig& cfg) {
    Value<S> local;
    if (cfg.vertex_only) {
        local = detail::residual_mlp(g, features, bind, prefix);
    } else {
        local = neighborhood_max(g, features, edges, [&](Value<S> xi, Value<S> diff) {
            return detail::residual_mlp(g, g.concat_cols(xi, diff), bind, prefix);
        });
    }
    if (!cfg.global_append) return local;
    return g.concat_cols(local, g.repeat_rows(global_max(g, local), local.rows()));
}

namespace detail {

template <typename S>
Value<S> run_chain(Graph<S>& g, Value<S> input, const EdgeSet& edges, Bound<S>& bind,
                   const NetConfig& cfg, const std::string& net) {
    const auto& widths = net == "phi" ? cfg.phi_widths : cfg.psi_widths;
    Value<S> x = input;
    for (std::size_t k = 0; k < widths.size(); ++k)
        x = edgeconv_block(g, x, edges, bind, net + ".block" + std::to_string(k), cfg);
    return g.linear(x, bind(net + ".head.w"), bind(net + ".head.b"));
}

}  // namespace detail

/// Per-vertex input features of the extractor: positions next to outward
/// normals (no built-in translation invariance, by construction).
template <typename S>
Matrix<S> feature_input(const Mesh& mesh) {
    const Matd& v = mesh.vertices();
    const Matd nrm = vertex_normals(mesh).normals;
    Matrix<S> in(v.rows(), 6);
    in.leftCols(3) = v.cast<S>();
    in.rightCols(3) = nrm.cast<S>();
    return in;
}

/// Feature extractor: (X, N) through the configured block chain and head.
template <typename S>
Value<S> extract_features(Graph<S>& g, const Mesh& mesh, const EdgeSet& edges, Bound<S>& bind,
                          const NetConfig& cfg) {
    Value<S> input = g.leaf(feature_input<S>(mesh));
    return detail::run_chain(g, input, edges, bind, cfg, "phi");
}

/// Soft correspondence from feature cosine similarity at temperature sigma.
template <typename S>
Value<S> correspondence_value(Graph<S>& g, Value<S> feat_x, Value<S> feat_y, double sigma) {
    return g.row_softmax(cosine_matrix(g, feat_x, feat_y), static_cast<S>(sigma));
}

inline std::vector<int> hard_matches(const Matd& pi) {
    std::vector<int> hard(static_cast<std::size_t>(pi.rows()));
    for (Eigen::Index i = 0; i < pi.rows(); ++i) {
        int best = 0;
        for (Eigen::Index j = 1; j < pi.cols(); ++j)
            if (pi(i, j) > pi(i, best)) best = static_cast<int>(j);
        hard[static_cast<std::size_t>(i)] = best;
    }
    return hard;
}

template <typename S>
Correspondence correspondence(const Matrix<S>& feat_x, const Matrix<S>& feat_y, double sigma) {
    Graph<S> g;
    Value<S> pi = correspondence_value(g, g.leaf(feat_x), g.leaf(feat_y), sigma);
    Correspondence c;
    c.pi = pi.data().template cast<double>();
    c.hard = hard_matches(c.pi);
    return c;
}

/// Interpolator input Z = (X, PiY - X, t 1): n x 7.
template <typename S>
Value<S> interpolator_input(Graph<S>& g, Value<S> x_vertices, Value<S> pi, Value<S> y_vertices,
                            double t) {
    if (!(t >= 0.0 && t <= 1.0)) throw std::invalid_argument("interpolator_input: t outside [0,1]");
    Value<S> offsets = g.sub(g.matmul(pi, y_vertices), x_vertices);
    Value<S> tcol = g.leaf(Matrix<S>::Constant(x_vertices.rows(), 1, static_cast<S>(t)));
    return g.concat_cols(g.concat_cols(x_vertices, offsets), tcol);
}

template <typename S>
struct Displacement {
    Value<S> v;      // raw field V(t)
    Value<S> delta;  // t * V(t); exactly zero at t = 0
};

/// Interpolator network on the source connectivity; the returned shift is
/// t * V so X(0) = X holds structurally.
template <typename S>
Displacement<S> displacement(Graph<S>& g, const EdgeSet& source_edges, Value<S> z, Bound<S>& bind,
                             const NetConfig& cfg, double t) {
    if (z.cols() != 7) throw std::invalid_argument("displacement: Z must be n x 7");
    Value<S> v = detail::run_chain(g, z, source_edges, bind, cfg, "psi");
    return Displacement<S>{v, g.scale(v, static_cast<S>(t))};
}

/// Whole forward pass of one pair kept as graph values usable by the losses.
template <typename S>
struct ForwardBundle {
    Value<S> pi;
    Value<S> x_leaf;                 // source vertices as a constant leaf
    Value<S> y_leaf;                 // target vertices as a constant leaf
    std::vector<double> times;
    std::vector<Value<S>> states;    // states[0] == x_leaf
};

template <typename S>
ForwardBundle<S> forward_pair(Graph<S>& g, const Mesh& mesh_x, const EdgeSet& edges_x,
                              const Mesh& mesh_y, const EdgeSet& edges_y, Bound<S>& bind,
                              const NetConfig& cfg, int time_steps) {
    if (time_steps < 1) throw std::invalid_argument("forward_pair: T must be >= 1");
    ForwardBundle<S> out;
    Value<S> feat_x = extract_features(g, mesh_x, edges_x, bind, cfg);
    Value<S> feat_y = extract_features(g, mesh_y, edges_y, bind, cfg);
    out.pi = correspondence_value(g, feat_x, feat_y, cfg.sigma);
    out.x_leaf = g.leaf(mesh_x.vertices().cast<S>());
    out.y_leaf = g.leaf(mesh_y.vertices().cast<S>());
    out.times.push_back(0.0);
    out.states.push_back(out.x_leaf);
    for (int k = 1; k <= time_steps; ++k) {
        const double t = static_cast<double>(k) / time_steps;
        Value<S> z = interpolator_input(g, out.x_leaf, out.pi, out.y_leaf, t);
        Displacement<S> d = displacement(g, edges_x, z, bind, cfg, t);
        out.times.push_back(t);
        out.states.push_back(g.add(out.x_leaf, d.delta));
    }
    return out;
}

/// Non-differentiable front end: runs the model once and extracts the
/// correspondence and the discrete trajectory.
template <typename S>
std::pair<Correspondence, Trajectory> trajectory(const Mesh& mesh_x, const Mesh& mesh_y,
                                                 ParamStore<S>& store, const NetConfig& cfg,
                                                 int time_steps) {
    Graph<S> g;
    Bound<S> bind(g, store, /*trainable=*/false);
    const EdgeSet ex = edge_set(mesh_x), ey = edge_set(mesh_y);
    ForwardBundle<S> fb = forward_pair(g, mesh_x, ex, mesh_y, ey, bind, cfg, time_steps);
    Correspondence c;
    c.pi = fb.pi.data().template cast<double>();
    c.hard = hard_matches(c.pi);
    Trajectory traj;
    traj.times = fb.times;
    traj.states.reserve(fb.states.size());
    traj.states.push_back(mesh_x.vertices());  // exact, not a float round trip
    for (std::size_t k = 1; k < fb.states.size(); ++k)
        traj.states.push_back(fb.states[k].data().template cast<double>());
    return {std::move(c), std::move(traj)};
}

inline std::string NetConfig::serialize() const {
    std::ostringstream out;
    auto join = [](const std::vector<int>& v) {
        std::string s;
        for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
        return s;
    };
    char sig[40];
    std::snprintf(sig, sizeof(sig), "%.9g", sigma);
    out << "phi_widths=" << join(phi_widths) << "\n";
    out << "psi_widths=" << join(psi_widths) << "\n";
    out << "feat_dim=" << feat_dim << "\n";
    out << "sigma=" << sig << "\n";
    out << "hidden_width=" << hidden_width << "\n";
    out << "global_append=" << (global_append ? 1 : 0) << "\n";
    out << "vertex_only=" << (vertex_only ? 1 : 0) << "\n";
    return out.str();
}

inline NetConfig NetConfig::deserialize(const std::string& text) {
    NetConfig cfg;
    std::istringstream in(text);
    std::string line;
    auto parse_widths = [](const std::string& s) {
        std::vector<int> v;
        std::istringstream ss(s);
        std::string tok;
        while (std::getline(ss, tok, ',')) v.push_back(std::stoi(tok));
        return v;
    };
    while (std::getline(in, line)) {
        const auto eq = line.find('=');
        if (eq == std::string::npos) continue;
        const std::string key = line.substr(0, eq), val = line.substr(eq + 1);
        if (key == "phi_widths") cfg.phi_widths = parse_widths(val);
        else if (key == "psi_widths") cfg.psi_widths = parse_widths(val);
        else if (key == "feat_dim") cfg.feat_dim = std::stoi(val);
        else if (key == "sigma") cfg.sigma = std::stod(val);
        else if (key == "hidden_width") cfg.hidden_width = std::stoi(val);
        else if (key == "global_append") cfg.global_append = std::stoi(val) != 0;
        else if (key == "vertex_only") cfg.vertex_only = std::stoi(val) != 0;
    }
    cfg.validate();
    return cfg;
}

}  // namespace shapemorph
