#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <shapemorph/checkpoint.hpp>
#include <shapemorph/nets.hpp>
#include <shapemorph/synthgen.hpp>

#include "test_util.hpp"

#include <numeric>

using namespace shapemorph;
using namespace smtest;

namespace {

NetConfig tiny_config() {
    NetConfig cfg;
    cfg.phi_widths = {8, 10};
    cfg.psi_widths = {8, 8};
    cfg.feat_dim = 12;
    cfg.sigma = 7.0;
    return cfg;
}

ParamStore<double> seeded_params(const NetConfig& cfg, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    ParamStore<double> store;
    init_params(store, cfg, rng);
    return store;
}

Mesh permute_mesh(const Mesh& m, const std::vector<int>& perm) {
    // perm[new] = old
    const Eigen::Index n = m.vertex_count();
    Matd v(n, 3);
    std::vector<int> inverse(static_cast<std::size_t>(n));
    for (Eigen::Index i = 0; i < n; ++i) {
        v.row(i) = m.vertices().row(perm[static_cast<std::size_t>(i)]);
        inverse[static_cast<std::size_t>(perm[static_cast<std::size_t>(i)])] = static_cast<int>(i);
    }
    auto f = m.faces();
    for (Eigen::Index k = 0; k < f.size(); ++k) f.data()[k] = inverse[static_cast<std::size_t>(f.data()[k])];
    return Mesh(v, f, m.name());
}

std::vector<int> random_permutation(std::size_t n, std::uint64_t seed) {
    std::vector<int> p(n);
    std::iota(p.begin(), p.end(), 0);
    std::mt19937_64 rng(seed);
    for (std::size_t i = n; i > 1; --i) std::swap(p[i - 1], p[uniform_index(rng, i)]);
    return p;
}

}  // namespace

TEST_CASE("edgeconv_block: zero parameters give zero output (local and appended global)") {
    NetConfig cfg = tiny_config();
    ParamStore<double> store;
    for (const auto& [name, r, c] : expected_parameters(cfg)) store.create(name, Matd::Zero(r, c));

    const Mesh m = make_icosphere(0);
    const EdgeSet edges = edge_set(m);
    Graph<double> g;
    Bound<double> bind(g, store);
    Value<double> in = g.leaf(feature_input<double>(m));
    Value<double> out = edgeconv_block(g, in, edges, bind, "phi.block0", cfg);
    CHECK(out.rows() == m.vertex_count());
    CHECK(out.cols() == 2 * cfg.phi_widths[0]);  // width doubles via the global append
    CHECK(out.data().cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("edgeconv_block: permutation equivariance") {
    const NetConfig cfg = tiny_config();
    ParamStore<double> store = seeded_params(cfg, 3);
    const Mesh m = make_icosphere(1);  // 42 vertices
    const auto perm = random_permutation(static_cast<std::size_t>(m.vertex_count()), 5);
    const Mesh mp = permute_mesh(m, perm);

    auto block_out = [&](const Mesh& mesh) {
        Graph<double> g;
        Bound<double> bind(g, store);
        Value<double> out =
            edgeconv_block(g, g.leaf(feature_input<double>(mesh)), edge_set(mesh), bind, "phi.block0", cfg);
        return Matd(out.data());
    };
    const Matd a = block_out(m), b = block_out(mp);
    for (Eigen::Index i = 0; i < a.rows(); ++i)
        CHECK((b.row(i) - a.row(perm[static_cast<std::size_t>(i)])).cwiseAbs().maxCoeff() < 1e-6);
}

TEST_CASE("edgeconv_block: constant input features collapse to identical local rows") {
    const NetConfig cfg = tiny_config();
    ParamStore<double> store = seeded_params(cfg, 11);
    const Mesh m = make_tetrahedron();
    Graph<double> g;
    Bound<double> bind(g, store);
    Matd constant_feats = Matd::Zero(4, 6);
    constant_feats.rowwise() = Eigen::RowVectorXd::LinSpaced(6, 0.1, 0.6);
    Value<double> out = edgeconv_block(g, g.leaf(constant_feats), edge_set(m), bind, "phi.block0", cfg);
    for (Eigen::Index i = 1; i < out.rows(); ++i)
        CHECK((out.data().row(i) - out.data().row(0)).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("extract_features: output shape and translation sensitivity") {
    const NetConfig cfg = tiny_config();
    ParamStore<double> store = seeded_params(cfg, 21);
    const Mesh m = make_icosphere(0);
    Graph<double> g;
    Bound<double> bind(g, store);
    Value<double> f = extract_features(g, m, edge_set(m), bind, cfg);
    CHECK(f.rows() == m.vertex_count());
    CHECK(f.cols() == cfg.feat_dim);

    // Absolute positions are inputs: translating the mesh changes features.
    const Mesh shifted = transform(m, Mat3d::Identity(), Vec3d(10, 0, 0));
    Graph<double> g2;
    Bound<double> bind2(g2, store);
    Value<double> f2 = extract_features(g2, shifted, edge_set(shifted), bind2, cfg);
    CHECK((f2.data() - f.data()).cwiseAbs().maxCoeff() > 1e-3);
}

TEST_CASE("extract_features: permuted meshes give permuted features and conjugated cosine matrix") {
    const NetConfig cfg = tiny_config();
    ParamStore<double> store = seeded_params(cfg, 31);
    const Mesh x = make_icosphere(1);
    const auto perm = random_permutation(static_cast<std::size_t>(x.vertex_count()), 7);
    const Mesh xp = permute_mesh(x, perm);

    Graph<double> g;
    Bound<double> bind(g, store);
    Value<double> fx = extract_features(g, x, edge_set(x), bind, cfg);
    Value<double> fxp = extract_features(g, xp, edge_set(xp), bind, cfg);
    Value<double> cos_xx = cosine_matrix(g, fx, fx);
    Value<double> cos_pp = cosine_matrix(g, fxp, fxp);
    for (Eigen::Index i = 0; i < x.vertex_count(); ++i) {
        CHECK((fxp.data().row(i) - fx.data().row(perm[static_cast<std::size_t>(i)])).cwiseAbs().maxCoeff() < 1e-6);
        for (Eigen::Index j = 0; j < x.vertex_count(); ++j)
            CHECK(std::abs(cos_pp.data()(i, j) -
                           cos_xx.data()(perm[static_cast<std::size_t>(i)], perm[static_cast<std::size_t>(j)])) < 1e-6);
    }
}

TEST_CASE("correspondence: identity at large temperature, uniform for equal features, scale invariance") {
    std::mt19937_64 rng(13);
    const Matd feat = random_matrix(9, 6, rng);

    SUBCASE("self-similarity with a sharp softmax is the identity map") {
        const Correspondence c = correspondence<double>(feat, feat, 1e3);
        for (std::size_t i = 0; i < c.hard.size(); ++i) CHECK(c.hard[i] == static_cast<int>(i));
    }
    SUBCASE("identical feature rows give uniform assignment") {
        Matd same = Matd::Zero(4, 6);
        same.rowwise() = feat.row(0);
        Matd target = Matd::Zero(5, 6);
        target.rowwise() = feat.row(0);
        const Correspondence c = correspondence<double>(same, target, 7.0);
        CHECK((c.pi.array() - 0.2).abs().maxCoeff() < 1e-9);
    }
    SUBCASE("row-stochastic within 1e-6 and hard = argmax") {
        const Matd fy = random_matrix(7, 6, rng);
        const Correspondence c = correspondence<double>(feat, fy, 7.0);
        for (Eigen::Index i = 0; i < c.pi.rows(); ++i) {
            CHECK(std::abs(c.pi.row(i).sum() - 1.0) < 1e-6);
            CHECK(c.pi.row(i).minCoeff() >= 0.0);
            Eigen::Index argmax;
            c.pi.row(i).maxCoeff(&argmax);
            CHECK(c.hard[static_cast<std::size_t>(i)] == static_cast<int>(argmax));
        }
    }
    SUBCASE("positive row scaling leaves the assignment unchanged") {
        Matd scaled = feat;
        for (Eigen::Index i = 0; i < scaled.rows(); ++i) scaled.row(i) *= 0.3 + 0.9 * static_cast<double>(i);
        const Matd fy = random_matrix(7, 6, rng);
        const Correspondence c0 = correspondence<double>(feat, fy, 7.0);
        const Correspondence c1 = correspondence<double>(scaled, fy, 7.0);
        CHECK((c0.pi - c1.pi).cwiseAbs().maxCoeff() < 1e-6);
    }
}

TEST_CASE("interpolator_input: layout (X, PiY - X, t)") {
    const Mesh x = make_tetrahedron();
    std::mt19937_64 rng(17);
    const Matd y = random_matrix(5, 3, rng);
    Matd pi = random_matrix(4, 5, rng, 0.0, 1.0);
    for (Eigen::Index i = 0; i < pi.rows(); ++i) pi.row(i) /= pi.row(i).sum();

    SUBCASE("identity Pi on identical shapes zeroes the offset block") {
        Graph<double> g;
        Value<double> z = interpolator_input(g, g.leaf(x.vertices()), g.leaf(Matd::Identity(4, 4)),
                                             g.leaf(x.vertices()), 0.5);
        CHECK(z.cols() == 7);
        CHECK(z.data().middleCols(3, 3).cwiseAbs().maxCoeff() == 0.0);
        CHECK((z.data().col(6).array() == 0.5).all());
    }
    SUBCASE("t = 0 zeroes the last column") {
        Graph<double> g;
        Value<double> z = interpolator_input(g, g.leaf(x.vertices()), g.leaf(pi), g.leaf(y), 0.0);
        CHECK(z.data().col(6).cwiseAbs().maxCoeff() == 0.0);
    }
    SUBCASE("offset block equals the dense product oracle") {
        Graph<double> g;
        Value<double> z = interpolator_input(g, g.leaf(x.vertices()), g.leaf(pi), g.leaf(y), 0.25);
        const Matd oracle = pi * y - x.vertices();
        CHECK((z.data().middleCols(3, 3) - oracle).cwiseAbs().maxCoeff() < 1e-6);
        CHECK((z.data().leftCols(3) - x.vertices()).cwiseAbs().maxCoeff() == 0.0);
    }
    SUBCASE("t outside [0,1] is rejected") {
        Graph<double> g;
        CHECK_THROWS_AS(
            interpolator_input(g, g.leaf(x.vertices()), g.leaf(pi), g.leaf(y), 1.0001),
            std::invalid_argument);
    }
}

TEST_CASE("displacement: t = 0 is exactly zero for any parameters") {
    const NetConfig cfg = tiny_config();
    ParamStore<double> store = seeded_params(cfg, 41);
    const Mesh x = make_icosphere(0);
    const EdgeSet ex = edge_set(x);
    Graph<double> g;
    Bound<double> bind(g, store);
    Value<double> z = interpolator_input(g, g.leaf(x.vertices()),
                                         g.leaf(Matd::Identity(x.vertex_count(), x.vertex_count())),
                                         g.leaf(x.vertices()), 0.0);
    const Displacement<double> d = displacement(g, ex, z, bind, cfg, 0.0);
    CHECK(d.delta.data().cwiseAbs().maxCoeff() == 0.0);
    CHECK(d.v.data().cwiseAbs().maxCoeff() > 0.0);  // the raw field itself is not zero
}

TEST_CASE("displacement: |delta| = t |V| row-wise") {
    const NetConfig cfg = tiny_config();
    ParamStore<double> store = seeded_params(cfg, 43);
    const Mesh x = make_icosphere(0);
    std::mt19937_64 rng(2);
    const Matd y = random_matrix(x.vertex_count(), 3, rng);
    Graph<double> g;
    Bound<double> bind(g, store);
    Value<double> pi = g.leaf(Matd::Identity(x.vertex_count(), x.vertex_count()));
    const double t = 0.62;
    Value<double> z = interpolator_input(g, g.leaf(x.vertices()), pi, g.leaf(y), t);
    const Displacement<double> d = displacement(g, edge_set(x), z, bind, cfg, t);
    for (Eigen::Index i = 0; i < d.v.rows(); ++i)
        CHECK(d.delta.data().row(i).norm() == doctest::Approx(t * d.v.data().row(i).norm()).epsilon(1e-12));
}

TEST_CASE("displacement: copy-path parameters reproduce linear interpolation X(1) = PiY") {
    // One block, no global append; the skip projection copies Z columns 3..5
    // (the offsets) and the head is the identity, so V = PiY - X.
    NetConfig cfg;
    cfg.phi_widths = {4};
    cfg.psi_widths = {3};
    cfg.feat_dim = 4;
    cfg.global_append = false;
    cfg.hidden_width = 4;
    ParamStore<double> store;
    for (const auto& [name, r, c] : expected_parameters(cfg)) store.create(name, Matd::Zero(r, c));
    Matd skip = Matd::Zero(14, 3);
    skip(3, 0) = skip(4, 1) = skip(5, 2) = 1.0;
    store.at("psi.block0.skip").value = skip;
    store.at("psi.head.w").value = Matd::Identity(3, 3);

    const Mesh x = make_icosphere(0);
    std::mt19937_64 rng(3);
    const Matd y = random_matrix(x.vertex_count(), 3, rng);
    Matd pi = random_matrix(x.vertex_count(), x.vertex_count(), rng, 0.0, 1.0);
    for (Eigen::Index i = 0; i < pi.rows(); ++i) pi.row(i) /= pi.row(i).sum();

    Graph<double> g;
    Bound<double> bind(g, store);
    Value<double> piv = g.leaf(pi);
    Value<double> z = interpolator_input(g, g.leaf(x.vertices()), piv, g.leaf(y), 1.0);
    const Displacement<double> d = displacement(g, edge_set(x), z, bind, cfg, 1.0);
    const Matd x1 = x.vertices() + d.delta.data();
    CHECK((x1 - pi * y).cwiseAbs().maxCoeff() < 1e-9);
}

TEST_CASE("trajectory: boundary state, T=1 layout, time consistency") {
    NetConfig cfg = tiny_config();
    PoseSpec sa, sb;
    sa.resolution = sb.resolution = 8;
    sb.bend_angles = {0.5, -0.3};
    const Mesh x = make_pose(sa), y = make_pose(sb);

    std::mt19937_64 rng(55);
    ParamStore<float> store;
    init_params(store, cfg, rng);

    auto [c1, t1] = trajectory(x, y, store, cfg, 1);
    CHECK(t1.states.size() == 2);
    CHECK(t1.times == std::vector<double>{0.0, 1.0});
    CHECK(t1.states[0] == x.vertices());  // bit-equal source state

    for (Eigen::Index i = 0; i < c1.pi.rows(); ++i)
        CHECK(std::abs(c1.pi.row(i).sum() - 1.0) < 1e-6);

    auto [c2, t2] = trajectory(x, y, store, cfg, 2);
    auto [c4, t4] = trajectory(x, y, store, cfg, 4);
    // The model is continuous in t: T=4 subsampled at even steps equals T=2.
    for (std::size_t k = 0; k < t2.states.size(); ++k)
        CHECK((t4.states[2 * k] - t2.states[k]).cwiseAbs().maxCoeff() < 1e-6);
}

TEST_CASE("checkpoint config echo: round trip and mismatch refusal") {
    NetConfig cfg = tiny_config();
    cfg.vertex_only = true;
    const std::string echo = cfg.serialize();
    const NetConfig back = NetConfig::deserialize(echo);
    CHECK(back.phi_widths == cfg.phi_widths);
    CHECK(back.psi_widths == cfg.psi_widths);
    CHECK(back.feat_dim == cfg.feat_dim);
    CHECK(back.sigma == doctest::Approx(cfg.sigma));
    CHECK(back.vertex_only == cfg.vertex_only);

    std::mt19937_64 rng(1);
    ParamStore<float> store;
    init_params(store, cfg, rng);
    CHECK_NOTHROW(validate_params(store, cfg));

    NetConfig other = cfg;
    other.feat_dim = cfg.feat_dim + 1;  // stored params no longer fit
    CHECK_THROWS_AS(validate_params(store, other), std::runtime_error);
}

TEST_CASE("net config validation") {
    NetConfig cfg = tiny_config();
    cfg.sigma = 0.0;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    cfg = tiny_config();
    cfg.phi_widths = {8, -1};
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
}
