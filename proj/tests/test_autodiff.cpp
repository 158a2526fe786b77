#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <shapemorph/autodiff.hpp>
#include <shapemorph/checkpoint.hpp>
#include <shapemorph/fdcheck.hpp>
#include <shapemorph/nets.hpp>
#include <shapemorph/params.hpp>

#include "test_util.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

using namespace shapemorph;
using namespace smtest;

namespace {

ParamStore<double> store_with(const std::string& name, const Matd& m) {
    ParamStore<double> s;
    s.create(name, m);
    return s;
}

/// FD-check a scalar loss built from a single parameter "x".
template <typename BuildFn>
double fd_err(const Matd& x, BuildFn build, double h = 1e-4) {
    ParamStore<double> s = store_with("x", x);
    const FdReport r = finite_difference_check(
        s, [&](Graph<double>& g, Bound<double>& b) { return build(g, b("x")); }, h);
    return r.max_rel_err;
}

}  // namespace

TEST_CASE("gradient of |x|^2 is 2x, finite differences agree to 1e-8") {
    Matd x(1, 2);
    x << 1.0, 2.0;
    ParamStore<double> s = store_with("x", x);
    Graph<double> g;
    Bound<double> bind(g, s);
    Value<double> loss = g.frobenius_sq(bind("x"));
    g.backward(loss);
    const Matd grad = g.grad_of(bind("x").id);
    CHECK(grad(0, 0) == doctest::Approx(2.0).epsilon(1e-12));
    CHECK(grad(0, 1) == doctest::Approx(4.0).epsilon(1e-12));

    const double err = fd_err(x, [](Graph<double>& g, Value<double> v) { return g.frobenius_sq(v); });
    CHECK(err < 1e-8);
}

TEST_CASE("primitive adjoints agree with central finite differences") {
    std::mt19937_64 rng(42);
    const Matd a = random_matrix(5, 4, rng);
    const Matd b = random_matrix(4, 6, rng);
    const Matd c = random_matrix(5, 4, rng, 0.5, 2.0);

    SUBCASE("add/sub/mul/scale") {
        ParamStore<double> s;
        s.create("x", a);
        s.create("y", c);
        const FdReport r = finite_difference_check(s, [&](Graph<double>& g, Bound<double>& bd) {
            Value<double> x = bd("x"), y = bd("y");
            Value<double> z = g.scale(g.mul(g.add(x, y), g.sub(x, y)), 0.7);
            return g.frobenius_sq(z);
        }, 1e-4);
        CHECK(r.max_rel_err < 1e-6);
    }
    SUBCASE("matmul + transpose") {
        ParamStore<double> s;
        s.create("x", a);
        s.create("y", b);
        const FdReport r = finite_difference_check(s, [&](Graph<double>& g, Bound<double>& bd) {
            return g.frobenius_sq(g.transpose(g.matmul(bd("x"), bd("y"))));
        }, 1e-4);
        CHECK(r.max_rel_err < 1e-6);
    }
    SUBCASE("relu away from kinks") {
        const double err = fd_err(c, [](Graph<double>& g, Value<double> v) {
            return g.sum(g.relu(g.sub(v, g.leaf(Matrix<double>::Constant(v.rows(), v.cols(), 1.1)))));
        });
        CHECK(err < 1e-6);
    }
    SUBCASE("linear layer") {
        ParamStore<double> s;
        s.create("x", a);
        s.create("w", random_matrix(4, 3, rng));
        s.create("b", random_matrix(1, 3, rng));
        const FdReport r = finite_difference_check(s, [&](Graph<double>& g, Bound<double>& bd) {
            return g.frobenius_sq(g.linear(bd("x"), bd("w"), bd("b")));
        }, 1e-4);
        CHECK(r.max_rel_err < 1e-6);
    }
    SUBCASE("concat + slice") {
        ParamStore<double> s;
        s.create("x", a);
        const FdReport r = finite_difference_check(s, [&](Graph<double>& g, Bound<double>& bd) {
            Value<double> x = bd("x");
            Value<double> cat = g.concat_cols(x, g.scale(x, 2.0));
            return g.frobenius_sq(g.slice_cols(cat, 2, 4));
        }, 1e-4);
        CHECK(r.max_rel_err < 1e-6);
    }
    SUBCASE("gather + repeat + mean") {
        ParamStore<double> s;
        s.create("x", a);
        const FdReport r = finite_difference_check(s, [&](Graph<double>& g, Bound<double>& bd) {
            Value<double> x = bd("x");
            Value<double> gathered = g.gather_rows(x, {0, 2, 2, 4, 1});
            Value<double> rep = g.repeat_rows(g.rows_max(x), 3);
            return g.add(g.mean(gathered), g.frobenius_sq(rep));
        }, 1e-4);
        CHECK(r.max_rel_err < 1e-4);
    }
    SUBCASE("row_normalize and cosine matrix") {
        ParamStore<double> s;
        s.create("x", a);
        s.create("y", random_matrix(7, 4, rng));
        const FdReport r = finite_difference_check(s, [&](Graph<double>& g, Bound<double>& bd) {
            return g.frobenius_sq(cosine_matrix(g, bd("x"), bd("y")));
        }, 1e-4);
        CHECK(r.max_rel_err < 1e-5);
    }
}

TEST_CASE("row_softmax: values and adjoint") {
    SUBCASE("uniform rows for constant scores") {
        Graph<double> g;
        Value<double> pi = g.row_softmax(g.leaf(Matd::Constant(3, 5, 0.42)), 7.0);
        for (Eigen::Index i = 0; i < 3; ++i)
            for (Eigen::Index j = 0; j < 5; ++j)
                CHECK(pi.data()(i, j) == doctest::Approx(0.2).epsilon(1e-12));
    }
    SUBCASE("large temperature concentrates on the row max") {
        Matd s(1, 4);
        s << 0.1, 0.9, 0.3, 0.2;
        Graph<double> g;
        Value<double> pi = g.row_softmax(g.leaf(s), 1e3);
        CHECK(pi.data()(0, 1) >= 1.0 - 1e-6);
    }
    SUBCASE("rows sum to one for inputs up to 1e4") {
        std::mt19937_64 rng(1);
        Graph<float> g;
        const Matd big = random_matrix(8, 500, rng, -1e4, 1e4);
        Value<float> pi = g.row_softmax(g.leaf(big.cast<float>()), 7.0f);
        for (Eigen::Index i = 0; i < pi.rows(); ++i) {
            const double rowsum = pi.data().row(i).cast<double>().sum();
            CHECK(std::abs(rowsum - 1.0) < 1e-6);
        }
    }
    SUBCASE("adjoint vs finite differences at sigma 7") {
        std::mt19937_64 rng(9);
        const double err = fd_err(random_matrix(4, 6, rng), [](Graph<double>& g, Value<double> v) {
            Value<double> pi = g.row_softmax(v, 7.0);
            Matd w = Matd::Zero(4, 6);  // asymmetric weights make the adjoint non-trivial
            for (Eigen::Index i = 0; i < 4; ++i)
                for (Eigen::Index j = 0; j < 6; ++j) w(i, j) = 0.1 * static_cast<double>(i + 2 * j);
            return g.sum(g.mul(pi, g.leaf(w)));
        });
        CHECK(err < 1e-5);
    }
    SUBCASE("temperature must be positive") {
        Graph<double> g;
        CHECK_THROWS_AS(g.row_softmax(g.leaf(Matd::Zero(1, 2)), 0.0), std::invalid_argument);
    }
}

TEST_CASE("segment_max: componentwise max with lowest-index ties") {
    SUBCASE("parallel per-edge values reduce componentwise") {
        Graph<double> g;
        Matd vals(2, 2);
        vals << 1, -3, 2, -5;  // two parallel edges at one vertex
        Value<double> out = g.segment_max(g.leaf(vals), {0, 2});
        CHECK(out.data()(0, 0) == 2.0);
        CHECK(out.data()(0, 1) == -3.0);
    }
    SUBCASE("tie gradient goes to the lowest row") {
        Graph<double> g;
        Matd vals(2, 1);
        vals << 1.0, 1.0;
        Value<double> leaf = g.leaf(vals, true);
        Value<double> out = g.sum(g.segment_max(leaf, {0, 2}));
        g.backward(out);
        CHECK(g.grad_of(leaf.id)(0, 0) == 1.0);
        CHECK(g.grad_of(leaf.id)(1, 0) == 0.0);
    }
    SUBCASE("empty segment is an isolated vertex error") {
        Graph<double> g;
        CHECK_THROWS_AS(g.segment_max(g.leaf(Matd::Ones(2, 1)), {0, 0, 2}), std::invalid_argument);
    }
}

TEST_CASE("neighborhood_max over a mesh edge set") {
    const Mesh mesh = make_icosphere(0);  // 12 vertices
    const EdgeSet edges = edge_set(mesh);

    SUBCASE("constant transform yields constant rows") {
        Graph<double> g;
        Value<double> feats = g.leaf(mesh.vertices());
        Value<double> out = neighborhood_max(g, feats, edges, [&](Value<double> xi, Value<double>) {
            return g.leaf(Matd::Constant(xi.rows(), 2, 3.25));
        });
        CHECK(out.rows() == 12);
        CHECK((out.data().array() == 3.25).all());
    }
    SUBCASE("adjoint vs finite differences on a 12-vertex mesh") {
        ParamStore<double> s;
        s.create("feats", mesh.vertices());
        std::mt19937_64 rng(4);
        s.create("w", random_matrix(6, 3, rng));
        const FdReport r = finite_difference_check(s, [&](Graph<double>& g, Bound<double>& bd) {
            Value<double> out = neighborhood_max(g, bd("feats"), edges,
                                                 [&](Value<double> xi, Value<double> diff) {
                                                     return g.matmul(g.concat_cols(xi, diff), bd("w"));
                                                 });
            return g.frobenius_sq(out);
        }, 1e-4);
        CHECK(r.max_rel_err < 1e-4);
    }
}

TEST_CASE("global_max (rows_max)") {
    SUBCASE("single row is the identity") {
        Graph<double> g;
        Matd x(1, 3);
        x << 4, -2, 0.5;
        CHECK(g.rows_max(g.leaf(x)).data() == x);
    }
    SUBCASE("invariant to row permutation") {
        std::mt19937_64 rng(8);
        const Matd x = random_matrix(7, 5, rng);
        Matd perm(7, 5);
        const int order[7] = {3, 0, 6, 1, 5, 4, 2};
        for (int i = 0; i < 7; ++i) perm.row(i) = x.row(order[i]);
        Graph<double> g;
        CHECK(g.rows_max(g.leaf(x)).data() == g.rows_max(g.leaf(perm)).data());
    }
    SUBCASE("adjoint vs finite differences on 7x5") {
        std::mt19937_64 rng(10);
        const double err = fd_err(random_matrix(7, 5, rng), [](Graph<double>& g, Value<double> v) {
            Matd w(1, 5);
            w << 1, -2, 0.5, 3, -1.5;
            return g.sum(g.mul(g.rows_max(v), g.leaf(w)));
        });
        CHECK(err < 1e-4);
    }
}

TEST_CASE("finite_difference_check flags relu kinks at exactly zero") {
    Matd x(1, 3);
    x << 0.0, 0.7, -0.4;  // first entry sits exactly on the kink
    ParamStore<double> s = store_with("x", x);
    const FdReport r = finite_difference_check(
        s, [&](Graph<double>& g, Bound<double>& bd) { return g.sum(g.relu(bd("x"))); }, 1e-4);
    REQUIRE(r.params.size() == 1);
    CHECK(r.params[0].skipped_kinks >= 1);
    CHECK(r.max_rel_err < 1e-6);  // the remaining entries still check out
}

TEST_CASE("finite_difference_check rejects non-scalar graphs") {
    ParamStore<double> s = store_with("x", Matd::Ones(2, 2));
    CHECK_THROWS_AS(finite_difference_check(
                        s, [&](Graph<double>& g, Bound<double>& bd) { return g.relu(bd("x")); }, 1e-4),
                    std::invalid_argument);
}

TEST_CASE("backward pass is deterministic: identical graphs, bit-identical gradients") {
    std::mt19937_64 rng(77);
    const Matd x = random_matrix(6, 4, rng);
    auto run = [&]() {
        ParamStore<float> s;
        s.create("x", x.cast<float>());
        Graph<float> g;
        Bound<float> bind(g, s);
        Value<float> v = bind("x");
        Value<float> loss = g.frobenius_sq(g.row_softmax(g.matmul(v, g.transpose(v)), 3.0f));
        g.backward(loss);
        return Matf(g.grad_of(v.id));
    };
    const Matf g1 = run(), g2 = run();
    CHECK(std::memcmp(g1.data(), g2.data(), sizeof(float) * static_cast<std::size_t>(g1.size())) == 0);
}

TEST_CASE("backward visits each node once (diamond reuse accumulates exactly)") {
    // loss = sum(x + x) => d/dx = 2 exactly
    Graph<double> g;
    Value<double> x = g.leaf(Matd::Ones(2, 2), true);
    Value<double> loss = g.sum(g.add(x, x));
    g.backward(loss);
    CHECK((g.grad_of(x.id).array() == 2.0).all());
}

TEST_CASE("ParamStore: unique names, zero-lr Adam is a no-op on values") {
    ParamStore<float> s;
    s.create("w", Matf::Ones(2, 2));
    CHECK_THROWS_AS(s.create("w", Matf::Ones(1, 1)), std::invalid_argument);

    s.at("w").grad = Matf::Constant(2, 2, 0.5f);
    const Matf before = s.at("w").value;
    s.adam_step(AdamSettings{0.0, 0.9, 0.999, 1e-8});
    CHECK(s.at("w").value == before);
    CHECK(s.step_count() == 1);

    s.at("w").grad = Matf::Constant(2, 2, 0.5f);
    s.adam_step(AdamSettings{0.1, 0.9, 0.999, 1e-8});
    CHECK(s.at("w").value != before);
}

TEST_CASE("checkpoint: bit-exact round trip including optimizer state") {
    auto dir = scratch_dir("ckpt");
    std::mt19937_64 rng(5);
    ParamStore<float> s;
    s.create("a.w", glorot_uniform<float>(7, 3, rng));
    s.create("a.b", Matf::Zero(1, 3));
    s.at("a.w").m = glorot_uniform<float>(7, 3, rng);
    s.at("a.w").v = glorot_uniform<float>(7, 3, rng).cwiseAbs();
    s.set_step_count(123);

    const std::string echo = "epochs=3\nsigma=7\n";
    save_checkpoint(s, echo, dir / "c.bin");
    const Checkpoint back = load_checkpoint(dir / "c.bin");
    CHECK(back.config_echo == echo);
    CHECK(back.params.step_count() == 123);
    REQUIRE(back.params.entries().size() == 2);
    for (std::size_t i = 0; i < 2; ++i) {
        const auto& e0 = s.entries()[i];
        const auto& e1 = back.params.entries()[i];
        CHECK(e0.name == e1.name);
        CHECK(std::memcmp(e0.value.data(), e1.value.data(),
                          sizeof(float) * static_cast<std::size_t>(e0.value.size())) == 0);
        CHECK(std::memcmp(e0.m.data(), e1.m.data(),
                          sizeof(float) * static_cast<std::size_t>(e0.m.size())) == 0);
        CHECK(std::memcmp(e0.v.data(), e1.v.data(),
                          sizeof(float) * static_cast<std::size_t>(e0.v.size())) == 0);
    }

    // Re-saving the loaded store reproduces the file byte for byte.
    save_checkpoint(back.params, back.config_echo, dir / "c2.bin");
    std::ifstream f1(dir / "c.bin", std::ios::binary), f2(dir / "c2.bin", std::ios::binary);
    std::stringstream b1, b2;
    b1 << f1.rdbuf();
    b2 << f2.rdbuf();
    CHECK(b1.str() == b2.str());
}
