#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <shapemorph/mesh.hpp>
#include <shapemorph/mesh_io.hpp>
#include <shapemorph/synthgen.hpp>

#include "test_util.hpp"

#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

using namespace shapemorph;
using namespace smtest;

namespace {

std::string slurp(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

Mesh default_capsule() {
    PoseSpec spec;
    spec.bend_angles = {0.4, -0.3};
    return make_pose(spec);
}

}  // namespace

TEST_CASE("load_mesh: single-triangle OFF") {
    auto dir = scratch_dir("mesh_off");
    {
        std::ofstream out(dir / "tri.off");
        out << "OFF\n3 1 0\n0 0 0\n1 0 0\n0 1 0\n3 0 1 2\n";
    }
    const Mesh m = load_mesh(dir / "tri.off", MeshFormat::Off);
    CHECK(m.vertex_count() == 3);
    CHECK(m.face_count() == 1);
}

TEST_CASE("load_mesh: out-of-range face index is rejected") {
    auto dir = scratch_dir("mesh_badidx");
    {
        std::ofstream out(dir / "bad.off");
        out << "OFF\n3 1 0\n0 0 0\n1 0 0\n0 1 0\n3 0 1 5\n";
    }
    CHECK_THROWS_WITH_AS(load_mesh(dir / "bad.off", MeshFormat::Off),
                         doctest::Contains("index out of range"), std::invalid_argument);
}

TEST_CASE("load_mesh: isolated vertex is rejected") {
    auto dir = scratch_dir("mesh_isolated");
    {
        std::ofstream out(dir / "iso.off");
        out << "OFF\n4 1 0\n0 0 0\n1 0 0\n0 1 0\n5 5 5\n3 0 1 2\n";
    }
    CHECK_THROWS_AS(load_mesh(dir / "iso.off", MeshFormat::Off), std::invalid_argument);
}

TEST_CASE("load_mesh: degenerate face index triple is rejected") {
    Matd v(3, 3);
    v << 0, 0, 0, 1, 0, 0, 0, 1, 0;
    Eigen::Matrix<int, Eigen::Dynamic, 3, Eigen::RowMajor> f(1, 3);
    f << 0, 1, 1;
    CHECK_THROWS_AS(Mesh(v, f), std::invalid_argument);
}

TEST_CASE("load_mesh: unit tetrahedron OBJ round-trips") {
    auto dir = scratch_dir("mesh_obj");
    {
        std::ofstream out(dir / "tet.obj");
        out << "v 0 0 0\nv 1 0 0\nv 0 1 0\nv 0 0 1\n"
            << "f 1 3 2\nf 1 2 4\nf 2 3 4\nf 1 4 3\n";
    }
    const Mesh m = load_mesh(dir / "tet.obj");
    CHECK(m.vertex_count() == 4);
    CHECK(m.face_count() == 4);
    save_mesh(m, dir / "tet2.obj");
    const Mesh m2 = load_mesh(dir / "tet2.obj");
    CHECK(m2.faces() == m.faces());
    CHECK((m2.vertices() - m.vertices()).cwiseAbs().maxCoeff() < 1e-6);
}

TEST_CASE("save_mesh: round-trip through all three formats") {
    auto dir = scratch_dir("mesh_roundtrip");
    const Mesh m = make_tetrahedron();
    for (auto [fmt, ext] : {std::pair{MeshFormat::Off, ".off"}, {MeshFormat::Obj, ".obj"},
                            {MeshFormat::PlyAscii, ".ply"}}) {
        const auto path = dir / (std::string("tet") + ext);
        save_mesh(m, path, fmt);
        const Mesh back = load_mesh(path, fmt);
        CHECK(back.faces() == m.faces());
        CHECK((back.vertices() - m.vertices()).cwiseAbs().maxCoeff() < 1e-6);
    }
}

TEST_CASE("save_mesh: zero faces violates the invariant") {
    Matd v(3, 3);
    v << 0, 0, 0, 1, 0, 0, 0, 1, 0;
    Eigen::Matrix<int, Eigen::Dynamic, 3, Eigen::RowMajor> f(0, 3);
    CHECK_THROWS_AS(Mesh(v, f), std::invalid_argument);
}

TEST_CASE("save_mesh: capsule re-save is byte-stable") {
    auto dir = scratch_dir("mesh_stable");
    const Mesh m = default_capsule();
    CHECK(m.vertex_count() == 482);
    for (auto [fmt, ext] : {std::pair{MeshFormat::Off, ".off"}, {MeshFormat::Obj, ".obj"},
                            {MeshFormat::PlyAscii, ".ply"}}) {
        const auto p1 = dir / (std::string("c1") + ext);
        const auto p2 = dir / (std::string("c2") + ext);
        save_mesh(m, p1, fmt);
        save_mesh(load_mesh(p1, fmt), p2, fmt);
        CHECK(slurp(p1) == slurp(p2));
    }
}

TEST_CASE("load_mesh: binary ply is rejected with a clear error") {
    auto dir = scratch_dir("mesh_binply");
    {
        std::ofstream out(dir / "b.ply");
        out << "ply\nformat binary_little_endian 1.0\nelement vertex 0\nend_header\n";
    }
    CHECK_THROWS_WITH_AS(load_mesh(dir / "b.ply"), doctest::Contains("binary PLY"), std::runtime_error);
}

TEST_CASE("edge_set: counts on canonical meshes") {
    CHECK(edge_set(make_triangle()).pair_count() == 6);
    CHECK(edge_set(make_tetrahedron()).pair_count() == 12);
}

TEST_CASE("edge_set: symmetric and matches a brute-force face scan on the capsule") {
    const Mesh m = default_capsule();
    const EdgeSet es = edge_set(m);
    std::set<std::pair<int, int>> undirected;
    for (Eigen::Index f = 0; f < m.face_count(); ++f)
        for (int e = 0; e < 3; ++e) {
            int a = m.faces()(f, e), b = m.faces()(f, (e + 1) % 3);
            undirected.insert({std::min(a, b), std::max(a, b)});
        }
    CHECK(es.pair_count() == 2 * undirected.size());
    CHECK(es.pair_count() % 2 == 0);
    for (auto [i, j] : es.pairs()) {
        const int* lo = es.begin(j);
        const int* hi = es.end(j);
        CHECK(std::find(lo, hi, i) != hi);  // (i,j) present => (j,i) present
    }
}

TEST_CASE("vertex_normals: flat square is all +z") {
    const VertexNormals n = vertex_normals(make_flat_square());
    for (Eigen::Index i = 0; i < n.normals.rows(); ++i) {
        CHECK(n.normals(i, 2) == doctest::Approx(1.0));
        CHECK(std::abs(n.normals.row(i).norm() - 1.0) < 1e-6);
    }
}

TEST_CASE("vertex_normals: icosphere normals align with radial directions") {
    const Mesh s = make_icosphere(2);
    const VertexNormals n = vertex_normals(s);
    for (Eigen::Index i = 0; i < s.vertex_count(); ++i) {
        const Vec3d radial = s.vertices().row(i).normalized();
        const double cosang = n.normals.row(i).dot(radial.transpose());
        CHECK(cosang > std::cos(5.0 * M_PI / 180.0));
    }
}

TEST_CASE("vertex_normals: equivariant under rotation") {
    std::mt19937_64 rng(7);
    const Mesh m = default_capsule();
    const Mat3d r = random_rotation(rng);
    const Mesh rotated = transform(m, r, Vec3d::Zero());
    const Matd expected = vertex_normals(m).normals * r.transpose();
    CHECK((vertex_normals(rotated).normals - expected).cwiseAbs().maxCoeff() < 1e-6);
}

TEST_CASE("surface_area: right triangle, additivity, icosphere") {
    CHECK(surface_area(make_triangle()) == doctest::Approx(0.5));

    Matd v(6, 3);
    v << 0, 0, 0, 1, 0, 0, 0, 1, 0, 5, 5, 5, 6, 5, 5, 5, 6, 5;
    Eigen::Matrix<int, Eigen::Dynamic, 3, Eigen::RowMajor> f(2, 3);
    f << 0, 1, 2, 3, 4, 5;
    CHECK(surface_area(Mesh(v, f)) == doctest::Approx(1.0));

    const double sphere = surface_area(make_icosphere(3));
    CHECK(sphere == doctest::Approx(4.0 * M_PI).epsilon(0.02));
}

TEST_CASE("surface_area: rigid invariance") {
    std::mt19937_64 rng(3);
    const Mesh m = default_capsule();
    const Mesh moved = transform(m, random_rotation(rng), Vec3d(0.3, -2.0, 5.0));
    CHECK(std::abs(surface_area(m) - surface_area(moved)) < 1e-9);
}

TEST_CASE("decimate: keep_fraction 1 is the identity") {
    const Mesh m = make_tetrahedron();
    const DecimateResult r = decimate(m, 1.0, 42);
    CHECK(r.mesh.vertices() == m.vertices());
    CHECK(r.mesh.faces() == m.faces());
    for (std::size_t i = 0; i < r.vertex_map.size(); ++i) CHECK(r.vertex_map[i] == static_cast<int>(i));
}

TEST_CASE("decimate: capsule to 80% is deterministic and valid") {
    const Mesh m = default_capsule();
    const DecimateResult a = decimate(m, 0.8, 7);
    CHECK(a.mesh.vertex_count() == 386);  // ceil(0.8 * 482)
    CHECK(a.vertex_map.size() == 386);

    const DecimateResult b = decimate(m, 0.8, 7);
    CHECK(a.mesh.vertices() == b.mesh.vertices());
    CHECK(a.mesh.faces() == b.mesh.faces());

    // Pinned content: decimation is part of the reproducibility contract.
    const std::uint64_t h = a.mesh.content_hash();
    CHECK(hex64(h) == "6e0f52e8208a7504");

    const DecimateResult c = decimate(m, 0.8, 8);
    CHECK(c.mesh.content_hash() != h);  // different seed, different meshing
}

TEST_CASE("decimate: target below 4 vertices is rejected") {
    CHECK_THROWS_AS(decimate(make_tetrahedron(), 0.5, 1), std::invalid_argument);
}

TEST_CASE("rotate_azimuth: identity, full turn, quarter turn") {
    const Mesh m = default_capsule();
    CHECK((rotate_azimuth(m, 0.0).vertices() - m.vertices()).cwiseAbs().maxCoeff() == 0.0);
    CHECK((rotate_azimuth(m, 2.0 * M_PI).vertices() - m.vertices()).cwiseAbs().maxCoeff() < 1e-9);

    Matd v(3, 3);
    v << 1, 0, 0, 0, 1, 0, 0, 0, 1;
    Eigen::Matrix<int, Eigen::Dynamic, 3, Eigen::RowMajor> f(1, 3);
    f << 0, 1, 2;
    const Mesh rot = rotate_azimuth(Mesh(v, f), M_PI / 2.0);
    CHECK(rot.vertices()(0, 0) == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(rot.vertices()(0, 1) == doctest::Approx(0.0));
    CHECK(rot.vertices()(0, 2) == doctest::Approx(-1.0));
    CHECK(rot.faces() == f);
}
