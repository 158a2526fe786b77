#include <shapemorph/mesh.hpp>

#include <Eigen/Geometry>

#include <algorithm>
#include <array>
#include <cmath>
#include <random>
#include <set>
#include <stdexcept>
#include <tuple>

namespace shapemorph {

Mesh::Mesh(Matd vertices, Eigen::Matrix<int, Eigen::Dynamic, 3, Eigen::RowMajor> faces,
           std::string name)
    : vertices_(std::move(vertices)), faces_(std::move(faces)), name_(std::move(name)) {
    if (vertices_.cols() != 3) throw std::invalid_argument("mesh: vertices must be n x 3");
    if (faces_.rows() == 0) throw std::invalid_argument("mesh: invariant violation: no faces");
    const int n = static_cast<int>(vertices_.rows());
    std::vector<char> referenced(static_cast<std::size_t>(n), 0);
    for (Eigen::Index f = 0; f < faces_.rows(); ++f) {
        const int a = faces_(f, 0), b = faces_(f, 1), c = faces_(f, 2);
        if (a < 0 || a >= n || b < 0 || b >= n || c < 0 || c >= n)
            throw std::invalid_argument("mesh: face index out of range");
        if (a == b || b == c || a == c)
            throw std::invalid_argument("mesh: degenerate face (repeated vertex index)");
        referenced[static_cast<std::size_t>(a)] = 1;
        referenced[static_cast<std::size_t>(b)] = 1;
        referenced[static_cast<std::size_t>(c)] = 1;
    }
    for (int v = 0; v < n; ++v)
        if (!referenced[static_cast<std::size_t>(v)])
            throw std::invalid_argument("mesh: isolated vertex " + std::to_string(v));
}

std::uint64_t Mesh::content_hash() const {
    std::uint64_t h = fnv1a(vertices_.data(), sizeof(double) * static_cast<std::size_t>(vertices_.size()));
    return fnv1a(faces_.data(), sizeof(int) * static_cast<std::size_t>(faces_.size()), h);
}

EdgeSet EdgeSet::from_faces(const Eigen::Matrix<int, Eigen::Dynamic, 3, Eigen::RowMajor>& faces,
                            Eigen::Index vertex_count) {
    std::vector<std::set<int>> adj(static_cast<std::size_t>(vertex_count));
    for (Eigen::Index f = 0; f < faces.rows(); ++f) {
        const int v[3] = {faces(f, 0), faces(f, 1), faces(f, 2)};
        for (int e = 0; e < 3; ++e) {
            const int a = v[e], b = v[(e + 1) % 3];
            adj[static_cast<std::size_t>(a)].insert(b);
            adj[static_cast<std::size_t>(b)].insert(a);
        }
    }
    EdgeSet es;
    es.offsets_.resize(static_cast<std::size_t>(vertex_count) + 1, 0);
    std::size_t total = 0;
    for (Eigen::Index i = 0; i < vertex_count; ++i) {
        total += adj[static_cast<std::size_t>(i)].size();
        es.offsets_[static_cast<std::size_t>(i) + 1] = total;
    }
    es.neighbors_.reserve(total);
    for (auto& s : adj) es.neighbors_.insert(es.neighbors_.end(), s.begin(), s.end());
    return es;
}

std::vector<std::pair<int, int>> EdgeSet::pairs() const {
    std::vector<std::pair<int, int>> out;
    out.reserve(neighbors_.size());
    for (Eigen::Index i = 0; i < vertex_count(); ++i)
        for (const int* j = begin(i); j != end(i); ++j) out.emplace_back(static_cast<int>(i), *j);
    return out;
}

EdgeSet edge_set(const Mesh& mesh) { return EdgeSet::from_faces(mesh.faces(), mesh.vertex_count()); }

VertexNormals vertex_normals(const Mesh& mesh) {
    const Matd& v = mesh.vertices();
    Matd acc = Matd::Zero(v.rows(), 3);
    for (Eigen::Index f = 0; f < mesh.face_count(); ++f) {
        const int a = mesh.faces()(f, 0), b = mesh.faces()(f, 1), c = mesh.faces()(f, 2);
        const Vec3d p0 = v.row(a), p1 = v.row(b), p2 = v.row(c);
        // Cross product of edge vectors = 2 * area * unit normal, so summing
        // raw cross products is exactly area weighting.
        const Vec3d w = (p1 - p0).cross(p2 - p0);
        acc.row(a) += w.transpose();
        acc.row(b) += w.transpose();
        acc.row(c) += w.transpose();
    }
    for (Eigen::Index i = 0; i < acc.rows(); ++i) {
        const double norm = acc.row(i).norm();
        if (norm < 1e-20)
            acc.row(i) << 0.0, 0.0, 1.0;
        else
            acc.row(i) /= norm;
    }
    return VertexNormals{std::move(acc)};
}

double surface_area(const Mesh& mesh) {
    const Matd& v = mesh.vertices();
    double area = 0.0;
    for (Eigen::Index f = 0; f < mesh.face_count(); ++f) {
        const Vec3d p0 = v.row(mesh.faces()(f, 0));
        const Vec3d p1 = v.row(mesh.faces()(f, 1));
        const Vec3d p2 = v.row(mesh.faces()(f, 2));
        area += 0.5 * (p1 - p0).cross(p2 - p0).norm();
    }
    return area;
}

namespace {

struct CollapseMesh {
    std::vector<Vec3d> pos;
    std::vector<std::array<int, 3>> faces;
    std::vector<char> alive;        // vertex alive flag
    std::vector<int> origin;        // surviving identity (original index)
};

std::vector<std::set<int>> build_adjacency(const CollapseMesh& m) {
    std::vector<std::set<int>> adj(m.pos.size());
    for (const auto& f : m.faces) {
        if (f[0] < 0) continue;  // deleted face
        for (int e = 0; e < 3; ++e) {
            adj[static_cast<std::size_t>(f[e])].insert(f[(e + 1) % 3]);
            adj[static_cast<std::size_t>(f[(e + 1) % 3])].insert(f[e]);
        }
    }
    return adj;
}

}  // namespace

DecimateResult decimate(const Mesh& mesh, double keep_fraction, std::uint64_t seed) {
    const int n = static_cast<int>(mesh.vertex_count());
    if (!(keep_fraction > 0.0 && keep_fraction <= 1.0))
        throw std::invalid_argument("decimate: keep_fraction must be in (0,1]");
    const int target = static_cast<int>(std::ceil(keep_fraction * n));
    if (target < 4) throw std::invalid_argument("decimate: target below 4 vertices");

    if (target >= n) {
        std::vector<int> ident(static_cast<std::size_t>(n));
        for (int i = 0; i < n; ++i) ident[static_cast<std::size_t>(i)] = i;
        return DecimateResult{mesh, std::move(ident)};
    }

    CollapseMesh m;
    m.pos.resize(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) m.pos[static_cast<std::size_t>(i)] = mesh.vertices().row(i);
    m.faces.resize(static_cast<std::size_t>(mesh.face_count()));
    for (Eigen::Index f = 0; f < mesh.face_count(); ++f)
        m.faces[static_cast<std::size_t>(f)] = {mesh.faces()(f, 0), mesh.faces()(f, 1), mesh.faces()(f, 2)};
    m.alive.assign(static_cast<std::size_t>(n), 1);
    m.origin.resize(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) m.origin[static_cast<std::size_t>(i)] = i;

    std::mt19937_64 rng(seed);
    int remaining = n;

    while (remaining > target) {
        auto adj = build_adjacency(m);
        // Candidate undirected edges sorted by length.
        std::vector<std::tuple<double, int, int>> edges;
        for (int i = 0; i < n; ++i) {
            if (!m.alive[static_cast<std::size_t>(i)]) continue;
            for (int j : adj[static_cast<std::size_t>(i)])
                if (j > i) edges.emplace_back((m.pos[static_cast<std::size_t>(i)] - m.pos[static_cast<std::size_t>(j)]).norm(), i, j);
        }
        if (edges.empty()) throw std::runtime_error("decimate: stalled (no collapsible edges)");
        std::sort(edges.begin(), edges.end());
        const std::size_t pool = std::max<std::size_t>(1, edges.size() / 5);

        bool collapsed = false;
        // Pick among the shortest 20%; skip candidates that fail the link
        // condition and retry within the pool.
        std::vector<std::size_t> order(pool);
        for (std::size_t k = 0; k < pool; ++k) order[k] = k;
        while (!order.empty()) {
            const std::size_t pick = uniform_index(rng, order.size());
            const auto [len, i, j] = edges[order[pick]];
            order.erase(order.begin() + static_cast<std::ptrdiff_t>(pick));
            (void)len;

            // Link condition: common neighbors of i and j must be exactly the
            // opposite vertices of faces containing edge (i,j).
            std::set<int> common;
            std::set_intersection(adj[static_cast<std::size_t>(i)].begin(), adj[static_cast<std::size_t>(i)].end(),
                                  adj[static_cast<std::size_t>(j)].begin(), adj[static_cast<std::size_t>(j)].end(),
                                  std::inserter(common, common.begin()));
            std::set<int> wing;
            for (const auto& f : m.faces) {
                if (f[0] < 0) continue;
                const bool has_i = f[0] == i || f[1] == i || f[2] == i;
                const bool has_j = f[0] == j || f[1] == j || f[2] == j;
                if (has_i && has_j)
                    for (int e = 0; e < 3; ++e)
                        if (f[e] != i && f[e] != j) wing.insert(f[e]);
            }
            if (common != wing) continue;

            // Collapse j into i at the midpoint; survivor keeps i's identity.
            m.pos[static_cast<std::size_t>(i)] = 0.5 * (m.pos[static_cast<std::size_t>(i)] + m.pos[static_cast<std::size_t>(j)]);
            m.alive[static_cast<std::size_t>(j)] = 0;
            for (auto& f : m.faces) {
                if (f[0] < 0) continue;
                bool has_i = false, has_j = false;
                for (int e = 0; e < 3; ++e) {
                    has_i |= f[e] == i;
                    has_j |= f[e] == j;
                }
                if (has_i && has_j) {
                    f = {-1, -1, -1};
                } else if (has_j) {
                    for (int e = 0; e < 3; ++e)
                        if (f[e] == j) f[e] = i;
                }
            }
            --remaining;
            collapsed = true;
            break;
        }
        if (!collapsed) throw std::runtime_error("decimate: stalled (no valid collapse in pool)");
    }

    // Compact surviving vertices; drop any vertex left without a face.
    std::vector<char> used(static_cast<std::size_t>(n), 0);
    for (const auto& f : m.faces)
        if (f[0] >= 0)
            for (int e = 0; e < 3; ++e) used[static_cast<std::size_t>(f[e])] = 1;

    std::vector<int> remap(static_cast<std::size_t>(n), -1);
    std::vector<int> vertex_map;
    int out_n = 0;
    for (int i = 0; i < n; ++i) {
        if (m.alive[static_cast<std::size_t>(i)] && used[static_cast<std::size_t>(i)]) {
            remap[static_cast<std::size_t>(i)] = out_n++;
            vertex_map.push_back(m.origin[static_cast<std::size_t>(i)]);
        }
    }
    Matd verts(out_n, 3);
    for (int i = 0; i < n; ++i)
        if (remap[static_cast<std::size_t>(i)] >= 0)
            verts.row(remap[static_cast<std::size_t>(i)]) = m.pos[static_cast<std::size_t>(i)].transpose();

    std::vector<std::array<int, 3>> out_faces;
    for (const auto& f : m.faces)
        if (f[0] >= 0)
            out_faces.push_back({remap[static_cast<std::size_t>(f[0])], remap[static_cast<std::size_t>(f[1])],
                                 remap[static_cast<std::size_t>(f[2])]});
    Eigen::Matrix<int, Eigen::Dynamic, 3, Eigen::RowMajor> fmat(static_cast<Eigen::Index>(out_faces.size()), 3);
    for (std::size_t f = 0; f < out_faces.size(); ++f)
        fmat.row(static_cast<Eigen::Index>(f)) << out_faces[f][0], out_faces[f][1], out_faces[f][2];

    return DecimateResult{Mesh(std::move(verts), std::move(fmat), mesh.name()), std::move(vertex_map)};
}

Mesh rotate_azimuth(const Mesh& mesh, double angle) {
    const double c = std::cos(angle), s = std::sin(angle);
    Matd v = mesh.vertices();
    for (Eigen::Index i = 0; i < v.rows(); ++i) {
        const double x = v(i, 0), z = v(i, 2);
        v(i, 0) = c * x + s * z;
        v(i, 2) = -s * x + c * z;
    }
    return Mesh(std::move(v), mesh.faces(), mesh.name());
}

}  // namespace shapemorph
