#include <shapemorph/geodesic.hpp>

#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <limits>
#include <queue>
#include <stdexcept>
#include <thread>
#include <vector>

namespace shapemorph {

namespace {

void dijkstra_row(const EdgeSet& edges, const std::vector<double>& edge_len,
                  const std::vector<std::size_t>& edge_len_offset, int source, double* row,
                  Eigen::Index n) {
    for (Eigen::Index i = 0; i < n; ++i) row[i] = std::numeric_limits<double>::infinity();
    row[source] = 0.0;
    using Item = std::pair<double, int>;
    std::priority_queue<Item, std::vector<Item>, std::greater<>> heap;
    heap.emplace(0.0, source);
    while (!heap.empty()) {
        const auto [d, u] = heap.top();
        heap.pop();
        if (d > row[u]) continue;
        const int* nb = edges.begin(u);
        const int deg = edges.degree(u);
        const double* len = edge_len.data() + edge_len_offset[static_cast<std::size_t>(u)];
        for (int k = 0; k < deg; ++k) {
            const double nd = d + len[k];
            if (nd < row[nb[k]]) {
                row[nb[k]] = nd;
                heap.emplace(nd, nb[k]);
            }
        }
    }
}

}  // namespace

DenseDistances geodesic_matrix(const Mesh& mesh, Eigen::Index vertex_cap) {
    const Eigen::Index n = mesh.vertex_count();
    if (n > vertex_cap)
        throw std::invalid_argument("geodesic_matrix: mesh has " + std::to_string(n) +
                                    " vertices, cap is " + std::to_string(vertex_cap) +
                                    " (decimate first)");
    const EdgeSet edges = edge_set(mesh);

    // Precompute per-neighbor Euclidean lengths aligned with the CSR layout.
    std::vector<double> edge_len(edges.pair_count());
    const auto& offsets = edges.offsets();
    for (Eigen::Index i = 0; i < n; ++i) {
        const int* nb = edges.begin(i);
        for (int k = 0; k < edges.degree(i); ++k)
            edge_len[offsets[static_cast<std::size_t>(i)] + static_cast<std::size_t>(k)] =
                (mesh.vertices().row(i) - mesh.vertices().row(nb[k])).norm();
    }

    DenseDistances out;
    out.dist.resize(n, n);

    const unsigned hw = std::max(1u, std::thread::hardware_concurrency());
    const unsigned workers = static_cast<unsigned>(std::min<Eigen::Index>(hw, n));
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (unsigned w = 0; w < workers; ++w) {
        pool.emplace_back([&, w]() {
            for (Eigen::Index src = w; src < n; src += workers)
                dijkstra_row(edges, edge_len, offsets, static_cast<int>(src),
                             out.dist.row(src).data(), n);
        });
    }
    for (auto& t : pool) t.join();

    if (!out.dist.allFinite())
        throw std::runtime_error("geodesic_matrix: mesh is disconnected (unreachable vertex)");

    out.dist /= std::sqrt(surface_area(mesh));
    return out;
}

double match_error(Eigen::Index pred_j, Eigen::Index gt_j, const DenseDistances& target) {
    const Eigen::Index n = target.size();
    if (pred_j < 0 || pred_j >= n || gt_j < 0 || gt_j >= n)
        throw std::out_of_range("match_error: index out of range");
    return target.dist(pred_j, gt_j);
}

namespace {
constexpr std::uint32_t kCacheMagic = 0x44474d53u;  // "SMGD"
constexpr std::uint32_t kCacheVersion = 1;

std::uint32_t mesh_hash32(const Mesh& mesh) {
    const std::uint64_t h = mesh.content_hash();
    return static_cast<std::uint32_t>(h ^ (h >> 32));
}
}  // namespace

void save_distance_cache(const DenseDistances& d, const Mesh& mesh, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    const std::uint32_t header[4] = {kCacheMagic, kCacheVersion, static_cast<std::uint32_t>(d.size()),
                                     mesh_hash32(mesh)};
    out.write(reinterpret_cast<const char*>(header), sizeof(header));
    Matf entries = d.dist.cast<float>();
    out.write(reinterpret_cast<const char*>(entries.data()),
              static_cast<std::streamsize>(sizeof(float) * static_cast<std::size_t>(entries.size())));
    if (!out.good()) throw std::runtime_error("I/O failure writing " + path.string());
}

bool load_distance_cache(DenseDistances& d, const Mesh& mesh, const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) return false;
    std::uint32_t header[4];
    if (!in.read(reinterpret_cast<char*>(header), sizeof(header))) return false;
    if (header[0] != kCacheMagic || header[1] != kCacheVersion) return false;
    if (header[2] != static_cast<std::uint32_t>(mesh.vertex_count())) return false;
    if (header[3] != mesh_hash32(mesh)) return false;  // stale cache
    const Eigen::Index n = static_cast<Eigen::Index>(header[2]);
    Matf entries(n, n);
    if (!in.read(reinterpret_cast<char*>(entries.data()),
                 static_cast<std::streamsize>(sizeof(float) * static_cast<std::size_t>(entries.size()))))
        return false;
    d.dist = entries.cast<double>();
    return true;
}

DenseDistances geodesic_matrix_cached(const Mesh& mesh, const std::filesystem::path& cache_path) {
    DenseDistances d;
    if (load_distance_cache(d, mesh, cache_path)) return d;
    d = geodesic_matrix(mesh);
    save_distance_cache(d, mesh, cache_path);
    return d;
}

}  // namespace shapemorph
