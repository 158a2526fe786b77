#pragma once

#include <shapemorph/mesh.hpp>

#include <filesystem>

namespace shapemorph {

/// All-pairs geodesic distances on the triangle edge graph, divided by
/// sqrt(surface area) so shapes of different scale are comparable.
struct DenseDistances {
    Matd dist;  // n x n, symmetric, zero diagonal
    Eigen::Index size() const { return dist.rows(); }
    double diameter() const { return dist.maxCoeff(); }
};

inline constexpr Eigen::Index kGeodesicVertexCap = 5000;

/// Exact edge-graph metric: one Dijkstra per source vertex, Euclidean edge
/// lengths, area-normalized. Sources run in parallel (one matrix row each).
/// Throws on a disconnected mesh or when n exceeds the cap.
DenseDistances geodesic_matrix(const Mesh& mesh, Eigen::Index vertex_cap = kGeodesicVertexCap);

/// Princeton-protocol per-vertex error: the (area-normalized) geodesic
/// distance on the target mesh between predicted and ground-truth match.
double match_error(Eigen::Index pred_j, Eigen::Index gt_j, const DenseDistances& target_distances);

/// Binary cache: 16-byte header (magic, version, n, mesh content hash32)
/// followed by row-major 32-bit entries. Stale hashes invalidate the file.
void save_distance_cache(const DenseDistances& d, const Mesh& mesh, const std::filesystem::path& path);
bool load_distance_cache(DenseDistances& d, const Mesh& mesh, const std::filesystem::path& path);

/// Compute through the cache file when given one; recompute on miss.
DenseDistances geodesic_matrix_cached(const Mesh& mesh, const std::filesystem::path& cache_path);

}  // namespace shapemorph
