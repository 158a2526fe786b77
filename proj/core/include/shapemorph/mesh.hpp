#pragma once

#include <shapemorph/tensor.hpp>

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

namespace shapemorph {

/// Triangle mesh: vertex positions and 0-based face indices.
/// Construction validates the invariants (indices in range, no degenerate
/// index triples, no isolated vertices); a Mesh that exists is valid.
class Mesh {
public:
    Mesh() = default;
    Mesh(Matd vertices, Eigen::Matrix<int, Eigen::Dynamic, 3, Eigen::RowMajor> faces,
         std::string name = "");

    const Matd& vertices() const { return vertices_; }
    const Eigen::Matrix<int, Eigen::Dynamic, 3, Eigen::RowMajor>& faces() const { return faces_; }
    const std::string& name() const { return name_; }

    Eigen::Index vertex_count() const { return vertices_.rows(); }
    Eigen::Index face_count() const { return faces_.rows(); }

    /// FNV-1a over vertex and face bytes; stable content identity.
    std::uint64_t content_hash() const;

private:
    Matd vertices_;  // n x 3
    Eigen::Matrix<int, Eigen::Dynamic, 3, Eigen::RowMajor> faces_;  // f x 3
    std::string name_;
};

/// Symmetric directed edge relation derived from triangle faces, stored CSR
/// style: for vertex i, neighbors() spans neighbor_offsets[i]..[i+1], sorted
/// ascending. pairs() enumerates directed edges grouped by source vertex.
class EdgeSet {
public:
    EdgeSet() = default;
    static EdgeSet from_faces(const Eigen::Matrix<int, Eigen::Dynamic, 3, Eigen::RowMajor>& faces,
                              Eigen::Index vertex_count);

    Eigen::Index vertex_count() const { return static_cast<Eigen::Index>(offsets_.size()) - 1; }
    std::size_t pair_count() const { return neighbors_.size(); }

    /// Neighbors of i, ascending.
    const int* begin(Eigen::Index i) const { return neighbors_.data() + offsets_[static_cast<std::size_t>(i)]; }
    const int* end(Eigen::Index i) const { return neighbors_.data() + offsets_[static_cast<std::size_t>(i) + 1]; }
    int degree(Eigen::Index i) const {
        return static_cast<int>(offsets_[static_cast<std::size_t>(i) + 1] - offsets_[static_cast<std::size_t>(i)]);
    }

    const std::vector<int>& flat_neighbors() const { return neighbors_; }
    const std::vector<std::size_t>& offsets() const { return offsets_; }

    /// Directed (i, j) pairs in (source-major, ascending target) order.
    std::vector<std::pair<int, int>> pairs() const;

private:
    std::vector<int> neighbors_;
    std::vector<std::size_t> offsets_;  // size n+1
};

struct VertexNormals {
    Matd normals;  // n x 3, unit rows
};

EdgeSet edge_set(const Mesh& mesh);

/// Area-weighted average of incident face normals, normalized per row.
/// Rows whose weighted sum is near zero fall back to +z.
VertexNormals vertex_normals(const Mesh& mesh);

double surface_area(const Mesh& mesh);

struct DecimateResult {
    Mesh mesh;
    /// new vertex index -> original vertex index (identity of the survivor).
    std::vector<int> vertex_map;
};

/// Randomized edge collapse: repeatedly pick a random edge among the
/// shortest 20%, collapse it to the midpoint, drop degenerate faces.
/// Deterministic for a fixed (mesh, keep_fraction, seed).
DecimateResult decimate(const Mesh& mesh, double keep_fraction, std::uint64_t seed);

/// Rotation about the +y axis (meshes are y-up), right-handed.
Mesh rotate_azimuth(const Mesh& mesh, double angle);

}  // namespace shapemorph
