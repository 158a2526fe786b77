#pragma once

#include <shapemorph/mesh.hpp>

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace shapemorph {

/// Pose parameters for the articulated two-joint capsule family. All poses
/// of one resolution share connectivity, so the identity index map is dense
/// ground truth across the family.
struct PoseSpec {
    std::array<double, 2> bend_angles{0.0, 0.0};   // radians, each in [-2.5, 2.5]
    std::array<double, 3> limb_ratios{1.0, 0.9, 0.8};
    int resolution = 16;  // azimuthal segments, even, >= 8
    std::uint64_t seed = 0;

    void validate() const;
};

/// Deformed capsule via linear-blend skinning of the canonical template:
/// joint 1 bends about +z, joint 2 (hierarchical) about +x. The canonical
/// template has an elliptical, tapered cross section so poses have no
/// azimuthal or up/down symmetry to confuse matching.
Mesh make_pose(const PoseSpec& spec);

struct DatasetEntry {
    std::string file;
    PoseSpec spec;
};

struct DatasetManifest {
    int version = 1;
    int resolution = 16;
    std::string gt = "identity";
    std::vector<DatasetEntry> entries;
    std::filesystem::path dir;  // directory holding the mesh files

    std::filesystem::path mesh_path(std::size_t i) const { return dir / entries[i].file; }
};

/// Writes n_poses meshes plus a manifest; deterministic under seed.
/// Pose 0 is the canonical (straight) capsule.
DatasetManifest make_dataset(int n_poses, int resolution, std::uint64_t seed,
                             const std::filesystem::path& out_dir);

DatasetManifest load_manifest(const std::filesystem::path& manifest_path);
void save_manifest(const DatasetManifest& manifest, const std::filesystem::path& manifest_path);

}  // namespace shapemorph
