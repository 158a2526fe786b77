#pragma once

#include <shapemorph/mesh.hpp>

#include <filesystem>
#include <string>

namespace shapemorph {

enum class MeshFormat { Off, Obj, PlyAscii };

/// Guess the format from the file extension (.off/.obj/.ply).
MeshFormat format_from_path(const std::filesystem::path& path);

Mesh load_mesh(const std::filesystem::path& path, MeshFormat format);
Mesh load_mesh(const std::filesystem::path& path);

/// Writers emit 9 significant digits; reloading reproduces vertices within
/// 1e-6 and faces exactly, and a second save is byte-stable.
void save_mesh(const Mesh& mesh, const std::filesystem::path& path, MeshFormat format);
void save_mesh(const Mesh& mesh, const std::filesystem::path& path);

}  // namespace shapemorph
