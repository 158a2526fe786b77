#include <shapemorph/mesh_io.hpp>

#include <algorithm>
#include <cctype>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <vector>

namespace shapemorph {

namespace {

[[noreturn]] void parse_fail(const std::filesystem::path& path, const std::string& what) {
    throw std::runtime_error("parse failure in " + path.string() + ": " + what);
}

std::string fmt9(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.9g", v);
    return buf;
}

/// Next line that is neither blank nor a '#' comment.
bool next_content_line(std::istream& in, std::string& line) {
    while (std::getline(in, line)) {
        std::size_t p = line.find_first_not_of(" \t\r");
        if (p == std::string::npos) continue;
        if (line[p] == '#') continue;
        return true;
    }
    return false;
}

Mesh build(std::vector<double>& vtx, std::vector<int>& fcs, const std::filesystem::path& path,
           const char* what_fail) {
    if (vtx.empty()) parse_fail(path, std::string(what_fail) + ": no vertices");
    Matd v(static_cast<Eigen::Index>(vtx.size() / 3), 3);
    std::copy(vtx.begin(), vtx.end(), v.data());
    Eigen::Matrix<int, Eigen::Dynamic, 3, Eigen::RowMajor> f(static_cast<Eigen::Index>(fcs.size() / 3), 3);
    std::copy(fcs.begin(), fcs.end(), f.data());
    return Mesh(std::move(v), std::move(f), path.stem().string());
}

Mesh load_off(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path.string());
    std::string line;
    if (!next_content_line(in, line)) parse_fail(path, "empty file");
    {
        std::istringstream hs(line);
        std::string magic;
        hs >> magic;
        if (magic != "OFF") parse_fail(path, "missing OFF header");
    }
    if (!next_content_line(in, line)) parse_fail(path, "missing counts line");
    long nv = 0, nf = 0, ne = 0;
    {
        std::istringstream cs(line);
        if (!(cs >> nv >> nf >> ne)) parse_fail(path, "bad counts line");
    }
    if (nv <= 0 || nf < 0) parse_fail(path, "bad counts");
    std::vector<double> vtx;
    vtx.reserve(static_cast<std::size_t>(nv) * 3);
    for (long i = 0; i < nv; ++i) {
        if (!next_content_line(in, line)) parse_fail(path, "truncated vertex list");
        std::istringstream vs(line);
        double x, y, z;
        if (!(vs >> x >> y >> z)) parse_fail(path, "bad vertex line");
        vtx.insert(vtx.end(), {x, y, z});
    }
    std::vector<int> fcs;
    fcs.reserve(static_cast<std::size_t>(nf) * 3);
    for (long i = 0; i < nf; ++i) {
        if (!next_content_line(in, line)) parse_fail(path, "truncated face list");
        std::istringstream fs(line);
        int cnt, a, b, c;
        if (!(fs >> cnt >> a >> b >> c)) parse_fail(path, "bad face line");
        if (cnt != 3) parse_fail(path, "only triangle faces supported");
        fcs.insert(fcs.end(), {a, b, c});
    }
    return build(vtx, fcs, path, "OFF");
}

Mesh load_obj(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path.string());
    std::vector<double> vtx;
    std::vector<int> fcs;
    std::string line;
    while (std::getline(in, line)) {
        std::istringstream ls(line);
        std::string tag;
        if (!(ls >> tag)) continue;
        if (tag == "v") {
            double x, y, z;
            if (!(ls >> x >> y >> z)) parse_fail(path, "bad v record");
            vtx.insert(vtx.end(), {x, y, z});
        } else if (tag == "f") {
            int idx[3];
            for (int k = 0; k < 3; ++k) {
                std::string tok;
                if (!(ls >> tok)) parse_fail(path, "face with fewer than 3 indices");
                // "i", "i/t", "i/t/n", "i//n" all start with the vertex index.
                idx[k] = std::stoi(tok);
                if (idx[k] <= 0) parse_fail(path, "non-positive OBJ index");
            }
            std::string extra;
            if (ls >> extra) parse_fail(path, "only triangle faces supported");
            fcs.insert(fcs.end(), {idx[0] - 1, idx[1] - 1, idx[2] - 1});
        }
    }
    return build(vtx, fcs, path, "OBJ");
}

Mesh load_ply(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path.string());
    std::string line;
    if (!std::getline(in, line) || line.rfind("ply", 0) != 0) parse_fail(path, "missing ply magic");
    long nv = -1, nf = -1;
    bool ascii = false;
    while (std::getline(in, line)) {
        std::istringstream ls(line);
        std::string tag;
        ls >> tag;
        if (tag == "format") {
            std::string fmt;
            ls >> fmt;
            if (fmt != "ascii") throw std::runtime_error("binary PLY not supported (ascii only): " + path.string());
            ascii = true;
        } else if (tag == "element") {
            std::string kind;
            long count;
            ls >> kind >> count;
            if (kind == "vertex") nv = count;
            else if (kind == "face") nf = count;
        } else if (tag == "end_header") {
            break;
        }
    }
    if (!ascii) parse_fail(path, "missing format line");
    if (nv <= 0 || nf < 0) parse_fail(path, "missing vertex/face elements");
    std::vector<double> vtx;
    vtx.reserve(static_cast<std::size_t>(nv) * 3);
    for (long i = 0; i < nv; ++i) {
        if (!next_content_line(in, line)) parse_fail(path, "truncated vertex list");
        std::istringstream vs(line);
        double x, y, z;
        if (!(vs >> x >> y >> z)) parse_fail(path, "bad vertex line");
        vtx.insert(vtx.end(), {x, y, z});
    }
    std::vector<int> fcs;
    fcs.reserve(static_cast<std::size_t>(nf) * 3);
    for (long i = 0; i < nf; ++i) {
        if (!next_content_line(in, line)) parse_fail(path, "truncated face list");
        std::istringstream fs(line);
        int cnt, a, b, c;
        if (!(fs >> cnt >> a >> b >> c)) parse_fail(path, "bad face line");
        if (cnt != 3) parse_fail(path, "only triangle faces supported");
        fcs.insert(fcs.end(), {a, b, c});
    }
    return build(vtx, fcs, path, "PLY");
}

}  // namespace

MeshFormat format_from_path(const std::filesystem::path& path) {
    std::string ext = path.extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    if (ext == ".off") return MeshFormat::Off;
    if (ext == ".obj") return MeshFormat::Obj;
    if (ext == ".ply") return MeshFormat::PlyAscii;
    throw std::invalid_argument("unknown mesh extension: " + path.string());
}

Mesh load_mesh(const std::filesystem::path& path, MeshFormat format) {
    switch (format) {
        case MeshFormat::Off: return load_off(path);
        case MeshFormat::Obj: return load_obj(path);
        case MeshFormat::PlyAscii: return load_ply(path);
    }
    throw std::logic_error("unreachable");
}

Mesh load_mesh(const std::filesystem::path& path) { return load_mesh(path, format_from_path(path)); }

void save_mesh(const Mesh& mesh, const std::filesystem::path& path, MeshFormat format) {
    std::ofstream out(path, std::ios::binary);  // binary: exact bytes, '\n' only
    if (!out) throw std::runtime_error("cannot write " + path.string());
    const Matd& v = mesh.vertices();
    const auto& f = mesh.faces();
    switch (format) {
        case MeshFormat::Off: {
            out << "OFF\n" << v.rows() << " " << f.rows() << " 0\n";
            for (Eigen::Index i = 0; i < v.rows(); ++i)
                out << fmt9(v(i, 0)) << " " << fmt9(v(i, 1)) << " " << fmt9(v(i, 2)) << "\n";
            for (Eigen::Index i = 0; i < f.rows(); ++i)
                out << "3 " << f(i, 0) << " " << f(i, 1) << " " << f(i, 2) << "\n";
            break;
        }
        case MeshFormat::Obj: {
            for (Eigen::Index i = 0; i < v.rows(); ++i)
                out << "v " << fmt9(v(i, 0)) << " " << fmt9(v(i, 1)) << " " << fmt9(v(i, 2)) << "\n";
            for (Eigen::Index i = 0; i < f.rows(); ++i)
                out << "f " << f(i, 0) + 1 << " " << f(i, 1) + 1 << " " << f(i, 2) + 1 << "\n";
            break;
        }
        case MeshFormat::PlyAscii: {
            out << "ply\nformat ascii 1.0\n";
            out << "element vertex " << v.rows() << "\n";
            out << "property float x\nproperty float y\nproperty float z\n";
            out << "element face " << f.rows() << "\n";
            out << "property list uchar int vertex_indices\n";
            out << "end_header\n";
            for (Eigen::Index i = 0; i < v.rows(); ++i)
                out << fmt9(v(i, 0)) << " " << fmt9(v(i, 1)) << " " << fmt9(v(i, 2)) << "\n";
            for (Eigen::Index i = 0; i < f.rows(); ++i)
                out << "3 " << f(i, 0) << " " << f(i, 1) << " " << f(i, 2) << "\n";
            break;
        }
    }
    if (!out.good()) throw std::runtime_error("I/O failure writing " + path.string());
}

void save_mesh(const Mesh& mesh, const std::filesystem::path& path) {
    save_mesh(mesh, path, format_from_path(path));
}

}  // namespace shapemorph
