#include <shapemorph/synthgen.hpp>

#include <shapemorph/mesh_io.hpp>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <random>
#include <sstream>
#include <stdexcept>

namespace shapemorph {

void PoseSpec::validate() const {
    for (double a : bend_angles)
        if (!(a >= -2.5 && a <= 2.5)) throw std::invalid_argument("pose: bend angle outside [-2.5, 2.5]");
    for (double r : limb_ratios)
        if (!(r > 0.0)) throw std::invalid_argument("pose: limb ratio must be positive");
    if (resolution < 8 || resolution % 2 != 0)
        throw std::invalid_argument("pose: resolution must be even and >= 8");
}

namespace {

constexpr double kLength = 2.0;    // canonical capsule length (joints along +y)
constexpr double kRadiusX = 0.30;  // elliptical cross section
constexpr double kRadiusZ = 0.21;

double taper(double y) { return 1.12 - 0.35 * (y / kLength); }

double smoothstep01(double u) {
    u = std::clamp(u, 0.0, 1.0);
    return u * u * (3.0 - 2.0 * u);
}

Mat3d rot_z(double a) {
    Mat3d r;
    r << std::cos(a), -std::sin(a), 0, std::sin(a), std::cos(a), 0, 0, 0, 1;
    return r;
}

Mat3d rot_x(double a) {
    Mat3d r;
    r << 1, 0, 0, 0, std::cos(a), -std::sin(a), 0, std::sin(a), std::cos(a);
    return r;
}

struct Template {
    Matd vertices;                 // canonical positions
    std::vector<double> canon_y;   // canonical height per vertex (drives weights)
    Eigen::Matrix<int, Eigen::Dynamic, 3, Eigen::RowMajor> faces;
};

Template build_template(int resolution) {
    const int R = resolution;
    const int rows = (15 * R) / 8;              // 482 vertices at the default R=16
    const int cap_rows = std::max(2, rows / 6); // rings per hemispherical cap, seam included
    const int cyl_rows = rows - 2 * cap_rows;   // interior rings on the shaft

    const double rb = 0.8 * kRadiusZ * taper(0.0);      // bottom cap height
    const double rt = 0.8 * kRadiusZ * taper(kLength);  // top cap height

    // Ring profile: height y (clamped to [0,L] for taper/weights) and a
    // cap multiplier s in (0,1] applied to the cross-section radii.
    std::vector<std::pair<double, double>> rings;
    rings.reserve(static_cast<std::size_t>(rows));
    for (int k = 1; k <= cap_rows; ++k) {
        const double psi = 0.5 * M_PI * k / cap_rows;
        rings.emplace_back(-rb * std::cos(psi), std::sin(psi));
    }
    for (int j = 1; j <= cyl_rows; ++j)
        rings.emplace_back(kLength * j / (cyl_rows + 1), 1.0);
    for (int k = cap_rows; k >= 1; --k) {
        const double psi = 0.5 * M_PI * k / cap_rows;
        rings.emplace_back(kLength + rt * std::cos(psi), std::sin(psi));
    }

    const int n = rows * R + 2;
    Template t;
    t.vertices.resize(n, 3);
    t.canon_y.resize(static_cast<std::size_t>(n));

    const int bottom_pole = n - 2;
    const int top_pole = n - 1;
    t.vertices.row(bottom_pole) << 0.0, -rb, 0.0;
    t.vertices.row(top_pole) << 0.0, kLength + rt, 0.0;
    t.canon_y[static_cast<std::size_t>(bottom_pole)] = 0.0;
    t.canon_y[static_cast<std::size_t>(top_pole)] = kLength;

    for (int r = 0; r < rows; ++r) {
        const auto [y, s] = rings[static_cast<std::size_t>(r)];
        const double yc = std::clamp(y, 0.0, kLength);
        const double sx = s * kRadiusX * taper(yc);
        const double sz = s * kRadiusZ * taper(yc);
        for (int a = 0; a < R; ++a) {
            const double phi = 2.0 * M_PI * a / R;
            const int idx = r * R + a;
            t.vertices.row(idx) << sx * std::cos(phi), y, sz * std::sin(phi);
            t.canon_y[static_cast<std::size_t>(idx)] = yc;
        }
    }

    std::vector<int> faces;
    auto tri = [&faces](int a, int b, int c) { faces.insert(faces.end(), {a, b, c}); };
    for (int a = 0; a < R; ++a) {
        const int a1 = (a + 1) % R;
        tri(bottom_pole, a, a1);                                       // bottom fan
        tri(top_pole, (rows - 1) * R + a1, (rows - 1) * R + a);        // top fan
    }
    for (int r = 0; r + 1 < rows; ++r) {
        for (int a = 0; a < R; ++a) {
            const int a1 = (a + 1) % R;
            const int A = r * R + a, B = r * R + a1;
            const int D = (r + 1) * R + a, C = (r + 1) * R + a1;
            tri(A, D, B);
            tri(B, D, C);
        }
    }
    t.faces.resize(static_cast<Eigen::Index>(faces.size() / 3), 3);
    std::copy(faces.begin(), faces.end(), t.faces.data());
    return t;
}

}  // namespace

Mesh make_pose(const PoseSpec& spec) {
    spec.validate();
    Template t = build_template(spec.resolution);

    const double ratio_sum = spec.limb_ratios[0] + spec.limb_ratios[1] + spec.limb_ratios[2];
    const double l0 = kLength * spec.limb_ratios[0] / ratio_sum;
    const double l1 = kLength * spec.limb_ratios[1] / ratio_sum;
    const double l2 = kLength * spec.limb_ratios[2] / ratio_sum;
    const double j1y = l0, j2y = l0 + l1;
    const double band = 0.30 * std::min({l0, l1, l2});

    const Mat3d r1 = rot_z(spec.bend_angles[0]);
    const Mat3d r2 = rot_x(spec.bend_angles[1]);
    const Vec3d j1(0.0, j1y, 0.0), j2(0.0, j2y, 0.0);

    Matd out(t.vertices.rows(), 3);
    for (Eigen::Index i = 0; i < t.vertices.rows(); ++i) {
        const Vec3d p = t.vertices.row(i);
        const double y = t.canon_y[static_cast<std::size_t>(i)];
        const double s1 = smoothstep01((y - (j1y - band)) / (2.0 * band));
        const double s2 = smoothstep01((y - (j2y - band)) / (2.0 * band));

        const Vec3d p1 = r1 * (p - j1) + j1;                       // bone 1
        const Vec3d p12 = r1 * (r2 * (p - j2) + j2 - j1) + j1;     // bone 2 under bone 1
        const Vec3d blended = (1.0 - s1) * p + s1 * ((1.0 - s2) * p1 + s2 * p12);
        out.row(i) = blended.transpose();
    }

    std::ostringstream name;
    name << "capsule_r" << spec.resolution;
    return Mesh(std::move(out), t.faces, name.str());
}

namespace {
std::string fmt9(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.9g", v);
    return buf;
}
}  // namespace

DatasetManifest make_dataset(int n_poses, int resolution, std::uint64_t seed,
                             const std::filesystem::path& out_dir) {
    if (n_poses < 2) throw std::invalid_argument("make_dataset: need at least 2 poses");
    std::filesystem::create_directories(out_dir);
    std::mt19937_64 rng(seed);

    DatasetManifest m;
    m.resolution = resolution;
    m.dir = out_dir;
    for (int i = 0; i < n_poses; ++i) {
        PoseSpec spec;
        spec.resolution = resolution;
        spec.seed = seed;
        if (i > 0) {
            spec.bend_angles[0] = uniform_in(rng, -1.1, 1.1);
            spec.bend_angles[1] = uniform_in(rng, -1.1, 1.1);
        }
        char fname[32];
        std::snprintf(fname, sizeof(fname), "pose_%03d.off", i);
        save_mesh(make_pose(spec), out_dir / fname, MeshFormat::Off);
        m.entries.push_back(DatasetEntry{fname, spec});
    }
    save_manifest(m, out_dir / "manifest.txt");
    return m;
}

void save_manifest(const DatasetManifest& m, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << "shapemorph-manifest " << m.version << "\n";
    out << "resolution " << m.resolution << "\n";
    out << "gt " << m.gt << "\n";
    out << "count " << m.entries.size() << "\n";
    for (const auto& e : m.entries) {
        out << "mesh " << e.file << " angles " << fmt9(e.spec.bend_angles[0]) << " "
            << fmt9(e.spec.bend_angles[1]) << " ratios " << fmt9(e.spec.limb_ratios[0]) << " "
            << fmt9(e.spec.limb_ratios[1]) << " " << fmt9(e.spec.limb_ratios[2]) << " seed "
            << e.spec.seed << "\n";
    }
    if (!out.good()) throw std::runtime_error("I/O failure writing " + path.string());
}

DatasetManifest load_manifest(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path.string());
    DatasetManifest m;
    m.dir = path.parent_path();
    std::string line;
    while (std::getline(in, line)) {
        std::istringstream ls(line);
        std::string tag;
        if (!(ls >> tag)) continue;
        if (tag == "shapemorph-manifest") ls >> m.version;
        else if (tag == "resolution") ls >> m.resolution;
        else if (tag == "gt") ls >> m.gt;
        else if (tag == "mesh") {
            DatasetEntry e;
            std::string key;
            ls >> e.file;
            e.spec.resolution = m.resolution;
            while (ls >> key) {
                if (key == "angles") ls >> e.spec.bend_angles[0] >> e.spec.bend_angles[1];
                else if (key == "ratios")
                    ls >> e.spec.limb_ratios[0] >> e.spec.limb_ratios[1] >> e.spec.limb_ratios[2];
                else if (key == "seed") ls >> e.spec.seed;
            }
            m.entries.push_back(std::move(e));
        }
    }
    if (m.entries.empty()) throw std::runtime_error("manifest lists no meshes: " + path.string());
    return m;
}

}  // namespace shapemorph
