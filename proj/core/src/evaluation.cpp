#include <shapemorph/evaluation.hpp>

#include <shapemorph/mesh_io.hpp>

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>
#include <stdexcept>

namespace shapemorph {

namespace {

std::string fmt9(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.9g", v);
    return buf;
}

// Minimal static KD-tree over 3D points for exact nearest-neighbor queries.
class KdTree3 {
public:
    explicit KdTree3(const Matd& pts) : pts_(pts), idx_(static_cast<std::size_t>(pts.rows())) {
        std::iota(idx_.begin(), idx_.end(), 0);
        build(0, static_cast<int>(idx_.size()), 0);
    }

    double min_squared_distance(const Vec3d& q) const {
        double best = std::numeric_limits<double>::infinity();
        query(0, static_cast<int>(idx_.size()), 0, q, best);
        return best;
    }

private:
    void build(int lo, int hi, int depth) {
        if (hi - lo <= 1) return;
        const int axis = depth % 3;
        const int mid = (lo + hi) / 2;
        std::nth_element(idx_.begin() + lo, idx_.begin() + mid, idx_.begin() + hi,
                         [&](int a, int b) { return pts_(a, axis) < pts_(b, axis); });
        build(lo, mid, depth + 1);
        build(mid + 1, hi, depth + 1);
    }

    void query(int lo, int hi, int depth, const Vec3d& q, double& best) const {
        if (lo >= hi) return;
        const int axis = depth % 3;
        const int mid = (lo + hi) / 2;
        const int p = idx_[static_cast<std::size_t>(mid)];
        const double d2 = (pts_.row(p).transpose() - q).squaredNorm();
        if (d2 < best) best = d2;
        const double delta = q[axis] - pts_(p, axis);
        const int near_lo = delta < 0 ? lo : mid + 1;
        const int near_hi = delta < 0 ? mid : hi;
        const int far_lo = delta < 0 ? mid + 1 : lo;
        const int far_hi = delta < 0 ? hi : mid;
        query(near_lo, near_hi, depth + 1, q, best);
        if (delta * delta < best) query(far_lo, far_hi, depth + 1, q, best);
    }

    const Matd& pts_;
    std::vector<int> idx_;
};

double one_sided_mean_sq(const Matd& from, const KdTree3& to_tree) {
    double acc = 0.0;
    for (Eigen::Index i = 0; i < from.rows(); ++i)
        acc += to_tree.min_squared_distance(from.row(i).transpose());
    return acc / static_cast<double>(from.rows());
}

}  // namespace

double chamfer(const Matd& a, const Matd& b) {
    if (a.rows() == 0 || b.rows() == 0) throw std::invalid_argument("chamfer: empty point set");
    KdTree3 ta(a), tb(b);
    return 0.5 * (one_sided_mean_sq(a, tb) + one_sided_mean_sq(b, ta));
}

std::pair<double, std::vector<std::pair<double, double>>> correspondence_accuracy(
    const std::vector<int>& hard, const std::vector<int>& gt, const DenseDistances& target,
    const std::vector<double>& thresholds) {
    if (hard.size() != gt.size())
        throw std::invalid_argument("correspondence_accuracy: match list length mismatch");
    std::vector<double> errors;
    errors.reserve(hard.size());
    for (std::size_t i = 0; i < hard.size(); ++i) {
        if (gt[i] < 0) continue;  // unannotated
        errors.push_back(match_error(hard[i], gt[i], target));
    }
    if (errors.empty()) throw std::invalid_argument("correspondence_accuracy: no annotated vertices");
    const double mean = std::accumulate(errors.begin(), errors.end(), 0.0) / static_cast<double>(errors.size());
    std::vector<std::pair<double, double>> curve;
    curve.reserve(thresholds.size());
    for (double t : thresholds) {
        std::size_t hit = 0;
        for (double e : errors)
            if (e <= t) ++hit;
        curve.emplace_back(t, static_cast<double>(hit) / static_cast<double>(errors.size()));
    }
    return {mean, std::move(curve)};
}

double conformal_distortion(const Mesh& reference, const Trajectory& traj, double inverted_penalty) {
    const Matd& rv = reference.vertices();
    const auto& faces = reference.faces();
    for (const Matd& st : traj.states)
        if (st.rows() != rv.rows())
            throw std::invalid_argument("conformal_distortion: state size mismatch with reference");

    // Local 2D coordinates of a triangle in its own orthonormal frame.
    auto local2d = [](const Matd& v, int a, int b, int c, Eigen::Matrix2d& coords) {
        const Vec3d u1 = v.row(b) - v.row(a);
        const Vec3d u2 = v.row(c) - v.row(a);
        const Vec3d nrm = u1.cross(u2);
        const double l1 = u1.norm();
        if (l1 < 1e-30 || nrm.norm() < 1e-30) return false;
        const Vec3d e1 = u1 / l1;
        const Vec3d e2 = nrm.cross(u1).normalized();
        coords << l1, u2.dot(e1), 0.0, u2.dot(e2);
        return true;
    };

    double acc = 0.0;
    std::size_t count = 0;
    for (const Matd& st : traj.states) {
        for (Eigen::Index f = 0; f < faces.rows(); ++f) {
            Eigen::Matrix2d ra, rb;
            if (!local2d(rv, faces(f, 0), faces(f, 1), faces(f, 2), ra))
                throw std::invalid_argument("conformal_distortion: degenerate reference triangle");
            const bool ok = local2d(st, faces(f, 0), faces(f, 1), faces(f, 2), rb);
            double value;
            if (!ok) {
                value = inverted_penalty;  // collapsed triangle
            } else {
                const Eigen::Matrix2d j = rb * ra.inverse();
                const double det = j.determinant();
                value = det > 0.0 ? j.squaredNorm() / det : inverted_penalty;
            }
            acc += value;
            ++count;
        }
    }
    return acc / static_cast<double>(count) - 2.0;
}

std::vector<double> default_thresholds() {
    std::vector<double> t;
    for (int k = 0; k <= 50; ++k) t.push_back(0.01 * k);
    return t;
}

std::pair<double, double> uniform_match_expectation(const DenseDistances& target,
                                                    const std::vector<int>& gt) {
    const auto m = static_cast<double>(target.size());
    double mean_acc = 0.0, var_acc = 0.0;
    std::size_t n = 0;
    for (int g : gt) {
        if (g < 0) continue;
        const auto col = target.dist.col(g);
        const double mu = col.sum() / m;
        const double var = (col.array() - mu).square().sum() / m;
        mean_acc += mu;
        var_acc += var;
        ++n;
    }
    if (n == 0) throw std::invalid_argument("uniform_match_expectation: no annotated vertices");
    const double nn = static_cast<double>(n);
    return {mean_acc / nn, std::sqrt(var_acc) / nn};
}

Trajectory linear_interpolation_trajectory(const Mesh& mesh_x, const Matd& pi, const Matd& y_vertices,
                                           int time_steps) {
    if (time_steps < 1) throw std::invalid_argument("linear trajectory: T >= 1");
    const Matd offsets = pi * y_vertices - mesh_x.vertices();
    Trajectory traj;
    traj.times.push_back(0.0);
    traj.states.push_back(mesh_x.vertices());
    for (int k = 1; k <= time_steps; ++k) {
        const double t = static_cast<double>(k) / time_steps;
        traj.times.push_back(t);
        traj.states.push_back(mesh_x.vertices() + t * offsets);
    }
    return traj;
}

PairMatcher model_matcher(ParamStore<float>& params, const NetConfig& cfg) {
    return [&params, cfg](const Mesh& source, const Mesh& target) {
        Graph<float> g;
        Bound<float> bind(g, params, /*trainable=*/false);
        const EdgeSet ex = edge_set(source), ey = edge_set(target);
        Value<float> fx = extract_features(g, source, ex, bind, cfg);
        Value<float> fy = extract_features(g, target, ey, bind, cfg);
        Value<float> pi = correspondence_value(g, fx, fy, cfg.sigma);
        return hard_matches(pi.data().cast<double>());
    };
}

EvalReport evaluate_matching(const DatasetManifest& data, const std::vector<std::pair<int, int>>& pairs,
                             const PairMatcher& matcher, const EvalOptions& opts) {
    if (data.gt != "identity")
        throw std::invalid_argument("evaluate_matching: dataset carries no ground truth convention");
    if (pairs.empty()) throw std::invalid_argument("evaluate_matching: no pairs");

    EvalReport report;
    std::vector<double> all_errors;
    std::vector<double> vertex_acc;
    std::vector<int> vertex_cnt;
    std::uint64_t seed = opts.decimation_seed;

    for (const auto& [si, ti] : pairs) {
        const Mesh full_x = load_mesh(data.mesh_path(static_cast<std::size_t>(si)));
        const Mesh full_y = load_mesh(data.mesh_path(static_cast<std::size_t>(ti)));
        if (vertex_acc.empty()) {
            vertex_acc.assign(static_cast<std::size_t>(full_x.vertex_count()), 0.0);
            vertex_cnt.assign(static_cast<std::size_t>(full_x.vertex_count()), 0);
        }

        // Identity ground truth on the full meshes; decimation (when on)
        // transfers it through survivor identity and drops the rest.
        Mesh x = full_x, y = full_y;
        std::vector<int> x_map, y_inverse;
        if (opts.keep_fraction < 1.0) {
            DecimateResult dx = decimate(full_x, opts.keep_fraction, seed++);
            DecimateResult dy = decimate(full_y, opts.keep_fraction, seed++);
            x = dx.mesh;
            y = dy.mesh;
            x_map = dx.vertex_map;
            y_inverse.assign(static_cast<std::size_t>(full_y.vertex_count()), -1);
            for (std::size_t k = 0; k < dy.vertex_map.size(); ++k)
                y_inverse[static_cast<std::size_t>(dy.vertex_map[k])] = static_cast<int>(k);
        }

        std::vector<int> gt(static_cast<std::size_t>(x.vertex_count()));
        for (Eigen::Index i = 0; i < x.vertex_count(); ++i) {
            const int orig = x_map.empty() ? static_cast<int>(i) : x_map[static_cast<std::size_t>(i)];
            int tgt = orig;  // identity convention
            if (!y_inverse.empty()) {
                tgt = y_inverse[static_cast<std::size_t>(tgt)];
                if (tgt < 0) ++report.excluded_annotations;  // annotation did not survive
            }
            gt[static_cast<std::size_t>(i)] = tgt;
        }

        const std::vector<int> hard = matcher(x, y);
        const DenseDistances dy_dist = geodesic_matrix(y);
        auto [mean, curve] = correspondence_accuracy(hard, gt, dy_dist, opts.thresholds);
        report.per_pair_mean_error.push_back(mean);
        if (report.curve.empty()) {
            report.curve = curve;
        } else {
            for (std::size_t k = 0; k < curve.size(); ++k) report.curve[k].second += curve[k].second;
        }
        for (Eigen::Index i = 0; i < x.vertex_count(); ++i) {
            if (gt[static_cast<std::size_t>(i)] < 0) continue;
            const double e = match_error(hard[static_cast<std::size_t>(i)], gt[static_cast<std::size_t>(i)], dy_dist);
            const int orig = x_map.empty() ? static_cast<int>(i) : x_map[static_cast<std::size_t>(i)];
            vertex_acc[static_cast<std::size_t>(orig)] += e;
            vertex_cnt[static_cast<std::size_t>(orig)] += 1;
            all_errors.push_back(e);
        }
    }

    for (auto& [t, f] : report.curve) f /= static_cast<double>(pairs.size());
    report.mean_geodesic_error =
        std::accumulate(all_errors.begin(), all_errors.end(), 0.0) / static_cast<double>(all_errors.size());
    report.per_vertex_mean_error.resize(vertex_acc.size(), -1.0);
    for (std::size_t i = 0; i < vertex_acc.size(); ++i)
        if (vertex_cnt[i] > 0) report.per_vertex_mean_error[i] = vertex_acc[i] / vertex_cnt[i];
    return report;
}

EvalReport evaluate_interpolation(const DatasetManifest& data,
                                  const std::vector<std::pair<int, int>>& pairs,
                                  ParamStore<float>& params, const NetConfig& cfg,
                                  const EvalOptions& opts) {
    if (pairs.empty()) throw std::invalid_argument("evaluate_interpolation: no pairs");
    EvalReport report;
    for (const auto& [si, ti] : pairs) {
        const Mesh x = load_mesh(data.mesh_path(static_cast<std::size_t>(si)));
        const Mesh y = load_mesh(data.mesh_path(static_cast<std::size_t>(ti)));
        auto [corr, traj] = trajectory(x, y, params, cfg, opts.time_steps);
        (void)corr;
        report.per_pair_distortion.push_back(conformal_distortion(x, traj));
        report.per_pair_chamfer.push_back(chamfer(traj.states.back(), y.vertices()));
    }
    report.mean_conformal_distortion =
        std::accumulate(report.per_pair_distortion.begin(), report.per_pair_distortion.end(), 0.0) /
        static_cast<double>(report.per_pair_distortion.size());
    report.mean_chamfer =
        std::accumulate(report.per_pair_chamfer.begin(), report.per_pair_chamfer.end(), 0.0) /
        static_cast<double>(report.per_pair_chamfer.size());
    return report;
}

void write_report_csvs(const EvalReport& report, const std::filesystem::path& out_dir,
                       const std::string& prefix) {
    std::filesystem::create_directories(out_dir);
    if (!report.curve.empty()) {
        std::ofstream out(out_dir / (prefix + "_curve.csv"), std::ios::binary);
        out << "threshold,fraction\n";
        for (const auto& [t, f] : report.curve) out << fmt9(t) << "," << fmt9(f) << "\n";
    }
    if (!report.per_vertex_mean_error.empty()) {
        std::ofstream out(out_dir / (prefix + "_per_vertex.csv"), std::ios::binary);
        out << "vertex_index,mean_error\n";
        for (std::size_t i = 0; i < report.per_vertex_mean_error.size(); ++i)
            if (report.per_vertex_mean_error[i] >= 0.0)
                out << i << "," << fmt9(report.per_vertex_mean_error[i]) << "\n";
    }
    std::ofstream out(out_dir / (prefix + "_summary.csv"), std::ios::binary);
    out << "metric,value\n";
    if (!report.per_pair_mean_error.empty())
        out << "mean_geodesic_error," << fmt9(report.mean_geodesic_error) << "\n";
    if (!report.per_pair_distortion.empty()) {
        out << "mean_conformal_distortion_minus2," << fmt9(report.mean_conformal_distortion) << "\n";
        out << "mean_chamfer," << fmt9(report.mean_chamfer) << "\n";
    }
    out << "excluded_annotations," << report.excluded_annotations << "\n";
}

}  // namespace shapemorph
