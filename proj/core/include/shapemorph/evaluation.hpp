#pragma once

#include <shapemorph/geodesic.hpp>
#include <shapemorph/mesh.hpp>
#include <shapemorph/nets.hpp>
#include <shapemorph/synthgen.hpp>

#include <filesystem>
#include <functional>
#include <utility>
#include <vector>

namespace shapemorph {

/// Aggregated evaluation results. Matching runs fill the correspondence
/// fields; interpolation runs fill distortion/Chamfer. Exported CSVs carry
/// the same numbers.
struct EvalReport {
    std::vector<double> per_pair_mean_error;
    double mean_geodesic_error = 0.0;
    std::vector<std::pair<double, double>> curve;  // threshold -> fraction <= threshold
    std::vector<double> per_vertex_mean_error;     // indexed by source vertex
    int excluded_annotations = 0;

    double mean_conformal_distortion = 0.0;  // mean - 2 convention: 0 is conformal
    double mean_chamfer = 0.0;
    std::vector<double> per_pair_chamfer;
    std::vector<double> per_pair_distortion;
};

/// Princeton-protocol accuracy: per-vertex geodesic error between predicted
/// and ground-truth matches on the target (gt entries of -1 are skipped as
/// unannotated). Returns the mean and the cumulative accuracy curve.
std::pair<double, std::vector<std::pair<double, double>>> correspondence_accuracy(
    const std::vector<int>& hard, const std::vector<int>& gt, const DenseDistances& target_distances,
    const std::vector<double>& thresholds);

/// Per-triangle anisotropy |J|_F^2 / det J (= s1/s2 + s2/s1) of the map from
/// each reference triangle to its deformed copy, averaged over triangles and
/// trajectory states, minus 2 so the identity sequence scores 0. Triangles
/// with det J <= 0 contribute inverted_penalty.
double conformal_distortion(const Mesh& reference, const Trajectory& trajectory,
                            double inverted_penalty = 100.0);

/// Symmetric mean squared nearest-neighbor distance between vertex sets,
/// KD-tree accelerated; agrees exactly with a quadratic scan.
double chamfer(const Matd& points_a, const Matd& points_b);

std::vector<double> default_thresholds();

/// Expected error (and the std of the sample mean) of uniform-random
/// matching, computed exactly from the distance matrix.
std::pair<double, double> uniform_match_expectation(const DenseDistances& target_distances,
                                                    const std::vector<int>& gt);

/// Straight-line reference path X + t (Pi Y - X); the degenerate solution an
/// interpolator falls back to when nothing constrains the trajectory.
Trajectory linear_interpolation_trajectory(const Mesh& mesh_x, const Matd& pi, const Matd& y_vertices,
                                           int time_steps);

using PairMatcher = std::function<std::vector<int>(const Mesh& source, const Mesh& target)>;

/// Hard matches from a trained model (correspondence layer only).
PairMatcher model_matcher(ParamStore<float>& params, const NetConfig& cfg);

struct EvalOptions {
    std::vector<double> thresholds = default_thresholds();
    int time_steps = 8;                  // trajectory resolution for interpolation metrics
    double keep_fraction = 1.0;          // < 1: decimate inputs, transfer gt by survivor identity
    std::uint64_t decimation_seed = 17;
};

/// Correspondence accuracy over the listed pairs of a manifest (identity
/// ground truth). Writes no files; see write_matching_report.
EvalReport evaluate_matching(const DatasetManifest& data, const std::vector<std::pair<int, int>>& pairs,
                             const PairMatcher& matcher, const EvalOptions& opts = {});

/// Interpolation metrics over the listed pairs: conformal distortion of the
/// trajectory and Chamfer of X(1) against the target vertices.
EvalReport evaluate_interpolation(const DatasetManifest& data,
                                  const std::vector<std::pair<int, int>>& pairs,
                                  ParamStore<float>& params, const NetConfig& cfg,
                                  const EvalOptions& opts = {});

/// Deterministic CSV exports: curve ("threshold,fraction"), per-vertex
/// ("vertex_index,mean_error"), summary ("metric,value").
void write_report_csvs(const EvalReport& report, const std::filesystem::path& out_dir,
                       const std::string& prefix);

}  // namespace shapemorph
