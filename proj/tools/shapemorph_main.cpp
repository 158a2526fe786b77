// Command-line front end: generate synthetic datasets, train, match,
// interpolate, augment, evaluate, and puppeteer.

#include <shapemorph/checkpoint.hpp>
#include <shapemorph/evaluation.hpp>
#include <shapemorph/mesh_io.hpp>
#include <shapemorph/nets.hpp>
#include <shapemorph/synthgen.hpp>
#include <shapemorph/training.hpp>

#include <CLI11.hpp>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using namespace shapemorph;

namespace {

struct Model {
    ParamStore<float> params;
    NetConfig net;
};

Model load_model(const fs::path& checkpoint_path) {
    Checkpoint ck = load_checkpoint(checkpoint_path);
    Model m{std::move(ck.params), NetConfig::deserialize(ck.config_echo)};
    validate_params(m.params, m.net);
    return m;
}

std::string t_tag(double t) {
    char buf[24];
    std::snprintf(buf, sizeof(buf), "t%.4f", t);
    return buf;
}

std::vector<std::pair<int, int>> ordered_pairs(const std::vector<int>& indices, int max_pairs) {
    std::vector<std::pair<int, int>> pairs;
    for (int a : indices)
        for (int b : indices)
            if (a != b) pairs.emplace_back(a, b);
    if (max_pairs > 0 && static_cast<int>(pairs.size()) > max_pairs) pairs.resize(static_cast<std::size_t>(max_pairs));
    return pairs;
}

std::vector<int> parse_indices(const std::string& csv, std::size_t dataset_size) {
    std::vector<int> out;
    if (csv.empty()) {
        for (std::size_t i = 0; i < dataset_size; ++i) out.push_back(static_cast<int>(i));
        return out;
    }
    std::istringstream ss(csv);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
        const int v = std::stoi(tok);
        if (v < 0 || v >= static_cast<int>(dataset_size))
            throw std::invalid_argument("mesh index out of range: " + tok);
        out.push_back(v);
    }
    return out;
}

int cmd_synthgen(int poses, int resolution, std::uint64_t seed, const std::string& out_dir) {
    const DatasetManifest m = make_dataset(poses, resolution, seed, out_dir);
    std::cout << "wrote " << m.entries.size() << " poses and manifest to " << out_dir << "\n";
    return 0;
}

int cmd_train(const std::string& config_path, const std::vector<std::string>& overrides) {
    TrainConfig cfg = parse_train_config(config_path);
    for (const auto& kv : overrides) apply_override(cfg, kv);
    const fs::path ck = train(cfg);
    std::cout << "final checkpoint: " << ck.string() << "\n";
    return 0;
}

int cmd_match(const std::string& ck_path, const std::string& src, const std::string& tgt,
              const std::string& out_path) {
    Model m = load_model(ck_path);
    const Mesh x = load_mesh(src), y = load_mesh(tgt);
    Graph<float> g;
    Bound<float> bind(g, m.params, false);
    const EdgeSet ex = edge_set(x), ey = edge_set(y);
    Value<float> fx = extract_features(g, x, ex, bind, m.net);
    Value<float> fy = extract_features(g, y, ey, bind, m.net);
    Value<float> piv = correspondence_value(g, fx, fy, m.net.sigma);
    const Matd pi = piv.data().cast<double>();
    const std::vector<int> hard = hard_matches(pi);

    std::ofstream out(out_path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + out_path);
    out << "source_index,target_index,softmax_confidence\n";
    char buf[40];
    for (std::size_t i = 0; i < hard.size(); ++i) {
        std::snprintf(buf, sizeof(buf), "%.9g", pi(static_cast<Eigen::Index>(i), hard[i]));
        out << i << "," << hard[i] << "," << buf << "\n";
    }
    std::cout << "wrote " << hard.size() << " matches to " << out_path << "\n";
    return 0;
}

int cmd_interpolate(const std::string& ck_path, const std::string& src, const std::string& tgt,
                    int steps, const std::string& out_dir, const std::string& format) {
    if (steps < 1) throw std::invalid_argument("--steps must be >= 1");
    Model m = load_model(ck_path);
    const Mesh x = load_mesh(src), y = load_mesh(tgt);
    auto [corr, traj] = trajectory(x, y, m.params, m.net, steps);
    (void)corr;
    fs::create_directories(out_dir);
    const std::string ext = "." + format;
    for (std::size_t k = 0; k < traj.states.size(); ++k) {
        Mesh state(traj.states[k], x.faces(), x.name());
        save_mesh(state, fs::path(out_dir) / ("interp_" + t_tag(traj.times[k]) + ext));
    }
    std::cout << "wrote " << traj.states.size() << " meshes to " << out_dir << "\n";
    return 0;
}

int cmd_augment(const std::string& ck_path, const std::string& manifest_path, int per_pair,
                int max_pairs, const std::string& out_dir) {
    if (per_pair < 1) throw std::invalid_argument("--per-pair must be >= 1");
    Model m = load_model(ck_path);
    DatasetManifest manifest = load_manifest(manifest_path);
    fs::create_directories(out_dir);

    // Copy the source dataset, then append interpolated interior poses for
    // each (capped) unordered training pair.
    DatasetManifest augmented = manifest;
    augmented.dir = out_dir;
    for (std::size_t i = 0; i < manifest.entries.size(); ++i)
        save_mesh(load_mesh(manifest.mesh_path(i)), fs::path(out_dir) / manifest.entries[i].file);

    int emitted_pairs = 0;
    for (std::size_t a = 0; a < manifest.entries.size() && (max_pairs <= 0 || emitted_pairs < max_pairs); ++a) {
        for (std::size_t b = a + 1; b < manifest.entries.size() && (max_pairs <= 0 || emitted_pairs < max_pairs); ++b) {
            const Mesh x = load_mesh(manifest.mesh_path(a));
            const Mesh y = load_mesh(manifest.mesh_path(b));
            auto [corr, traj] = trajectory(x, y, m.params, m.net, per_pair + 1);
            (void)corr;
            for (int k = 1; k <= per_pair; ++k) {
                char name[64];
                std::snprintf(name, sizeof(name), "aug_%03zu_%03zu_%s.off", a, b,
                              t_tag(traj.times[static_cast<std::size_t>(k)]).c_str());
                Mesh state(traj.states[static_cast<std::size_t>(k)], x.faces(), x.name());
                save_mesh(state, fs::path(out_dir) / name, MeshFormat::Off);
                augmented.entries.push_back(DatasetEntry{name, manifest.entries[a].spec});
            }
            ++emitted_pairs;
        }
    }
    save_manifest(augmented, fs::path(out_dir) / "manifest.txt");
    std::cout << "augmented dataset written to " << out_dir << " (" << augmented.entries.size()
              << " meshes)\n";
    return 0;
}

int cmd_eval_match(const std::string& ck_path, const std::string& manifest_path,
                   const std::string& indices_csv, int max_pairs, double keep,
                   const std::string& out_dir) {
    Model m = load_model(ck_path);
    const DatasetManifest manifest = load_manifest(manifest_path);
    const auto indices = parse_indices(indices_csv, manifest.entries.size());
    const auto pairs = ordered_pairs(indices, max_pairs);
    EvalOptions opts;
    opts.keep_fraction = keep;
    const EvalReport report = evaluate_matching(manifest, pairs, model_matcher(m.params, m.net), opts);
    write_report_csvs(report, out_dir, "match");
    std::cout << "pairs: " << pairs.size() << "\nmean_geodesic_error: " << report.mean_geodesic_error
              << "\nreports in " << out_dir << "\n";
    return 0;
}

int cmd_eval_interp(const std::string& ck_path, const std::string& manifest_path,
                    const std::string& indices_csv, int max_pairs, const std::string& out_dir) {
    Model m = load_model(ck_path);
    const DatasetManifest manifest = load_manifest(manifest_path);
    const auto indices = parse_indices(indices_csv, manifest.entries.size());
    const auto pairs = ordered_pairs(indices, max_pairs);
    const EvalReport report = evaluate_interpolation(manifest, pairs, m.params, m.net);
    write_report_csvs(report, out_dir, "interp");
    std::cout << "pairs: " << pairs.size() << "\nmean_conformal_distortion: "
              << report.mean_conformal_distortion << "\nmean_chamfer: " << report.mean_chamfer
              << "\nreports in " << out_dir << "\n";
    return 0;
}

int cmd_puppeteer(const std::string& ck_path, const std::string& identity_path,
                  const std::string& poses_dir, const std::string& out_dir) {
    Model m = load_model(ck_path);
    const Mesh identity = load_mesh(identity_path);
    std::vector<fs::path> frames;
    for (const auto& e : fs::directory_iterator(poses_dir)) {
        const auto ext = e.path().extension().string();
        if (ext == ".off" || ext == ".obj" || ext == ".ply") frames.push_back(e.path());
    }
    if (frames.empty()) throw std::runtime_error("no mesh frames in " + poses_dir);
    std::sort(frames.begin(), frames.end());
    fs::create_directories(out_dir);
    for (std::size_t s = 0; s < frames.size(); ++s) {
        const Mesh target = load_mesh(frames[s]);
        auto [corr, traj] = trajectory(identity, target, m.params, m.net, 1);
        (void)corr;
        Mesh posed(traj.states.back(), identity.faces(), identity.name());
        char name[48];
        std::snprintf(name, sizeof(name), "frame_%04zu.off", s);
        save_mesh(posed, fs::path(out_dir) / name, MeshFormat::Off);
    }
    std::cout << "wrote " << frames.size() << " posed frames to " << out_dir << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"joint shape correspondence and interpolation for triangle meshes"};
    app.require_subcommand(1);

    // synthgen
    int sg_poses = 20, sg_res = 16;
    std::uint64_t sg_seed = 1;
    std::string sg_out = "dataset";
    auto* sg = app.add_subcommand("synthgen", "generate an articulated capsule dataset");
    sg->add_option("--poses", sg_poses, "number of poses")->check(CLI::Range(2, 10000));
    sg->add_option("--resolution", sg_res, "azimuthal resolution (even, >= 8)");
    sg->add_option("--seed", sg_seed, "rng seed");
    sg->add_option("--out", sg_out, "output directory")->required();

    // train
    std::string tr_config;
    std::vector<std::string> tr_sets;
    auto* tr = app.add_subcommand("train", "run unsupervised training from a config file");
    tr->add_option("--config", tr_config, "flat key=value config file")->required();
    tr->add_option("--set", tr_sets, "override config entries, e.g. --set epochs=10");

    // match
    std::string ma_ck, ma_src, ma_tgt, ma_out;
    auto* ma = app.add_subcommand("match", "hard correspondences source -> target");
    ma->add_option("--checkpoint", ma_ck)->required();
    ma->add_option("--source", ma_src)->required();
    ma->add_option("--target", ma_tgt)->required();
    ma->add_option("--out", ma_out, "matches csv")->required();

    // interpolate
    std::string ip_ck, ip_src, ip_tgt, ip_out, ip_fmt = "off";
    int ip_steps = 4;
    auto* ip = app.add_subcommand("interpolate", "write the interpolation sequence X(t)");
    ip->add_option("--checkpoint", ip_ck)->required();
    ip->add_option("--source", ip_src)->required();
    ip->add_option("--target", ip_tgt)->required();
    ip->add_option("--steps", ip_steps, "k: writes k+1 meshes for t = 0..1");
    ip->add_option("--out", ip_out, "output directory")->required();
    ip->add_option("--format", ip_fmt)->check(CLI::IsMember({"off", "obj", "ply"}));

    // augment
    std::string au_ck, au_manifest, au_out;
    int au_per_pair = 3, au_max_pairs = 0;
    auto* au = app.add_subcommand("augment", "extend a dataset with interpolated poses");
    au->add_option("--checkpoint", au_ck)->required();
    au->add_option("--manifest", au_manifest)->required();
    au->add_option("--per-pair", au_per_pair, "interior poses per pair");
    au->add_option("--max-pairs", au_max_pairs, "cap on processed pairs (0 = all)");
    au->add_option("--out", au_out)->required();

    // eval-match
    std::string em_ck, em_manifest, em_indices, em_out = "eval_match";
    int em_max_pairs = 0;
    double em_keep = 1.0;
    auto* em = app.add_subcommand("eval-match", "correspondence accuracy reports");
    em->add_option("--checkpoint", em_ck)->required();
    em->add_option("--manifest", em_manifest)->required();
    em->add_option("--indices", em_indices, "comma list of mesh indices (default: all)");
    em->add_option("--max-pairs", em_max_pairs);
    em->add_option("--keep", em_keep, "decimate inputs to this keep fraction before matching");
    em->add_option("--out", em_out);

    // eval-interp
    std::string ei_ck, ei_manifest, ei_indices, ei_out = "eval_interp";
    int ei_max_pairs = 0;
    auto* ei = app.add_subcommand("eval-interp", "interpolation quality reports");
    ei->add_option("--checkpoint", ei_ck)->required();
    ei->add_option("--manifest", ei_manifest)->required();
    ei->add_option("--indices", ei_indices);
    ei->add_option("--max-pairs", ei_max_pairs);
    ei->add_option("--out", ei_out);

    // puppeteer
    std::string pu_ck, pu_identity, pu_poses, pu_out;
    auto* pu = app.add_subcommand("puppeteer", "re-pose an identity mesh over a pose sequence");
    pu->add_option("--checkpoint", pu_ck)->required();
    pu->add_option("--identity", pu_identity)->required();
    pu->add_option("--poses", pu_poses, "directory of target pose meshes")->required();
    pu->add_option("--out", pu_out)->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (sg->parsed()) return cmd_synthgen(sg_poses, sg_res, sg_seed, sg_out);
        if (tr->parsed()) return cmd_train(tr_config, tr_sets);
        if (ma->parsed()) return cmd_match(ma_ck, ma_src, ma_tgt, ma_out);
        if (ip->parsed()) return cmd_interpolate(ip_ck, ip_src, ip_tgt, ip_steps, ip_out, ip_fmt);
        if (au->parsed()) return cmd_augment(au_ck, au_manifest, au_per_pair, au_max_pairs, au_out);
        if (em->parsed()) return cmd_eval_match(em_ck, em_manifest, em_indices, em_max_pairs, em_keep, em_out);
        if (ei->parsed()) return cmd_eval_interp(ei_ck, ei_manifest, ei_indices, ei_max_pairs, ei_out);
        if (pu->parsed()) return cmd_puppeteer(pu_ck, pu_identity, pu_poses, pu_out);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
