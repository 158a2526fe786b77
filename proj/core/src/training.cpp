#include <shapemorph/training.hpp>

#include <shapemorph/checkpoint.hpp>
#include <shapemorph/mesh_io.hpp>

#include <bit>
#include <cmath>
#include <cstdio>
#include <deque>
#include <fstream>
#include <memory>
#include <sstream>
#include <stdexcept>

namespace shapemorph {

namespace {
std::string fmt9(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.9g", v);
    return buf;
}
}  // namespace

void TrainConfig::validate() const {
    weights.validate();
    net.validate();
    if (epochs < 0) throw std::invalid_argument("train config: epochs must be >= 0");
    if (t_init < 1) throw std::invalid_argument("train config: t_init must be >= 1");
    if (t_max < t_init || t_max % t_init != 0 || !std::has_single_bit(static_cast<unsigned>(t_max / t_init)))
        throw std::invalid_argument("train config: t_max must be a power-of-two multiple of t_init");
    if (t_double_every < 1) throw std::invalid_argument("train config: t_double_every must be >= 1");
    if (resolved_e_geo() > epochs && epochs > 0)
        throw std::invalid_argument("train config: e_geo must be <= epochs");
    if (!(keep_min > 0.0 && keep_min <= keep_max && keep_max <= 1.0))
        throw std::invalid_argument("train config: keep range must satisfy 0 < min <= max <= 1");
    if (learning_rate < 0) throw std::invalid_argument("train config: negative learning rate");
    if (accumulate_pairs < 1) throw std::invalid_argument("train config: accumulate_pairs >= 1");
}

std::string TrainConfig::serialize() const {
    std::ostringstream out;
    out << "dataset=" << dataset << "\n";
    out << "epochs=" << epochs << "\n";
    out << "steps_per_epoch=" << steps_per_epoch << "\n";
    out << "learning_rate=" << fmt9(learning_rate) << "\n";
    out << "seed=" << seed << "\n";
    out << "lambda_reg=" << fmt9(weights.lambda_reg) << "\n";
    out << "lambda_arap=" << fmt9(weights.lambda_arap) << "\n";
    out << "lambda_geo=" << fmt9(weights.lambda_geo) << "\n";
    out << "t_init=" << t_init << "\n";
    out << "t_double_every=" << t_double_every << "\n";
    out << "t_max=" << t_max << "\n";
    out << "e_geo=" << e_geo << "\n";
    out << "keep_min=" << fmt9(keep_min) << "\n";
    out << "keep_max=" << fmt9(keep_max) << "\n";
    out << "azimuth_min=" << fmt9(azimuth_min) << "\n";
    out << "azimuth_max=" << fmt9(azimuth_max) << "\n";
    out << "shared_rotation=" << (shared_rotation ? 1 : 0) << "\n";
    out << "accumulate_pairs=" << accumulate_pairs << "\n";
    out << "checkpoint_every=" << checkpoint_every << "\n";
    out << "out_dir=" << out_dir << "\n";
    out << net.serialize();
    return out.str();
}

namespace {

void apply_key(TrainConfig& cfg, const std::string& key, const std::string& val) {
    auto widths = [](const std::string& s) {
        std::vector<int> v;
        std::istringstream ss(s);
        std::string tok;
        while (std::getline(ss, tok, ',')) v.push_back(std::stoi(tok));
        return v;
    };
    if (key == "dataset") cfg.dataset = val;
    else if (key == "epochs") cfg.epochs = std::stoi(val);
    else if (key == "steps_per_epoch") cfg.steps_per_epoch = std::stoi(val);
    else if (key == "learning_rate") cfg.learning_rate = std::stod(val);
    else if (key == "seed") cfg.seed = std::stoull(val);
    else if (key == "lambda_reg") cfg.weights.lambda_reg = std::stod(val);
    else if (key == "lambda_arap") cfg.weights.lambda_arap = std::stod(val);
    else if (key == "lambda_geo") cfg.weights.lambda_geo = std::stod(val);
    else if (key == "t_init") cfg.t_init = std::stoi(val);
    else if (key == "t_double_every") cfg.t_double_every = std::stoi(val);
    else if (key == "t_max") cfg.t_max = std::stoi(val);
    else if (key == "e_geo") cfg.e_geo = std::stoi(val);
    else if (key == "keep_min") cfg.keep_min = std::stod(val);
    else if (key == "keep_max") cfg.keep_max = std::stod(val);
    else if (key == "azimuth_min") cfg.azimuth_min = std::stod(val);
    else if (key == "azimuth_max") cfg.azimuth_max = std::stod(val);
    else if (key == "shared_rotation") cfg.shared_rotation = std::stoi(val) != 0;
    else if (key == "accumulate_pairs") cfg.accumulate_pairs = std::stoi(val);
    else if (key == "checkpoint_every") cfg.checkpoint_every = std::stoi(val);
    else if (key == "out_dir") cfg.out_dir = val;
    else if (key == "phi_widths") cfg.net.phi_widths = widths(val);
    else if (key == "psi_widths") cfg.net.psi_widths = widths(val);
    else if (key == "feat_dim") cfg.net.feat_dim = std::stoi(val);
    else if (key == "sigma") cfg.net.sigma = std::stod(val);
    else if (key == "hidden_width") cfg.net.hidden_width = std::stoi(val);
    else if (key == "global_append") cfg.net.global_append = std::stoi(val) != 0;
    else if (key == "vertex_only") cfg.net.vertex_only = std::stoi(val) != 0;
    else throw std::invalid_argument("unknown config key: " + key);
}

std::string trim(const std::string& s) {
    const auto a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    const auto b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

}  // namespace

TrainConfig parse_train_config_text(const std::string& text) {
    TrainConfig cfg;
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
        const std::string t = trim(line);
        if (t.empty() || t[0] == '#') continue;
        const auto eq = t.find('=');
        if (eq == std::string::npos) throw std::invalid_argument("config line without '=': " + t);
        apply_key(cfg, trim(t.substr(0, eq)), trim(t.substr(eq + 1)));
    }
    return cfg;
}

TrainConfig parse_train_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open config " + path.string());
    std::stringstream buf;
    buf << in.rdbuf();
    return parse_train_config_text(buf.str());
}

void apply_override(TrainConfig& cfg, const std::string& key_value) {
    const auto eq = key_value.find('=');
    if (eq == std::string::npos) throw std::invalid_argument("override must be key=value: " + key_value);
    apply_key(cfg, trim(key_value.substr(0, eq)), trim(key_value.substr(eq + 1)));
}

int schedule_T(int epoch, const TrainConfig& cfg) {
    if (epoch < 0) throw std::invalid_argument("schedule_T: negative epoch");
    const int doublings = epoch / cfg.t_double_every;
    long t = cfg.t_init;
    for (int k = 0; k < doublings && t < cfg.t_max; ++k) t *= 2;
    return static_cast<int>(std::min<long>(t, cfg.t_max));
}

double schedule_lambda_geo(int epoch, const TrainConfig& cfg) {
    if (epoch < 0) throw std::invalid_argument("schedule_lambda_geo: negative epoch");
    return epoch < cfg.resolved_e_geo() ? cfg.weights.lambda_geo : 0.0;
}

std::pair<std::size_t, std::size_t> sample_pair(std::size_t dataset_size, std::mt19937_64& rng) {
    if (dataset_size < 2) throw std::invalid_argument("sample_pair: dataset has fewer than 2 shapes");
    const std::size_t i = uniform_index(rng, dataset_size);
    std::size_t j = uniform_index(rng, dataset_size - 1);
    if (j >= i) ++j;
    return {i, j};
}

std::pair<Mesh, Mesh> augment_pair(const Mesh& x, const Mesh& y, const TrainConfig& cfg,
                                   std::mt19937_64& rng) {
    const double keep_x = uniform_in(rng, cfg.keep_min, cfg.keep_max);
    const std::uint64_t seed_x = rng();
    const double keep_y = uniform_in(rng, cfg.keep_min, cfg.keep_max);
    const std::uint64_t seed_y = rng();
    const double angle_x = uniform_in(rng, cfg.azimuth_min, cfg.azimuth_max);
    const double angle_y = cfg.shared_rotation ? angle_x : uniform_in(rng, cfg.azimuth_min, cfg.azimuth_max);
    Mesh ax = rotate_azimuth(decimate(x, keep_x, seed_x).mesh, angle_x);
    Mesh ay = rotate_azimuth(decimate(y, keep_y, seed_y).mesh, angle_y);
    return {std::move(ax), std::move(ay)};
}

namespace {

StepResult backprop_pair(Graph<float>& g, Bound<float>& bind, const Mesh& mx, const Mesh& my,
                         const DenseDistances* dx, const DenseDistances* dy, const NetConfig& net,
                         const LossWeights& w, int time_steps) {
    const EdgeSet ex = edge_set(mx), ey = edge_set(my);
    ForwardBundle<float> fb = forward_pair(g, mx, ex, my, ey, bind, net, time_steps);

    LossComponents<float> comp;
    comp.reg = registration_loss(g, fb.states.back(), fb.pi, fb.y_leaf);
    comp.arap = arap_sequence_loss(g, ex, fb.states);
    if (w.lambda_geo > 0.0) {
        if (!dx || !dy)
            throw std::invalid_argument("train_step: lambda_geo > 0 but no distance matrices");
        comp.geo = geodesic_loss(g, fb.pi, g.leaf(dx->dist.cast<float>()), g.leaf(dy->dist.cast<float>()));
        comp.has_geo = true;
    }
    Value<float> total = total_loss(g, comp, w);
    g.backward(total);
    bind.accumulate_grads();

    StepResult r;
    r.reg = static_cast<double>(comp.reg.scalar());
    r.arap = static_cast<double>(comp.arap.scalar());
    r.has_geo = comp.has_geo;
    r.geo = comp.has_geo ? static_cast<double>(comp.geo.scalar()) : std::nan("");
    r.total = static_cast<double>(total.scalar());
    r.t = time_steps;
    r.lambda_geo = w.lambda_geo;
    return r;
}

}  // namespace

StepResult train_step(const Mesh& mx, const Mesh& my, const DenseDistances* dx,
                      const DenseDistances* dy, ParamStore<float>& params, const NetConfig& net,
                      const LossWeights& w, int time_steps, const AdamSettings& adam) {
    params.zero_grad();
    Graph<float> g;
    Bound<float> bind(g, params);
    StepResult r = backprop_pair(g, bind, mx, my, dx, dy, net, w, time_steps);
    params.adam_step(adam);
    return r;
}

std::filesystem::path train(const TrainConfig& cfg) {
    cfg.validate();
    const DatasetManifest manifest = load_manifest(cfg.dataset);
    std::vector<Mesh> meshes;
    meshes.reserve(manifest.entries.size());
    for (std::size_t i = 0; i < manifest.entries.size(); ++i)
        meshes.push_back(load_mesh(manifest.mesh_path(i)));
    if (meshes.size() < 2) throw std::runtime_error("train: dataset has fewer than 2 shapes");

    std::filesystem::create_directories(cfg.out_dir);
    const std::string echo = cfg.serialize();

    std::mt19937_64 rng(cfg.seed);
    ParamStore<float> params;
    init_params(params, cfg.net, rng);

    std::ofstream log(std::filesystem::path(cfg.out_dir) / "train_log.csv", std::ios::binary);
    log << "step,loss_reg,loss_arap,loss_geo,loss_total,T,lambda_geo\n";

    const AdamSettings adam{cfg.learning_rate, 0.9, 0.999, 1e-8};
    const int steps = cfg.resolved_steps(meshes.size());

    // Distance matrices for the geodesic loss, keyed by mesh content; a
    // short FIFO absorbs repeated augmented copies (e.g. keep fraction 1).
    std::deque<std::pair<std::uint64_t, std::shared_ptr<DenseDistances>>> dist_cache;
    auto distances_of = [&dist_cache](const Mesh& m) {
        const std::uint64_t h = m.content_hash();
        for (const auto& [k, v] : dist_cache)
            if (k == h) return v;
        dist_cache.emplace_back(h, std::make_shared<DenseDistances>(geodesic_matrix(m)));
        if (dist_cache.size() > 8) dist_cache.pop_front();
        return dist_cache.back().second;
    };

    long global_step = 0;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        const int t_now = schedule_T(epoch, cfg);
        LossWeights w = cfg.weights;
        w.lambda_geo = schedule_lambda_geo(epoch, cfg);
        for (int s = 0; s < steps; ++s) {
            params.zero_grad();
            StepResult mean{};
            for (int a = 0; a < cfg.accumulate_pairs; ++a) {
                const auto [i, j] = sample_pair(meshes.size(), rng);
                const auto [ax, ay] = augment_pair(meshes[i], meshes[j], cfg, rng);
                std::shared_ptr<DenseDistances> dx, dy;
                if (w.lambda_geo > 0.0) {
                    dx = distances_of(ax);
                    dy = distances_of(ay);
                }
                Graph<float> g;
                Bound<float> bind(g, params);
                const StepResult r = backprop_pair(g, bind, ax, ay, dx.get(), dy.get(), cfg.net, w, t_now);
                mean.reg += r.reg;
                mean.arap += r.arap;
                mean.geo = r.geo;  // nan stays nan when geo is off
                mean.has_geo = r.has_geo;
                mean.total += r.total;
            }
            if (cfg.accumulate_pairs > 1) {
                const float inv = 1.0f / static_cast<float>(cfg.accumulate_pairs);
                for (auto& e : params.entries()) e.grad *= inv;
                mean.reg /= cfg.accumulate_pairs;
                mean.arap /= cfg.accumulate_pairs;
                mean.total /= cfg.accumulate_pairs;
            }
            params.adam_step(adam);
            ++global_step;
            log << global_step << "," << fmt9(mean.reg) << "," << fmt9(mean.arap) << ","
                << fmt9(mean.has_geo ? mean.geo : std::nan("")) << "," << fmt9(mean.total) << ","
                << t_now << "," << fmt9(w.lambda_geo) << "\n";
        }
        if (cfg.checkpoint_every > 0 && (epoch + 1) % cfg.checkpoint_every == 0) {
            char name[32];
            std::snprintf(name, sizeof(name), "ckpt_e%04d.bin", epoch + 1);
            save_checkpoint(params, echo, std::filesystem::path(cfg.out_dir) / name);
        }
    }

    const std::filesystem::path final_path = std::filesystem::path(cfg.out_dir) / "ckpt_final.bin";
    save_checkpoint(params, echo, final_path);
    return final_path;
}

}  // namespace shapemorph
