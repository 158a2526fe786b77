#pragma once

#include <shapemorph/geodesic.hpp>
#include <shapemorph/losses.hpp>
#include <shapemorph/mesh.hpp>
#include <shapemorph/nets.hpp>
#include <shapemorph/synthgen.hpp>

#include <filesystem>
#include <optional>
#include <random>
#include <string>
#include <vector>

namespace shapemorph {

/// Everything one unsupervised run needs; mirrors the flat key=value config
/// file one to one. CLI flags override file values.
struct TrainConfig {
    std::string dataset;        // manifest path
    int epochs = 50;
    int steps_per_epoch = 0;    // 0: one step per dataset shape
    double learning_rate = 1e-4;
    std::uint64_t seed = 1;
    LossWeights weights;

    int t_init = 1;             // discrete time steps, doubled on a log schedule
    int t_double_every = 10;    // epochs between doublings
    int t_max = 8;
    int e_geo = 0;              // epoch at which lambda_geo drops to 0; 0: 60% of epochs

    double keep_min = 0.7;      // decimation keep-fraction range
    double keep_max = 1.0;
    double azimuth_min = 0.0;   // shared azimuth rotation range (radians)
    double azimuth_max = 2.0 * 3.14159265358979323846;
    bool shared_rotation = true;  // off: rotate the two meshes independently

    int accumulate_pairs = 1;   // pairs per optimizer update
    int checkpoint_every = 0;   // epochs between checkpoints; 0: final only
    std::string out_dir = "train_out";

    NetConfig net;

    void validate() const;
    int resolved_e_geo() const { return e_geo > 0 ? e_geo : (epochs * 6) / 10; }
    int resolved_steps(std::size_t dataset_size) const {
        return steps_per_epoch > 0 ? steps_per_epoch : static_cast<int>(dataset_size);
    }

    std::string serialize() const;
};

TrainConfig parse_train_config(const std::filesystem::path& path);
TrainConfig parse_train_config_text(const std::string& text);
/// Applies one "key=value" override (the CLI's --set).
void apply_override(TrainConfig& cfg, const std::string& key_value);

/// T(epoch) = min(T_max, T_init * 2^floor(epoch / doubling_interval)).
int schedule_T(int epoch, const TrainConfig& cfg);

/// Configured lambda_geo before the decay epoch, 0 from it onward.
double schedule_lambda_geo(int epoch, const TrainConfig& cfg);

/// Ordered pair of distinct indices, uniform, deterministic under the rng.
std::pair<std::size_t, std::size_t> sample_pair(std::size_t dataset_size, std::mt19937_64& rng);

/// Independent decimation of both meshes (keep fraction drawn per mesh) then
/// one azimuth rotation, shared across the pair unless configured otherwise.
std::pair<Mesh, Mesh> augment_pair(const Mesh& x, const Mesh& y, const TrainConfig& cfg,
                                   std::mt19937_64& rng);

struct StepResult {
    double reg = 0.0;
    double arap = 0.0;
    double geo = 0.0;   // valid only when has_geo
    bool has_geo = false;
    double total = 0.0;
    int t = 1;
    double lambda_geo = 0.0;
};

/// One forward pass (trajectory at the current T), composite loss, backward,
/// one Adam update. Distance matrices are required only when lambda_geo > 0.
StepResult train_step(const Mesh& mesh_x, const Mesh& mesh_y, const DenseDistances* d_x,
                      const DenseDistances* d_y, ParamStore<float>& params, const NetConfig& net,
                      const LossWeights& weights, int time_steps, const AdamSettings& adam);

/// Full unsupervised run: pair sampling, augmentation, schedules, logging,
/// checkpoints. Returns the final checkpoint path. Bit-reproducible under
/// (config, seed).
std::filesystem::path train(const TrainConfig& cfg);

}  // namespace shapemorph
