#pragma once

#include <shapemorph/params.hpp>

#include <filesystem>
#include <string>

namespace shapemorph {

/// Checkpoint container: format version, a flat key=value configuration
/// echo (the net config plus whatever the trainer ran with), every named
/// parameter as row-major 32-bit entries, and the Adam state. Write/read
/// round-trips bit-exactly.
struct Checkpoint {
    std::string config_echo;
    ParamStore<float> params;
};

void save_checkpoint(const ParamStore<float>& params, const std::string& config_echo,
                     const std::filesystem::path& path);

Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace shapemorph
