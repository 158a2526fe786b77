#include <shapemorph/checkpoint.hpp>

#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace shapemorph {

namespace {

constexpr char kMagic[8] = {'S', 'M', 'C', 'K', 'P', 'T', '0', '1'};

void write_u32(std::ostream& out, std::uint32_t v) { out.write(reinterpret_cast<const char*>(&v), 4); }
void write_u64(std::ostream& out, std::uint64_t v) { out.write(reinterpret_cast<const char*>(&v), 8); }

std::uint32_t read_u32(std::istream& in) {
    std::uint32_t v;
    if (!in.read(reinterpret_cast<char*>(&v), 4)) throw std::runtime_error("checkpoint: truncated");
    return v;
}
std::uint64_t read_u64(std::istream& in) {
    std::uint64_t v;
    if (!in.read(reinterpret_cast<char*>(&v), 8)) throw std::runtime_error("checkpoint: truncated");
    return v;
}

void write_mat(std::ostream& out, const Matf& m) {
    out.write(reinterpret_cast<const char*>(m.data()),
              static_cast<std::streamsize>(sizeof(float) * static_cast<std::size_t>(m.size())));
}

Matf read_mat(std::istream& in, std::uint32_t rows, std::uint32_t cols) {
    Matf m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
    if (!in.read(reinterpret_cast<char*>(m.data()),
                 static_cast<std::streamsize>(sizeof(float) * static_cast<std::size_t>(m.size()))))
        throw std::runtime_error("checkpoint: truncated tensor data");
    return m;
}

}  // namespace

void save_checkpoint(const ParamStore<float>& params, const std::string& config_echo,
                     const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out.write(kMagic, sizeof(kMagic));
    write_u32(out, 1);  // format version
    write_u64(out, config_echo.size());
    out.write(config_echo.data(), static_cast<std::streamsize>(config_echo.size()));
    write_u64(out, static_cast<std::uint64_t>(params.step_count()));
    write_u32(out, static_cast<std::uint32_t>(params.entries().size()));
    for (const auto& e : params.entries()) {
        write_u32(out, static_cast<std::uint32_t>(e.name.size()));
        out.write(e.name.data(), static_cast<std::streamsize>(e.name.size()));
        write_u32(out, static_cast<std::uint32_t>(e.value.rows()));
        write_u32(out, static_cast<std::uint32_t>(e.value.cols()));
        write_mat(out, e.value);
        write_mat(out, e.m);
        write_mat(out, e.v);
    }
    if (!out.good()) throw std::runtime_error("I/O failure writing " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path.string());
    char magic[8];
    if (!in.read(magic, 8) || std::memcmp(magic, kMagic, 8) != 0)
        throw std::runtime_error("not a checkpoint file: " + path.string());
    const std::uint32_t version = read_u32(in);
    if (version != 1) throw std::runtime_error("unsupported checkpoint version");
    Checkpoint ck;
    const std::uint64_t echo_len = read_u64(in);
    ck.config_echo.resize(echo_len);
    if (echo_len && !in.read(ck.config_echo.data(), static_cast<std::streamsize>(echo_len)))
        throw std::runtime_error("checkpoint: truncated config echo");
    const auto step = static_cast<long>(read_u64(in));
    const std::uint32_t count = read_u32(in);
    for (std::uint32_t k = 0; k < count; ++k) {
        const std::uint32_t name_len = read_u32(in);
        std::string name(name_len, '\0');
        if (name_len && !in.read(name.data(), name_len))
            throw std::runtime_error("checkpoint: truncated name");
        const std::uint32_t rows = read_u32(in), cols = read_u32(in);
        Matf value = read_mat(in, rows, cols);
        Matf m = read_mat(in, rows, cols);
        Matf v = read_mat(in, rows, cols);
        ck.params.create(name, std::move(value));
        ck.params.at(name).m = std::move(m);
        ck.params.at(name).v = std::move(v);
    }
    ck.params.set_step_count(step);
    return ck;
}

}  // namespace shapemorph
