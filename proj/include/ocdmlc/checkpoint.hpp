#pragma once

#include <array>
#include <bit>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>

#include "ocdmlc/model.hpp"

namespace ocdmlc {

class CheckpointError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Layout (all integers little-endian):
//   magic "OCDMLCK\0" | u32 version | u32 config length | config text (key=value lines)
//   | u32 record count | records...
// record: u32 name length | name | u32 rank | u64 dims[rank] | f64 values[product(dims)]
inline constexpr std::array<char, 8> kCheckpointMagic{'O', 'C', 'D', 'M', 'L', 'C', 'K', '\0'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {

template <class T>
void put_le(std::ostream& out, T v) {
    std::array<char, sizeof(T)> bytes{};
    auto u = static_cast<std::uint64_t>(v);
    for (std::size_t i = 0; i < sizeof(T); ++i) bytes[i] = static_cast<char>((u >> (8 * i)) & 0xff);
    out.write(bytes.data(), bytes.size());
}

template <class T>
T get_le(std::istream& in) {
    std::array<unsigned char, sizeof(T)> bytes{};
    in.read(reinterpret_cast<char*>(bytes.data()), bytes.size());
    if (!in) throw CheckpointError("checkpoint: truncated file");
    std::uint64_t u = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) u |= static_cast<std::uint64_t>(bytes[i]) << (8 * i);
    return static_cast<T>(u);
}

inline std::string model_config_text(const ModelConfig& c) {
    std::ostringstream os;
    os << "embed_dim=" << c.embed_dim << '\n'
       << "encoder_hidden=" << c.encoder_hidden << '\n'
       << "encoder_layers=" << c.encoder_layers << '\n'
       << "decoder_hidden=" << c.decoder_hidden << '\n'
       << "decoder_layers=" << c.decoder_layers << '\n'
       << "br_hidden=" << c.br_hidden << '\n'
       << "br_depth=" << c.br_depth << '\n'
       << "dropout_bits=" << std::bit_cast<std::uint64_t>(c.dropout) << '\n'
       << "labels=" << c.labels << '\n'
       << "vocab=" << c.vocab << '\n';
    return os.str();
}

inline ModelConfig parse_model_config(const std::string& text) {
    ModelConfig c;
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
        const auto eq = line.find('=');
        if (eq == std::string::npos) continue;
        const std::string key = line.substr(0, eq);
        const std::string val = line.substr(eq + 1);
        if (key == "embed_dim") c.embed_dim = std::stoi(val);
        else if (key == "encoder_hidden") c.encoder_hidden = std::stoi(val);
        else if (key == "encoder_layers") c.encoder_layers = std::stoi(val);
        else if (key == "decoder_hidden") c.decoder_hidden = std::stoi(val);
        else if (key == "decoder_layers") c.decoder_layers = std::stoi(val);
        else if (key == "br_hidden") c.br_hidden = std::stoi(val);
        else if (key == "br_depth") c.br_depth = std::stoi(val);
        else if (key == "dropout_bits") c.dropout = std::bit_cast<double>(std::stoull(val));
        else if (key == "labels") c.labels = std::stoi(val);
        else if (key == "vocab") c.vocab = std::stoi(val);
    }
    return c;
}

}  // namespace detail

inline void save_checkpoint(std::ostream& out, const Model& model) {
    out.write(kCheckpointMagic.data(), kCheckpointMagic.size());
    detail::put_le<std::uint32_t>(out, kCheckpointVersion);
    const std::string cfg = detail::model_config_text(model.config());
    detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(cfg.size()));
    out.write(cfg.data(), static_cast<std::streamsize>(cfg.size()));
    detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(model.params().count()));
    for (const auto& [name, t] : model.params()) {
        detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
        out.write(name.data(), static_cast<std::streamsize>(name.size()));
        detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(t.rank()));
        for (auto d : t.shape()) detail::put_le<std::uint64_t>(out, d);
        for (double v : t.values()) detail::put_le<std::uint64_t>(out, std::bit_cast<std::uint64_t>(v));
    }
}

inline Model load_checkpoint(std::istream& in) {
    std::array<char, 8> magic{};
    in.read(magic.data(), magic.size());
    if (!in || magic != kCheckpointMagic) throw CheckpointError("checkpoint: bad magic bytes");
    const auto version = detail::get_le<std::uint32_t>(in);
    if (version != kCheckpointVersion) {
        throw CheckpointError("checkpoint: unsupported version " + std::to_string(version));
    }
    const auto cfg_len = detail::get_le<std::uint32_t>(in);
    std::string cfg(cfg_len, '\0');
    in.read(cfg.data(), cfg_len);
    if (!in) throw CheckpointError("checkpoint: truncated config");
    const ModelConfig config = detail::parse_model_config(cfg);

    ParameterStore params;
    const auto count = detail::get_le<std::uint32_t>(in);
    for (std::uint32_t r = 0; r < count; ++r) {
        const auto name_len = detail::get_le<std::uint32_t>(in);
        std::string name(name_len, '\0');
        in.read(name.data(), name_len);
        const auto rank = detail::get_le<std::uint32_t>(in);
        if (rank < 1 || rank > 2) throw CheckpointError("checkpoint: bad rank for " + name);
        Shape shape;
        for (std::uint32_t i = 0; i < rank; ++i) shape.push_back(detail::get_le<std::uint64_t>(in));
        std::vector<double> values(element_count(shape));
        for (auto& v : values) v = std::bit_cast<double>(detail::get_le<std::uint64_t>(in));
        params.add(name, Tensor(shape, std::move(values)));
    }
    Model reference(config, 0);
    for (const auto& [name, t] : reference.params()) {
        if (!params.contains(name) || params.get(name).shape() != t.shape()) {
            throw CheckpointError("checkpoint: missing or misshapen parameter " + name);
        }
    }
    return Model(config, std::move(params));
}

inline void save_checkpoint(const std::filesystem::path& path, const Model& model) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw CheckpointError("checkpoint: cannot write " + path.string());
    save_checkpoint(out, model);
}

inline Model load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw CheckpointError("checkpoint: cannot read " + path.string());
    return load_checkpoint(in);
}

}  // namespace ocdmlc
