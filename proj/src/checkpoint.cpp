#include "poiformer/checkpoint.hpp"

#include <fmt/format.h>

#include <bit>
#include <cstdint>
#include <fstream>
#include <iterator>

#include "poiformer/config.hpp"

namespace poiformer {

using nlohmann::json;

namespace {

void put_f32(std::string& out, double value) {
    const auto bits = std::bit_cast<std::uint32_t>(static_cast<float>(value));
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xffu));
}

double get_f32(const std::string& in, std::size_t offset) {
    std::uint32_t bits = 0;
    for (int i = 0; i < 4; ++i)
        bits |= static_cast<std::uint32_t>(static_cast<unsigned char>(in[offset + i])) << (8 * i);
    return static_cast<double>(std::bit_cast<float>(bits));
}

}  // namespace

void save_checkpoint(const std::filesystem::path& dir, const PoiFormer& model) {
    std::filesystem::create_directories(dir);
    json tensors = json::array();
    std::string blob;
    for (const auto& [name, t] : model.params().entries()) {
        tensors.push_back({{"name", name}, {"shape", t.shape()}, {"dtype", "float32"}, {"offset", blob.size()}});
        for (double x : t.data()) put_f32(blob, x);
    }
    const json manifest = {{"format_version", kCheckpointFormatVersion},
                           {"dtype", "float32"},
                           {"byte_order", "little"},
                           {"total_bytes", blob.size()},
                           {"config", to_json(model.config())},
                           {"tensors", tensors}};
    std::ofstream(dir / "model.json") << manifest.dump(2) << '\n';
    std::ofstream bin(dir / "model.bin", std::ios::binary);
    bin.write(blob.data(), static_cast<std::streamsize>(blob.size()));
    if (!bin) throw std::runtime_error(fmt::format("cannot write '{}'", (dir / "model.bin").string()));
}

namespace {

PoiFormer load_unchecked(const std::filesystem::path& dir) {
    json manifest;
    {
        std::ifstream in(dir / "model.json");
        if (!in) throw FormatError(fmt::format("cannot open '{}'", (dir / "model.json").string()));
        try {
            manifest = json::parse(in);
        } catch (const json::parse_error& e) {
            throw FormatError(fmt::format("model.json: {}", e.what()));
        }
    }
    if (!manifest.contains("format_version") || manifest["format_version"] != kCheckpointFormatVersion) {
        throw FormatError(fmt::format("unsupported checkpoint format_version {} (expected {})",
                                      manifest.value("format_version", json()).dump(), kCheckpointFormatVersion));
    }
    if (manifest.value("dtype", "") != "float32") throw FormatError("checkpoint dtype must be float32");

    ModelConfig cfg;
    try {
        cfg = model_config_from_json(manifest.at("config"));
    } catch (const std::exception& e) {
        throw FormatError(fmt::format("checkpoint config: {}", e.what()));
    }
    std::ifstream bin(dir / "model.bin", std::ios::binary);
    if (!bin) throw FormatError(fmt::format("cannot open '{}'", (dir / "model.bin").string()));
    const std::string blob((std::istreambuf_iterator<char>(bin)), std::istreambuf_iterator<char>());

    PoiFormer model(cfg, 0);
    const auto& entries = model.params().entries();
    const json& tensors = manifest.at("tensors");
    if (tensors.size() != entries.size()) {
        throw FormatError(fmt::format("checkpoint lists {} tensors, model expects {}", tensors.size(), entries.size()));
    }
    for (std::size_t i = 0; i < entries.size(); ++i) {
        const auto& [name, t] = entries[i];
        const json& rec = tensors[i];
        if (rec.at("name") != name || rec.at("shape").get<Shape>() != t.shape()) {
            throw FormatError(fmt::format("tensor {} is '{}' {}, expected '{}' {}", i, rec.at("name").get<std::string>(),
                                          rec.at("shape").dump(), name, shape_str(t.shape())));
        }
        const std::size_t offset = rec.at("offset").get<std::size_t>();
        if (offset + 4 * t.numel() > blob.size()) throw FormatError(fmt::format("model.bin truncated at '{}'", name));
        Tensor dst = t;
        auto data = dst.data();
        for (std::size_t k = 0; k < data.size(); ++k) data[k] = get_f32(blob, offset + 4 * k);
    }
    return model;
}

}  // namespace

PoiFormer load_checkpoint(const std::filesystem::path& dir) {
    try {
        return load_unchecked(dir);
    } catch (const json::exception& e) {
        throw FormatError(fmt::format("malformed checkpoint manifest: {}", e.what()));
    }
}

}  // namespace poiformer
