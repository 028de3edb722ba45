#pragma once

#include <filesystem>
#include <stdexcept>

#include "poiformer/model.hpp"

namespace poiformer {

inline constexpr int kCheckpointFormatVersion = 1;

/// Unsupported or inconsistent checkpoint files.
class FormatError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Writes `model.json` (manifest with config echo and per-tensor name,
/// shape, dtype and byte offset) and `model.bin` (little-endian float32 in
/// manifest order) into `dir`.
void save_checkpoint(const std::filesystem::path& dir, const PoiFormer& model);

/// Rebuilds the model from a checkpoint directory. The vocabulary is not
/// part of the checkpoint; bind it with set_vocabulary.
PoiFormer load_checkpoint(const std::filesystem::path& dir);

}  // namespace poiformer
