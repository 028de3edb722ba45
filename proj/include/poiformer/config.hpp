#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "poiformer/data.hpp"
#include "poiformer/synthetic.hpp"
#include "poiformer/trainer.hpp"

namespace poiformer {

/// Invalid configuration: unknown key, wrong type or out-of-range value.
/// The message names the offending key path.
class ConfigError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

struct PrepareConfig {
    CheckinFormat format = CheckinFormat::gowalla_tsv;
    std::size_t min_user_checkins = 10;
    std::size_t min_poi_visits = 10;
    std::size_t window = 100;
};

/// Everything a run can be configured with. Sections: model, augmentation,
/// train, prepare, ablate.
struct RunConfig {
    TrainConfig train;
    PrepareConfig prepare;
    std::vector<std::uint64_t> ablate_seeds{1, 2, 3, 4, 5};
};

nlohmann::json to_json(const ModelConfig& c);
nlohmann::json to_json(const AugmentationConfig& c);
nlohmann::json to_json(const TrainConfig& c);  // model, augmentation and train sections
nlohmann::json to_json(const RunConfig& c);
nlohmann::json to_json(const SyntheticSpec& s);
nlohmann::json to_json(const Metrics& m);

/// Strict readers: absent keys keep their defaults, unknown keys throw.
ModelConfig model_config_from_json(const nlohmann::json& j);
RunConfig run_config_from_json(const nlohmann::json& j);
SyntheticSpec synthetic_spec_from_json(const nlohmann::json& j);

/// Reads a JSON file; syntax errors become ConfigError.
nlohmann::json read_json_file(const std::filesystem::path& path);

/// Applies POI_SEED, when set, to the training seed.
void apply_env_overrides(RunConfig& c);

}  // namespace poiformer
