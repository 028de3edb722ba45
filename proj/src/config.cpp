#include "poiformer/config.hpp"

#include <fmt/format.h>

#include <cstdlib>
#include <fstream>
#include <set>

namespace poiformer {

using nlohmann::json;

namespace {

const char* format_name(CheckinFormat f) {
    return f == CheckinFormat::gowalla_tsv ? "gowalla_tsv" : "foursquare_tsv";
}

const char* profile_mode_name(ProfileMode m) {
    return m == ProfileMode::random ? "random" : "paired_disjoint";
}

// Walks one JSON object, remembering which keys were consumed so the rest
// can be reported as unknown.
class Reader {
public:
    Reader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
        if (!j_.is_object()) throw ConfigError(fmt::format("{}: expected an object", where()));
    }

    template <typename T>
    void read(const char* key, T& out) {
        seen_.insert(key);
        auto it = j_.find(key);
        if (it == j_.end()) return;
        try {
            out = it->get<T>();
        } catch (const json::exception&) {
            throw ConfigError(fmt::format("{}.{}: wrong type ({})", where(), key, it->type_name()));
        }
    }

    void read_size(const char* key, std::size_t& out) {
        seen_.insert(key);
        auto it = j_.find(key);
        if (it == j_.end()) return;
        if (!it->is_number_unsigned()) {
            throw ConfigError(fmt::format("{}.{}: expected a non-negative integer", where(), key));
        }
        out = it->get<std::size_t>();
    }

    template <typename F>
    void read_with(const char* key, F&& parse) {
        seen_.insert(key);
        auto it = j_.find(key);
        if (it == j_.end()) return;
        try {
            parse(*it);
        } catch (const ConfigError&) {
            throw;
        } catch (const std::exception& e) {
            throw ConfigError(fmt::format("{}.{}: {}", where(), key, e.what()));
        }
    }

    const json* child(const char* key) {
        seen_.insert(key);
        auto it = j_.find(key);
        return it == j_.end() ? nullptr : &*it;
    }

    std::string sub(const char* key) const { return path_.empty() ? key : path_ + "." + key; }

    void finish() const {
        for (auto it = j_.begin(); it != j_.end(); ++it)
            if (!seen_.count(it.key())) throw ConfigError(fmt::format("{}: unknown key '{}'", where(), it.key()));
    }

private:
    std::string where() const { return path_.empty() ? "config" : path_; }

    const json& j_;
    std::string path_;
    std::set<std::string> seen_;
};

void read_model(const json& j, ModelConfig& c, const std::string& path) {
    Reader r(j, path);
    r.read_size("d", c.d);
    r.read_size("heads", c.heads);
    r.read_size("encoder_layers", c.encoder_layers);
    r.read_size("query_layers", c.query_layers);
    r.read_size("decoder_layers", c.decoder_layers);
    r.read_size("ffn_mult", c.ffn_mult);
    r.read_size("max_len", c.max_len);
    r.read_size("cat_dim", c.cat_dim);
    r.read("dropout", c.dropout);
    r.read("ln_eps", c.ln_eps);
    r.read("attention_scaling", c.attention_scaling);
    r.read("eq5_literal_values", c.eq5_literal_values);
    r.read("share_with_history_encoder", c.share_with_history_encoder);
    r.read("positions_from_end", c.positions_from_end);
    r.read("tau_init", c.tau_init);
    r.read("learn_tau", c.learn_tau);
    r.read("tau_min", c.tau_min);
    r.read("tau_max", c.tau_max);
    r.read_with("ablation", [&](const json& v) { c.ablation = parse_ablation(v.get<std::string>()); });
    r.read_size("num_category_ids", c.num_category_ids);
    if (const json* b = r.child("bounds")) {
        Reader rb(*b, r.sub("bounds"));
        rb.read("lon_min", c.bounds.lon_min);
        rb.read("lon_max", c.bounds.lon_max);
        rb.read("lat_min", c.bounds.lat_min);
        rb.read("lat_max", c.bounds.lat_max);
        rb.finish();
    }
    r.finish();
    try {
        c.validate();
    } catch (const std::invalid_argument& e) {
        throw ConfigError(fmt::format("{}: {}", path, e.what()));
    }
}

void read_augmentation(const json& j, AugmentationConfig& c, const std::string& path) {
    Reader r(j, path);
    r.read("apply_prob", c.apply_prob);
    r.read("crop_keep_ratio", c.crop_keep_ratio);
    r.read("mask_ratio", c.mask_ratio);
    r.read("reorder_ratio", c.reorder_ratio);
    r.read_with("enabled_methods", [&](const json& v) {
        c.enabled_methods.clear();
        for (const auto& m : v) c.enabled_methods.push_back(parse_method(m.get<std::string>()));
    });
    r.finish();
}

void read_train(const json& j, TrainConfig& c, const std::string& path) {
    Reader r(j, path);
    r.read_size("epochs", c.epochs);
    r.read_size("batch_size", c.batch_size);
    r.read("lr", c.lr);
    r.read("weight_decay", c.weight_decay);
    r.read("decoupled_wd", c.decoupled_wd);
    r.read("grad_clip", c.grad_clip);
    r.read("lambda", c.lambda);
    r.read_size("num_negatives", c.num_negatives);
    r.read_with("negative_sampling",
                [&](const json& v) { c.negative_sampling = parse_negative_sampling(v.get<std::string>()); });
    r.read("seed", c.seed);
    r.read("category_vectors", c.category_vectors);
    r.read("freeze_category_vectors", c.freeze_category_vectors);
    r.finish();
}

}  // namespace

json to_json(const ModelConfig& c) {
    return {
        {"d", c.d},
        {"heads", c.heads},
        {"encoder_layers", c.encoder_layers},
        {"query_layers", c.query_layers},
        {"decoder_layers", c.decoder_layers},
        {"ffn_mult", c.ffn_mult},
        {"max_len", c.max_len},
        {"cat_dim", c.cat_dim},
        {"dropout", c.dropout},
        {"ln_eps", c.ln_eps},
        {"attention_scaling", c.attention_scaling},
        {"eq5_literal_values", c.eq5_literal_values},
        {"share_with_history_encoder", c.share_with_history_encoder},
        {"positions_from_end", c.positions_from_end},
        {"tau_init", c.tau_init},
        {"learn_tau", c.learn_tau},
        {"tau_min", c.tau_min},
        {"tau_max", c.tau_max},
        {"ablation", ablation_name(c.ablation)},
        {"num_category_ids", c.num_category_ids},
        {"bounds",
         {{"lon_min", c.bounds.lon_min},
          {"lon_max", c.bounds.lon_max},
          {"lat_min", c.bounds.lat_min},
          {"lat_max", c.bounds.lat_max}}},
    };
}

json to_json(const AugmentationConfig& c) {
    json methods = json::array();
    for (auto m : c.enabled_methods) methods.push_back(method_name(m));
    return {{"apply_prob", c.apply_prob},
            {"crop_keep_ratio", c.crop_keep_ratio},
            {"mask_ratio", c.mask_ratio},
            {"reorder_ratio", c.reorder_ratio},
            {"enabled_methods", methods}};
}

json to_json(const TrainConfig& c) {
    return {{"model", to_json(c.model)},
            {"augmentation", to_json(c.augmentation)},
            {"train",
             {{"epochs", c.epochs},
              {"batch_size", c.batch_size},
              {"lr", c.lr},
              {"weight_decay", c.weight_decay},
              {"decoupled_wd", c.decoupled_wd},
              {"grad_clip", c.grad_clip},
              {"lambda", c.lambda},
              {"num_negatives", c.num_negatives},
              {"negative_sampling", negative_sampling_name(c.negative_sampling)},
              {"seed", c.seed},
              {"category_vectors", c.category_vectors},
              {"freeze_category_vectors", c.freeze_category_vectors}}}};
}

json to_json(const RunConfig& c) {
    json j = to_json(c.train);
    j["prepare"] = {{"format", format_name(c.prepare.format)},
                    {"min_user_checkins", c.prepare.min_user_checkins},
                    {"min_poi_visits", c.prepare.min_poi_visits},
                    {"window", c.prepare.window}};
    j["ablate"] = {{"seeds", c.ablate_seeds}};
    return j;
}

json to_json(const SyntheticSpec& s) {
    return {{"num_users", s.num_users},
            {"num_pois", s.num_pois},
            {"num_categories", s.num_categories},
            {"preference_profiles", s.preference_profiles},
            {"profile_mode", profile_mode_name(s.profile_mode)},
            {"transition_noise", s.transition_noise},
            {"seq_len", s.seq_len},
            {"kernel_branching", s.kernel_branching},
            {"seed", s.seed}};
}

json to_json(const Metrics& m) {
    return {{"recall@1", m.recall_1}, {"recall@5", m.recall_5},   {"recall@10", m.recall_10},
            {"ndcg@5", m.ndcg_5},     {"ndcg@10", m.ndcg_10},     {"num_queries", m.num_queries}};
}

ModelConfig model_config_from_json(const json& j) {
    ModelConfig c;
    read_model(j, c, "model");
    return c;
}

RunConfig run_config_from_json(const json& j) {
    RunConfig c;
    Reader r(j, "");
    if (const json* m = r.child("model")) read_model(*m, c.train.model, "model");
    if (const json* a = r.child("augmentation")) read_augmentation(*a, c.train.augmentation, "augmentation");
    if (const json* t = r.child("train")) read_train(*t, c.train, "train");
    if (const json* p = r.child("prepare")) {
        Reader rp(*p, "prepare");
        rp.read_with("format", [&](const json& v) { c.prepare.format = parse_format(v.get<std::string>()); });
        rp.read_size("min_user_checkins", c.prepare.min_user_checkins);
        rp.read_size("min_poi_visits", c.prepare.min_poi_visits);
        rp.read_size("window", c.prepare.window);
        rp.finish();
        if (c.prepare.window < 4) throw ConfigError("prepare.window: must be at least 4");
    }
    if (const json* a = r.child("ablate")) {
        Reader ra(*a, "ablate");
        ra.read("seeds", c.ablate_seeds);
        ra.finish();
        if (c.ablate_seeds.empty()) throw ConfigError("ablate.seeds: at least one seed required");
    }
    r.finish();
    try {
        c.train.validate();
    } catch (const ConfigError&) {
        throw;
    } catch (const std::invalid_argument& e) {
        throw ConfigError(fmt::format("config: {}", e.what()));
    }
    return c;
}

SyntheticSpec synthetic_spec_from_json(const json& j) {
    SyntheticSpec s;
    Reader r(j, "spec");
    r.read_size("num_users", s.num_users);
    r.read_size("num_pois", s.num_pois);
    r.read_size("num_categories", s.num_categories);
    r.read("preference_profiles", s.preference_profiles);
    r.read_with("profile_mode", [&](const json& v) {
        const auto name = v.get<std::string>();
        if (name == "random")
            s.profile_mode = ProfileMode::random;
        else if (name == "paired_disjoint")
            s.profile_mode = ProfileMode::paired_disjoint;
        else
            throw std::invalid_argument(fmt::format("unknown profile mode '{}'", name));
    });
    r.read("transition_noise", s.transition_noise);
    r.read_size("seq_len", s.seq_len);
    r.read_size("kernel_branching", s.kernel_branching);
    r.read("seed", s.seed);
    r.finish();
    try {
        s.validate();
    } catch (const std::invalid_argument& e) {
        throw ConfigError(e.what());
    }
    return s;
}

json read_json_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError(fmt::format("cannot open '{}'", path.string()));
    try {
        return json::parse(in);
    } catch (const json::parse_error& e) {
        throw ConfigError(fmt::format("{}: {}", path.string(), e.what()));
    }
}

void apply_env_overrides(RunConfig& c) {
    const char* seed = std::getenv("POI_SEED");
    if (!seed || !*seed) return;
    char* end = nullptr;
    const unsigned long long v = std::strtoull(seed, &end, 10);
    if (*end != '\0') throw ConfigError(fmt::format("POI_SEED='{}' is not an unsigned integer", seed));
    c.train.seed = v;
}

}  // namespace poiformer
