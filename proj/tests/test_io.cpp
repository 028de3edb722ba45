#include <doctest.h>

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iterator>

#include "poiformer/checkpoint.hpp"
#include "poiformer/config.hpp"

using namespace poiformer;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
    auto dir = fs::temp_directory_path() / name;
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

ModelConfig small_model() {
    ModelConfig mc;
    mc.d = 8;
    mc.heads = 2;
    mc.encoder_layers = 1;
    mc.query_layers = 1;
    mc.decoder_layers = 1;
    mc.cat_dim = 4;
    mc.max_len = 10;
    mc.num_category_ids = 3;
    mc.bounds = CoordBounds{-74.0, -73.0, 40.0, 41.0};
    return mc;
}

// Keys of `schema` properties must equal the keys of `value`, recursively
// through nested objects.
void check_schema_keys(const json& schema, const json& value, const std::string& path) {
    REQUIRE_MESSAGE(schema.contains("properties"), path);
    const json& props = schema["properties"];
    CHECK_MESSAGE(schema.value("additionalProperties", true) == false, path);
    for (auto it = value.begin(); it != value.end(); ++it) {
        INFO(path << "." << it.key());
        REQUIRE(props.contains(it.key()));
        if (it->is_object()) check_schema_keys(props[it.key()], *it, path + "." + it.key());
    }
    for (auto it = props.begin(); it != props.end(); ++it) {
        INFO(path << "." << it.key());
        CHECK(value.contains(it.key()));
    }
}

}  // namespace

TEST_CASE("run config round-trips through JSON") {
    RunConfig c;
    c.train.model.d = 16;
    c.train.model.ablation = Ablation::no_contrastive;
    c.train.augmentation.enabled_methods = {AugmentMethod::mask};
    c.train.lambda = 0.5;
    c.train.negative_sampling = NegativeSampling::popularity;
    c.prepare.format = CheckinFormat::foursquare_tsv;
    c.prepare.window = 50;
    c.ablate_seeds = {7, 8};
    auto back = run_config_from_json(to_json(c));
    CHECK(to_json(back) == to_json(c));
    CHECK(back.train.model.d == 16);
    CHECK(back.ablate_seeds == std::vector<std::uint64_t>{7, 8});
}

TEST_CASE("absent keys keep defaults") {
    auto c = run_config_from_json(json::parse(R"({"train": {"epochs": 3}})"));
    CHECK(c.train.epochs == 3);
    CHECK(c.train.batch_size == 16);
    CHECK(c.train.lr == 1e-3);
    CHECK(c.train.weight_decay == 1e-4);
    CHECK(c.train.num_negatives == 100);
    CHECK(c.train.model.d == 32);
    CHECK(c.train.augmentation.apply_prob == 0.7);
    CHECK(c.prepare.min_user_checkins == 10);
    CHECK(run_config_from_json(json::object()).train.lambda == 1.0);
}

TEST_CASE("unknown keys and bad values are rejected with their path") {
    auto expect_error = [](const char* text, const char* needle) {
        try {
            run_config_from_json(json::parse(text));
            FAIL("expected ConfigError for " << text);
        } catch (const ConfigError& e) {
            CHECK_MESSAGE(std::string(e.what()).find(needle) != std::string::npos, e.what());
        }
    };
    expect_error(R"({"trian": {}})", "trian");
    expect_error(R"({"model": {"depth": 3}})", "depth");
    expect_error(R"({"model": {"bounds": {"x": 1}}})", "model.bounds");
    expect_error(R"({"train": {"epochs": -1}})", "train.epochs");
    expect_error(R"({"train": {"lr": "fast"}})", "train.lr");
    expect_error(R"({"model": {"d": 30, "heads": 4}})", "model");
    expect_error(R"({"model": {"ablation": "none"}})", "ablation");
    expect_error(R"({"augmentation": {"enabled_methods": ["blur"]}})", "enabled_methods");
    expect_error(R"({"prepare": {"window": 2}})", "window");
    expect_error(R"({"ablate": {"seeds": []}})", "seeds");
    expect_error(R"([1, 2])", "object");
}

TEST_CASE("POI_SEED overrides the training seed") {
    RunConfig c;
    c.train.seed = 3;
    setenv("POI_SEED", "42", 1);
    apply_env_overrides(c);
    CHECK(c.train.seed == 42);
    setenv("POI_SEED", "4x", 1);
    CHECK_THROWS_AS(apply_env_overrides(c), ConfigError);
    unsetenv("POI_SEED");
    apply_env_overrides(c);
    CHECK(c.train.seed == 42);
}

TEST_CASE("synthetic spec parsing") {
    auto s = synthetic_spec_from_json(json::parse(R"({"num_users": 4, "profile_mode": "paired_disjoint"})"));
    CHECK(s.num_users == 4);
    CHECK(s.profile_mode == ProfileMode::paired_disjoint);
    CHECK(synthetic_spec_from_json(to_json(s)).num_users == 4);
    CHECK_THROWS_AS(synthetic_spec_from_json(json::parse(R"({"users": 4})")), ConfigError);
    CHECK_THROWS_AS(synthetic_spec_from_json(json::parse(R"({"transition_noise": 2})")), ConfigError);
}

TEST_CASE("metrics JSON keys") {
    auto j = to_json(Metrics{});
    std::vector<std::string> keys;
    for (auto it = j.begin(); it != j.end(); ++it) keys.push_back(it.key());
    std::sort(keys.begin(), keys.end());
    CHECK(keys == std::vector<std::string>{"ndcg@10", "ndcg@5", "num_queries", "recall@1", "recall@10", "recall@5"});
}

TEST_CASE("published schema covers exactly the config keys") {
    const json schema = read_json_file(SCHEMA_PATH);
    check_schema_keys(schema, to_json(RunConfig{}), "config");
}

TEST_CASE("read_json_file reports syntax errors as ConfigError") {
    auto dir = fresh_dir("poiformer_test_json");
    std::ofstream(dir / "bad.json") << "{\"model\": ";
    CHECK_THROWS_AS(read_json_file(dir / "bad.json"), ConfigError);
    CHECK_THROWS_AS(read_json_file(dir / "missing.json"), ConfigError);
    fs::remove_all(dir);
}

TEST_CASE("checkpoint round-trip preserves float32 values") {
    auto dir = fresh_dir("poiformer_test_ckpt");
    PoiFormer model(small_model(), 9);
    save_checkpoint(dir, model);
    auto back = load_checkpoint(dir);
    CHECK(to_json(back.config()) == to_json(model.config()));
    const auto& a = model.params().entries();
    const auto& b = back.params().entries();
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(a[i].first == b[i].first);
        for (std::size_t k = 0; k < a[i].second.numel(); ++k)
            CHECK(b[i].second.data()[k] == static_cast<double>(static_cast<float>(a[i].second.data()[k])));
    }

    // Saving the reloaded model reproduces identical bytes.
    auto dir2 = fresh_dir("poiformer_test_ckpt2");
    save_checkpoint(dir2, back);
    auto slurp = [](const fs::path& p) {
        std::ifstream in(p, std::ios::binary);
        return std::string(std::istreambuf_iterator<char>(in), {});
    };
    CHECK(slurp(dir / "model.bin") == slurp(dir2 / "model.bin"));
    CHECK(slurp(dir / "model.json") == slurp(dir2 / "model.json"));
    fs::remove_all(dir);
    fs::remove_all(dir2);
}

TEST_CASE("checkpoint manifest layout") {
    auto dir = fresh_dir("poiformer_test_manifest");
    PoiFormer model(small_model(), 2);
    save_checkpoint(dir, model);
    const json m = read_json_file(dir / "model.json");
    CHECK(m["format_version"] == 1);
    CHECK(m["dtype"] == "float32");
    CHECK(m["byte_order"] == "little");
    CHECK(m["total_bytes"] == 4 * model.params().total_size());
    CHECK(fs::file_size(dir / "model.bin") == 4 * model.params().total_size());
    std::size_t offset = 0;
    for (const auto& t : m["tensors"]) {
        CHECK(t["offset"] == offset);
        std::size_t n = 1;
        for (auto d : t["shape"]) n *= d.get<std::size_t>();
        offset += 4 * n;
    }
    CHECK(m["tensors"][0]["name"] == "emb.time_proj");
    fs::remove_all(dir);
}

TEST_CASE("unsupported or damaged checkpoints raise FormatError") {
    auto dir = fresh_dir("poiformer_test_badckpt");
    PoiFormer model(small_model(), 2);
    save_checkpoint(dir, model);
    json m = read_json_file(dir / "model.json");

    auto rewrite = [&](const json& j) { std::ofstream(dir / "model.json") << j.dump(); };
    json v2 = m;
    v2["format_version"] = 2;
    rewrite(v2);
    CHECK_THROWS_AS(load_checkpoint(dir), FormatError);

    json f64 = m;
    f64["dtype"] = "float64";
    rewrite(f64);
    CHECK_THROWS_AS(load_checkpoint(dir), FormatError);

    json renamed = m;
    renamed["tensors"][0]["name"] = "emb.other";
    rewrite(renamed);
    CHECK_THROWS_AS(load_checkpoint(dir), FormatError);

    json no_tensors = m;
    no_tensors.erase("tensors");
    rewrite(no_tensors);
    CHECK_THROWS_AS(load_checkpoint(dir), FormatError);

    rewrite(m);
    fs::resize_file(dir / "model.bin", 16);
    CHECK_THROWS_AS(load_checkpoint(dir), FormatError);

    CHECK_THROWS_AS(load_checkpoint(dir / "nowhere"), FormatError);
    fs::remove_all(dir);
}
