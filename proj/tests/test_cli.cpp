#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <iterator>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "poiformer/cli.hpp"

using namespace poiformer;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct Run {
    int code;
    std::string out;
    std::string err;
};

Run run(std::vector<std::string> args) {
    args.insert(args.begin(), "poiformer");
    std::vector<const char*> argv;
    for (const auto& a : args) argv.push_back(a.c_str());
    std::ostringstream out, err;
    const int code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
    return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return std::string(std::istreambuf_iterator<char>(in), {});
}

void write_file(const fs::path& p, const std::string& text) { std::ofstream(p, std::ios::binary) << text; }

// Non-empty lines; sequence files separate users with blank lines.
std::size_t count_lines(const std::string& s) {
    std::size_t n = 0;
    std::istringstream in(s);
    for (std::string line; std::getline(in, line);) n += !line.empty();
    return n;
}

fs::path fresh_dir(const std::string& name) {
    auto dir = fs::temp_directory_path() / name;
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

const char* kTinyConfig = R"({
  "model": {"d": 8, "heads": 2, "encoder_layers": 1, "query_layers": 1, "decoder_layers": 1,
            "cat_dim": 4, "max_len": 20},
  "train": {"epochs": 2, "batch_size": 8, "num_negatives": 5, "seed": 3},
  "prepare": {"format": "foursquare_tsv", "min_user_checkins": 5, "min_poi_visits": 1, "window": 20}
})";

// synth -> prepare, shared by the train and eval cases.
fs::path prepared_fixture() {
    static const fs::path root = [] {
        auto dir = fresh_dir("poiformer_cli_fixture");
        write_file(dir / "spec.json",
                   R"({"num_users": 12, "num_pois": 10, "num_categories": 3, "seq_len": 15, "seed": 4})");
        write_file(dir / "config.json", kTinyConfig);
        auto s = run({"synth", "--spec", (dir / "spec.json").string(), "--out", (dir / "raw").string()});
        REQUIRE(s.code == 0);
        auto p = run({"prepare", "--input", (dir / "raw" / "checkins.tsv").string(), "--config",
                      (dir / "config.json").string(), "--out", (dir / "data").string()});
        REQUIRE_MESSAGE(p.code == 0, p.err);
        return dir;
    }();
    return root;
}

}  // namespace

TEST_CASE("prepare rejects a malformed line with its number") {
    auto dir = fresh_dir("poiformer_cli_bad");
    std::string text;
    for (int i = 1; i <= 16; ++i) text += "1\t" + std::to_string(i) + "\t0\t0\t1\n";
    text += "1\tnot-a-time\t0\t0\t1\n";
    write_file(dir / "in.tsv", text);
    auto r = run({"prepare", "--input", (dir / "in.tsv").string(), "--out", (dir / "out").string()});
    CHECK(r.code == kExitInput);
    CHECK_MESSAGE(r.err.find("17") != std::string::npos, r.err);
}

TEST_CASE("prepare of an empty file writes empty splits") {
    auto dir = fresh_dir("poiformer_cli_empty");
    write_file(dir / "in.tsv", "");
    auto r = run({"prepare", "--input", (dir / "in.tsv").string(), "--out", (dir / "out").string()});
    CHECK(r.code == kExitOk);
    auto summary = json::parse(r.out);
    CHECK(summary["train_pairs"] == 0);
    CHECK(summary["test_pairs"] == 0);
}

TEST_CASE("usage errors exit with the input code") {
    CHECK(run({}).code == kExitInput);
    CHECK(run({"train"}).code == kExitInput);
    CHECK(run({"frobnicate"}).code == kExitInput);
    CHECK(run({"--help"}).code == kExitOk);
}

TEST_CASE("synth is deterministic and sized by the spec") {
    auto dir = fresh_dir("poiformer_cli_synth");
    write_file(dir / "spec.json", R"({"num_users": 50, "seq_len": 40, "seed": 9})");
    auto a = run({"synth", "--spec", (dir / "spec.json").string(), "--out", (dir / "a").string()});
    auto b = run({"synth", "--spec", (dir / "spec.json").string(), "--out", (dir / "b").string()});
    REQUIRE(a.code == 0);
    REQUIRE(b.code == 0);
    CHECK(json::parse(a.out)["checkins"] == 2000);
    CHECK(count_lines(slurp(dir / "a" / "checkins.tsv")) == 2000);
    CHECK(slurp(dir / "a" / "checkins.tsv") == slurp(dir / "b" / "checkins.tsv"));

    auto c = run({"synth", "--spec", (dir / "spec.json").string(), "--out", (dir / "c").string(), "--seed", "10"});
    REQUIRE(c.code == 0);
    CHECK(slurp(dir / "a" / "checkins.tsv") != slurp(dir / "c" / "checkins.tsv"));
}

TEST_CASE("invalid synthetic spec exits with the input code") {
    auto dir = fresh_dir("poiformer_cli_badspec");
    write_file(dir / "spec.json", R"({"num_users": 0})");
    CHECK(run({"synth", "--spec", (dir / "spec.json").string(), "--out", (dir / "o").string()}).code == kExitInput);
    write_file(dir / "spec.json", R"({"seq_len": "long"})");
    CHECK(run({"synth", "--spec", (dir / "spec.json").string(), "--out", (dir / "o").string()}).code == kExitInput);
}

TEST_CASE("train writes one metrics line per epoch and a loadable checkpoint") {
    const auto fx = prepared_fixture();
    const auto out = fx / "run_full";
    auto r = run({"train", "--config", (fx / "config.json").string(), "--data-dir", (fx / "data").string(), "--out",
                  out.string()});
    REQUIRE_MESSAGE(r.code == 0, r.err);
    const std::string metrics = slurp(out / "metrics.jsonl");
    CHECK(count_lines(metrics) == 2);
    CHECK(metrics.find("wall_seconds") == std::string::npos);
    CHECK(count_lines(slurp(out / "timing.jsonl")) == 2);
    CHECK(fs::exists(out / "model.json"));
    CHECK(fs::exists(out / "model.bin"));
    auto meta = json::parse(slurp(out / "run_meta.json"));
    CHECK(meta["command"] == "train");
    CHECK(meta["config"]["train"]["lambda"] == 1.0);

    auto e = run({"eval", "--checkpoint", out.string(), "--data-dir", (fx / "data").string(), "--split", "test"});
    REQUIRE_MESSAGE(e.code == 0, e.err);
    auto m = json::parse(e.out);
    for (const char* k : {"recall@1", "recall@5", "recall@10", "ndcg@5", "ndcg@10", "num_queries"})
        CHECK_MESSAGE(m.contains(k), k);
    CHECK(m["num_queries"] == 12);
    auto again = run({"eval", "--checkpoint", out.string(), "--data-dir", (fx / "data").string()});
    CHECK(again.out == e.out);
}

TEST_CASE("train is byte-reproducible") {
    const auto fx = prepared_fixture();
    std::string bins[2], logs[2];
    for (int i = 0; i < 2; ++i) {
        const auto out = fx / ("run_rep" + std::to_string(i));
        auto r = run({"train", "--config", (fx / "config.json").string(), "--data-dir", (fx / "data").string(),
                      "--epochs", "1", "--out", out.string()});
        REQUIRE(r.code == 0);
        bins[i] = slurp(out / "model.bin");
        logs[i] = slurp(out / "metrics.jsonl");
    }
    CHECK(bins[0] == bins[1]);
    CHECK(logs[0] == logs[1]);
}

TEST_CASE("ablation flags reach the run") {
    const auto fx = prepared_fixture();
    auto nc = run({"train", "--config", (fx / "config.json").string(), "--data-dir", (fx / "data").string(),
                   "--ablation", "no_contrastive", "--epochs", "1", "--out", (fx / "run_nc").string()});
    REQUIRE(nc.code == 0);
    CHECK(json::parse(slurp(fx / "run_nc" / "run_meta.json"))["config"]["train"]["lambda"] == 0.0);

    auto eo = run({"train", "--config", (fx / "config.json").string(), "--data-dir", (fx / "data").string(),
                   "--ablation", "encoder_only", "--epochs", "1", "--out", (fx / "run_eo").string()});
    REQUIRE(eo.code == 0);
    const auto manifest = json::parse(slurp(fx / "run_eo" / "model.json"));
    bool has_dec = false, has_proj = false;
    for (const auto& t : manifest["tensors"]) {
        const auto name = t["name"].get<std::string>();
        has_dec = has_dec || name.rfind("dec.", 0) == 0;
        has_proj = has_proj || name == "head.encoder_only_proj";
    }
    CHECK_FALSE(has_dec);
    CHECK(has_proj);

    CHECK(run({"train", "--config", (fx / "config.json").string(), "--data-dir", (fx / "data").string(), "--ablation",
               "half", "--out", (fx / "run_bad").string()})
              .code == kExitInput);
}

TEST_CASE("eval rejects an unsupported checkpoint version") {
    const auto fx = prepared_fixture();
    const auto src = fx / "run_v2";
    auto r = run({"train", "--config", (fx / "config.json").string(), "--data-dir", (fx / "data").string(), "--epochs",
                  "1", "--out", src.string()});
    REQUIRE(r.code == 0);
    auto manifest = json::parse(slurp(src / "model.json"));
    manifest["format_version"] = 2;
    write_file(src / "model.json", manifest.dump());
    auto e = run({"eval", "--checkpoint", src.string(), "--data-dir", (fx / "data").string()});
    CHECK(e.code == kExitFormat);
    CHECK(e.out.empty());
}

TEST_CASE("eval dumps ranked scores per query") {
    const auto fx = prepared_fixture();
    const auto ck = fx / "run_dump";
    REQUIRE(run({"train", "--config", (fx / "config.json").string(), "--data-dir", (fx / "data").string(),
                 "--epochs", "1", "--out", ck.string()})
                .code == 0);
    auto e = run({"eval", "--checkpoint", ck.string(), "--data-dir", (fx / "data").string(), "--split", "val",
                  "--dump-scores", (fx / "scores.jsonl").string()});
    REQUIRE(e.code == 0);
    CHECK(count_lines(slurp(fx / "scores.jsonl")) == 12);
}

TEST_CASE("gradcheck reports every op and passes") {
    auto r = run({"gradcheck"});
    CHECK_MESSAGE(r.code == kExitOk, r.out);
    for (const char* op : {"matmul", "softmax", "layer_norm", "attention", "gather_rows", "full_model"})
        CHECK_MESSAGE(r.out.find(op) != std::string::npos, op);
    CHECK(r.out.find("FAIL") == std::string::npos);
}
