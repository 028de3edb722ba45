#include "poiformer/cli.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <fstream>
#include <malloc.h>
#include <map>
#include <ostream>
#include <sstream>

#include <CLI11.hpp>

#include "poiformer/checkpoint.hpp"
#include "poiformer/config.hpp"
#include "poiformer/grad_check.hpp"
#include "poiformer/log.hpp"
#include "poiformer/synthetic.hpp"
#include "poiformer/trainer.hpp"

namespace poiformer {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

constexpr double kOpTolerance = 1e-4;
constexpr double kModelTolerance = 1e-3;

struct Options {
    std::string config;
    std::string input;
    std::string format;
    std::optional<std::size_t> min_user, min_poi, window;
    std::string out;
    std::string spec;
    std::string data_dir;
    std::string ablation;
    std::optional<std::size_t> epochs;
    std::optional<std::uint64_t> seed;
    std::string checkpoint;
    std::string split = "test";
    std::string dump_scores;
    std::vector<std::uint64_t> seeds;
    bool verbose = false;
};

RunConfig resolve_config(const Options& o) {
    RunConfig c = o.config.empty() ? RunConfig{} : run_config_from_json(read_json_file(o.config));
    apply_env_overrides(c);
    if (!o.format.empty()) c.prepare.format = parse_format(o.format);
    if (o.min_user) c.prepare.min_user_checkins = *o.min_user;
    if (o.min_poi) c.prepare.min_poi_visits = *o.min_poi;
    if (o.window) c.prepare.window = *o.window;
    if (!o.ablation.empty()) c.train.model.ablation = parse_ablation(o.ablation);
    if (o.epochs) c.train.epochs = *o.epochs;
    if (o.seed) c.train.seed = *o.seed;
    if (!o.seeds.empty()) c.ablate_seeds = o.seeds;
    c.train.validate();
    return c;
}

void write_text(const fs::path& path, const std::string& text) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream f(path, std::ios::binary);
    f << text;
    if (!f) throw std::runtime_error(fmt::format("cannot write '{}'", path.string()));
}

void write_run_meta(const fs::path& dir, const std::string& command, json extra, const RunConfig& cfg) {
    json config = to_json(cfg);
    config["train"]["lambda"] = cfg.train.effective_lambda();
    extra["command"] = command;
    extra["config"] = std::move(config);
    write_text(dir / "run_meta.json", extra.dump(2) + "\n");
}

int cmd_prepare(const Options& o, std::ostream& out) {
    const RunConfig cfg = resolve_config(o);
    const auto& p = cfg.prepare;
    Dataset raw = parse_checkin_file(o.input, p.format);
    std::size_t raw_checkins = 0;
    for (const auto& t : raw.trajectories) raw_checkins += t.checkins.size();
    if (raw_checkins == 0) log::warn("input '{}' holds no check-ins; writing empty splits", o.input);
    Dataset data = filter_low_frequency(std::move(raw), p.min_user_checkins, p.min_poi_visits);
    std::vector<Trajectory> windows;
    for (const auto& t : data.trajectories)
        for (auto& w : window_slice(t, p.window)) windows.push_back(std::move(w));
    const DatasetSplit split = leave_last_out_split(std::move(windows), std::move(data.pois));
    const PrepareCounts counts = write_prepared(o.out, split);
    const json summary = {{"raw_checkins", raw_checkins},   {"users", counts.users},
                          {"pois", split.vocab.size()},     {"windows", counts.windows},
                          {"excluded_windows", counts.excluded}, {"train_pairs", counts.train_pairs},
                          {"val_pairs", counts.val_pairs},  {"test_pairs", counts.test_pairs}};
    write_run_meta(o.out, "prepare", {{"input", o.input}, {"counts", summary}}, cfg);
    out << summary.dump() << '\n';
    return kExitOk;
}

int cmd_synth(const Options& o, std::ostream& out) {
    SyntheticSpec spec = synthetic_spec_from_json(read_json_file(o.spec));
    if (o.seed) spec.seed = *o.seed;
    const SyntheticData data = generate_synthetic(spec);
    std::ostringstream text;
    write_checkins(text, data.dataset.trajectories, data.dataset.pois);
    write_text(fs::path(o.out) / "checkins.tsv", text.str());
    std::size_t n = 0;
    for (const auto& t : data.dataset.trajectories) n += t.checkins.size();
    const json meta = {{"command", "synth"}, {"spec", to_json(spec)}, {"checkins", n},
                       {"format", "foursquare_tsv"}};
    write_text(fs::path(o.out) / "run_meta.json", meta.dump(2) + "\n");
    out << json{{"users", data.dataset.trajectories.size()}, {"pois", data.dataset.pois.size()}, {"checkins", n}}.dump()
        << '\n';
    return kExitOk;
}

std::string epoch_line(const EpochRecord& r) {
    // Wall time lives in timing.jsonl so this log stays byte-reproducible.
    return json{{"epoch", r.epoch},
                {"train_loss", r.train_loss},
                {"val_recall@1", r.val.recall_1},
                {"val_recall@5", r.val.recall_5},
                {"val_recall@10", r.val.recall_10},
                {"val_ndcg@5", r.val.ndcg_5},
                {"val_ndcg@10", r.val.ndcg_10}}
        .dump();
}

int cmd_train(const Options& o, std::ostream& out) {
    const RunConfig cfg = resolve_config(o);
    const DatasetSplit split = read_prepared(o.data_dir);
    const fs::path dir = o.out;
    fs::create_directories(dir);
    std::ofstream metrics(dir / "metrics.jsonl", std::ios::binary);
    std::ofstream timing(dir / "timing.jsonl", std::ios::binary);
    const EpochHook hook = [&](const EpochRecord& r, const PoiFormer&) {
        metrics << epoch_line(r) << '\n';
        timing << json{{"epoch", r.epoch}, {"wall_seconds", r.wall_seconds}}.dump() << '\n';
        metrics.flush();
        return true;
    };
    TrainResult result = train(cfg.train, split, hook);
    save_checkpoint(dir, result.model);
    write_run_meta(dir, "train",
                   {{"data_dir", o.data_dir},
                    {"best_epoch", result.best_epoch},
                    {"model", to_json(result.model.config())},
                    {"num_parameters", result.model.params().total_size()}},
                   cfg);
    out << json{{"best_epoch", result.best_epoch}, {"best_val_recall@5", result.best_val_recall_5},
                {"epochs_run", result.log.size()}}
               .dump()
        << '\n';
    return kExitOk;
}

int cmd_eval(const Options& o, std::ostream& out) {
    PoiFormer model = load_checkpoint(o.checkpoint);
    const DatasetSplit split = read_prepared(o.data_dir);
    if (o.split != "val" && o.split != "test") throw ConfigError(fmt::format("--split must be val or test"));
    model.set_vocabulary(split.vocab);
    const auto& samples = o.split == "val" ? split.val : split.test;
    if (samples.empty()) throw ConfigError(fmt::format("the {} split is empty", o.split));
    std::ofstream dump;
    if (!o.dump_scores.empty()) {
        dump.open(o.dump_scores, std::ios::binary);
        if (!dump) throw std::runtime_error(fmt::format("cannot write '{}'", o.dump_scores));
    }
    const EvalResult r = evaluate(model, split, samples, o.dump_scores.empty() ? nullptr : &dump);
    out << to_json(r.metrics).dump() << '\n';
    return kExitOk;
}

int cmd_gradcheck(const Options& o, std::ostream& out) {
    const RunConfig cfg = resolve_config(o);
    std::vector<std::pair<GradReport, double>> rows;
    for (auto& r : check_registered_ops(cfg.train.seed)) rows.emplace_back(std::move(r), kOpTolerance);
    rows.emplace_back(tiny_model_grad_check(cfg.train.seed), kModelTolerance);
    bool ok = true;
    out << fmt::format("{:<18} {:>14} {:>8}  {}\n", "op", "max_rel_error", "checked", "status");
    for (const auto& [r, tol] : rows) {
        const bool pass = r.max_rel_error < tol;
        ok = ok && pass;
        out << fmt::format("{:<18} {:>14.3e} {:>8}  {}\n", r.op_name, r.max_rel_error, r.num_params_checked,
                           pass ? "ok" : fmt::format("FAIL (>= {:.0e})", tol));
    }
    return ok ? kExitOk : kExitVerification;
}

double median(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

int cmd_ablate(const Options& o, std::ostream& out) {
    const RunConfig cfg = resolve_config(o);
    const DatasetSplit split = read_prepared(o.data_dir);
    const Ablation ablations[] = {Ablation::full, Ablation::no_contrastive, Ablation::encoder_only};
    json report = json::object();
    out << fmt::format("{:<16}", "ablation");
    for (auto s : cfg.ablate_seeds) out << fmt::format(" {:>8}", fmt::format("seed{}", s));
    out << fmt::format(" {:>8}\n", "median");
    for (Ablation a : ablations) {
        std::vector<double> recalls;
        json runs = json::array();
        for (auto seed : cfg.ablate_seeds) {
            TrainConfig tc = cfg.train;
            tc.model.ablation = a;
            tc.seed = seed;
            TrainResult r = train(tc, split);
            const Metrics m = evaluate(r.model, split, split.test).metrics;
            recalls.push_back(m.recall_5);
            runs.push_back({{"seed", seed}, {"best_epoch", r.best_epoch}, {"test", to_json(m)}});
        }
        out << fmt::format("{:<16}", ablation_name(a));
        for (double r : recalls) out << fmt::format(" {:>8.4f}", r);
        out << fmt::format(" {:>8.4f}\n", median(recalls));
        report[ablation_name(a)] = {{"runs", runs}, {"median_test_recall@5", median(recalls)}};
    }
    if (!o.out.empty()) {
        write_text(fs::path(o.out) / "ablation.json", report.dump(2) + "\n");
        write_run_meta(o.out, "ablate", {{"data_dir", o.data_dir}}, cfg);
    }
    return kExitOk;
}

}  // namespace

void tune_allocator() {
#ifdef __GLIBC__
    mallopt(M_MMAP_THRESHOLD, 64 << 20);
    mallopt(M_TRIM_THRESHOLD, 256 << 20);
    mallopt(M_TOP_PAD, 64 << 20);
#endif
}

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"POIFormer next-POI recommender: data preparation, training and evaluation"};
    app.require_subcommand(1);
    Options o;
    app.add_flag("-v,--verbose", o.verbose, "Log progress to stderr");

    auto* prepare = app.add_subcommand("prepare", "Filter, window and split raw check-ins");
    prepare->add_option("--input", o.input, "Check-in file")->required();
    prepare->add_option("--format", o.format, "gowalla_tsv or foursquare_tsv");
    prepare->add_option("--min-user", o.min_user, "Minimum check-ins per user");
    prepare->add_option("--min-poi", o.min_poi, "Minimum visits per POI");
    prepare->add_option("--window", o.window, "Maximum window length");
    prepare->add_option("--out", o.out, "Output directory")->required();
    prepare->add_option("--config", o.config, "Run config JSON");

    auto* synth = app.add_subcommand("synth", "Generate a synthetic check-in dataset");
    synth->add_option("--spec", o.spec, "Synthetic spec JSON")->required();
    synth->add_option("--out", o.out, "Output directory")->required();
    synth->add_option("--seed", o.seed, "Override the spec seed");

    auto* trainc = app.add_subcommand("train", "Train a model on a prepared directory");
    trainc->add_option("--config", o.config, "Run config JSON");
    trainc->add_option("--data-dir", o.data_dir, "Prepared data directory")->required();
    trainc->add_option("--ablation", o.ablation, "full, no_contrastive or encoder_only");
    trainc->add_option("--epochs", o.epochs, "Override train.epochs");
    trainc->add_option("--seed", o.seed, "Override train.seed");
    trainc->add_option("--out", o.out, "Output directory")->required();

    auto* evalc = app.add_subcommand("eval", "Evaluate a checkpoint; metrics JSON on stdout");
    evalc->add_option("--checkpoint", o.checkpoint, "Checkpoint directory")->required();
    evalc->add_option("--data-dir", o.data_dir, "Prepared data directory")->required();
    evalc->add_option("--split", o.split, "val or test")->check(CLI::IsMember({"val", "test"}));
    evalc->add_option("--dump-scores", o.dump_scores, "Write per-query top-100 scores as JSON lines");

    auto* gradcheck = app.add_subcommand("gradcheck", "Finite-difference gradient verification");
    gradcheck->add_option("--config", o.config, "Run config JSON");
    gradcheck->add_option("--seed", o.seed, "Seed for the random cases");

    auto* ablate = app.add_subcommand("ablate", "Train every ablation over several seeds");
    ablate->add_option("--config", o.config, "Run config JSON");
    ablate->add_option("--data-dir", o.data_dir, "Prepared data directory")->required();
    ablate->add_option("--seeds", o.seeds, "Seeds (default 1 2 3 4 5)");
    ablate->add_option("--out", o.out, "Output directory");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return kExitOk;
    } catch (const CLI::CallForAllHelp&) {
        out << app.help("", CLI::AppFormatMode::All);
        return kExitOk;
    } catch (const CLI::ParseError& e) {
        err << "error: " << e.what() << '\n';
        return kExitInput;
    }
    const log::Level saved = log::level();
    if (o.verbose) log::set_level(log::Level::info);

    int code = kExitOk;
    try {
        if (*prepare) code = cmd_prepare(o, out);
        else if (*synth) code = cmd_synth(o, out);
        else if (*trainc) code = cmd_train(o, out);
        else if (*evalc) code = cmd_eval(o, out);
        else if (*gradcheck) code = cmd_gradcheck(o, out);
        else if (*ablate) code = cmd_ablate(o, out);
    } catch (const ParseError& e) {
        err << "input error: " << e.what() << '\n';
        code = kExitInput;
    } catch (const NumericError& e) {
        err << "numeric failure: " << e.what() << '\n';
        code = kExitNumeric;
    } catch (const FormatError& e) {
        err << "format error: " << e.what() << '\n';
        code = kExitFormat;
    } catch (const std::invalid_argument& e) {
        err << "input error: " << e.what() << '\n';
        code = kExitInput;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        code = 1;
    }
    log::set_level(saved);
    return code;
}

}  // namespace poiformer
