// End-to-end acceptance run. Prints one PASS/FAIL line per criterion.
// Usage: acceptance [criterion numbers...]   (default: all)

#include <fmt/format.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iterator>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "poiformer/cli.hpp"
#include "poiformer/grad_check.hpp"
#include "poiformer/log.hpp"
#include "poiformer/ops.hpp"
#include "poiformer/synthetic.hpp"
#include "poiformer/trainer.hpp"

using namespace poiformer;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

Tensor rows(std::size_t r, std::size_t c, std::vector<double> v) { return Tensor::from({r, c}, std::move(v)); }

DatasetSplit split_of(const SyntheticData& data, std::size_t window = 100) {
    std::vector<Trajectory> windows;
    for (const auto& t : data.dataset.trajectories)
        for (auto& w : window_slice(t, window)) windows.push_back(std::move(w));
    return leave_last_out_split(std::move(windows), data.dataset.pois);
}

double median(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

std::string join(const std::vector<double>& v) {
    std::string s;
    for (double x : v) s += fmt::format("{}{:.3f}", s.empty() ? "" : " ", x);
    return s;
}

// ---------------------------------------------------------------------------

Outcome gradient_integrity() {
    const auto t0 = Clock::now();
    double worst_op = 0.0;
    std::string worst_name;
    std::set<std::string> covered;
    for (const auto& r : check_registered_ops(11)) {
        covered.insert(r.op_name);
        if (r.max_rel_error >= worst_op) {
            worst_op = r.max_rel_error;
            worst_name = r.op_name;
        }
    }
    bool all_covered = true;
    for (auto name : registered_ops()) all_covered = all_covered && covered.count(std::string(name));
    const GradReport model = tiny_model_grad_check(11);
    const double secs = seconds_since(t0);
    const bool pass = all_covered && worst_op < 1e-4 && model.max_rel_error < 1e-3 && secs < 120.0;
    return {pass, fmt::format("ops {} (worst {} {:.2e} < 1e-4), full model {:.2e} < 1e-3, {:.1f}s",
                              all_covered ? "all covered" : "MISSING", worst_name, worst_op, model.max_rel_error,
                              secs)};
}

Outcome loss_analytics() {
    std::vector<std::pair<std::string, double>> errs;
    auto same = rows(2, 2, {1, 0, 1, 0});
    errs.emplace_back("info_nce identical", std::abs(info_nce(same, same, Tensor::scalar(1.0)).item() - std::log(2.0)));
    auto orth = rows(2, 2, {1, 0, 0, 1});
    errs.emplace_back("info_nce orthonormal",
                      std::abs(info_nce(orth, orth, Tensor::scalar(1.0)).item() - std::log1p(std::exp(-1.0))));
    for (std::size_t n_s : {1u, 3u, 10u, 100u}) {
        std::vector<double> c((n_s + 1) * 2);
        for (std::size_t i = 0; i <= n_s; ++i) c[2 * i + 1] = i % 2 ? -1.0 : 1.0;
        const double got = matching_loss(rows(1, 2, {1, 0}), rows(n_s + 1, 2, c), Tensor::scalar(1.0)).item();
        errs.emplace_back(fmt::format("matching uniform N_s={}", n_s), std::abs(got - std::log(double(n_s + 1))));
    }
    auto eye = rows(3, 3, {1, 0, 0, 0, 1, 0, 0, 0, 1});
    errs.emplace_back("matching 0.5514",
                      std::abs(matching_loss(rows(1, 3, {1, 0, 0}), eye, Tensor::scalar(1.0)).item() -
                               std::log(1.0 + 2.0 * std::exp(-1.0))));
    double worst = 0.0;
    for (const auto& [name, e] : errs) worst = std::max(worst, e);
    return {worst < 1e-6, fmt::format("{} cases, max abs error {:.2e} < 1e-6", errs.size(), worst)};
}

std::vector<CheckIn> numbered(std::size_t n) {
    std::vector<CheckIn> t;
    for (std::size_t i = 0; i < n; ++i)
        t.push_back({1, static_cast<std::int64_t>(1000 * i), static_cast<std::int64_t>(i + 1)});
    return t;
}

Outcome augmentation_properties() {
    const auto t0 = Clock::now();
    constexpr int kTrials = 10000;
    Rng rng(2024);
    std::size_t crop_bad = 0, mask_bad = 0, reorder_bad = 0;
    for (int trial = 0; trial < kTrials; ++trial) {
        const std::size_t n = 2 + rng.index(60);
        const auto t = numbered(n);

        const auto c = random_crop(t, 0.7, rng);
        bool ok = c.size() == std::max<std::size_t>(1, static_cast<std::size_t>(std::floor(0.7 * double(n))));
        for (std::size_t i = 1; i < c.size(); ++i) ok = ok && c[i].poi_id == c[i - 1].poi_id + 1;
        for (const auto& x : c) ok = ok && t[static_cast<std::size_t>(x.poi_id - 1)] == x;
        crop_bad += !ok;

        const auto m = random_mask(t, 0.3, rng);
        const std::size_t k = std::min(static_cast<std::size_t>(std::floor(0.3 * double(n))), (n + 1) / 2);
        ok = m.size() == n - k;
        for (std::size_t i = 1; i < m.size(); ++i) ok = ok && m[i].poi_id > m[i - 1].poi_id;
        std::vector<bool> kept(n + 2, false);
        for (const auto& x : m) kept[static_cast<std::size_t>(x.poi_id)] = true;
        for (std::size_t id = 1; id < n; ++id) ok = ok && (kept[id] || kept[id + 1]);
        mask_bad += !ok;

        const auto r = random_reorder(t, 0.3, rng);
        ok = r.size() == n;
        std::vector<std::int64_t> ids;
        for (const auto& x : r) ids.push_back(x.poi_id);
        std::vector<std::int64_t> sorted = ids;
        std::sort(sorted.begin(), sorted.end());
        for (std::size_t i = 0; i < n; ++i) ok = ok && sorted[i] == static_cast<std::int64_t>(i + 1);
        // Every element stays within one step of home, via a swap with its neighbour.
        std::size_t displaced = 0;
        for (std::size_t i = 0; i < n; ++i) {
            const auto home = static_cast<std::size_t>(ids[i] - 1);
            if (home == i) continue;
            ++displaced;
            ok = ok && (home + 1 == i || i + 1 == home) && ids[home] == static_cast<std::int64_t>(i + 1);
        }
        ok = ok && displaced == 2 * static_cast<std::size_t>(std::floor(0.3 * double(n) / 2.0));
        reorder_bad += !ok;
    }

    std::vector<double> rates;
    for (AugmentMethod method : {AugmentMethod::crop, AugmentMethod::mask, AugmentMethod::reorder}) {
        AugmentationConfig cfg;
        cfg.apply_prob = 0.7;
        cfg.enabled_methods = {method};
        std::size_t applied = 0;
        for (int trial = 0; trial < kTrials; ++trial) {
            const auto t = numbered(10 + rng.index(40));
            applied += augment(t, cfg, rng) != t;
        }
        rates.push_back(double(applied) / kTrials);
    }
    bool rates_ok = true;
    for (double r : rates) rates_ok = rates_ok && std::abs(r - 0.7) <= 0.02;
    const double secs = seconds_since(t0);
    return {crop_bad + mask_bad + reorder_bad == 0 && rates_ok && secs < 60.0,
            fmt::format("violations crop {} mask {} reorder {} over {} trials each; apply rates {} (0.7 +- 0.02); {:.1f}s",
                        crop_bad, mask_bad, reorder_bad, kTrials, join(rates), secs)};
}

// Metrics recomputed from the dumped scores alone.
Metrics brute_force_metrics(std::istream& dump) {
    std::vector<std::size_t> ranks;  // 0 when the truth is outside the dump
    std::string line;
    while (std::getline(dump, line)) {
        const json j = json::parse(line);
        const auto truth = j["truth"].get<std::int64_t>();
        std::vector<std::pair<std::int64_t, double>> top;
        for (const auto& e : j["top"]) top.emplace_back(e[0].get<std::int64_t>(), e[1].get<double>());
        std::size_t rank = 0;
        for (std::size_t i = 0; i < top.size(); ++i)
            if (top[i].first == truth) {
                double truth_score = top[i].second;
                rank = 1;
                for (const auto& [id, s] : top) rank += s > truth_score || (s == truth_score && id < truth);
            }
        ranks.push_back(rank);
    }
    Metrics m;
    m.num_queries = ranks.size();
    double h1 = 0, h5 = 0, h10 = 0, g5 = 0, g10 = 0;
    for (std::size_t r : ranks) {
        if (r == 0) continue;
        h1 += r <= 1;
        h5 += r <= 5;
        h10 += r <= 10;
        if (r <= 5) g5 += 1.0 / std::log2(double(r) + 1.0);
        if (r <= 10) g10 += 1.0 / std::log2(double(r) + 1.0);
    }
    const double n = double(ranks.size());
    m.recall_1 = h1 / n;
    m.recall_5 = h5 / n;
    m.recall_10 = h10 / n;
    m.ndcg_5 = g5 / n;
    m.ndcg_10 = g10 / n;
    return m;
}

Outcome metric_oracle() {
    SyntheticSpec spec;
    spec.num_users = 40;
    spec.num_pois = 200;
    spec.num_categories = 8;
    spec.seq_len = 30;
    spec.transition_noise = 0.5;
    spec.seed = 99;
    const DatasetSplit split = split_of(generate_synthetic(spec));
    TrainConfig cfg;
    cfg.model.d = 16;
    cfg.model.encoder_layers = cfg.model.query_layers = cfg.model.decoder_layers = 1;
    cfg.model.cat_dim = 8;
    PoiFormer model(resolve_model_config(cfg, split), 5);
    model.set_vocabulary(split.vocab);

    Rng rng(123);
    std::vector<Sample> queries;
    for (int q = 0; q < 1000; ++q) {
        const std::size_t s = rng.index(split.sequences.size());
        const auto& seq = split.sequences[s].checkins;
        const std::size_t len = 1 + rng.index(seq.size() - 1);
        queries.push_back({s, len, seq[len].poi_id});
    }
    std::stringstream dump;
    const Metrics got = evaluate(model, split, queries, &dump).metrics;
    const Metrics want = brute_force_metrics(dump);
    const bool same = got.recall_1 == want.recall_1 && got.recall_5 == want.recall_5 &&
                      got.recall_10 == want.recall_10 && got.ndcg_5 == want.ndcg_5 && got.ndcg_10 == want.ndcg_10 &&
                      got.num_queries == 1000 && want.num_queries == 1000 && split.vocab.size() == 200;
    return {same, fmt::format("{} queries over {} POIs; R@1 {} R@5 {} R@10 {} N@5 {} N@10 {} vs brute force {} {} {} {} {}",
                              got.num_queries, split.vocab.size(), got.recall_1, got.recall_5, got.recall_10,
                              got.ndcg_5, got.ndcg_10, want.recall_1, want.recall_5, want.recall_10, want.ndcg_5,
                              want.ndcg_10)};
}

Outcome split_protocol() {
    Rng rng(77);
    std::size_t violations = 0, windows_checked = 0, excluded_seen = 0;
    for (int trial = 0; trial < 100; ++trial) {
        SyntheticSpec spec;
        spec.num_users = 1;
        spec.seq_len = 1 + rng.index(320);
        spec.seed = 1000 + static_cast<std::uint64_t>(trial);
        const auto data = generate_synthetic(spec);
        const Trajectory& traj = data.dataset.trajectories.at(0);
        const auto windows = window_slice(traj, 100);

        // Partition: windows reassemble the trajectory and all but the last are full.
        std::vector<CheckIn> joined;
        for (std::size_t w = 0; w < windows.size(); ++w) {
            violations += windows[w].checkins.empty() || windows[w].checkins.size() > 100;
            violations += w + 1 < windows.size() && windows[w].checkins.size() != 100;
            violations += windows[w].user_id != traj.user_id;
            joined.insert(joined.end(), windows[w].checkins.begin(), windows[w].checkins.end());
        }
        violations += joined != traj.checkins;

        const DatasetSplit split = leave_last_out_split(windows, data.dataset.pois);
        std::map<std::size_t, std::vector<Sample>> train_by_seq;
        for (const auto& s : split.train) train_by_seq[s.sequence].push_back(s);
        std::size_t expected_excluded = 0, kept = 0;
        for (const auto& w : windows) {
            if (w.checkins.size() < 4) {
                ++expected_excluded;
                continue;
            }
            // Kept windows keep their order.
            if (kept >= split.sequences.size() || split.sequences[kept].checkins != w.checkins) {
                ++violations;
                ++kept;
                continue;
            }
            const std::size_t n = w.checkins.size();
            const auto& tr = train_by_seq[kept];
            violations += tr.size() != n - 3;
            for (std::size_t k = 0; k < tr.size(); ++k)
                violations += tr[k].prefix_len != k + 1 || tr[k].label != w.checkins[k + 1].poi_id;
            const auto& pairs = expand_training_subsequences(w);
            violations += pairs.size() != n - 3;
            for (std::size_t k = 0; k < pairs.size(); ++k)
                violations += pairs[k].first != k + 1 || pairs[k].second != w.checkins[k + 1].poi_id;
            ++windows_checked;
            ++kept;
        }
        violations += split.excluded != expected_excluded || kept != split.sequences.size();
        excluded_seen += expected_excluded;
        violations += split.val.size() != kept || split.test.size() != kept;
        for (std::size_t i = 0; i < std::min(kept, split.val.size()); ++i) {
            const auto& seq = split.sequences[split.val[i].sequence].checkins;
            const std::size_t n = seq.size();
            violations += split.val[i].prefix_len != n - 2 || split.val[i].label != seq[n - 2].poi_id;
        }
        for (std::size_t i = 0; i < std::min(kept, split.test.size()); ++i) {
            const auto& seq = split.sequences[split.test[i].sequence].checkins;
            const std::size_t n = seq.size();
            violations += split.test[i].prefix_len != n - 1 || split.test[i].label != seq[n - 1].poi_id;
        }
    }
    return {violations == 0 && windows_checked > 0,
            fmt::format("{} violations over 100 trajectories ({} windows checked, {} short windows excluded)", violations,
                        windows_checked, excluded_seen)};
}

TrainConfig desk_config() {
    TrainConfig cfg;
    cfg.model.d = 32;
    cfg.model.heads = 2;
    cfg.model.encoder_layers = cfg.model.query_layers = cfg.model.decoder_layers = 2;
    cfg.batch_size = 16;
    cfg.lr = 1e-3;
    return cfg;
}

Outcome synthetic_overfit() {
    const auto t0 = Clock::now();
    SyntheticSpec spec;
    spec.num_users = 50;
    spec.num_pois = 30;
    spec.num_categories = 5;
    spec.seq_len = 40;
    spec.transition_noise = 0.2;
    const DatasetSplit split = split_of(generate_synthetic(spec));

    TrainConfig cfg = desk_config();
    cfg.epochs = 200;
    cfg.model.dropout = 0.0;
    cfg.model.positions_from_end = true;
    double train_r1 = 0.0, test_r5 = 0.0;
    std::size_t reached = 0;
    train(cfg, split, [&](const EpochRecord& r, const PoiFormer& m) {
        // The train pass is the expensive part; early epochs are far from the target.
        if (r.epoch < 40 && r.epoch % 10 != 0) return true;
        train_r1 = evaluate(m, split, split.train).metrics.recall_1;
        if (train_r1 < 0.95) return true;
        reached = r.epoch;
        test_r5 = evaluate(m, split, split.test).metrics.recall_5;
        return false;
    });
    const double secs = seconds_since(t0);
    if (reached == 0) return {false, fmt::format("train R@1 {:.3f} after 200 epochs (< 0.95), {:.0f}s", train_r1, secs)};
    return {test_r5 >= 0.6 && secs < 600.0,
            fmt::format("train R@1 {:.3f} >= 0.95 at epoch {}; test R@5 {:.3f} (>= 0.6); {:.0f}s (< 600s)", train_r1,
                        reached, test_r5, secs)};
}

// Shared by the two directionality criteria.
SyntheticSpec separated_spec() {
    SyntheticSpec spec;
    spec.num_users = 60;
    spec.num_pois = 30;
    spec.num_categories = 6;
    spec.profile_mode = ProfileMode::paired_disjoint;
    spec.transition_noise = 0.5;
    spec.seq_len = 60;
    spec.seed = 5;
    return spec;
}

// Windows of 20 give three test queries per user.
constexpr std::size_t kSeparatedWindow = 20;

TrainConfig directionality_config() {
    TrainConfig cfg = desk_config();
    cfg.epochs = 30;
    cfg.num_negatives = 20;
    cfg.model.positions_from_end = true;
    // The shared temperature otherwise sinks to 0.05 within a few epochs,
    // where InfoNCE separates every pair of users regardless of preference.
    cfg.model.tau_min = 0.2;
    return cfg;
}

constexpr std::uint64_t kSeeds[] = {1, 2, 3, 4, 5};

std::vector<double> test_recalls(const DatasetSplit& split, TrainConfig cfg) {
    std::vector<double> out;
    for (auto seed : kSeeds) {
        cfg.seed = seed;
        const TrainResult r = train(cfg, split);
        out.push_back(evaluate(r.model, split, split.test).metrics.recall_5);
    }
    return out;
}

std::vector<double> full_recalls_cache;

const std::vector<double>& full_recalls(const DatasetSplit& split) {
    if (full_recalls_cache.empty()) full_recalls_cache = test_recalls(split, directionality_config());
    return full_recalls_cache;
}

Outcome disentanglement_directionality() {
    const auto t0 = Clock::now();
    const DatasetSplit split = split_of(generate_synthetic(separated_spec()), kSeparatedWindow);
    const auto full = full_recalls(split);
    TrainConfig cfg = directionality_config();
    cfg.model.ablation = Ablation::no_contrastive;
    const auto nc = test_recalls(split, cfg);
    cfg.model.ablation = Ablation::encoder_only;
    const auto eo = test_recalls(split, cfg);
    const double f = median(full), n = median(nc), e = median(eo);
    const double secs = seconds_since(t0);
    return {f >= n && n >= e && f - e >= 0.05 && secs < 3600.0,
            fmt::format("median test R@5 full {:.3f} [{}] >= no_contrastive {:.3f} [{}] >= encoder_only {:.3f} [{}]; "
                        "full - encoder_only {:.3f} (>= 0.05); {:.0f}s",
                        f, join(full), n, join(nc), e, join(eo), f - e, secs)};
}

Outcome augmentation_directionality() {
    const DatasetSplit split = split_of(generate_synthetic(separated_spec()), kSeparatedWindow);
    const double all = median(full_recalls(split));
    std::string detail = fmt::format("all three {:.3f}", all);
    int beaten = 0;
    for (AugmentMethod m : {AugmentMethod::crop, AugmentMethod::mask, AugmentMethod::reorder}) {
        TrainConfig cfg = directionality_config();
        cfg.augmentation.enabled_methods = {m};
        const auto r = test_recalls(split, cfg);
        const double single = median(r);
        beaten += all >= single;
        detail += fmt::format("; {} only {:.3f} [{}]{}", method_name(m), single, join(r),
                              all >= single ? "" : " (not beaten)");
    }
    return {beaten >= 2, fmt::format("{}; {} of 3 single configs beaten (need 2)", detail, beaten)};
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return std::string(std::istreambuf_iterator<char>(in), {});
}

int cli(std::vector<std::string> args, std::string* out = nullptr) {
    args.insert(args.begin(), "poiformer");
    std::vector<const char*> argv;
    for (const auto& a : args) argv.push_back(a.c_str());
    std::ostringstream o, e;
    const int code = run_cli(static_cast<int>(argv.size()), argv.data(), o, e);
    if (out) *out = o.str();
    return code;
}

Outcome determinism() {
    const fs::path root = fs::temp_directory_path() / "poiformer_acceptance_det";
    fs::remove_all(root);
    fs::create_directories(root);
    std::ofstream(root / "spec.json") << R"({"num_users": 20, "num_pois": 15, "seq_len": 25, "seed": 8})";
    std::ofstream(root / "config.json") << R"({
      "model": {"d": 16, "heads": 2, "encoder_layers": 1, "query_layers": 1, "decoder_layers": 1, "cat_dim": 8},
      "train": {"epochs": 3, "num_negatives": 10, "seed": 21},
      "prepare": {"format": "foursquare_tsv", "min_user_checkins": 5, "min_poi_visits": 1}
    })";
    const std::string cfg = (root / "config.json").string(), data = (root / "data").string();
    int bad = 0;
    bad += cli({"synth", "--spec", (root / "spec.json").string(), "--out", (root / "raw").string()}) != 0;
    bad += cli({"prepare", "--input", (root / "raw" / "checkins.tsv").string(), "--config", cfg, "--out", data}) != 0;
    std::string evals[2];
    for (int i = 0; i < 2; ++i) {
        const std::string run = (root / fmt::format("run{}", i)).string();
        bad += cli({"train", "--config", cfg, "--data-dir", data, "--out", run}) != 0;
        bad += cli({"eval", "--checkpoint", run, "--data-dir", data, "--dump-scores",
                    (root / fmt::format("scores{}.jsonl", i)).string()},
                   &evals[i]) != 0;
    }
    if (bad) return {false, "a command failed"};
    std::vector<std::string> differing;
    for (const char* f : {"metrics.jsonl", "model.bin", "model.json", "run_meta.json"})
        if (slurp(root / "run0" / f) != slurp(root / "run1" / f)) differing.push_back(f);
    if (slurp(root / "scores0.jsonl") != slurp(root / "scores1.jsonl")) differing.push_back("scores");
    if (evals[0] != evals[1]) differing.push_back("eval output");
    const bool nonempty = !slurp(root / "run0" / "metrics.jsonl").empty() && !evals[0].empty();
    std::string detail = differing.empty() ? "metrics log, checkpoint, run meta, scores and eval output byte-identical"
                                           : "differs: ";
    for (const auto& f : differing) detail += f + " ";
    fs::remove_all(root);
    return {differing.empty() && nonempty, detail};
}

Outcome structural_invariants() {
    Rng rng(31);
    double worst_perm = 0.0, worst_sum = 0.0;
    std::size_t rows_checked = 0;
    for (int config = 0; config < 100; ++config) {
        const std::size_t heads = 1 + rng.index(4);
        const std::size_t d = heads * (1 + rng.index(6));
        const std::size_t layers = 1 + rng.index(3);
        ParamStore store;
        const auto stack = make_encoder_stack(store, "enc", d, heads, layers, 1 + rng.index(4), rng);

        // Equivariance: one sequence, rows permuted.
        const std::size_t n = 1 + rng.index(12);
        std::vector<double> xv(n * d);
        for (auto& x : xv) x = rng.normal();
        std::vector<std::size_t> perm(n);
        for (std::size_t i = 0; i < n; ++i) perm[i] = i;
        rng.shuffle(std::span<std::size_t>(perm));
        ForwardContext ctx;
        ctx.attention_scaling = rng.index(2) == 0;
        const std::vector<std::size_t> one{n};
        const Tensor x = Tensor::from({n, d}, xv);
        const Tensor h = encode_history(x, one, stack, ctx);
        const Tensor hp = encode_history(gather_rows(x, perm), one, stack, ctx);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t c = 0; c < d; ++c) worst_perm = std::max(worst_perm, std::abs(hp.at(i, c) - h.at(perm[i], c)));

        // Row sums: packed batch of random lengths, large-magnitude inputs.
        std::vector<std::size_t> lengths(1 + rng.index(5));
        std::size_t total = 0;
        for (auto& l : lengths) total += (l = 1 + rng.index(15));
        std::vector<double> bv(total * d);
        const double spread = 0.1 + 10.0 * rng.uniform();
        for (auto& v : bv) v = spread * rng.normal();
        AttentionProbe probe;
        ctx.probe = &probe;
        encode_history(Tensor::from({total, d}, bv), lengths, stack, ctx);
        for (const auto& e : probe.entries)
            for (std::size_t r = 0; r < e.query_rows; ++r) {
                double s = 0.0;
                for (std::size_t c = 0; c < e.key_rows; ++c) s += e.weights[r * e.key_rows + c];
                worst_sum = std::max(worst_sum, std::abs(s - 1.0));
                ++rows_checked;
            }
    }
    return {worst_perm < 1e-9 && worst_sum < 1e-9 && rows_checked > 0,
            fmt::format("max permutation deviation {:.2e} (< 1e-9); max |row sum - 1| {:.2e} over {} rows (< 1e-9); "
                        "100 configurations",
                        worst_perm, worst_sum, rows_checked)};
}

}  // namespace

int main(int argc, char** argv) {
    tune_allocator();
    log::set_level(log::Level::quiet);
    const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria = {
        {"gradient integrity", gradient_integrity},
        {"loss analytics", loss_analytics},
        {"augmentation properties", augmentation_properties},
        {"metric oracle equivalence", metric_oracle},
        {"split protocol", split_protocol},
        {"synthetic overfit", synthetic_overfit},
        {"disentanglement directionality", disentanglement_directionality},
        {"augmentation ablation directionality", augmentation_directionality},
        {"determinism", determinism},
        {"structural invariants", structural_invariants},
    };
    std::set<int> selected;
    for (int i = 1; i < argc; ++i) selected.insert(std::atoi(argv[i]));
    int failures = 0;
    for (std::size_t i = 0; i < criteria.size(); ++i) {
        const int id = static_cast<int>(i + 1);
        if (!selected.empty() && !selected.count(id)) continue;
        Outcome o;
        try {
            o = criteria[i].second();
        } catch (const std::exception& e) {
            o = {false, fmt::format("exception: {}", e.what())};
        }
        failures += !o.pass;
        fmt::print("{} criterion {:>2} {}: {}\n", o.pass ? "PASS" : "FAIL", id, criteria[i].first, o.detail);
        std::fflush(stdout);
    }
    return failures == 0 ? 0 : 1;
}
