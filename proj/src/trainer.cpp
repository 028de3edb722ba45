#include "poiformer/trainer.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <map>
#include <numeric>
#include <ostream>
#include <stdexcept>

#include <json.hpp>

#include "poiformer/log.hpp"
#include "poiformer/ops.hpp"

namespace poiformer {

const char* negative_sampling_name(NegativeSampling n) {
    return n == NegativeSampling::uniform ? "uniform" : "popularity";
}

NegativeSampling parse_negative_sampling(std::string_view name) {
    if (name == "uniform") return NegativeSampling::uniform;
    if (name == "popularity") return NegativeSampling::popularity;
    throw std::invalid_argument(fmt::format("unknown negative sampling '{}'", name));
}

std::vector<std::size_t> sample_negatives(std::size_t vocab_size, std::size_t positive,
                                          std::size_t n_s, Rng& rng) {
    if (positive >= vocab_size) throw std::invalid_argument("sample_negatives: positive outside vocabulary");
    if (n_s >= vocab_size) {
        throw std::invalid_argument(
            fmt::format("sample_negatives: {} negatives need a vocabulary larger than {}", n_s, vocab_size));
    }
    // Floyd's algorithm over the V-1 non-positive slots.
    const std::size_t pool = vocab_size - 1;
    std::vector<std::size_t> picked;
    picked.reserve(n_s);
    for (std::size_t j = pool - n_s; j < pool; ++j) {
        const std::size_t t = rng.index(j + 1);
        if (std::find(picked.begin(), picked.end(), t) == picked.end())
            picked.push_back(t);
        else
            picked.push_back(j);
    }
    for (auto& x : picked)
        if (x >= positive) ++x;
    return picked;
}

std::vector<std::size_t> sample_negatives_weighted(std::span<const double> weights,
                                                   std::size_t positive, std::size_t n_s, Rng& rng) {
    if (positive >= weights.size()) throw std::invalid_argument("sample_negatives: positive outside vocabulary");
    std::vector<std::pair<double, std::size_t>> keys;
    for (std::size_t i = 0; i < weights.size(); ++i) {
        const double u = rng.uniform();
        if (i == positive || !(weights[i] > 0.0)) continue;
        keys.emplace_back(std::log(std::max(u, 1e-300)) / weights[i], i);
    }
    if (n_s > keys.size()) {
        throw std::invalid_argument(
            fmt::format("sample_negatives: {} negatives but only {} eligible POIs", n_s, keys.size()));
    }
    std::partial_sort(keys.begin(), keys.begin() + static_cast<std::ptrdiff_t>(n_s), keys.end(),
                      [](const auto& a, const auto& b) { return a.first > b.first; });
    std::vector<std::size_t> out;
    out.reserve(n_s);
    for (std::size_t i = 0; i < n_s; ++i) out.push_back(keys[i].second);
    return out;
}

namespace {

void require_finite(const Tensor& t, const char* what) {
    for (double x : t.data())
        if (!std::isfinite(x)) throw NumericError(fmt::format("{}: non-finite input", what));
}

}  // namespace

Tensor matching_loss(const Tensor& e_hat, const Tensor& candidates, const Tensor& tau) {
    require_finite(e_hat, "matching_loss");
    require_finite(candidates, "matching_loss");
    if (!(tau.item() > 0.0)) throw std::invalid_argument("matching_loss: tau must be positive");
    if (e_hat.rows() == 0 || candidates.rows() % e_hat.rows() != 0) {
        throw DimensionError(fmt::format("matching_loss: {} candidates for {} predictions",
                                         shape_str(candidates.shape()), shape_str(e_hat.shape())));
    }
    Tensor logits = div(group_dot(e_hat, candidates), tau);
    const std::vector<std::size_t> positive(e_hat.rows(), 0);
    return scale(mean(take_along_rows(log_softmax(logits, 1), positive)), -1.0);
}

Tensor total_loss(const Tensor& matching, const Tensor& contrastive, double lambda) {
    if (!(lambda >= 0.0)) throw std::invalid_argument("total_loss: lambda must be >= 0");
    if (lambda == 0.0 || !contrastive.defined()) return matching;
    return add(matching, scale(contrastive, lambda));
}

void adam_step(std::span<const Tensor> params, OptimizerState& state, const AdamConfig& cfg) {
    if (state.m.size() != params.size()) {
        state.m.assign(params.size(), {});
        state.v.assign(params.size(), {});
        for (std::size_t i = 0; i < params.size(); ++i) {
            state.m[i].assign(params[i].numel(), 0.0);
            state.v[i].assign(params[i].numel(), 0.0);
        }
    }
    ++state.step;
    const double t = static_cast<double>(state.step);
    const double bc1 = 1.0 - std::pow(cfg.beta1, t);
    const double bc2 = 1.0 - std::pow(cfg.beta2, t);
    for (std::size_t i = 0; i < params.size(); ++i) {
        const Tensor& p = params[i];
        if (!p.requires_grad()) continue;
        auto& impl = *p.impl();
        auto& m = state.m[i];
        auto& v = state.v[i];
        if (m.size() != impl.data.size()) throw DimensionError("adam_step: state does not match parameters");
        const bool has_grad = impl.grad.size() == impl.data.size();
        for (std::size_t j = 0; j < impl.data.size(); ++j) {
            double g = has_grad ? impl.grad[j] : 0.0;
            if (!cfg.decoupled) g += cfg.weight_decay * impl.data[j];
            m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * g;
            v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * g * g;
            const double step = (m[j] / bc1) / (std::sqrt(v[j] / bc2) + cfg.eps);
            if (cfg.decoupled) impl.data[j] -= cfg.lr * cfg.weight_decay * impl.data[j];
            impl.data[j] -= cfg.lr * step;
        }
    }
}

double clip_grad_norm(std::span<const Tensor> params, double max_norm) {
    double sq = 0.0;
    for (const auto& p : params)
        for (double g : p.impl()->grad) sq += g * g;
    const double norm = std::sqrt(sq);
    if (max_norm > 0.0 && norm > max_norm) {
        const double factor = max_norm / norm;
        for (const auto& p : params)
            for (double& g : p.impl()->grad) g *= factor;
    }
    return norm;
}

double TrainConfig::effective_lambda() const {
    return model.ablation == Ablation::full ? lambda : 0.0;
}

void TrainConfig::validate() const {
    model.validate();
    if (epochs == 0 || batch_size == 0) throw std::invalid_argument("epochs and batch_size must be positive");
    if (!(lr >= 0.0) || !(weight_decay >= 0.0)) throw std::invalid_argument("lr and weight_decay must be >= 0");
    if (!(lambda >= 0.0)) throw std::invalid_argument("lambda must be >= 0");
    if (!(grad_clip >= 0.0)) throw std::invalid_argument("grad_clip must be >= 0");
    augmentation.validate(effective_lambda() > 0.0);
}

namespace {

ForwardContext make_context(const ModelConfig& mc, bool training, Rng* rng) {
    ForwardContext ctx;
    ctx.training = training;
    ctx.dropout = training ? mc.dropout : 0.0;
    ctx.rng = rng;
    ctx.attention_scaling = mc.attention_scaling;
    ctx.ln_eps = mc.ln_eps;
    return ctx;
}

std::vector<EncodedCheckIn> encode_all(std::span<const CheckIn> checkins, const PoiTable& vocab) {
    std::vector<EncodedCheckIn> out;
    out.reserve(checkins.size());
    for (const auto& c : checkins) out.push_back(encode_checkin(c, vocab));
    return out;
}

std::string param_summary(const PoiFormer& model) {
    std::string s;
    for (const auto& [name, t] : model.params().entries()) {
        double mx = 0.0;
        bool finite = true;
        for (double x : t.data()) {
            finite = finite && std::isfinite(x);
            mx = std::max(mx, std::abs(x));
        }
        s += fmt::format("\n  {} {} max|x|={:.4g}{}", name, shape_str(t.shape()), mx, finite ? "" : " NON-FINITE");
    }
    return s;
}

}  // namespace

EvalResult evaluate(const PoiFormer& model, const DatasetSplit& split, std::span<const Sample> samples,
                    std::ostream* dump, std::size_t dump_top) {
    NoGradGuard no_grad;
    EvalResult result;
    if (samples.empty()) return result;
    const PoiTable& vocab = model.vocabulary();
    std::vector<std::int64_t> ids;
    ids.reserve(vocab.size());
    for (const auto& p : vocab.pois()) ids.push_back(p.poi_id);
    const Tensor candidates = model.all_candidates();
    const ForwardContext ctx = make_context(model.config(), false, nullptr);
    const std::size_t d = model.config().d;
    const std::size_t keep = std::max<std::size_t>(dump_top, 10);

    constexpr std::size_t kChunk = 64;
    for (std::size_t begin = 0; begin < samples.size(); begin += kChunk) {
        const std::size_t end = std::min(samples.size(), begin + kChunk);
        SequenceBatch batch;
        for (std::size_t i = begin; i < end; ++i) {
            const auto enc = encode_all(split.prefix(samples[i]), vocab);
            batch.append(enc);
        }
        const Tensor e_hat = model.forward(batch, ctx).e_hat;
        for (std::size_t i = begin; i < end; ++i) {
            const auto row = e_hat.data().subspan((i - begin) * d, d);
            const std::vector<double> scores = score_candidates(row, candidates);
            RankedPrediction pred = rank_scores(i, scores, ids, samples[i].label, keep);
            if (dump) {
                nlohmann::json top = nlohmann::json::array();
                for (std::size_t r = 0; r < std::min(dump_top, pred.ranked_poi_ids.size()); ++r) {
                    const std::int64_t id = pred.ranked_poi_ids[r];
                    top.push_back({id, scores[vocab.require_index(id)]});
                }
                nlohmann::json line = {{"query_id", i}, {"truth", pred.truth_poi_id}, {"top", std::move(top)}};
                *dump << line.dump() << '\n';
            }
            result.predictions.push_back(std::move(pred));
        }
    }
    result.metrics = summarize(result.predictions);
    return result;
}

ModelConfig resolve_model_config(const TrainConfig& cfg, const DatasetSplit& split) {
    ModelConfig mc = cfg.model;
    mc.num_category_ids = std::max<std::size_t>(1, split.vocab.num_category_ids());
    mc.bounds = compute_bounds(split.vocab, split.sequences);
    return mc;
}

TrainResult train(const TrainConfig& cfg, const DatasetSplit& split, const EpochHook& hook) {
    cfg.validate();
    if (split.train.empty()) throw std::invalid_argument("train: the training split is empty");
    const PoiTable& vocab = split.vocab;
    const std::size_t V = vocab.size();
    if (V < 2) throw std::invalid_argument("train: need at least two POIs");

    TrainResult result{PoiFormer(resolve_model_config(cfg, split), cfg.seed), {}, 0, -1.0};
    PoiFormer& model = result.model;
    model.set_vocabulary(vocab);
    if (!cfg.category_vectors.empty()) {
        Tensor table = model.embedding().cat_table;
        const std::size_t n = load_category_vectors(cfg.category_vectors, vocab, table);
        log::info("loaded {} pretrained category vectors", n);
    }
    if (cfg.freeze_category_vectors) {
        Tensor table = model.embedding().cat_table;
        table.set_requires_grad(false);
    }

    const double lambda = cfg.effective_lambda();
    std::size_t n_s = cfg.num_negatives;
    if (n_s > V - 1) {
        log::warn("num_negatives {} exceeds the {} available negatives; using {}", n_s, V - 1, V - 1);
        n_s = V - 1;
    }
    std::vector<double> popularity;
    if (cfg.negative_sampling == NegativeSampling::popularity) {
        popularity.assign(V, 1.0);
        for (const auto& s : split.train) popularity[vocab.require_index(s.label)] += 1.0;
    }

    std::vector<std::vector<EncodedCheckIn>> encoded;
    encoded.reserve(split.sequences.size());
    for (const auto& t : split.sequences) encoded.push_back(encode_all(t.checkins, vocab));

    const std::vector<Tensor> params = model.params().tensors();
    OptimizerState opt;
    const AdamConfig adam{cfg.lr, cfg.weight_decay, 0.9, 0.999, 1e-8, cfg.decoupled_wd};
    std::vector<std::vector<double>> best;
    const bool contrastive = lambda > 0.0 && model.preference_encoder().has_value();

    for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
        const auto start = std::chrono::steady_clock::now();
        std::vector<std::size_t> order(split.train.size());
        std::iota(order.begin(), order.end(), 0);
        Rng shuffle_rng(Rng::derive(cfg.seed, epoch, 0));
        shuffle_rng.shuffle(std::span<std::size_t>(order));

        std::map<std::size_t, std::vector<std::size_t>> by_length;
        for (auto i : order) by_length[split.train[i].prefix_len].push_back(i);
        std::vector<std::vector<std::size_t>> batches;
        for (auto& [len, items] : by_length)
            for (std::size_t b = 0; b < items.size(); b += cfg.batch_size)
                batches.emplace_back(items.begin() + static_cast<std::ptrdiff_t>(b),
                                     items.begin() + static_cast<std::ptrdiff_t>(std::min(items.size(), b + cfg.batch_size)));
        shuffle_rng.shuffle(std::span<std::vector<std::size_t>>(batches));

        double loss_sum = 0.0;
        for (std::size_t b = 0; b < batches.size(); ++b) {
            const auto& items = batches[b];
            SequenceBatch batch, view_a, view_b;
            std::vector<std::size_t> cand_idx;
            cand_idx.reserve(items.size() * (n_s + 1));
            for (auto i : items) {
                const Sample& s = split.train[i];
                Rng item_rng(Rng::derive(cfg.seed, epoch, i + 1));
                batch.append(std::span<const EncodedCheckIn>(encoded[s.sequence]).first(s.prefix_len));
                const std::size_t pos = vocab.require_index(s.label);
                cand_idx.push_back(pos);
                const auto negs = popularity.empty() ? sample_negatives(V, pos, n_s, item_rng)
                                                     : sample_negatives_weighted(popularity, pos, n_s, item_rng);
                cand_idx.insert(cand_idx.end(), negs.begin(), negs.end());
                if (contrastive) {
                    const auto prefix = split.prefix(s);
                    view_a.append(encode_all(augment(prefix, cfg.augmentation, item_rng), vocab));
                    view_b.append(encode_all(augment(prefix, cfg.augmentation, item_rng), vocab));
                }
            }
            Rng dropout_rng(Rng::derive(cfg.seed ^ 0xd1b54a32d192ed03ULL, epoch, b));
            const ForwardContext ctx = make_context(model.config(), true, &dropout_rng);

            const auto out = model.forward(batch, ctx);
            const Tensor l_match = matching_loss(out.e_hat, model.candidate_embeddings(cand_idx), model.tau());
            Tensor l_con;
            if (contrastive) {
                const Tensor q_a = model.preference(model.embed(view_a).e_rho, view_a.lengths, ctx);
                const Tensor q_b = model.preference(model.embed(view_b).e_rho, view_b.lengths, ctx);
                l_con = info_nce(q_a, q_b, model.tau());
            }
            const Tensor loss = total_loss(l_match, l_con, lambda);
            if (!std::isfinite(loss.item())) {
                throw NumericError(fmt::format(
                    "non-finite loss at epoch {} batch {} (prefix length {}): matching={} contrastive={} tau={}{}",
                    epoch, b, batch.lengths.front(), l_match.item(), l_con.defined() ? l_con.item() : 0.0,
                    model.tau().item(), param_summary(model)));
            }
            model.params().zero_grad();
            loss.backward();
            if (cfg.grad_clip > 0.0) clip_grad_norm(params, cfg.grad_clip);
            adam_step(params, opt, adam);
            model.clamp_tau();
            loss_sum += loss.item() * static_cast<double>(items.size());
        }

        EpochRecord rec;
        rec.epoch = epoch;
        rec.train_loss = loss_sum / static_cast<double>(split.train.size());
        if (!split.val.empty()) rec.val = evaluate(model, split, split.val).metrics;
        rec.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        log::info("epoch {} loss {:.5f} val R@5 {:.4f} tau {:.4f} ({:.2f}s)", epoch, rec.train_loss,
                  rec.val.recall_5, model.tau().item(), rec.wall_seconds);
        if (split.val.empty() || rec.val.recall_5 > result.best_val_recall_5) {
            result.best_val_recall_5 = rec.val.recall_5;
            result.best_epoch = epoch;
            best = model.params().snapshot();
        }
        result.log.push_back(rec);
        if (hook && !hook(rec, model)) break;
    }
    model.params().restore(best);
    model.params().zero_grad();
    return result;
}

GradReport tiny_model_grad_check(std::uint64_t seed) {
    Rng rng(seed);
    PoiTable vocab;
    const std::size_t cats[] = {vocab.intern_category("a"), vocab.intern_category("b")};
    constexpr std::size_t kPois = 7;
    for (std::size_t i = 0; i < kPois; ++i)
        vocab.insert(Poi{static_cast<std::int64_t>(i + 1), -74.0 + 0.1 * rng.uniform(),
                         40.7 + 0.1 * rng.uniform(), cats[i % 2]});
    vocab.finalize();

    ModelConfig mc;
    mc.d = 8;
    mc.heads = 2;
    mc.encoder_layers = mc.query_layers = mc.decoder_layers = 1;
    mc.ffn_mult = 2;
    mc.max_len = 8;
    mc.cat_dim = 4;
    mc.dropout = 0.0;
    mc.num_category_ids = vocab.num_category_ids();
    mc.bounds = CoordBounds{-74.0, -73.9, 40.7, 40.8};
    PoiFormer model(mc, Rng::derive(seed, 1));
    model.set_vocabulary(vocab);

    constexpr std::size_t kB = 2, kN = 5, kNeg = 3;
    SequenceBatch batch, view_a, view_b;
    std::vector<std::size_t> cand_idx;
    AugmentationConfig aug;
    aug.apply_prob = 1.0;
    for (std::size_t b = 0; b < kB; ++b) {
        std::vector<CheckIn> seq;
        for (std::size_t t = 0; t < kN; ++t)
            seq.push_back(CheckIn{static_cast<std::int64_t>(b + 1),
                                  1609718400 + static_cast<std::int64_t>(rng.index(7 * 86400)),
                                  static_cast<std::int64_t>(rng.index(kPois) + 1)});
        batch.append(encode_all(seq, vocab));
        view_a.append(encode_all(augment(seq, aug, rng), vocab));
        view_b.append(encode_all(augment(seq, aug, rng), vocab));
        const std::size_t pos = rng.index(kPois);
        cand_idx.push_back(pos);
        const auto negs = sample_negatives(kPois, pos, kNeg, rng);
        cand_idx.insert(cand_idx.end(), negs.begin(), negs.end());
    }
    const ForwardContext ctx = make_context(mc, false, nullptr);
    auto loss = [&] {
        const auto out = model.forward(batch, ctx);
        const Tensor l_match = matching_loss(out.e_hat, model.candidate_embeddings(cand_idx), model.tau());
        const Tensor q_a = model.preference(model.embed(view_a).e_rho, view_a.lengths, ctx);
        const Tensor q_b = model.preference(model.embed(view_b).e_rho, view_b.lengths, ctx);
        return total_loss(l_match, info_nce(q_a, q_b, model.tau()), 1.0);
    };
    const std::vector<Tensor> params = model.params().tensors();
    return grad_check("full_model", loss, params);
}

}  // namespace poiformer
