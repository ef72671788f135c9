#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "dmch/embedding.hpp"
#include "dmch/errors.hpp"
#include "dmch/model.hpp"
#include "dmch/synth.hpp"
#include "dmch/tensor.hpp"
#include "dmch/util.hpp"

// Joint optimization: triplet sampling at the configured positive-to-negative
// ratio, the combined tag/embedding loss, SGD with momentum, the stepped
// learning-rate decay, and the tanh-continuation stage schedule.

namespace dmch {

struct TrainConfig {
    int hidden = 256;
    int embed_dim = 256;
    int batch = 32;
    double momentum = 0.9;
    double lr = 0.001;
    double lr_decay = 0.1;
    int lr_decay_every = 50;
    double eta = 3.0;
    int code_bits = 128;
    double lambda = 1.0;
    int ratio = 10; // negatives per positive pair
    std::uint64_t seed = 1;

    int epochs = 100;
    double clip_norm = 5.0;
    double phi_initial = 1.0;
    double phi_growth = 10.0;
    double plateau_tol = 1e-3;
    int plateau_patience = 3;
    int stage_epoch_cap = 50;

    int image_size = 64;
    int conv1_channels = 8;
    int conv2_channels = 16;
    int max_len = 8;
    bool embedding_only = false; // train on L_emb alone (ablation mode)

    ModelConfig model_config() const {
        ModelConfig m;
        m.image_size = image_size;
        m.conv1_channels = conv1_channels;
        m.conv2_channels = conv2_channels;
        m.hidden = hidden;
        m.embed_dim = embed_dim;
        m.code_bits = code_bits;
        m.lambda = lambda;
        m.max_len = max_len;
        return m;
    }
};

/// lr = base × decay^floor(epoch / every); exact at epoch 0.
inline double lr_at(int epoch, const TrainConfig& cfg) {
    if (epoch < 0) throw argument_error("lr_at: epoch must be >= 0");
    const int k = epoch / cfg.lr_decay_every;
    if (k == 0) return cfg.lr;
    return cfg.lr * std::pow(cfg.lr_decay, k);
}

// ---------------------------------------------------------------------------
// config file: one `key value` per line, '#' comments
// ---------------------------------------------------------------------------

inline std::map<std::string, std::string> parse_kv_file(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw io_error("cannot open config file: " + path);
    std::map<std::string, std::string> out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        const std::string t = trim(line);
        if (t.empty() || t[0] == '#') continue;
        const auto sp = t.find_first_of(" \t=");
        if (sp == std::string::npos)
            throw format_error("config line " + std::to_string(lineno) + ": expected `key value`");
        out[trim(t.substr(0, sp))] = trim(t.substr(sp + 1));
    }
    return out;
}

inline void apply_config_entry(TrainConfig& cfg, const std::string& key, const std::string& value) {
    try {
        if (key == "hidden") cfg.hidden = std::stoi(value);
        else if (key == "embed_dim") cfg.embed_dim = std::stoi(value);
        else if (key == "batch") cfg.batch = std::stoi(value);
        else if (key == "momentum") cfg.momentum = std::stod(value);
        else if (key == "lr") cfg.lr = std::stod(value);
        else if (key == "lr_decay") cfg.lr_decay = std::stod(value);
        else if (key == "lr_decay_every") cfg.lr_decay_every = std::stoi(value);
        else if (key == "eta") cfg.eta = std::stod(value);
        else if (key == "code_bits") cfg.code_bits = std::stoi(value);
        else if (key == "lambda") cfg.lambda = std::stod(value);
        else if (key == "ratio") cfg.ratio = std::stoi(value);
        else if (key == "seed") cfg.seed = std::stoull(value);
        else if (key == "epochs") cfg.epochs = std::stoi(value);
        else if (key == "clip_norm") cfg.clip_norm = std::stod(value);
        else if (key == "phi_initial") cfg.phi_initial = std::stod(value);
        else if (key == "phi_growth") cfg.phi_growth = std::stod(value);
        else if (key == "plateau_tol") cfg.plateau_tol = std::stod(value);
        else if (key == "plateau_patience") cfg.plateau_patience = std::stoi(value);
        else if (key == "stage_epoch_cap") cfg.stage_epoch_cap = std::stoi(value);
        else if (key == "image_size") cfg.image_size = std::stoi(value);
        else if (key == "conv1_channels") cfg.conv1_channels = std::stoi(value);
        else if (key == "conv2_channels") cfg.conv2_channels = std::stoi(value);
        else if (key == "max_len") cfg.max_len = std::stoi(value);
        else if (key == "embedding_only") cfg.embedding_only = value == "1" || value == "true";
        else throw config_error("unknown config key '" + key + "'");
    } catch (const std::invalid_argument&) {
        throw config_error("config key '" + key + "': cannot parse value '" + value + "'");
    }
}

inline TrainConfig load_train_config(const std::string& path) {
    TrainConfig cfg;
    for (const auto& [k, v] : parse_kv_file(path)) apply_config_entry(cfg, k, v);
    return cfg;
}

inline void validate(const TrainConfig& cfg) {
    auto positive = [](double v, const char* name) {
        if (!(v > 0.0)) throw config_error(std::string(name) + " must be positive");
    };
    positive(cfg.hidden, "hidden");
    positive(cfg.embed_dim, "embed_dim");
    positive(cfg.batch, "batch");
    positive(cfg.lr, "lr");
    positive(cfg.ratio, "ratio");
    positive(cfg.epochs, "epochs");
    if (cfg.eta < 0.0) throw config_error("eta must be >= 0");
    if (cfg.momentum < 0.0 || cfg.momentum >= 1.0) throw config_error("momentum must lie in [0,1)");
    if (cfg.code_bits != 32 && cfg.code_bits != 64 && cfg.code_bits != 128)
        throw config_error("code_bits must be one of {32, 64, 128}");
    if (cfg.lambda < 0.0) throw config_error("lambda must be >= 0");
}

// ---------------------------------------------------------------------------
// dataset view + triplet sampling
// ---------------------------------------------------------------------------

/// (anchor user item, positive shop item of the same product, negative shop
/// item of a different product).
struct Triplet {
    std::string anchor;
    std::string positive;
    std::string negative;
};

struct TrainItem {
    std::string item_id; // manifest path, unique
    Domain domain = Domain::shop;
    std::string product_id;
    std::string split;
    std::vector<std::string> attributes;
    std::string file_path; // resolved
};

struct TrainingSet {
    std::vector<TrainItem> items;
    Vocabulary vocab;
    std::unordered_map<std::string, std::size_t> by_id;

    const TrainItem& item(const std::string& id) const {
        auto it = by_id.find(id);
        if (it == by_id.end()) throw data_error("unknown item id '" + id + "'");
        return items[it->second];
    }
};

inline TrainingSet build_training_set(const synth::DatasetManifest& manifest) {
    TrainingSet out;
    for (const auto& r : manifest.records) {
        TrainItem item;
        item.item_id = r.path;
        item.domain = r.domain;
        item.product_id = r.product_id;
        item.split = r.split;
        item.attributes = r.attributes;
        item.file_path = manifest.resolve(r);
        out.by_id.emplace(item.item_id, out.items.size());
        out.items.push_back(std::move(item));
        for (const auto& tok : r.attributes) out.vocab.add(tok);
    }
    return out;
}

/// For every (train user image, same-product train shop image) pair, draws
/// exactly `ratio` negatives uniformly without replacement from shop images
/// of other products. Reproducible under the seed.
inline std::vector<Triplet> sample_triplets(const TrainingSet& set, int ratio, std::uint64_t seed) {
    if (ratio < 1) throw argument_error("sample_triplets: ratio must be >= 1");
    std::vector<const TrainItem*> shop_train;
    for (const auto& item : set.items)
        if (item.domain == Domain::shop && item.split == "train") shop_train.push_back(&item);

    Rng rng(derive_seed(seed, "triplets"));
    std::vector<Triplet> out;
    for (const auto& anchor : set.items) {
        if (anchor.domain != Domain::user || anchor.split != "train") continue;
        std::vector<const TrainItem*> positives, negatives;
        for (const auto* s : shop_train)
            (s->product_id == anchor.product_id ? positives : negatives).push_back(s);
        if (positives.empty())
            throw data_error("product '" + anchor.product_id + "' has no shop image for anchor '" +
                             anchor.item_id + "'");
        if (static_cast<int>(negatives.size()) < ratio)
            throw data_error("product '" + anchor.product_id + "': only " +
                             std::to_string(negatives.size()) + " negatives available for ratio " +
                             std::to_string(ratio));
        for (const auto* pos : positives) {
            // partial Fisher-Yates for `ratio` draws without replacement
            std::vector<const TrainItem*> pool = negatives;
            for (int d = 0; d < ratio; ++d) {
                std::uniform_int_distribution<std::size_t> pickd(static_cast<std::size_t>(d), pool.size() - 1);
                std::swap(pool[static_cast<std::size_t>(d)], pool[pickd(rng)]);
                out.push_back({anchor.item_id, pos->item_id, pool[static_cast<std::size_t>(d)]->item_id});
            }
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// optimizer
// ---------------------------------------------------------------------------

/// v ← momentum·v + grad; param ← param − lr·v; grads cleared.
class SgdMomentum {
public:
    void step(NamedTensors& params, double lr, double momentum) {
        for (auto& [name, p] : params) {
            if (p.grad().size() != p.values().size())
                throw training_error("parameter '" + name + "' has no gradient; run backward first");
            auto& v = velocity_[name];
            if (v.size() != p.size()) v.assign(p.size(), 0.0);
            auto& g = p.grad();
            auto& x = p.values();
            for (std::size_t i = 0; i < x.size(); ++i) {
                v[i] = momentum * v[i] + g[i];
                x[i] -= lr * v[i];
            }
            p.zero_grad();
        }
    }

    const std::vector<double>* velocity(const std::string& name) const {
        auto it = velocity_.find(name);
        return it == velocity_.end() ? nullptr : &it->second;
    }

private:
    std::map<std::string, std::vector<double>> velocity_;
};

/// Scales all grads so the global L2 norm is at most max_norm.
inline double clip_global_norm(NamedTensors& params, double max_norm) {
    double sq = 0.0;
    for (auto& [name, p] : params) {
        (void)name;
        for (double g : p.grad()) sq += g * g;
    }
    const double norm = std::sqrt(sq);
    if (norm > max_norm && norm > 0.0) {
        const double s = max_norm / norm;
        for (auto& [name, p] : params) {
            (void)name;
            for (double& g : p.grad()) g *= s;
        }
    }
    return norm;
}

// ---------------------------------------------------------------------------
// multi-task loss and the training loop
// ---------------------------------------------------------------------------

struct LossBreakdown {
    Tensor total;     // scalar on the tape
    double tag = 0.0; // batch-mean tag component
    double emb = 0.0; // batch-mean embedding component
};

/// L = L_tag(I) + L_tag(I_p) + L_tag(I_q) + η·L_emb(I,I_p,I_q), averaged
/// over the batch (mean reduction). In embedding-only mode the tag terms
/// are dropped and the raw L_emb is averaged.
inline LossBreakdown multi_task_loss(Tape& tape, const DmchModel& model,
                                     const std::vector<Triplet>& batch,
                                     const std::unordered_map<std::string, ImageSample>& images,
                                     const std::unordered_map<std::string, AttributeSequence>& sequences,
                                     const TrainConfig& cfg, const ContinuationSchedule& schedule) {
    if (batch.empty()) throw argument_error("multi_task_loss: empty batch");
    const double gamma = margin_for(cfg.code_bits);
    Tensor acc;
    double tag_sum = 0.0, emb_sum = 0.0;
    for (const auto& tri : batch) {
        auto image_of = [&](const std::string& id) -> const ImageSample& {
            auto it = images.find(id);
            if (it == images.end()) throw data_error("triplet references unloaded image '" + id + "'");
            return it->second;
        };
        auto seq_of = [&](const std::string& id) -> const AttributeSequence& {
            auto it = sequences.find(id);
            if (it == sequences.end())
                throw data_error("image '" + id + "' has no ground-truth attribute sequence");
            return it->second;
        };
        auto fwd_a = model.teacher_forward(tape, image_of(tri.anchor), seq_of(tri.anchor));
        auto fwd_p = model.teacher_forward(tape, image_of(tri.positive), seq_of(tri.positive));
        auto fwd_n = model.teacher_forward(tape, image_of(tri.negative), seq_of(tri.negative));
        Tensor e_a = model.relaxed_code(tape, fwd_a.grid, fwd_a.contexts, schedule);
        Tensor e_p = model.relaxed_code(tape, fwd_p.grid, fwd_p.contexts, schedule);
        Tensor e_n = model.relaxed_code(tape, fwd_n.grid, fwd_n.contexts, schedule);
        Tensor l_emb = triplet_loss(tape, e_a, e_p, e_n, gamma);
        emb_sum += l_emb.values()[0];

        Tensor item;
        if (cfg.embedding_only) {
            item = l_emb;
        } else {
            Tensor tags = add(tape, add(tape, fwd_a.tag_loss, fwd_p.tag_loss), fwd_n.tag_loss);
            tag_sum += tags.values()[0];
            item = add(tape, tags, affine(tape, l_emb, cfg.eta, 0.0));
        }
        acc = acc.valid() ? add(tape, acc, item) : item;
    }
    LossBreakdown out;
    out.total = affine(tape, acc, 1.0 / static_cast<double>(batch.size()), 0.0);
    out.tag = tag_sum / static_cast<double>(batch.size());
    out.emb = emb_sum / static_cast<double>(batch.size());
    return out;
}

struct EpochLog {
    int epoch = 0;
    double tag = 0.0;
    double emb = 0.0;
    double total = 0.0;
    double phi = 1.0;
    double lr = 0.0;
};

inline std::string format_epoch_log(const EpochLog& e) {
    char buf[192];
    std::snprintf(buf, sizeof(buf), "%d\t%.6f\t%.6f\t%.6f\t%g\t%g", e.epoch, e.tag, e.emb, e.total, e.phi,
                  e.lr);
    return buf;
}

struct TrainResult {
    std::vector<EpochLog> log;
    ContinuationSchedule final_schedule;
    std::vector<double> stage_quantization_gaps; // mean ‖e − sgn(e)‖∞ at each stage end
};

/// Offline training. Writes `<stem>_stageN` checkpoints as φ advances and
/// `<stem>` at the end; appends one tab-separated line per epoch to the log.
inline TrainResult train(DmchModel& model, const TrainingSet& set, const TrainConfig& cfg,
                         const std::string& out_stem = "", std::ostream* log_stream = nullptr) {
    validate(cfg);
    if (sample_triplets(set, cfg.ratio, cfg.seed).empty())
        throw data_error("training set yields no triplets");

    // preload images and sequences once
    std::unordered_map<std::string, ImageSample> images;
    std::unordered_map<std::string, AttributeSequence> sequences;
    for (const auto& item : set.items) {
        if (item.split != "train") continue;
        images.emplace(item.item_id, load_image(item.file_path, item.domain, item.item_id));
        sequences.emplace(item.item_id,
                          AttributeSequence::from_payload(set.vocab.encode(item.attributes)));
    }

    NamedTensors params = model.parameters();
    SgdMomentum opt;
    ContinuationSchedule schedule;
    schedule.phi = cfg.phi_initial;
    schedule.growth = cfg.phi_growth;

    TrainResult result;
    Rng shuffle_rng(derive_seed(cfg.seed, "epoch_shuffle"));
    double stage_best = std::numeric_limits<double>::infinity();
    int stage_plateau = 0;
    int stage_epochs = 0;

    auto measure_quantization_gap = [&] {
        // mean over held training anchors of ‖e − sgn±1(e)‖∞ on the frozen net
        double acc = 0.0;
        int n = 0;
        for (const auto& item : set.items) {
            if (item.domain != Domain::user || item.split != "train") continue;
            Tape tape;
            auto it = images.find(item.item_id);
            if (it == images.end()) continue;
            GridTensors grid = model.encoder().encode(tape, it->second);
            std::vector<Tensor> ctxs;
            model.decoder().tag_loss(tape, grid, sequences.at(item.item_id), &ctxs);
            Tensor e = model.relaxed_code(tape, grid, ctxs, schedule);
            double worst = 0.0;
            for (double v : e.values()) worst = std::max(worst, std::abs(v - (v >= 0.0 ? 1.0 : -1.0)));
            acc += worst;
            ++n;
            if (n >= 16) break; // a held batch is enough
        }
        return n ? acc / n : 0.0;
    };

    auto save_stage = [&](int stage) {
        if (!out_stem.empty()) model.save(out_stem + "_stage" + std::to_string(stage));
    };

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        // fresh negatives each epoch so every shop image eventually
        // constrains every anchor; still fully determined by the seed
        auto triplets =
            sample_triplets(set, cfg.ratio, derive_seed(cfg.seed, "epoch_" + std::to_string(epoch)));
        std::shuffle(triplets.begin(), triplets.end(), shuffle_rng);
        const double lr = lr_at(epoch, cfg);
        double tag_acc = 0.0, emb_acc = 0.0, total_acc = 0.0;
        int batches = 0;
        for (std::size_t off = 0; off < triplets.size(); off += static_cast<std::size_t>(cfg.batch)) {
            std::vector<Triplet> batch(triplets.begin() + static_cast<std::ptrdiff_t>(off),
                                       triplets.begin() +
                                           static_cast<std::ptrdiff_t>(std::min(off + static_cast<std::size_t>(cfg.batch),
                                                                                 triplets.size())));
            Tape tape;
            LossBreakdown loss;
            try {
                loss = multi_task_loss(tape, model, batch, images, sequences, cfg, schedule);
            } catch (const argument_error& e) {
                // numeric domain guards (log of a non-positive or NaN
                // probability) fire before the loss itself goes NaN
                throw training_error("non-finite forward pass at epoch " + std::to_string(epoch) +
                                     " batch " + std::to_string(batches) + " (first anchor '" +
                                     batch.front().anchor + "'): " + e.what());
            }
            const double total = loss.total.values()[0];
            if (!std::isfinite(total))
                throw training_error("non-finite loss at epoch " + std::to_string(epoch) + " batch " +
                                     std::to_string(batches) + " (first anchor '" + batch.front().anchor +
                                     "')");
            tape.backward(loss.total);
            // parameters outside the active objective (e.g. the sentinel and
            // token head under embedding-only training) have gradient zero
            for (auto& [name, p] : params) {
                (void)name;
                p.ensure_grad();
            }
            clip_global_norm(params, cfg.clip_norm);
            opt.step(params, lr, cfg.momentum);
            tag_acc += loss.tag;
            emb_acc += loss.emb;
            total_acc += total;
            ++batches;
        }

        EpochLog row;
        row.epoch = epoch;
        row.tag = tag_acc / batches;
        row.emb = emb_acc / batches;
        row.total = total_acc / batches;
        row.phi = schedule.phi;
        row.lr = lr;
        result.log.push_back(row);
        if (log_stream) (*log_stream) << format_epoch_log(row) << "\n";

        // continuation stage management: advance on plateau or stage cap
        ++stage_epochs;
        const double rel_improvement =
            stage_best == std::numeric_limits<double>::infinity()
                ? 1.0
                : (stage_best - row.total) / std::max(1e-12, std::abs(stage_best));
        if (row.total < stage_best) stage_best = row.total;
        stage_plateau = rel_improvement < cfg.plateau_tol ? stage_plateau + 1 : 0;
        const bool last_epoch = epoch + 1 == cfg.epochs;
        if (!last_epoch && (stage_plateau >= cfg.plateau_patience || stage_epochs >= cfg.stage_epoch_cap)) {
            result.stage_quantization_gaps.push_back(measure_quantization_gap());
            save_stage(schedule.stage);
            schedule = advance_schedule(schedule);
            stage_best = std::numeric_limits<double>::infinity();
            stage_plateau = 0;
            stage_epochs = 0;
        }
    }
    result.stage_quantization_gaps.push_back(measure_quantization_gap());
    result.final_schedule = schedule;
    if (!out_stem.empty()) model.save(out_stem);
    return result;
}

} // namespace dmch
