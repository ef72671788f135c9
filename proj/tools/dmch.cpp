// dmch — cross-domain garment retrieval pipeline driver.
//
// Subcommands: gen-data, train, embed, query, eval-retrieval, eval-attr,
// bench, attn-export. Exit codes: 0 success, 2 configuration errors,
// 3 data/format errors, 4 I/O errors, 1 anything else.

#include <CLI11.hpp>

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <string>
#include <unordered_map>
#include <vector>

#include "dmch/embedding.hpp"
#include "dmch/hamming.hpp"
#include "dmch/model.hpp"
#include "dmch/seq_metrics.hpp"
#include "dmch/synth.hpp"
#include "dmch/trainer.hpp"

namespace {

using namespace dmch;

struct TrainFlagBinding {
    std::string key;
    CLI::Option* opt = nullptr;
    std::string value;
};

DmchModel load_model(const std::string& checkpoint) {
    return DmchModel::load(checkpoint_stem(checkpoint));
}

std::vector<CodeEntry> embed_manifest_subset(const DmchModel& model, const synth::DatasetManifest& manifest,
                                             Domain domain, const std::string& split) {
    std::vector<const synth::ManifestRecord*> records;
    for (const auto& r : manifest.records) {
        if (r.domain != domain) continue;
        if (split != "all" && r.split != split) continue;
        records.push_back(&r);
    }
    std::vector<CodeEntry> entries(records.size());
    parallel_for(records.size(), [&](std::size_t i) {
        const auto& r = *records[i];
        ImageSample img = load_image(manifest.resolve(r), r.domain, r.path);
        entries[i] = {r.path, model.infer(img).code};
    });
    return entries;
}

int run(int argc, char** argv) {
    CLI::App app{"DMCH cross-domain garment retrieval"};
    app.require_subcommand(1);

    // ---- gen-data ----------------------------------------------------------
    auto* gen = app.add_subcommand("gen-data", "Render a synthetic paired user/shop dataset");
    std::string gen_out;
    int gen_products = 10, gen_images = 1, gen_size = 64;
    std::uint64_t gen_seed = 1;
    double gen_hard = 0.0;
    gen->add_option("--out", gen_out, "Output directory")->required();
    gen->add_option("--products", gen_products, "Number of distinct products");
    gen->add_option("--images-per-product", gen_images, "Images per product per domain");
    gen->add_option("--seed", gen_seed, "Generation seed");
    gen->add_option("--size", gen_size, "Image side length (multiple of 8)");
    gen->add_option("--hard-fraction", gen_hard, "Fraction of products given a one-factor twin");

    // ---- train -------------------------------------------------------------
    auto* train_cmd = app.add_subcommand("train", "Train the model on a dataset manifest");
    std::string train_manifest, train_out, train_config_path;
    train_cmd->add_option("--manifest", train_manifest, "Dataset manifest")->required();
    train_cmd->add_option("--out", train_out, "Checkpoint stem to write")->required();
    train_cmd->add_option("--config", train_config_path, "Key-value config file");
    // every config-file key is also a flag; flags win over the file
    auto bindings = std::make_shared<std::vector<TrainFlagBinding>>();
    bindings->reserve(24);
    for (const char* key :
         {"hidden", "embed_dim", "batch", "momentum", "lr", "lr_decay", "lr_decay_every", "eta",
          "code_bits", "lambda", "ratio", "seed", "epochs", "clip_norm", "phi_initial", "phi_growth",
          "plateau_tol", "plateau_patience", "stage_epoch_cap", "image_size", "conv1_channels",
          "conv2_channels", "max_len", "embedding_only"}) {
        bindings->push_back({key, nullptr, ""});
    }
    for (auto& b : *bindings) {
        std::string flag = "--" + b.key;
        std::replace(flag.begin(), flag.end(), '_', '-');
        b.opt = train_cmd->add_option(flag, b.value, b.key);
    }

    // ---- embed -------------------------------------------------------------
    auto* embed_cmd = app.add_subcommand("embed", "Write the binary code database for a manifest subset");
    std::string embed_ckpt, embed_manifest, embed_out, embed_domain = "shop", embed_split = "all";
    embed_cmd->add_option("--checkpoint", embed_ckpt, "Model checkpoint (.ckpt)")->required();
    embed_cmd->add_option("--manifest", embed_manifest, "Dataset manifest")->required();
    embed_cmd->add_option("--out", embed_out, "Output DMCHCODE file")->required();
    embed_cmd->add_option("--domain", embed_domain, "user|shop (default shop)");
    embed_cmd->add_option("--split", embed_split, "train|test|all (default all)");

    // ---- query -------------------------------------------------------------
    auto* query_cmd = app.add_subcommand("query", "Retrieve top-K matches for one image");
    std::string query_ckpt, query_codefile, query_image, query_attn_out;
    int query_k = 10;
    query_cmd->add_option("--checkpoint", query_ckpt, "Model checkpoint")->required();
    query_cmd->add_option("--codefile", query_codefile, "Shop code database")->required();
    query_cmd->add_option("--image", query_image, "Query image (png)")->required();
    query_cmd->add_option("--k", query_k, "Results to return");
    query_cmd->add_option("--attn-out", query_attn_out, "Optional attention CSV export path");

    // ---- eval-retrieval ----------------------------------------------------
    auto* evalr_cmd = app.add_subcommand("eval-retrieval", "P@K over the test queries");
    std::string evalr_ckpt, evalr_codefile, evalr_manifest;
    std::vector<int> evalr_k = {1, 10, 50};
    std::string evalr_split = "test";
    evalr_cmd->add_option("--checkpoint", evalr_ckpt, "Model checkpoint")->required();
    evalr_cmd->add_option("--codefile", evalr_codefile, "Shop code database")->required();
    evalr_cmd->add_option("--manifest", evalr_manifest, "Dataset manifest (ground truth)")->required();
    evalr_cmd->add_option("--k", evalr_k, "K values");
    evalr_cmd->add_option("--split", evalr_split, "Query split (default test)");

    // ---- eval-attr ---------------------------------------------------------
    auto* evala_cmd = app.add_subcommand("eval-attr", "Sequence metrics for decoded attributes");
    std::string evala_ckpt, evala_manifest, evala_corpus_out;
    std::string evala_split = "test";
    int evala_max_len = 0;
    evala_cmd->add_option("--checkpoint", evala_ckpt, "Model checkpoint")->required();
    evala_cmd->add_option("--manifest", evala_manifest, "Dataset manifest")->required();
    evala_cmd->add_option("--split", evala_split, "Query split (default test)");
    evala_cmd->add_option("--corpus-out", evala_corpus_out, "Optional corpus TSV dump");
    evala_cmd->add_option("--max-len", evala_max_len, "Decode budget override");

    // ---- bench -------------------------------------------------------------
    auto* bench_cmd = app.add_subcommand("bench", "Hamming vs float-Euclidean scan benchmark");
    std::string bench_codefile;
    int bench_entries = 39756, bench_queries = 1000, bench_reps = 5, bench_bits = 128, bench_k = 10;
    std::uint64_t bench_seed = 1;
    bench_cmd->add_option("--codefile", bench_codefile, "Existing code database (else synthetic)");
    bench_cmd->add_option("--entries", bench_entries, "Synthetic database size");
    bench_cmd->add_option("--queries", bench_queries, "Query count");
    bench_cmd->add_option("--reps", bench_reps, "Timed repetitions");
    bench_cmd->add_option("--code-bits", bench_bits, "Synthetic code length");
    bench_cmd->add_option("--k", bench_k, "Top-K tracked during the scan");
    bench_cmd->add_option("--seed", bench_seed, "Synthetic data seed");

    // ---- attn-export -------------------------------------------------------
    auto* attn_cmd = app.add_subcommand("attn-export", "Decode one image and export attention maps");
    std::string attn_ckpt, attn_image, attn_out;
    int attn_max_len = 0;
    attn_cmd->add_option("--checkpoint", attn_ckpt, "Model checkpoint")->required();
    attn_cmd->add_option("--image", attn_image, "Input image (png)")->required();
    attn_cmd->add_option("--out", attn_out, "Attention CSV path")->required();
    attn_cmd->add_option("--max-len", attn_max_len, "Decode budget override");

    CLI11_PARSE(app, argc, argv);

    if (gen->parsed()) {
        synth::GenerateOptions opt;
        opt.n_products = gen_products;
        opt.images_per_product = gen_images;
        opt.seed = gen_seed;
        opt.image_size = gen_size;
        synth::DatasetManifest manifest = synth::generate(opt, gen_out);
        if (gen_hard > 0.0) manifest = synth::make_hard_pairs(manifest, gen_hard, opt, gen_out);
        std::cout << "wrote " << manifest.records.size() << " records to " << gen_out << "/manifest.tsv\n";
        return 0;
    }

    if (train_cmd->parsed()) {
        TrainConfig cfg;
        if (!train_config_path.empty()) cfg = load_train_config(train_config_path);
        for (const auto& b : *bindings)
            if (b.opt->count() > 0) apply_config_entry(cfg, b.key, b.value);
        validate(cfg);

        synth::DatasetManifest manifest = synth::load_manifest(train_manifest);
        TrainingSet set = build_training_set(manifest);
        DmchModel model(set.vocab, cfg.model_config(), cfg.seed);
        std::ofstream log(train_out + ".log", std::ios::trunc);
        if (!log) throw io_error("cannot open training log: " + train_out + ".log");
        log << "epoch\tL_tag\tL_emb\tL_total\tphi\tlr\n";
        TrainResult res = train(model, set, cfg, train_out, &log);
        std::cout << "trained " << res.log.size() << " epochs; final total loss "
                  << format_double(res.log.back().total) << "; phi " << res.final_schedule.phi << "\n"
                  << "checkpoint: " << train_out << ".ckpt\n";
        return 0;
    }

    if (embed_cmd->parsed()) {
        DmchModel model = load_model(embed_ckpt);
        synth::DatasetManifest manifest = synth::load_manifest(embed_manifest);
        auto entries = embed_manifest_subset(model, manifest, parse_domain(embed_domain), embed_split);
        save_codes(embed_out, model.config().code_bits, entries);
        std::cout << "wrote " << entries.size() << " codes (" << model.config().code_bits << "-bit) to "
                  << embed_out << "\n";
        return 0;
    }

    if (query_cmd->parsed()) {
        DmchModel model = load_model(query_ckpt);
        CodeDatabase db = CodeDatabase::from_file(load_codes(query_codefile));
        if (db.code_length() != model.config().code_bits)
            throw config_error("code database is " + std::to_string(db.code_length()) +
                               "-bit but the checkpoint embeds " + std::to_string(model.config().code_bits) +
                               "-bit");
        ImageSample img = load_image(query_image, Domain::user, query_image);
        auto inf = model.infer(img);
        auto results = db.query_topk(inf.code, query_k);
        std::cout << "attributes:";
        for (int id : inf.sequence.payload()) std::cout << ' ' << model.vocab().token_of(id);
        std::cout << "\n";
        for (std::size_t r = 0; r < results.size(); ++r)
            std::cout << r + 1 << '\t' << results[r].item_id << '\t' << results[r].distance << "\n";
        if (!query_attn_out.empty())
            write_attention_csv(query_attn_out, inf.records, inf.grid_h, inf.grid_w);
        return 0;
    }

    if (evalr_cmd->parsed()) {
        DmchModel model = load_model(evalr_ckpt);
        CodeDatabase db = CodeDatabase::from_file(load_codes(evalr_codefile));
        synth::DatasetManifest manifest = synth::load_manifest(evalr_manifest);
        std::unordered_map<std::string, std::string> item_to_product;
        for (const auto& r : manifest.records) item_to_product[r.path] = r.product_id;

        std::vector<const synth::ManifestRecord*> queries;
        for (const auto& r : manifest.records)
            if (r.domain == Domain::user && (evalr_split == "all" || r.split == evalr_split))
                queries.push_back(&r);
        if (queries.empty()) throw data_error("no queries in split '" + evalr_split + "'");

        const int k_max = *std::max_element(evalr_k.begin(), evalr_k.end());
        std::vector<RetrievalResult> results(queries.size());
        std::vector<std::string> products(queries.size());
        parallel_for(queries.size(), [&](std::size_t i) {
            const auto& r = *queries[i];
            ImageSample img = load_image(manifest.resolve(r), r.domain, r.path);
            results[i] = db.query_topk(model.infer(img).code, k_max);
            products[i] = r.product_id;
        });
        std::cout << "queries\t" << queries.size() << "\n";
        for (int k : evalr_k)
            std::cout << "P@" << k << '\t'
                      << format_double(precision_at_k(results, products, item_to_product, k)) << "\n";
        return 0;
    }

    if (evala_cmd->parsed()) {
        DmchModel model = load_model(evala_ckpt);
        synth::DatasetManifest manifest = synth::load_manifest(evala_manifest);
        std::vector<const synth::ManifestRecord*> items;
        for (const auto& r : manifest.records)
            if (r.domain == Domain::user && (evala_split == "all" || r.split == evala_split))
                items.push_back(&r);
        if (items.empty()) throw data_error("no items in split '" + evala_split + "'");
        Corpus corpus(items.size());
        parallel_for(items.size(), [&](std::size_t i) {
            const auto& r = *items[i];
            ImageSample img = load_image(manifest.resolve(r), r.domain, r.path);
            auto inf = model.infer(img, evala_max_len);
            CorpusItem item;
            item.id = r.path;
            for (int id : inf.sequence.payload()) item.prediction.push_back(model.vocab().token_of(id));
            item.reference = r.attributes;
            corpus[i] = std::move(item);
        });
        if (!evala_corpus_out.empty()) save_corpus(evala_corpus_out, corpus);
        std::cout << format_metric_report(corpus);
        return 0;
    }

    if (bench_cmd->parsed()) {
        CodeDatabase db;
        Rng rng(bench_seed);
        auto random_code = [&](int bits) {
            BinaryCode c = BinaryCode::zeros(bits);
            for (int i = 0; i < bits; ++i) c.set_bit(i, (rng() & 1) != 0);
            return c;
        };
        if (!bench_codefile.empty()) {
            db = CodeDatabase::from_file(load_codes(bench_codefile));
        } else {
            std::vector<CodeEntry> entries;
            entries.reserve(static_cast<std::size_t>(bench_entries));
            for (int i = 0; i < bench_entries; ++i)
                entries.push_back({"synthetic_" + std::to_string(i), random_code(bench_bits)});
            db = CodeDatabase(bench_bits, entries);
        }
        std::vector<BinaryCode> queries;
        queries.reserve(static_cast<std::size_t>(bench_queries));
        for (int i = 0; i < bench_queries; ++i) queries.push_back(random_code(db.code_length()));
        BenchReport report = benchmark_queries(db, queries, bench_reps, bench_k);
        std::cout << format_bench_report(report);
        return 0;
    }

    if (attn_cmd->parsed()) {
        DmchModel model = load_model(attn_ckpt);
        ImageSample img = load_image(attn_image, Domain::user, attn_image);
        auto inf = model.infer(img, attn_max_len);
        write_attention_csv(attn_out, inf.records, inf.grid_h, inf.grid_w);
        std::cout << "decoded";
        for (int id : inf.sequence.payload()) std::cout << ' ' << model.vocab().token_of(id);
        std::cout << "\nwrote " << inf.records.size() << " attention maps to " << attn_out << "\n";
        return 0;
    }

    return 1;
}

} // namespace

int main(int argc, char** argv) {
    try {
        return run(argc, argv);
    } catch (const dmch::config_error& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const dmch::data_error& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 3;
    } catch (const dmch::format_error& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 3;
    } catch (const dmch::io_error& e) {
        std::cerr << "io error: " << e.what() << "\n";
        return 4;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
