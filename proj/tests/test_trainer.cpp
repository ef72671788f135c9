#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include "dmch/synth.hpp"
#include "dmch/trainer.hpp"

using namespace dmch;

namespace {

std::string fresh_dir(const std::string& tag) {
    auto dir = std::filesystem::temp_directory_path() / ("dmch_trainer_" + tag);
    std::filesystem::remove_all(dir);
    return dir.string();
}

TrainConfig tiny_train_config() {
    TrainConfig cfg;
    cfg.hidden = 6;
    cfg.embed_dim = 4;
    cfg.batch = 4;
    cfg.code_bits = 32;
    cfg.image_size = 16;
    cfg.conv1_channels = 2;
    cfg.conv2_channels = 3;
    cfg.ratio = 1;
    cfg.epochs = 3;
    cfg.seed = 5;
    return cfg;
}

TrainingSet tiny_set(const std::string& dir, int products, int images_per_product, std::uint64_t seed) {
    synth::GenerateOptions opt;
    opt.n_products = products;
    opt.images_per_product = images_per_product;
    opt.seed = seed;
    opt.image_size = 16;
    auto manifest = synth::generate(opt, dir);
    return build_training_set(manifest);
}

} // namespace

TEST_SUITE("trainer") {

TEST_CASE("lr decays by 0.1 every 50 epochs, exactly") {
    TrainConfig cfg;
    CHECK(lr_at(0, cfg) == 0.001);
    CHECK(lr_at(49, cfg) == 0.001);
    CHECK(lr_at(50, cfg) == 0.0001);
    CHECK(lr_at(100, cfg) == doctest::Approx(0.00001).epsilon(1e-12));
    CHECK_THROWS_AS(lr_at(-1, cfg), argument_error);
}

TEST_CASE("triplet sampling: enumeration, ratio scaling, determinism") {
    const std::string dir = fresh_dir("sampling");
    TrainingSet set = tiny_set(dir, 2, 1, 21);

    auto t1 = sample_triplets(set, 1, 77);
    CHECK(t1.size() == 2); // 2 positive pairs × ratio 1

    const std::string dir2 = fresh_dir("sampling2");
    TrainingSet bigger = tiny_set(dir2, 12, 1, 22);
    auto t10 = sample_triplets(bigger, 10, 78);
    CHECK(t10.size() == 12 * 10); // positive pairs × ratio

    auto again = sample_triplets(bigger, 10, 78);
    REQUIRE(again.size() == t10.size());
    for (std::size_t i = 0; i < t10.size(); ++i) {
        CHECK(again[i].anchor == t10[i].anchor);
        CHECK(again[i].positive == t10[i].positive);
        CHECK(again[i].negative == t10[i].negative);
    }

    for (const auto& tri : t10) {
        const auto& a = set.by_id.count(tri.anchor) ? set.item(tri.anchor) : bigger.item(tri.anchor);
        const auto& p = bigger.item(tri.positive);
        const auto& n = bigger.item(tri.negative);
        CHECK(a.product_id == p.product_id);
        CHECK(n.product_id != a.product_id);
        CHECK(p.domain == Domain::shop);
        CHECK(n.domain == Domain::shop);
    }
    std::filesystem::remove_all(dir);
    std::filesystem::remove_all(dir2);
}

TEST_CASE("unsatisfiable negative ratio names the offending product") {
    const std::string dir = fresh_dir("unsat");
    TrainingSet set = tiny_set(dir, 3, 1, 23);
    try {
        sample_triplets(set, 10, 5); // only 2 negatives exist per anchor
        FAIL("expected data_error");
    } catch (const data_error& e) {
        CHECK(std::string(e.what()).find("p0") != std::string::npos);
    }
    std::filesystem::remove_all(dir);
}

TEST_CASE("sgd: momentum 0 with lr 1 subtracts the gradient") {
    NamedTensors params;
    params.emplace_back("p", Tensor::from({3}, {1.0, 2.0, 3.0}, true));
    params[0].second.ensure_grad();
    params[0].second.grad() = {0.5, -1.0, 0.25};
    SgdMomentum opt;
    opt.step(params, 1.0, 0.0);
    CHECK(params[0].second.values() == std::vector<double>{0.5, 3.0, 2.75});
    CHECK(params[0].second.grad() == std::vector<double>{0, 0, 0}); // cleared
}

TEST_CASE("constant gradient drives velocity to 10x geometrically at momentum 0.9") {
    NamedTensors params;
    params.emplace_back("p", Tensor::from({1}, {0.0}, true));
    SgdMomentum opt;
    const double g = 0.3;
    for (int step = 0; step < 200; ++step) {
        params[0].second.ensure_grad();
        params[0].second.grad()[0] = g;
        opt.step(params, 0.0, 0.9); // lr 0 isolates the velocity recursion
    }
    const auto* v = opt.velocity("p");
    REQUIRE(v != nullptr);
    CHECK((*v)[0] == doctest::Approx(10.0 * g).epsilon(1e-8));
}

TEST_CASE("sgd with lr 0 is a no-op on parameters") {
    NamedTensors params;
    params.emplace_back("p", Tensor::from({2}, {1.25, -0.5}, true));
    params[0].second.ensure_grad();
    params[0].second.grad() = {10.0, -3.0};
    SgdMomentum opt;
    opt.step(params, 0.0, 0.9);
    CHECK(params[0].second.values() == std::vector<double>{1.25, -0.5});
}

TEST_CASE("missing gradient raises a training error") {
    NamedTensors params;
    params.emplace_back("p", Tensor::from({2}, {1.0, 2.0}, true));
    SgdMomentum opt;
    CHECK_THROWS_AS(opt.step(params, 0.1, 0.9), training_error);
}

TEST_CASE("momentum sgd drives a quadratic bowl below 1e-6 within 500 steps") {
    NamedTensors params;
    params.emplace_back("x", Tensor::from({4}, {1.0, -0.8, 0.5, 1.2}, true));
    SgdMomentum opt;
    for (int step = 0; step < 500; ++step) {
        Tape tape;
        Tensor x = params[0].second;
        Tensor loss = sum(tape, hadamard(tape, x, x)); // ‖x‖²
        tape.backward(loss);
        opt.step(params, 0.01, 0.9);
    }
    double norm = 0.0;
    for (double v : params[0].second.values()) norm += v * v;
    CHECK(std::sqrt(norm) < 1e-6);
}

TEST_CASE("multi-task loss with eta 0 equals the sum of the three tag losses") {
    const std::string dir = fresh_dir("eta0");
    TrainingSet set = tiny_set(dir, 3, 1, 31);
    TrainConfig cfg = tiny_train_config();
    cfg.eta = 0.0;
    DmchModel model(set.vocab, cfg.model_config(), cfg.seed);

    std::unordered_map<std::string, ImageSample> images;
    std::unordered_map<std::string, AttributeSequence> sequences;
    for (const auto& item : set.items) {
        images.emplace(item.item_id, load_image(item.file_path, item.domain, item.item_id));
        sequences.emplace(item.item_id, AttributeSequence::from_payload(set.vocab.encode(item.attributes)));
    }
    auto triplets = sample_triplets(set, 1, cfg.seed);
    REQUIRE(!triplets.empty());
    std::vector<Triplet> batch(triplets.begin(), triplets.end());

    Tape tape;
    LossBreakdown lb = multi_task_loss(tape, model, batch, images, sequences, cfg, ContinuationSchedule{});
    // independent tag-only accumulation
    double expect = 0.0;
    for (const auto& tri : batch) {
        Tape t2;
        for (const std::string& id : {tri.anchor, tri.positive, tri.negative})
            expect += model.teacher_forward(t2, images.at(id), sequences.at(id)).tag_loss.values()[0];
    }
    expect /= static_cast<double>(batch.size());
    CHECK(lb.total.values()[0] == doctest::Approx(expect).epsilon(1e-12));

    // eta 0 puts exactly zero gradient on the embedding head
    tape.backward(lb.total);
    for (auto& [name, p] : model.parameters())
        if (name == "emb.w_e") {
            p.ensure_grad();
            for (double g : p.grad()) CHECK(g == 0.0);
        }
    std::filesystem::remove_all(dir);
}

TEST_CASE("a margin-satisfied batch costs the same for any eta") {
    // anchor and positive share identical pixels (d_ap = 0 exactly); a huge
    // phi saturates codes to ±1 so any differing sign puts d_an ≥ 4 ≥ γ
    const std::string dir = fresh_dir("margin");
    std::filesystem::create_directories(dir);
    synth::GarmentSpec a, b;
    a.product_id = "pa";
    a.color = 0;
    b.product_id = "pb";
    b.color = 5;
    b.silhouette = 1;
    save_image(dir + "/shop_a.png", synth::render_shop(a, 16, "shop_a.png", 0));
    save_image(dir + "/user_a.png", synth::render_shop(a, 16, "user_a.png", 0)); // same content
    save_image(dir + "/shop_b.png", synth::render_shop(b, 16, "shop_b.png", 0));

    synth::DatasetManifest m;
    m.base_dir = dir;
    m.records.push_back({"shop_a.png", Domain::shop, "pa", a.tokens(), "train"});
    m.records.push_back({"user_a.png", Domain::user, "pa", a.tokens(), "train"});
    m.records.push_back({"shop_b.png", Domain::shop, "pb", b.tokens(), "train"});
    TrainingSet set = build_training_set(m);

    TrainConfig cfg = tiny_train_config();
    DmchModel model(set.vocab, cfg.model_config(), 99);
    std::unordered_map<std::string, ImageSample> images;
    std::unordered_map<std::string, AttributeSequence> sequences;
    for (const auto& item : set.items) {
        images.emplace(item.item_id, load_image(item.file_path, item.domain, item.item_id));
        sequences.emplace(item.item_id, AttributeSequence::from_payload(set.vocab.encode(item.attributes)));
    }
    std::vector<Triplet> batch = {{"user_a.png", "shop_a.png", "shop_b.png"}};
    ContinuationSchedule saturated;
    saturated.phi = 1e6;

    double totals[2];
    int i = 0;
    for (double eta : {3.0, 11.0}) {
        cfg.eta = eta;
        Tape tape;
        LossBreakdown lb = multi_task_loss(tape, model, batch, images, sequences, cfg, saturated);
        CHECK(lb.emb == 0.0); // margin satisfied exactly
        totals[i++] = lb.total.values()[0];
    }
    CHECK(totals[0] == totals[1]);
    std::filesystem::remove_all(dir);
}

TEST_CASE("loss is invariant under triplet order within a batch") {
    const std::string dir = fresh_dir("shuffle");
    TrainingSet set = tiny_set(dir, 4, 1, 41);
    TrainConfig cfg = tiny_train_config();
    DmchModel model(set.vocab, cfg.model_config(), cfg.seed);
    std::unordered_map<std::string, ImageSample> images;
    std::unordered_map<std::string, AttributeSequence> sequences;
    for (const auto& item : set.items) {
        images.emplace(item.item_id, load_image(item.file_path, item.domain, item.item_id));
        sequences.emplace(item.item_id, AttributeSequence::from_payload(set.vocab.encode(item.attributes)));
    }
    auto triplets = sample_triplets(set, 1, 3);
    std::vector<Triplet> fwd(triplets.begin(), triplets.end());
    std::vector<Triplet> rev(fwd.rbegin(), fwd.rend());
    Tape t1, t2;
    double a = multi_task_loss(t1, model, fwd, images, sequences, cfg, ContinuationSchedule{}).total.values()[0];
    double b = multi_task_loss(t2, model, rev, images, sequences, cfg, ContinuationSchedule{}).total.values()[0];
    CHECK(a == doctest::Approx(b).epsilon(1e-12));
    std::filesystem::remove_all(dir);
}

TEST_CASE("grad_check of the full multi-task loss on a 1-triplet batch") {
    const std::string dir = fresh_dir("gradcheck");
    TrainingSet set = tiny_set(dir, 2, 1, 51);
    TrainConfig cfg = tiny_train_config();
    cfg.hidden = 5;
    DmchModel model(set.vocab, cfg.model_config(), 7);
    std::unordered_map<std::string, ImageSample> images;
    std::unordered_map<std::string, AttributeSequence> sequences;
    for (const auto& item : set.items) {
        images.emplace(item.item_id, load_image(item.file_path, item.domain, item.item_id));
        sequences.emplace(item.item_id, AttributeSequence::from_payload(set.vocab.encode(item.attributes)));
    }
    auto triplets = sample_triplets(set, 1, 5);
    std::vector<Triplet> batch = {triplets.front()};

    std::vector<Tensor> tensors;
    for (auto& [n, t] : model.parameters()) {
        (void)n;
        tensors.push_back(t);
    }
    auto err = grad_check_params(
        [&](Tape& t) {
            return multi_task_loss(t, model, batch, images, sequences, cfg, ContinuationSchedule{}).total;
        },
        tensors);
    CHECK(err < 1e-4);
    std::filesystem::remove_all(dir);
}

TEST_CASE("training on a 2-product toy set strictly decreases the loss over 10 epochs") {
    const std::string dir = fresh_dir("toy");
    TrainingSet set = tiny_set(dir, 2, 1, 61);
    TrainConfig cfg = tiny_train_config();
    cfg.epochs = 10;
    cfg.lr = 0.05;
    cfg.momentum = 0.5;
    cfg.stage_epoch_cap = 100;
    DmchModel model(set.vocab, cfg.model_config(), cfg.seed);
    TrainResult res = train(model, set, cfg);
    REQUIRE(res.log.size() == 10);
    for (std::size_t e = 1; e < res.log.size(); ++e) CHECK(res.log[e].total < res.log[e - 1].total);
    std::filesystem::remove_all(dir);
}

TEST_CASE("same seed reproduces the epoch-0 loss exactly") {
    const std::string dir = fresh_dir("replay");
    TrainingSet set = tiny_set(dir, 2, 1, 71);
    TrainConfig cfg = tiny_train_config();
    cfg.epochs = 1;
    double first = 0.0;
    for (int run = 0; run < 2; ++run) {
        DmchModel model(set.vocab, cfg.model_config(), cfg.seed);
        TrainResult res = train(model, set, cfg);
        if (run == 0)
            first = res.log[0].total;
        else
            CHECK(res.log[0].total == first);
    }
    std::filesystem::remove_all(dir);
}

TEST_CASE("phi advances at least once during a capped synthetic run") {
    const std::string dir = fresh_dir("phi");
    TrainingSet set = tiny_set(dir, 2, 1, 81);
    TrainConfig cfg = tiny_train_config();
    cfg.epochs = 8;
    cfg.stage_epoch_cap = 3;
    DmchModel model(set.vocab, cfg.model_config(), cfg.seed);
    TrainResult res = train(model, set, cfg);
    CHECK(res.final_schedule.stage >= 1);
    CHECK(res.final_schedule.phi >= 10.0);
    CHECK(res.log.back().phi > res.log.front().phi);
    std::filesystem::remove_all(dir);
}

TEST_CASE("a poisoned parameter aborts training with a batch diagnostic") {
    const std::string dir = fresh_dir("nan");
    TrainingSet set = tiny_set(dir, 2, 1, 91);
    TrainConfig cfg = tiny_train_config();
    DmchModel model(set.vocab, cfg.model_config(), cfg.seed);
    for (auto& [name, t] : model.parameters())
        if (name == "dec.out.wp") t.values()[0] = std::numeric_limits<double>::quiet_NaN();
    try {
        train(model, set, cfg);
        FAIL("expected training_error");
    } catch (const training_error& e) {
        CHECK(std::string(e.what()).find("batch") != std::string::npos);
    }
    std::filesystem::remove_all(dir);
}

TEST_CASE("decoder overfits one memorizable example within 200 steps") {
    Rng rng(97);
    DecoderConfig dc;
    dc.hidden = 8;
    dc.feat_dim = 8;
    dc.embed_dim = 6;
    dc.regions = 4;
    dc.vocab_size = 10;
    AttentionDecoder dec(dc, rng);
    GridTensors grid;
    grid.regions = Tensor::zeros({4, 8});
    for (auto& v : grid.regions.values()) v = uniform(rng, -1, 1);
    {
        Tape t;
        grid.global = Tensor::from({8}, global_pool(t, grid.regions).values());
    }
    grid.grid_h = 2;
    grid.grid_w = 2;
    AttributeSequence seq = AttributeSequence::from_payload({4, 7, 5, 9, 6});

    NamedTensors params = dec.parameters();
    SgdMomentum opt;
    double loss_val = 0.0;
    for (int step = 0; step < 200; ++step) {
        Tape tape;
        Tensor loss = dec.tag_loss(tape, grid, seq);
        loss_val = loss.values()[0];
        if (loss_val < 0.05) break;
        tape.backward(loss);
        clip_global_norm(params, 5.0);
        opt.step(params, 0.2, 0.9);
    }
    CHECK(loss_val < 0.1);

    // greedy decode with the ground-truth length budget reproduces the payload
    Tape tape;
    auto decoded = dec.decode_greedy(tape, grid, seq.length());
    CHECK(decoded.sequence.payload() == seq.payload());
}

TEST_CASE("config files parse, override, and reject unknown keys") {
    const std::string path = (std::filesystem::temp_directory_path() / "dmch_cfg.txt").string();
    {
        std::ofstream os(path);
        os << "# comment line\n"
           << "hidden 32\n"
           << "lr 0.01\n"
           << "eta 1.5\n"
           << "code_bits 64\n";
    }
    TrainConfig cfg = load_train_config(path);
    CHECK(cfg.hidden == 32);
    CHECK(cfg.lr == 0.01);
    CHECK(cfg.eta == 1.5);
    CHECK(cfg.code_bits == 64);
    CHECK(cfg.batch == 32); // untouched default

    apply_config_entry(cfg, "batch", "8");
    CHECK(cfg.batch == 8);
    CHECK_THROWS_AS(apply_config_entry(cfg, "nonsense", "1"), config_error);
    CHECK_THROWS_AS(apply_config_entry(cfg, "lr", "banana"), config_error);

    cfg.code_bits = 48;
    CHECK_THROWS_AS(validate(cfg), config_error);
    std::filesystem::remove(path);
}

} // TEST_SUITE
