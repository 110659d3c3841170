#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "synthetic.hpp"
#include "zeggs/checkpoint.hpp"
#include "zeggs/train.hpp"

using namespace zeggs;
using train::BatchSampler;
using train::RAdam;
using train::Trainer;
using train::TrainingConfig;

namespace {

std::string scratch_dir(const std::string& leaf) {
    auto dir = std::filesystem::temp_directory_path() / leaf;
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir.string();
}

DatasetCache make_cache(const std::string& dir, double seconds, bool heldout_low = false) {
    synth::write_clip_files(dir, "a0", "high", seconds, 11);
    synth::write_clip_files(dir, "a1", "high", seconds, 12);
    synth::write_clip_files(dir, "b0", "low", seconds, 13);
    synth::write_clip_files(dir, "b1", "low", seconds, 14);
    synth::write_manifest(dir, "manifest.json",
                          {{"a0", "high", "train"},
                           {"a1", "high", "train"},
                           {"b0", "low", heldout_low ? "heldout" : "train"},
                           {"b1", "low", heldout_low ? "heldout" : "train"}});
    return prepare_dataset(load_manifest(dir + "/manifest.json"), dir, nullptr);
}

model::ModelConfig tiny_model(int joints) {
    model::ModelConfig cfg;
    cfg.joints = joints;
    cfg.d_speech = 8;
    cfg.d_embed = 8;
    cfg.speech_channels = 8;
    cfg.speech_kernel1 = 3;
    cfg.speech_kernel2 = 5;
    cfg.style_channels = 8;
    cfg.attention_heads = 2;
    cfg.fft_channels = 8;
    cfg.gru_hidden = 16;
    cfg.init_hidden = 16;
    return cfg;
}

TrainingConfig tiny_train(std::uint64_t seed) {
    TrainingConfig cfg;
    cfg.seed = seed;
    cfg.batch_size = 2;
    cfg.target_frames = 12;
    cfg.style_min = 256;
    cfg.style_max = 256;
    cfg.kl_center = 50;
    cfg.kl_width = 10;
    cfg.log_every = 1;
    cfg.threads = 2;
    return cfg;
}

}  // namespace

TEST_CASE("learning-rate schedule") {
    TrainingConfig cfg;
    CHECK(train::lr_at(cfg, 0) == doctest::Approx(1e-4));
    CHECK(train::lr_at(cfg, 999) == doctest::Approx(1e-4));
    CHECK(train::lr_at(cfg, 1000) == doctest::Approx(9.95e-5));
    CHECK(train::lr_at(cfg, 2500) == doctest::Approx(1e-4 * 0.995 * 0.995));
}

TEST_CASE("KL annealing schedule endpoints and monotonicity") {
    TrainingConfig cfg;
    CHECK(train::kl_weight_at(cfg, 0) < 0.01);
    CHECK(train::kl_weight_at(cfg, cfg.max_iters) > 0.99);
    double prev = -1;
    for (std::int64_t it = 0; it <= cfg.max_iters; it += 1000) {
        double b = train::kl_weight_at(cfg, it);
        CHECK(b >= prev);
        prev = b;
    }
}

TEST_CASE("RAdam: rectification branch boundaries with beta2=0.999") {
    CHECK(RAdam<float>::rho_at(1, 0.999) <= 4.0);
    CHECK(RAdam<float>::rho_at(2, 0.999) <= 4.0);
    CHECK(RAdam<float>::rho_at(3, 0.999) <= 4.0);
    CHECK(RAdam<float>::rho_at(4, 0.999) <= 4.0);
    CHECK(RAdam<float>::rho_at(5, 0.999) > 4.0);
}

TEST_CASE("RAdam: zero gradients leave parameters unchanged; quadratic converges") {
    tc::ParameterSet<double> params;
    auto w = params.add("w", tc::Tensor<double>::from({1}, {3.0}));
    RAdam<double> opt;
    opt.init(params);
    opt.step(params, 1e-3);
    CHECK(w.value()[0] == 3.0);

    // f(w) = w^2/2, grad = w; |w| decreases monotonically after warmup.
    double prev = std::abs(w.value()[0]);
    for (int it = 0; it < 400; ++it) {
        w.grad()[0] = w.value()[0];
        opt.step(params, 0.05);
        double cur = std::abs(w.value()[0]);
        if (it > 10) CHECK(cur <= prev + 1e-12);
        prev = cur;
    }
    CHECK(prev < 0.5);

    // non-finite gradient skips the step
    double before = w.value()[0];
    w.grad()[0] = std::nan("");
    CHECK(!opt.step(params, 0.05));
    CHECK(w.value()[0] == before);
}

TEST_CASE("batch sampler: containment, bounds, style-window coincidence") {
    std::string dir = scratch_dir("zeggs_sampler_test");
    DatasetCache cache = make_cache(dir, 6.0);
    TrainingConfig cfg = tiny_train(77);
    cfg.batch_size = 4;
    BatchSampler sampler(cache, cfg);
    CHECK(sampler.eligible().size() == 8);  // 4 clips + mirrored copies

    int t = cfg.target_frames;
    for (std::int64_t iter = 0; iter < 2500; ++iter) {
        train::Batch b = sampler.sample(iter);
        CHECK(b.speed >= 0.9);
        CHECK(b.speed <= 1.1);
        for (const auto& item : b.items) {
            int m = item.style.rows;
            CHECK(m >= std::min(cfg.style_min, item.augmented_frames - 2));
            CHECK(m <= cfg.style_max);
            CHECK(item.target_start >= 1);
            CHECK(item.target_start + t + 1 <= item.augmented_frames);
            // containment of the target window in the style window
            CHECK(item.style_start <= item.target_start);
            CHECK(item.style_start + m >= item.target_start + t);
            CHECK(item.style_start + m + 1 <= item.augmented_frames);
            CHECK(item.speech.rows == t);
            CHECK(item.target.rows == t);
        }
    }
}

TEST_CASE("speed factor 1.0 reproduces unaugmented features bit-exactly") {
    std::string dir = scratch_dir("zeggs_sampler_exact");
    DatasetCache cache = make_cache(dir, 6.0);
    TrainingConfig cfg = tiny_train(5);
    cfg.speed_aug = 0.0;
    BatchSampler sampler(cache, cfg);
    train::Batch b = sampler.sample(3);
    CHECK(b.speed == 1.0);
    for (const auto& item : b.items) {
        int idx = cache.find_clip(item.clip_id);
        REQUIRE(idx >= 0);
        const CachedClip& clip = cache.clips[std::size_t(idx)];
        FeatureMatrix full = motion::extract_pose_states(clip.clip);
        for (int f = 0; f < item.target.rows; ++f)
            for (int c = 0; c < item.target.cols; ++c)
                CHECK(item.target.at(f, c) == full.at(item.target_start + f, c));
        // the style features coincide with the full-clip extraction as well
        FeatureMatrix style_full = motion::extract_style_features(clip.clip);
        for (int f = 0; f < item.style.rows; ++f)
            for (int c = 0; c < item.style.cols; ++c)
                CHECK(item.style.at(f, c) == style_full.at(item.style_start + f, c));
        // speech rows are the cached rows
        for (int f = 0; f < item.speech.rows; ++f)
            for (int c = 0; c < 81; ++c)
                CHECK(item.speech.at(f, c) == clip.speech.at(item.target_start + f, c));
    }
}

TEST_CASE("style window equals the target window when M is forced to T") {
    // With style_min = style_max = target_frames the windows coincide, and the
    // style rows equal the prediction columns of the target rows.
    std::string dir = scratch_dir("zeggs_sampler_forced");
    DatasetCache cache = make_cache(dir, 6.0);
    TrainingConfig cfg = tiny_train(9);
    cfg.target_frames = 256;
    cfg.style_min = 256;
    cfg.style_max = 256;
    cfg.speed_aug = 0.0;
    BatchSampler sampler(cache, cfg);
    train::Batch b = sampler.sample(0);
    auto cols = motion::pose_prediction_columns(cache.joints());
    for (const auto& item : b.items) {
        CHECK(item.style_start == item.target_start);
        CHECK(item.style.rows == 256);
        for (int f = 0; f < 256; ++f)
            for (std::size_t c = 0; c < cols.size(); ++c)
                CHECK(item.style.at(f, int(c)) == item.target.at(f, cols[c]));
    }
}

TEST_CASE("short clips are excluded from eligibility") {
    std::string dir = scratch_dir("zeggs_sampler_short");
    synth::write_clip_files(dir, "long0", "high", 6.0, 3);
    synth::write_clip_files(dir, "short0", "low", 2.0, 4);  // 120 frames < 256
    synth::write_manifest(dir, "manifest.json",
                          {{"long0", "high", "train"}, {"short0", "low", "train"}});
    DatasetCache cache = prepare_dataset(load_manifest(dir + "/manifest.json"), dir, nullptr);
    TrainingConfig cfg = tiny_train(1);
    BatchSampler sampler(cache, cfg);
    CHECK(sampler.eligible().size() == 2);  // only long0 and its mirror
}

TEST_CASE("train_step with lr=0 leaves parameters unchanged") {
    std::string dir = scratch_dir("zeggs_train_lr0");
    DatasetCache cache = make_cache(dir, 6.0);
    TrainingConfig cfg = tiny_train(21);
    cfg.lr = 0.0;
    Trainer trainer(tiny_model(cache.joints()), cfg, cache);
    std::vector<std::vector<float>> before;
    for (const auto& p : trainer.model().params.items()) before.push_back(p.tensor.value());
    trainer.train_step();
    trainer.train_step();
    std::size_t i = 0;
    for (const auto& p : trainer.model().params.items()) {
        CHECK(p.tensor.value() == before[i]);
        ++i;
    }
}

TEST_CASE("loss decreases over a short smoke run") {
    std::string dir = scratch_dir("zeggs_train_smoke");
    DatasetCache cache = make_cache(dir, 6.0);
    TrainingConfig cfg = tiny_train(31);
    cfg.lr = 1e-3;
    cfg.kl_center = 1e9;  // keep beta ~ 0 so recon and total coincide
    Trainer trainer(tiny_model(cache.joints()), cfg, cache);
    double first = 0, last = 0;
    for (int it = 0; it < 50; ++it) {
        double recon = trainer.train_step().recon;
        if (it < 10) first += recon;
        if (it >= 40) last += recon;
    }
    CHECK(last / 10.0 < first / 10.0);
}

TEST_CASE("no teacher forcing: slightly corrupted targets keep speech gradients identical") {
    // The rollout consumes only its own predictions, so corrupting the ground
    // truth after frame 0 must not change gradients w.r.t. the speech input
    // (the MAE gradient depends only on the sign of the residual).
    std::string dir = scratch_dir("zeggs_train_tf");
    DatasetCache cache = make_cache(dir, 6.0);
    TrainingConfig cfg = tiny_train(41);
    model::GestureModel<double> net(tiny_model(cache.joints()), cache.stats, 4);
    BatchSampler sampler(cache, cfg);
    train::Batch batch = sampler.sample(0);
    const train::TrainItem& item = batch.items[0];

    auto speech_grad = [&](const FeatureMatrix& target) {
        tc::Tape<double> tape;
        RngStream unused(0);
        auto sp = net.normalized_speech(item.speech);
        auto sp_tensor = sp;
        sp_tensor.set_requires_grad(true);
        auto s = net.speech_encode(tape, sp_tensor, false, unused);
        auto [mu, lv] = net.style_encode(tape, net.normalized_style(item.style), false, unused);
        auto e = net.sample_embedding(tape, mu, lv, true, unused);
        auto roll = net.rollout(tape, s, e, item.init_pose, item.facing, cfg.target_frames, 60.0);
        model::LossTargets targets{target, item.facing};
        auto recon = model::reconstruction_loss(tape, net, roll, targets, cache.skeleton,
                                                cfg.lambda, 60.0);
        tape.backward(recon.total);
        return sp_tensor.grad();
    };

    FeatureMatrix corrupted = item.target;
    RngStream rng(8);
    for (int f = 1; f < corrupted.rows; ++f)
        for (int c = 0; c < corrupted.cols; ++c) corrupted.at(f, c) += rng.uniform(-1e-9, 1e-9);
    auto g1 = speech_grad(item.target);
    auto g2 = speech_grad(corrupted);
    CHECK(g1 == g2);
}

TEST_CASE("checkpoint save/load round trip and resume bit-exactness") {
    std::string dir = scratch_dir("zeggs_ckpt");
    DatasetCache cache = make_cache(dir, 6.0);
    TrainingConfig cfg = tiny_train(61);
    cfg.lr = 1e-4;

    Trainer continuous(tiny_model(cache.joints()), cfg, cache);
    Trainer resumable(tiny_model(cache.joints()), cfg, cache);

    for (int it = 0; it < 5; ++it) {
        continuous.train_step();
        resumable.train_step();
    }
    std::string ckpt = dir + "/mid.zegc";
    resumable.save_checkpoint(ckpt);

    // parameter blobs round trip exactly
    auto data = checkpoint::load(ckpt);
    CHECK(data.iteration == 5);
    auto rebuilt = checkpoint::build_model(data);
    std::size_t pi = 0;
    for (const auto& p : resumable.model().params.items()) {
        CHECK(p.tensor.value() == rebuilt.params.items()[pi].tensor.value());
        ++pi;
    }

    Trainer resumed(ckpt, cache);
    CHECK(resumed.iteration() == 5);
    for (int it = 0; it < 5; ++it) {
        auto a = continuous.train_step();
        auto b = resumed.train_step();
        CHECK(a.total == b.total);  // bit-exact: same seed-derived streams
    }
    pi = 0;
    for (const auto& p : continuous.model().params.items()) {
        CHECK(p.tensor.value() == resumed.model().params.items()[pi].tensor.value());
        ++pi;
    }

    // wrong magic is rejected
    std::string bogus = dir + "/bogus.zegc";
    std::ofstream(bogus) << "not a checkpoint";
    CHECK_THROWS_AS(checkpoint::load(bogus), Error);
}

TEST_CASE("invalid training config fields are named") {
    try {
        TrainingConfig::from_json("{\"learning_rate\": 1}");
        FAIL("expected config error");
    } catch (const Error& e) {
        CHECK(e.code() == Errc::config);
        CHECK(std::string(e.what()).find("learning_rate") != std::string::npos);
    }
    CHECK_THROWS_AS(TrainingConfig::from_json("{\"style_min\": 10}"), Error);
}
