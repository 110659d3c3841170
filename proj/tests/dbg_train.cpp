#include <chrono>
#include <cstdio>
#include <filesystem>
#include "synthetic.hpp"
#include "zeggs/train.hpp"
using namespace zeggs;
int main(int argc, char** argv) {
    int iters = argc > 1 ? atoi(argv[1]) : 20;
    std::string dir = "/tmp/zeggs_dbg_probe";
    if (!std::filesystem::exists(dir + "/a0.bvh")) {
        std::filesystem::create_directories(dir);
        synth::write_clip_files(dir, "a0", "high", 75.0, 11);
        synth::write_clip_files(dir, "a1", "high", 75.0, 12);
        synth::write_clip_files(dir, "b0", "low", 75.0, 13);
        synth::write_clip_files(dir, "b1", "low", 75.0, 14);
        synth::write_manifest(dir, "manifest.json", {{"a0","high","train"},{"a1","high","train"},{"b0","low","train"},{"b1","low","train"}});
    }
    DatasetCache cache = prepare_dataset(load_manifest(dir + "/manifest.json"), dir, nullptr);
    model::ModelConfig mc; mc.joints = cache.joints();
    mc.d_speech=32; mc.d_embed=32; mc.speech_channels=32; mc.speech_kernel2=31;
    mc.style_channels=64; mc.attention_heads=4; mc.fft_channels=64; mc.gru_hidden=128; mc.init_hidden=128;
    train::TrainingConfig tc; tc.seed=2024; tc.batch_size=8; tc.target_frames=128;
    tc.style_min=256; tc.style_max=256; tc.lr=1e-4; tc.threads=2; tc.log_every=1;
    train::Trainer trainer(mc, tc, cache);
    auto t0 = std::chrono::steady_clock::now();
    double first = 0;
    for (int it = 0; it < iters; ++it) {
        auto t = trainer.train_step();
        if (it < 10) first += t.recon / 10;
        if (it % 10 == 0) std::printf("it %4d recon %.4f\n", it, t.recon);
    }
    auto dt = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::printf("%.0f ms/iter -> 2000 iters ~ %.1f min; first-10 %.4f\n", 1000*dt/iters, dt/iters*2000/60, first);
    return 0;
}
