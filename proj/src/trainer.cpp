#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>
#include <thread>

#include <json.hpp>

#include "zeggs/checkpoint.hpp"
#include "zeggs/train.hpp"

namespace zeggs::train {

using nlohmann::json;

std::string TrainingConfig::to_json() const {
    json j;
    j["seed"] = seed;
    j["lr"] = lr;
    j["lr_decay"] = lr_decay;
    j["lr_decay_every"] = lr_decay_every;
    j["batch_size"] = batch_size;
    j["max_iters"] = max_iters;
    j["target_frames"] = target_frames;
    j["style_min"] = style_min;
    j["style_max"] = style_max;
    j["speed_aug"] = speed_aug;
    j["lambda_p"] = lambda.p;
    j["lambda_r"] = lambda.r;
    j["lambda_vp"] = lambda.vp;
    j["lambda_vr"] = lambda.vr;
    j["lambda_dp"] = lambda.dp;
    j["lambda_dr"] = lambda.dr;
    j["lambda_f"] = lambda.f;
    j["kl_center"] = kl_center;
    j["kl_width"] = kl_width;
    j["grad_clip"] = grad_clip;
    j["checkpoint_every"] = checkpoint_every;
    j["log_every"] = log_every;
    j["threads"] = threads;
    return j.dump();
}

TrainingConfig TrainingConfig::from_json(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const std::exception& e) {
        fail(Errc::format, std::string("train config JSON: ") + e.what());
    }
    std::set<std::string> known = {
        "seed",       "lr",          "lr_decay",  "lr_decay_every", "batch_size",
        "max_iters",  "target_frames", "style_min", "style_max",    "speed_aug",
        "lambda_p",   "lambda_r",    "lambda_vp", "lambda_vr",      "lambda_dp",
        "lambda_dr",  "lambda_f",    "kl_center", "kl_width",       "grad_clip",
        "checkpoint_every", "log_every", "threads"};
    for (auto it = j.begin(); it != j.end(); ++it)
        if (!known.count(it.key()))
            fail(Errc::config, "train config: unknown field \"" + it.key() + "\"");
    TrainingConfig c;
    c.seed = j.value("seed", c.seed);
    c.lr = j.value("lr", c.lr);
    c.lr_decay = j.value("lr_decay", c.lr_decay);
    c.lr_decay_every = j.value("lr_decay_every", c.lr_decay_every);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.max_iters = j.value("max_iters", c.max_iters);
    c.target_frames = j.value("target_frames", c.target_frames);
    c.style_min = j.value("style_min", c.style_min);
    c.style_max = j.value("style_max", c.style_max);
    c.speed_aug = j.value("speed_aug", c.speed_aug);
    c.lambda.p = j.value("lambda_p", c.lambda.p);
    c.lambda.r = j.value("lambda_r", c.lambda.r);
    c.lambda.vp = j.value("lambda_vp", c.lambda.vp);
    c.lambda.vr = j.value("lambda_vr", c.lambda.vr);
    c.lambda.dp = j.value("lambda_dp", c.lambda.dp);
    c.lambda.dr = j.value("lambda_dr", c.lambda.dr);
    c.lambda.f = j.value("lambda_f", c.lambda.f);
    c.kl_center = j.value("kl_center", c.kl_center);
    c.kl_width = j.value("kl_width", c.kl_width);
    c.grad_clip = j.value("grad_clip", c.grad_clip);
    c.checkpoint_every = j.value("checkpoint_every", c.checkpoint_every);
    c.log_every = j.value("log_every", c.log_every);
    c.threads = j.value("threads", c.threads);
    c.validate();
    return c;
}

Trainer::Trainer(const model::ModelConfig& mcfg, const TrainingConfig& tcfg, DatasetCache cache)
    : tcfg_(tcfg),
      cache_(std::move(cache)),
      master_(mcfg, cache_.stats, tcfg.seed),
      sampler_(cache_, tcfg_) {
    if (mcfg.joints != cache_.joints())
        fail(Errc::config, "model config joints (" + std::to_string(mcfg.joints) +
                               ") do not match dataset (" + std::to_string(cache_.joints()) + ")");
    opt_.init(master_.params);
}

namespace {

checkpoint::CheckpointData load_for_resume(const std::string& path) { return checkpoint::load(path); }

}  // namespace

Trainer::Trainer(const std::string& checkpoint_path, DatasetCache cache)
    : Trainer(load_for_resume(checkpoint_path), std::move(cache)) {}

Trainer::Trainer(const checkpoint::CheckpointData& data, DatasetCache cache)
    : tcfg_(data.train_cfg),
      cache_(std::move(cache)),
      master_(data.model_cfg, data.stats, data.train_cfg.seed),
      sampler_(cache_, tcfg_),
      iter_(data.iteration) {
    const auto& items = master_.params.items();
    if (data.parameters.size() != items.size())
        fail(Errc::format, "checkpoint: parameter count mismatch on resume");
    for (std::size_t i = 0; i < items.size(); ++i) {
        if (items[i].name != data.parameters[i].first)
            fail(Errc::format, "checkpoint: parameter order mismatch on resume");
        std::copy(data.parameters[i].second.begin(), data.parameters[i].second.end(),
                  items[i].tensor.value().begin());
    }
    opt_.init(master_.params);
    if (data.has_optimizer) {
        opt_.step_count = data.optimizer.step_count;
        for (std::size_t i = 0; i < opt_.slots.size(); ++i) {
            opt_.slots[i].m = data.optimizer.m[i];
            opt_.slots[i].v = data.optimizer.v[i];
        }
    }
}

int Trainer::worker_count() const {
    int hw = int(std::thread::hardware_concurrency());
    if (hw < 1) hw = 1;
    int n = tcfg_.threads > 0 ? tcfg_.threads : hw;
    return std::max(1, std::min(n, tcfg_.batch_size));
}

model::LossTerms Trainer::run_batch(const Batch& batch, double beta) {
    int b = int(batch.items.size());
    int workers = std::min(worker_count(), b);
    while (int(replicas_.size()) < workers)
        replicas_.push_back(std::make_unique<model::GestureModel<float>>(master_.cfg, master_.stats,
                                                                         tcfg_.seed));
    for (int w = 0; w < workers; ++w) replicas_[std::size_t(w)]->copy_values_from(master_);

    std::vector<std::vector<std::vector<float>>> item_grads(static_cast<std::size_t>(b));
    std::vector<model::LossTerms> item_terms(static_cast<std::size_t>(b));
    std::vector<std::string> failures(static_cast<std::size_t>(b));

    auto worker_fn = [&](int w) {
        model::GestureModel<float>& net = *replicas_[std::size_t(w)];
        for (int i = w; i < b; i += workers) {
            const TrainItem& item = batch.items[std::size_t(i)];
            try {
                net.params.zero_grad();
                tc::Tape<float> tape;
                RngStream drop = RngStream::derive(tcfg_.seed,
                                                   {kRngDropout, std::uint64_t(iter_), std::uint64_t(i)});
                RngStream emb = RngStream::derive(tcfg_.seed,
                                                  {kRngEmbedding, std::uint64_t(iter_), std::uint64_t(i)});
                tc::Tensor<float> s =
                    net.speech_encode(tape, net.normalized_speech(item.speech), true, drop);
                auto [mu, logvar] =
                    net.style_encode(tape, net.normalized_style(item.style), true, drop);
                tc::Tensor<float> e = net.sample_embedding(tape, mu, logvar, false, emb);
                model::Rollout<float> roll = net.rollout(tape, s, e, item.init_pose, item.facing,
                                                         tcfg_.target_frames, cache_.fps);
                model::LossTargets targets{item.target, item.facing};
                auto recon = model::reconstruction_loss(tape, net, roll, targets, cache_.skeleton,
                                                        tcfg_.lambda, cache_.fps);
                tc::Tensor<float> kl = model::kl_loss(tape, mu, logvar);
                tc::Tensor<float> total = model::elbo_loss(tape, recon.total, kl, float(beta));
                model::LossTerms terms = recon.terms;
                terms.kl = double(kl.item());
                terms.beta = beta;
                terms.total = double(total.item());
                if (!std::isfinite(terms.total)) {
                    failures[std::size_t(i)] = item.clip_id;
                    continue;
                }
                tape.backward(total);
                auto& grads = item_grads[std::size_t(i)];
                grads.reserve(net.params.count());
                for (const auto& p : net.params.items()) grads.push_back(p.tensor.grad());
                item_terms[std::size_t(i)] = terms;
            } catch (const std::exception& e) {
                failures[std::size_t(i)] = item.clip_id + std::string(": ") + e.what();
            }
        }
    };

    if (workers == 1) {
        worker_fn(0);
    } else {
        std::vector<std::thread> pool;
        pool.reserve(std::size_t(workers));
        for (int w = 0; w < workers; ++w) pool.emplace_back(worker_fn, w);
        for (auto& th : pool) th.join();
    }

    std::string failed;
    for (const auto& f : failures)
        if (!f.empty()) failed += (failed.empty() ? "" : ", ") + f;
    if (!failed.empty())
        fail(Errc::numeric, "non-finite loss at iteration " + std::to_string(iter_) +
                                " on batch items: " + failed);

    // Deterministic reduction: sum item gradients in item order, then average.
    master_.params.zero_grad();
    const auto& mitems = master_.params.items();
    for (int i = 0; i < b; ++i) {
        const auto& grads = item_grads[std::size_t(i)];
        for (std::size_t pi = 0; pi < mitems.size(); ++pi) {
            auto& dst = mitems[pi].tensor.grad();
            const auto& src = grads[pi];
            for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += src[k];
        }
    }
    float inv_b = 1.0f / float(b);
    for (const auto& p : mitems)
        for (auto& g : p.tensor.grad()) g *= inv_b;

    // Global gradient-norm clipping.
    double sq = 0;
    for (const auto& p : mitems)
        for (float g : p.tensor.grad()) sq += double(g) * double(g);
    double norm = std::sqrt(sq);
    if (std::isfinite(norm) && norm > tcfg_.grad_clip) {
        float scale = float(tcfg_.grad_clip / norm);
        for (const auto& p : mitems)
            for (auto& g : p.tensor.grad()) g *= scale;
    }

    double lr = lr_at(tcfg_, iter_);
    if (!opt_.step(master_.params, lr))
        std::cerr << "warning: non-finite gradient at iteration " << iter_ << ", step skipped\n";

    model::LossTerms avg;
    for (const auto& t : item_terms) {
        avg.p += t.p;
        avg.r += t.r;
        avg.vp += t.vp;
        avg.vr += t.vr;
        avg.dp += t.dp;
        avg.dr += t.dr;
        avg.f += t.f;
        avg.recon += t.recon;
        avg.kl += t.kl;
        avg.total += t.total;
    }
    double inv = 1.0 / double(b);
    avg.p *= inv;
    avg.r *= inv;
    avg.vp *= inv;
    avg.vr *= inv;
    avg.dp *= inv;
    avg.dr *= inv;
    avg.f *= inv;
    avg.recon *= inv;
    avg.kl *= inv;
    avg.total *= inv;
    avg.beta = beta;
    return avg;
}

model::LossTerms Trainer::train_step() {
    Batch batch = sampler_.sample(iter_);
    double beta = kl_weight_at(tcfg_, iter_);
    model::LossTerms terms = run_batch(batch, beta);
    ++iter_;
    return terms;
}

void Trainer::save_checkpoint(const std::string& path) const {
    checkpoint::save(path, master_, tcfg_, cache_.skeleton, cache_.fps, iter_, &opt_);
}

void Trainer::run(std::int64_t total_iters, const std::string& out_dir) {
    std::ofstream csv;
    if (!out_dir.empty()) {
        std::filesystem::create_directories(out_dir);
        std::string csv_path = out_dir + "/metrics.csv";
        bool fresh = !std::filesystem::exists(csv_path) || iter_ == 0;
        csv.open(csv_path, fresh ? std::ios::trunc : std::ios::app);
        if (!csv) fail(Errc::io, "cannot write metrics CSV: " + csv_path);
        if (fresh)
            csv << "iter,lr,beta,total,recon,kl,loss_p,loss_r,loss_vp,loss_vr,loss_dp,loss_dr,"
                   "loss_f\n";
    }
    char buf[512];
    while (iter_ < total_iters) {
        std::int64_t it = iter_;
        double lr = lr_at(tcfg_, it);
        model::LossTerms t = train_step();
        if (csv.is_open() && (it % tcfg_.log_every == 0 || iter_ == total_iters)) {
            std::snprintf(buf, sizeof(buf),
                          "%lld,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,"
                          "%.17g\n",
                          static_cast<long long>(it), lr, t.beta, t.total, t.recon, t.kl, t.p, t.r,
                          t.vp, t.vr, t.dp, t.dr, t.f);
            csv << buf;
        }
        if (!out_dir.empty() && tcfg_.checkpoint_every > 0 && iter_ % tcfg_.checkpoint_every == 0)
            save_checkpoint(out_dir + "/ckpt_" + std::to_string(iter_) + ".zegc");
    }
    if (!out_dir.empty()) save_checkpoint(out_dir + "/final.zegc");
}

}  // namespace zeggs::train
